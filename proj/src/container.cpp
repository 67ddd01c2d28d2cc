#include "esigal/container.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace esigal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::array<const char*, 13> kRoles = {"eeg",        "kin",      "leadfield", "source",  "roi",
                                            "dataset",    "targets",  "checkpoint", "filter", "operator",
                                            "covariance", "unmixing", "mixing"};

const std::array<const char*, 7> kReservedKeys = {"rows",  "cols",          "fs_hz",    "role",
                                                  "units", "channel_names", "nonfinite"};

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

fs::path with_suffix(const fs::path& stem, const char* suffix) {
  fs::path p = stem;
  p += suffix;
  return p;
}

}  // namespace

bool is_known_role(const std::string& role) {
  return std::find(kRoles.begin(), kRoles.end(), role) != kRoles.end();
}

fs::path data_path(const fs::path& stem) { return with_suffix(stem, ".f32"); }
fs::path meta_path(const fs::path& stem) { return with_suffix(stem, ".meta.json"); }

void save_matrix_f32(const fs::path& stem, const Eigen::Ref<const RowMatrixF>& m, MatrixMeta meta) {
  if (!is_known_role(meta.role)) throw std::invalid_argument("unknown container role '" + meta.role + "'");
  if (!meta.channel_names.empty() && static_cast<Eigen::Index>(meta.channel_names.size()) != m.rows())
    throw std::invalid_argument("channel_names length does not match row count for " + stem.string());
  meta.rows = m.rows();
  meta.cols = m.cols();
  meta.nonfinite = !m.allFinite();

  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());

  std::vector<std::uint32_t> words(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0, k = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c, ++k)
      words[k] = to_little(std::bit_cast<std::uint32_t>(m(r, c)));
  {
    std::ofstream out(data_path(stem), std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + data_path(stem).string());
    out.write(reinterpret_cast<const char*>(words.data()),
              static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  }

  json j = meta.extra.is_object() ? meta.extra : json::object();
  j["rows"] = meta.rows;
  j["cols"] = meta.cols;
  j["fs_hz"] = meta.fs_hz ? json(*meta.fs_hz) : json(nullptr);
  j["role"] = meta.role;
  j["units"] = meta.units;
  if (!meta.channel_names.empty()) j["channel_names"] = meta.channel_names;
  j["nonfinite"] = meta.nonfinite;
  std::ofstream out(meta_path(stem), std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + meta_path(stem).string());
  out << j.dump(2) << '\n';
}

MatrixMeta load_meta(const fs::path& stem) {
  std::ifstream in(meta_path(stem));
  if (!in) throw std::runtime_error("cannot read " + meta_path(stem).string());
  const json j = json::parse(in);
  MatrixMeta meta;
  meta.rows = j.at("rows").get<Eigen::Index>();
  meta.cols = j.at("cols").get<Eigen::Index>();
  if (meta.rows < 0 || meta.cols < 0) throw std::runtime_error("negative shape in " + meta_path(stem).string());
  if (j.contains("fs_hz") && !j["fs_hz"].is_null()) meta.fs_hz = j["fs_hz"].get<double>();
  meta.role = j.at("role").get<std::string>();
  meta.units = j.value("units", "");
  if (j.contains("channel_names")) meta.channel_names = j["channel_names"].get<std::vector<std::string>>();
  meta.nonfinite = j.value("nonfinite", false);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(kReservedKeys.begin(), kReservedKeys.end(), it.key()) == kReservedKeys.end())
      meta.extra[it.key()] = it.value();
  return meta;
}

std::pair<RowMatrixF, MatrixMeta> load_matrix_f32(const fs::path& stem) {
  MatrixMeta meta = load_meta(stem);
  const auto path = data_path(stem);
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw std::runtime_error("cannot stat " + path.string());
  const auto expected = static_cast<std::uintmax_t>(meta.rows) * static_cast<std::uintmax_t>(meta.cols) * 4u;
  if (bytes != expected)
    throw std::runtime_error(path.string() + ": sidecar declares " + std::to_string(meta.rows) + "x" +
                             std::to_string(meta.cols) + " (" + std::to_string(expected) +
                             " bytes) but file holds " + std::to_string(bytes) + " bytes");

  std::vector<std::uint32_t> words(static_cast<std::size_t>(meta.rows * meta.cols));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw std::runtime_error("short read on " + path.string());

  RowMatrixF m(meta.rows, meta.cols);
  for (Eigen::Index r = 0, k = 0; r < meta.rows; ++r)
    for (Eigen::Index c = 0; c < meta.cols; ++c, ++k) m(r, c) = std::bit_cast<float>(to_little(words[k]));
  return {std::move(m), std::move(meta)};
}

}  // namespace esigal
