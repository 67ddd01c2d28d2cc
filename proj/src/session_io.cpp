#include "esigal/session_io.hpp"

#include "esigal/container.hpp"

#include <fstream>
#include <stdexcept>

namespace esigal {

namespace fs = std::filesystem;
using nlohmann::json;

void save_session(const fs::path& dir, const RawSession& s, const std::optional<ComponentRejection>& ica) {
  fs::create_directories(dir);

  MatrixMeta eeg_meta;
  eeg_meta.role = "eeg";
  eeg_meta.units = "uV";
  eeg_meta.fs_hz = s.eeg_fs;
  eeg_meta.channel_names = s.eeg_channel_names;
  save_matrix(dir / "eeg", s.eeg, eeg_meta);

  MatrixMeta kin_meta;
  kin_meta.role = "kin";
  kin_meta.units = "mm";
  kin_meta.fs_hz = s.kin_fs;
  kin_meta.channel_names = {"x", "y", "z"};
  save_matrix(dir / "kin", s.kin, kin_meta);

  json j;
  j["subject_id"] = s.subject_id;
  json trials = json::array();
  for (const auto& t : s.trials)
    trials.push_back({{"onset_sample", t.onset_sample},
                      {"return_sample", t.return_sample},
                      {"weight_grams", t.weight_grams},
                      {"surface", to_string(t.surface)}});
  j["trials"] = trials;
  if (ica) {
    MatrixMeta m;
    m.role = "unmixing";
    save_matrix(dir / "unmixing", ica->unmixing, m);
    m.role = "mixing";
    save_matrix(dir / "mixing", ica->mixing, m);
    j["ica"] = {{"unmixing", "unmixing"}, {"mixing", "mixing"}, {"reject", ica->reject}};
  }
  std::ofstream out(dir / "session.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "session.json").string());
  out << j.dump(2) << '\n';
}

namespace {

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return json::parse(in);
}

}  // namespace

RawSession load_session(const fs::path& dir) {
  const json j = read_json(dir / "session.json");
  RawSession s;
  s.subject_id = j.at("subject_id").get<std::string>();

  auto [eeg, eeg_meta] = load_matrix<double>(dir / "eeg");
  if (!eeg_meta.fs_hz) throw std::runtime_error((dir / "eeg").string() + ": missing fs_hz");
  s.eeg = std::move(eeg);
  s.eeg_fs = *eeg_meta.fs_hz;
  s.eeg_channel_names = eeg_meta.channel_names;
  if (s.eeg_channel_names.empty())
    for (Index c = 0; c < s.eeg.rows(); ++c) s.eeg_channel_names.push_back("Ch" + std::to_string(c + 1));

  auto [kin, kin_meta] = load_matrix<double>(dir / "kin");
  if (!kin_meta.fs_hz) throw std::runtime_error((dir / "kin").string() + ": missing fs_hz");
  s.kin = std::move(kin);
  s.kin_fs = *kin_meta.fs_hz;

  for (const auto& t : j.at("trials")) {
    TrialMarker m;
    m.onset_sample = t.at("onset_sample").get<Index>();
    m.return_sample = t.at("return_sample").get<Index>();
    m.weight_grams = t.value("weight_grams", 165);
    m.surface = surface_from_string(t.value("surface", std::string("sandpaper")));
    s.trials.push_back(m);
  }
  return s;
}

std::optional<ComponentRejection> load_component_rejection(const fs::path& dir) {
  const json j = read_json(dir / "session.json");
  if (!j.contains("ica")) return std::nullopt;
  const auto& ica = j["ica"];
  ComponentRejection r;
  r.unmixing = load_matrix<double>(dir / ica.at("unmixing").get<std::string>()).first;
  r.mixing = load_matrix<double>(dir / ica.at("mixing").get<std::string>()).first;
  r.reject = ica.at("reject").get<std::vector<Index>>();
  return r;
}

void save_leadfield(const fs::path& stem, const LeadField& lf) {
  lf.validate();
  MatrixMeta meta;
  meta.role = "leadfield";
  meta.units = "uV/nAm";
  meta.channel_names = lf.channel_names;
  json pos = json::array();
  for (Index k = 0; k < lf.source_positions.rows(); ++k)
    pos.push_back({lf.source_positions(k, 0), lf.source_positions(k, 1), lf.source_positions(k, 2)});
  meta.extra["source_positions"] = pos;
  meta.extra["atlas_label"] = lf.atlas_label;
  json names = json::object();
  for (const auto& [label, name] : lf.atlas_names) names[std::to_string(label)] = name;
  meta.extra["atlas_names"] = names;
  save_matrix(stem, lf.gain, meta);
}

LeadField load_leadfield(const fs::path& stem) {
  auto [gain, meta] = load_matrix<double>(stem);
  if (meta.role != "leadfield") throw std::runtime_error(stem.string() + ": role is '" + meta.role + "', expected leadfield");
  LeadField lf;
  lf.gain = std::move(gain);
  lf.channel_names = meta.channel_names;
  const auto& ex = meta.extra;
  if (ex.contains("source_positions")) {
    const auto& pos = ex["source_positions"];
    lf.source_positions.resize(static_cast<Index>(pos.size()), 3);
    for (std::size_t k = 0; k < pos.size(); ++k)
      for (int d = 0; d < 3; ++d) lf.source_positions(static_cast<Index>(k), d) = pos[k][d].get<double>();
  }
  lf.atlas_label = ex.at("atlas_label").get<std::vector<int>>();
  for (auto it = ex.at("atlas_names").begin(); it != ex.at("atlas_names").end(); ++it)
    lf.atlas_names[std::stoi(it.key())] = it.value().get<std::string>();
  lf.validate();
  return lf;
}

}  // namespace esigal
