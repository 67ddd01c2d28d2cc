#pragma once

// Matrix container: `<stem>.f32` holds row-major little-endian float32
// values, `<stem>.meta.json` the shape and provenance.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace esigal {

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MatrixMeta {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::optional<double> fs_hz;
  std::string role;  // eeg, kin, leadfield, source, roi, dataset, targets, checkpoint, filter, operator, ...
  std::vector<std::string> channel_names;
  std::string units;
  bool nonfinite = false;  // set on save when any value is NaN/Inf
  nlohmann::json extra = nlohmann::json::object();  // role-specific keys, stored top-level
};

bool is_known_role(const std::string& role);

std::filesystem::path data_path(const std::filesystem::path& stem);
std::filesystem::path meta_path(const std::filesystem::path& stem);

/// Writes the float32 payload and sidecar. `meta.rows/cols` are taken from
/// `m`; `meta.nonfinite` is recomputed.
void save_matrix_f32(const std::filesystem::path& stem, const Eigen::Ref<const RowMatrixF>& m,
                     MatrixMeta meta);

std::pair<RowMatrixF, MatrixMeta> load_matrix_f32(const std::filesystem::path& stem);

MatrixMeta load_meta(const std::filesystem::path& stem);

template <typename Derived>
void save_matrix(const std::filesystem::path& stem, const Eigen::MatrixBase<Derived>& m,
                 MatrixMeta meta) {
  const RowMatrixF f = m.template cast<float>();
  save_matrix_f32(stem, f, std::move(meta));
}

/// Loads and converts to `Scalar` (column-major).
template <typename Scalar = float>
std::pair<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>, MatrixMeta> load_matrix(
    const std::filesystem::path& stem) {
  auto [f, meta] = load_matrix_f32(stem);
  return {f.template cast<Scalar>(), std::move(meta)};
}

}  // namespace esigal
