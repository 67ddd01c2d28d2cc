#pragma once

// EEG and kinematics conditioning. The EEG chain order is fixed:
// band-pass -> common average reference -> component rejection -> decimate.
// Kinematics: low-pass -> min-max -> decimate.

#include "esigal/fir.hpp"
#include "esigal/types.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace esigal {

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> common_average_reference(
    const Eigen::MatrixBase<Derived>& eeg) {
  if (eeg.rows() < 2) throw std::invalid_argument("common average reference needs at least 2 channels");
  return eeg.rowwise() - eeg.colwise().mean();
}

/// Unmixes, zeroes the rejected components and mixes back.
/// Requires mixing * unmixing to be the identity within 1e-6.
Matrix reject_components(const Eigen::Ref<const Matrix>& eeg, const Eigen::Ref<const Matrix>& unmixing,
                         const Eigen::Ref<const Matrix>& mixing, const std::vector<Index>& reject);

/// Keeps every `factor`-th column starting at 0.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> decimate(
    const Eigen::MatrixBase<Derived>& x, int factor) {
  if (factor <= 0) throw std::invalid_argument("decimation factor must be positive");
  const Index out_len = x.cols() == 0 ? 0 : (x.cols() - 1) / factor + 1;
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out(x.rows(), out_len);
  for (Index k = 0; k < out_len; ++k) out.col(k) = x.col(k * factor);
  return out;
}

struct KinematicsLowpass {
  double cutoff_hz = 2.0;
  double transition_bw = 1.0;
};

/// Zero-phase low-pass of each axis.
Matrix lowpass_kinematics(const Eigen::Ref<const Matrix>& kin, double fs, const KinematicsLowpass& opts = {});

/// Per-row (k - min) / (max - min). Throws on a constant row.
template <typename Derived>
std::pair<Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>, NormStats> minmax_normalize(
    const Eigen::MatrixBase<Derived>& kin) {
  NormStats stats;
  stats.kmin = kin.rowwise().minCoeff().template cast<double>();
  stats.kmax = kin.rowwise().maxCoeff().template cast<double>();
  for (Index r = 0; r < kin.rows(); ++r)
    if (!(stats.kmax(r) > stats.kmin(r)))
      throw std::invalid_argument("min-max normalization: row " + std::to_string(r) + " is constant");
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(kin.rows(), kin.cols());
  for (Index r = 0; r < kin.rows(); ++r)
    out.row(r) = ((kin.row(r).array() - static_cast<Scalar>(stats.kmin(r))) /
                  static_cast<Scalar>(stats.kmax(r) - stats.kmin(r)))
                     .matrix();
  return {std::move(out), std::move(stats)};
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> minmax_inverse(
    const Eigen::MatrixBase<Derived>& normalized, const NormStats& stats) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(normalized.rows(), normalized.cols());
  for (Index r = 0; r < normalized.rows(); ++r)
    out.row(r) = (normalized.row(r).array() * static_cast<Scalar>(stats.kmax(r) - stats.kmin(r)) +
                  static_cast<Scalar>(stats.kmin(r)))
                     .matrix();
  return out;
}

/// Per-channel mean and sample (T-1) standard deviation over the given columns
/// (all columns when `columns` is empty). Throws on a zero-variance channel.
NormStats zscore_stats(const Eigen::Ref<const Matrix>& x, const std::vector<Index>& columns = {});

Matrix zscore_apply(const Eigen::Ref<const Matrix>& x, const NormStats& stats);

/// (v - mean) / std per channel with statistics from the whole input.
template <typename Derived>
std::pair<Matrix, NormStats> zscore_channels(const Eigen::MatrixBase<Derived>& x) {
  const Matrix xd = x.template cast<double>();
  NormStats stats = zscore_stats(xd);
  return {zscore_apply(xd, stats), std::move(stats)};
}

}  // namespace esigal
