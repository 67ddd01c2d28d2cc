#include "esigal/preprocess.hpp"

#include <algorithm>

namespace esigal {

Matrix reject_components(const Eigen::Ref<const Matrix>& eeg, const Eigen::Ref<const Matrix>& unmixing,
                         const Eigen::Ref<const Matrix>& mixing, const std::vector<Index>& reject) {
  const Index c = eeg.rows();
  if (unmixing.rows() != c || unmixing.cols() != c || mixing.rows() != c || mixing.cols() != c)
    throw std::invalid_argument("unmixing and mixing must be " + std::to_string(c) + "x" + std::to_string(c));
  const double err = (mixing * unmixing - Matrix::Identity(c, c)).cwiseAbs().maxCoeff();
  if (!(err <= 1e-6))
    throw std::invalid_argument("mixing * unmixing deviates from identity by " + std::to_string(err));
  Matrix components = unmixing * eeg;
  for (Index r : reject) {
    if (r < 0 || r >= c) throw std::invalid_argument("rejected component index " + std::to_string(r) + " out of range");
    components.row(r).setZero();
  }
  return mixing * components;
}

Matrix lowpass_kinematics(const Eigen::Ref<const Matrix>& kin, double fs, const KinematicsLowpass& opts) {
  if (!(fs > 4.0)) throw std::invalid_argument("kinematics sampling rate must exceed 4 Hz");
  const FirFilter lp = design_fir_lowpass(opts.cutoff_hz, fs, opts.transition_bw);
  return filtfilt_rows(lp, kin);
}

NormStats zscore_stats(const Eigen::Ref<const Matrix>& x, const std::vector<Index>& columns) {
  NormStats stats;
  const Index rows = x.rows();
  stats.mean.resize(rows);
  stats.stddev.resize(rows);
  const auto n = static_cast<double>(columns.empty() ? x.cols() : static_cast<Index>(columns.size()));
  if (n < 2) throw std::invalid_argument("z-score needs at least two samples");
  for (Index r = 0; r < rows; ++r) {
    double mean = 0.0;
    if (columns.empty()) {
      mean = x.row(r).mean();
    } else {
      for (Index c : columns) mean += x(r, c);
      mean /= n;
    }
    double ss = 0.0;
    if (columns.empty()) {
      ss = (x.row(r).array() - mean).square().sum();
    } else {
      for (Index c : columns) ss += (x(r, c) - mean) * (x(r, c) - mean);
    }
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd > 0)) throw std::invalid_argument("z-score: channel " + std::to_string(r) + " has zero variance");
    stats.mean(r) = mean;
    stats.stddev(r) = sd;
  }
  return stats;
}

Matrix zscore_apply(const Eigen::Ref<const Matrix>& x, const NormStats& stats) {
  if (stats.mean.size() != x.rows() || stats.stddev.size() != x.rows())
    throw std::invalid_argument("z-score statistics do not match channel count");
  return ((x.colwise() - stats.mean).array().colwise() / stats.stddev.array()).matrix();
}

}  // namespace esigal
