#pragma once

#include "esigal/types.hpp"
#include "esigal/windowing.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace esigal {

/// Pearson correlation with sample (T-1) standard deviations. Throws on
/// length mismatch, T < 2, or a constant series.
double pcc(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b);

using Pcc3 = std::array<double, 3>;

/// One PCC per column of N x 3 predictions/targets. With `per_trial_mean`
/// the PCC is computed per trial (grouped by `trial_index`) and averaged.
Pcc3 pcc_axes(const Eigen::Ref<const Matrix>& predicted, const Eigen::Ref<const Matrix>& measured,
              const std::vector<Index>& trial_index = {}, bool per_trial_mean = false);

using Predictor = std::function<Matrix(const RowMatrix& inputs)>;

Pcc3 evaluate_model(const Predictor& predictor, const WindowedDataset& test, bool per_trial_mean = false);

/// P(T >= t) for Student's t with `df` degrees of freedom, by adaptive
/// Simpson quadrature of the density (absolute error <= 1e-10); df >= 1.
double student_t_upper_tail(double t, double df);

struct TTest {
  double t = 0.0;
  double p = 0.0;  // one-tailed, alternative mean(a) > mean(b)
  int df = 0;
};

/// Paired one-tailed t-test on d = a - b.
TTest paired_t_test_one_tailed(const std::vector<double>& a, const std::vector<double>& b);

inline constexpr const char* kModelLabels[] = {"mLR", "rSCNet", "rDCNet", "rEEGNet"};

struct ResultRecord {
  std::string subject_id;
  std::string domain;  // sensor | source
  std::string model;   // one of kModelLabels
  int lag_ms = 0;
  int window_ms = 0;
  std::string split;  // intra | inter-fold-k
  double pcc_x = 0, pcc_y = 0, pcc_z = 0;
  std::uint64_t seed = 0;
  std::string config_hash;

  double pcc(int axis) const { return axis == 0 ? pcc_x : axis == 1 ? pcc_y : pcc_z; }
  /// Throws unless every PCC is finite and within [-1, 1] (+-1e-12).
  void validate() const;
};

}  // namespace esigal
