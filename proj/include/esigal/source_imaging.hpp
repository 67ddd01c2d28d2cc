#pragma once

// Minimum-norm inverse with sLORETA standardization and atlas ROI averaging.
//
//   lambda2 = trace(A A^T) / I / snr^2
//   W_mn    = A^T (A A^T + lambda2 C)^-1
//   R_jj    = (W_mn A)_jj
//   W_std   = diag(R)^-1/2 W_mn

#include "esigal/types.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace esigal {

enum class NoiseCovKind { identity, diagonal, full };

std::string to_string(NoiseCovKind kind);

struct InverseOperator {
  Matrix w_std;  // K x I
  Matrix w_mn;   // K x I
  double lambda2 = 0.0;
  double snr = 0.0;
  NoiseCovKind noise_cov_kind = NoiseCovKind::identity;
  Vector resolution_diag;             // K
  std::vector<bool> retained;         // false for numerically dead sources
  std::vector<std::string> channel_names;

  Index n_sources() const { return w_std.rows(); }
  Index n_channels() const { return w_std.cols(); }
};

/// Sources whose resolution diagonal falls below this fraction of the
/// maximum are excluded from ROI membership.
inline constexpr double kDeadSourceFraction = 1e-12;

/// lambda2 from the snr rule. `noise_cov` empty means identity.
InverseOperator compute_inverse_operator(const LeadField& lf, const Matrix& noise_cov, double snr);

/// Same with an explicit regularization value (lambda2 >= 0).
InverseOperator compute_inverse_operator_lambda(const LeadField& lf, const Matrix& noise_cov, double lambda2);

double snr_to_lambda2(const Matrix& gain, double snr);

/// s = W_std * e. `channel_names` must equal the operator's channel order.
Matrix apply_inverse(const InverseOperator& op, const Eigen::Ref<const Matrix>& e,
                     const std::vector<std::string>& channel_names);

struct RoiSeries {
  Matrix data;  // R x T
  std::vector<std::string> roi_names;
  double fs = 0.0;
};

/// Source indices (ascending) that make up each selected ROI. Sources with
/// `retained[j] == false` are skipped; an empty `retained` keeps everything.
std::vector<std::vector<Index>> roi_members(const LeadField& lf, const std::vector<std::string>& selected,
                                            const std::vector<bool>& retained = {});

/// Row r is the per-sample mean over the sources of ROI selected[r].
RoiSeries roi_reduce(const Eigen::Ref<const Matrix>& sources, const LeadField& lf,
                     const std::vector<std::string>& selected, double fs, const std::vector<bool>& retained = {});

/// Fused R x I operator: ROI averaging composed with W_std.
Matrix roi_inverse_operator(const InverseOperator& op, const LeadField& lf, const std::vector<std::string>& selected);

/// Rows are re-referenced to their channel mean, matching average-referenced EEG.
LeadField average_reference(const LeadField& lf);

void save_inverse_operator(const std::filesystem::path& stem, const InverseOperator& op);
InverseOperator load_inverse_operator(const std::filesystem::path& stem);

}  // namespace esigal
