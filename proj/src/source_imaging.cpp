#include "esigal/source_imaging.hpp"

#include "esigal/container.hpp"

#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>

namespace esigal {

namespace fs = std::filesystem;

std::string to_string(NoiseCovKind kind) {
  switch (kind) {
    case NoiseCovKind::identity: return "identity";
    case NoiseCovKind::diagonal: return "diagonal";
    case NoiseCovKind::full: return "full";
  }
  return "unknown";
}

namespace {

NoiseCovKind parse_kind(const std::string& s) {
  if (s == "identity") return NoiseCovKind::identity;
  if (s == "diagonal") return NoiseCovKind::diagonal;
  if (s == "full") return NoiseCovKind::full;
  throw std::runtime_error("unknown noise covariance kind '" + s + "'");
}

NoiseCovKind classify(const Matrix& cov) {
  if (cov.size() == 0) return NoiseCovKind::identity;
  Matrix off = cov;
  off.diagonal().setZero();
  if (off.cwiseAbs().maxCoeff() == 0.0)
    return cov.diagonal().isOnes(0.0) ? NoiseCovKind::identity : NoiseCovKind::diagonal;
  return NoiseCovKind::full;
}

}  // namespace

double snr_to_lambda2(const Matrix& gain, double snr) {
  if (!(snr > 0)) throw std::invalid_argument("snr must be positive");
  const double trace = gain.squaredNorm();  // trace(A A^T)
  return trace / static_cast<double>(gain.rows()) / (snr * snr);
}

InverseOperator compute_inverse_operator(const LeadField& lf, const Matrix& noise_cov, double snr) {
  InverseOperator op = compute_inverse_operator_lambda(lf, noise_cov, snr_to_lambda2(lf.gain, snr));
  op.snr = snr;
  return op;
}

InverseOperator compute_inverse_operator_lambda(const LeadField& lf, const Matrix& noise_cov, double lambda2) {
  const Matrix& a = lf.gain;
  const Index n_ch = a.rows(), n_src = a.cols();
  if (n_ch < 1 || n_src < 1) throw std::invalid_argument("empty lead field");
  if (!a.allFinite()) throw std::invalid_argument("lead field contains non-finite gains");
  if (!(lambda2 >= 0)) throw std::invalid_argument("lambda2 must be non-negative");

  Matrix cov = noise_cov.size() == 0 ? Matrix::Identity(n_ch, n_ch) : noise_cov;
  if (cov.rows() != n_ch || cov.cols() != n_ch)
    throw std::invalid_argument("noise covariance must be " + std::to_string(n_ch) + "x" + std::to_string(n_ch));
  if (!cov.isApprox(cov.transpose(), 1e-12)) throw std::invalid_argument("noise covariance must be symmetric");
  if (Eigen::LLT<Matrix>(cov).info() != Eigen::Success)
    throw std::invalid_argument("noise covariance must be positive definite");

  Matrix gram = a * a.transpose();
  gram.noalias() += lambda2 * cov;
  const Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("regularized Gram matrix is singular (lambda2=" + std::to_string(lambda2) + ")");
  const Matrix x = llt.solve(a);  // (A A^T + lambda2 C)^-1 A, I x K
  if (!x.allFinite())
    throw std::runtime_error("regularized Gram matrix is singular (lambda2=" + std::to_string(lambda2) + ")");

  InverseOperator op;
  op.w_mn = x.transpose();
  op.resolution_diag = x.cwiseProduct(a).colwise().sum().transpose();
  op.lambda2 = lambda2;
  op.snr = lambda2 > 0 ? std::sqrt(a.squaredNorm() / static_cast<double>(n_ch) / lambda2)
                       : std::numeric_limits<double>::infinity();
  op.noise_cov_kind = classify(noise_cov);
  op.channel_names = lf.channel_names;

  const double r_max = op.resolution_diag.maxCoeff();
  op.retained.assign(static_cast<std::size_t>(n_src), true);
  op.w_std.resize(n_src, n_ch);
  Index dead = 0;
  for (Index j = 0; j < n_src; ++j) {
    const double r = op.resolution_diag(j);
    if (!(r > 0)) throw std::runtime_error("resolution diagonal is non-positive at source " + std::to_string(j));
    op.w_std.row(j) = op.w_mn.row(j) / std::sqrt(r);
    if (r < kDeadSourceFraction * r_max) {
      op.retained[static_cast<std::size_t>(j)] = false;
      ++dead;
    }
  }
  if (dead > 0)
    std::cerr << "warning: " << dead << " source(s) with negligible resolution excluded from ROI membership\n";
  return op;
}

Matrix apply_inverse(const InverseOperator& op, const Eigen::Ref<const Matrix>& e,
                     const std::vector<std::string>& channel_names) {
  if (e.rows() != op.n_channels())
    throw std::invalid_argument("EEG has " + std::to_string(e.rows()) + " rows, operator expects " +
                                std::to_string(op.n_channels()));
  if (channel_names != op.channel_names) {
    for (std::size_t i = 0; i < channel_names.size() && i < op.channel_names.size(); ++i)
      if (channel_names[i] != op.channel_names[i])
        throw std::invalid_argument("channel order mismatch at row " + std::to_string(i) + ": '" + channel_names[i] +
                                    "' vs operator '" + op.channel_names[i] + "'");
    throw std::invalid_argument("channel name list does not match the operator");
  }
  return op.w_std * e;
}

std::vector<std::vector<Index>> roi_members(const LeadField& lf, const std::vector<std::string>& selected,
                                            const std::vector<bool>& retained) {
  std::vector<std::vector<Index>> members;
  members.reserve(selected.size());
  for (const auto& name : selected) {
    int label = 0;
    bool found = false;
    for (const auto& [l, n] : lf.atlas_names)
      if (n == name) {
        label = l;
        found = true;
        break;
      }
    if (!found) throw std::invalid_argument("unknown ROI '" + name + "'");
    std::vector<Index> idx;
    for (Index j = 0; j < static_cast<Index>(lf.atlas_label.size()); ++j)
      if (lf.atlas_label[static_cast<std::size_t>(j)] == label &&
          (retained.empty() || retained[static_cast<std::size_t>(j)]))
        idx.push_back(j);
    if (idx.empty()) throw std::invalid_argument("ROI '" + name + "' has no sources");
    members.push_back(std::move(idx));
  }
  return members;
}

RoiSeries roi_reduce(const Eigen::Ref<const Matrix>& sources, const LeadField& lf,
                     const std::vector<std::string>& selected, double fs, const std::vector<bool>& retained) {
  if (sources.rows() != lf.n_sources())
    throw std::invalid_argument("source matrix has " + std::to_string(sources.rows()) + " rows, lead field " +
                                std::to_string(lf.n_sources()));
  const auto members = roi_members(lf, selected, retained);
  RoiSeries out;
  out.roi_names = selected;
  out.fs = fs;
  out.data.setZero(static_cast<Index>(selected.size()), sources.cols());
  for (std::size_t r = 0; r < members.size(); ++r) {
    for (Index j : members[r]) out.data.row(static_cast<Index>(r)) += sources.row(j);
    out.data.row(static_cast<Index>(r)) /= static_cast<double>(members[r].size());
  }
  if (!out.data.allFinite()) throw std::runtime_error("ROI series contains non-finite values");
  return out;
}

Matrix roi_inverse_operator(const InverseOperator& op, const LeadField& lf, const std::vector<std::string>& selected) {
  const auto members = roi_members(lf, selected, op.retained);
  Matrix avg = Matrix::Zero(static_cast<Index>(selected.size()), op.n_sources());
  for (std::size_t r = 0; r < members.size(); ++r)
    for (Index j : members[r]) avg(static_cast<Index>(r), j) = 1.0 / static_cast<double>(members[r].size());
  return avg * op.w_std;
}

LeadField average_reference(const LeadField& lf) {
  LeadField out = lf;
  out.gain = lf.gain.rowwise() - lf.gain.colwise().mean();
  return out;
}

void save_inverse_operator(const fs::path& stem, const InverseOperator& op) {
  MatrixMeta meta;
  meta.role = "operator";
  meta.extra["kind"] = "sloreta";
  meta.extra["lambda2"] = op.lambda2;
  meta.extra["snr"] = std::isfinite(op.snr) ? nlohmann::json(op.snr) : nlohmann::json(nullptr);
  meta.extra["noise_cov_kind"] = to_string(op.noise_cov_kind);
  meta.extra["operator_channels"] = op.channel_names;
  std::vector<double> rdiag(op.resolution_diag.data(), op.resolution_diag.data() + op.resolution_diag.size());
  meta.extra["resolution_diag"] = rdiag;
  std::vector<int> retained(op.retained.begin(), op.retained.end());
  meta.extra["retained"] = retained;
  save_matrix(fs::path(stem.string() + "_std"), op.w_std, meta);
  meta.extra["kind"] = "minimum_norm";
  save_matrix(fs::path(stem.string() + "_mn"), op.w_mn, meta);
}

InverseOperator load_inverse_operator(const fs::path& stem) {
  auto [w_std, meta] = load_matrix<double>(fs::path(stem.string() + "_std"));
  InverseOperator op;
  op.w_std = std::move(w_std);
  op.w_mn = load_matrix<double>(fs::path(stem.string() + "_mn")).first;
  op.lambda2 = meta.extra.at("lambda2").get<double>();
  op.snr = meta.extra.at("snr").is_null() ? std::numeric_limits<double>::infinity() : meta.extra["snr"].get<double>();
  op.noise_cov_kind = parse_kind(meta.extra.at("noise_cov_kind").get<std::string>());
  op.channel_names = meta.extra.at("operator_channels").get<std::vector<std::string>>();
  const auto rdiag = meta.extra.at("resolution_diag").get<std::vector<double>>();
  op.resolution_diag = Eigen::Map<const Vector>(rdiag.data(), static_cast<Index>(rdiag.size()));
  for (int r : meta.extra.at("retained").get<std::vector<int>>()) op.retained.push_back(r != 0);
  return op;
}

}  // namespace esigal
