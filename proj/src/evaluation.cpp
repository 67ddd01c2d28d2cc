#include "esigal/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace esigal {

double pcc(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const Index t = a.size();
  if (b.size() != t) throw std::invalid_argument("pcc: series lengths differ");
  if (t < 2) throw std::invalid_argument("pcc: need at least 2 samples");
  const double ma = a.mean(), mb = b.mean();
  const double sa = std::sqrt((a.array() - ma).square().sum() / static_cast<double>(t - 1));
  const double sb = std::sqrt((b.array() - mb).square().sum() / static_cast<double>(t - 1));
  if (!(sa > 0) || !(sb > 0)) throw std::domain_error("pcc: constant series, correlation undefined");
  double s = 0;
  for (Index i = 0; i < t; ++i) s += ((a[i] - ma) / sa) * ((b[i] - mb) / sb);
  return std::clamp(s / static_cast<double>(t - 1), -1.0, 1.0);
}

Pcc3 pcc_axes(const Eigen::Ref<const Matrix>& predicted, const Eigen::Ref<const Matrix>& measured,
              const std::vector<Index>& trial_index, bool per_trial_mean) {
  if (predicted.rows() != measured.rows() || predicted.cols() != 3 || measured.cols() != 3)
    throw std::invalid_argument("pcc_axes: expected matching N x 3 matrices");
  if (predicted.rows() == 0) throw std::invalid_argument("pcc_axes: empty test set");
  static const char* kAxis[] = {"x", "y", "z"};
  Pcc3 out{};
  for (int k = 0; k < 3; ++k) {
    try {
      if (!per_trial_mean) {
        out[k] = pcc(predicted.col(k), measured.col(k));
        continue;
      }
      if (static_cast<Index>(trial_index.size()) != predicted.rows())
        throw std::invalid_argument("per-trial PCC needs a trial index per sample");
      std::map<Index, std::vector<Index>> groups;
      for (std::size_t i = 0; i < trial_index.size(); ++i) groups[trial_index[i]].push_back(static_cast<Index>(i));
      double sum = 0;
      for (const auto& [trial, rows] : groups) {
        Vector p(static_cast<Index>(rows.size())), m(static_cast<Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
          p[static_cast<Index>(i)] = predicted(rows[i], k);
          m[static_cast<Index>(i)] = measured(rows[i], k);
        }
        sum += pcc(p, m);
      }
      out[k] = sum / static_cast<double>(groups.size());
    } catch (const std::exception& e) {
      throw std::domain_error(std::string("axis ") + kAxis[k] + ": " + e.what());
    }
  }
  return out;
}

Pcc3 evaluate_model(const Predictor& predictor, const WindowedDataset& test, bool per_trial_mean) {
  if (test.size() == 0) throw std::invalid_argument("evaluate_model: empty test set");
  const Matrix pred = predictor(test.inputs);
  return pcc_axes(pred, test.targets, test.trial_index, per_trial_mean);
}

namespace {

double t_density(double x, double df) {
  const double c = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * M_PI);
  return std::exp(c - (df + 1) / 2 * std::log1p(x * x / df));
}

template <typename F>
double simpson(F& f, double a, double b, double fa, double fm, double fb, double whole, double tol, int depth) {
  const double m = (a + b) / 2, lm = (a + m) / 2, rm = (m + b) / 2;
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6 * (fa + 4 * flm + fm);
  const double right = (b - m) / 6 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15 * tol) return left + right + (left + right - whole) / 15;
  return simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

}  // namespace

double student_t_upper_tail(double t, double df) {
  if (!(df >= 1)) throw std::invalid_argument("degrees of freedom must be >= 1");
  if (std::isnan(t)) throw std::invalid_argument("t is NaN");
  if (t == 0) return 0.5;
  if (t < 0) return 1.0 - student_t_upper_tail(-t, df);
  if (std::isinf(t)) return 0.0;
  // x = t / u maps [t, inf) onto (0, 1]; the integrand vanishes like u^(df-1).
  auto f = [&](double u) {
    if (u <= 0) return df == 1 ? 1.0 / (M_PI * t) : 0.0;
    return t_density(t / u, df) * t / (u * u);
  };
  const double fa = f(0), fm = f(0.5), fb = f(1);
  const double whole = (fa + 4 * fm + fb) / 6;
  return std::clamp(simpson(f, 0.0, 1.0, fa, fm, fb, whole, 1e-12, 50), 0.0, 0.5);
}

TTest paired_t_test_one_tailed(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired t-test: samples differ in length");
  if (a.size() < 2) throw std::invalid_argument("paired t-test: need at least 2 pairs");
  const auto n = static_cast<Index>(a.size());
  Vector d(n);
  for (Index i = 0; i < n; ++i) d[i] = a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)];
  const double mean = d.mean();
  const double sd = std::sqrt((d.array() - mean).square().sum() / static_cast<double>(n - 1));
  if (!(sd > 0)) throw std::domain_error("paired t-test: differences have zero variance");
  TTest r;
  r.df = static_cast<int>(n - 1);
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = student_t_upper_tail(r.t, r.df);
  return r;
}

void ResultRecord::validate() const {
  for (int k = 0; k < 3; ++k) {
    const double v = pcc(k);
    if (!std::isfinite(v) || v < -1 - 1e-12 || v > 1 + 1e-12)
      throw std::domain_error("result " + subject_id + "/" + model + ": PCC out of range");
  }
}

}  // namespace esigal
