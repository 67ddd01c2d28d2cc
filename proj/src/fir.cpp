#include "esigal/fir.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace esigal {

namespace {

Vector hamming(Index n) {
  Vector w(n);
  if (n == 1) {
    w(0) = 1.0;
    return w;
  }
  for (Index i = 0; i < n; ++i) w(i) = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / static_cast<double>(n - 1));
  return w;
}

// Windowed ideal low-pass with cutoff fc (Hz), normalized to unit DC gain.
Vector unit_lowpass(double fc, double fs, Index n) {
  const Vector w = hamming(n);
  const Index mid = (n - 1) / 2;
  const double wc = 2.0 * fc / fs;
  Vector h(n);
  for (Index i = 0; i < n; ++i) {
    const double m = static_cast<double>(i - mid);
    const double x = std::numbers::pi * wc * m;
    h(i) = wc * (m == 0.0 ? 1.0 : std::sin(x) / x) * w(i);
  }
  // Exact symmetry: mirror the first half.
  for (Index i = 0; i < mid; ++i) h(n - 1 - i) = h(i);
  return h / h.sum();
}

void check_taps(Index n, Index max_taps) {
  if (n > max_taps)
    throw std::invalid_argument("transition band too narrow: " + std::to_string(n) + " taps exceed the cap of " +
                                std::to_string(max_taps));
}

// out[i] = sum_k h[k] * in[i + k]: the steady-state part of a causal pass,
// shifted by the group delay (taps are symmetric).
void valid_pass(const Vector& h, const Vector& in, Vector& out) {
  const Index n = h.size();
  const Index len = in.size() - n + 1;
  out.resize(len);
  for (Index i = 0; i < len; ++i) out(i) = h.dot(in.segment(i, n));
}

}  // namespace

std::complex<double> FirFilter::response(double f) const {
  std::complex<double> acc = 0.0;
  for (Index n = 0; n < taps.size(); ++n)
    acc += taps(n) * std::polar(1.0, -2.0 * std::numbers::pi * f * static_cast<double>(n) / fs);
  return acc;
}

Index fir_tap_count(double fs, double transition_bw) {
  if (!(transition_bw > 0)) throw std::invalid_argument("transition bandwidth must be positive");
  auto n = static_cast<Index>(std::ceil(3.3 * fs / transition_bw - 1e-9));
  if (n % 2 == 0) ++n;
  return n;
}

FirFilter design_fir_bandpass(double f_lo, double f_hi, double fs, double transition_bw, Index max_taps) {
  if (!(fs > 0)) throw std::invalid_argument("sampling rate must be positive");
  if (!(f_lo > 0 && f_lo < f_hi && f_hi < fs / 2))
    throw std::invalid_argument("band edges must satisfy 0 < f_lo < f_hi < fs/2");
  const Index n = fir_tap_count(fs, transition_bw);
  check_taps(n, max_taps);

  FirFilter f;
  f.fs = fs;
  f.f_lo = f_lo;
  f.f_hi = f_hi;
  f.transition_bw = transition_bw;
  f.taps = unit_lowpass(f_hi, fs, n) - unit_lowpass(f_lo, fs, n);
  f.taps /= std::abs(f.response(0.5 * (f_lo + f_hi)));
  return f;
}

FirFilter design_fir_lowpass(double f_cut, double fs, double transition_bw, Index max_taps) {
  if (!(fs > 0)) throw std::invalid_argument("sampling rate must be positive");
  if (!(f_cut > 0 && f_cut < fs / 2)) throw std::invalid_argument("cutoff must satisfy 0 < f < fs/2");
  const Index n = fir_tap_count(fs, transition_bw);
  check_taps(n, max_taps);
  FirFilter f;
  f.fs = fs;
  f.f_lo = 0.0;
  f.f_hi = f_cut;
  f.transition_bw = transition_bw;
  f.taps = unit_lowpass(f_cut, fs, n);
  return f;
}

Vector filtfilt(const FirFilter& filter, const Eigen::Ref<const Vector>& x) {
  const Index n = filter.size();
  const Index len = x.size();
  if (n < 1) throw std::invalid_argument("empty filter");
  if (len <= 3 * n)
    throw std::invalid_argument("signal of " + std::to_string(len) + " samples too short for a " +
                                std::to_string(n) + "-tap filtfilt (needs > " + std::to_string(3 * n) + ")");
  const Index pad = n - 1;

  // Odd reflection about the end samples.
  Vector padded(len + 2 * pad);
  padded.segment(pad, len) = x;
  for (Index i = 1; i <= pad; ++i) {
    padded(pad - i) = 2.0 * x(0) - x(i);
    padded(pad + len - 1 + i) = 2.0 * x(len - 1) - x(len - 1 - i);
  }

  // Forward, reverse, forward, reverse with a causal filter. With symmetric
  // taps that equals two valid correlations; each trims n-1 samples, which
  // consumes the padding exactly and never touches zero initial state.
  Vector y1, y2;
  valid_pass(filter.taps, padded, y1);
  valid_pass(filter.taps, y1, y2);
  return y2;
}

Matrix filtfilt_rows(const FirFilter& filter, const Eigen::Ref<const Matrix>& x) {
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) out.row(r) = filtfilt(filter, x.row(r).transpose()).transpose();
  return out;
}

}  // namespace esigal
