#pragma once

#include "esigal/types.hpp"

#include <complex>

namespace esigal {

/// Linear-phase Hamming-windowed sinc filter. A low-pass has f_lo == 0.
struct FirFilter {
  Vector taps;
  double fs = 0.0;
  double f_lo = 0.0;
  double f_hi = 0.0;
  double transition_bw = 0.0;

  Index size() const { return taps.size(); }
  /// H(f) of the single-pass filter.
  std::complex<double> response(double f) const;
};

inline constexpr Index kDefaultMaxTaps = 20001;

/// ceil(3.3 * fs / transition_bw), bumped to the next odd number.
Index fir_tap_count(double fs, double transition_bw);

/// Band-pass with unit gain at the band centre. Each band edge is built as a
/// unit-DC low-pass prototype, so the pass band excludes DC exactly.
FirFilter design_fir_bandpass(double f_lo, double f_hi, double fs, double transition_bw,
                              Index max_taps = kDefaultMaxTaps);

/// Low-pass with unit DC gain; `f_cut` is the sinc cutoff (-6 dB point).
FirFilter design_fir_lowpass(double f_cut, double fs, double transition_bw, Index max_taps = kDefaultMaxTaps);

/// Zero-phase forward-backward application with odd reflection padding of
/// N-1 samples at both ends. Requires x.size() > 3 * N.
Vector filtfilt(const FirFilter& filter, const Eigen::Ref<const Vector>& x);

/// filtfilt applied to every row of a channels x samples matrix.
Matrix filtfilt_rows(const FirFilter& filter, const Eigen::Ref<const Matrix>& x);

}  // namespace esigal
