#pragma once

#include "esigal/types.hpp"

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace esigal {

struct SyntheticConfig {
  int n_trials = 60;
  Index n_channels = 32;   // I
  Index n_sources = 200;   // K
  double snr = 5.0;        // sensor signal/noise amplitude ratio; +inf disables noise
  double trial_len_ms = 1500.0;
  double fs = 500.0;
  int n_driven = 8;                // sources linearly driven by the kinematics
  double neural_lead_ms = 150.0;   // driven sources follow the kinematics this far ahead
  double background_level = 0.05;  // background source std relative to driven amplitude
  std::string subject_id = "S01";
};

/// Ground-truth pieces of a generated session; `sources` is K x samples
/// and `session.eeg == leadfield.gain * sources + noise`.
struct SyntheticSession {
  RawSession session;
  LeadField leadfield;
  Matrix sources;
  std::vector<Index> driven_sources;
};

/// The 32 electrode labels used by the synthetic montage (10-20 system).
const std::vector<std::string>& standard_montage_32();

/// Electrode labels of an I-channel synthetic montage: the 32 standard names
/// for I == 32, otherwise E01, E02, ...
std::vector<std::string> synthetic_channel_names(Index n_channels);

/// Atlas region names of the synthetic lead field ("<region> L" / "<region> R").
std::vector<std::string> synthetic_region_names();

/// Deterministic for a fixed seed and config.
SyntheticSession generate_synthetic_session(std::uint64_t seed, const SyntheticConfig& cfg);

}  // namespace esigal
