#pragma once

// Supervised samples from trials: each kinematics timestamp t is paired with
// the W feature columns ending L samples before it,
//
//   feat columns [onset_index + t - L - W + 1, onset_index + t - L]  (inclusive)
//
// at 100 Hz, with L = lag_ms / 10 and W = window_ms / 10.

#include "esigal/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace esigal {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Domain { sensor, source };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

/// Pre-movement context kept before each onset (650 ms at 100 Hz).
inline constexpr Index kPreOnsetSamples = 65;
inline constexpr int kPreOnsetBudgetMs = 650;

/// Preprocessed, time-aligned features and normalized kinematics at 100 Hz.
struct FeatureSession {
  std::string subject_id;
  Matrix feat;  // C x T
  Matrix kin;   // 3 x T
  double fs = 100.0;
  std::vector<TrialMarker> trials;  // sample indices at fs
  std::vector<std::string> feature_names;
};

struct Trial {
  Matrix feat;  // C x (kin length + onset_index)
  Matrix kin;   // 3 x T_k
  Index onset_index = kPreOnsetSamples;
  std::string subject_id;
  Index marker_index = 0;
};

/// `<dir>/feat` (role eeg or roi), `<dir>/kin` (role kin), `<dir>/features.json` (markers).
void save_feature_session(const std::filesystem::path& dir, const FeatureSession& fs,
                          const std::string& role = "eeg");
FeatureSession load_feature_session(const std::filesystem::path& dir);

/// Cuts one Trial per marker; markers without enough history before onset
/// are skipped with a warning on stderr.
std::vector<Trial> segment_trials(const FeatureSession& session, Index pre_onset = kPreOnsetSamples);

struct WindowedDataset {
  Index channels = 0;  // C
  Index window = 0;    // W
  RowMatrix inputs;    // N x (C*W), each row a row-major C x W window
  Matrix targets;      // N x 3
  int lag_ms = 0;
  int window_ms = 0;
  Domain domain = Domain::sensor;
  std::vector<Index> trial_index;  // per sample, index into the trial list used to build it

  Index size() const { return inputs.rows(); }
};

/// `<stem>_inputs` (role dataset) and `<stem>_targets` (role targets); the
/// inputs sidecar records channels, window, lag, domain, trial indices and
/// any `provenance` keys.
void save_dataset(const std::filesystem::path& stem, const WindowedDataset& ds,
                  const nlohmann::json& provenance = nlohmann::json::object());
WindowedDataset load_dataset(const std::filesystem::path& stem, nlohmann::json* provenance = nullptr);

/// Checks the lag/window pair against the grid rules at `fs`.
void validate_lag_window(int lag_ms, int window_ms, double fs = 100.0);

/// Stride-1 windows for one trial (one sample per kinematics timestamp).
WindowedDataset extract_windows(const Trial& trial, int lag_ms, int window_ms, Domain domain, double fs = 100.0,
                                Index trial_index = 0);

/// Concatenation over `which` (indices into `trials`), in that order.
WindowedDataset build_dataset(const std::vector<Trial>& trials, const std::vector<Index>& which, int lag_ms,
                              int window_ms, Domain domain, double fs = 100.0);

/// Appends b to a; shapes and provenance must agree.
void append_dataset(WindowedDataset& a, const WindowedDataset& b);

struct IntraSplit {
  std::vector<Index> train, val, test;
  bool fallback = false;  // proportional 80/10/10 split was used
};

/// 234/30/30 for 294 trials (30/30 held out for larger sets); smaller sets
/// need `allow_fallback` and get an 80/10/10 split.
IntraSplit split_intra(Index n_trials, std::uint64_t seed, bool allow_fallback = false);

struct InterFold {
  std::vector<std::string> train_subjects;
  std::vector<std::string> test_subjects;
};

/// Four folds over the subjects in the given order; fold k tests the k-th
/// quarter. Requires 12 subjects, or any multiple of 4 with `allow_fallback`.
std::vector<InterFold> split_inter(const std::vector<std::string>& subject_ids, bool allow_fallback = false);

}  // namespace esigal
