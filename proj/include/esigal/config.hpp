#pragma once

// Experiment configuration: one JSON document, validated before any compute.

#include "esigal/nn/train.hpp"
#include "esigal/source_imaging.hpp"
#include "esigal/windowing.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace esigal {

enum class SplitMode { intra, inter };
enum class ZscoreScope { session, train };

std::string to_string(SplitMode m);
std::string to_string(ZscoreScope s);

struct SyntheticDataConfig {
  int n_subjects = 12;
  int n_trials = 60;
  Index n_channels = 32;
  Index n_sources = 200;
  double snr = 5.0;
  double trial_len_ms = 1500.0;
};

struct DataConfig {
  std::vector<std::filesystem::path> sessions;  // session directories
  std::optional<std::filesystem::path> leadfield;  // shared stem; else <session>/leadfield
  std::optional<SyntheticDataConfig> synthetic;
};

struct PreprocessConfig {
  double band_lo = 0.1;
  double band_hi = 40.0;
  double transition_bw = 2.0;
  double kin_cutoff = 2.0;
  double kin_transition_bw = 1.0;
  int decimate = 5;
  ZscoreScope zscore_scope = ZscoreScope::session;
};

struct InverseConfig {
  double snr = 3.0;
  std::optional<std::filesystem::path> noise_cov;  // I x I container in lead-field channel order; identity if absent
};

struct EvaluationConfig {
  bool pcc_per_trial_mean = false;
  int ttest_lag_ms = 100;
  int ttest_window_ms = 450;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "runs/experiment";
  DataConfig data;
  std::vector<Domain> domains{Domain::sensor, Domain::source};
  std::vector<std::string> models{"mLR", "rSCNet", "rDCNet", "rEEGNet"};
  std::vector<int> lags_ms{0, 50, 100, 150};
  std::vector<int> windows_ms{250, 300, 350, 400, 450};
  SplitMode split = SplitMode::intra;
  bool allow_split_fallback = false;
  nn::TrainConfig train;
  std::vector<std::string> channels;
  std::vector<std::string> rois;
  InverseConfig inverse;
  PreprocessConfig preprocess;
  EvaluationConfig evaluation;
  int workers = 1;

  /// Structural checks only (grid, names, ranges). Throws std::invalid_argument.
  void validate() const;
  /// validate() plus: referenced files exist, channel and ROI names resolve.
  void validate_inputs() const;

  /// FNV-1a over the canonical JSON without output_dir and workers.
  std::string hash() const;
};

/// The 18 motor-area electrodes used when `channels` is omitted.
const std::vector<std::string>& default_sensor_channels();

nlohmann::json to_json(const ExperimentConfig& c);
/// Unknown keys are rejected so typos surface early. Relative data paths are
/// resolved against `base_dir`.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// JSON Schema (draft 2020-12) describing the document.
nlohmann::json config_schema();

std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace esigal
