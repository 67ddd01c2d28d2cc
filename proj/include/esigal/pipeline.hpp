#pragma once

// Stage functions and the grid runner.
//
// Run directory layout:
//   <out>/config.json  results.csv  summary.csv  ttests.csv  report.md  manifest.json
//   <out>/cache/synth/<key>/<subject>/            generated sessions
//   <out>/cache/preprocessed/<key>/               100 Hz CAR'd EEG + kinematics
//   <out>/cache/features/<key>/                   z-scored sensor or ROI series
//   <out>/cache/cells/<key>/result.json           PCCs of one model on one cell
//   <out>/cache/cells/<key>/checkpoint/           trained network weights

#include "esigal/config.hpp"
#include "esigal/evaluation.hpp"
#include "esigal/session_io.hpp"
#include "esigal/source_imaging.hpp"
#include "esigal/windowing.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace esigal {

/// Band-pass, CAR, optional component rejection and decimation of every EEG
/// channel; low-pass, min-max and decimation of the kinematics. Markers are
/// mapped to the decimated grid. `feature_names` holds the EEG channel names.
FeatureSession preprocess_session(const RawSession& raw, const PreprocessConfig& cfg,
                                  const std::optional<ComponentRejection>& ica = std::nullopt);

/// Columns covered by the given trials (pre-onset context through return).
std::vector<Index> trial_columns(const FeatureSession& session, const std::vector<Index>& trial_subset,
                                 Index pre_onset = kPreOnsetSamples);

/// Selects `channels` and z-scores them; statistics from `zscore_columns`
/// (all columns when empty).
FeatureSession sensor_features(const FeatureSession& pre, const std::vector<std::string>& channels,
                               const std::vector<Index>& zscore_columns = {});

/// Fused ROI operator on the average-referenced lead field.
Matrix build_roi_operator(const LeadField& lf, const std::vector<std::string>& rois, double snr,
                          const Matrix& noise_cov = {});

/// Applies an R x I operator (columns in `lf_channels` order) and z-scores the ROI series.
FeatureSession source_features(const FeatureSession& pre, const Matrix& roi_op,
                               const std::vector<std::string>& lf_channels, const std::vector<std::string>& rois,
                               const std::vector<Index>& zscore_columns = {});

/// Rounds a feature session to float32 precision, matching what the cache stores.
void quantize(FeatureSession& fs);

/// Per-cell seed from the master seed and the cell coordinates.
std::uint64_t cell_seed(std::uint64_t master, const std::string& unit, Domain domain, int lag_ms, int window_ms,
                        const std::string& model);

struct FitResult {
  std::vector<Pcc3> pcc;  // one per test set
  int epochs = 0;
  int best_epoch = 0;
  std::string stop_reason;
};

/// Trains `model` (an mLR/rSCNet/rDCNet/rEEGNet label) and evaluates it on
/// each test set. Neural weights are written to `checkpoint_dir` if given.
FitResult fit_and_evaluate(const std::string& model, const WindowedDataset& train, const WindowedDataset& val,
                           const std::vector<const WindowedDataset*>& tests, const nn::TrainConfig& tc,
                           std::uint64_t seed, bool per_trial_mean,
                           const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt);

struct RunOptions {
  bool verbose = true;
  /// Upper bound on worker threads; ESIGAL_WORKERS caps it further.
  std::optional<int> workers;
};

struct RunSummary {
  std::filesystem::path run_dir;
  int cells_total = 0;
  int cells_failed = 0;
  int cells_cached = 0;
  std::vector<ResultRecord> records;
  bool ok() const { return cells_failed == 0; }
};

/// Validates, then runs every stage, skipping those whose outputs exist.
RunSummary run_pipeline(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// Writes results.csv, summary.csv, ttests.csv and report.md for `records`.
std::vector<std::filesystem::path> write_reports(const std::filesystem::path& dir,
                                                 const std::vector<ResultRecord>& records, int ttest_lag_ms,
                                                 int ttest_window_ms);

/// Effective worker count: min(requested, ESIGAL_WORKERS), at least 1.
int effective_workers(int requested);

}  // namespace esigal
