#pragma once

#include <Eigen/Dense>

#include <map>
#include <string>
#include <vector>

namespace esigal {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Surface { sandpaper, suede, silk };

std::string to_string(Surface s);
Surface surface_from_string(const std::string& name);

struct TrialMarker {
  Index onset_sample = 0;   // at eeg_fs
  Index return_sample = 0;  // at eeg_fs
  int weight_grams = 165;   // 165, 330 or 660
  Surface surface = Surface::sandpaper;
};

/// One subject recording: EEG in microvolts (channels x samples), hand
/// position in millimetres (3 x samples) and the movement markers.
struct RawSession {
  std::string subject_id;
  Matrix eeg;
  double eeg_fs = 500.0;
  std::vector<std::string> eeg_channel_names;
  Matrix kin;
  double kin_fs = 500.0;
  std::vector<TrialMarker> trials;

  /// Throws std::invalid_argument describing the first violated invariant.
  /// `min_pre_onset_s` is the history each marker must leave before onset.
  void validate(double min_pre_onset_s = 0.65) const;

  Index channel_index(const std::string& name) const;
};

/// Forward model: gain maps K fixed-orientation sources onto I electrodes.
struct LeadField {
  Matrix gain;  // I x K
  std::vector<std::string> channel_names;
  Eigen::Matrix<double, Eigen::Dynamic, 3> source_positions;  // K x 3, mm
  std::vector<int> atlas_label;                               // K entries
  std::map<int, std::string> atlas_names;

  Index n_channels() const { return gain.rows(); }
  Index n_sources() const { return gain.cols(); }
  void validate() const;
};

/// Normalization statistics. z-score fills mean/stddev (per channel),
/// min-max fills kmin/kmax (per axis); the other pair stays empty.
struct NormStats {
  Vector mean;
  Vector stddev;
  Vector kmin;
  Vector kmax;
};

}  // namespace esigal
