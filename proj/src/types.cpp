#include "esigal/types.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace esigal {

std::string to_string(Surface s) {
  switch (s) {
    case Surface::sandpaper: return "sandpaper";
    case Surface::suede: return "suede";
    case Surface::silk: return "silk";
  }
  return "unknown";
}

Surface surface_from_string(const std::string& name) {
  if (name == "sandpaper") return Surface::sandpaper;
  if (name == "suede") return Surface::suede;
  if (name == "silk") return Surface::silk;
  throw std::invalid_argument("unknown surface '" + name + "'");
}

void RawSession::validate(double min_pre_onset_s) const {
  if (eeg_fs <= 0 || kin_fs <= 0) throw std::invalid_argument("sampling rates must be positive");
  if (eeg.rows() < 18) throw std::invalid_argument("session needs at least 18 EEG channels");
  if (static_cast<Index>(eeg_channel_names.size()) != eeg.rows())
    throw std::invalid_argument("channel name count does not match EEG rows");
  if (kin.rows() != 3) throw std::invalid_argument("kinematics must have 3 rows (x, y, z)");
  const double eeg_dur = eeg.cols() / eeg_fs;
  const double kin_dur = kin.cols() / kin_fs;
  if (std::abs(eeg_dur - kin_dur) > std::max(1.0 / eeg_fs, 1.0 / kin_fs) + 1e-12)
    throw std::invalid_argument("EEG and kinematics durations differ by more than one sample");
  const auto min_onset = static_cast<Index>(std::ceil(min_pre_onset_s * eeg_fs - 1e-9));
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& t = trials[i];
    if (t.onset_sample >= t.return_sample)
      throw std::invalid_argument("trial " + std::to_string(i) + ": onset must precede return");
    if (t.onset_sample < min_onset)
      throw std::invalid_argument("trial " + std::to_string(i) + ": onset leaves too little history");
    if (t.return_sample >= eeg.cols())
      throw std::invalid_argument("trial " + std::to_string(i) + ": return beyond end of recording");
    if (t.weight_grams != 165 && t.weight_grams != 330 && t.weight_grams != 660)
      throw std::invalid_argument("trial " + std::to_string(i) + ": weight must be 165, 330 or 660 g");
  }
}

Index RawSession::channel_index(const std::string& name) const {
  for (std::size_t i = 0; i < eeg_channel_names.size(); ++i)
    if (eeg_channel_names[i] == name) return static_cast<Index>(i);
  throw std::invalid_argument("unknown channel '" + name + "'");
}

void LeadField::validate() const {
  const Index i = gain.rows(), k = gain.cols();
  if (i < 1) throw std::invalid_argument("lead field needs at least one channel");
  if (k < i) throw std::invalid_argument("lead field must have at least as many sources as channels");
  if (!gain.allFinite()) throw std::invalid_argument("lead field contains non-finite gains");
  if (static_cast<Index>(channel_names.size()) != i)
    throw std::invalid_argument("lead field channel name count does not match gain rows");
  if (source_positions.rows() != 0 && source_positions.rows() != k)
    throw std::invalid_argument("source position count does not match gain columns");
  if (static_cast<Index>(atlas_label.size()) != k)
    throw std::invalid_argument("atlas label count does not match gain columns");
  for (Index j = 0; j < k; ++j)
    if (!atlas_names.count(atlas_label[j]))
      throw std::invalid_argument("atlas label " + std::to_string(atlas_label[j]) + " of source " +
                                  std::to_string(j) + " has no name");
}

}  // namespace esigal
