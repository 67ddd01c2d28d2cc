#pragma once

// Session directories and lead-field stems on top of the matrix container.
//
//   <dir>/eeg.{f32,meta.json}     role=eeg, channel_names, fs_hz
//   <dir>/kin.{f32,meta.json}     role=kin, fs_hz, units=mm
//   <dir>/session.json            subject_id, trials[], optional ica{}
//
// A lead field is one stem with role=leadfield; the sidecar carries
// channel_names, source_positions (K x 3), atlas_label (K) and atlas_names.

#include "esigal/types.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace esigal {

/// Optional component-rejection inputs for one session.
struct ComponentRejection {
  Matrix unmixing;
  Matrix mixing;
  std::vector<Index> reject;
};

void save_session(const std::filesystem::path& dir, const RawSession& session,
                  const std::optional<ComponentRejection>& ica = std::nullopt);
RawSession load_session(const std::filesystem::path& dir);
std::optional<ComponentRejection> load_component_rejection(const std::filesystem::path& dir);

void save_leadfield(const std::filesystem::path& stem, const LeadField& lf);
LeadField load_leadfield(const std::filesystem::path& stem);

}  // namespace esigal
