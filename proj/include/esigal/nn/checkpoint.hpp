#pragma once

// A checkpoint directory holds model.json (architecture and parameter list)
// and one float32 container per parameter tensor, in model order.

#include "esigal/nn/model.hpp"

#include <filesystem>
#include <nlohmann/json.hpp>

namespace esigal::nn {

/// `extra` is stored under "extra" in model.json. Values are rounded to float32.
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& dir, Model<Scalar>& model,
                     const nlohmann::json& extra = nlohmann::json::object());

template <typename Scalar>
Model<Scalar> load_checkpoint(const std::filesystem::path& dir, nlohmann::json* extra = nullptr);

}  // namespace esigal::nn
