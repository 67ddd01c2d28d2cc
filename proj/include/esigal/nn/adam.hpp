#pragma once

#include "esigal/nn/layers.hpp"

#include <vector>

namespace esigal::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
struct AdamState {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  std::vector<Array> m, v;
  long step = 0;
};

/// One bias-corrected Adam update of every trainable parameter, then
/// max-norm projection where the parameter carries a constraint.
template <typename Scalar>
void adam_step(const std::vector<Param<Scalar>*>& params, AdamState<Scalar>& state, const AdamConfig& hp);

}  // namespace esigal::nn
