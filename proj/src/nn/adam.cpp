#include "esigal/nn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace esigal::nn {

template <typename Scalar>
void adam_step(const std::vector<Param<Scalar>*>& params, AdamState<Scalar>& state, const AdamConfig& hp) {
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.push_back(AdamState<Scalar>::Array::Zero(p->value.size()));
      state.v.push_back(AdamState<Scalar>::Array::Zero(p->value.size()));
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("optimizer state does not match parameter list");
  ++state.step;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(hp.beta1), b2 = static_cast<Scalar>(hp.beta2);
  const auto lr = static_cast<Scalar>(hp.lr), eps = static_cast<Scalar>(hp.epsilon);
  const auto ic1 = static_cast<Scalar>(1.0 / c1), ic2 = static_cast<Scalar>(1.0 / c2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    if (!p.trainable) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.value.size() || p.grad.size() != p.value.size())
      throw std::invalid_argument("shape mismatch for parameter " + p.name);
    m = b1 * m + (Scalar(1) - b1) * p.grad;
    v = b2 * v + (Scalar(1) - b2) * p.grad.square();
    p.value -= lr * (m * ic1) / ((v * ic2).sqrt() + eps);
    apply_max_norm(p);
  }
}

template void adam_step<float>(const std::vector<Param<float>*>&, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(const std::vector<Param<double>*>&, AdamState<double>&, const AdamConfig&);

}  // namespace esigal::nn
