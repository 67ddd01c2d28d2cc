#pragma once

// Central finite-difference checks of Model<double> parameter gradients.

#include "esigal/nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace esigal::testing {

using nn::Index;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "<layer>/<param>[index]" or "<layer>/<param> (direction)"
  Index entries_checked = 0;
  Index directions_checked = 0;
};

/// Relative error with a floor so that two vanishing gradients agree.
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double mse(const nn::Tensor4<double>& out, const Eigen::MatrixXd& y) {
  double s = 0;
  for (Index i = 0; i < y.rows(); ++i)
    for (Index k = 0; k < 3; ++k) {
      const double d = out.data[i * 3 + k] - y(i, k);
      s += d * d;
    }
  return s / static_cast<double>(y.size());
}

/// Checks every entry of tensors with at most `max_entries` values and a
/// random subset of `max_entries` entries plus one random direction for
/// larger tensors. Step `h`, train mode with a fixed dropout mask.
inline GradCheckReport check_gradients(nn::Model<double>& model, const nn::Tensor4<double>& x,
                                       const Eigen::MatrixXd& y, Index max_entries = 100000, double h = 1e-5,
                                       std::uint64_t seed = 1, nn::Mode mode = nn::Mode::train,
                                       double floor = 1e-6) {
  const std::uint64_t noise = 12345;
  model.loss_and_grad(x, y, mode, noise);
  GradCheckReport rep;
  std::mt19937_64 rng(seed);
  auto loss_from = [&](std::size_t layer) { return mse(model.forward(x, mode, noise, layer), y); };
  auto note = [&](double err, const std::string& what) {
    if (err > rep.max_rel_error || rep.worst.empty()) {
      rep.max_rel_error = std::max(rep.max_rel_error, err);
      rep.worst = what;
    }
  };
  for (std::size_t l = 0; l < model.n_layers(); ++l) {
    const std::string lname = model.spec().layers[l].name;
    for (auto* p : model.layer(l).params()) {
      if (!p->trainable) continue;
      const Eigen::ArrayXd analytic = p->grad;
      const Index n = p->value.size();
      std::vector<Index> idx(static_cast<std::size_t>(n));
      std::iota(idx.begin(), idx.end(), Index{0});
      if (n > max_entries) {
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(static_cast<std::size_t>(max_entries));
      }
      for (Index i : idx) {
        const double v = p->value[i];
        p->value[i] = v + h;
        const double lp = loss_from(l);
        p->value[i] = v - h;
        const double lm = loss_from(l);
        p->value[i] = v;
        const double fd = (lp - lm) / (2 * h);
        note(rel_error(fd, analytic[i], floor), lname + "/" + p->name + "[" + std::to_string(i) + "]");
        ++rep.entries_checked;
      }
      if (n > max_entries) {
        std::normal_distribution<double> g;
        Eigen::ArrayXd dir(n);
        for (Index i = 0; i < n; ++i) dir[i] = g(rng);
        dir /= std::sqrt(dir.square().sum());
        const Eigen::ArrayXd v = p->value;
        p->value = v + h * dir;
        const double lp = loss_from(l);
        p->value = v - h * dir;
        const double lm = loss_from(l);
        p->value = v;
        note(rel_error((lp - lm) / (2 * h), (analytic * dir).sum(), floor), lname + "/" + p->name + " (direction)");
        ++rep.directions_checked;
      }
      loss_from(l);  // refresh cached activations downstream of l
    }
  }
  return rep;
}

/// Random inputs of the model's shape and random targets.
inline std::pair<nn::Tensor4<double>, Eigen::MatrixXd> random_batch(const nn::ModelSpec& spec, Index n,
                                                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  nn::Tensor4<double> x(n, spec.input_shape());
  for (Index i = 0; i < x.data.size(); ++i) x.data[i] = g(rng);
  Eigen::MatrixXd y(n, 3);
  for (Index i = 0; i < y.size(); ++i) y.data()[i] = g(rng);
  return {x, y};
}

}  // namespace esigal::testing
