#include "esigal/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

namespace esigal::nn {

void TrainConfig::validate() const {
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (!(adam.lr > 0) || !(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1) ||
      !(adam.epsilon > 0))
    throw std::invalid_argument("invalid Adam hyperparameters");
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
}

bool EarlyStopping::update(int epoch, double loss) {
  if (loss < best_) {
    best_ = loss;
    best_epoch_ = epoch;
    wait_ = 0;
    return true;
  }
  ++wait_;
  return false;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename Scalar>
std::vector<typename Param<Scalar>::Array> snapshot(Model<Scalar>& m) {
  std::vector<typename Param<Scalar>::Array> s;
  for (auto* p : m.params()) s.push_back(p->value);
  return s;
}

template <typename Scalar>
void restore(Model<Scalar>& m, const std::vector<typename Param<Scalar>::Array>& s) {
  auto ps = m.params();
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = s[i];
}

void check_dataset(const WindowedDataset& d, const ModelSpec& spec, const char* which) {
  if (d.size() == 0) throw std::invalid_argument(std::string(which) + " set is empty");
  if (d.channels != spec.channels || d.window != spec.window)
    throw std::invalid_argument(std::string(which) + " set is " + std::to_string(d.channels) + "x" +
                                std::to_string(d.window) + ", model expects " + std::to_string(spec.channels) + "x" +
                                std::to_string(spec.window));
  if (d.targets.rows() != d.size() || d.targets.cols() != 3)
    throw std::invalid_argument(std::string(which) + " targets must be N x 3");
}

}  // namespace

template <typename Scalar>
double evaluate_mse(Model<Scalar>& model, const WindowedDataset& data, Index batch) {
  const Eigen::MatrixXd pred = model.predict(data.inputs, batch);
  return (pred - data.targets).squaredNorm() / static_cast<double>(pred.size());
}

template <typename Scalar>
TrainHistory train_model(Model<Scalar>& model, const WindowedDataset& train, const WindowedDataset& val,
                         const TrainConfig& cfg) {
  cfg.validate();
  check_dataset(train, model.spec(), "training");
  check_dataset(val, model.spec(), "validation");

  model.initialize(mix(cfg.seed, 1));
  std::mt19937_64 order_rng(mix(cfg.seed, 2));
  const std::uint64_t noise_base = mix(cfg.seed, 3);
  const Index n = train.size(), c = train.channels, w = train.window;
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});

  auto trainable = model.trainable_params();
  AdamState<Scalar> state;
  EarlyStopping stopper(cfg.patience);
  TrainHistory h;
  auto best = snapshot(model);
  Tensor4<Scalar> xb;
  typename Model<Scalar>::Mat yb;
  std::uint64_t step = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double sum = 0;
    for (Index start = 0; start < n; start += cfg.batch) {
      const Index len = std::min(cfg.batch, n - start);
      xb.resize(len, {1, c, w});
      yb.resize(len, 3);
      for (Index i = 0; i < len; ++i) {
        const Index r = order[static_cast<std::size_t>(start + i)];
        for (Index k = 0; k < c * w; ++k) xb.sample(i)[k] = static_cast<Scalar>(train.inputs(r, k));
        for (Index k = 0; k < 3; ++k) yb(i, k) = static_cast<Scalar>(train.targets(r, k));
      }
      double loss = 0;
      try {
        loss = static_cast<double>(model.loss_and_grad(xb, yb, Mode::train, mix(noise_base, step++)));
      } catch (const NonFiniteError& e) {
        h.stop_reason = "diverged";
        throw DivergenceError(std::string("training diverged in epoch ") + std::to_string(epoch) + ": " + e.what(),
                              h);
      }
      if (!std::isfinite(loss)) {
        h.stop_reason = "diverged";
        throw DivergenceError("training loss became non-finite in epoch " + std::to_string(epoch), h);
      }
      sum += loss * static_cast<double>(len);
      adam_step(trainable, state, cfg.adam);
    }
    const double train_loss = sum / static_cast<double>(n);
    double val_loss = evaluate_mse(model, val);
    if (cfg.val_loss_override) val_loss = cfg.val_loss_override(epoch, val_loss);
    h.train_loss.push_back(train_loss);
    h.val_loss.push_back(val_loss);
    h.epochs_run = epoch;
    if (!std::isfinite(val_loss)) {
      h.stop_reason = "diverged";
      throw DivergenceError("validation loss became non-finite in epoch " + std::to_string(epoch), h);
    }
    if (stopper.update(epoch, val_loss)) best = snapshot(model);
    if (cfg.verbose)
      std::cerr << "epoch " << epoch << " train " << train_loss << " val " << val_loss
                << (stopper.best_epoch() == epoch ? " *" : "") << '\n';
    if (cfg.on_epoch) cfg.on_epoch(epoch, train_loss, val_loss);
    if (stopper.should_stop()) {
      h.stop_reason = "early_stopping";
      break;
    }
    if (cfg.stop_requested && cfg.stop_requested(epoch)) {
      h.stop_reason = "stopped_by_callback";
      break;
    }
  }
  if (h.stop_reason.empty()) h.stop_reason = "max_epochs";
  h.best_epoch = stopper.best_epoch();
  restore(model, best);
  return h;
}

template double evaluate_mse<float>(Model<float>&, const WindowedDataset&, Index);
template double evaluate_mse<double>(Model<double>&, const WindowedDataset&, Index);
template TrainHistory train_model<float>(Model<float>&, const WindowedDataset&, const WindowedDataset&,
                                         const TrainConfig&);
template TrainHistory train_model<double>(Model<double>&, const WindowedDataset&, const WindowedDataset&,
                                          const TrainConfig&);

}  // namespace esigal::nn
