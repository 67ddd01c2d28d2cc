#pragma once

#include "esigal/nn/adam.hpp"
#include "esigal/nn/model.hpp"
#include "esigal/windowing.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace esigal::nn {

struct TrainConfig {
  Index batch = 64;
  int max_epochs = 400;
  int patience = 5;
  AdamConfig adam;
  std::uint64_t seed = 0;
  bool verbose = false;

  /// Test hook: replaces the measured validation loss of each epoch (1-based).
  std::function<double(int epoch, double measured)> val_loss_override;
  /// Called after each epoch with the epoch number and the latest losses.
  std::function<void(int epoch, double train_loss, double val_loss)> on_epoch;
  /// Checked after on_epoch; returning true ends training ("stopped_by_callback").
  std::function<bool(int epoch)> stop_requested;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;
  int best_epoch = 0;  // 1-based; 0 if no epoch completed
  int epochs_run = 0;
  std::string stop_reason;
};

/// Patience counter with strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);
  /// Records the loss of `epoch`; returns true if it is a new best.
  bool update(int epoch, double loss);
  bool should_stop() const { return wait_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = 0;
  int wait_ = 0;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, TrainHistory h) : std::runtime_error(what), history(std::move(h)) {}
  TrainHistory history;
};

/// Mean squared error over all N x 3 entries in eval mode.
template <typename Scalar>
double evaluate_mse(Model<Scalar>& model, const WindowedDataset& data, Index batch = 256);

/// Mini-batch Adam on mse with early stopping on the validation loss. The
/// model is initialized from cfg.seed and ends holding the best weights.
template <typename Scalar>
TrainHistory train_model(Model<Scalar>& model, const WindowedDataset& train, const WindowedDataset& val,
                         const TrainConfig& cfg);

}  // namespace esigal::nn
