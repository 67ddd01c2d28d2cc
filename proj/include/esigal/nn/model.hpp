#pragma once

#include "esigal/nn/layers.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace esigal::nn {

enum class Arch { rEEGNet, rDeepConvNet, rShallowConvNet };

std::string to_string(Arch a);
Arch arch_from_string(const std::string& s);

struct NamedLayer {
  std::string name;
  LayerSpec spec;
};

struct ModelSpec {
  std::string arch;  // free-form label; the three decoders use to_string(Arch)
  Index channels = 0;
  Index window = 0;
  std::vector<NamedLayer> layers;

  Shape input_shape() const { return {1, channels, window}; }
  /// Output shape after each layer; throws on underflow naming the layer.
  std::vector<Shape> shapes() const;
};

/// Architecture with spatial kernels sized to C. Temporal convolutions of
/// rEEGNet use same padding; everything else is valid.
ModelSpec build_model(Arch arch, Index channels, Index window);

nlohmann::json to_json(const LayerSpec& s);
LayerSpec layer_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelSpec& m);
ModelSpec model_spec_from_json(const nlohmann::json& j);

/// Thrown when a layer produces NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::size_t layer, const std::string& name)
      : std::runtime_error("non-finite activation at layer " + std::to_string(layer) + " (" + name + ")"),
        layer_index(layer) {}
  std::size_t layer_index;
};

template <typename Scalar>
class Model {
 public:
  using Tensor = Tensor4<Scalar>;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  std::size_t n_layers() const { return layers_.size(); }
  Layer<Scalar>& layer(std::size_t i) { return *layers_[i]; }

  /// Glorot kernels and unit batchnorm from a seeded generator.
  void initialize(std::uint64_t seed);

  /// Runs layers [from, end) and returns the N x 3 output; activations are
  /// cached, so `from > 0` reuses the input of layer `from` from an earlier call.
  const Tensor& forward(const Tensor& x, Mode mode, std::uint64_t noise_seed, std::size_t from = 0);

  /// Zeroes gradients, runs forward and backward, returns the mse over all
  /// N x 3 entries. `y` is N x 3.
  Scalar loss_and_grad(const Tensor& x, const Mat& y, Mode mode, std::uint64_t noise_seed, std::size_t from = 0);

  /// Eval-mode predictions for rows of a N x (C*W) row-major input.
  Eigen::MatrixXd predict(const Eigen::Ref<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                               Eigen::RowMajor>>& inputs,
                          Index batch = 256);

  std::vector<Param<Scalar>*> params();
  std::vector<Param<Scalar>*> trainable_params();
  Index trainable_count();
  Index total_count();

  void zero_grad();

  /// Per-layer noise seed derived from the step seed.
  static std::uint64_t layer_seed(std::uint64_t noise_seed, std::size_t layer);

 private:
  ModelSpec spec_;
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
  std::vector<Tensor> acts_;  // acts_[i] is the input of layer i; back() is the output
  std::vector<Tensor> grads_;
};

/// Packs rows of a N x (C*W) row-major matrix into a batch tensor.
template <typename Scalar, typename Derived>
Tensor4<Scalar> to_tensor(const Eigen::MatrixBase<Derived>& rows, Index channels, Index window) {
  Tensor4<Scalar> t;
  t.resize(rows.rows(), {1, channels, window});
  for (Index n = 0; n < rows.rows(); ++n)
    for (Index k = 0; k < channels * window; ++k) t.sample(n)[k] = static_cast<Scalar>(rows(n, k));
  return t;
}

extern template class Model<float>;
extern template class Model<double>;

}  // namespace esigal::nn
