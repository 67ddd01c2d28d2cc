#pragma once

#include "esigal/nn/tensor.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace esigal::nn {

enum class Mode { train, eval };

enum class LayerKind {
  conv2d,
  depthwise_conv2d,
  separable_conv2d,
  batchnorm,
  activation,
  avgpool,
  maxpool,
  dropout,
  flatten,
  dense,
};

enum class Activation { linear, elu, square, log };
enum class Padding { valid, same };

std::string to_string(LayerKind k);
std::string to_string(Activation a);
std::string to_string(Padding p);
LayerKind layer_kind_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);
Padding padding_from_string(const std::string& s);

/// Lower clamp applied by the log activation.
inline constexpr double kLogFloor = 1e-7;

struct LayerSpec {
  LayerKind kind = LayerKind::flatten;
  Index kernel_h = 1, kernel_w = 1;
  Index stride_h = 1, stride_w = 1;
  Padding padding = Padding::valid;
  Index filters = 0;           // conv2d, separable_conv2d; units for dense
  Index depth_multiplier = 0;  // depthwise_conv2d
  std::optional<double> max_norm;
  double rate = 0.0;  // dropout
  Activation activation = Activation::linear;
  bool use_bias = false;  // conv2d, dense
  double bn_epsilon = 1e-3;
  double bn_momentum = 0.9;

  /// Throws if fields are missing or present for a kind that does not use them.
  void validate() const;
};

/// A persistent tensor: trainable weight or batchnorm running statistic.
template <typename Scalar>
struct Param {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  std::string name;
  Array value;
  Array grad;
  bool trainable = true;
  std::optional<double> max_norm;  // per filter, filter = `filter_size` consecutive values
  Index filter_size = 0;
  Index rows = 1;  // logical 2-D layout for checkpoints
  Index cols = 0;

  void init(std::string n, Index r, Index c, bool train = true) {
    name = std::move(n);
    rows = r;
    cols = c;
    value = Array::Zero(r * c);
    grad = Array::Zero(r * c);
    trainable = train;
  }
};

template <typename Scalar>
class Layer {
 public:
  using Tensor = Tensor4<Scalar>;

  virtual ~Layer() = default;

  const LayerSpec& spec() const { return spec_; }
  const Shape& input_shape() const { return in_; }
  const Shape& output_shape() const { return out_; }

  /// `noise_seed` drives stochastic layers; identical seeds give identical masks.
  virtual void forward(const Tensor& in, Tensor& out, Mode mode, std::uint64_t noise_seed) = 0;

  /// Accumulates parameter gradients; writes `grad_in` when `need_grad_in`.
  /// `in`/`out` are the tensors from the matching forward call.
  virtual void backward(const Tensor& in, const Tensor& out, const Tensor& grad_out, Tensor& grad_in,
                        bool need_grad_in) = 0;

  virtual std::vector<Param<Scalar>*> params() { return {}; }

  /// Draws initial weights (Glorot-uniform kernels, zero biases, unit gains).
  virtual void initialize(std::mt19937_64& rng) {}

 protected:
  Layer(LayerSpec spec, Shape in, Shape out) : spec_(std::move(spec)), in_(in), out_(out) {}

  LayerSpec spec_;
  Shape in_;
  Shape out_;
};

/// Output shape of `spec` applied to `in`; throws std::invalid_argument on
/// shape underflow naming `layer_name`.
Shape infer_output_shape(const LayerSpec& spec, const Shape& in, const std::string& layer_name);

template <typename Scalar>
std::unique_ptr<Layer<Scalar>> make_layer(const LayerSpec& spec, const Shape& in, const std::string& layer_name);

/// Rescales every filter of `p` to norm <= max_norm.
template <typename Scalar>
void apply_max_norm(Param<Scalar>& p);

}  // namespace esigal::nn
