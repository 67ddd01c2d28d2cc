#include "esigal/nn/model.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

namespace esigal::nn {

std::string to_string(Arch a) {
  switch (a) {
    case Arch::rEEGNet: return "rEEGNet";
    case Arch::rDeepConvNet: return "rDeepConvNet";
    case Arch::rShallowConvNet: return "rShallowConvNet";
  }
  return "unknown";
}

Arch arch_from_string(const std::string& s) {
  for (auto a : {Arch::rEEGNet, Arch::rDeepConvNet, Arch::rShallowConvNet})
    if (to_string(a) == s) return a;
  throw std::invalid_argument("unknown architecture '" + s + "' (expected rEEGNet, rDeepConvNet or rShallowConvNet)");
}

std::vector<Shape> ModelSpec::shapes() const {
  std::vector<Shape> out;
  Shape s = input_shape();
  for (const auto& l : layers) {
    s = infer_output_shape(l.spec, s, l.name);
    out.push_back(s);
  }
  return out;
}

namespace {

LayerSpec conv(Index kh, Index kw, Index filters, Padding pad = Padding::valid) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.kernel_h = kh;
  s.kernel_w = kw;
  s.filters = filters;
  s.padding = pad;
  return s;
}

LayerSpec simple(LayerKind kind) {
  LayerSpec s;
  s.kind = kind;
  return s;
}

LayerSpec act(Activation a) {
  LayerSpec s = simple(LayerKind::activation);
  s.activation = a;
  return s;
}

LayerSpec pool(LayerKind kind, Index kw, Index stride) {
  LayerSpec s = simple(kind);
  s.kernel_w = kw;
  s.stride_w = stride;
  return s;
}

LayerSpec dropout(double rate) {
  LayerSpec s = simple(LayerKind::dropout);
  s.rate = rate;
  return s;
}

LayerSpec dense(Index units) {
  LayerSpec s = simple(LayerKind::dense);
  s.filters = units;
  s.use_bias = true;
  return s;
}

}  // namespace

ModelSpec build_model(Arch arch, Index channels, Index window) {
  if (channels < 1 || window < 1) throw std::invalid_argument("channels and window must be positive");
  ModelSpec m;
  m.arch = to_string(arch);
  m.channels = channels;
  m.window = window;
  std::vector<LayerSpec> seq;
  switch (arch) {
    case Arch::rEEGNet: {
      // (1, 32) must accept W = 25, hence same padding on the temporal conv.
      seq.push_back(conv(1, 32, 32, Padding::same));
      seq.push_back(simple(LayerKind::batchnorm));
      LayerSpec dw = simple(LayerKind::depthwise_conv2d);
      dw.kernel_h = channels;
      dw.depth_multiplier = 3;
      dw.max_norm = 1.0;
      seq.push_back(dw);
      seq.push_back(simple(LayerKind::batchnorm));
      seq.push_back(act(Activation::elu));
      seq.push_back(pool(LayerKind::avgpool, 2, 2));
      seq.push_back(dropout(0.5));
      LayerSpec sep = simple(LayerKind::separable_conv2d);
      sep.kernel_w = 16;
      sep.filters = 96;
      sep.padding = Padding::same;
      seq.push_back(sep);
      seq.push_back(simple(LayerKind::batchnorm));
      seq.push_back(act(Activation::elu));
      seq.push_back(pool(LayerKind::avgpool, 4, 4));
      seq.push_back(dropout(0.5));
      break;
    }
    case Arch::rDeepConvNet: {
      seq.push_back(conv(1, 5, 25));
      seq.push_back(conv(channels, 1, 25));
      seq.push_back(simple(LayerKind::batchnorm));
      seq.push_back(act(Activation::elu));
      seq.push_back(dropout(0.5));
      for (Index filters : {50, 100, 200}) {
        seq.push_back(conv(1, 5, filters));
        seq.push_back(simple(LayerKind::batchnorm));
        seq.push_back(act(Activation::elu));
        if (filters == 200) seq.push_back(pool(LayerKind::maxpool, 2, 2));
        seq.push_back(dropout(0.5));
      }
      break;
    }
    case Arch::rShallowConvNet: {
      seq.push_back(conv(1, 13, 40));
      seq.push_back(conv(channels, 1, 40));
      seq.push_back(simple(LayerKind::batchnorm));
      seq.push_back(act(Activation::square));
      seq.push_back(pool(LayerKind::avgpool, 5, 2));
      seq.push_back(act(Activation::log));
      seq.push_back(dropout(0.5));
      break;
    }
  }
  seq.push_back(simple(LayerKind::flatten));
  seq.push_back(dense(3));
  for (std::size_t i = 0; i < seq.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "%02zu_%s", i, to_string(seq[i].kind).c_str());
    m.layers.push_back({name, seq[i]});
  }
  m.shapes();
  return m;
}

nlohmann::json to_json(const LayerSpec& s) {
  nlohmann::json j;
  j["kind"] = to_string(s.kind);
  j["kernel"] = {s.kernel_h, s.kernel_w};
  j["stride"] = {s.stride_h, s.stride_w};
  j["padding"] = to_string(s.padding);
  j["filters"] = s.filters;
  j["depth_multiplier"] = s.depth_multiplier;
  j["max_norm"] = s.max_norm ? nlohmann::json(*s.max_norm) : nlohmann::json(nullptr);
  j["rate"] = s.rate;
  j["activation"] = to_string(s.activation);
  j["use_bias"] = s.use_bias;
  j["bn_epsilon"] = s.bn_epsilon;
  j["bn_momentum"] = s.bn_momentum;
  return j;
}

LayerSpec layer_spec_from_json(const nlohmann::json& j) {
  LayerSpec s;
  s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  s.kernel_h = j.at("kernel").at(0).get<Index>();
  s.kernel_w = j.at("kernel").at(1).get<Index>();
  s.stride_h = j.at("stride").at(0).get<Index>();
  s.stride_w = j.at("stride").at(1).get<Index>();
  s.padding = padding_from_string(j.at("padding").get<std::string>());
  s.filters = j.at("filters").get<Index>();
  s.depth_multiplier = j.at("depth_multiplier").get<Index>();
  if (!j.at("max_norm").is_null()) s.max_norm = j.at("max_norm").get<double>();
  s.rate = j.at("rate").get<double>();
  s.activation = activation_from_string(j.at("activation").get<std::string>());
  s.use_bias = j.at("use_bias").get<bool>();
  s.bn_epsilon = j.at("bn_epsilon").get<double>();
  s.bn_momentum = j.at("bn_momentum").get<double>();
  s.validate();
  return s;
}

nlohmann::json to_json(const ModelSpec& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : m.layers) {
    auto j = to_json(l.spec);
    j["name"] = l.name;
    layers.push_back(j);
  }
  return {{"arch", m.arch}, {"channels", m.channels}, {"window", m.window}, {"layers", layers}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec m;
  m.arch = j.at("arch").get<std::string>();
  m.channels = j.at("channels").get<Index>();
  m.window = j.at("window").get<Index>();
  for (const auto& l : j.at("layers")) m.layers.push_back({l.at("name").get<std::string>(), layer_spec_from_json(l)});
  m.shapes();
  return m;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Model<Scalar>::Model(ModelSpec spec) : spec_(std::move(spec)) {
  Shape s = spec_.input_shape();
  for (const auto& l : spec_.layers) {
    layers_.push_back(make_layer<Scalar>(l.spec, s, l.name));
    s = layers_.back()->output_shape();
  }
  if (s.size() != 3)
    throw std::invalid_argument("model output must have 3 values, got " + s.str());
  acts_.resize(layers_.size() + 1);
  grads_.resize(layers_.size() + 1);
}

template <typename Scalar>
void Model<Scalar>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& l : layers_) l->initialize(rng);
}

template <typename Scalar>
std::uint64_t Model<Scalar>::layer_seed(std::uint64_t noise_seed, std::size_t layer) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = noise_seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(layer) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename Scalar>
const typename Model<Scalar>::Tensor& Model<Scalar>::forward(const Tensor& x, Mode mode, std::uint64_t noise_seed,
                                                             std::size_t from) {
  if (from == 0) {
    if (!(x.shape == spec_.input_shape()))
      throw std::invalid_argument("input shape " + x.shape.str() + " does not match model input " +
                                  spec_.input_shape().str());
    acts_[0] = x;
  } else if (from >= layers_.size() || acts_[from].batch == 0) {
    throw std::logic_error("forward from layer " + std::to_string(from) + " without a cached input");
  }
  for (std::size_t i = from; i < layers_.size(); ++i) {
    layers_[i]->forward(acts_[i], acts_[i + 1], mode, layer_seed(noise_seed, i));
    if (!acts_[i + 1].data.allFinite()) throw NonFiniteError(i, spec_.layers[i].name);
  }
  return acts_.back();
}

template <typename Scalar>
void Model<Scalar>::zero_grad() {
  for (auto* p : params()) p->grad.setZero();
}

template <typename Scalar>
Scalar Model<Scalar>::loss_and_grad(const Tensor& x, const Mat& y, Mode mode, std::uint64_t noise_seed,
                                    std::size_t from) {
  const Tensor& out = forward(x, mode, noise_seed, from);
  const Index n = out.batch;
  if (y.rows() != n || y.cols() != 3) throw std::invalid_argument("targets must be N x 3");
  zero_grad();
  auto& g = grads_.back();
  g.resize(n, out.shape);
  Scalar loss = 0;
  const auto scale = Scalar(1) / static_cast<Scalar>(n * 3);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < 3; ++k) {
      const Scalar d = out.data[i * 3 + k] - y(i, k);
      loss += d * d;
      g.data[i * 3 + k] = Scalar(2) * d * scale;
    }
  for (std::size_t i = layers_.size(); i-- > 0;) {
    // The input gradient of layer 0 is never needed.
    layers_[i]->backward(acts_[i], acts_[i + 1], grads_[i + 1], grads_[i], i > 0);
  }
  return loss * scale;
}

template <typename Scalar>
Eigen::MatrixXd Model<Scalar>::predict(
    const Eigen::Ref<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>& inputs,
    Index batch) {
  const Index c = spec_.channels, w = spec_.window;
  if (inputs.cols() != c * w)
    throw std::invalid_argument("input rows have " + std::to_string(inputs.cols()) + " values, model expects " +
                                std::to_string(c * w));
  Eigen::MatrixXd out(inputs.rows(), 3);
  for (Index start = 0; start < inputs.rows(); start += batch) {
    const Index len = std::min(batch, inputs.rows() - start);
    const auto t = to_tensor<Scalar>(inputs.middleRows(start, len), c, w);
    const Tensor& y = forward(t, Mode::eval, 0);
    for (Index i = 0; i < len; ++i)
      for (Index k = 0; k < 3; ++k) out(start + i, k) = static_cast<double>(y.data[i * 3 + k]);
  }
  return out;
}

template <typename Scalar>
std::vector<Param<Scalar>*> Model<Scalar>::params() {
  std::vector<Param<Scalar>*> all;
  for (auto& l : layers_)
    for (auto* p : l->params()) all.push_back(p);
  return all;
}

template <typename Scalar>
std::vector<Param<Scalar>*> Model<Scalar>::trainable_params() {
  std::vector<Param<Scalar>*> out;
  for (auto* p : params())
    if (p->trainable) out.push_back(p);
  return out;
}

template <typename Scalar>
Index Model<Scalar>::trainable_count() {
  Index n = 0;
  for (auto* p : trainable_params()) n += p->value.size();
  return n;
}

template <typename Scalar>
Index Model<Scalar>::total_count() {
  Index n = 0;
  for (auto* p : params()) n += p->value.size();
  return n;
}

template class Model<float>;
template class Model<double>;

}  // namespace esigal::nn
