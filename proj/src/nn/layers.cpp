#include "esigal/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace esigal::nn {

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::depthwise_conv2d: return "depthwise_conv2d";
    case LayerKind::separable_conv2d: return "separable_conv2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::activation: return "activation";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
  }
  return "unknown";
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::elu: return "elu";
    case Activation::square: return "square";
    case Activation::log: return "log";
  }
  return "unknown";
}

std::string to_string(Padding p) { return p == Padding::same ? "same" : "valid"; }

LayerKind layer_kind_from_string(const std::string& s) {
  for (auto k : {LayerKind::conv2d, LayerKind::depthwise_conv2d, LayerKind::separable_conv2d, LayerKind::batchnorm,
                 LayerKind::activation, LayerKind::avgpool, LayerKind::maxpool, LayerKind::dropout,
                 LayerKind::flatten, LayerKind::dense})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

Activation activation_from_string(const std::string& s) {
  for (auto a : {Activation::linear, Activation::elu, Activation::square, Activation::log})
    if (to_string(a) == s) return a;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

Padding padding_from_string(const std::string& s) {
  if (s == "same") return Padding::same;
  if (s == "valid") return Padding::valid;
  throw std::invalid_argument("unknown padding '" + s + "'");
}

void LayerSpec::validate() const {
  const std::string k = to_string(kind);
  auto fail = [&](const std::string& what) { throw std::invalid_argument(k + ": " + what); };
  const bool conv_like = kind == LayerKind::conv2d || kind == LayerKind::depthwise_conv2d ||
                         kind == LayerKind::separable_conv2d;
  const bool pool = kind == LayerKind::avgpool || kind == LayerKind::maxpool;
  if (conv_like || pool) {
    if (kernel_h < 1 || kernel_w < 1) fail("kernel must be positive");
  } else if (kernel_h != 1 || kernel_w != 1) {
    fail("kernel given for a layer without one");
  }
  if (pool) {
    if (stride_h < 1 || stride_w < 1) fail("stride must be positive");
  } else if (stride_h != 1 || stride_w != 1) {
    fail("only pooling layers take a non-unit stride");
  }
  if (pool && padding != Padding::valid) fail("pooling is valid-only");
  if (!conv_like && !pool && padding != Padding::valid) fail("padding given for a layer without a kernel");
  const bool needs_filters = kind == LayerKind::conv2d || kind == LayerKind::separable_conv2d || kind == LayerKind::dense;
  if (needs_filters != (filters > 0)) fail(needs_filters ? "filters/units required" : "filters given for a layer without them");
  if ((kind == LayerKind::depthwise_conv2d) != (depth_multiplier > 0))
    fail(kind == LayerKind::depthwise_conv2d ? "depth multiplier required" : "depth multiplier given");
  if (max_norm && !conv_like && kind != LayerKind::dense) fail("max-norm applies only to weighted layers");
  if (max_norm && !(*max_norm > 0)) fail("max-norm must be positive");
  if (kind == LayerKind::dropout) {
    if (!(rate >= 0 && rate < 1)) fail("rate must lie in [0, 1)");
  } else if (rate != 0.0) {
    fail("rate given for a non-dropout layer");
  }
  if (kind != LayerKind::activation && activation != Activation::linear) fail("activation given for a non-activation layer");
  if (use_bias && kind != LayerKind::conv2d && kind != LayerKind::dense) fail("bias only for conv2d and dense");
}

Shape infer_output_shape(const LayerSpec& spec, const Shape& in, const std::string& layer_name) {
  spec.validate();
  auto underflow = [&](const std::string& what) -> Shape {
    throw std::invalid_argument("layer " + layer_name + " (" + to_string(spec.kind) + "): " + what + " for input " +
                                in.str());
  };
  auto conv_spatial = [&](Index maps) -> Shape {
    if (spec.padding == Padding::same) return {maps, in.height, in.width};
    if (in.height < spec.kernel_h || in.width < spec.kernel_w) return underflow("valid kernel larger than input");
    return {maps, in.height - spec.kernel_h + 1, in.width - spec.kernel_w + 1};
  };
  switch (spec.kind) {
    case LayerKind::conv2d: return conv_spatial(spec.filters);
    case LayerKind::depthwise_conv2d: return conv_spatial(in.maps * spec.depth_multiplier);
    case LayerKind::separable_conv2d: return conv_spatial(spec.filters);
    case LayerKind::batchnorm:
    case LayerKind::activation:
    case LayerKind::dropout: return in;
    case LayerKind::avgpool:
    case LayerKind::maxpool:
      if (in.height < spec.kernel_h || in.width < spec.kernel_w) return underflow("pool window larger than input");
      return {in.maps, (in.height - spec.kernel_h) / spec.stride_h + 1, (in.width - spec.kernel_w) / spec.stride_w + 1};
    case LayerKind::flatten: return {in.size(), 1, 1};
    case LayerKind::dense: return {spec.filters, 1, 1};
  }
  return underflow("unsupported layer");
}

template <typename Scalar>
void apply_max_norm(Param<Scalar>& p) {
  if (!p.max_norm || p.filter_size <= 0) return;
  const auto limit = static_cast<Scalar>(*p.max_norm);
  for (Index f = 0; f + p.filter_size <= p.value.size(); f += p.filter_size) {
    auto seg = p.value.segment(f, p.filter_size);
    const Scalar norm = std::sqrt(seg.square().sum());
    if (norm > limit) seg *= limit / norm;
  }
}

namespace {

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowMap = Eigen::Map<RowMat<Scalar>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMat<Scalar>>;
template <typename Scalar>
using ColMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>;
template <typename Scalar>
using ConstColMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>;

template <typename Scalar>
void glorot(Param<Scalar>& p, double fan_in, double fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (Index i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<Scalar>(u(rng));
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct ConvGeometry {
  Index kh, kw, pad_top, pad_left, out_h, out_w;
};

ConvGeometry geometry(const LayerSpec& s, const Shape& in, const Shape& out) {
  ConvGeometry g{s.kernel_h, s.kernel_w, 0, 0, out.height, out.width};
  if (s.padding == Padding::same) {
    // Extra padding goes after, as in TensorFlow.
    g.pad_top = (s.kernel_h - 1) / 2;
    g.pad_left = (s.kernel_w - 1) / 2;
  }
  (void)in;
  return g;
}

// Writes the (kh*kw) x (out_h*out_w) patch matrix of one plane into `col`
// (row-major, rows starting at `col`).
template <typename Scalar>
void im2col(const Scalar* plane, Index h, Index w, const ConvGeometry& g, Scalar* col) {
  const Index ncols = g.out_h * g.out_w;
  for (Index dy = 0; dy < g.kh; ++dy)
    for (Index dx = 0; dx < g.kw; ++dx) {
      Scalar* row = col + (dy * g.kw + dx) * ncols;
      const Index x_lo = std::max<Index>(0, g.pad_left - dx);
      const Index x_hi = std::min<Index>(g.out_w, w + g.pad_left - dx);
      for (Index oy = 0; oy < g.out_h; ++oy) {
        Scalar* dst = row + oy * g.out_w;
        const Index iy = oy + dy - g.pad_top;
        if (iy < 0 || iy >= h || x_lo >= x_hi) {
          std::fill(dst, dst + g.out_w, Scalar(0));
          continue;
        }
        std::fill(dst, dst + x_lo, Scalar(0));
        std::memcpy(dst + x_lo, plane + iy * w + (x_lo + dx - g.pad_left), sizeof(Scalar) * (x_hi - x_lo));
        std::fill(dst + x_hi, dst + g.out_w, Scalar(0));
      }
    }
}

template <typename Scalar>
void col2im_add(const Scalar* col, Index h, Index w, const ConvGeometry& g, Scalar* plane) {
  const Index ncols = g.out_h * g.out_w;
  for (Index dy = 0; dy < g.kh; ++dy)
    for (Index dx = 0; dx < g.kw; ++dx) {
      const Scalar* row = col + (dy * g.kw + dx) * ncols;
      const Index x_lo = std::max<Index>(0, g.pad_left - dx);
      const Index x_hi = std::min<Index>(g.out_w, w + g.pad_left - dx);
      for (Index oy = 0; oy < g.out_h; ++oy) {
        const Index iy = oy + dy - g.pad_top;
        if (iy < 0 || iy >= h) continue;
        const Scalar* src = row + oy * g.out_w;
        Scalar* dst = plane + iy * w + dx - g.pad_left;
        for (Index ox = x_lo; ox < x_hi; ++ox) dst[ox] += src[ox];
      }
    }
}

// ---------------------------------------------------------------------------

template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
  using Base = Layer<Scalar>;
  using typename Base::Tensor;

 public:
  Conv2d(const LayerSpec& s, Shape in, Shape out) : Base(s, in, out), geo_(geometry(s, in, out)) {
    kernel_.init("kernel", s.filters, in.maps * s.kernel_h * s.kernel_w);
    kernel_.max_norm = s.max_norm;
    kernel_.filter_size = kernel_.cols;
    if (s.use_bias) bias_.init("bias", 1, s.filters);
  }

  void initialize(std::mt19937_64& rng) override {
    const double area = static_cast<double>(geo_.kh * geo_.kw);
    glorot(kernel_, this->in_.maps * area, this->spec_.filters * area, rng);
    apply_max_norm(kernel_);
    if (this->spec_.use_bias) bias_.value.setZero();
  }

  std::vector<Param<Scalar>*> params() override {
    if (this->spec_.use_bias) return {&kernel_, &bias_};
    return {&kernel_};
  }

  void forward(const Tensor& in, Tensor& out, Mode, std::uint64_t) override {
    const Index n = in.batch;
    const Index patch = geo_.kh * geo_.kw;
    const Index rows = this->in_.maps * patch, ncols = geo_.out_h * geo_.out_w;
    cols_.resize(static_cast<std::size_t>(n));
    out.resize(n, this->out_);
    ConstRowMap<Scalar> w(kernel_.value.data(), kernel_.rows, kernel_.cols);
    for (Index b = 0; b < n; ++b) {
      auto& col = cols_[static_cast<std::size_t>(b)];
      col.resize(rows, ncols);
      for (Index c = 0; c < this->in_.maps; ++c)
        im2col(in.plane(b, c), this->in_.height, this->in_.width, geo_, col.data() + c * patch * ncols);
      auto o = out.sample_matrix(b);
      o.noalias() = w * col;
      if (this->spec_.use_bias) o.colwise() += bias_.value.matrix();
    }
  }

  void backward(const Tensor&, const Tensor&, const Tensor& gout, Tensor& gin, bool need_grad_in) override {
    const Index n = gout.batch;
    const Index patch = geo_.kh * geo_.kw;
    const Index ncols = geo_.out_h * geo_.out_w;
    ConstRowMap<Scalar> w(kernel_.value.data(), kernel_.rows, kernel_.cols);
    RowMap<Scalar> gw(kernel_.grad.data(), kernel_.rows, kernel_.cols);
    if (need_grad_in) {
      gin.resize(n, this->in_);
      gin.set_zero();
    }
    RowMat<Scalar> dcol;
    for (Index b = 0; b < n; ++b) {
      const auto g = gout.sample_matrix(b);
      const auto& col = cols_[static_cast<std::size_t>(b)];
      gw.noalias() += g * col.transpose();
      if (this->spec_.use_bias) bias_.grad += g.rowwise().sum().transpose().array();
      if (need_grad_in) {
        dcol.noalias() = w.transpose() * g;
        for (Index c = 0; c < this->in_.maps; ++c)
          col2im_add(dcol.data() + c * patch * ncols, this->in_.height, this->in_.width, geo_, gin.plane(b, c));
      }
    }
  }

 private:
  ConvGeometry geo_;
  Param<Scalar> kernel_;  // filters x (in_maps * kh * kw)
  Param<Scalar> bias_;
  std::vector<RowMat<Scalar>> cols_;
};

// Per-map spatial filtering with `multiplier` outputs per input map; output
// map m * multiplier + d reads input map m. Direct loops: the per-map
// products are too small for GEMM to pay off.
template <typename Scalar>
struct DepthwiseCore {
  ConvGeometry geo;
  Shape in, out;
  Index multiplier = 1;

  void forward(const Param<Scalar>& kernel, const Tensor4<Scalar>& x, Tensor4<Scalar>& y) const {
    y.resize(x.batch, out);
    y.set_zero();
    const Index taps = geo.kh * geo.kw;
    for (Index b = 0; b < x.batch; ++b)
      for (Index m = 0; m < in.maps; ++m) {
        const Scalar* p = x.plane(b, m);
        for (Index d = 0; d < multiplier; ++d) {
          const Index o = m * multiplier + d;
          Scalar* dst = y.plane(b, o);
          const Scalar* k = kernel.value.data() + o * taps;
          for_each_tap([&](Index tap, Index oy, Index iy, Index x_lo, Index x_hi, Index shift) {
            const Scalar w = k[tap];
            Scalar* row = dst + oy * geo.out_w;
            const Scalar* src = p + iy * in.width + shift;
            for (Index ox = x_lo; ox < x_hi; ++ox) row[ox] += w * src[ox];
          });
        }
      }
  }

  void backward(Param<Scalar>& kernel, const Tensor4<Scalar>& x, const Tensor4<Scalar>& gy, Tensor4<Scalar>& gx,
                bool need_grad_in) const {
    if (need_grad_in) {
      gx.resize(gy.batch, in);
      gx.set_zero();
    }
    const Index taps = geo.kh * geo.kw;
    for (Index b = 0; b < gy.batch; ++b)
      for (Index m = 0; m < in.maps; ++m) {
        const Scalar* p = x.plane(b, m);
        Scalar* gp = need_grad_in ? gx.plane(b, m) : nullptr;
        for (Index d = 0; d < multiplier; ++d) {
          const Index o = m * multiplier + d;
          const Scalar* g = gy.plane(b, o);
          const Scalar* k = kernel.value.data() + o * taps;
          Scalar* gk = kernel.grad.data() + o * taps;
          for_each_tap([&](Index tap, Index oy, Index iy, Index x_lo, Index x_hi, Index shift) {
            const Scalar* grow = g + oy * geo.out_w;
            const Scalar* src = p + iy * in.width + shift;
            Scalar acc = 0;
            for (Index ox = x_lo; ox < x_hi; ++ox) acc += grow[ox] * src[ox];
            gk[tap] += acc;
            if (gp) {
              const Scalar w = k[tap];
              Scalar* gsrc = gp + iy * in.width + shift;
              for (Index ox = x_lo; ox < x_hi; ++ox) gsrc[ox] += w * grow[ox];
            }
          });
        }
      }
  }

 private:
  // Calls f(tap, out_row, in_row, x_lo, x_hi, shift) for every in-bounds
  // kernel tap and output row; output column ox reads input column ox + shift.
  template <typename F>
  void for_each_tap(F&& f) const {
    for (Index dy = 0; dy < geo.kh; ++dy)
      for (Index dx = 0; dx < geo.kw; ++dx) {
        const Index x_lo = std::max<Index>(0, geo.pad_left - dx);
        const Index x_hi = std::min<Index>(geo.out_w, in.width + geo.pad_left - dx);
        if (x_lo >= x_hi) continue;
        for (Index oy = 0; oy < geo.out_h; ++oy) {
          const Index iy = oy + dy - geo.pad_top;
          if (iy < 0 || iy >= in.height) continue;
          f(dy * geo.kw + dx, oy, iy, x_lo, x_hi, dx - geo.pad_left);
        }
      }
  }
};

template <typename Scalar>
class DepthwiseConv2d final : public Layer<Scalar> {
  using Base = Layer<Scalar>;
  using typename Base::Tensor;

 public:
  DepthwiseConv2d(const LayerSpec& s, Shape in, Shape out) : Base(s, in, out) {
    core_.geo = geometry(s, in, out);
    core_.in = in;
    core_.out = out;
    core_.multiplier = s.depth_multiplier;
    kernel_.init("depthwise_kernel", out.maps, s.kernel_h * s.kernel_w);
    kernel_.max_norm = s.max_norm;
    kernel_.filter_size = kernel_.cols;
  }

  void initialize(std::mt19937_64& rng) override {
    const double area = static_cast<double>(this->spec_.kernel_h * this->spec_.kernel_w);
    glorot(kernel_, area * this->in_.maps, area * this->spec_.depth_multiplier, rng);
    apply_max_norm(kernel_);
  }

  std::vector<Param<Scalar>*> params() override { return {&kernel_}; }

  void forward(const Tensor& in, Tensor& out, Mode, std::uint64_t) override { core_.forward(kernel_, in, out); }

  void backward(const Tensor& in, const Tensor&, const Tensor& gout, Tensor& gin, bool need_grad_in) override {
    core_.backward(kernel_, in, gout, gin, need_grad_in);
  }

 private:
  DepthwiseCore<Scalar> core_;
  Param<Scalar> kernel_;  // (maps * multiplier) x (kh * kw)
};

template <typename Scalar>
class SeparableConv2d final : public Layer<Scalar> {
  using Base = Layer<Scalar>;
  using typename Base::Tensor;

 public:
  SeparableConv2d(const LayerSpec& s, Shape in, Shape out) : Base(s, in, out) {
    core_.geo = geometry(s, in, out);
    core_.in = in;
    core_.out = {in.maps, out.height, out.width};
    core_.multiplier = 1;
    depthwise_.init("depthwise_kernel", in.maps, s.kernel_h * s.kernel_w);
    pointwise_.init("pointwise_kernel", s.filters, in.maps);
    depthwise_.max_norm = s.max_norm;
    depthwise_.filter_size = depthwise_.cols;
  }

  void initialize(std::mt19937_64& rng) override {
    const double area = static_cast<double>(this->spec_.kernel_h * this->spec_.kernel_w);
    glorot(depthwise_, area * this->in_.maps, area, rng);
    glorot(pointwise_, static_cast<double>(this->in_.maps), static_cast<double>(this->spec_.filters), rng);
    apply_max_norm(depthwise_);
  }

  std::vector<Param<Scalar>*> params() override { return {&depthwise_, &pointwise_}; }

  void forward(const Tensor& in, Tensor& out, Mode, std::uint64_t) override {
    core_.forward(depthwise_, in, mid_);
    out.resize(in.batch, this->out_);
    ConstRowMap<Scalar> p(pointwise_.value.data(), pointwise_.rows, pointwise_.cols);
    for (Index b = 0; b < in.batch; ++b) out.sample_matrix(b).noalias() = p * mid_.sample_matrix(b);
  }

  void backward(const Tensor& in, const Tensor&, const Tensor& gout, Tensor& gin, bool need_grad_in) override {
    ConstRowMap<Scalar> p(pointwise_.value.data(), pointwise_.rows, pointwise_.cols);
    RowMap<Scalar> gp(pointwise_.grad.data(), pointwise_.rows, pointwise_.cols);
    gmid_.resize(gout.batch, mid_.shape);
    for (Index b = 0; b < gout.batch; ++b) {
      const auto g = gout.sample_matrix(b);
      gp.noalias() += g * mid_.sample_matrix(b).transpose();
      gmid_.sample_matrix(b).noalias() = p.transpose() * g;
    }
    core_.backward(depthwise_, in, gmid_, gin, need_grad_in);
  }

 private:
  DepthwiseCore<Scalar> core_;
  Param<Scalar> depthwise_;  // maps x (kh * kw)
  Param<Scalar> pointwise_;  // filters x maps
  Tensor mid_, gmid_;
};

template <typename Scalar>
class BatchNorm final : public Layer<Scalar> {
  using Base = Layer<Scalar>;
  using typename Base::Tensor;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using PlaneMap = Eigen::Map<Array>;
  using ConstPlaneMap = Eigen::Map<const Array>;

 public:
  BatchNorm(const LayerSpec& s, Shape in, Shape out) : Base(s, in, out) {
    gamma_.init("gamma", 1, in.maps);
    beta_.init("beta", 1, in.maps);
    running_mean_.init("running_mean", 1, in.maps, false);
    running_var_.init("running_var", 1, in.maps, false);
    gamma_.value.setOnes();
    running_var_.value.setOnes();
  }

  void initialize(std::mt19937_64&) override {
    gamma_.value.setOnes();
    beta_.value.setZero();
    running_mean_.value.setZero();
    running_var_.value.setOnes();
  }

  std::vector<Param<Scalar>*> params() override { return {&gamma_, &beta_, &running_mean_, &running_var_}; }

  void forward(const Tensor& in, Tensor& out, Mode mode, std::uint64_t) override {
    const Index n = in.batch, maps = this->in_.maps, area = this->in_.height * this->in_.width;
    const auto eps = static_cast<Scalar>(this->spec_.bn_epsilon);
    out.resize(n, this->out_);
    last_mode_ = mode;
    mean_.resize(maps);
    inv_std_.resize(maps);
    const bool train = mode == Mode::train;
    const auto mom = static_cast<Scalar>(this->spec_.bn_momentum);
    for (Index c = 0; c < maps; ++c) {
      Scalar mean, var;
      if (train) {
        // Sums shifted by one sample of the map keep the one-pass variance accurate.
        const Scalar shift = in.plane(0, c)[0];
        Scalar s1 = 0, s2 = 0;
        for (Index b = 0; b < n; ++b) {
          const auto d = ConstPlaneMap(in.plane(b, c), area) - shift;
          s1 += d.sum();
          s2 += d.square().sum();
        }
        const auto count = static_cast<Scalar>(n * area);
        const Scalar m1 = s1 / count;
        mean = shift + m1;
        var = std::max(Scalar(0), s2 / count - m1 * m1);
        running_mean_.value[c] = mom * running_mean_.value[c] + (Scalar(1) - mom) * mean;
        running_var_.value[c] = mom * running_var_.value[c] + (Scalar(1) - mom) * var;
      } else {
        mean = running_mean_.value[c];
        var = running_var_.value[c];
      }
      const Scalar inv = Scalar(1) / std::sqrt(var + eps);
      mean_[c] = mean;
      inv_std_[c] = inv;
      const Scalar scale = gamma_.value[c] * inv;
      const Scalar offset = beta_.value[c] - mean * scale;
      for (Index b = 0; b < n; ++b) PlaneMap(out.plane(b, c), area) = ConstPlaneMap(in.plane(b, c), area) * scale + offset;
    }
  }

  void backward(const Tensor& in, const Tensor&, const Tensor& gout, Tensor& gin, bool need_grad_in) override {
    const Index n = gout.batch, maps = this->in_.maps, area = this->in_.height * this->in_.width;
    const bool train = last_mode_ == Mode::train;
    const auto count = static_cast<Scalar>(n * area);
    if (need_grad_in) gin.resize(n, this->in_);
    for (Index c = 0; c < maps; ++c) {
      const Scalar mean = mean_[c], inv = inv_std_[c];
      Scalar sum_g = 0, sum_gx = 0;  // sum_gx accumulates g * xhat
      for (Index b = 0; b < n; ++b) {
        ConstPlaneMap g(gout.plane(b, c), area);
        sum_g += g.sum();
        sum_gx += (g * (ConstPlaneMap(in.plane(b, c), area) - mean)).sum();
      }
      sum_gx *= inv;
      gamma_.grad[c] += sum_gx;
      beta_.grad[c] += sum_g;
      if (!need_grad_in) continue;
      const Scalar k = gamma_.value[c] * inv;
      if (train) {
        // dx = gamma * inv_std * (g - mean(g) - xhat * mean(g * xhat))
        const Scalar mg = sum_g / count, mgx = sum_gx / count;
        for (Index b = 0; b < n; ++b) {
          ConstPlaneMap g(gout.plane(b, c), area);
          ConstPlaneMap x(in.plane(b, c), area);
          PlaneMap(gin.plane(b, c), area) = k * (g - mg - (x - mean) * (inv * mgx));
        }
      } else {
        for (Index b = 0; b < n; ++b) PlaneMap(gin.plane(b, c), area) = ConstPlaneMap(gout.plane(b, c), area) * k;
      }
    }
  }

 private:
  Param<Scalar> gamma_, beta_, running_mean_, running_var_;
  Array mean_, inv_std_;  // statistics used by the last forward
  Mode last_mode_ = Mode::eval;
};

template <typename Scalar>
class ActivationLayer final : public Layer<Scalar> {
  using Base = Layer<Scalar>;
  using typename Base::Tensor;

 public:
  ActivationLayer(const LayerSpec& s, Shape in, Shape out) : Base(s, in, out) {}

  void forward(const Tensor& in, Tensor& out, Mode, std::uint64_t) override {
    out.resize(in.batch, this->out_);
    const auto& x = in.data;
    switch (this->spec_.activation) {
      case Activation::linear: out.data = x; break;
      case Activation::elu: out.data = x.max(Scalar(0)) + x.min(Scalar(0)).exp() - Scalar(1); break;
      case Activation::square: out.data = x.square(); break;
      case Activation::log: out.data = x.max(static_cast<Scalar>(kLogFloor)).log(); break;
    }
  }

  void backward(const Tensor& in, const Tensor& out, const Tensor& gout, Tensor& gin, bool need_grad_in) override {
    if (!need_grad_in) return;
    gin.resize(gout.batch, this->in_);
    const auto& x = in.data;
    const auto& g = gout.data;
    switch (this->spec_.activation) {
      case Activation::linear: gin.data = g; break;
      case Activation::elu: gin.data = g * (out.data.min(Scalar(0)) + Scalar(1)); break;
      case Activation::square: gin.data = Scalar(2) * x * g; break;
      case Activation::log:
        gin.data = (x > static_cast<Scalar>(kLogFloor)).select(g / x, Scalar(0));
        break;
    }
  }
};

template <typename Scalar>
class Pool final : public Layer<Scalar> {
  using Base = Layer<Scalar>;
  using typename Base::Tensor;

 public:
  Pool(const LayerSpec& s, Shape in, Shape out) : Base(s, in, out) {}

  void forward(const Tensor& in, Tensor& out, Mode, std::uint64_t) override {
    const auto& s = this->spec_;
    const Shape& is = this->in_;
    const Shape& os = this->out_;
    const bool is_max = s.kind == LayerKind::maxpool;
    out.resize(in.batch, os);
    if (is_max) argmax_.resize(static_cast<std::size_t>(out.data.size()));
    const auto inv_area = Scalar(1) / static_cast<Scalar>(s.kernel_h * s.kernel_w);
    Index o = 0;
    for (Index b = 0; b < in.batch; ++b)
      for (Index c = 0; c < is.maps; ++c) {
        const Scalar* p = in.plane(b, c);
        for (Index oy = 0; oy < os.height; ++oy)
          for (Index ox = 0; ox < os.width; ++ox, ++o) {
            const Index y0 = oy * s.stride_h, x0 = ox * s.stride_w;
            if (is_max) {
              Index best = y0 * is.width + x0;
              for (Index dy = 0; dy < s.kernel_h; ++dy)
                for (Index dx = 0; dx < s.kernel_w; ++dx) {
                  const Index idx = (y0 + dy) * is.width + x0 + dx;
                  if (p[idx] > p[best]) best = idx;
                }
              argmax_[static_cast<std::size_t>(o)] = best;
              out.data[o] = p[best];
            } else {
              Scalar acc = 0;
              for (Index dy = 0; dy < s.kernel_h; ++dy)
                for (Index dx = 0; dx < s.kernel_w; ++dx) acc += p[(y0 + dy) * is.width + x0 + dx];
              out.data[o] = acc * inv_area;
            }
          }
      }
  }

  void backward(const Tensor&, const Tensor&, const Tensor& gout, Tensor& gin, bool need_grad_in) override {
    if (!need_grad_in) return;
    const auto& s = this->spec_;
    const Shape& is = this->in_;
    const Shape& os = this->out_;
    const bool is_max = s.kind == LayerKind::maxpool;
    gin.resize(gout.batch, is);
    gin.set_zero();
    const auto inv_area = Scalar(1) / static_cast<Scalar>(s.kernel_h * s.kernel_w);
    Index o = 0;
    for (Index b = 0; b < gout.batch; ++b)
      for (Index c = 0; c < is.maps; ++c) {
        Scalar* p = gin.plane(b, c);
        for (Index oy = 0; oy < os.height; ++oy)
          for (Index ox = 0; ox < os.width; ++ox, ++o) {
            const Scalar g = gout.data[o];
            if (is_max) {
              p[argmax_[static_cast<std::size_t>(o)]] += g;
            } else {
              const Index y0 = oy * s.stride_h, x0 = ox * s.stride_w;
              for (Index dy = 0; dy < s.kernel_h; ++dy)
                for (Index dx = 0; dx < s.kernel_w; ++dx) p[(y0 + dy) * is.width + x0 + dx] += g * inv_area;
            }
          }
      }
  }

 private:
  std::vector<Index> argmax_;
};

template <typename Scalar>
class Dropout final : public Layer<Scalar> {
  using Base = Layer<Scalar>;
  using typename Base::Tensor;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

 public:
  Dropout(const LayerSpec& s, Shape in, Shape out) : Base(s, in, out) {}

  void forward(const Tensor& in, Tensor& out, Mode mode, std::uint64_t noise_seed) override {
    out.resize(in.batch, this->out_);
    active_ = mode == Mode::train && this->spec_.rate > 0;
    if (!active_) {
      out.data = in.data;
      return;
    }
    const double keep = 1.0 - this->spec_.rate;
    const auto scale = static_cast<Scalar>(1.0 / keep);
    const auto threshold = static_cast<std::uint64_t>(keep * 9007199254740992.0);  // keep * 2^53
    mask_.resize(in.data.size());
    for (Index i = 0; i < mask_.size(); ++i)
      mask_[i] = (splitmix64(noise_seed + static_cast<std::uint64_t>(i)) >> 11) < threshold ? scale : Scalar(0);
    out.data = in.data * mask_;
  }

  void backward(const Tensor&, const Tensor&, const Tensor& gout, Tensor& gin, bool need_grad_in) override {
    if (!need_grad_in) return;
    gin.resize(gout.batch, this->in_);
    gin.data = active_ ? Array(gout.data * mask_) : gout.data;
  }

 private:
  Array mask_;
  bool active_ = false;
};

template <typename Scalar>
class Flatten final : public Layer<Scalar> {
  using Base = Layer<Scalar>;
  using typename Base::Tensor;

 public:
  Flatten(const LayerSpec& s, Shape in, Shape out) : Base(s, in, out) {}

  void forward(const Tensor& in, Tensor& out, Mode, std::uint64_t) override {
    out.resize(in.batch, this->out_);
    out.data = in.data;
  }

  void backward(const Tensor&, const Tensor&, const Tensor& gout, Tensor& gin, bool need_grad_in) override {
    if (!need_grad_in) return;
    gin.resize(gout.batch, this->in_);
    gin.data = gout.data;
  }
};

template <typename Scalar>
class Dense final : public Layer<Scalar> {
  using Base = Layer<Scalar>;
  using typename Base::Tensor;

 public:
  Dense(const LayerSpec& s, Shape in, Shape out) : Base(s, in, out) {
    weight_.init("kernel", s.filters, in.size());
    weight_.max_norm = s.max_norm;
    weight_.filter_size = weight_.cols;
    if (s.use_bias) bias_.init("bias", 1, s.filters);
  }

  void initialize(std::mt19937_64& rng) override {
    glorot(weight_, static_cast<double>(this->in_.size()), static_cast<double>(this->spec_.filters), rng);
    apply_max_norm(weight_);
    if (this->spec_.use_bias) bias_.value.setZero();
  }

  std::vector<Param<Scalar>*> params() override {
    if (this->spec_.use_bias) return {&weight_, &bias_};
    return {&weight_};
  }

  void forward(const Tensor& in, Tensor& out, Mode, std::uint64_t) override {
    out.resize(in.batch, this->out_);
    ConstColMap<Scalar> x(in.data.data(), this->in_.size(), in.batch);
    ColMap<Scalar> y(out.data.data(), this->spec_.filters, in.batch);
    ConstRowMap<Scalar> w(weight_.value.data(), weight_.rows, weight_.cols);
    y.noalias() = w * x;
    if (this->spec_.use_bias) y.colwise() += bias_.value.matrix();
  }

  void backward(const Tensor& in, const Tensor&, const Tensor& gout, Tensor& gin, bool need_grad_in) override {
    ConstColMap<Scalar> x(in.data.data(), this->in_.size(), in.batch);
    ConstColMap<Scalar> g(gout.data.data(), this->spec_.filters, gout.batch);
    RowMap<Scalar> gw(weight_.grad.data(), weight_.rows, weight_.cols);
    gw.noalias() += g * x.transpose();
    if (this->spec_.use_bias) bias_.grad += g.rowwise().sum().array();
    if (!need_grad_in) return;
    gin.resize(gout.batch, this->in_);
    ConstRowMap<Scalar> w(weight_.value.data(), weight_.rows, weight_.cols);
    ColMap<Scalar>(gin.data.data(), this->in_.size(), gout.batch).noalias() = w.transpose() * g;
  }

 private:
  Param<Scalar> weight_;  // units x inputs
  Param<Scalar> bias_;
};

}  // namespace

template <typename Scalar>
std::unique_ptr<Layer<Scalar>> make_layer(const LayerSpec& spec, const Shape& in, const std::string& layer_name) {
  const Shape out = infer_output_shape(spec, in, layer_name);
  switch (spec.kind) {
    case LayerKind::conv2d: return std::make_unique<Conv2d<Scalar>>(spec, in, out);
    case LayerKind::depthwise_conv2d: return std::make_unique<DepthwiseConv2d<Scalar>>(spec, in, out);
    case LayerKind::separable_conv2d: return std::make_unique<SeparableConv2d<Scalar>>(spec, in, out);
    case LayerKind::batchnorm: return std::make_unique<BatchNorm<Scalar>>(spec, in, out);
    case LayerKind::activation: return std::make_unique<ActivationLayer<Scalar>>(spec, in, out);
    case LayerKind::avgpool:
    case LayerKind::maxpool: return std::make_unique<Pool<Scalar>>(spec, in, out);
    case LayerKind::dropout: return std::make_unique<Dropout<Scalar>>(spec, in, out);
    case LayerKind::flatten: return std::make_unique<Flatten<Scalar>>(spec, in, out);
    case LayerKind::dense: return std::make_unique<Dense<Scalar>>(spec, in, out);
  }
  throw std::invalid_argument("unsupported layer kind");
}

template std::unique_ptr<Layer<float>> make_layer<float>(const LayerSpec&, const Shape&, const std::string&);
template std::unique_ptr<Layer<double>> make_layer<double>(const LayerSpec&, const Shape&, const std::string&);
template void apply_max_norm<float>(Param<float>&);
template void apply_max_norm<double>(Param<double>&);

}  // namespace esigal::nn
