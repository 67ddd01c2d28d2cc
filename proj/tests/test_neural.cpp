#include "esigal/mlr.hpp"
#include "esigal/nn/checkpoint.hpp"
#include "esigal/nn/train.hpp"
#include "gradcheck.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>
#include <tuple>

using namespace esigal;
using namespace esigal::nn;
using esigal::testing::check_gradients;
using esigal::testing::random_batch;

namespace {

LayerSpec kind(LayerKind k) {
  LayerSpec s;
  s.kind = k;
  return s;
}

LayerSpec conv_spec(Index kh, Index kw, Index filters, Padding pad = Padding::valid, bool bias = false) {
  LayerSpec s = kind(LayerKind::conv2d);
  s.kernel_h = kh;
  s.kernel_w = kw;
  s.filters = filters;
  s.padding = pad;
  s.use_bias = bias;
  return s;
}

LayerSpec dense_spec() {
  LayerSpec s = kind(LayerKind::dense);
  s.filters = 3;
  s.use_bias = true;
  return s;
}

// conv front end, the layers under test, flatten and a 3-unit dense head.
ModelSpec probe(const std::vector<LayerSpec>& middle, Index channels = 4, Index window = 12) {
  ModelSpec m;
  m.arch = "probe";
  m.channels = channels;
  m.window = window;
  std::vector<LayerSpec> seq = {conv_spec(1, 3, 2)};
  seq.insert(seq.end(), middle.begin(), middle.end());
  seq.push_back(kind(LayerKind::flatten));
  seq.push_back(dense_spec());
  for (std::size_t i = 0; i < seq.size(); ++i) m.layers.push_back({"L" + std::to_string(i), seq[i]});
  return m;
}

WindowedDataset random_dataset(Index n, Index c, Index w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  WindowedDataset d;
  d.channels = c;
  d.window = w;
  d.inputs.resize(n, c * w);
  for (Index i = 0; i < d.inputs.size(); ++i) d.inputs.data()[i] = g(rng);
  Matrix b(c * w, 3);
  for (Index i = 0; i < b.size(); ++i) b.data()[i] = g(rng) / std::sqrt(static_cast<double>(c * w));
  d.targets = d.inputs * b;
  d.trial_index.assign(static_cast<std::size_t>(n), 0);
  return d;
}

std::vector<Index> widths_of(const ModelSpec& m) {
  std::vector<Index> w = {m.window};
  const auto shapes = m.shapes();
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto k = m.layers[i].spec.kind;
    if (k == LayerKind::flatten || k == LayerKind::dense) break;
    if (shapes[i].width != w.back()) w.push_back(shapes[i].width);
  }
  return w;
}

Index flatten_width(const ModelSpec& m) {
  const auto shapes = m.shapes();
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    if (m.layers[i].spec.kind == LayerKind::flatten) return shapes[i].size();
  return 0;
}

}  // namespace

TEST_CASE("gradients of each layer kind match finite differences") {
  LayerSpec dw = kind(LayerKind::depthwise_conv2d);
  dw.kernel_h = 4;
  dw.depth_multiplier = 2;
  dw.max_norm = 1.0;
  LayerSpec sep = kind(LayerKind::separable_conv2d);
  sep.kernel_w = 3;
  sep.filters = 3;
  sep.padding = Padding::same;
  LayerSpec elu = kind(LayerKind::activation);
  elu.activation = Activation::elu;
  LayerSpec sq = elu;
  sq.activation = Activation::square;
  LayerSpec lg = elu;
  lg.activation = Activation::log;
  LayerSpec avg = kind(LayerKind::avgpool);
  avg.kernel_w = 3;
  avg.stride_w = 2;
  LayerSpec mx = avg;
  mx.kind = LayerKind::maxpool;
  LayerSpec drop = kind(LayerKind::dropout);
  drop.rate = 0.5;

  const std::vector<std::pair<std::string, std::vector<LayerSpec>>> cases = {
      {"conv2d valid", {conv_spec(2, 3, 3)}},
      {"conv2d same with bias", {conv_spec(1, 4, 3, Padding::same, true)}},
      {"depthwise", {dw}},
      {"separable", {sep}},
      {"batchnorm", {kind(LayerKind::batchnorm)}},
      {"elu", {elu}},
      {"square, avgpool, log", {sq, avg, lg}},
      {"avgpool", {avg}},
      {"maxpool", {mx}},
      {"dropout", {drop}},
      {"flatten and dense", {}},
  };
  for (const auto& [label, middle] : cases) {
    CAPTURE(label);
    Model<double> m(probe(middle));
    m.initialize(3);
    auto [x, y] = random_batch(m.spec(), 5, 4);
    const auto rep = check_gradients(m, x, y);
    CAPTURE(rep.worst);
    CHECK(rep.max_rel_error < 1e-4);
    CHECK(rep.entries_checked > 0);
  }
}

TEST_CASE("gradients of the full decoders (sampled entries)") {
  for (Arch a : {Arch::rEEGNet, Arch::rDeepConvNet, Arch::rShallowConvNet}) {
    CAPTURE(to_string(a));
    Model<double> m(build_model(a, 15, 25));
    m.initialize(9);
    auto [x, y] = random_batch(m.spec(), 3, 10);
    const auto rep = check_gradients(m, x, y, 40);
    CAPTURE(rep.worst);
    CHECK(rep.max_rel_error < 1e-4);
  }
}

TEST_CASE("parameter counts for every channel count and window") {
  // (trainable, total with batchnorm running statistics, flatten width)
  using Row = std::array<std::tuple<Index, Index, Index>, 5>;
  const std::map<std::pair<Arch, Index>, Row> expected = {
      {{Arch::rEEGNet, 15},
       {{{14531, 14979, 288}, {14531, 14979, 288}, {14819, 15267, 384}, {15107, 15555, 480}, {15107, 15555, 480}}}},
      {{Arch::rEEGNet, 18},
       {{{14819, 15267, 288}, {14819, 15267, 288}, {15107, 15555, 384}, {15395, 15843, 480}, {15395, 15843, 480}}}},
      {{Arch::rDeepConvNet, 15},
       {{{143903, 144653, 800},
         {145703, 146453, 1400},
         {146903, 147653, 1800},
         {148703, 149453, 2400},
         {149903, 150653, 2800}}}},
      {{Arch::rDeepConvNet, 18},
       {{{145778, 146528, 800},
         {147578, 148328, 1400},
         {148778, 149528, 1800},
         {150578, 151328, 2400},
         {151778, 152528, 2800}}}},
      {{Arch::rShallowConvNet, 15},
       {{{25203, 25283, 200}, {25443, 25523, 280}, {25803, 25883, 400}, {26043, 26123, 480}, {26403, 26483, 600}}}},
      {{Arch::rShallowConvNet, 18},
       {{{30003, 30083, 200}, {30243, 30323, 280}, {30603, 30683, 400}, {30843, 30923, 480}, {31203, 31283, 600}}}},
  };
  for (const auto& [key, row] : expected) {
    for (int i = 0; i < 5; ++i) {
      const Index w = 25 + 5 * i;
      CAPTURE(to_string(key.first));
      CAPTURE(key.second);
      CAPTURE(w);
      const ModelSpec spec = build_model(key.first, key.second, w);
      Model<double> m(spec);
      CHECK(m.trainable_count() == std::get<0>(row[i]));
      CHECK(m.total_count() == std::get<1>(row[i]));
      CHECK(flatten_width(spec) == std::get<2>(row[i]));
    }
  }
}

TEST_CASE("layer widths through the decoders") {
  const ModelSpec eeg = build_model(Arch::rEEGNet, 18, 45);
  CHECK(widths_of(eeg) == std::vector<Index>{45, 22, 5});
  {
    std::vector<Index> all;
    const auto shapes = eeg.shapes();
    for (std::size_t i = 0; i < eeg.layers.size(); ++i) {
      const auto k = eeg.layers[i].spec.kind;
      if (k == LayerKind::conv2d || k == LayerKind::depthwise_conv2d || k == LayerKind::avgpool ||
          k == LayerKind::separable_conv2d)
        all.push_back(shapes[i].width);
    }
    CHECK(all == std::vector<Index>{45, 45, 22, 22, 5});
  }
  CHECK(flatten_width(eeg) == 480);
  CHECK(widths_of(build_model(Arch::rDeepConvNet, 18, 25)) == std::vector<Index>{25, 21, 17, 13, 9, 4});
  CHECK(flatten_width(build_model(Arch::rDeepConvNet, 18, 25)) == 800);
  CHECK(widths_of(build_model(Arch::rShallowConvNet, 18, 45)) == std::vector<Index>{45, 33, 15});
  CHECK(flatten_width(build_model(Arch::rShallowConvNet, 18, 45)) == 600);

  // The (1, 32) temporal kernel is wider than W = 25; same padding keeps it valid.
  const ModelSpec small = build_model(Arch::rEEGNet, 15, 25);
  CHECK(small.shapes().front().width == 25);
  CHECK(small.layers.front().spec.padding == Padding::same);
  CHECK(small.layers.front().spec.kernel_w == 32);
  ModelSpec valid = small;
  valid.layers.front().spec.padding = Padding::valid;
  CHECK_THROWS_WITH_AS(valid.shapes(), doctest::Contains("00_conv2d"), std::invalid_argument);
  CHECK_THROWS_AS(build_model(Arch::rDeepConvNet, 18, 17), std::invalid_argument);
  CHECK(build_model(Arch::rShallowConvNet, 15, 25).shapes()[1].height == 1);
}

TEST_CASE("model descriptors round trip through json") {
  const ModelSpec m = build_model(Arch::rDeepConvNet, 15, 30);
  CHECK(to_json(model_spec_from_json(to_json(m))) == to_json(m));
  auto j = to_json(m);
  j["layers"][0]["rate"] = 0.3;
  CHECK_THROWS_AS(model_spec_from_json(j), std::invalid_argument);
}

TEST_CASE("activation values") {
  LayerSpec s = kind(LayerKind::activation);
  s.activation = Activation::elu;
  auto elu = make_layer<double>(s, {1, 1, 3}, "elu");
  Tensor4<double> in(1, {1, 1, 3}), out;
  in.data << 0.0, 1.0, -10.0;
  out.resize(1, {1, 1, 3});
  elu->forward(in, out, Mode::eval, 0);
  CHECK(out.data[0] == 0.0);
  CHECK(out.data[1] == 1.0);
  CHECK(out.data[2] == doctest::Approx(-0.9999546).epsilon(1e-6));

  s.activation = Activation::log;
  auto lg = make_layer<double>(s, {1, 1, 3}, "log");
  in.data << 0.0, 1.0, -5.0;
  lg->forward(in, out, Mode::eval, 0);
  CHECK(out.data[0] == doctest::Approx(std::log(1e-7)));
  CHECK(out.data[1] == 0.0);
  CHECK(out.data[2] == doctest::Approx(std::log(1e-7)));
}

TEST_CASE("batchnorm normalizes each map in train mode") {
  auto bn = make_layer<double>(kind(LayerKind::batchnorm), {3, 2, 5}, "bn");
  std::mt19937_64 rng(2);
  bn->initialize(rng);
  std::normal_distribution<double> g(7.0, 1000.0);
  Tensor4<double> in(16, {3, 2, 5}), out(16, {3, 2, 5});
  for (Index i = 0; i < in.data.size(); ++i) in.data[i] = g(rng);
  bn->forward(in, out, Mode::train, 0);
  for (Index c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    int n = 0;
    for (Index b = 0; b < 16; ++b)
      for (Index k = 0; k < 10; ++k, ++n) {
        const double v = out.plane(b, c)[k];
        s += v;
        s2 += v * v;
      }
    const double mean = s / n;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(s2 / n - mean * mean - 1.0) < 1e-6);
  }
}

TEST_CASE("dropout is inverted in train mode and inactive in eval mode") {
  LayerSpec s = kind(LayerKind::dropout);
  s.rate = 0.5;
  auto d = make_layer<double>(s, {1, 1, 4000}, "drop");
  Tensor4<double> in(1, {1, 1, 4000}), out(1, {1, 1, 4000});
  in.data.setOnes();
  d->forward(in, out, Mode::eval, 5);
  CHECK((out.data == 1.0).all());
  d->forward(in, out, Mode::train, 5);
  CHECK(((out.data == 0.0) || (out.data == 2.0)).all());
  CHECK(out.data.mean() == doctest::Approx(1.0).epsilon(0.06));
  Tensor4<double> again(1, {1, 1, 4000});
  d->forward(in, again, Mode::train, 5);
  CHECK((again.data == out.data).all());
}

TEST_CASE("Adam update rules") {
  Param<double> p;
  p.init("w", 1, 1);
  p.grad[0] = 1.0;
  AdamState<double> st;
  adam_step<double>({&p}, st, {});
  CHECK(std::abs(p.value[0] + 1e-3) < 1e-6);

  Param<double> q;
  q.init("w", 1, 4);
  q.value << 0.1, -0.2, 0.3, 0.4;
  const auto before = q.value;
  AdamState<double> st2;
  adam_step<double>({&q}, st2, {});
  CHECK((q.value == before).all());

  Param<double> f;
  f.init("depthwise_kernel", 2, 2);
  f.value << 2.0, 0.0, 0.3, 0.4;
  f.max_norm = 1.0;
  f.filter_size = 2;
  AdamState<double> st3;
  adam_step<double>({&f}, st3, {});
  CHECK(std::hypot(f.value[0], f.value[1]) == doctest::Approx(1.0));
  CHECK(f.value[2] == doctest::Approx(0.3));
}

TEST_CASE("early stopping follows patience semantics") {
  EarlyStopping es(5);
  const std::vector<double> trace = {5, 4, 4, 4, 4, 4, 4};
  int stopped = 0;
  for (std::size_t e = 0; e < trace.size(); ++e) {
    es.update(static_cast<int>(e) + 1, trace[e]);
    if (es.should_stop()) {
      stopped = static_cast<int>(e) + 1;
      break;
    }
  }
  CHECK(stopped == 7);
  CHECK(es.best_epoch() == 2);
  CHECK_THROWS_AS(EarlyStopping(0), std::invalid_argument);
}

TEST_CASE("training restores the best epoch and is deterministic") {
  const ModelSpec spec = build_model(Arch::rShallowConvNet, 4, 25);
  const WindowedDataset train = random_dataset(48, 4, 25, 1), val = random_dataset(16, 4, 25, 2);
  const std::vector<double> trace = {5, 4, 4, 4, 4, 4, 4, 4, 4};
  TrainConfig cfg;
  cfg.batch = 16;
  cfg.seed = 77;
  cfg.val_loss_override = [&](int epoch, double) { return trace.at(static_cast<std::size_t>(epoch - 1)); };
  std::vector<Eigen::ArrayXd> at_epoch2;
  Model<double>* live = nullptr;
  cfg.on_epoch = [&](int epoch, double, double) {
    if (epoch == 2)
      for (auto* p : live->params()) at_epoch2.push_back(p->value);
  };
  Model<double> m(spec);
  live = &m;
  const TrainHistory h = train_model(m, train, val, cfg);
  CHECK(h.epochs_run == 7);
  CHECK(h.best_epoch == 2);
  CHECK(h.stop_reason == "early_stopping");
  const auto ps = m.params();
  REQUIRE(ps.size() == at_epoch2.size());
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK((ps[i]->value == at_epoch2[i]).all());

  TrainConfig plain;
  plain.batch = 16;
  plain.max_epochs = 3;
  plain.seed = 5;
  Model<double> a(spec), b(spec);
  train_model(a, train, val, plain);
  train_model(b, train, val, plain);
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK((a.params()[i]->value == b.params()[i]->value).all());
  plain.seed = 6;
  Model<double> c(spec);
  train_model(c, train, val, plain);
  CHECK_FALSE((a.params()[0]->value == c.params()[0]->value).all());

  plain.max_epochs = 0;
  CHECK_THROWS_AS(train_model(c, train, val, plain), std::invalid_argument);
  plain.max_epochs = 1;
  CHECK_THROWS_AS(train_model(c, random_dataset(8, 3, 25, 1), val, plain), std::invalid_argument);
}

TEST_CASE("divergence aborts with the history") {
  const ModelSpec spec = build_model(Arch::rShallowConvNet, 4, 25);
  WindowedDataset train = random_dataset(16, 4, 25, 1);
  train.targets(3, 1) = std::numeric_limits<double>::infinity();
  TrainConfig cfg;
  cfg.max_epochs = 2;
  Model<double> m(spec);
  CHECK_THROWS_AS(train_model(m, train, random_dataset(8, 4, 25, 2), cfg), DivergenceError);
}

TEST_CASE("checkpoints reload exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "esigal_ckpt";
  std::filesystem::remove_all(dir);
  Model<float> f(build_model(Arch::rEEGNet, 15, 30));
  f.initialize(4);
  save_checkpoint(dir / "f", f, {{"note", "x"}});
  nlohmann::json extra;
  Model<float> fb = load_checkpoint<float>(dir / "f", &extra);
  CHECK(extra.at("note") == "x");
  CHECK(to_json(fb.spec()) == to_json(f.spec()));
  for (std::size_t i = 0; i < f.params().size(); ++i) CHECK((fb.params()[i]->value == f.params()[i]->value).all());

  Model<double> d(build_model(Arch::rDeepConvNet, 15, 25));
  d.initialize(4);
  save_checkpoint(dir / "d", d);
  Model<double> db = load_checkpoint<double>(dir / "d");
  for (std::size_t i = 0; i < d.params().size(); ++i)
    CHECK((db.params()[i]->value == d.params()[i]->value.cast<float>().cast<double>()).all());
  save_checkpoint(dir / "d2", db);
  Model<double> db2 = load_checkpoint<double>(dir / "d2");
  for (std::size_t i = 0; i < d.params().size(); ++i) CHECK((db2.params()[i]->value == db.params()[i]->value).all());
}

TEST_CASE("float and double instantiations agree") {
  const ModelSpec spec = build_model(Arch::rEEGNet, 15, 25);
  Model<double> d(spec);
  Model<float> f(spec);
  d.initialize(8);
  f.initialize(8);
  const WindowedDataset data = random_dataset(10, 15, 25, 3);
  const Matrix pd = d.predict(data.inputs), pf = f.predict(data.inputs);
  CHECK((pd - pf).cwiseAbs().maxCoeff() < 1e-4 * std::max(1.0, pd.cwiseAbs().maxCoeff()));
}

TEST_CASE("mLR equals the pseudoinverse solution") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g;
  Matrix x(200, 50), y(200, 3);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  for (Index i = 0; i < y.size(); ++i) y.data()[i] = g(rng);
  Matrix xa(200, 51);
  xa << x, Matrix::Ones(200, 1);
  Eigen::JacobiSVD<Matrix> svd(xa, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector sv = svd.singularValues();
  Vector inv = Vector::Zero(sv.size());
  for (Index i = 0; i < sv.size(); ++i)
    if (sv(i) > 1e-10 * sv(0)) inv(i) = 1.0 / sv(i);
  const Matrix beta = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * y;
  const MlrModel m = mlr_fit(x, y);
  CHECK((m.coef - beta.topRows(50)).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK((m.intercept - beta.row(50).transpose()).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK((mlr_predict(m, x) - xa * beta).cwiseAbs().maxCoeff() <= 1e-8);
  const RowMatrix xr = x;
  CHECK((mlr_fit(xr, y).coef - m.coef).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mLR recovers noiseless affine data and handles degenerate inputs") {
  std::mt19937_64 rng(22);
  std::normal_distribution<double> g;
  Matrix x(300, 20), b(20, 3);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  for (Index i = 0; i < b.size(); ++i) b.data()[i] = g(rng);
  const Vector c = Vector::LinSpaced(3, -1.0, 2.0);
  const Matrix y = (x * b).rowwise() + c.transpose();
  const MlrModel m = mlr_fit(x, y);
  CHECK((m.coef - b).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK((m.intercept - c).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK((mlr_predict(m, x) - y).cwiseAbs().maxCoeff() <= 1e-6);

  Matrix yc(300, 3);
  yc.rowwise() = c.transpose();
  const MlrModel mc = mlr_fit(x, yc);
  CHECK(mc.coef.cwiseAbs().maxCoeff() < 1e-10);
  CHECK((mc.intercept - c).cwiseAbs().maxCoeff() < 1e-10);

  Matrix dup(300, 21);
  dup << x, x.col(0);
  const MlrModel md = mlr_fit(dup, y);
  CHECK((mlr_predict(md, dup) - y).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(md.coef(0, 0) == doctest::Approx(md.coef(20, 0)));

  Matrix bad = x;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(mlr_fit(bad, y), std::invalid_argument);
  CHECK_THROWS_AS(mlr_fit(x, y.topRows(10)), std::invalid_argument);
}
