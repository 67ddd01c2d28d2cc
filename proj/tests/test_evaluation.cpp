#include "esigal/evaluation.hpp"
#include "esigal/mlr.hpp"
#include "esigal/report.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace esigal;
namespace fs = std::filesystem;

namespace {

Vector randn(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

// Textbook two-pass formula in long double.
double oracle_pcc(const Vector& a, const Vector& b) {
  const auto n = static_cast<long double>(a.size());
  long double ma = 0, mb = 0;
  for (Index i = 0; i < a.size(); ++i) {
    ma += a(i);
    mb += b(i);
  }
  ma /= n;
  mb /= n;
  long double sab = 0, saa = 0, sbb = 0;
  for (Index i = 0; i < a.size(); ++i) {
    sab += (a(i) - ma) * (b(i) - mb);
    saa += (a(i) - ma) * (a(i) - ma);
    sbb += (b(i) - mb) * (b(i) - mb);
  }
  return static_cast<double>((sab / (n - 1)) / (std::sqrt(saa / (n - 1)) * std::sqrt(sbb / (n - 1))));
}

fs::path data_dir() { return fs::path(ESIGAL_TEST_DATA); }

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE_MESSAGE(f.good(), "missing fixture " << p);
  return {std::istreambuf_iterator<char>(f), {}};
}

bool regenerate() { return std::getenv("ESIGAL_REGEN_FIXTURES") != nullptr; }

std::vector<ResultRecord> grid_records() {
  std::vector<ResultRecord> recs;
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.2, 0.9);
  const int lags[] = {0, 50, 100, 150};
  const int windows[] = {250, 300, 350, 400, 450};
  for (const char* domain : {"sensor", "source"})
    for (const char* model : kModelLabels)
      for (int lag : lags)
        for (int w : windows)
          for (int s = 1; s <= 3; ++s) {
            ResultRecord r;
            r.subject_id = "S0" + std::to_string(s);
            r.domain = domain;
            r.model = model;
            r.lag_ms = lag;
            r.window_ms = w;
            r.split = "intra";
            r.pcc_x = std::round(u(rng) * 1e4) / 1e4;
            r.pcc_y = std::round(u(rng) * 1e4) / 1e4;
            r.pcc_z = std::round(u(rng) * 1e4) / 1e4;
            r.seed = 7;
            r.config_hash = "0123456789abcdef";
            recs.push_back(r);
          }
  return recs;
}

}  // namespace

TEST_CASE("pcc against the direct formula") {
  const Vector a = randn(1000, 1), b = 0.3 * a + randn(1000, 2);
  CHECK(std::abs(pcc(a, b) - oracle_pcc(a, b)) <= 1e-12);
  CHECK(std::abs(pcc(a, a) - 1.0) <= 1e-12);
  CHECK(std::abs(pcc(a, -a) + 1.0) <= 1e-12);
  const Vector s = 3.5 * a.array() + 100.0;
  CHECK(std::abs(pcc(s, b) - pcc(a, b)) <= 1e-12);
  const Vector neg = -0.25 * b.array() + 4.0;
  CHECK(std::abs(pcc(a, neg) + pcc(a, b)) <= 1e-12);
  CHECK_THROWS_AS(pcc(a, Vector::Constant(1000, 2.0)), std::domain_error);
  CHECK_THROWS_AS(pcc(a.head(10), b), std::invalid_argument);
  CHECK_THROWS_AS(pcc(a.head(1), b.head(1)), std::invalid_argument);
}

TEST_CASE("per-axis evaluation") {
  WindowedDataset ds;
  ds.channels = 1;
  ds.window = 3;
  ds.inputs = RowMatrix::Random(50, 3);
  ds.targets = Matrix::Random(50, 3);
  ds.trial_index.assign(50, 0);
  const Pcc3 perfect = evaluate_model([&](const RowMatrix&) { return ds.targets; }, ds);
  for (double p : perfect) CHECK(p == doctest::Approx(1.0).epsilon(1e-12));
  Matrix half = ds.targets;
  half.col(1).setConstant(0.5);
  CHECK_THROWS_WITH(evaluate_model([&](const RowMatrix&) { return half; }, ds), doctest::Contains("y"));

  for (Index i = 25; i < 50; ++i) ds.trial_index[static_cast<std::size_t>(i)] = 1;
  const Matrix noisy = ds.targets + 0.5 * Matrix::Random(50, 3);
  const Pcc3 per_trial = pcc_axes(noisy, ds.targets, ds.trial_index, true);
  const double expect =
      0.5 * (pcc(noisy.col(0).head(25), ds.targets.col(0).head(25)) + pcc(noisy.col(0).tail(25), ds.targets.col(0).tail(25)));
  CHECK(per_trial[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("Student t upper tail") {
  CHECK(std::abs(student_t_upper_tail(1.796, 11) - 0.05) <= 1e-3);
  CHECK(student_t_upper_tail(0.0, 5) == doctest::Approx(0.5).epsilon(1e-10));
  for (double df : {1.0, 2.0, 5.0, 11.0, 30.0})
    for (double t : {-3.0, -0.7, 0.4, 1.796, 2.5, 6.0}) {
      const boost::math::students_t dist(df);
      CHECK(std::abs(student_t_upper_tail(t, df) - boost::math::cdf(boost::math::complement(dist, t))) < 1e-9);
    }
  CHECK_THROWS_AS(student_t_upper_tail(1.0, 0.5), std::invalid_argument);
}

TEST_CASE("paired one-tailed t-test") {
  const Vector a = randn(12, 5), noise = randn(12, 6);
  std::vector<double> va(a.data(), a.data() + 12), vb(12);
  for (int i = 0; i < 12; ++i) vb[i] = va[i] + 1e-6 * noise(i);
  const TTest null = paired_t_test_one_tailed(va, vb);
  CHECK(null.df == 11);
  CHECK(std::isfinite(null.p));
  const TTest ab = paired_t_test_one_tailed(va, vb), ba = paired_t_test_one_tailed(vb, va);
  CHECK(ab.t == -ba.t);
  CHECK(std::abs(ab.p + ba.p - 1.0) <= 1e-9);

  std::vector<double> shifted(12);
  for (int i = 0; i < 12; ++i) shifted[i] = va[i] + 10.0 + 0.1 * noise(i);
  CHECK(paired_t_test_one_tailed(shifted, va).p < 1e-6);

  // t computed by hand for a small sample
  const std::vector<double> x = {1, 2, 3, 4}, y = {0, 0, 2, 5};
  const double d[] = {1, 2, 1, -1};
  const double md = 0.75;
  double ss = 0;
  for (double v : d) ss += (v - md) * (v - md);
  const double t = md / (std::sqrt(ss / 3) / 2);
  CHECK(paired_t_test_one_tailed(x, y).t == doctest::Approx(t).epsilon(1e-12));

  CHECK_THROWS_AS(paired_t_test_one_tailed(va, va), std::domain_error);
  CHECK_THROWS_AS(paired_t_test_one_tailed({1.0}, {2.0}), std::invalid_argument);
  CHECK_THROWS_AS(paired_t_test_one_tailed(va, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("null case: symmetric zero-mean differences give p near one half") {
  std::vector<double> a(12), b(12);
  const double eps[] = {0.01, -0.01, 0.02, -0.02, 0.015, -0.015, 0.005, -0.005, 0.03, -0.03, 0.001, -0.001};
  for (int i = 0; i < 12; ++i) {
    a[i] = 0.5 + 0.01 * i;
    b[i] = a[i] + eps[i];
  }
  const TTest r = paired_t_test_one_tailed(a, b);
  CHECK(std::abs(r.t) < 1e-9);
  CHECK(std::abs(r.p - 0.5) <= 0.02);
}

TEST_CASE("aggregation means and ragged grids") {
  ResultRecord r;
  r.subject_id = "S01";
  r.domain = "sensor";
  r.model = "mLR";
  r.lag_ms = 100;
  r.window_ms = 450;
  r.split = "intra";
  r.pcc_x = 0.6;
  r.pcc_y = 0.5;
  r.pcc_z = 0.4;
  Report one = aggregate_report({r});
  REQUIRE(one.rows.size() == 1);
  CHECK(one.rows[0].mean[0] == 0.6);
  CHECK(one.rows[0].n_subjects == 1);

  ResultRecord r2 = r;
  r2.subject_id = "S02";
  r2.pcc_x = 0.8;
  Report two = aggregate_report({r, r2});
  CHECK(two.rows[0].mean[0] == doctest::Approx(0.7));
  CHECK(two.ragged.empty());

  ResultRecord other = r;
  other.model = "rEEGNet";
  Report ragged = aggregate_report({r, r2, other});
  CHECK(ragged.ragged.size() == 1);
  CHECK(ragged.rows.size() == 1);

  ResultRecord bad = r;
  bad.pcc_x = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::domain_error);
  CHECK_THROWS_AS(aggregate_report({r, bad}), std::domain_error);
  const Report dup = aggregate_report({r, r, r2});
  CHECK(dup.rows.empty());
  REQUIRE(dup.ragged.size() == 1);
  CHECK(dup.ragged[0].find("duplicated S01") != std::string::npos);
}

TEST_CASE("results csv round trip") {
  const auto recs = grid_records();
  const std::string csv = results_csv(recs);
  const auto back = parse_results_csv(csv);
  REQUIRE(back.size() == recs.size());
  CHECK(results_csv(back) == csv);
  CHECK(back[17].pcc_y == recs[17].pcc_y);
  CHECK_THROWS(parse_results_csv("nonsense\n1,2\n"));
}

TEST_CASE("full grid rendering matches the pinned fixture") {
  const auto recs = grid_records();
  const Report rep = aggregate_report(recs);
  CHECK(rep.rows.size() == 2 * 4 * 4 * 5);
  CHECK(rep.ragged.empty());
  for (const char* domain : {"sensor", "source"})
    for (int axis = 0; axis < 3; ++axis) {
      int flagged = 0;
      double best = -2, flagged_value = -3;
      for (const auto& row : rep.rows)
        if (row.domain == domain) {
          best = std::max(best, row.mean[axis]);
          if (row.best[axis]) {
            ++flagged;
            flagged_value = row.mean[axis];
          }
        }
      CHECK(flagged >= 1);
      CHECK(flagged_value == best);
    }
  const auto tt = run_ttests(recs, 100, 450);
  const std::string md = render_markdown(rep, tt);
  const std::string summary = summary_csv(rep);
  const std::string ttests = ttests_csv(tt);
  if (regenerate()) {
    std::ofstream(data_dir() / "report_grid.md", std::ios::binary) << md;
    std::ofstream(data_dir() / "summary_grid.csv", std::ios::binary) << summary;
    std::ofstream(data_dir() / "ttests_grid.csv", std::ios::binary) << ttests;
    std::ofstream(data_dir() / "results_grid.csv", std::ios::binary) << results_csv(recs);
  }
  CHECK(md == read_file(data_dir() / "report_grid.md"));
  CHECK(summary == read_file(data_dir() / "summary_grid.csv"));
  CHECK(ttests == read_file(data_dir() / "ttests_grid.csv"));
  CHECK(results_csv(recs) == read_file(data_dir() / "results_grid.csv"));
}

TEST_CASE("mLR on a synthetic linear session reproduces the pinned PCCs") {
  std::mt19937_64 rng(1234);
  std::normal_distribution<double> g;
  WindowedDataset train, test;
  for (auto* d : {&train, &test}) {
    d->channels = 4;
    d->window = 5;
    d->inputs.resize(d == &train ? 400 : 150, 20);
    for (Index i = 0; i < d->inputs.size(); ++i) d->inputs.data()[i] = g(rng);
    d->trial_index.assign(static_cast<std::size_t>(d->inputs.rows()), 0);
  }
  Matrix b(20, 3);
  for (Index i = 0; i < b.size(); ++i) b.data()[i] = g(rng);
  for (auto* d : {&train, &test}) {
    d->targets = d->inputs * b;
    for (Index i = 0; i < d->targets.size(); ++i) d->targets.data()[i] += 2.0 * g(rng);
  }
  const MlrModel m = mlr_fit(train.inputs, train.targets);
  const Pcc3 p = evaluate_model([&](const RowMatrix& x) { return mlr_predict(m, x); }, test);
  const fs::path fixture = data_dir() / "mlr_linear_pcc.txt";
  if (regenerate()) {
    std::ofstream f(fixture);
    f.precision(17);
    f << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
  }
  std::istringstream in(read_file(fixture));
  for (int k = 0; k < 3; ++k) {
    double v = 0;
    in >> v;
    CHECK(std::abs(p[static_cast<std::size_t>(k)] - v) <= 1e-9);
  }
}
