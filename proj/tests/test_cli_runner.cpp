#include "esigal/config.hpp"
#include "esigal/container.hpp"
#include "esigal/pipeline.hpp"
#include "esigal/report.hpp"
#include "esigal/session_io.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace esigal;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kData = ESIGAL_TEST_DATA;
const fs::path kConfigs = kData.parent_path().parent_path() / "configs";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("esigal_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

struct CliResult {
  int code = -1;
  std::string out, err;
};

CliResult cli(const std::string& args) {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() / "esigal_cli_io";
  fs::create_directories(dir);
  const fs::path o = dir / ("out" + std::to_string(counter)), e = dir / ("err" + std::to_string(counter));
  ++counter;
  const std::string cmd = std::string("'") + ESIGAL_CLI + "' " + args + " > '" + o.string() + "' 2> '" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

json tiny_config(const fs::path& out) {
  return {{"name", "tiny"},
          {"seed", 11},
          {"output_dir", out.string()},
          {"data", {{"synthetic", {{"n_subjects", 1}, {"n_trials", 20}, {"snr", 5}}}}},
          {"domains", {"sensor", "source"}},
          {"models", {"mLR", "rEEGNet"}},
          {"lags_ms", {100}},
          {"windows_ms", {250}},
          {"allow_split_fallback", true},
          {"train", {{"max_epochs", 2}}},
          {"rois", {"precentral L", "postcentral L", "paracentral L", "superiorparietal L"}}};
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

}  // namespace

TEST_CASE("config validation rejects bad grids and names before any compute") {
  const fs::path dir = scratch("cfg");
  json j = tiny_config(dir / "run");
  CHECK_NOTHROW(config_from_json(j).validate_inputs());

  json bad = j;
  bad["lags_ms"] = {250};
  bad["windows_ms"] = {450};
  CHECK_THROWS_WITH_AS(config_from_json(bad).validate(), doctest::Contains("250"), std::invalid_argument);

  bad = j;
  bad["lag_ms"] = {100};
  CHECK_THROWS_WITH_AS(config_from_json(bad), doctest::Contains("lag_ms"), std::invalid_argument);

  bad = j;
  bad["models"] = {"mLR", "SVM"};
  CHECK_THROWS_AS(config_from_json(bad).validate(), std::invalid_argument);

  bad = j;
  bad["split"] = "inter";
  CHECK_THROWS_AS(config_from_json(bad).validate(), std::invalid_argument);

  bad = j;
  bad.erase("rois");
  CHECK_THROWS_AS(config_from_json(bad).validate(), std::invalid_argument);

  bad = j;
  bad["rois"] = {"precentral L", "nowhere R"};
  CHECK_THROWS_WITH_AS(config_from_json(bad).validate_inputs(), doctest::Contains("nowhere R"), std::invalid_argument);

  bad = j;
  bad["channels"] = {"C3", "XYZ"};
  CHECK_THROWS_WITH_AS(config_from_json(bad).validate_inputs(), doctest::Contains("XYZ"), std::invalid_argument);

  bad = j;
  bad["data"] = {{"sessions", {"missing_dir"}}};
  CHECK_THROWS_WITH_AS(config_from_json(bad, dir).validate_inputs(), doctest::Contains("missing_dir"),
                       std::invalid_argument);

  bad = j;
  bad["train"]["patience"] = 0;
  CHECK_THROWS_AS(config_from_json(bad).validate(), std::invalid_argument);
}

TEST_CASE("config hash and json round trip") {
  const ExperimentConfig a = config_from_json(tiny_config("/tmp/a"));
  ExperimentConfig b = config_from_json(tiny_config("/tmp/b"));
  b.workers = 3;
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  b.seed = 12;
  CHECK(a.hash() != b.hash());
  CHECK(to_json(config_from_json(to_json(a))) == to_json(a));
  CHECK(a.channels == default_sensor_channels());
  CHECK(default_sensor_channels().size() == 18);
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("cell seeds and worker caps") {
  const auto s = cell_seed(7, "S01", Domain::sensor, 100, 450, "rEEGNet");
  CHECK(s == cell_seed(7, "S01", Domain::sensor, 100, 450, "rEEGNet"));
  CHECK(s != cell_seed(7, "S01", Domain::source, 100, 450, "rEEGNet"));
  CHECK(s != cell_seed(7, "S02", Domain::sensor, 100, 450, "rEEGNet"));
  CHECK(s != cell_seed(8, "S01", Domain::sensor, 100, 450, "rEEGNet"));
  CHECK(s != cell_seed(7, "S01", Domain::sensor, 100, 450, "mLR"));
  setenv("ESIGAL_WORKERS", "2", 1);
  CHECK(effective_workers(8) == 2);
  CHECK(effective_workers(1) == 1);
  unsetenv("ESIGAL_WORKERS");
  CHECK(effective_workers(0) == 1);
}

TEST_CASE("validate-config on the shipped configs") {
  for (const char* name : {"quickstart.json", "synthetic_full.json", "synthetic_grid.json"}) {
    CAPTURE(name);
    const auto r = cli("validate-config --config " + q(kConfigs / name));
    CHECK(r.code == 0);
    CHECK(r.out.rfind("OK ", 0) == 0);
  }
  const auto schema = cli("validate-config --print-schema");
  REQUIRE(schema.code == 0);
  const json s = json::parse(schema.out);
  CHECK(s.at("properties").contains("lags_ms"));
  CHECK(s.at("properties").contains("rois"));
}

TEST_CASE("a lag 250 config fails validation fast and writes nothing") {
  const fs::path dir = scratch("lag250");
  json j = tiny_config(dir / "run");
  j["lags_ms"] = {250};
  j["windows_ms"] = {450};
  write_json(dir / "c.json", j);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = cli("run --quiet --config " + q(dir / "c.json"));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(r.code == 1);
  CHECK(r.err.find("250") != std::string::npos);
  CHECK(secs < 5.0);
  CHECK_FALSE(fs::exists(dir / "run"));
  CHECK(cli("validate-config --config " + q(dir / "c.json")).code == 1);

  j = tiny_config(dir / "run");
  j["rois"] = {"precentral L", "atlantis L"};
  write_json(dir / "r.json", j);
  const auto roi = cli("validate-config --config " + q(dir / "r.json"));
  CHECK(roi.code == 1);
  CHECK(roi.err.find("atlantis L") != std::string::npos);
}

TEST_CASE("esi on an identity lead field passes the data through") {
  const fs::path dir = scratch("esi");
  LeadField lf;
  lf.gain = Matrix::Identity(4, 4);
  lf.channel_names = {"a", "b", "c", "d"};
  lf.source_positions.setZero(4, 3);
  lf.atlas_label = {1, 1, 2, 2};
  lf.atlas_names = {{1, "left"}, {2, "right"}};
  save_leadfield(dir / "lf", lf);
  const Matrix e = Matrix::Random(4, 50).cast<float>().cast<double>();
  MatrixMeta meta;
  meta.role = "eeg";
  meta.fs_hz = 100.0;
  meta.channel_names = lf.channel_names;
  save_matrix(dir / "e", e, meta);

  auto r = cli("esi --leadfield " + q(dir / "lf") + " --input " + q(dir / "e") + " --lambda2 1e-12 --out " +
               q(dir / "s") + " --operator-out " + q(dir / "op"));
  REQUIRE(r.code == 0);
  const Matrix s = load_matrix<double>(dir / "s").first;
  CHECK((s - e).cwiseAbs().maxCoeff() < 1e-5);
  const InverseOperator op = load_inverse_operator(dir / "op");
  CHECK((op.w_std - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-5);

  r = cli("esi --leadfield " + q(dir / "lf") + " --input " + q(dir / "e") + " --lambda2 1e-12 --rois right,left --out " +
          q(dir / "roi"));
  REQUIRE(r.code == 0);
  auto [roi, rm] = load_matrix<double>(dir / "roi");
  CHECK(rm.channel_names == std::vector<std::string>{"right", "left"});
  CHECK((roi.row(0) - 0.5 * (e.row(2) + e.row(3))).cwiseAbs().maxCoeff() < 1e-5);

  r = cli("esi --leadfield " + q(dir / "lf") + " --input " + q(dir / "e") + " --rois nowhere --out " + q(dir / "x"));
  CHECK(r.code == 1);
  CHECK(r.err.find("nowhere") != std::string::npos);
}

TEST_CASE("report reproduces the pinned fixture byte for byte") {
  const fs::path dir = scratch("report");
  const auto r = cli("report --results " + q(kData / "results_grid.csv") + " --ttest-cell 100,450 --out " + q(dir));
  REQUIRE(r.code == 0);
  CHECK(slurp(dir / "report.md") == slurp(kData / "report_grid.md"));
  CHECK(slurp(dir / "summary.csv") == slurp(kData / "summary_grid.csv"));
  CHECK(slurp(dir / "ttests.csv") == slurp(kData / "ttests_grid.csv"));
  CHECK(slurp(dir / "results.csv") == slurp(kData / "results_grid.csv"));
}

TEST_CASE("subcommands chain from synthetic data to a result row") {
  const fs::path dir = scratch("chain");
  REQUIRE(cli("synth --subjects 1 --trials 30 --seed 3 --out " + q(dir / "raw")).code == 0);
  REQUIRE(fs::exists(dir / "raw" / "S01" / "session.json"));
  REQUIRE(cli("preprocess --sensor-features --session " + q(dir / "raw" / "S01") + " --out " + q(dir / "feat")).code == 0);
  const FeatureSession f = load_feature_session(dir / "feat");
  CHECK(f.feature_names == default_sensor_channels());
  CHECK(f.fs == 100.0);
  REQUIRE(cli("windows --features " + q(dir / "feat") +
              " --lag-ms 100 --window-ms 300 --domain sensor --split intra --allow-split-fallback --out " +
              q(dir / "win"))
              .code == 0);
  const WindowedDataset test = load_dataset(dir / "win" / "test");
  CHECK(test.window == 30);
  CHECK(test.channels == 18);
  CHECK(cli("windows --features " + q(dir / "feat") + " --lag-ms 100 --window-ms 300 --split intra --out " +
            q(dir / "nofallback"))
            .code == 1);
  REQUIRE(cli("train --model mLR --train " + q(dir / "win" / "train") + " --out " + q(dir / "mlr")).code == 0);
  const auto ev = cli("evaluate --model-dir " + q(dir / "mlr") + " --test " + q(dir / "win" / "test"));
  REQUIRE(ev.code == 0);
  const auto recs = parse_results_csv(ev.out);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].model == "mLR");
  CHECK(recs[0].subject_id == "S01");
  CHECK(recs[0].pcc_x > 0.3);

  REQUIRE(cli("esi --leadfield " + q(dir / "raw" / "S01" / "leadfield") + " --input " + q(dir / "feat") +
              " --rois 'precentral L,postcentral L' --out " + q(dir / "roi"))
              .code == 1);  // sensor features no longer match the lead-field montage
  REQUIRE(cli("preprocess --session " + q(dir / "raw" / "S01") + " --out " + q(dir / "pre")).code == 0);
  REQUIRE(cli("esi --leadfield " + q(dir / "raw" / "S01" / "leadfield") + " --input " + q(dir / "pre") +
              " --rois 'precentral L,postcentral L' --out " + q(dir / "roi"))
              .code == 0);
  CHECK(load_feature_session(dir / "roi").feat.rows() == 2);
}

TEST_CASE("pipeline runs are deterministic and the cache is sound") {
  const fs::path dir = scratch("pipe");
  ExperimentConfig a = config_from_json(tiny_config(dir / "a"));
  RunOptions quiet;
  quiet.verbose = false;
  const RunSummary ra = run_pipeline(a, quiet);
  REQUIRE(ra.ok());
  CHECK(ra.cells_total == 4);
  CHECK(ra.cells_cached == 0);
  for (const char* f : {"results.csv", "summary.csv", "ttests.csv", "report.md", "manifest.json", "config.json"})
    CHECK(fs::exists(dir / "a" / f));
  const std::string results = slurp(dir / "a" / "results.csv");
  for (const auto& rec : parse_results_csv(results)) {
    CHECK(rec.config_hash == a.hash());
    CHECK(rec.seed == cell_seed(11, rec.subject_id, domain_from_string(rec.domain), rec.lag_ms, rec.window_ms, rec.model));
  }

  ExperimentConfig b = a;
  b.output_dir = dir / "b";
  run_pipeline(b, quiet);
  CHECK(slurp(dir / "b" / "results.csv") == results);

  const RunSummary again = run_pipeline(a, quiet);
  CHECK(again.cells_cached == again.cells_total);
  CHECK(slurp(dir / "a" / "results.csv") == results);

  // Removing an intermediate stage regenerates identical bytes.
  std::map<fs::path, std::string> before;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a" / "cache" / "features"))
    if (e.is_regular_file()) before[fs::relative(e.path(), dir / "a")] = slurp(e.path());
  REQUIRE_FALSE(before.empty());
  fs::remove_all(dir / "a" / "cache" / "features");
  fs::remove_all(dir / "a" / "cache" / "cells");
  const RunSummary rebuilt = run_pipeline(a, quiet);
  CHECK(rebuilt.cells_cached == 0);
  CHECK(slurp(dir / "a" / "results.csv") == results);
  for (const auto& [rel, bytes] : before) CHECK(slurp(dir / "a" / rel) == bytes);

  const json manifest = json::parse(slurp(dir / "a" / "manifest.json"));
  CHECK(manifest.at("config_hash") == a.hash());
}
