#include "esigal/config.hpp"
#include "esigal/container.hpp"
#include "esigal/mlr.hpp"
#include "esigal/nn/checkpoint.hpp"
#include "esigal/pipeline.hpp"
#include "esigal/report.hpp"
#include "esigal/session_io.hpp"
#include "esigal/source_imaging.hpp"
#include "esigal/synthetic.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;
using namespace esigal;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void need(const std::string& value, const char* flag) {
  if (value.empty()) throw std::invalid_argument(std::string("missing ") + flag);
}

ExperimentConfig config_or_default(const std::string& path) {
  if (path.empty()) {
    ExperimentConfig c;
    c.channels = default_sensor_channels();
    return c;
  }
  return load_config(path);
}

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG source-imaging and kinematics decoding pipeline"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config, "Experiment config (JSON)");
  app.add_option("--out", common.out, "Output path");
  app.add_option("--seed", common.seed, "Master seed");
  app.fallthrough();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate synthetic sessions with lead fields");
  SyntheticDataConfig sd;
  synth->add_option("--subjects", sd.n_subjects)->capture_default_str();
  synth->add_option("--trials", sd.n_trials)->capture_default_str();
  synth->add_option("--channels", sd.n_channels)->capture_default_str();
  synth->add_option("--sources", sd.n_sources)->capture_default_str();
  synth->add_option("--snr", sd.snr)->capture_default_str();
  synth->add_option("--trial-len-ms", sd.trial_len_ms)->capture_default_str();

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Filter, re-reference, decimate; optionally select sensor features");
  std::string session_dir;
  bool sensor = false;
  pre->add_option("--session", session_dir, "Session directory")->required();
  pre->add_flag("--sensor-features", sensor, "Select and z-score the configured channels");

  // esi
  auto* esi = app.add_subcommand("esi", "Build an inverse operator and apply it");
  std::string lf_stem, input, noise_stem, operator_out;
  std::optional<double> snr, lambda2;
  std::vector<std::string> rois;
  esi->add_option("--leadfield", lf_stem, "Lead-field stem")->required();
  esi->add_option("--input", input,
                  "EEG container stem (channels x samples) or a preprocessed feature-session directory");
  esi->add_option("--snr", snr, "Regularization by snr (default from config, else 3)");
  esi->add_option("--lambda2", lambda2, "Explicit regularization; overrides --snr");
  esi->add_option("--noise-cov", noise_stem, "Noise covariance stem (identity if omitted)");
  esi->add_option("--rois", rois, "ROI names; overrides the config list")->delimiter(',');
  esi->add_option("--operator-out", operator_out, "Write the inverse operator to this stem");

  // windows
  auto* win = app.add_subcommand("windows", "Cut lagged windows from a feature session");
  std::string feat_dir, split_mode = "intra";
  int lag = 100, window = 450;
  bool allow_fallback = false;
  std::string domain_name = "sensor";
  win->add_option("--features", feat_dir, "Feature-session directory")->required();
  win->add_option("--lag-ms", lag)->capture_default_str();
  win->add_option("--window-ms", window)->capture_default_str();
  win->add_option("--domain", domain_name)->check(CLI::IsMember({"sensor", "source"}))->capture_default_str();
  win->add_option("--split", split_mode, "intra (train/val/test) or none")
      ->check(CLI::IsMember({"intra", "none"}))
      ->capture_default_str();
  win->add_flag("--allow-split-fallback", allow_fallback, "Proportional split for fewer than 294 trials");

  // train
  auto* trn = app.add_subcommand("train", "Fit a decoder on windowed datasets");
  std::string train_stem, val_stem, model_label = "rEEGNet";
  trn->add_option("--train", train_stem, "Training dataset stem")->required();
  trn->add_option("--val", val_stem, "Validation dataset stem (neural models)");
  trn->add_option("--model", model_label)->check(CLI::IsMember({"mLR", "rSCNet", "rDCNet", "rEEGNet"}));
  nn::TrainConfig tc;
  trn->add_option("--max-epochs", tc.max_epochs)->capture_default_str();
  trn->add_option("--patience", tc.patience)->capture_default_str();
  trn->add_option("--batch", tc.batch)->capture_default_str();
  trn->add_option("--lr", tc.adam.lr)->capture_default_str();
  trn->add_flag("--verbose", tc.verbose);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "PCC of a trained decoder on a dataset");
  std::string model_dir, test_stem, subject = "S01";
  bool per_trial = false;
  ev->add_option("--model-dir", model_dir, "Output of `train`")->required();
  ev->add_option("--test", test_stem, "Test dataset stem")->required();
  ev->add_option("--subject", subject, "Subject id written to the result row")->capture_default_str();
  ev->add_flag("--pcc-per-trial-mean", per_trial, "Average per-trial PCCs instead of concatenating");

  // report
  auto* rep = app.add_subcommand("report", "Summaries, t-tests and markdown from results.csv");
  std::string results_path;
  std::vector<int> ttest_cell{100, 450};
  rep->add_option("--results", results_path, "results.csv")->required();
  rep->add_option("--ttest-cell", ttest_cell, "lag_ms,window_ms")->delimiter(',')->expected(2);

  // validate-config
  auto* val = app.add_subcommand("validate-config", "Check a config and its inputs without computing");
  bool print_schema = false;
  val->add_flag("--print-schema", print_schema, "Print the JSON schema instead");

  // run
  auto* run = app.add_subcommand("run", "Run the full experiment grid");
  std::optional<int> workers;
  run->add_option("--workers", workers, "Worker threads (capped by ESIGAL_WORKERS)");
  bool quiet = false;
  run->add_flag("--quiet", quiet);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      need(common.out, "--out");
      const std::uint64_t seed = common.seed.value_or(1);
      for (int i = 0; i < sd.n_subjects; ++i) {
        SyntheticConfig sc;
        sc.n_trials = sd.n_trials;
        sc.n_channels = sd.n_channels;
        sc.n_sources = sd.n_sources;
        sc.snr = sd.snr;
        sc.trial_len_ms = sd.trial_len_ms;
        char id[16];
        std::snprintf(id, sizeof id, "S%02d", i + 1);
        sc.subject_id = id;
        const auto gen = generate_synthetic_session(fnv1a64(std::to_string(seed) + "|synth|" + sc.subject_id), sc);
        const fs::path dir = fs::path(common.out) / id;
        save_session(dir, gen.session);
        save_leadfield(dir / "leadfield", gen.leadfield);
        std::cout << dir.string() << '\n';
      }
      return 0;
    }

    if (*pre) {
      need(common.out, "--out");
      const auto cfg = config_or_default(common.config);
      const RawSession raw = load_session(session_dir);
      FeatureSession fs = preprocess_session(raw, cfg.preprocess, load_component_rejection(session_dir));
      if (sensor) fs = sensor_features(fs, cfg.channels);
      save_feature_session(common.out, fs, "eeg");
      std::cout << common.out << '\n';
      return 0;
    }

    if (*esi) {
      const auto cfg = config_or_default(common.config);
      const LeadField lf = load_leadfield(lf_stem);
      const Matrix noise = noise_stem.empty() ? Matrix() : load_matrix<double>(noise_stem).first;
      const std::vector<std::string> roi_list = rois.empty() ? cfg.rois : rois;
      const double s = snr.value_or(cfg.inverse.snr);
      if (!input.empty() && fs::is_directory(input)) {
        // Preprocessed session: average-referenced operator, z-scored ROI features.
        need(common.out, "--out");
        if (roi_list.empty()) throw std::invalid_argument("feature-session input needs --rois or a config ROI list");
        const FeatureSession p = load_feature_session(input);
        const FeatureSession f =
            source_features(p, build_roi_operator(lf, roi_list, s, noise), lf.channel_names, roi_list);
        save_feature_session(common.out, f, "roi");
        std::cout << common.out << '\n';
        return 0;
      }
      const InverseOperator op =
          lambda2 ? compute_inverse_operator_lambda(lf, noise, *lambda2) : compute_inverse_operator(lf, noise, s);
      if (!operator_out.empty()) save_inverse_operator(operator_out, op);
      if (!input.empty()) {
        need(common.out, "--out");
        auto [e, meta] = load_matrix<double>(input);
        const auto names = meta.channel_names.empty() ? lf.channel_names : meta.channel_names;
        const Matrix src = apply_inverse(op, e, names);
        MatrixMeta m;
        m.fs_hz = meta.fs_hz;
        if (roi_list.empty()) {
          m.role = "source";
          save_matrix(common.out, src, m);
        } else {
          const RoiSeries r = roi_reduce(src, lf, roi_list, meta.fs_hz.value_or(0.0), op.retained);
          m.role = "roi";
          m.channel_names = r.roi_names;
          save_matrix(common.out, r.data, m);
        }
        std::cout << common.out << '\n';
      }
      std::printf("lambda2 %.6g, %lld sources, %lld channels\n", op.lambda2, static_cast<long long>(op.n_sources()),
                  static_cast<long long>(op.n_channels()));
      return 0;
    }

    if (*win) {
      need(common.out, "--out");
      const Domain d = domain_from_string(domain_name);
      const FeatureSession f = load_feature_session(feat_dir);
      const auto trials = segment_trials(f);
      const fs::path out = common.out;
      fs::create_directories(out);
      const json prov = {{"subject", f.subject_id}, {"split", split_mode}};
      if (split_mode == "none") {
        std::vector<Index> all(trials.size());
        std::iota(all.begin(), all.end(), Index{0});
        save_dataset(out / "all", build_dataset(trials, all, lag, window, d), prov);
      } else {
        const std::uint64_t seed = common.seed.value_or(1);
        const auto sp = split_intra(static_cast<Index>(trials.size()), seed, allow_fallback);
        for (const auto& [name, idx] : {std::pair{"train", sp.train}, {"val", sp.val}, {"test", sp.test}}) {
          json p = prov;
          p["part"] = name;
          p["seed"] = seed;
          save_dataset(out / name, build_dataset(trials, idx, lag, window, d), p);
        }
      }
      std::cout << out.string() << '\n';
      return 0;
    }

    if (*trn) {
      need(common.out, "--out");
      const WindowedDataset train = load_dataset(train_stem);
      const fs::path out = common.out;
      fs::create_directories(out);
      if (model_label == "mLR") {
        const MlrModel m = mlr_fit(train.inputs, train.targets);
        Matrix packed(m.coef.rows() + 1, 3);
        packed << m.coef, m.intercept.transpose();
        MatrixMeta meta;
        meta.role = "operator";
        meta.extra = {{"label", "mLR"}, {"layout", "coef rows then intercept row"}};
        save_matrix(out / "mlr", packed, meta);
        std::ofstream(out / "model.json") << json{{"label", "mLR"}}.dump(2) << '\n';
      } else {
        need(val_stem, "--val");
        const WindowedDataset v = load_dataset(val_stem);
        const auto r = fit_and_evaluate(model_label, train, v, {}, tc, common.seed.value_or(1), false, out);
        std::printf("%s: %d epochs, best %d (%s)\n", model_label.c_str(), r.epochs, r.best_epoch,
                    r.stop_reason.c_str());
      }
      std::cout << out.string() << '\n';
      return 0;
    }

    if (*ev) {
      json prov;
      const WindowedDataset test = load_dataset(test_stem, &prov);
      const json mj = json::parse(slurp(fs::path(model_dir) / "model.json"));
      std::string label;
      Predictor pred;
      MlrModel mlr;
      std::optional<nn::Model<double>> net;
      if (mj.value("label", "") == "mLR") {
        label = "mLR";
        const Matrix packed = load_matrix<double>(fs::path(model_dir) / "mlr").first;
        mlr.coef = packed.topRows(packed.rows() - 1);
        mlr.intercept = packed.bottomRows(1).transpose();
        pred = [&](const RowMatrix& x) { return mlr_predict(mlr, x); };
      } else {
        json extra;
        net.emplace(nn::load_checkpoint<double>(model_dir, &extra));
        label = extra.value("label", "rEEGNet");
        pred = [&](const RowMatrix& x) { return net->predict(x); };
      }
      const Pcc3 p = evaluate_model(pred, test, per_trial);
      ResultRecord rec;
      rec.subject_id = prov.value("subject", subject);
      rec.domain = to_string(test.domain);
      rec.model = label;
      rec.lag_ms = test.lag_ms;
      rec.window_ms = test.window_ms;
      rec.split = "intra";
      rec.pcc_x = p[0];
      rec.pcc_y = p[1];
      rec.pcc_z = p[2];
      rec.seed = prov.value("seed", std::uint64_t{0});
      const std::string csv = results_csv({rec});
      if (!common.out.empty()) {
        std::ofstream f(common.out, std::ios::binary);
        f << csv;
      }
      std::cout << csv;
      return 0;
    }

    if (*rep) {
      need(common.out, "--out");
      const auto records = parse_results_csv(slurp(results_path));
      for (const auto& p : write_reports(common.out, records, ttest_cell.at(0), ttest_cell.at(1)))
        std::cout << p.string() << '\n';
      return 0;
    }

    if (*val) {
      if (print_schema) {
        std::cout << config_schema().dump(2) << '\n';
        return 0;
      }
      need(common.config, "--config");
      const auto cfg = load_config(common.config);
      cfg.validate_inputs();
      std::cout << "OK " << cfg.name << " (hash " << cfg.hash() << ")\n";
      return 0;
    }

    if (*run) {
      need(common.config, "--config");
      auto cfg = load_config(common.config);
      if (!common.out.empty()) cfg.output_dir = common.out;
      if (common.seed) cfg.seed = *common.seed;
      RunOptions opts;
      opts.verbose = !quiet;
      opts.workers = workers;
      const RunSummary s = run_pipeline(cfg, opts);
      std::cout << (s.run_dir / "results.csv").string() << '\n';
      if (!s.ok()) {
        std::cerr << s.cells_failed << " of " << s.cells_total << " cells failed; see manifest.json\n";
        return 2;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
