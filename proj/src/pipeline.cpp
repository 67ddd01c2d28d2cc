#include "esigal/pipeline.hpp"

#include "esigal/container.hpp"
#include "esigal/fir.hpp"
#include "esigal/mlr.hpp"
#include "esigal/nn/checkpoint.hpp"
#include "esigal/nn/train.hpp"
#include "esigal/preprocess.hpp"
#include "esigal/report.hpp"
#include "esigal/synthetic.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace esigal {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- stages

FeatureSession preprocess_session(const RawSession& raw, const PreprocessConfig& cfg,
                                  const std::optional<ComponentRejection>& ica) {
  raw.validate();
  if (raw.kin_fs != raw.eeg_fs) throw std::invalid_argument(raw.subject_id + ": EEG and kinematics rates differ");
  const double out_fs = raw.eeg_fs / cfg.decimate;
  if (std::abs(out_fs - 100.0) > 1e-9)
    throw std::invalid_argument(raw.subject_id + ": decimation must land on 100 Hz (eeg_fs " +
                                std::to_string(raw.eeg_fs) + ")");

  const FirFilter bp = design_fir_bandpass(cfg.band_lo, cfg.band_hi, raw.eeg_fs, cfg.transition_bw);
  Matrix eeg = common_average_reference(filtfilt_rows(bp, raw.eeg));
  if (ica) eeg = reject_components(eeg, ica->unmixing, ica->mixing, ica->reject);

  const Matrix kin_lp = lowpass_kinematics(raw.kin, raw.kin_fs, {cfg.kin_cutoff, cfg.kin_transition_bw});
  auto [kin_n, stats] = minmax_normalize(kin_lp);

  FeatureSession out;
  out.subject_id = raw.subject_id;
  out.fs = out_fs;
  out.feat = decimate(eeg, cfg.decimate);
  out.kin = decimate(kin_n, cfg.decimate);
  out.feature_names = raw.eeg_channel_names;
  for (const auto& m : raw.trials) {
    TrialMarker t = m;
    t.onset_sample = static_cast<Index>(std::llround(static_cast<double>(m.onset_sample) / cfg.decimate));
    t.return_sample = static_cast<Index>(std::llround(static_cast<double>(m.return_sample) / cfg.decimate));
    out.trials.push_back(t);
  }
  return out;
}

namespace {

// Marker indices that segment_trials keeps, in order.
std::vector<Index> kept_markers(const FeatureSession& s, Index pre_onset) {
  std::vector<Index> kept;
  for (std::size_t m = 0; m < s.trials.size(); ++m) {
    const auto& mk = s.trials[m];
    if (mk.onset_sample >= pre_onset && mk.return_sample > mk.onset_sample && mk.return_sample < s.kin.cols())
      kept.push_back(static_cast<Index>(m));
  }
  return kept;
}

Matrix select_rows(const Matrix& x, const std::vector<std::string>& have, const std::vector<std::string>& want,
                   const std::string& what) {
  Matrix out(static_cast<Index>(want.size()), x.cols());
  for (std::size_t r = 0; r < want.size(); ++r) {
    const auto it = std::find(have.begin(), have.end(), want[r]);
    if (it == have.end()) throw std::invalid_argument("unknown " + what + " '" + want[r] + "'");
    out.row(static_cast<Index>(r)) = x.row(it - have.begin());
  }
  return out;
}

FeatureSession with_features(const FeatureSession& pre, Matrix feat, std::vector<std::string> names,
                             const std::vector<Index>& zscore_columns) {
  const NormStats stats = zscore_stats(feat, zscore_columns);
  FeatureSession out;
  out.subject_id = pre.subject_id;
  out.fs = pre.fs;
  out.kin = pre.kin;
  out.trials = pre.trials;
  out.feat = zscore_apply(feat, stats);
  out.feature_names = std::move(names);
  return out;
}

}  // namespace

std::vector<Index> trial_columns(const FeatureSession& session, const std::vector<Index>& trial_subset,
                                 Index pre_onset) {
  const auto kept = kept_markers(session, pre_onset);
  std::vector<char> used(static_cast<std::size_t>(session.feat.cols()), 0);
  for (Index t : trial_subset) {
    if (t < 0 || t >= static_cast<Index>(kept.size())) throw std::out_of_range("trial index out of range");
    const auto& mk = session.trials[static_cast<std::size_t>(kept[static_cast<std::size_t>(t)])];
    for (Index c = mk.onset_sample - pre_onset; c <= mk.return_sample; ++c) used[static_cast<std::size_t>(c)] = 1;
  }
  std::vector<Index> cols;
  for (std::size_t c = 0; c < used.size(); ++c)
    if (used[c]) cols.push_back(static_cast<Index>(c));
  return cols;
}

FeatureSession sensor_features(const FeatureSession& pre, const std::vector<std::string>& channels,
                               const std::vector<Index>& zscore_columns) {
  return with_features(pre, select_rows(pre.feat, pre.feature_names, channels, "channel"), channels, zscore_columns);
}

Matrix build_roi_operator(const LeadField& lf, const std::vector<std::string>& rois, double snr,
                          const Matrix& noise_cov) {
  const LeadField avg = average_reference(lf);
  return roi_inverse_operator(compute_inverse_operator(avg, noise_cov, snr), avg, rois);
}

FeatureSession source_features(const FeatureSession& pre, const Matrix& roi_op,
                               const std::vector<std::string>& lf_channels, const std::vector<std::string>& rois,
                               const std::vector<Index>& zscore_columns) {
  if (roi_op.cols() != static_cast<Index>(lf_channels.size()) || roi_op.rows() != static_cast<Index>(rois.size()))
    throw std::invalid_argument("ROI operator shape does not match its channel and ROI lists");
  const Matrix e = select_rows(pre.feat, pre.feature_names, lf_channels, "lead-field channel");
  return with_features(pre, roi_op * e, rois, zscore_columns);
}

void quantize(FeatureSession& fs) {
  fs.feat = fs.feat.cast<float>().cast<double>();
  fs.kin = fs.kin.cast<float>().cast<double>();
}

std::uint64_t cell_seed(std::uint64_t master, const std::string& unit, Domain domain, int lag_ms, int window_ms,
                        const std::string& model) {
  std::ostringstream s;
  s << master << '|' << unit << '|' << to_string(domain) << '|' << lag_ms << '|' << window_ms << '|' << model;
  return fnv1a64(s.str());
}

// ---------------------------------------------------------------- models

FitResult fit_and_evaluate(const std::string& model, const WindowedDataset& train, const WindowedDataset& val,
                           const std::vector<const WindowedDataset*>& tests, const nn::TrainConfig& tc,
                           std::uint64_t seed, bool per_trial_mean,
                           const std::optional<fs::path>& checkpoint_dir) {
  FitResult r;
  if (train.size() == 0) throw std::invalid_argument("empty training set");
  if (model == "mLR") {
    const MlrModel m = mlr_fit(train.inputs, train.targets);
    const Predictor pred = [&](const RowMatrix& x) { return mlr_predict(m, x); };
    for (const auto* t : tests) r.pcc.push_back(evaluate_model(pred, *t, per_trial_mean));
    r.stop_reason = "closed_form";
    return r;
  }
  nn::Arch arch;
  if (model == "rEEGNet") arch = nn::Arch::rEEGNet;
  else if (model == "rDCNet") arch = nn::Arch::rDeepConvNet;
  else if (model == "rSCNet") arch = nn::Arch::rShallowConvNet;
  else throw std::invalid_argument("unknown model '" + model + "'");

  nn::Model<double> net(nn::build_model(arch, train.channels, train.window));
  nn::TrainConfig cfg = tc;
  cfg.seed = seed;
  const nn::TrainHistory h = nn::train_model(net, train, val, cfg);
  r.epochs = h.epochs_run;
  r.best_epoch = h.best_epoch;
  r.stop_reason = h.stop_reason;
  if (checkpoint_dir)
    nn::save_checkpoint(*checkpoint_dir, net,
                        {{"label", model}, {"seed", seed}, {"best_epoch", h.best_epoch}, {"epochs", h.epochs_run}});
  const Predictor pred = [&](const RowMatrix& x) { return net.predict(x); };
  for (const auto* t : tests) r.pcc.push_back(evaluate_model(pred, *t, per_trial_mean));
  return r;
}

// ---------------------------------------------------------------- runner

int effective_workers(int requested) {
  int n = std::max(1, requested);
  if (const char* env = std::getenv("ESIGAL_WORKERS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1) n = std::min(n, cap);
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string("ESIGAL_WORKERS is not an integer: ") + env);
    }
  }
  return n;
}

namespace {

std::uint64_t hash_file(const fs::path& p, std::uint64_t h = 0xcbf29ce484222325ULL) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string hash_stem(const fs::path& stem) {
  return hex64(hash_file(data_path(stem), hash_file(meta_path(stem))));
}

// Content hash of every regular file directly inside `dir`, sorted by name.
std::string hash_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    h = fnv1a64(hex64(h) + f.filename().string());
    h = hash_file(f, h);
  }
  return hex64(h);
}

std::string key_of(const json& j) { return hex64(fnv1a64(j.dump())); }

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    f << text;
    if (!f) throw std::runtime_error("cannot write " + p.string());
  }
  fs::rename(tmp, p);
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  return json::parse(f);
}

// Builds `dir` through a temporary sibling so a crash never leaves a
// half-written stage behind.
template <typename Fn>
void build_dir(const fs::path& dir, Fn&& fill) {
  const fs::path tmp = dir.string() + ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  fill(tmp);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  const int extra = std::min<int>(workers, static_cast<int>(n)) - 1;
  std::vector<std::thread> pool;
  for (int t = 0; t < extra; ++t) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
}

struct SubjectInput {
  std::string id;
  fs::path dir;
  fs::path leadfield;
};

struct SubjectFeatures {
  std::string error;
  std::map<Domain, std::string> key;  // feature cache key per domain
  std::map<Domain, FeatureSession> features;
  std::optional<IntraSplit> intra;
};

struct CellSpec {
  std::string unit;  // subject id (intra) or inter-fold-k
  std::string split;
  Domain domain;
  int lag_ms;
  int window_ms;
  std::string model;
  std::uint64_t seed;
  std::string key;
  std::vector<std::string> test_subjects;
};

class Log {
 public:
  explicit Log(bool on) : on_(on), t0_(std::chrono::steady_clock::now()) {}
  void operator()(const std::string& msg) {
    if (!on_) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    std::lock_guard lock(mu_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "[%8.1fs] ", s);
    std::cerr << buf << msg << '\n';
  }

 private:
  bool on_;
  std::chrono::steady_clock::time_point t0_;
  std::mutex mu_;
};

std::vector<SubjectInput> resolve_subjects(const ExperimentConfig& cfg, const fs::path& cache, Log& log,
                                           std::vector<std::string>& stage_keys) {
  std::vector<SubjectInput> out;
  if (cfg.data.synthetic) {
    const auto& s = *cfg.data.synthetic;
    const json spec = {{"generator", "synthetic-v2"}, {"seed", cfg.seed},         {"n_subjects", s.n_subjects},
                       {"n_trials", s.n_trials},      {"n_channels", s.n_channels}, {"n_sources", s.n_sources},
                       {"snr", s.snr},                {"trial_len_ms", s.trial_len_ms}};
    const std::string key = key_of(spec);
    const fs::path root = cache / "synth" / key;
    stage_keys.push_back("synth/" + key);
    std::vector<std::string> ids;
    for (int i = 0; i < s.n_subjects; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "S%02d", i + 1);
      ids.emplace_back(buf);
    }
    if (!fs::exists(root / "done.json")) {
      log("generating " + std::to_string(s.n_subjects) + " synthetic subjects");
      build_dir(root, [&](const fs::path& tmp) {
        for (int i = 0; i < s.n_subjects; ++i) {
          SyntheticConfig sc;
          sc.n_trials = s.n_trials;
          sc.n_channels = s.n_channels;
          sc.n_sources = s.n_sources;
          sc.snr = s.snr;
          sc.trial_len_ms = s.trial_len_ms;
          sc.subject_id = ids[static_cast<std::size_t>(i)];
          const auto gen = generate_synthetic_session(fnv1a64(std::to_string(cfg.seed) + "|synth|" + sc.subject_id), sc);
          save_session(tmp / sc.subject_id, gen.session);
          save_leadfield(tmp / sc.subject_id / "leadfield", gen.leadfield);
        }
        write_text(tmp / "done.json", spec.dump(2) + "\n");
      });
    }
    for (const auto& id : ids) out.push_back({id, root / id, root / id / "leadfield"});
    return out;
  }
  std::set<std::string> seen;
  for (const auto& dir : cfg.data.sessions) {
    const std::string id = read_json(dir / "session.json").at("subject_id").get<std::string>();
    if (!seen.insert(id).second) throw std::invalid_argument("duplicate subject id '" + id + "'");
    out.push_back({id, dir, cfg.data.leadfield ? *cfg.data.leadfield : dir / "leadfield"});
  }
  return out;
}

json fit_to_json(const CellSpec& c, const FitResult& r) {
  json recs = json::array();
  for (std::size_t i = 0; i < r.pcc.size(); ++i)
    recs.push_back({{"subject", c.test_subjects[i]}, {"pcc", {r.pcc[i][0], r.pcc[i][1], r.pcc[i][2]}}});
  return {{"unit", c.unit},       {"split", c.split},       {"domain", to_string(c.domain)},
          {"lag_ms", c.lag_ms},   {"window_ms", c.window_ms}, {"model", c.model},
          {"seed", c.seed},       {"records", recs},        {"epochs", r.epochs},
          {"best_epoch", r.best_epoch}, {"stop_reason", r.stop_reason}};
}

}  // namespace

std::vector<fs::path> write_reports(const fs::path& dir, const std::vector<ResultRecord>& records, int ttest_lag_ms,
                                    int ttest_window_ms) {
  fs::create_directories(dir);
  const Report report = aggregate_report(records);
  std::vector<std::string> skipped;
  const auto tt = run_ttests(records, ttest_lag_ms, ttest_window_ms, &skipped);
  std::string md = render_markdown(report, tt);
  if (!skipped.empty()) {
    md += "\n## Skipped comparisons\n\n";
    for (const auto& s : skipped) md += "- " + s + "\n";
  }
  const std::vector<std::pair<std::string, std::string>> files = {
      {"results.csv", results_csv(records)},
      {"summary.csv", summary_csv(report)},
      {"ttests.csv", ttests_csv(tt)},
      {"report.md", md},
  };
  std::vector<fs::path> written;
  for (const auto& [name, text] : files) {
    write_text(dir / name, text);
    written.push_back(dir / name);
  }
  return written;
}

RunSummary run_pipeline(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate_inputs();
  Log log(opts.verbose);
  const int workers = effective_workers(opts.workers.value_or(cfg.workers));
  const std::string config_hash = cfg.hash();
  const fs::path out = cfg.output_dir;
  const fs::path cache = out / "cache";
  fs::create_directories(cache);
  write_text(out / "config.json", to_json(cfg).dump(2) + "\n");

  std::vector<std::string> stage_keys;
  const auto subjects = resolve_subjects(cfg, cache, log, stage_keys);
  const bool intra = cfg.split == SplitMode::intra;
  const json pre_cfg = to_json(cfg).at("preprocess");

  // Preprocessing and features, one task per subject.
  std::vector<SubjectFeatures> feats(subjects.size());
  std::mutex key_mu;
  Matrix noise_cov;
  std::string noise_key = "identity";
  if (cfg.inverse.noise_cov) {
    noise_cov = load_matrix<double>(*cfg.inverse.noise_cov).first;
    noise_key = hash_stem(*cfg.inverse.noise_cov);
  }
  parallel_for(subjects.size(), workers, [&](std::size_t i) {
    const auto& subj = subjects[i];
    auto& sf = feats[i];
    try {
      const std::string pre_key = key_of({{"raw", hash_dir(subj.dir)}, {"preprocess", pre_cfg}});
      const fs::path pre_dir = cache / "preprocessed" / pre_key;
      if (!fs::exists(pre_dir / "features.json")) {
        log(subj.id + ": preprocessing");
        const RawSession raw = load_session(subj.dir);
        FeatureSession pre = preprocess_session(raw, cfg.preprocess, load_component_rejection(subj.dir));
        build_dir(pre_dir, [&](const fs::path& tmp) { save_feature_session(tmp, pre, "eeg"); });
      }
      const FeatureSession pre = load_feature_session(pre_dir);

      std::vector<Index> zcols;
      std::string split_desc = "session";
      if (intra) {
        const auto n = static_cast<Index>(kept_markers(pre, kPreOnsetSamples).size());
        sf.intra = split_intra(n, fnv1a64(std::to_string(cfg.seed) + "|split|" + subj.id), cfg.allow_split_fallback);
        if (cfg.preprocess.zscore_scope == ZscoreScope::train) {
          zcols = trial_columns(pre, sf.intra->train);
          split_desc = key_of(sf.intra->train);
        }
      }
      std::vector<std::string> keys{"preprocessed/" + pre_key};
      for (Domain d : cfg.domains) {
        json spec = {{"pre", pre_key}, {"domain", to_string(d)}, {"zscore", split_desc}};
        if (d == Domain::sensor) {
          spec["channels"] = cfg.channels;
        } else {
          spec["rois"] = cfg.rois;
          spec["leadfield"] = hash_stem(subj.leadfield);
          spec["snr"] = cfg.inverse.snr;
          spec["noise_cov"] = noise_key;
        }
        const std::string fkey = key_of(spec);
        const fs::path fdir = cache / "features" / fkey;
        if (!fs::exists(fdir / "features.json")) {
          log(subj.id + ": " + to_string(d) + " features");
          FeatureSession f;
          if (d == Domain::sensor) {
            f = sensor_features(pre, cfg.channels, zcols);
          } else {
            const LeadField lf = load_leadfield(subj.leadfield);
            f = source_features(pre, build_roi_operator(lf, cfg.rois, cfg.inverse.snr, noise_cov), lf.channel_names,
                                cfg.rois, zcols);
          }
          build_dir(fdir, [&](const fs::path& tmp) { save_feature_session(tmp, f, d == Domain::sensor ? "eeg" : "roi"); });
        }
        sf.key[d] = fkey;
        sf.features[d] = load_feature_session(fdir);
        keys.push_back("features/" + fkey);
      }
      std::lock_guard lock(key_mu);
      stage_keys.insert(stage_keys.end(), keys.begin(), keys.end());
    } catch (const std::exception& e) {
      sf.error = e.what();
      log(subj.id + ": FAILED " + sf.error);
    }
  });
  std::sort(stage_keys.begin(), stage_keys.end());
  stage_keys.erase(std::unique(stage_keys.begin(), stage_keys.end()), stage_keys.end());

  // Units: subjects (intra) or folds (inter).
  struct Unit {
    std::string name, split;
    std::vector<std::size_t> train, test;  // subject indices
  };
  std::vector<Unit> units;
  std::vector<std::string> ids;
  for (const auto& s : subjects) ids.push_back(s.id);
  if (intra) {
    for (std::size_t i = 0; i < subjects.size(); ++i) units.push_back({subjects[i].id, "intra", {i}, {i}});
  } else {
    const auto folds = split_inter(ids, cfg.allow_split_fallback);
    auto index_of = [&](const std::string& id) {
      return static_cast<std::size_t>(std::find(ids.begin(), ids.end(), id) - ids.begin());
    };
    for (std::size_t k = 0; k < folds.size(); ++k) {
      Unit u{"inter-fold-" + std::to_string(k + 1), "inter-fold-" + std::to_string(k + 1), {}, {}};
      for (const auto& id : folds[k].train_subjects) u.train.push_back(index_of(id));
      for (const auto& id : folds[k].test_subjects) u.test.push_back(index_of(id));
      units.push_back(std::move(u));
    }
  }

  // Inter-subject validation trials: 10% of each training subject.
  auto inter_val = [&](std::size_t subj, Index n) {
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 rng(fnv1a64(std::to_string(cfg.seed) + "|inter-val|" + subjects[subj].id));
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = std::max<Index>(1, static_cast<Index>(std::llround(0.1 * static_cast<double>(n))));
    std::vector<Index> val(order.begin(), order.begin() + n_val), train(order.begin() + n_val, order.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    return std::pair{train, val};
  };

  const json train_json = to_json(cfg).at("train");
  struct Group {
    std::size_t unit;
    Domain domain;
    int lag, window;
    std::vector<CellSpec> cells;
  };
  std::vector<Group> groups;
  for (std::size_t u = 0; u < units.size(); ++u)
    for (Domain d : cfg.domains)
      for (int lag : cfg.lags_ms)
        for (int w : cfg.windows_ms) {
          Group g{u, d, lag, w, {}};
          for (const auto& m : cfg.models) {
            CellSpec c;
            c.unit = units[u].name;
            c.split = units[u].split;
            c.domain = d;
            c.lag_ms = lag;
            c.window_ms = w;
            c.model = m;
            c.seed = cell_seed(cfg.seed, c.unit, d, lag, w, m);
            for (auto s : units[u].test) c.test_subjects.push_back(subjects[s].id);
            json spec = {{"unit", c.unit},   {"domain", to_string(d)}, {"lag", lag},
                         {"window", w},      {"model", m},             {"seed", c.seed},
                         {"train", train_json}, {"per_trial_mean", cfg.evaluation.pcc_per_trial_mean},
                         {"split_seed", cfg.seed}};
            json inputs = json::array();
            for (auto s : units[u].train)
              inputs.push_back(feats[s].key.count(d) ? feats[s].key.at(d) : "missing:" + subjects[s].id);
            for (auto s : units[u].test)
              inputs.push_back(feats[s].key.count(d) ? feats[s].key.at(d) : "missing:" + subjects[s].id);
            spec["inputs"] = inputs;
            c.key = key_of(spec);
            g.cells.push_back(std::move(c));
          }
          groups.push_back(std::move(g));
        }

  struct CellOutcome {
    bool ok = false;
    bool cached = false;
    std::string error;
    json result;
  };
  std::vector<std::vector<CellOutcome>> outcomes(groups.size());
  std::atomic<int> done_groups{0};

  parallel_for(groups.size(), workers, [&](std::size_t gi) {
    const Group& g = groups[gi];
    auto& oc = outcomes[gi];
    oc.resize(g.cells.size());
    const Unit& unit = units[g.unit];
    std::vector<std::size_t> todo;
    for (std::size_t m = 0; m < g.cells.size(); ++m) {
      const fs::path res = cache / "cells" / g.cells[m].key / "result.json";
      if (fs::exists(res)) {
        oc[m].ok = oc[m].cached = true;
        oc[m].result = read_json(res);
      } else {
        todo.push_back(m);
      }
    }
    const std::string where = unit.name + " " + to_string(g.domain) + " lag " + std::to_string(g.lag) + " window " +
                              std::to_string(g.window);
    if (!todo.empty()) {
      try {
        for (auto s : unit.train)
          if (!feats[s].error.empty()) throw std::runtime_error(subjects[s].id + ": " + feats[s].error);
        for (auto s : unit.test)
          if (!feats[s].error.empty()) throw std::runtime_error(subjects[s].id + ": " + feats[s].error);

        WindowedDataset train, val;
        std::vector<WindowedDataset> tests;
        if (intra) {
          const auto s = unit.train.front();
          const auto trials = segment_trials(feats[s].features.at(g.domain));
          const auto& sp = *feats[s].intra;
          train = build_dataset(trials, sp.train, g.lag, g.window, g.domain);
          val = build_dataset(trials, sp.val, g.lag, g.window, g.domain);
          tests.push_back(build_dataset(trials, sp.test, g.lag, g.window, g.domain));
        } else {
          bool first = true;
          for (auto s : unit.train) {
            const auto trials = segment_trials(feats[s].features.at(g.domain));
            const auto [tr, va] = inter_val(s, static_cast<Index>(trials.size()));
            auto a = build_dataset(trials, tr, g.lag, g.window, g.domain);
            auto b = build_dataset(trials, va, g.lag, g.window, g.domain);
            if (first) {
              train = std::move(a);
              val = std::move(b);
              first = false;
            } else {
              append_dataset(train, a);
              append_dataset(val, b);
            }
          }
          for (auto s : unit.test) {
            const auto trials = segment_trials(feats[s].features.at(g.domain));
            std::vector<Index> all(trials.size());
            std::iota(all.begin(), all.end(), Index{0});
            tests.push_back(build_dataset(trials, all, g.lag, g.window, g.domain));
          }
        }
        std::vector<const WindowedDataset*> test_ptrs;
        for (const auto& t : tests) test_ptrs.push_back(&t);

        for (auto m : todo) {
          const CellSpec& c = g.cells[m];
          const auto t0 = std::chrono::steady_clock::now();
          try {
            const fs::path cdir = cache / "cells" / c.key;
            FitResult r;
            build_dir(cdir, [&](const fs::path& tmp) {
              r = fit_and_evaluate(c.model, train, val, test_ptrs, cfg.train, c.seed,
                                   cfg.evaluation.pcc_per_trial_mean,
                                   c.model == "mLR" ? std::nullopt : std::optional<fs::path>(tmp / "checkpoint"));
              write_text(tmp / "result.json", fit_to_json(c, r).dump(2) + "\n");
            });
            oc[m].ok = true;
            oc[m].result = read_json(cdir / "result.json");
            char buf[160];
            std::snprintf(buf, sizeof buf, " %s: pcc %.3f/%.3f/%.3f, %d epochs, %.1fs", c.model.c_str(),
                          r.pcc[0][0], r.pcc[0][1], r.pcc[0][2], r.epochs,
                          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
            log(where + buf);
          } catch (const std::exception& e) {
            oc[m].error = e.what();
            log(where + " " + c.model + ": FAILED " + oc[m].error);
          }
        }
      } catch (const std::exception& e) {
        for (auto m : todo) oc[m].error = e.what();
        log(where + ": FAILED " + std::string(e.what()));
      }
    }
    const int n = ++done_groups;
    log("cell group " + std::to_string(n) + "/" + std::to_string(groups.size()) + " done (" + where + ")");
  });

  // Collect records and the manifest in grid order.
  RunSummary summary;
  summary.run_dir = out;
  json cells = json::array();
  for (std::size_t gi = 0; gi < groups.size(); ++gi)
    for (std::size_t m = 0; m < groups[gi].cells.size(); ++m) {
      const auto& c = groups[gi].cells[m];
      const auto& o = outcomes[gi][m];
      ++summary.cells_total;
      json entry = {{"unit", c.unit},   {"domain", to_string(c.domain)}, {"lag_ms", c.lag_ms},
                    {"window_ms", c.window_ms}, {"model", c.model}, {"seed", c.seed},
                    {"key", c.key},     {"status", o.ok ? "ok" : "failed"}};
      if (!o.ok) {
        ++summary.cells_failed;
        entry["error"] = o.error;
      } else {
        if (o.cached) ++summary.cells_cached;
        entry["result"] = "cache/cells/" + c.key + "/result.json";
        if (c.model != "mLR") entry["checkpoint"] = "cache/cells/" + c.key + "/checkpoint";
        for (const auto& r : o.result.at("records")) {
          ResultRecord rec;
          rec.subject_id = r.at("subject").get<std::string>();
          rec.domain = to_string(c.domain);
          rec.model = c.model;
          rec.lag_ms = c.lag_ms;
          rec.window_ms = c.window_ms;
          rec.split = c.split;
          rec.pcc_x = r.at("pcc")[0].get<double>();
          rec.pcc_y = r.at("pcc")[1].get<double>();
          rec.pcc_z = r.at("pcc")[2].get<double>();
          rec.seed = c.seed;
          rec.config_hash = config_hash;
          rec.validate();
          summary.records.push_back(rec);
        }
      }
      cells.push_back(entry);
    }

  const auto reports =
      write_reports(out, summary.records, cfg.evaluation.ttest_lag_ms, cfg.evaluation.ttest_window_ms);
  json artifacts = json::array();
  artifacts.push_back({{"path", "config.json"}, {"fnv1a64", hex64(hash_file(out / "config.json"))}});
  for (const auto& p : reports)
    artifacts.push_back({{"path", p.filename().string()}, {"fnv1a64", hex64(hash_file(p))}});
  json subj_errors = json::object();
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (!feats[i].error.empty()) subj_errors[subjects[i].id] = feats[i].error;
  const json manifest = {{"name", cfg.name},
                         {"config_hash", config_hash},
                         {"seed", cfg.seed},
                         {"subjects", ids},
                         {"stages", stage_keys},
                         {"subject_errors", subj_errors},
                         {"cells_total", summary.cells_total},
                         {"cells_failed", summary.cells_failed},
                         {"cells", cells},
                         {"artifacts", artifacts}};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  log("done: " + std::to_string(summary.cells_total - summary.cells_failed) + "/" +
      std::to_string(summary.cells_total) + " cells ok (" + std::to_string(summary.cells_cached) + " from cache)");
  return summary;
}

}  // namespace esigal
