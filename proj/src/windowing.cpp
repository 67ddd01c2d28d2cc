#include "esigal/windowing.hpp"

#include "esigal/container.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace esigal {

std::string to_string(Domain d) { return d == Domain::sensor ? "sensor" : "source"; }

Domain domain_from_string(const std::string& s) {
  if (s == "sensor") return Domain::sensor;
  if (s == "source") return Domain::source;
  throw std::invalid_argument("unknown domain '" + s + "'");
}

namespace {

nlohmann::json markers_to_json(const std::vector<TrialMarker>& trials) {
  auto arr = nlohmann::json::array();
  for (const auto& t : trials)
    arr.push_back({{"onset_sample", t.onset_sample},
                   {"return_sample", t.return_sample},
                   {"weight_grams", t.weight_grams},
                   {"surface", to_string(t.surface)}});
  return arr;
}

std::vector<TrialMarker> markers_from_json(const nlohmann::json& arr) {
  std::vector<TrialMarker> out;
  for (const auto& j : arr)
    out.push_back({j.at("onset_sample").get<Index>(), j.at("return_sample").get<Index>(), j.at("weight_grams").get<int>(),
                   surface_from_string(j.at("surface").get<std::string>())});
  return out;
}

}  // namespace

void save_feature_session(const std::filesystem::path& dir, const FeatureSession& fs, const std::string& role) {
  std::filesystem::create_directories(dir);
  MatrixMeta fm;
  fm.role = role;
  fm.fs_hz = fs.fs;
  fm.channel_names = fs.feature_names;
  fm.units = "z";
  save_matrix(dir / "feat", fs.feat, fm);
  MatrixMeta km;
  km.role = "kin";
  km.fs_hz = fs.fs;
  km.units = "normalized";
  save_matrix(dir / "kin", fs.kin, km);
  std::ofstream f(dir / "features.json");
  f << nlohmann::json{{"subject_id", fs.subject_id}, {"fs", fs.fs}, {"trials", markers_to_json(fs.trials)}}.dump(2)
    << '\n';
  if (!f) throw std::runtime_error("cannot write " + (dir / "features.json").string());
}

FeatureSession load_feature_session(const std::filesystem::path& dir) {
  std::ifstream f(dir / "features.json");
  if (!f) throw std::runtime_error("no feature session at " + dir.string());
  const auto j = nlohmann::json::parse(f);
  FeatureSession fs;
  fs.subject_id = j.at("subject_id").get<std::string>();
  fs.fs = j.at("fs").get<double>();
  fs.trials = markers_from_json(j.at("trials"));
  auto [feat, fm] = load_matrix<double>(dir / "feat");
  auto [kin, km] = load_matrix<double>(dir / "kin");
  fs.feat = std::move(feat);
  fs.kin = std::move(kin);
  fs.feature_names = fm.channel_names;
  return fs;
}

void save_dataset(const std::filesystem::path& stem, const WindowedDataset& ds, const nlohmann::json& provenance) {
  MatrixMeta im;
  im.role = "dataset";
  im.fs_hz = 100.0;
  im.extra = {{"channels", ds.channels}, {"window", ds.window},     {"lag_ms", ds.lag_ms},
              {"window_ms", ds.window_ms}, {"domain", to_string(ds.domain)}, {"trial_index", ds.trial_index},
              {"provenance", provenance}};
  save_matrix(stem.string() + "_inputs", ds.inputs, im);
  MatrixMeta tm;
  tm.role = "targets";
  tm.units = "normalized";
  save_matrix(stem.string() + "_targets", ds.targets, tm);
}

WindowedDataset load_dataset(const std::filesystem::path& stem, nlohmann::json* provenance) {
  auto [in, im] = load_matrix_f32(stem.string() + "_inputs");
  auto [tg, tm] = load_matrix<double>(stem.string() + "_targets");
  WindowedDataset ds;
  ds.channels = im.extra.at("channels").get<Index>();
  ds.window = im.extra.at("window").get<Index>();
  ds.lag_ms = im.extra.at("lag_ms").get<int>();
  ds.window_ms = im.extra.at("window_ms").get<int>();
  ds.domain = domain_from_string(im.extra.at("domain").get<std::string>());
  ds.trial_index = im.extra.at("trial_index").get<std::vector<Index>>();
  ds.inputs = in.cast<double>();
  ds.targets = std::move(tg);
  if (ds.inputs.cols() != ds.channels * ds.window || ds.targets.rows() != ds.size() ||
      static_cast<Index>(ds.trial_index.size()) != ds.size())
    throw std::runtime_error("dataset " + stem.string() + " is inconsistent with its sidecar");
  if (provenance) *provenance = im.extra.value("provenance", nlohmann::json::object());
  return ds;
}

std::vector<Trial> segment_trials(const FeatureSession& session, Index pre_onset) {
  if (session.feat.cols() != session.kin.cols())
    throw std::invalid_argument("features and kinematics must share the time axis");
  std::vector<Trial> trials;
  for (std::size_t m = 0; m < session.trials.size(); ++m) {
    const auto& mk = session.trials[m];
    if (mk.onset_sample < pre_onset) {
      std::cerr << "warning: " << session.subject_id << " trial " << m << " skipped (onset at sample "
                << mk.onset_sample << " leaves less than " << pre_onset << " samples of history)\n";
      continue;
    }
    if (mk.return_sample <= mk.onset_sample || mk.return_sample >= session.kin.cols()) {
      std::cerr << "warning: " << session.subject_id << " trial " << m << " skipped (bad return marker)\n";
      continue;
    }
    Trial t;
    const Index len = mk.return_sample - mk.onset_sample + 1;
    t.kin = session.kin.middleCols(mk.onset_sample, len);
    t.feat = session.feat.middleCols(mk.onset_sample - pre_onset, len + pre_onset);
    t.onset_index = pre_onset;
    t.subject_id = session.subject_id;
    t.marker_index = static_cast<Index>(m);
    trials.push_back(std::move(t));
  }
  return trials;
}

void validate_lag_window(int lag_ms, int window_ms, double fs) {
  const double period_ms = 1000.0 / fs;
  auto is_multiple = [&](int v) {
    const double q = v / period_ms;
    return std::abs(q - std::round(q)) < 1e-9;
  };
  if (lag_ms < 0 || window_ms <= 0) throw std::invalid_argument("lag must be >= 0 and window > 0");
  if (!is_multiple(lag_ms) || !is_multiple(window_ms))
    throw std::invalid_argument("lag " + std::to_string(lag_ms) + " ms / window " + std::to_string(window_ms) +
                                " ms are not multiples of the sample period");
  if (lag_ms + window_ms > kPreOnsetBudgetMs)
    throw std::invalid_argument("lag + window = " + std::to_string(lag_ms + window_ms) + " ms exceeds the " +
                                std::to_string(kPreOnsetBudgetMs) + " ms pre-movement budget");
}

WindowedDataset extract_windows(const Trial& trial, int lag_ms, int window_ms, Domain domain, double fs,
                                Index trial_index) {
  validate_lag_window(lag_ms, window_ms, fs);
  const auto lag = static_cast<Index>(std::llround(lag_ms * fs / 1000.0));
  const auto width = static_cast<Index>(std::llround(window_ms * fs / 1000.0));
  const Index c = trial.feat.rows();
  const Index n = trial.kin.cols();
  if (trial.onset_index - lag - width + 1 < 0)
    throw std::invalid_argument("trial has " + std::to_string(trial.onset_index) +
                                " samples of history, window needs " + std::to_string(lag + width - 1));
  if (trial.feat.cols() < trial.onset_index + n - lag)
    throw std::invalid_argument("trial features shorter than its kinematics");

  WindowedDataset ds;
  ds.channels = c;
  ds.window = width;
  ds.lag_ms = lag_ms;
  ds.window_ms = window_ms;
  ds.domain = domain;
  ds.inputs.resize(n, c * width);
  ds.targets = trial.kin.transpose();
  ds.trial_index.assign(static_cast<std::size_t>(n), trial_index);
  for (Index t = 0; t < n; ++t) {
    const Index first = trial.onset_index + t - lag - width + 1;
    for (Index ch = 0; ch < c; ++ch) ds.inputs.row(t).segment(ch * width, width) = trial.feat.row(ch).segment(first, width);
  }
  return ds;
}

void append_dataset(WindowedDataset& a, const WindowedDataset& b) {
  if (a.size() == 0 && a.channels == 0) {
    a = b;
    return;
  }
  if (a.channels != b.channels || a.window != b.window || a.lag_ms != b.lag_ms || a.window_ms != b.window_ms ||
      a.domain != b.domain)
    throw std::invalid_argument("cannot append datasets with different shapes or provenance");
  const Index n0 = a.size();
  a.inputs.conservativeResize(n0 + b.size(), Eigen::NoChange);
  a.inputs.bottomRows(b.size()) = b.inputs;
  a.targets.conservativeResize(n0 + b.size(), Eigen::NoChange);
  a.targets.bottomRows(b.size()) = b.targets;
  a.trial_index.insert(a.trial_index.end(), b.trial_index.begin(), b.trial_index.end());
}

WindowedDataset build_dataset(const std::vector<Trial>& trials, const std::vector<Index>& which, int lag_ms,
                              int window_ms, Domain domain, double fs) {
  validate_lag_window(lag_ms, window_ms, fs);
  Index total = 0;
  for (Index i : which) total += trials.at(static_cast<std::size_t>(i)).kin.cols();
  WindowedDataset ds;
  ds.lag_ms = lag_ms;
  ds.window_ms = window_ms;
  ds.domain = domain;
  ds.window = static_cast<Index>(std::llround(window_ms * fs / 1000.0));
  ds.channels = trials.empty() ? 0 : trials.front().feat.rows();
  ds.inputs.resize(total, ds.channels * ds.window);
  ds.targets.resize(total, 3);
  Index row = 0;
  for (Index i : which) {
    const auto part = extract_windows(trials[static_cast<std::size_t>(i)], lag_ms, window_ms, domain, fs, i);
    if (part.channels != ds.channels) throw std::invalid_argument("trials have differing channel counts");
    ds.inputs.middleRows(row, part.size()) = part.inputs;
    ds.targets.middleRows(row, part.size()) = part.targets;
    ds.trial_index.insert(ds.trial_index.end(), part.trial_index.begin(), part.trial_index.end());
    row += part.size();
  }
  return ds;
}

IntraSplit split_intra(Index n_trials, std::uint64_t seed, bool allow_fallback) {
  constexpr Index kFullTrials = 294, kHeldOut = 30;
  IntraSplit split;
  Index n_val = 0, n_test = 0;
  if (n_trials >= kFullTrials) {
    n_val = n_test = kHeldOut;
  } else {
    if (!allow_fallback)
      throw std::invalid_argument("intra-subject split needs 294 trials, got " + std::to_string(n_trials) +
                                  " (enable the proportional fallback for smaller sets)");
    if (n_trials < 3) throw std::invalid_argument("intra-subject split needs at least 3 trials");
    n_val = std::max<Index>(1, static_cast<Index>(std::llround(0.1 * static_cast<double>(n_trials))));
    n_test = n_val;
    split.fallback = true;
  }
  std::vector<Index> order(static_cast<std::size_t>(n_trials));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const Index n_train = n_trials - n_val - n_test;
  split.train.assign(order.begin(), order.begin() + n_train);
  split.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  split.test.assign(order.begin() + n_train + n_val, order.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::vector<InterFold> split_inter(const std::vector<std::string>& subject_ids, bool allow_fallback) {
  constexpr std::size_t kFolds = 4;
  const std::set<std::string> unique(subject_ids.begin(), subject_ids.end());
  if (unique.size() != subject_ids.size()) throw std::invalid_argument("subject ids must be unique");
  if (subject_ids.size() != 12) {
    if (!allow_fallback || subject_ids.empty() || subject_ids.size() % kFolds != 0)
      throw std::invalid_argument("inter-subject split needs 12 subjects (or a multiple of 4 with fallback), got " +
                                  std::to_string(subject_ids.size()));
  }
  const std::size_t per_fold = subject_ids.size() / kFolds;
  std::vector<InterFold> folds(kFolds);
  for (std::size_t k = 0; k < kFolds; ++k)
    for (std::size_t s = 0; s < subject_ids.size(); ++s) {
      if (s / per_fold == k)
        folds[k].test_subjects.push_back(subject_ids[s]);
      else
        folds[k].train_subjects.push_back(subject_ids[s]);
    }
  return folds;
}

}  // namespace esigal
