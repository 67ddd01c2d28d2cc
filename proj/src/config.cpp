#include "esigal/config.hpp"

#include "esigal/container.hpp"
#include "esigal/evaluation.hpp"
#include "esigal/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <stdexcept>

namespace esigal {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(SplitMode m) { return m == SplitMode::intra ? "intra" : "inter"; }
std::string to_string(ZscoreScope s) { return s == ZscoreScope::session ? "session" : "train"; }

const std::vector<std::string>& default_sensor_channels() {
  static const std::vector<std::string> names{"FC5", "FC1", "FC2", "FC6", "C3",  "Cz",  "C4", "T7", "T8",
                                              "CP5", "CP1", "CP2", "CP6", "F3",  "Fz",  "F4", "P3", "Pz"};
  return names;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument("config: " + msg); }

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; }))
      fail("unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(std::string("bad value for '") + key + "': " + e.what());
  }
}

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() || base.empty() ? p : base / p; }

std::vector<std::string> names_of(const fs::path& stem) { return load_meta(stem).channel_names; }

std::set<std::string> atlas_names_of(const fs::path& stem) {
  const auto meta = load_meta(stem);
  std::set<std::string> out;
  if (!meta.extra.contains("atlas_names")) fail("lead field " + stem.string() + " has no atlas_names");
  for (const auto& [k, v] : meta.extra.at("atlas_names").items()) out.insert(v.get<std::string>());
  return out;
}

void require_stem(const fs::path& stem, const std::string& what) {
  if (!fs::exists(data_path(stem)) || !fs::exists(meta_path(stem)))
    fail(what + " not found: " + stem.string());
}

}  // namespace

void ExperimentConfig::validate() const {
  if (name.empty()) fail("name is empty");
  if (domains.empty()) fail("no domains");
  if (models.empty()) fail("no models");
  for (const auto& m : models)
    if (std::find(std::begin(kModelLabels), std::end(kModelLabels), m) == std::end(kModelLabels))
      fail("unknown model '" + m + "' (expected mLR, rSCNet, rDCNet or rEEGNet)");
  if (lags_ms.empty() || windows_ms.empty()) fail("empty lag or window grid");
  for (int lag : lags_ms)
    for (int w : windows_ms) {
      try {
        validate_lag_window(lag, w);
      } catch (const std::invalid_argument& e) {
        fail(std::string("grid cell lag ") + std::to_string(lag) + " / window " + std::to_string(w) + ": " +
             e.what());
      }
    }
  const bool synthetic = data.synthetic.has_value();
  if (synthetic == !data.sessions.empty()) fail("data needs exactly one of 'sessions' or 'synthetic'");
  if (synthetic) {
    const auto& s = *data.synthetic;
    if (s.n_subjects < 1 || s.n_trials < 1) fail("synthetic data needs subjects and trials");
    if (s.n_sources < s.n_channels) fail("synthetic n_sources must be >= n_channels");
    if (!(s.snr > 0)) fail("synthetic snr must be positive");
  }
  const std::size_t n_subjects = synthetic ? static_cast<std::size_t>(data.synthetic->n_subjects) : data.sessions.size();
  if (split == SplitMode::inter) {
    if (n_subjects % 4 != 0 || n_subjects < 4) fail("inter-subject split needs a multiple of 4 subjects");
    if (n_subjects != 12 && !allow_split_fallback) fail("inter-subject split expects 12 subjects (set allow_split_fallback)");
  }
  if (channels.empty()) fail("channel list is empty");
  if (std::set<std::string>(channels.begin(), channels.end()).size() != channels.size())
    fail("duplicate channel names");
  const bool needs_source = std::find(domains.begin(), domains.end(), Domain::source) != domains.end();
  if (needs_source && rois.empty()) fail("source domain requested but no ROI list given");
  if (std::set<std::string>(rois.begin(), rois.end()).size() != rois.size()) fail("duplicate ROI names");
  if (!(inverse.snr > 0)) fail("inverse snr must be positive");
  if (!(preprocess.band_lo > 0 && preprocess.band_hi > preprocess.band_lo)) fail("invalid band");
  if (preprocess.decimate != 5) fail("decimate must be 5 (500 Hz to 100 Hz)");
  if (!(preprocess.transition_bw > 0 && preprocess.kin_transition_bw > 0 && preprocess.kin_cutoff > 0))
    fail("filter widths must be positive");
  try {
    train.validate();
  } catch (const std::exception& e) {
    fail(std::string("train: ") + e.what());
  }
  if (workers < 1) fail("workers must be >= 1");
}

void ExperimentConfig::validate_inputs() const {
  validate();
  const bool needs_source = std::find(domains.begin(), domains.end(), Domain::source) != domains.end();
  if (data.synthetic) {
    const auto avail = synthetic_channel_names(data.synthetic->n_channels);
    for (const auto& c : channels)
      if (std::find(avail.begin(), avail.end(), c) == avail.end()) fail("unknown channel '" + c + "'");
    if (needs_source) {
      const auto regions = synthetic_region_names();
      for (const auto& r : rois)
        if (std::find(regions.begin(), regions.end(), r) == regions.end()) fail("unknown ROI '" + r + "'");
    }
    return;
  }
  if (data.leadfield) require_stem(*data.leadfield, "lead field");
  if (inverse.noise_cov) require_stem(*inverse.noise_cov, "noise covariance");
  for (const auto& dir : data.sessions) {
    if (!fs::is_directory(dir)) fail("session directory not found: " + dir.string());
    if (!fs::exists(dir / "session.json")) fail("missing session.json in " + dir.string());
    require_stem(dir / "eeg", "EEG");
    require_stem(dir / "kin", "kinematics");
    const auto avail = names_of(dir / "eeg");
    for (const auto& c : channels)
      if (std::find(avail.begin(), avail.end(), c) == avail.end())
        fail("unknown channel '" + c + "' in " + dir.string());
    if (needs_source) {
      const fs::path lf = data.leadfield ? *data.leadfield : dir / "leadfield";
      require_stem(lf, "lead field");
      const auto regions = atlas_names_of(lf);
      for (const auto& r : rois)
        if (!regions.count(r)) fail("unknown ROI '" + r + "' in lead field " + lf.string());
    }
  }
}

json to_json(const ExperimentConfig& c) {
  json data = json::object();
  if (c.data.synthetic) {
    const auto& s = *c.data.synthetic;
    data["synthetic"] = {{"n_subjects", s.n_subjects}, {"n_trials", s.n_trials}, {"n_channels", s.n_channels},
                         {"n_sources", s.n_sources},   {"snr", s.snr},           {"trial_len_ms", s.trial_len_ms}};
  } else {
    auto arr = json::array();
    for (const auto& p : c.data.sessions) arr.push_back(p.generic_string());
    data["sessions"] = arr;
    if (c.data.leadfield) data["leadfield"] = c.data.leadfield->generic_string();
  }
  auto domains = json::array();
  for (auto d : c.domains) domains.push_back(to_string(d));
  json inverse = {{"snr", c.inverse.snr}};
  if (c.inverse.noise_cov) inverse["noise_cov"] = c.inverse.noise_cov->generic_string();
  return {
      {"name", c.name},
      {"seed", c.seed},
      {"output_dir", c.output_dir.generic_string()},
      {"data", data},
      {"domains", domains},
      {"models", c.models},
      {"lags_ms", c.lags_ms},
      {"windows_ms", c.windows_ms},
      {"split", to_string(c.split)},
      {"allow_split_fallback", c.allow_split_fallback},
      {"train",
       {{"batch", c.train.batch},
        {"max_epochs", c.train.max_epochs},
        {"patience", c.train.patience},
        {"lr", c.train.adam.lr},
        {"beta1", c.train.adam.beta1},
        {"beta2", c.train.adam.beta2},
        {"epsilon", c.train.adam.epsilon}}},
      {"channels", c.channels},
      {"rois", c.rois},
      {"inverse", inverse},
      {"preprocess",
       {{"band_hz", {c.preprocess.band_lo, c.preprocess.band_hi}},
        {"transition_bw", c.preprocess.transition_bw},
        {"kin_cutoff", c.preprocess.kin_cutoff},
        {"kin_transition_bw", c.preprocess.kin_transition_bw},
        {"decimate", c.preprocess.decimate},
        {"zscore_scope", to_string(c.preprocess.zscore_scope)}}},
      {"evaluation",
       {{"pcc_per_trial_mean", c.evaluation.pcc_per_trial_mean},
        {"ttest_cell", {c.evaluation.ttest_lag_ms, c.evaluation.ttest_window_ms}}}},
      {"workers", c.workers},
  };
}

ExperimentConfig config_from_json(const json& j, const fs::path& base_dir) {
  check_keys(j, "config",
             {"$schema", "name", "seed", "output_dir", "data", "domains", "models", "lags_ms", "windows_ms", "split",
              "allow_split_fallback", "train", "channels", "rois", "inverse", "preprocess", "evaluation", "workers"});
  ExperimentConfig c;
  c.channels = default_sensor_channels();
  read(j, "name", c.name);
  read(j, "seed", c.seed);
  if (j.contains("output_dir")) c.output_dir = resolve(j.at("output_dir").get<std::string>(), base_dir);

  if (!j.contains("data")) fail("missing 'data'");
  const json& d = j.at("data");
  check_keys(d, "data", {"sessions", "leadfield", "synthetic"});
  if (d.contains("synthetic")) {
    const json& s = d.at("synthetic");
    check_keys(s, "data.synthetic", {"n_subjects", "n_trials", "n_channels", "n_sources", "snr", "trial_len_ms"});
    SyntheticDataConfig sc;
    read(s, "n_subjects", sc.n_subjects);
    read(s, "n_trials", sc.n_trials);
    read(s, "n_channels", sc.n_channels);
    read(s, "n_sources", sc.n_sources);
    read(s, "snr", sc.snr);
    read(s, "trial_len_ms", sc.trial_len_ms);
    c.data.synthetic = sc;
  }
  if (d.contains("sessions"))
    for (const auto& p : d.at("sessions")) c.data.sessions.push_back(resolve(p.get<std::string>(), base_dir));
  if (d.contains("leadfield")) c.data.leadfield = resolve(d.at("leadfield").get<std::string>(), base_dir);

  if (j.contains("domains")) {
    c.domains.clear();
    for (const auto& s : j.at("domains")) c.domains.push_back(domain_from_string(s.get<std::string>()));
  }
  read(j, "models", c.models);
  read(j, "lags_ms", c.lags_ms);
  read(j, "windows_ms", c.windows_ms);
  if (j.contains("split")) {
    const auto s = j.at("split").get<std::string>();
    if (s == "intra") c.split = SplitMode::intra;
    else if (s == "inter") c.split = SplitMode::inter;
    else fail("split must be 'intra' or 'inter'");
  }
  read(j, "allow_split_fallback", c.allow_split_fallback);

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train", {"batch", "max_epochs", "patience", "lr", "beta1", "beta2", "epsilon"});
    read(t, "batch", c.train.batch);
    read(t, "max_epochs", c.train.max_epochs);
    read(t, "patience", c.train.patience);
    read(t, "lr", c.train.adam.lr);
    read(t, "beta1", c.train.adam.beta1);
    read(t, "beta2", c.train.adam.beta2);
    read(t, "epsilon", c.train.adam.epsilon);
  }
  read(j, "channels", c.channels);
  read(j, "rois", c.rois);
  if (j.contains("inverse")) {
    const json& inv = j.at("inverse");
    check_keys(inv, "inverse", {"snr", "noise_cov"});
    read(inv, "snr", c.inverse.snr);
    if (inv.contains("noise_cov") && !inv.at("noise_cov").is_null()) {
      const auto s = inv.at("noise_cov").get<std::string>();
      if (s != "identity") c.inverse.noise_cov = resolve(s, base_dir);
    }
  }
  if (j.contains("preprocess")) {
    const json& p = j.at("preprocess");
    check_keys(p, "preprocess",
               {"band_hz", "transition_bw", "kin_cutoff", "kin_transition_bw", "decimate", "zscore_scope"});
    if (p.contains("band_hz")) {
      const auto b = p.at("band_hz").get<std::vector<double>>();
      if (b.size() != 2) fail("band_hz needs two values");
      c.preprocess.band_lo = b[0];
      c.preprocess.band_hi = b[1];
    }
    read(p, "transition_bw", c.preprocess.transition_bw);
    read(p, "kin_cutoff", c.preprocess.kin_cutoff);
    read(p, "kin_transition_bw", c.preprocess.kin_transition_bw);
    read(p, "decimate", c.preprocess.decimate);
    if (p.contains("zscore_scope")) {
      const auto s = p.at("zscore_scope").get<std::string>();
      if (s == "session") c.preprocess.zscore_scope = ZscoreScope::session;
      else if (s == "train") c.preprocess.zscore_scope = ZscoreScope::train;
      else fail("zscore_scope must be 'session' or 'train'");
    }
  }
  if (j.contains("evaluation")) {
    const json& e = j.at("evaluation");
    check_keys(e, "evaluation", {"pcc_per_trial_mean", "ttest_cell"});
    read(e, "pcc_per_trial_mean", c.evaluation.pcc_per_trial_mean);
    if (e.contains("ttest_cell")) {
      const auto cell = e.at("ttest_cell").get<std::vector<int>>();
      if (cell.size() != 2) fail("ttest_cell needs [lag_ms, window_ms]");
      c.evaluation.ttest_lag_ms = cell[0];
      c.evaluation.ttest_window_ms = cell[1];
    }
  }
  read(j, "workers", c.workers);
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    fail(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

std::string ExperimentConfig::hash() const {
  json j = to_json(*this);
  j.erase("output_dir");
  j.erase("workers");
  return hex64(fnv1a64(j.dump()));
}

json config_schema() {
  const json int_list = {{"type", "array"}, {"items", {{"type", "integer"}, {"minimum", 0}}}, {"minItems", 1}};
  const json str_list = {{"type", "array"}, {"items", {{"type", "string"}}}};
  return {
      {"$schema", "https://json-schema.org/draft/2020-12/schema"},
      {"title", "esigal experiment"},
      {"type", "object"},
      {"additionalProperties", false},
      {"required", {"data"}},
      {"properties",
       {{"$schema", {{"type", "string"}}},
        {"name", {{"type", "string"}, {"minLength", 1}}},
        {"seed", {{"type", "integer"}, {"minimum", 0}}},
        {"output_dir", {{"type", "string"}}},
        {"data",
         {{"type", "object"},
          {"additionalProperties", false},
          {"properties",
           {{"sessions", str_list},
            {"leadfield", {{"type", "string"}}},
            {"synthetic",
             {{"type", "object"},
              {"additionalProperties", false},
              {"properties",
               {{"n_subjects", {{"type", "integer"}, {"minimum", 1}}},
                {"n_trials", {{"type", "integer"}, {"minimum", 1}}},
                {"n_channels", {{"type", "integer"}, {"minimum", 2}}},
                {"n_sources", {{"type", "integer"}, {"minimum", 2}}},
                {"snr", {{"type", "number"}, {"exclusiveMinimum", 0}}},
                {"trial_len_ms", {{"type", "number"}, {"exclusiveMinimum", 0}}}}}}}}},
          {"oneOf", {{{"required", {"sessions"}}}, {{"required", {"synthetic"}}}}}}},
        {"domains", {{"type", "array"}, {"items", {{"enum", {"sensor", "source"}}}}, {"minItems", 1}}},
        {"models", {{"type", "array"}, {"items", {{"enum", {"mLR", "rSCNet", "rDCNet", "rEEGNet"}}}}, {"minItems", 1}}},
        {"lags_ms", int_list},
        {"windows_ms", int_list},
        {"split", {{"enum", {"intra", "inter"}}}},
        {"allow_split_fallback", {{"type", "boolean"}}},
        {"train",
         {{"type", "object"},
          {"additionalProperties", false},
          {"properties",
           {{"batch", {{"type", "integer"}, {"minimum", 1}}},
            {"max_epochs", {{"type", "integer"}, {"minimum", 1}}},
            {"patience", {{"type", "integer"}, {"minimum", 1}}},
            {"lr", {{"type", "number"}, {"exclusiveMinimum", 0}}},
            {"beta1", {{"type", "number"}}},
            {"beta2", {{"type", "number"}}},
            {"epsilon", {{"type", "number"}}}}}}},
        {"channels", str_list},
        {"rois", str_list},
        {"inverse",
         {{"type", "object"},
          {"additionalProperties", false},
          {"properties", {{"snr", {{"type", "number"}, {"exclusiveMinimum", 0}}}, {"noise_cov", {{"type", "string"}}}}}}},
        {"preprocess",
         {{"type", "object"},
          {"additionalProperties", false},
          {"properties",
           {{"band_hz", {{"type", "array"}, {"items", {{"type", "number"}}}, {"minItems", 2}, {"maxItems", 2}}},
            {"transition_bw", {{"type", "number"}}},
            {"kin_cutoff", {{"type", "number"}}},
            {"kin_transition_bw", {{"type", "number"}}},
            {"decimate", {{"const", 5}}},
            {"zscore_scope", {{"enum", {"session", "train"}}}}}}}},
        {"evaluation",
         {{"type", "object"},
          {"additionalProperties", false},
          {"properties",
           {{"pcc_per_trial_mean", {{"type", "boolean"}}},
            {"ttest_cell", {{"type", "array"}, {"items", {{"type", "integer"}}}, {"minItems", 2}, {"maxItems", 2}}}}}}},
        {"workers", {{"type", "integer"}, {"minimum", 1}}}}},
  };
}

}  // namespace esigal
