#include "esigal/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace esigal {

namespace {

constexpr double kHeadRadiusMm = 90.0;
constexpr double kCortexRadiusMm = 72.0;

struct FlatPoint {
  const char* name;
  double x;  // right
  double y;  // front
};

// Azimuthal-equidistant layout: radius 1 is the head equator.
constexpr std::array<FlatPoint, 32> kMontage = {{
    {"Fp1", -0.31, 0.95}, {"Fp2", 0.31, 0.95},   {"F7", -0.81, 0.59},  {"F3", -0.39, 0.51},
    {"Fz", 0.0, 0.50},    {"F4", 0.39, 0.51},    {"F8", 0.81, 0.59},   {"FC5", -0.64, 0.26},
    {"FC1", -0.22, 0.24}, {"FC2", 0.22, 0.24},   {"FC6", 0.64, 0.26},  {"T7", -1.0, 0.0},
    {"C3", -0.50, 0.0},   {"Cz", 0.0, 0.0},      {"C4", 0.50, 0.0},    {"T8", 1.0, 0.0},
    {"TP9", -1.05, -0.33}, {"CP5", -0.64, -0.26}, {"CP1", -0.22, -0.24}, {"CP2", 0.22, -0.24},
    {"CP6", 0.64, -0.26}, {"TP10", 1.05, -0.33}, {"P7", -0.81, -0.59}, {"P3", -0.39, -0.51},
    {"Pz", 0.0, -0.50},   {"P4", 0.39, -0.51},   {"P8", 0.81, -0.59},  {"PO9", -0.60, -0.97},
    {"O1", -0.31, -0.95}, {"Oz", 0.0, -1.0},     {"O2", 0.31, -0.95},  {"PO10", 0.60, -0.97},
}};

struct RoiCenter {
  const char* region;
  double x;  // left hemisphere value; mirrored for the right
  double y;
};

constexpr std::array<RoiCenter, 12> kRegions = {{
    {"caudalmiddlefrontal", -0.35, 0.35}, {"lateralorbitofrontal", -0.45, 0.80},
    {"medialorbitofrontal", -0.12, 0.90}, {"superiorfrontal", -0.15, 0.55},
    {"paracentral", -0.10, 0.00},         {"postcentral", -0.50, -0.15},
    {"precentral", -0.50, 0.12},          {"superiorparietal", -0.30, -0.50},
    {"inferiorparietal", -0.65, -0.55},   {"lateraloccipital", -0.35, -0.95},
    {"superiortemporal", -0.95, 0.00},    {"rostralmiddlefrontal", -0.55, 0.60},
}};

// Where the kinematics-driven sources sit (left sensorimotor and parietal).
constexpr std::array<std::array<double, 2>, 8> kDrivenSites = {{
    {-0.50, 0.05}, {-0.45, -0.12}, {-0.30, 0.20}, {-0.25, -0.35},
    {-0.55, 0.25}, {-0.15, 0.05},  {-0.60, -0.30}, {-0.35, 0.40},
}};

Eigen::Vector3d flat_to_unit(double fx, double fy) {
  const double r = std::hypot(fx, fy);
  const double theta = r * std::numbers::pi / 2.0;
  const double az = std::atan2(fy, fx);
  return {std::sin(theta) * std::cos(az), std::sin(theta) * std::sin(az), std::cos(theta)};
}

std::array<double, 2> unit_to_flat(const Eigen::Vector3d& u) {
  const double theta = std::acos(std::clamp(u.z(), -1.0, 1.0));
  const double r = theta / (std::numbers::pi / 2.0);
  const double az = std::atan2(u.y(), u.x());
  return {r * std::cos(az), r * std::sin(az)};
}

double min_jerk(double tau) {
  tau = std::clamp(tau, 0.0, 1.0);
  return tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau);
}

// Fraction of the trial at which each segment starts and ends.
struct Segment {
  double t0, t1;
  double progress(double f) const { return min_jerk((f - t0) / (t1 - t0)); }
};

}  // namespace

const std::vector<std::string>& standard_montage_32() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& p : kMontage) v.emplace_back(p.name);
    return v;
  }();
  return names;
}

std::vector<std::string> synthetic_channel_names(Index n_channels) {
  if (n_channels == static_cast<Index>(kMontage.size())) return standard_montage_32();
  std::vector<std::string> names;
  for (Index i = 0; i < n_channels; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "E%02lld", static_cast<long long>(i + 1));
    names.emplace_back(buf);
  }
  return names;
}

std::vector<std::string> synthetic_region_names() {
  std::vector<std::string> names;
  for (const auto& r : kRegions) {
    names.push_back(std::string(r.region) + " L");
    names.push_back(std::string(r.region) + " R");
  }
  return names;
}

SyntheticSession generate_synthetic_session(std::uint64_t seed, const SyntheticConfig& cfg) {
  if (cfg.n_trials < 1) throw std::invalid_argument("synthetic session needs at least one trial");
  if (cfg.n_channels < 1) throw std::invalid_argument("synthetic session needs at least one channel");
  if (cfg.n_sources < cfg.n_channels)
    throw std::invalid_argument("synthetic lead field needs K >= I (got K=" + std::to_string(cfg.n_sources) +
                                ", I=" + std::to_string(cfg.n_channels) + ")");
  if (!(cfg.trial_len_ms > 0)) throw std::invalid_argument("trial length must be positive");
  if (!(cfg.snr > 0)) throw std::invalid_argument("snr must be positive");
  if (!(cfg.fs > 0)) throw std::invalid_argument("sampling rate must be positive");
  const int n_driven = std::clamp<int>(cfg.n_driven, 1, static_cast<int>(std::min<Index>(cfg.n_sources, 64)));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double fs = cfg.fs;
  const Index I = cfg.n_channels, K = cfg.n_sources;

  // Electrodes.
  const std::vector<std::string> names = synthetic_channel_names(I);
  Eigen::Matrix<double, Eigen::Dynamic, 3> electrodes(I, 3);
  if (I == static_cast<Index>(kMontage.size())) {
    for (Index i = 0; i < I; ++i) {
      electrodes.row(i) = kHeadRadiusMm * flat_to_unit(kMontage[i].x, kMontage[i].y).transpose();
    }
  } else {
    // Fibonacci cap over the upper head.
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (Index i = 0; i < I; ++i) {
      const double z = 1.0 - 1.1 * (i + 0.5) / static_cast<double>(I);
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double phi = golden * static_cast<double>(i);
      electrodes.row(i) << kHeadRadiusMm * r * std::cos(phi), kHeadRadiusMm * r * std::sin(phi), kHeadRadiusMm * z;
    }
  }

  // Sources on a cortical cap, radially oriented, labelled by nearest region.
  LeadField lf;
  lf.channel_names = names;
  lf.source_positions.resize(K, 3);
  lf.atlas_label.resize(static_cast<std::size_t>(K));
  for (std::size_t r = 0; r < kRegions.size(); ++r) {
    lf.atlas_names[static_cast<int>(2 * r + 1)] = std::string(kRegions[r].region) + " L";
    lf.atlas_names[static_cast<int>(2 * r + 2)] = std::string(kRegions[r].region) + " R";
  }
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  Eigen::Matrix<double, Eigen::Dynamic, 3> normals(K, 3);
  for (Index k = 0; k < K; ++k) {
    const double z = 1.0 - 1.05 * (k + 0.5) / static_cast<double>(K);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(k);
    const Eigen::Vector3d u(r * std::cos(phi), r * std::sin(phi), z);
    normals.row(k) = u.transpose();
    lf.source_positions.row(k) = kCortexRadiusMm * u.transpose();
    const auto flat = unit_to_flat(u);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t reg = 0; reg < kRegions.size(); ++reg)
      for (int hemi = 0; hemi < 2; ++hemi) {
        const double cx = hemi == 0 ? kRegions[reg].x : -kRegions[reg].x;
        const double d = std::hypot(flat[0] - cx, flat[1] - kRegions[reg].y);
        if (d < best) {
          best = d;
          lf.atlas_label[static_cast<std::size_t>(k)] = static_cast<int>(2 * reg + 1 + hemi);
        }
      }
  }

  // Dipole potentials in a an infinite homogeneous medium, scaled to unit mean column norm.
  lf.gain.resize(I, K);
  for (Index i = 0; i < I; ++i)
    for (Index k = 0; k < K; ++k) {
      const Eigen::Vector3d d = electrodes.row(i).transpose() - lf.source_positions.row(k).transpose();
      const double dist = d.norm();
      lf.gain(i, k) = normals.row(k).dot(d) / (dist * dist * dist);
    }
  lf.gain *= static_cast<double>(K) / lf.gain.colwise().norm().sum();

  // Trial timeline.
  const double trial_s = cfg.trial_len_ms / 1000.0;
  std::vector<TrialMarker> markers;
  std::vector<std::array<double, 3>> targets;  // object x, y and lift height per trial
  std::vector<Index> durations;
  const std::array<int, 3> weights = {165, 330, 660};
  double t = 3.0;
  for (int n = 0; n < cfg.n_trials; ++n) {
    TrialMarker m;
    const double dur = trial_s * (0.9 + 0.2 * unif(rng));
    m.onset_sample = static_cast<Index>(std::llround(t * fs));
    const auto dur_samples = std::max<Index>(1, static_cast<Index>(std::llround(dur * fs)));
    m.return_sample = m.onset_sample + dur_samples;
    m.weight_grams = weights[static_cast<std::size_t>(unif(rng) * 3.0) % 3];
    m.surface = static_cast<Surface>(static_cast<int>(unif(rng) * 3.0) % 3);
    const double lift = (m.weight_grams == 165 ? 60.0 : m.weight_grams == 330 ? 50.0 : 40.0) + 10.0 * gauss(rng);
    targets.push_back({120.0 + 25.0 * gauss(rng), 250.0 + 25.0 * gauss(rng), std::max(15.0, lift)});
    markers.push_back(m);
    durations.push_back(dur_samples);
    t += dur + 1.0 + unif(rng);
  }
  const auto n_samples = static_cast<Index>(std::llround((t + 1.0) * fs));

  // Clean kinematics (mm); rest at the origin.
  const Eigen::Vector3d rest(0.0, 0.0, 0.0);
  Matrix kin_clean = rest.replicate(1, n_samples);
  const Segment reach{0.0, 0.35}, lift_seg{0.35, 0.50}, lower_seg{0.60, 0.75}, back{0.75, 1.0};
  for (std::size_t n = 0; n < markers.size(); ++n) {
    const auto& tg = targets[n];
    for (Index s = 0; s <= durations[n]; ++s) {
      const double f = static_cast<double>(s) / static_cast<double>(durations[n]);
      const double out = reach.progress(f) - back.progress(f);
      const double arc = 30.0 * (std::sin(std::numbers::pi * std::clamp((f - reach.t0) / (reach.t1 - reach.t0), 0.0, 1.0)) +
                                 std::sin(std::numbers::pi * std::clamp((f - back.t0) / (back.t1 - back.t0), 0.0, 1.0)));
      const double z = tg[2] * (lift_seg.progress(f) - lower_seg.progress(f)) + arc;
      kin_clean.col(markers[n].onset_sample + s) = rest + Eigen::Vector3d(tg[0] * out, tg[1] * out, z);
    }
  }

  // Driven sources: random mixtures of position and velocity, ahead of the movement.
  Matrix vel = Matrix::Zero(3, n_samples);
  for (Index s = 1; s + 1 < n_samples; ++s) vel.col(s) = (kin_clean.col(s + 1) - kin_clean.col(s - 1)) * (fs / 2.0);
  const Eigen::Vector3d pos_scale(120.0, 250.0, 60.0);
  const Eigen::Vector3d vel_scale = vel.cwiseAbs().rowwise().maxCoeff().cwiseMax(1e-9);

  SyntheticSession out;
  out.driven_sources.reserve(static_cast<std::size_t>(n_driven));
  for (int d = 0; d < n_driven; ++d) {
    const auto& site = kDrivenSites[static_cast<std::size_t>(d) % kDrivenSites.size()];
    const Eigen::Vector3d u = flat_to_unit(site[0], site[1]);
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index k = 0; k < K; ++k) {
      if (std::find(out.driven_sources.begin(), out.driven_sources.end(), k) != out.driven_sources.end()) continue;
      const double dd = (normals.row(k).transpose() - u).norm();
      if (dd < best_d) {
        best_d = dd;
        best = k;
      }
    }
    out.driven_sources.push_back(best);
  }

  constexpr double kDrivenAmplitude = 10.0;
  Matrix sources(K, n_samples);
  // Background: AR(1) activity on every source.
  const double ar = std::exp(-2.0 * std::numbers::pi * 4.0 / fs);  // ~4 Hz corner
  const double innov = std::sqrt(1.0 - ar * ar) * cfg.background_level * kDrivenAmplitude;
  for (Index k = 0; k < K; ++k) {
    double state = gauss(rng) * cfg.background_level * kDrivenAmplitude;
    for (Index s = 0; s < n_samples; ++s) {
      state = ar * state + innov * gauss(rng);
      sources(k, s) = state;
    }
  }
  const auto lead = static_cast<Index>(std::llround(cfg.neural_lead_ms * fs / 1000.0));
  for (int d = 0; d < n_driven; ++d) {
    Eigen::Vector3d cp, cv;
    for (int a = 0; a < 3; ++a) {
      cp(a) = gauss(rng);
      cv(a) = 0.5 * gauss(rng);
    }
    const Index k = out.driven_sources[static_cast<std::size_t>(d)];
    for (Index s = 0; s < n_samples; ++s) {
      const Index src = std::min(s + lead, n_samples - 1);
      const Eigen::Vector3d p = (kin_clean.col(src) - rest).cwiseQuotient(pos_scale);
      const Eigen::Vector3d v = vel.col(src).cwiseQuotient(vel_scale);
      sources(k, s) += kDrivenAmplitude * (cp.dot(p) + cv.dot(v));
    }
  }

  Matrix eeg = lf.gain * sources;
  if (std::isfinite(cfg.snr)) {
    const Eigen::VectorXd mean = eeg.rowwise().mean();
    const double signal_var = (eeg.colwise() - mean).squaredNorm() / static_cast<double>(eeg.size());
    const double noise_std = std::sqrt(signal_var) / cfg.snr;
    for (Index s = 0; s < n_samples; ++s)
      for (Index i = 0; i < I; ++i) eeg(i, s) += noise_std * gauss(rng);
  }

  Matrix kin = kin_clean;
  for (Index s = 0; s < n_samples; ++s)
    for (int a = 0; a < 3; ++a) kin(a, s) += 0.2 * gauss(rng);

  out.session.subject_id = cfg.subject_id;
  out.session.eeg = std::move(eeg);
  out.session.eeg_fs = fs;
  out.session.eeg_channel_names = names;
  out.session.kin = std::move(kin);
  out.session.kin_fs = fs;
  out.session.trials = std::move(markers);
  out.leadfield = std::move(lf);
  out.sources = std::move(sources);
  return out;
}

}  // namespace esigal
