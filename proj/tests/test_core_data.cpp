#include "esigal/container.hpp"
#include "esigal/session_io.hpp"
#include "esigal/synthetic.hpp"

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

using namespace esigal;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("esigal_core_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::uint64_t fnv(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_CASE("container round trip of a 3x4 matrix is exact") {
  const fs::path dir = scratch("rt");
  RowMatrixF m(3, 4);
  for (int i = 0; i < 12; ++i) m.data()[i] = 0.25f * static_cast<float>(i) - 1.0f;
  MatrixMeta meta;
  meta.role = "eeg";
  meta.fs_hz = 500.0;
  meta.units = "uV";
  meta.channel_names = {"C3", "Cz", "C4"};
  save_matrix_f32(dir / "m", m, meta);
  auto [back, bm] = load_matrix_f32(dir / "m");
  CHECK(back == m);
  CHECK(bm.rows == 3);
  CHECK(bm.cols == 4);
  CHECK(bm.role == "eeg");
  CHECK(bm.fs_hz.value() == 500.0);
  CHECK(bm.channel_names == meta.channel_names);
  CHECK_FALSE(bm.nonfinite);
  CHECK(fs::file_size(data_path(dir / "m")) == 48);
}

TEST_CASE("payload is row-major little-endian float32") {
  const fs::path dir = scratch("layout");
  RowMatrixF m(2, 2);
  m << 1.0f, 2.0f, 3.0f, 4.0f;
  MatrixMeta meta;
  meta.role = "roi";
  save_matrix_f32(dir / "m", m, meta);
  const std::string bytes = file_bytes(data_path(dir / "m"));
  REQUIRE(bytes.size() == 16);
  for (int i = 0; i < 4; ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + 4 * i);
    const std::uint32_t bits = p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    CHECK(v == static_cast<float>(i + 1));
  }
}

TEST_CASE("sidecar shape that disagrees with the payload size is rejected") {
  const fs::path dir = scratch("mismatch");
  RowMatrixF m = RowMatrixF::Ones(3, 4);
  MatrixMeta meta;
  meta.role = "eeg";
  save_matrix_f32(dir / "m", m, meta);
  std::ofstream(data_path(dir / "m"), std::ios::binary | std::ios::app) << "xxxx";
  CHECK_THROWS_AS(load_matrix_f32(dir / "m"), std::runtime_error);
}

TEST_CASE("non-finite values are flagged in the sidecar") {
  const fs::path dir = scratch("nonfinite");
  RowMatrixF m = RowMatrixF::Zero(2, 2);
  m(1, 0) = std::numeric_limits<float>::quiet_NaN();
  MatrixMeta meta;
  meta.role = "eeg";
  save_matrix_f32(dir / "m", m, meta);
  CHECK(load_meta(dir / "m").nonfinite);
}

TEST_CASE("unknown roles are rejected") {
  const fs::path dir = scratch("role");
  MatrixMeta meta;
  meta.role = "banana";
  CHECK_THROWS_AS(save_matrix_f32(dir / "m", RowMatrixF::Zero(1, 1), meta), std::invalid_argument);
}

TEST_CASE("an 18x45 window keeps its checksum through the container") {
  const fs::path dir = scratch("window");
  std::mt19937 rng(3);
  std::normal_distribution<float> g;
  RowMatrixF w(18, 45);
  for (int i = 0; i < w.size(); ++i) w.data()[i] = g(rng);
  std::string raw(reinterpret_cast<const char*>(w.data()), w.size() * sizeof(float));
  MatrixMeta meta;
  meta.role = "dataset";
  save_matrix_f32(dir / "w", w, meta);
  CHECK(fnv(file_bytes(data_path(dir / "w"))) == fnv(raw));
  auto [back, bm] = load_matrix_f32(dir / "w");
  CHECK(fnv(std::string(reinterpret_cast<const char*>(back.data()), back.size() * sizeof(float))) == fnv(raw));
}

TEST_CASE("round trip holds for random shapes and values") {
  const fs::path dir = scratch("property");
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> dim(1, 40);
  std::uniform_real_distribution<float> val(-1e6f, 1e6f);
  for (int trial = 0; trial < 25; ++trial) {
    RowMatrixF m(dim(rng), dim(rng));
    for (int i = 0; i < m.size(); ++i) m.data()[i] = val(rng);
    MatrixMeta meta;
    meta.role = "source";
    save_matrix_f32(dir / "p", m, meta);
    CHECK(load_matrix_f32(dir / "p").first == m);
  }
}

TEST_CASE("synthetic sessions are deterministic and respect marker invariants") {
  SyntheticConfig cfg;
  cfg.n_trials = 6;
  const auto a = generate_synthetic_session(7, cfg);
  const auto b = generate_synthetic_session(7, cfg);
  CHECK(a.session.eeg == b.session.eeg);
  CHECK(a.session.kin == b.session.kin);
  CHECK(a.leadfield.gain == b.leadfield.gain);
  CHECK_NOTHROW(a.session.validate());
  CHECK_NOTHROW(a.leadfield.validate());
  CHECK(a.session.eeg.rows() == 32);
  CHECK(a.leadfield.n_sources() == 200);
  REQUIRE(a.session.trials.size() == 6);
  for (const auto& t : a.session.trials) {
    CHECK(t.onset_sample < t.return_sample);
    CHECK(t.onset_sample >= 325);
  }
  const auto c = generate_synthetic_session(8, cfg);
  CHECK(c.session.eeg != a.session.eeg);
}

TEST_CASE("noise-free synthetic EEG equals gain times sources") {
  SyntheticConfig cfg;
  cfg.n_trials = 3;
  cfg.snr = std::numeric_limits<double>::infinity();
  const auto s = generate_synthetic_session(1, cfg);
  CHECK((s.session.eeg - s.leadfield.gain * s.sources).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("synthetic EEG variance follows the requested snr") {
  SyntheticConfig cfg;
  cfg.n_trials = 20;
  cfg.snr = 2.0;
  const auto s = generate_synthetic_session(5, cfg);
  const Matrix clean = s.leadfield.gain * s.sources;
  auto var = [](const Matrix& m) {
    const Matrix c = m.colwise() - m.rowwise().mean();
    return c.squaredNorm() / static_cast<double>(m.size());
  };
  const double ratio = var(s.session.eeg) / (var(clean) * (1.0 + 1.0 / (cfg.snr * cfg.snr)));
  CHECK(ratio == doctest::Approx(1.0).epsilon(0.10));
}

TEST_CASE("synthetic generator rejects K < I and empty trials") {
  SyntheticConfig cfg;
  cfg.n_sources = 10;
  CHECK_THROWS_AS(generate_synthetic_session(1, cfg), std::invalid_argument);
  cfg = {};
  cfg.trial_len_ms = 0;
  CHECK_THROWS_AS(generate_synthetic_session(1, cfg), std::invalid_argument);
  cfg = {};
  cfg.n_trials = 0;
  CHECK_THROWS_AS(generate_synthetic_session(1, cfg), std::invalid_argument);
}

TEST_CASE("RawSession validation catches broken invariants") {
  SyntheticConfig cfg;
  cfg.n_trials = 2;
  auto s = generate_synthetic_session(2, cfg).session;
  SUBCASE("too few channels") {
    s.eeg.conservativeResize(17, Eigen::NoChange);
    s.eeg_channel_names.resize(17);
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  }
  SUBCASE("onset after return") {
    std::swap(s.trials[0].onset_sample, s.trials[0].return_sample);
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  }
  SUBCASE("onset too early") {
    s.trials[0].onset_sample = 10;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  }
  SUBCASE("durations differ") {
    s.kin.conservativeResize(Eigen::NoChange, s.kin.cols() - 5);
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  }
  SUBCASE("bad weight") {
    s.trials[1].weight_grams = 200;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  }
}

TEST_CASE("LeadField validation") {
  SyntheticConfig cfg;
  cfg.n_trials = 1;
  auto lf = generate_synthetic_session(2, cfg).leadfield;
  SUBCASE("missing atlas entry") {
    lf.atlas_label[0] = 999;
    CHECK_THROWS_AS(lf.validate(), std::invalid_argument);
  }
  SUBCASE("non-finite gain") {
    lf.gain(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(lf.validate(), std::invalid_argument);
  }
}

TEST_CASE("session and lead-field directories round trip") {
  const fs::path dir = scratch("session");
  SyntheticConfig cfg;
  cfg.n_trials = 3;
  const auto s = generate_synthetic_session(4, cfg);
  ComponentRejection ica;
  ica.unmixing = Matrix::Identity(32, 32);
  ica.mixing = Matrix::Identity(32, 32);
  ica.reject = {1, 4};
  save_session(dir / "S", s.session, ica);
  save_leadfield(dir / "lf", s.leadfield);
  const RawSession back = load_session(dir / "S");
  CHECK(back.subject_id == s.session.subject_id);
  CHECK(back.eeg == s.session.eeg.cast<float>().cast<double>());
  CHECK(back.eeg_channel_names == s.session.eeg_channel_names);
  REQUIRE(back.trials.size() == 3);
  CHECK(back.trials[2].onset_sample == s.session.trials[2].onset_sample);
  CHECK(back.trials[2].surface == s.session.trials[2].surface);
  const auto rej = load_component_rejection(dir / "S");
  REQUIRE(rej.has_value());
  CHECK(rej->reject == ica.reject);
  const LeadField lf = load_leadfield(dir / "lf");
  CHECK(lf.channel_names == s.leadfield.channel_names);
  CHECK(lf.atlas_label == s.leadfield.atlas_label);
  CHECK(lf.atlas_names == s.leadfield.atlas_names);
  CHECK(lf.gain == s.leadfield.gain.cast<float>().cast<double>());
}

TEST_CASE("synthetic name helpers match generated sessions") {
  SyntheticConfig cfg;
  cfg.n_trials = 1;
  CHECK(generate_synthetic_session(1, cfg).session.eeg_channel_names == synthetic_channel_names(32));
  cfg.n_channels = 20;
  const auto s = generate_synthetic_session(1, cfg);
  CHECK(s.session.eeg_channel_names == synthetic_channel_names(20));
  const auto regions = synthetic_region_names();
  CHECK(regions.size() == 24);
  for (const auto& [label, name] : s.leadfield.atlas_names)
    CHECK(std::find(regions.begin(), regions.end(), name) != regions.end());
}
