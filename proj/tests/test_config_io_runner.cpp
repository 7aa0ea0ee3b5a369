// Configuration, deterministic-output, and pipeline-runner tests: strict JSON
// round trips, fingerprint sensitivity, validation hard/soft split, exact
// text formatting, manifest bookkeeping, replica scheduling invariance, and
// byte-identical pipeline reruns.

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "nelson/config.hpp"
#include "nelson/io.hpp"
#include "nelson/runner.hpp"

using namespace nelson;
namespace fs = std::filesystem;

namespace {

ExperimentConfig custom_config() {
  ExperimentConfig c;
  c.model = ExperimentConfig::Model::relativistic;
  c.particle_mass = 1.5;
  c.potential.kind = PotentialConfig::Kind::tabulated;
  c.potential.x = {-1.0, 0.0, 2.0};
  c.potential.v = {3.0, 1.0, 5.0};
  c.field = {0.8, 0.4, 2.5, 6, 3.0, 2};
  c.grids.particle = {-6.0, 6.0, 24, Grid1d::Layout::interior};
  c.grids.quadrature = {-4.0, 4.0, 12, Grid1d::Layout::centered};
  c.mc = {5000, 32, 2.0, 99};
  c.experiment = "fk-cross-check";
  return c;
}

fs::path fresh_dir(const std::string& leaf) {
  const fs::path dir = fs::temp_directory_path() / "nelson_tests" / leaf;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config JSON round trip is idempotent and preserves the hash") {
  for (const ExperimentConfig& c : {default_config(), custom_config()}) {
    const nlohmann::json j1 = config_to_json(c);
    const ExperimentConfig back = config_from_json(j1);
    const nlohmann::json j2 = config_to_json(back);
    CHECK(j1.dump() == j2.dump());
    CHECK(config_hash(c) == config_hash(back));
  }

  // Partial documents keep defaults; an empty object is the default config
  // up to the documented quadrature-resolution override.
  const ExperimentConfig empty = config_from_json(nlohmann::json::object());
  CHECK(empty.field.nu == 1.0);
  CHECK(empty.mc.n_samples == 10000);
  CHECK(empty.experiment == "variance-table");

  // grid_spec() mirrors the operator-mode count from the field section.
  ExperimentConfig c = default_config();
  c.field.n_op = 2;
  CHECK(c.grid_spec().n_op == 2);
  CHECK(c.grid_spec().n_quadratures() == 4);
}

TEST_CASE("config fingerprint reacts to every section") {
  const ExperimentConfig base = default_config();
  const std::uint64_t h0 = config_hash(base);

  ExperimentConfig c = base;
  c.mc.master_seed += 1;
  CHECK(config_hash(c) != h0);
  c = base;
  c.mc.n_samples += 1;
  CHECK(config_hash(c) != h0);
  c = base;
  c.field.coupling += 1e-9;
  CHECK(config_hash(c) != h0);
  c = base;
  c.experiment = "martingale";
  CHECK(config_hash(c) != h0);
  c = base;
  c.grids.particle.n += 1;
  CHECK(config_hash(c) != h0);
  c = base;
  c.model = ExperimentConfig::Model::relativistic;
  CHECK(config_hash(c) != h0);
}

TEST_CASE("unknown JSON keys are rejected at every level") {
  auto parse = [](const char* text) { return config_from_json(nlohmann::json::parse(text)); };
  CHECK_THROWS_AS(parse(R"({"surprise": 1})"), std::invalid_argument);
  CHECK_THROWS_AS(parse(R"({"model": {"type": "classical", "masss": 2}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse(R"({"potential": {"type": "harmonic", "springg": 1}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse(R"({"field": {"nuu": 1}})"), std::invalid_argument);
  CHECK_THROWS_AS(parse(R"({"grids": {"particle": {"lo": -8, "hi": 8, "m": 64}}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse(R"({"grids": {"lattice": {}}})"), std::invalid_argument);
  CHECK_THROWS_AS(parse(R"({"mc": {"seeds": 3}})"), std::invalid_argument);
  // Bad enum strings are rejected too.
  CHECK_THROWS_AS(parse(R"({"model": {"type": "quantum"}})"), std::invalid_argument);
  CHECK_THROWS_AS(parse(R"({"potential": {"type": "cubic"}})"), std::invalid_argument);
}

TEST_CASE("potential callables: harmonic well and clamped interpolation") {
  PotentialConfig p;
  p.spring = 2.0;
  const auto vh = p.fn();
  CHECK(vh(3.0) == Catch::Approx(9.0));

  PotentialConfig tab;
  tab.kind = PotentialConfig::Kind::tabulated;
  tab.x = {-1.0, 0.0, 2.0};
  tab.v = {3.0, 1.0, 5.0};
  const auto vt = tab.fn();
  CHECK(vt(-5.0) == 3.0);   // clamped left
  CHECK(vt(7.0) == 5.0);    // clamped right
  CHECK(vt(-0.5) == Catch::Approx(2.0));
  CHECK(vt(0.0) == Catch::Approx(1.0));
  CHECK(vt(1.0) == Catch::Approx(3.0));

  PotentialConfig bad;
  bad.kind = PotentialConfig::Kind::tabulated;
  bad.x = {0.0};
  bad.v = {1.0};
  CHECK_THROWS_AS(bad.fn(), std::invalid_argument);
}

TEST_CASE("validation separates hard rejections from soft warnings") {
  // The default configuration is clean.
  const std::vector<CheckResult> ok = validate(default_config());
  CHECK_FALSE(has_hard_failure(ok));
  for (const auto& c : ok) CHECK(c.passed);

  // Massless field: all three coupling quadratures diverge in the continuum
  // limit, a hard failure, and validation stops before the spectral checks.
  ExperimentConfig massless = default_config();
  massless.field.nu = 0.0;
  const std::vector<CheckResult> bad = validate(massless);
  CHECK(has_hard_failure(bad));
  REQUIRE(bad.size() == 4);  // shape + three mode sums
  for (std::size_t i = 1; i < 4; ++i) {
    CHECK(bad[i].hard);
    CHECK_FALSE(bad[i].passed);
  }

  // Shape problems short-circuit to a single report.
  ExperimentConfig tiny = default_config();
  tiny.grids.particle.n = 4;
  const std::vector<CheckResult> shape = validate(tiny);
  REQUIRE(shape.size() == 1);
  CHECK(shape[0].hard);
  CHECK_FALSE(shape[0].passed);

  ExperimentConfig lopsided = default_config();
  lopsided.grids.quadrature = {-3.0, 4.0, 16, Grid1d::Layout::centered};
  CHECK(has_hard_failure(validate(lopsided)));

  ExperimentConfig inconsistent = default_config();
  inconsistent.field.n_op = 5;
  inconsistent.field.n_modes = 2;
  CHECK(has_hard_failure(validate(inconsistent)));

  ExperimentConfig weightless = default_config();
  weightless.model = ExperimentConfig::Model::relativistic;
  weightless.particle_mass = 0.0;
  CHECK(has_hard_failure(validate(weightless)));

  // A particle box too small for the ground state trips the soft check only.
  ExperimentConfig cramped = default_config();
  cramped.grids.particle = {-1.5, 1.5, 16, Grid1d::Layout::interior};
  const std::vector<CheckResult> soft = validate(cramped);
  CHECK_FALSE(has_hard_failure(soft));
  bool found = false;
  for (const auto& c : soft)
    if (c.name == "ground-state-boundary-decay") {
      found = true;
      CHECK_FALSE(c.passed);
      CHECK_FALSE(c.hard);
    }
  CHECK(found);
}

TEST_CASE("optional potential-class diagnostic joins the validation report") {
  ValidationOptions opts;
  opts.run_kato = true;
  opts.kato_samples = 800;
  const std::vector<CheckResult> checks = validate(default_config(), opts);
  CHECK_FALSE(has_hard_failure(checks));
  bool found = false;
  for (const auto& c : checks)
    if (c.name == "potential-class-diagnostic") {
      found = true;
      CHECK(c.passed);
      CHECK_FALSE(c.hard);
      CHECK(c.value > 0.0);
    }
  CHECK(found);
}

TEST_CASE("doubles are formatted to shortest round-trip form") {
  using io::format_double;
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(0.1) == "0.1");
  const std::vector<double> values = {0.1,     1.0 / 3.0,          1e-300, 12345.678,
                                      -2.5e17, 0x1.fffffffffffffp0, 0.0};
  for (double v : values) {
    const double back = std::stod(format_double(v));
    CHECK(back == v);
  }
  CHECK(format_double(-0.0) == "-0");
  CHECK(std::signbit(std::stod(format_double(-0.0))));
}

TEST_CASE("hex fingerprints are fixed-width lowercase") {
  using io::hex64;
  CHECK(hex64(0) == "0000000000000000");
  CHECK(hex64(0xdeadbeefULL) == "00000000deadbeef");
  CHECK(hex64(~0ULL) == "ffffffffffffffff");
}

TEST_CASE("CSV assembly forbids separator characters inside cells") {
  io::CsvBuilder csv({"a", "b"});
  csv.add_row({"1", "2"});
  CHECK(csv.text == "a,b\n1,2\n");
  CHECK_THROWS_AS(csv.add_row({"1,5", "2"}), std::invalid_argument);
  CHECK_THROWS_AS(csv.add_row({"1", "2\n3"}), std::invalid_argument);
}

TEST_CASE("sparse matrices export to coordinate text deterministically") {
  TripletBuilder tb(2);
  tb.add(0, 0, 2.0);
  tb.add(0, 1, -1.0);
  tb.add(1, 0, -1.0);
  tb.add(1, 1, 2.0);
  const SparseMatrix A = tb.build();
  CHECK(io::coo_string(A) == "row,col,value\n0,0,2\n0,1,-1\n1,0,-1\n1,1,2\n");
}

TEST_CASE("text files round trip through subdirectories in binary mode") {
  const fs::path dir = fresh_dir("io_roundtrip");
  const fs::path nested = dir / "a" / "b" / "data.txt";
  const std::string payload = "line1\nline2\n\xff binary tail";
  io::write_text(nested, payload);
  CHECK(io::read_text(nested) == payload);
  CHECK_THROWS_AS(io::read_text(dir / "missing.txt"), std::runtime_error);
}

TEST_CASE("manifest records outputs with honest fingerprints") {
  const fs::path dir = fresh_dir("manifest");
  io::RunManifest man;
  man.pipeline = "demo";
  man.master_seed = 7;
  io::record_output(man, dir, "table.csv", "h\n1\n");
  REQUIRE(man.outputs.size() == 1);
  CHECK(man.outputs[0].name == "table.csv");
  CHECK(man.outputs[0].bytes == 4);
  CHECK(man.outputs[0].fnv64 == io::hex64(fnv1a64("h\n1\n")));
  CHECK(io::read_text(dir / "table.csv") == "h\n1\n");

  io::write_manifest(dir, man);
  const nlohmann::json j = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
  CHECK(j.at("pipeline") == "demo");
  CHECK(j.at("master_seed") == 7);
  CHECK(j.at("version").get<std::string>() == std::string(version_string));
  CHECK(j.at("outputs").size() == 1);
  CHECK(j.at("outputs")[0].at("fnv64") == man.outputs[0].fnv64);
}

TEST_CASE("replica partition is exhaustive and near-even") {
  for (std::size_t total : {0u, 1u, 16u, 17u, 10007u}) {
    std::size_t sum = 0, lo = total, hi = 0;
    for (std::size_t r = 0; r < detail::kReplicas; ++r) {
      const std::size_t s = detail::replica_share(total, r);
      sum += s;
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    CHECK(sum == total);
    CHECK(hi - lo <= 1);
  }
}

TEST_CASE("pooled accumulator merges independently of the split point") {
  detail::Pooled whole;
  detail::Pooled left, right;
  Rng rng(41, "pool");
  std::vector<double> xs(257);
  for (double& x : xs) x = rng.normal();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    whole.add(xs[i]);
    (i < 100 ? left : right).add(xs[i]);
  }
  left.merge(right);
  CHECK(left.n == whole.n);
  CHECK(left.mean == Catch::Approx(whole.mean).margin(1e-14));
  CHECK(left.variance() == Catch::Approx(whole.variance()).epsilon(1e-12));

  // Moment-form import preserves the summary statistics.
  const detail::Pooled imp = detail::pooled_from_moments(whole.n, whole.mean, whole.std_error());
  CHECK(imp.n == whole.n);
  CHECK(imp.mean == whole.mean);
  CHECK(imp.std_error() == Catch::Approx(whole.std_error()).epsilon(1e-12));

  detail::Pooled empty;
  empty.merge(whole);
  CHECK(empty.n == whole.n);
  CHECK(empty.mean == Catch::Approx(whole.mean).margin(1e-14));
}

TEST_CASE("replica scheduling cannot influence results") {
  auto job = [](std::size_t r, Rng& rng) {
    double acc = static_cast<double>(r);
    for (int i = 0; i < 100; ++i) acc += rng.normal();
    return acc;
  };
  const auto serial = detail::run_replicas<double>(4242, "sched", job, 1);
  const auto threaded = detail::run_replicas<double>(4242, "sched", job, 4);
  REQUIRE(serial.size() == detail::kReplicas);
  REQUIRE(threaded.size() == detail::kReplicas);
  for (std::size_t r = 0; r < serial.size(); ++r) CHECK(serial[r] == threaded[r]);
}

TEST_CASE("runner rejects unknown pipelines and invalid configurations") {
  ExperimentConfig cfg = default_config();
  cfg.experiment = "renormalize-everything";
  CHECK_THROWS_AS(run_pipeline(cfg, fresh_dir("bad_pipeline"), true), std::invalid_argument);

  ExperimentConfig massless = default_config();
  massless.field.nu = 0.0;
  massless.experiment = "field-covariance";
  try {
    run_pipeline(massless, fresh_dir("bad_config"), true);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("configuration rejected") != std::string::npos);
    CHECK(std::string(e.what()).find("mode-sum") != std::string::npos);
  }

  // All advertised pipeline ids are distinct and nonempty.
  const auto& ids = pipeline_ids();
  CHECK(ids.size() == 9);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    CHECK_FALSE(ids[i].empty());
    for (std::size_t j = i + 1; j < ids.size(); ++j) CHECK(ids[i] != ids[j]);
  }
}

TEST_CASE("pipeline reruns are byte-identical and fully fingerprinted") {
  ExperimentConfig cfg = default_config();
  cfg.experiment = "field-covariance";
  cfg.field.n_modes = 4;
  cfg.field.k_max = 2.0;
  cfg.mc.n_samples = 2000;
  cfg.mc.master_seed = 20250101;

  const fs::path d1 = fresh_dir("run1");
  const fs::path d2 = fresh_dir("run2");
  const io::RunManifest m1 = run_pipeline(cfg, d1, true);
  const io::RunManifest m2 = run_pipeline(cfg, d2, true);

  CHECK(m1.pipeline == "field-covariance");
  CHECK(m1.config_hash == io::hex64(config_hash(cfg)));
  REQUIRE_FALSE(m1.outputs.empty());
  REQUIRE(m1.outputs.size() == m2.outputs.size());
  for (std::size_t i = 0; i < m1.outputs.size(); ++i) {
    CHECK(m1.outputs[i].name == m2.outputs[i].name);
    CHECK(m1.outputs[i].fnv64 == m2.outputs[i].fnv64);
    // Recorded fingerprints match the actual bytes on disk, which match
    // across the two runs.
    const std::string bytes1 = io::read_text(d1 / m1.outputs[i].name);
    const std::string bytes2 = io::read_text(d2 / m2.outputs[i].name);
    CHECK(bytes1 == bytes2);
    CHECK(io::hex64(fnv1a64(bytes1)) == m1.outputs[i].fnv64);
    CHECK(m1.outputs[i].bytes == bytes1.size());
  }

  // Manifests agree except for wall-clock time.
  nlohmann::json j1 = nlohmann::json::parse(io::read_text(d1 / "manifest.json"));
  nlohmann::json j2 = nlohmann::json::parse(io::read_text(d2 / "manifest.json"));
  j1.erase("wall_seconds");
  j2.erase("wall_seconds");
  CHECK(j1.dump() == j2.dump());

  // The manifest summary reports agreement with the exact mode sum.
  CHECK(m1.summary.contains("pass"));
  CHECK(m1.summary.at("pass").get<bool>());
}
