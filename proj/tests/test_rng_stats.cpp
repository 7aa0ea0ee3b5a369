// Deterministic-randomness and statistics-utility tests: seed derivation,
// exactness of the scalar samplers against closed-form references, and the
// calibration of the test statistics everything downstream relies on.

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <numbers>
#include <vector>

#include "nelson/oracles.hpp"
#include "nelson/rng.hpp"
#include "nelson/stats.hpp"

using namespace nelson;

TEST_CASE("fnv1a64 matches the published test vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("derive_seed separates streams and reproduces exactly") {
  const std::uint64_t a = derive_seed(42, "pipeline/0");
  CHECK(a == derive_seed(42, "pipeline/0"));
  CHECK(a != derive_seed(42, "pipeline/1"));
  CHECK(a != derive_seed(43, "pipeline/0"));
  // Streams must differ even for master = 0 and short ids.
  CHECK(derive_seed(0, "a") != derive_seed(0, "b"));
}

TEST_CASE("identically seeded engines produce identical sequences") {
  Rng a(7, "stream");
  Rng b(7, "stream");
  for (int i = 0; i < 100; ++i) REQUIRE(a.raw() == b.raw());
}

TEST_CASE("uniform stays inside the open unit interval") {
  Rng rng(123);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
  }
}

TEST_CASE("normal sampler has the right moments") {
  Rng rng(2024);
  RunningStat m1, m2, m4;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    m1.add(x);
    m2.add(x * x);
    m4.add(x * x * x * x);
  }
  CHECK(std::abs(z_score(m1.mean(), 0.0, m1.std_error())) < 4.0);
  CHECK(std::abs(z_score(m2.mean(), 1.0, m2.std_error())) < 4.0);
  CHECK(std::abs(z_score(m4.mean(), 3.0, m4.std_error())) < 4.0);
}

TEST_CASE("normal sampler passes a KS test against the normal CDF") {
  Rng rng(5);
  std::vector<double> xs(20000);
  for (double& x : xs) x = rng.normal();
  const KsResult ks = ks_test(xs, [](double t) { return normal_cdf(t); });
  CHECK(ks.p > 0.01);
}

TEST_CASE("exponential sampler matches its mean and CDF") {
  Rng rng(99);
  const double rate = 2.5;
  std::vector<double> xs(20000);
  RunningStat stat;
  for (double& x : xs) {
    x = rng.exponential(rate);
    stat.add(x);
  }
  CHECK(std::abs(z_score(stat.mean(), 1.0 / rate, stat.std_error())) < 4.0);
  const KsResult ks = ks_test(xs, [rate](double t) { return 1.0 - std::exp(-rate * t); });
  CHECK(ks.p > 0.01);
}

TEST_CASE("inverse-Gaussian sampler matches mean, variance and Laplace transform") {
  Rng rng(31);
  const double mu = 0.8, lambda = 1.7, u = 0.9;
  RunningStat mean, lap;
  std::vector<double> xs(200000);
  for (double& x : xs) {
    x = rng.inverse_gaussian(mu, lambda);
    mean.add(x);
    lap.add(std::exp(-u * x));
  }
  CHECK(std::abs(z_score(mean.mean(), oracle::ig_mean(mu, lambda), mean.std_error())) < 4.0);
  RunningStat var;
  for (double x : xs) var.add((x - mean.mean()) * (x - mean.mean()));
  CHECK(std::abs(z_score(var.mean(), oracle::ig_variance(mu, lambda), var.std_error())) < 4.0);
  CHECK(std::abs(z_score(lap.mean(), oracle::ig_laplace(mu, lambda, u), lap.std_error())) < 4.0);
}

TEST_CASE("one-sided stable sampler matches its CDF and median") {
  Rng rng(77);
  const double c = 1.3;
  std::vector<double> xs(20000);
  for (double& x : xs) x = rng.levy(c);
  const KsResult ks = ks_test(xs, [c](double t) { return oracle::levy_cdf(c, t); });
  CHECK(ks.p > 0.01);
  // Median via order statistics against the closed-form quantile.
  std::vector<double> sorted = xs;
  std::sort(sorted.begin(), sorted.end());
  const double med = sorted[sorted.size() / 2];
  CHECK(std::abs(med - oracle::levy_median(c)) / oracle::levy_median(c) < 0.05);
}

TEST_CASE("RunningStat reproduces exact moments of a fixed list") {
  RunningStat s;
  for (double x : {1.0, 2.0, 3.0, 4.0}) s.add(x);
  CHECK(s.count() == 4);
  CHECK(s.mean() == Catch::Approx(2.5));
  CHECK(s.variance() == Catch::Approx(5.0 / 3.0));
  CHECK(s.std_error() == Catch::Approx(std::sqrt(5.0 / 12.0)));
}

TEST_CASE("z_score handles degenerate standard errors") {
  CHECK(z_score(1.0, 1.0, 0.0) == 0.0);
  CHECK(std::isinf(z_score(1.0, 2.0, 0.0)));
  CHECK(z_score(3.0, 1.0, 0.5) == Catch::Approx(4.0));
}

TEST_CASE("KS test calibrates: accepts the true law, rejects a shifted one") {
  Rng rng(404);
  std::vector<double> xs(5000);
  for (double& x : xs) x = rng.normal();
  CHECK(ks_test(xs, [](double t) { return normal_cdf(t); }).p > 0.01);
  CHECK(ks_test(xs, [](double t) { return normal_cdf(t - 0.3); }).p < 1e-6);
}

TEST_CASE("two-sample KS separates different laws and accepts equal ones") {
  Rng rng(8);
  std::vector<double> a(4000), b(4000), c(4000);
  for (double& x : a) x = rng.normal();
  for (double& x : b) x = rng.normal();
  for (double& x : c) x = 1.3 * rng.normal();
  CHECK(ks_test_two_sample(a, b).p > 0.01);
  CHECK(ks_test_two_sample(a, c).p < 1e-4);
}

TEST_CASE("chi-squared survival function matches known values") {
  // chi2_sf(x, 2) = e^{-x/2} exactly.
  CHECK(chi2_sf(3.0, 2) == Catch::Approx(std::exp(-1.5)).epsilon(1e-10));
  // Median of chi2 with 1 dof is the square of the normal upper quartile.
  const double q = normal_quantile(0.75);
  CHECK(chi2_sf(q * q, 1) == Catch::Approx(0.5).epsilon(1e-6));
  CHECK(chi2_sf(0.0, 5) == Catch::Approx(1.0));
}

TEST_CASE("normal_cdf and normal_quantile invert each other") {
  for (double p : {0.01, 0.1, 0.5, 0.9, 0.99})
    CHECK(normal_cdf(normal_quantile(p)) == Catch::Approx(p).epsilon(1e-8));
}

TEST_CASE("empirical characteristic function is exact on a fixed list") {
  const std::vector<double> xs = {0.0, std::numbers::pi};
  const auto cf = empirical_cf(xs, 1.0);
  CHECK(cf.real() == Catch::Approx(0.0).margin(1e-15));
  CHECK(cf.imag() == Catch::Approx(0.0).margin(1e-15));
  const auto cf2 = empirical_cf(xs, 0.5);
  CHECK(cf2.real() == Catch::Approx(0.5).margin(1e-15));
  CHECK(cf2.imag() == Catch::Approx(0.5).margin(1e-15));
}
