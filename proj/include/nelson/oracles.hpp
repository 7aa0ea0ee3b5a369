#pragma once
/// \file
/// Closed-form reference evaluators ("oracles") used by tests and the
/// acceptance gate. Everything here is textbook mathematics evaluated
/// directly, independent of the sampler and operator code it judges; tests
/// obtain reference numbers from these functions, never from literals copied
/// into test code. A string registry backs the `print-oracle` CLI subcommand
/// so values can be audited from the shell.

#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nelson/stats.hpp"

namespace nelson::oracle {

/// Heat kernel (e^{t Delta/2} density) in d dimensions at radial displacement r:
/// (2 pi t)^{-d/2} e^{-r^2/(2t)}.
inline double heat_kernel(double t, double r, int d = 1) {
  return std::pow(2.0 * std::numbers::pi * t, -0.5 * d) * std::exp(-r * r / (2.0 * t));
}

/// Cauchy (Poisson) kernel: density at x of the massless relativistic process
/// at time t, d = 1: t / (pi (t^2 + x^2)).
inline double cauchy_kernel(double t, double x) {
  return t / (std::numbers::pi * (t * t + x * x));
}

/// CDF of the standard Cauchy law scaled by t.
inline double cauchy_cdf(double t, double x) {
  return 0.5 + std::atan(x / t) / std::numbers::pi;
}

/// Harmonic oscillator -1/2 d^2/dx^2 + (k/2) x^2: ground energy sqrt(k)/2.
inline double oscillator_energy(double k = 1.0) { return 0.5 * std::sqrt(k); }

/// Its L2-normalized ground state (omega_p/pi)^{1/4} e^{-omega_p x^2/2},
/// omega_p = sqrt(k).
inline double oscillator_ground(double x, double k = 1.0) {
  const double w = std::sqrt(k);
  return std::pow(w / std::numbers::pi, 0.25) * std::exp(-0.5 * w * x * x);
}

/// Ground probability density phi^2 = sqrt(omega_p/pi) e^{-omega_p x^2}.
inline double oscillator_ground_density(double x, double k = 1.0) {
  const double w = std::sqrt(k);
  return std::sqrt(w / std::numbers::pi) * std::exp(-w * x * x);
}

/// Stationary autocovariance of the ground-state-transformed oscillator
/// process (unit-rate OU with stationary N(0, 1/2)): e^{-|lag|}/2.
inline double ou_autocovariance(double lag) { return 0.5 * std::exp(-std::abs(lag)); }

/// Mehler transition density of that OU process: from x, time t, the state is
/// N(x e^{-t}, (1 - e^{-2t})/2).
inline double mehler_density(double t, double x, double y) {
  const double m = x * std::exp(-t);
  const double v = 0.5 * (1.0 - std::exp(-2.0 * t));
  return std::exp(-(y - m) * (y - m) / (2.0 * v)) / std::sqrt(2.0 * std::numbers::pi * v);
}

/// Inverse-Gaussian IG(mu, lambda) moments and Laplace transform.
inline double ig_mean(double mu, double /*lambda*/) { return mu; }
inline double ig_variance(double mu, double lambda) { return mu * mu * mu / lambda; }
inline double ig_laplace(double mu, double lambda, double u) {
  return std::exp(lambda / mu * (1.0 - std::sqrt(1.0 + 2.0 * mu * mu * u / lambda)));
}

/// Laplace transform E e^{-u T_dt} = e^{-dt (sqrt(2u + m^2) - m)} of the
/// subordinator step: IG(dt/m, dt^2) for m > 0, Levy(scale dt^2) at m = 0.
inline double subordinator_laplace(double m, double dt, double u) {
  return std::exp(-dt * (std::sqrt(2.0 * u + m * m) - m));
}

/// One-sided stable-1/2 (Levy) law with scale c: CDF and quantiles via the
/// representation X = c/Z^2, Z standard normal: P(X <= x) = 2 Phi(-sqrt(c/x)).
inline double levy_cdf(double c, double x) {
  if (x <= 0.0) return 0.0;
  return 2.0 * normal_cdf(-std::sqrt(c / x));
}
inline double levy_quantile(double c, double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("levy_quantile: p outside (0,1)");
  const double q = normal_quantile(0.5 * p);  // negative
  return c / (q * q);
}
inline double levy_median(double c) { return levy_quantile(c, 0.5); }

/// The double time integral int_0^t int_0^t e^{-omega |r-s|} dr ds
/// = (2/omega)(t - (1 - e^{-omega t})/omega); the per-mode factor of the
/// field-averaged weight for a frozen particle path.
inline double frozen_double_integral(double omega, double t) {
  return 2.0 / omega * (t - (1.0 - std::exp(-omega * t)) / omega);
}

/// Characteristic exponents of the three free-particle kinds:
/// |u|^2/2 (brownian), |u| (cauchy), sqrt(|u|^2 + m^2) - m (relativistic).
inline double psi_brownian(double u) { return 0.5 * u * u; }
inline double psi_cauchy(double u) { return std::abs(u); }
inline double psi_relativistic(double u, double m) {
  return std::sqrt(u * u + m * m) - m;
}

/// Registry used by the `print-oracle` CLI: evaluates an oracle by name on a
/// positional argument list. Throws on unknown names or bad arity.
inline double eval(const std::string& name, std::span<const double> a) {
  auto need = [&](std::size_t n) {
    if (a.size() != n)
      throw std::invalid_argument("oracle '" + name + "' expects " +
                                  std::to_string(n) + " argument(s)");
  };
  if (name == "heat_kernel") { need(3); return heat_kernel(a[0], a[1], static_cast<int>(a[2])); }
  if (name == "cauchy_kernel") { need(2); return cauchy_kernel(a[0], a[1]); }
  if (name == "cauchy_cdf") { need(2); return cauchy_cdf(a[0], a[1]); }
  if (name == "oscillator_energy") { need(1); return oscillator_energy(a[0]); }
  if (name == "oscillator_ground") { need(2); return oscillator_ground(a[0], a[1]); }
  if (name == "oscillator_ground_density") { need(2); return oscillator_ground_density(a[0], a[1]); }
  if (name == "ou_autocovariance") { need(1); return ou_autocovariance(a[0]); }
  if (name == "mehler_density") { need(3); return mehler_density(a[0], a[1], a[2]); }
  if (name == "ig_mean") { need(2); return ig_mean(a[0], a[1]); }
  if (name == "ig_variance") { need(2); return ig_variance(a[0], a[1]); }
  if (name == "ig_laplace") { need(3); return ig_laplace(a[0], a[1], a[2]); }
  if (name == "subordinator_laplace") { need(3); return subordinator_laplace(a[0], a[1], a[2]); }
  if (name == "levy_cdf") { need(2); return levy_cdf(a[0], a[1]); }
  if (name == "levy_quantile") { need(2); return levy_quantile(a[0], a[1]); }
  if (name == "levy_median") { need(1); return levy_median(a[0]); }
  if (name == "frozen_double_integral") { need(2); return frozen_double_integral(a[0], a[1]); }
  if (name == "psi_brownian") { need(1); return psi_brownian(a[0]); }
  if (name == "psi_cauchy") { need(1); return psi_cauchy(a[0]); }
  if (name == "psi_relativistic") { need(2); return psi_relativistic(a[0], a[1]); }
  throw std::invalid_argument("unknown oracle: " + name);
}

/// Names accepted by eval(), for CLI help and audit listings.
inline std::vector<std::string> names() {
  return {"heat_kernel",       "cauchy_kernel",      "cauchy_cdf",
          "oscillator_energy", "oscillator_ground",  "oscillator_ground_density",
          "ou_autocovariance", "mehler_density",     "ig_mean",
          "ig_variance",       "ig_laplace",         "subordinator_laplace",
          "levy_cdf",          "levy_quantile",      "levy_median",
          "frozen_double_integral", "psi_brownian",  "psi_cauchy",
          "psi_relativistic"};
}

}  // namespace nelson::oracle
