#pragma once
/// \file
/// Finite mode-set discretization of the scalar field and its stationary
/// Ornstein-Uhlenbeck dynamics. Modes k_j = j*dk on (0, k_max] carry two
/// quadratures (cosine/sine), so the field seen from particle position x
/// pairs as cos(k x) xi_c + sin(k x) xi_s. Each quadrature is a stationary OU
/// process with variance 1/2 and relaxation rate omega(k) = sqrt(k^2 + nu^2);
/// the 1/sqrt(omega) weight of the Gaussian-space pairing is carried by the
/// pairing coefficients. This normalization reproduces the mode covariance
///
///   Cov(xi_t(f), xi_s(g)) = sum_j dk f^(k_j) g^(k_j) e^{-|t-s| omega_j} / (2 omega_j),
///
/// and makes the interaction at x literally the pairing with the translated
/// form factor phi^(k) = g e^{-k^2/(2 Lambda^2)}.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "nelson/rng.hpp"

namespace nelson {

/// Stationary variance of every quadrature coordinate.
inline constexpr double kQuadratureVariance = 0.5;

struct ModeSet {
  std::vector<double> k;            ///< mode momenta k_j = j*dk, j = 1..n
  std::vector<double> omega;        ///< dispersion omega(k_j) = sqrt(k_j^2 + nu^2)
  std::vector<double> form_factor;  ///< phi^(k_j) = g exp(-k_j^2 / (2 Lambda^2))
  std::vector<double> lambda;       ///< coupling sqrt(dk) phi^(k_j) / sqrt(omega_j)
  double dk = 0.0;                  ///< mode spacing k_max / n_modes
  double nu = 0.0;                  ///< boson mass
  double g = 0.0;                   ///< coupling strength
  double cutoff = 0.0;              ///< Gaussian momentum cutoff Lambda

  std::size_t size() const { return k.size(); }
};

/// Uniform mode set on (0, k_max]. Throws if any omega(k_j) = 0: a massless
/// zero mode has no normalizable stationary law.
inline ModeSet build_mode_set(std::size_t n_modes, double k_max, double nu,
                              double g, double cutoff) {
  if (n_modes == 0 || k_max <= 0.0)
    throw std::invalid_argument("build_mode_set: need n_modes >= 1 and k_max > 0");
  ModeSet ms;
  ms.dk = k_max / static_cast<double>(n_modes);
  ms.nu = nu;
  ms.g = g;
  ms.cutoff = cutoff;
  ms.k.reserve(n_modes);
  for (std::size_t j = 1; j <= n_modes; ++j) {
    const double kj = static_cast<double>(j) * ms.dk;
    const double wj = std::sqrt(kj * kj + nu * nu);
    if (wj == 0.0) throw std::invalid_argument("build_mode_set: omega(k_j) = 0");
    const double ff = g * std::exp(-kj * kj / (2.0 * cutoff * cutoff));
    ms.k.push_back(kj);
    ms.omega.push_back(wj);
    ms.form_factor.push_back(ff);
    ms.lambda.push_back(std::sqrt(ms.dk) * ff / std::sqrt(wj));
  }
  return ms;
}

/// First n modes of ms, with dk unchanged. Operator-level builders retain
/// fewer modes than the samplers; the retained set must keep the original
/// spacing so closed-form sums over the truncation stay comparable.
inline ModeSet truncate_modes(const ModeSet& ms, std::size_t n) {
  if (n > ms.size()) throw std::invalid_argument("truncate_modes: n exceeds mode count");
  ModeSet t = ms;
  t.k.resize(n);
  t.omega.resize(n);
  t.form_factor.resize(n);
  t.lambda.resize(n);
  return t;
}

/// One field configuration: the two quadrature coordinates of every mode.
struct FieldState {
  std::vector<double> xi_c, xi_s;
};

/// Draw from the stationary law: every quadrature independent N(0, 1/2).
inline FieldState stationary_sample(const ModeSet& ms, Rng& rng) {
  const double sd = std::sqrt(kQuadratureVariance);
  FieldState s;
  s.xi_c.resize(ms.size());
  s.xi_s.resize(ms.size());
  for (std::size_t j = 0; j < ms.size(); ++j) {
    s.xi_c[j] = sd * rng.normal();
    s.xi_s[j] = sd * rng.normal();
  }
  return s;
}

/// Exact OU transition over any dt > 0, per quadrature:
/// xi' = e^{-omega dt} xi + sqrt((1 - e^{-2 omega dt})/2) N(0,1).
/// Exactness means no step-size bias: the map preserves the stationary law
/// and composes exactly (semigroup property).
inline void ou_step(const ModeSet& ms, FieldState& s, double dt, Rng& rng) {
  if (dt <= 0.0) throw std::invalid_argument("ou_step: dt must be > 0");
  for (std::size_t j = 0; j < ms.size(); ++j) {
    const double a = std::exp(-ms.omega[j] * dt);
    const double sd = std::sqrt(kQuadratureVariance * (1.0 - a * a));
    s.xi_c[j] = a * s.xi_c[j] + sd * rng.normal();
    s.xi_s[j] = a * s.xi_s[j] + sd * rng.normal();
  }
}

/// Pairing xi(f) of the state with a momentum profile f^ sampled at the
/// modes, translated to particle position x:
///   sum_j sqrt(dk) (f^(k_j)/sqrt(omega_j)) (cos(k_j x) xi_c[j] + sin(k_j x) xi_s[j]).
/// Linear in the state and in f^; under the stationary law,
/// Var = covariance_exact(f, f, 0).
inline double pair(const FieldState& s, const ModeSet& ms,
                   std::span<const double> f_hat, double x = 0.0) {
  if (f_hat.size() != ms.size() || s.xi_c.size() != ms.size())
    throw std::invalid_argument("pair: size mismatch");
  double acc = 0.0;
  for (std::size_t j = 0; j < ms.size(); ++j) {
    const double w = std::sqrt(ms.dk) * f_hat[j] / std::sqrt(ms.omega[j]);
    acc += w * (std::cos(ms.k[j] * x) * s.xi_c[j] + std::sin(ms.k[j] * x) * s.xi_s[j]);
  }
  return acc;
}

/// Interaction energy at particle position x: the pairing with the translated
/// form factor, sum_j lambda_j (cos(k_j x) xi_c[j] + sin(k_j x) xi_s[j]).
inline double interaction_value(const FieldState& s, const ModeSet& ms, double x) {
  if (s.xi_c.size() != ms.size())
    throw std::invalid_argument("interaction_value: size mismatch");
  double acc = 0.0;
  for (std::size_t j = 0; j < ms.size(); ++j)
    acc += ms.lambda[j] *
           (std::cos(ms.k[j] * x) * s.xi_c[j] + std::sin(ms.k[j] * x) * s.xi_s[j]);
  return acc;
}

/// Stationary covariance of two pairings at time lag `lag`:
/// sum_j dk f^(k_j) g^(k_j) e^{-|lag| omega_j} / (2 omega_j).
inline double covariance_exact(const ModeSet& ms, std::span<const double> f_hat,
                               std::span<const double> g_hat, double lag) {
  if (f_hat.size() != ms.size() || g_hat.size() != ms.size())
    throw std::invalid_argument("covariance_exact: size mismatch");
  double acc = 0.0;
  for (std::size_t j = 0; j < ms.size(); ++j)
    acc += ms.dk * f_hat[j] * g_hat[j] * std::exp(-std::abs(lag) * ms.omega[j]) /
           (2.0 * ms.omega[j]);
  return acc;
}

/// Quadrature of the squared field norm with one omega weight,
/// ||sqrt(omega) h||^2 = sum_j dk h^(k_j)^2: the closed-form variance of the
/// pairing functional's Dirichlet form (twice the lag-0 covariance of
/// sqrt(omega) h with itself).
inline double sqrt_omega_norm2(const ModeSet& ms, std::span<const double> h_hat) {
  if (h_hat.size() != ms.size())
    throw std::invalid_argument("sqrt_omega_norm2: size mismatch");
  double acc = 0.0;
  for (std::size_t j = 0; j < ms.size(); ++j) acc += ms.dk * h_hat[j] * h_hat[j];
  return acc;
}

/// Tabulates a momentum profile on the mode grid.
inline std::vector<double> sample_profile(const ModeSet& ms,
                                          const std::function<double(double)>& f_hat) {
  std::vector<double> out(ms.size());
  for (std::size_t j = 0; j < ms.size(); ++j) out[j] = f_hat(ms.k[j]);
  return out;
}

/// A field trajectory on a uniform time grid (exact OU transitions between
/// nodes, stationary start).
struct FieldPath {
  std::vector<double> times;
  std::vector<FieldState> states;
};

inline FieldPath sample_field_path(const ModeSet& ms, double horizon,
                                   std::size_t n_steps, Rng& rng) {
  if (n_steps == 0 || horizon <= 0.0)
    throw std::invalid_argument("sample_field_path: need horizon > 0, n_steps >= 1");
  FieldPath p;
  p.times.reserve(n_steps + 1);
  p.states.reserve(n_steps + 1);
  const double dt = horizon / static_cast<double>(n_steps);
  FieldState s = stationary_sample(ms, rng);
  p.times.push_back(0.0);
  p.states.push_back(s);
  for (std::size_t i = 1; i <= n_steps; ++i) {
    ou_step(ms, s, dt, rng);
    p.times.push_back(static_cast<double>(i) * dt);
    p.states.push_back(s);
  }
  return p;
}

}  // namespace nelson
