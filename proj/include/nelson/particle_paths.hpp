#pragma once
/// \file
/// Free-particle path samplers: d-dimensional Brownian motion, the rotationally
/// symmetric Cauchy process, and the relativistic Cauchy process with rest mass
/// m, the latter two realized by subordination -- a Brownian motion evaluated
/// at an independent increasing jump-time process. The subordinator step over
/// dt is inverse-Gaussian IG(dt/m, dt^2), whose Laplace transform
/// e^{-dt(sqrt(2u + m^2) - m)} reproduces the generator sqrt(-Delta + m^2) - m
/// exactly; at m = 0 it degenerates to the one-sided stable-1/2 law and the
/// increments become Cauchy. Also here: the two-sided extension and a
/// Monte Carlo Kato-class diagnostic for potentials.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "nelson/rng.hpp"
#include "nelson/stats.hpp"

namespace nelson {

/// Which free particle drives the paths.
struct ProcessKind {
  enum class Tag { brownian, cauchy, relativistic_cauchy } tag = Tag::brownian;
  double m = 0.0;  ///< rest mass, > 0 for relativistic_cauchy

  static ProcessKind brownian() { return {Tag::brownian, 0.0}; }
  static ProcessKind cauchy() { return {Tag::cauchy, 0.0}; }
  static ProcessKind relativistic(double m) {
    if (m <= 0.0) throw std::invalid_argument("relativistic kind needs m > 0");
    return {Tag::relativistic_cauchy, m};
  }
  bool is_jump() const { return tag != Tag::brownian; }
  std::string name() const {
    switch (tag) {
      case Tag::brownian: return "brownian";
      case Tag::cauchy: return "cauchy";
      default: return "relativistic_cauchy";
    }
  }
};

/// Characteristic exponent psi with E e^{i u . X_dt} = e^{-dt psi(|u|)}:
/// |u|^2/2, |u|, sqrt(|u|^2 + m^2) - m for the three kinds.
inline double characteristic_exponent(const ProcessKind& kind, double u_norm) {
  switch (kind.tag) {
    case ProcessKind::Tag::brownian: return 0.5 * u_norm * u_norm;
    case ProcessKind::Tag::cauchy: return std::abs(u_norm);
    default: return std::sqrt(u_norm * u_norm + kind.m * kind.m) - kind.m;
  }
}

/// Brownian increment over dt: independent N(0, dt) coordinates.
inline std::vector<double> bm_increment(double dt, std::size_t dim, Rng& rng) {
  if (dt <= 0.0) throw std::invalid_argument("bm_increment: dt must be > 0");
  std::vector<double> dx(dim);
  const double sd = std::sqrt(dt);
  for (auto& v : dx) v = sd * rng.normal();
  return dx;
}

/// Subordinator increment over dt: the random time by which the underlying
/// Brownian motion advances. IG(dt/m, dt^2) for m > 0; one-sided stable-1/2
/// with scale dt^2 at m = 0 (same law in the m -> 0 limit). Rejects brownian.
inline double subordinator_increment(double dt, const ProcessKind& kind, Rng& rng) {
  if (dt <= 0.0) throw std::invalid_argument("subordinator_increment: dt must be > 0");
  switch (kind.tag) {
    case ProcessKind::Tag::brownian:
      throw std::invalid_argument("subordinator_increment: brownian has no subordinator");
    case ProcessKind::Tag::cauchy:
      return rng.levy(dt * dt);
    default:
      return rng.inverse_gaussian(dt / kind.m, dt * dt);
  }
}

/// Jump-process increment over dt: sqrt(T) x standard Gaussian with
/// T = subordinator_increment(dt). Characteristic function
/// e^{-dt (sqrt(|u|^2 + m^2) - m)}; standard d-dim Cauchy scaled by dt at m=0.
inline std::vector<double> levy_increment(double dt, std::size_t dim,
                                          const ProcessKind& kind, Rng& rng) {
  const double T = subordinator_increment(dt, kind, rng);
  std::vector<double> dx(dim);
  const double sd = std::sqrt(T);
  for (auto& v : dx) v = sd * rng.normal();
  return dx;
}

/// A sampled path on the fixed grid i * (T / n_steps); positions flattened
/// row-major, positions[i*dim + c].
struct ParticlePath {
  ProcessKind kind;
  std::size_t dim = 1;
  std::vector<double> times;
  std::vector<double> positions;

  std::size_t n_nodes() const { return times.size(); }
  double x(std::size_t i, std::size_t c = 0) const { return positions[i * dim + c]; }
};

inline ParticlePath sample_path(const std::vector<double>& x0, double horizon,
                                std::size_t n_steps, const ProcessKind& kind,
                                Rng& rng) {
  if (horizon <= 0.0 || n_steps == 0)
    throw std::invalid_argument("sample_path: need horizon > 0, n_steps >= 1");
  ParticlePath p;
  p.kind = kind;
  p.dim = x0.size();
  p.times.reserve(n_steps + 1);
  p.positions.reserve((n_steps + 1) * p.dim);
  p.times.push_back(0.0);
  p.positions.insert(p.positions.end(), x0.begin(), x0.end());
  const double dt = horizon / static_cast<double>(n_steps);
  std::vector<double> x = x0;
  for (std::size_t i = 1; i <= n_steps; ++i) {
    const std::vector<double> dx = kind.tag == ProcessKind::Tag::brownian
                                       ? bm_increment(dt, p.dim, rng)
                                       : levy_increment(dt, p.dim, kind, rng);
    for (std::size_t c = 0; c < p.dim; ++c) x[c] += dx[c];
    p.times.push_back(static_cast<double>(i) * dt);
    p.positions.insert(p.positions.end(), x.begin(), x.end());
  }
  return p;
}

/// Independent forward and backward halves from a common start; the glued
/// process has value x0 at time 0, independent increments on either side of
/// the origin, and time-reflection symmetric laws.
struct TwoSidedPath {
  ParticlePath forward, backward;
};

inline TwoSidedPath two_sided(const std::vector<double>& x0, double horizon,
                              std::size_t n_steps, const ProcessKind& kind,
                              Rng& rng) {
  TwoSidedPath p;
  p.forward = sample_path(x0, horizon, n_steps, kind, rng);
  p.backward = sample_path(x0, horizon, n_steps, kind, rng);
  return p;
}

/// One row of the Kato diagnostic: at time horizon t, the worst (over the
/// probe grid) Monte Carlo estimate of E^x[int_0^t |V(Z_s)| ds].
struct KatoRow {
  double t;
  double sup_estimate;
  double std_error;  ///< standard error at the arg-max probe point
};

struct KatoDiagnostic {
  std::vector<KatoRow> rows;
  bool ceiling_flag = false;  ///< an estimate exceeded the ceiling or blew up
  bool trends_to_zero = false;
};

/// Monte Carlo probe of the Kato-class property: a potential is admissible
/// when sup_x E^x[int_0^t |V(Z_s)| ds] -> 0 as t -> 0. The sup is proxied by
/// a finite probe grid (the exact sup is not computable); the time integral
/// uses the trapezoid rule on each sampled path. Estimates above `ceiling`
/// (or non-finite ones) raise the ceiling flag and are clamped to it.
inline KatoDiagnostic kato_diagnostic(const std::function<double(double)>& V,
                                      const ProcessKind& kind,
                                      const std::vector<double>& t_grid,
                                      const std::vector<double>& x_grid,
                                      std::size_t n_samples, Rng& rng,
                                      std::size_t n_steps = 16,
                                      double ceiling = 1e6) {
  if (t_grid.empty() || x_grid.empty() || n_samples < 2)
    throw std::invalid_argument("kato_diagnostic: empty grids or too few samples");
  KatoDiagnostic diag;
  for (double t : t_grid) {
    double sup = -std::numeric_limits<double>::infinity();
    double sup_se = 0.0;
    for (double x0 : x_grid) {
      RunningStat stat;
      for (std::size_t s = 0; s < n_samples; ++s) {
        const ParticlePath path = sample_path({x0}, t, n_steps, kind, rng);
        const double dt = t / static_cast<double>(n_steps);
        double integral = 0.0;
        for (std::size_t i = 0; i + 1 < path.n_nodes(); ++i)
          integral += 0.5 * dt * (std::abs(V(path.x(i))) + std::abs(V(path.x(i + 1))));
        if (!std::isfinite(integral) || integral > ceiling) {
          diag.ceiling_flag = true;
          integral = ceiling;
        }
        stat.add(integral);
      }
      if (stat.mean() > sup) {
        sup = stat.mean();
        sup_se = stat.std_error();
      }
    }
    diag.rows.push_back({t, sup, sup_se});
  }
  // Trend verdict: the smallest-t estimate is a small fraction of the largest,
  // within noise of a curve heading to zero.
  const auto [min_it, max_it] =
      std::minmax_element(diag.rows.begin(), diag.rows.end(),
                          [](const KatoRow& a, const KatoRow& b) { return a.t < b.t; });
  diag.trends_to_zero = !diag.ceiling_flag &&
                        min_it->sup_estimate <=
                            0.25 * max_it->sup_estimate + 3.0 * min_it->std_error;
  return diag;
}

}  // namespace nelson
