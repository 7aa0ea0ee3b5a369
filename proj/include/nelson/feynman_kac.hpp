#pragma once
/// \file
/// Path-integral (Feynman-Kac) estimators for semigroup matrix elements of the
/// coupled particle--field Hamiltonian, plus the exact Gaussian field oracle
/// that integrates the field out of a frozen particle trajectory. Three
/// mutually independent evaluation routes coexist:
///   (a) joint sampling: particle increments and exact field-mode transitions,
///       weight e^{-int V - int I} along the pair;
///   (b) field-integrated sampling: particle paths only, with the conditional
///       Gaussian expectation of e^{-int I} (and of exponential endpoint
///       factors) in closed form;
///   (c) the assembled sparse operator: Lanczos evaluation of e^{-tH} on the
///       discretized matrix element.
/// (a) and (b) share nothing but the particle sampler; (c) shares nothing with
/// either. Their pairwise agreement is the module's reason to exist.
///
/// Matrix elements are taken in the plain (untransformed) representation: the
/// potential rides in the path weight, the start point is uniform on the
/// operator box (Lebesgue measure, accounted by the box volume factor), and
/// the field starts in its stationary law — which is exactly the Gaussian
/// ground measure of the field part, so vacuum-factored elements need no
/// field reweighting at the endpoints.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nelson/field_modes.hpp"
#include "nelson/operators.hpp"
#include "nelson/particle_paths.hpp"
#include "nelson/rng.hpp"
#include "nelson/sparse.hpp"
#include "nelson/stats.hpp"

namespace nelson {

// --- path weight -------------------------------------------------------------

/// Log-weight of one sampled trajectory pair, split into its two components:
/// log W = -(pot_integral + int_integral), both trapezoidal time integrals on
/// the shared uniform grid. Trapezoid keeps the weight second-order accurate
/// in the step (the Richardson invariant tests pin the ratio near 4).
struct FKWeight {
  double pot_integral = 0.0;  ///< int_0^t V(x_s) ds
  double int_integral = 0.0;  ///< int_0^t I(x_s, xi_s) ds
  double log_weight() const { return -(pot_integral + int_integral); }
  double weight() const { return std::exp(log_weight()); }
};

namespace detail {
inline void require_shared_grid(std::span<const double> ta, std::span<const double> tb) {
  if (ta.size() != tb.size())
    throw std::invalid_argument("fk_weight: particle and field grids differ in length");
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (std::abs(ta[i] - tb[i]) > 1e-12 * std::max(1.0, std::abs(ta[i])))
      throw std::invalid_argument("fk_weight: particle and field time grids differ");
}
inline double trapezoid(std::span<const double> times, std::span<const double> vals) {
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < times.size(); ++i)
    acc += 0.5 * (times[i + 1] - times[i]) * (vals[i] + vals[i + 1]);
  return acc;
}
}  // namespace detail

/// Weight of a particle path against a potential only (no field).
inline FKWeight fk_weight(const ParticlePath& zp, const std::function<double(double)>& V) {
  std::vector<double> vs(zp.times.size());
  for (std::size_t i = 0; i < vs.size(); ++i) vs[i] = V(zp.x(i, 0));
  FKWeight w;
  w.pot_integral = detail::trapezoid(zp.times, vs);
  return w;
}

/// Weight of a joint (particle, field) trajectory. The two paths must live on
/// the same time grid; mismatched grids are a hard error, not a resample.
inline FKWeight fk_weight(const ParticlePath& zp, const FieldPath& fp, const ModeSet& ms,
                          const std::function<double(double)>& V) {
  detail::require_shared_grid(zp.times, fp.times);
  std::vector<double> vs(zp.times.size()), is(zp.times.size());
  for (std::size_t i = 0; i < vs.size(); ++i) {
    vs[i] = V(zp.x(i, 0));
    is[i] = interaction_value(fp.states[i], ms, zp.x(i, 0));
  }
  FKWeight w;
  w.pot_integral = detail::trapezoid(zp.times, vs);
  w.int_integral = detail::trapezoid(zp.times, is);
  return w;
}

// --- Monte Carlo estimate container ------------------------------------------

struct FKEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;
  std::string estimator;          ///< "joint", "field_oracle", "particle_only"
  bool variance_warning = false;  ///< one sample dominates the second moment
};

namespace detail {
inline FKEstimate finalize(const RunningStat& rs, double scale, double max_abs,
                           const std::string& label) {
  if (rs.count() < 2)
    throw std::invalid_argument("fk estimate: need at least 2 samples");
  FKEstimate est;
  est.value = scale * rs.mean();
  est.std_error = scale * rs.std_error();
  est.n_samples = rs.count();
  est.estimator = label;
  // Heavy-tail alarm: if a single draw carries most of the second moment, the
  // CLT error bar is meaningless and the caller should know.
  const double second = rs.variance() * static_cast<double>(rs.count() - 1) +
                        static_cast<double>(rs.count()) * rs.mean() * rs.mean();
  est.variance_warning = second > 0.0 && max_abs * max_abs > 0.5 * second;
  return est;
}
}  // namespace detail

// --- start law ------------------------------------------------------------------

/// Start distribution for the particle leg: a point mass (kernel tests) or
/// Lebesgue measure on a box (matrix elements; the estimator then carries the
/// box volume as an importance factor).
struct FKStart {
  enum class Kind { point, uniform };
  Kind kind = Kind::point;
  double a = 0.0, b = 0.0;
  static FKStart point(double x) { return {Kind::point, x, x}; }
  static FKStart uniform(double lo, double hi) {
    if (!(hi > lo)) throw std::invalid_argument("FKStart::uniform: empty box");
    return {Kind::uniform, lo, hi};
  }
  double draw(Rng& rng) const {
    return kind == Kind::point ? a : a + (b - a) * rng.uniform();
  }
  /// Importance weight of the start law relative to the target measure.
  double measure_factor() const { return kind == Kind::point ? 1.0 : b - a; }
};

// --- particle-only estimator -------------------------------------------------------

/// E-start[ f(Z_0) e^{-int_0^t V(Z_s) ds} g(Z_t) ], times the start measure
/// factor. With V = 0 and a point start this is the transition kernel paired
/// with g; with the oscillator well and f = g it decays like e^{-t/2}.
inline FKEstimate fk_particle_only(const ProcessKind& kind,
                                   const std::function<double(double)>& V,
                                   const std::function<double(double)>& f,
                                   const std::function<double(double)>& g, FKStart start,
                                   double t, std::size_t n_samples, std::size_t n_steps,
                                   Rng& rng) {
  RunningStat rs;
  double max_abs = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double x0 = start.draw(rng);
    ParticlePath zp = sample_path({x0}, t, n_steps, kind, rng);
    const double sample = f(x0) * fk_weight(zp, V).weight() * g(zp.x(n_steps, 0));
    rs.add(sample);
    max_abs = std::max(max_abs, std::abs(sample));
  }
  return detail::finalize(rs, start.measure_factor(), max_abs, "particle_only");
}

// --- Gaussian field oracle ----------------------------------------------------------

/// Conditional variance of int_0^t I(x_s, xi_s) ds given the particle path,
/// under the stationary field law. Since I is jointly Gaussian with stationary
/// per-quadrature variance 1/2 and per-mode correlation e^{-omega |r-s|}, the
/// variance is the double trapezoid
///   sum_j lambda_j^2 * (1/2) * sum_{r,s} w_r w_s e^{-omega_j |t_r - t_s|}
///                                        cos(k_j (x_r - x_s)),
/// (the cosine collects the cos*cos + sin*sin quadrature pairing). The double
/// sum is evaluated by a forward recursion in O(n) per mode — exactly equal to
/// the O(n^2) trapezoid, not an approximation of it.
inline double fk_field_variance(const ModeSet& ms, std::span<const double> times,
                                std::span<const double> xs) {
  if (times.size() != xs.size() || times.size() < 2)
    throw std::invalid_argument("fk_field_variance: bad path");
  const std::size_t n = times.size();
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double left = r == 0 ? 0.0 : times[r] - times[r - 1];
    const double right = r + 1 == n ? 0.0 : times[r + 1] - times[r];
    w[r] = 0.5 * (left + right);
  }
  double var = 0.0;
  for (std::size_t j = 0; j < ms.size(); ++j) {
    const double omega = ms.omega[j], k = ms.k[j];
    // A = sum_{s<r} w_s e^{i k x_s} e^{-omega (t_r - t_s)}, advanced in r.
    double a_re = 0.0, a_im = 0.0, diag = 0.0, cross = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      if (r > 0) {
        const double decay = std::exp(-omega * (times[r] - times[r - 1]));
        const double c = std::cos(k * xs[r - 1]), s = std::sin(k * xs[r - 1]);
        a_re = (a_re + w[r - 1] * c) * decay;
        a_im = (a_im + w[r - 1] * s) * decay;
      }
      // 2 Re( e^{-i k x_r} A ) collects both (r,s) and (s,r) for s < r.
      const double c = std::cos(k * xs[r]), s = std::sin(k * xs[r]);
      cross += 2.0 * w[r] * (c * a_re + s * a_im);
      diag += w[r] * w[r];
    }
    var += ms.lambda[j] * ms.lambda[j] * 0.5 * (diag + cross);
  }
  return var;
}

/// log E_field[ e^{-int I} | particle path ] = +variance/2 (the integrand is a
/// centered Gaussian). Always >= 0 (Jensen), and bounded by the path-free
/// envelope t * sum_j dk phi^2_j / omega_j^2 (tested as an invariant).
inline double gaussian_field_oracle(const ModeSet& ms, std::span<const double> times,
                                    std::span<const double> xs) {
  return 0.5 * fk_field_variance(ms, times, xs);
}

// --- factorized matrix-element vectors ------------------------------------------------

/// Field part of a matrix-element vector, a function of the single pairing
/// value xi(p) with momentum profile p: the vacuum (identically 1 in the
/// ground-measure representation), an exponential tilt e^{c xi(p)}, or a
/// polynomial sum_k a_k xi(p)^k. Exponentials keep the field-integrated route
/// in closed (Gaussian) form; polynomials are joint-sampling only.
struct FieldFactor {
  enum class Kind { vacuum, exponential, polynomial };
  Kind kind = Kind::vacuum;
  double c = 0.0;                ///< exponential coefficient
  std::vector<double> profile;   ///< p on the mode grid (exponential, polynomial)
  std::vector<double> poly;      ///< a_0, a_1, ... (polynomial)

  static FieldFactor vacuum() { return {}; }
  static FieldFactor exponential(double c, std::vector<double> profile) {
    FieldFactor f;
    f.kind = Kind::exponential;
    f.c = c;
    f.profile = std::move(profile);
    return f;
  }
  static FieldFactor polynomial(std::vector<double> coeffs, std::vector<double> profile) {
    FieldFactor f;
    f.kind = Kind::polynomial;
    f.poly = std::move(coeffs);
    f.profile = std::move(profile);
    return f;
  }

  double eval_scalar(double xi) const {
    switch (kind) {
      case Kind::vacuum: return 1.0;
      case Kind::exponential: return std::exp(c * xi);
      case Kind::polynomial: {
        double acc = 0.0;
        for (std::size_t k = poly.size(); k-- > 0;) acc = acc * xi + poly[k];
        return acc;
      }
    }
    return 1.0;
  }
  double eval(const FieldState& s, const ModeSet& ms) const {
    if (kind == Kind::vacuum) return 1.0;
    return eval_scalar(pair(s, ms, profile, 0.0));
  }
};

/// (particle function) x (field factor) — the factorized test vectors the
/// estimators accept. The particle factor is an arbitrary callable; the grid
/// embedding evaluates it at the nodes.
struct ElementVector {
  std::function<double(double)> particle;
  FieldFactor field;
};

/// Discrete vacuum amplitude at the quadrature coordinates of state a: the
/// product over quadratures of c_q e^{-q^2/2} with c_q normalizing each factor
/// to unit grid-measure norm. This is the exact zero mode of the field part,
/// so vacuum-factored vectors have no spurious field excitation at g = 0.
inline double vacuum_amplitude(const OperatorSpace& space, std::size_t a) {
  const Grid1d& qg = space.grid.quadrature;
  double log_c = 0.0;
  {
    double z = 0.0;
    for (std::size_t i = 0; i < qg.n; ++i) z += qg.spacing() * std::exp(-qg.node(i) * qg.node(i));
    log_c = -0.5 * std::log(z);
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < space.grid.n_quadratures(); ++j) {
    const double q = space.q_of(a, j);
    acc += log_c - 0.5 * q * q;
  }
  return std::exp(acc);
}

/// Embed a factorized vector into the operator's l2 space:
/// U_a = particle(x_a) * field(xi_grid(a)) * vacuum(q_a) * sqrt(cell volume),
/// so that <U, U'>_{l2} approximates the model inner product (dx x Gaussian).
inline std::vector<double> embed_element(const NelsonOperator& op, const ElementVector& ev) {
  const OperatorSpace& space = op.space;
  std::vector<double> u(space.dim());
  const double sw = std::sqrt(space.grid.cell_volume());
  // xi(p) on the grid for non-vacuum factors.
  std::vector<double> xi;
  if (ev.field.kind != FieldFactor::Kind::vacuum) {
    if (ev.field.profile.size() < space.grid.n_op)
      throw std::invalid_argument("embed_element: field profile shorter than operator modes");
    xi = grid_function_xi(space, op.modes, ev.field.profile);
  }
  for (std::size_t a = 0; a < u.size(); ++a) {
    const double fld =
        ev.field.kind == FieldFactor::Kind::vacuum ? 1.0 : ev.field.eval_scalar(xi[a]);
    u[a] = ev.particle(space.x_of(a)) * fld * vacuum_amplitude(space, a) * sw;
  }
  return u;
}

// --- coupled matrix elements: three routes ----------------------------------------------

/// Shared configuration for the Monte Carlo routes. The mode set is the
/// sampler-level truth; cross-checks against the assembled operator are only
/// meaningful when the operator retains all of it (n_op == ms.size()), since
/// the routes must estimate the same truncated model.
struct FKConfig {
  ModeSet ms;
  ProcessKind kind = ProcessKind::brownian();
  std::function<double(double)> V;
  double box_lo = -8.0, box_hi = 8.0;
  std::size_t n_samples = 100000;
  std::size_t n_steps = 64;
};

/// Route (a): joint particle + field sampling of
///   Vol * E[ Phi(Z_0, xi_0) e^{-int V - int I} Psi(Z_t, xi_t) ].
inline FKEstimate fk_nelson_element_joint(const FKConfig& cfg, const ElementVector& Phi,
                                          const ElementVector& Psi, double t, Rng& rng) {
  FKStart start = FKStart::uniform(cfg.box_lo, cfg.box_hi);
  RunningStat rs;
  double max_abs = 0.0;
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    const double x0 = start.draw(rng);
    ParticlePath zp = sample_path({x0}, t, cfg.n_steps, cfg.kind, rng);
    FieldPath fp = sample_field_path(cfg.ms, t, cfg.n_steps, rng);
    const FKWeight w = fk_weight(zp, fp, cfg.ms, cfg.V);
    const double sample = Phi.particle(x0) * Phi.field.eval(fp.states.front(), cfg.ms) *
                          w.weight() * Psi.particle(zp.x(cfg.n_steps, 0)) *
                          Psi.field.eval(fp.states.back(), cfg.ms);
    rs.add(sample);
    max_abs = std::max(max_abs, std::abs(sample));
  }
  return detail::finalize(rs, start.measure_factor(), max_abs, "joint");
}

namespace detail {
/// Conditional log of E_field[ e^{-int I} e^{c0 xi_0(p0)} e^{ct xi_t(pt)} ]
/// given the particle path: all three terms are jointly Gaussian and centered,
/// so the log is half the variance of their sum. The cross-covariances extend
/// the oracle recursion with endpoint decay sums.
inline double field_log_moment(const ModeSet& ms, std::span<const double> times,
                               std::span<const double> xs, const FieldFactor& f0,
                               const FieldFactor& ft) {
  if (f0.kind == FieldFactor::Kind::polynomial || ft.kind == FieldFactor::Kind::polynomial)
    throw std::invalid_argument(
        "field-integrated route: polynomial field factors need joint sampling");
  double var = fk_field_variance(ms, times, xs);
  const double horizon = times.back() - times.front();
  const std::size_t n = times.size();
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double left = r == 0 ? 0.0 : times[r] - times[r - 1];
    const double right = r + 1 == n ? 0.0 : times[r + 1] - times[r];
    w[r] = 0.5 * (left + right);
  }
  // Z = -int I + c0 xi_0(p0) + ct xi_t(pt). Var(int I) is above; endpoint
  // variances/covariances come from the stationary mode law. Only cosine
  // quadratures pair with the origin-anchored endpoint smears, giving the
  // cos(k x_r) geometry in the mixed sums.
  auto endpoint_terms = [&](const FieldFactor& f, bool at_end, double& var_out,
                            double& cov_int_out) {
    var_out = 0.0;
    cov_int_out = 0.0;
    if (f.kind != FieldFactor::Kind::exponential) return;
    std::span<const double> p(f.profile);
    var_out = covariance_exact(ms, p.subspan(0, ms.size()), p.subspan(0, ms.size()), 0.0);
    for (std::size_t j = 0; j < ms.size(); ++j) {
      const double coeff = std::sqrt(ms.dk) * f.profile[j] / std::sqrt(ms.omega[j]);
      double acc = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const double lag = at_end ? horizon - times[r] : times[r];
        acc += w[r] * std::exp(-ms.omega[j] * lag) * std::cos(ms.k[j] * xs[r]);
      }
      // Cov(int I, xi_endpoint(p)) = sum_j lambda_j coeff_j (1/2) acc_j.
      cov_int_out += ms.lambda[j] * coeff * 0.5 * acc;
    }
  };
  double v0 = 0.0, ci0 = 0.0, vt = 0.0, cit = 0.0;
  endpoint_terms(f0, false, v0, ci0);
  endpoint_terms(ft, true, vt, cit);
  const double c0 = f0.kind == FieldFactor::Kind::exponential ? f0.c : 0.0;
  const double ct = ft.kind == FieldFactor::Kind::exponential ? ft.c : 0.0;
  var += c0 * c0 * v0 + ct * ct * vt - 2.0 * c0 * ci0 - 2.0 * ct * cit;
  if (c0 != 0.0 && ct != 0.0) {
    std::span<const double> p0(f0.profile), pt(ft.profile);
    var += 2.0 * c0 * ct *
           covariance_exact(ms, p0.subspan(0, ms.size()), pt.subspan(0, ms.size()), horizon);
  }
  return 0.5 * var;
}
}  // namespace detail

/// Route (b): particle paths only; the field expectation of the weight and of
/// exponential endpoint factors is inserted in closed form. Lower variance
/// than (a) and independent of the field sampler.
inline FKEstimate fk_nelson_element_oracle(const FKConfig& cfg, const ElementVector& Phi,
                                           const ElementVector& Psi, double t, Rng& rng) {
  FKStart start = FKStart::uniform(cfg.box_lo, cfg.box_hi);
  RunningStat rs;
  double max_abs = 0.0;
  std::vector<double> xs(cfg.n_steps + 1);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    const double x0 = start.draw(rng);
    ParticlePath zp = sample_path({x0}, t, cfg.n_steps, cfg.kind, rng);
    for (std::size_t r = 0; r <= cfg.n_steps; ++r) xs[r] = zp.x(r, 0);
    const double log_field =
        detail::field_log_moment(cfg.ms, zp.times, xs, Phi.field, Psi.field);
    const double sample = Phi.particle(x0) * Psi.particle(xs.back()) *
                          std::exp(-fk_weight(zp, cfg.V).pot_integral + log_field);
    rs.add(sample);
    max_abs = std::max(max_abs, std::abs(sample));
  }
  return detail::finalize(rs, start.measure_factor(), max_abs, "field_oracle");
}

/// Route (c): deterministic evaluation <Phi, e^{-tH} Psi> on the assembled
/// operator via the Lanczos exponential.
inline double fk_nelson_element_krylov(const NelsonOperator& op, const ElementVector& Phi,
                                       const ElementVector& Psi, double t) {
  std::vector<double> uphi = embed_element(op, Phi);
  std::vector<double> upsi = embed_element(op, Psi);
  std::vector<double> w = expm_multiply(op.H, t, upsi);
  return dot(uphi, w);
}

// --- continuum evaluation of grid vectors ------------------------------------------------

/// Evaluate an l2 grid vector as a function on the continuum state space by
/// multilinear interpolation of its ground-measure-representation values
/// u_a / (vacuum_a sqrt(w)). Outside the particle box the function is 0
/// (Dirichlet); outside the quadrature box the value is clamped to the face
/// (the weighted representation of the coupled ground tends to a constant in
/// q at weak coupling, so clamping is the faithful extension). Used to feed
/// eigensolver outputs back into the samplers (e.g. a no-transient check with
/// the coupled ground state as the test vector).
class GridFunction {
 public:
  GridFunction(const NelsonOperator& op, std::vector<double> vec)
      : space_(op.space), vals_(std::move(vec)) {
    const double sw = std::sqrt(space_.grid.cell_volume());
    for (std::size_t a = 0; a < vals_.size(); ++a)
      vals_[a] /= vacuum_amplitude(space_, a) * sw;
  }

  double operator()(double x, const FieldState& s, const ModeSet& ms) const {
    const Grid1d& xg = space_.grid.particle;
    const Grid1d& qg = space_.grid.quadrature;
    const std::size_t n_quad = space_.grid.n_quadratures();
    if (n_quad != (ms.size() * 2))
      throw std::invalid_argument("GridFunction: mode count mismatch");
    // Locate the x cell; outside the open box the Dirichlet extension is 0.
    double fx = (x - xg.node(0)) / xg.spacing();
    if (fx < -1.0 || fx > static_cast<double>(xg.n)) return 0.0;
    // Corner anchors and fractions per axis (clamped for the q axes).
    std::vector<std::size_t> lo(1 + n_quad);
    std::vector<double> frac(1 + n_quad);
    auto clamp_axis = [](double f, std::size_t n, std::size_t& lo_i, double& frac_i) {
      if (f <= 0.0) {
        lo_i = 0;
        frac_i = 0.0;
      } else if (f >= static_cast<double>(n - 1)) {
        lo_i = n - 2;
        frac_i = 1.0;
      } else {
        lo_i = static_cast<std::size_t>(f);
        frac_i = f - static_cast<double>(lo_i);
      }
    };
    // x axis: linear to the zero boundary half a cell outside the end nodes.
    double x_edge_scale = 1.0;
    if (fx < 0.0) {
      lo[0] = 0;
      frac[0] = 0.0;
      x_edge_scale = 1.0 + fx;  // fades to 0 at the box edge
    } else if (fx > static_cast<double>(xg.n - 1)) {
      lo[0] = xg.n - 1;
      frac[0] = 0.0;
      x_edge_scale = 1.0 - (fx - static_cast<double>(xg.n - 1));
    } else {
      clamp_axis(fx, xg.n, lo[0], frac[0]);
    }
    for (std::size_t j = 0; j < n_quad; ++j) {
      const double q = j % 2 == 0 ? s.xi_c[j / 2] : s.xi_s[j / 2];
      const double fq = (q - qg.node(0)) / qg.spacing();
      clamp_axis(fq, qg.n, lo[1 + j], frac[1 + j]);
    }
    // Multilinear blend over the 2^(1+n_quad) cell corners.
    const std::size_t corners = static_cast<std::size_t>(1) << (1 + n_quad);
    double acc = 0.0;
    for (std::size_t mask = 0; mask < corners; ++mask) {
      double weight = 1.0;
      std::size_t a;
      {
        const std::size_t ix = lo[0] + ((mask & 1u) != 0 && lo[0] + 1 < xg.n ? 1 : 0);
        weight *= (mask & 1u) ? frac[0] : 1.0 - frac[0];
        a = ix;
      }
      for (std::size_t j = 0; j < n_quad; ++j) {
        const bool hi = (mask >> (1 + j)) & 1u;
        const std::size_t iq = lo[1 + j] + (hi ? 1 : 0);
        weight *= hi ? frac[1 + j] : 1.0 - frac[1 + j];
        a = a * qg.n + iq;
      }
      if (weight != 0.0) acc += weight * vals_[a];
    }
    return acc * x_edge_scale;
  }

 private:
  OperatorSpace space_;
  std::vector<double> vals_;
};

// --- ground-energy estimate ---------------------------------------------------------------

/// Estimate of the bottom eigenvalue from the decay of the diagonal matrix
/// element m(t) = <Psi, e^{-tH} Psi>: for large t, -log m(t) has slope E. One
/// set of joint trajectories is evaluated at every checkpoint (cumulative
/// trapezoid), the tail window is fitted by least squares in log scale, and
/// the slope error bar comes from a delete-one-block jackknife over paths
/// (the checkpoints share paths, so per-point error bars alone would
/// understate the slope error).
struct EnergyFit {
  double energy = 0.0;
  double std_error = 0.0;
  std::vector<double> t_grid;
  std::vector<double> values;      ///< m(t_k) estimates
  std::vector<double> std_errors;  ///< per-checkpoint standard errors
  std::size_t n_samples = 0;
  std::size_t fit_from = 0;     ///< first checkpoint index used in the fit
  bool non_monotone = false;    ///< m(t) rose between checkpoints beyond noise
};

/// Psi as a sampler-side function: a factorized vector or any callable
/// (x, field state) -> value, so eigensolver outputs can be replayed.
using StateFunction = std::function<double(double, const FieldState&)>;

inline StateFunction make_state_function(ElementVector ev, ModeSet ms) {
  return [ev = std::move(ev), ms = std::move(ms)](double x, const FieldState& s) {
    return ev.particle(x) * ev.field.eval(s, ms);
  };
}

inline EnergyFit ground_energy_estimate(const FKConfig& cfg, const StateFunction& psi,
                                        std::span<const double> t_grid, double fit_t_min,
                                        Rng& rng, std::size_t n_blocks = 20) {
  if (t_grid.size() < 2) throw std::invalid_argument("ground_energy_estimate: need >= 2 times");
  for (std::size_t k = 0; k + 1 < t_grid.size(); ++k)
    if (!(t_grid[k] < t_grid[k + 1]))
      throw std::invalid_argument("ground_energy_estimate: t_grid must increase");
  const double t_max = t_grid.back();
  const std::size_t n_steps = cfg.n_steps;
  const double dt = t_max / static_cast<double>(n_steps);
  // Checkpoint step indices (snap to the step grid; require exact hits).
  std::vector<std::size_t> cp(t_grid.size());
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    const double steps = t_grid[k] / dt;
    cp[k] = static_cast<std::size_t>(std::llround(steps));
    if (std::abs(steps - static_cast<double>(cp[k])) > 1e-9 || cp[k] == 0 || cp[k] > n_steps)
      throw std::invalid_argument("ground_energy_estimate: t_grid must lie on the step grid");
  }
  FKStart start = FKStart::uniform(cfg.box_lo, cfg.box_hi);
  const double vol = start.measure_factor();

  const std::size_t K = t_grid.size();
  std::vector<RunningStat> rs(K);
  std::vector<std::vector<double>> block_sum(n_blocks, std::vector<double>(K, 0.0));
  std::vector<std::size_t> block_count(n_blocks, 0);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    const double x0 = start.draw(rng);
    ParticlePath zp = sample_path({x0}, t_max, n_steps, cfg.kind, rng);
    FieldPath fp = sample_field_path(cfg.ms, t_max, n_steps, rng);
    const double head = psi(x0, fp.states.front());
    // Cumulative trapezoid of V + I along the joint path.
    double integral = 0.0;
    std::size_t next = 0;
    double prev_val = cfg.V(zp.x(0, 0)) + interaction_value(fp.states[0], cfg.ms, zp.x(0, 0));
    const std::size_t blk = i % n_blocks;
    ++block_count[blk];
    for (std::size_t r = 1; r <= n_steps; ++r) {
      const double val =
          cfg.V(zp.x(r, 0)) + interaction_value(fp.states[r], cfg.ms, zp.x(r, 0));
      integral += 0.5 * dt * (prev_val + val);
      prev_val = val;
      while (next < K && cp[next] == r) {
        const double sample =
            vol * head * std::exp(-integral) * psi(zp.x(r, 0), fp.states[r]);
        rs[next].add(sample);
        block_sum[blk][next] += sample;
        ++next;
      }
    }
  }

  EnergyFit fit;
  fit.t_grid.assign(t_grid.begin(), t_grid.end());
  fit.n_samples = cfg.n_samples;
  for (std::size_t k = 0; k < K; ++k) {
    fit.values.push_back(rs[k].mean());
    fit.std_errors.push_back(rs[k].std_error());
    if (fit.values.back() <= 0.0)
      throw std::runtime_error("ground_energy_estimate: non-positive m(t); more samples needed");
  }
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const double rise = fit.values[k + 1] - fit.values[k];
    const double noise = 2.0 * std::hypot(fit.std_errors[k], fit.std_errors[k + 1]);
    if (rise > noise) fit.non_monotone = true;
  }
  while (fit.fit_from + 2 < K && t_grid[fit.fit_from] + 1e-12 < fit_t_min) ++fit.fit_from;

  // Slope of -log m(t) on the tail window; jackknife over path blocks.
  auto slope_of = [&](const std::function<double(std::size_t)>& value_at) {
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, cnt = 0.0;
    for (std::size_t k = fit.fit_from; k < K; ++k) {
      const double x = t_grid[k], y = -std::log(value_at(k));
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
      cnt += 1.0;
    }
    return (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
  };
  fit.energy = slope_of([&](std::size_t k) { return fit.values[k]; });
  std::vector<double> jack;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    if (block_count[b] == 0) continue;
    jack.push_back(slope_of([&](std::size_t k) {
      const double total = fit.values[k] * static_cast<double>(cfg.n_samples);
      return (total - block_sum[b][k]) /
             static_cast<double>(cfg.n_samples - block_count[b]);
    }));
  }
  const double nb = static_cast<double>(jack.size());
  double jb = 0.0;
  for (double v : jack) jb += v;
  jb /= nb;
  double var = 0.0;
  for (double v : jack) var += (v - jb) * (v - jb);
  fit.std_error = std::sqrt((nb - 1.0) / nb * var);
  return fit;
}

}  // namespace nelson
