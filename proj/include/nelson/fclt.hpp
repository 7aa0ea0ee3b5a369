#pragma once
// Martingale construction and functional central-limit diagnostics for the
// transformed lattice chain.  For a grid function f the Dynkin compensation
//
//     M_t = f(X_t) - f(X_0) + \int_0^t (Lf)(X_s) ds
//
// is a martingale (the semigroup is e^{-tL}, so the probabilistic generator
// is -L).  The compensator integral is computed exactly from the jump
// skeleton (the integrand is piecewise constant), so the only randomness in
// the diagnostics is the chain itself.  Under the stationary start,
//
//     E[M_t^2] = t * sum_{a!=b} m_a r(a,b) (f_b - f_a)^2    for every t > 0,
//
// which is the same quantity dirichlet_sigma2() computes from the operator;
// the Gaussian limit then follows at large times by ergodic averaging of the
// bracket.  These identities drive the checks below.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "operators.hpp"
#include "pphi1.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace nelson {

// ---------------------------------------------------------------------------
// Probe functions
// ---------------------------------------------------------------------------

/// A family of grid functions with their generator images and predicted
/// martingale variances sigma^2 = sum m_a r(a,b) (f_b - f_a)^2.
struct ProbeSet {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> f;
  std::vector<std::vector<double>> lf;   ///< L f per probe
  std::vector<double> sigma2;            ///< Dirichlet-route prediction per probe

  std::size_t size() const { return ids.size(); }

  void add(const MarkovGenerator& gen, std::string id, std::vector<double> values) {
    if (values.size() != gen.L.n) throw std::invalid_argument("ProbeSet::add: dimension mismatch");
    lf.push_back(gen.apply(values));
    // sigma^2 via the edge sum m_a r(a,b)(f_b - f_a)^2 over the rate table.
    double s2 = 0.0;
    for (std::size_t a = 0; a < gen.L.n; ++a) {
      const std::uint64_t begin = gen.L.row_ptr[a], end = gen.L.row_ptr[a + 1];
      for (std::uint64_t k = begin; k < end; ++k) {
        const std::size_t b = gen.L.col[k];
        if (b == a) continue;
        const double rate = -gen.L.val[k];
        if (rate <= 0.0) continue;
        const double df = values[b] - values[a];
        s2 += gen.stationary[a] * rate * df * df;
      }
    }
    sigma2.push_back(s2);
    ids.push_back(std::move(id));
    f.push_back(std::move(values));
  }
};

/// Standard probe family: constant, x, x^2, the smeared field coordinate,
/// and the sign of x - median(x).  The constant probe is an exactness
/// control (its martingale vanishes identically up to row-sum round-off).
inline ProbeSet standard_probes(const NelsonOperator& op, const MarkovGenerator& gen,
                                std::span<const double> h_hat) {
  const OperatorSpace& space = op.space;
  ProbeSet probes;
  probes.add(gen, "const", std::vector<double>(space.dim(), 1.0));
  std::vector<double> fx = grid_function_x(space);
  probes.add(gen, "x", fx);
  probes.add(gen, "x2", grid_function_product(fx, fx));
  if (space.grid.n_op > 0) probes.add(gen, "xi_h", grid_function_xi(space, op.modes, h_hat));

  // Median of the stationary x-marginal.
  const std::size_t nx = space.grid.particle.n;
  std::vector<double> px(nx, 0.0);
  for (std::size_t a = 0; a < gen.L.n; ++a) px[space.x_index(a)] += gen.stationary[a];
  double acc = 0.0;
  double median = space.grid.particle.node(nx - 1);
  for (std::size_t i = 0; i < nx; ++i) {
    acc += px[i];
    if (acc >= 0.5) {
      median = space.grid.particle.node(i);
      break;
    }
  }
  std::vector<double> sgn(space.dim());
  for (std::size_t a = 0; a < space.dim(); ++a)
    sgn[a] = space.x_of(a) > median ? 1.0 : (space.x_of(a) < median ? -1.0 : 0.0);
  probes.add(gen, "sign", std::move(sgn));
  return probes;
}

// ---------------------------------------------------------------------------
// Martingale ensemble (one chain pass, all probes, all checkpoints)
// ---------------------------------------------------------------------------

/// Martingale values M_t and chain states recorded at fixed checkpoints over
/// many independent stationary-start trajectories.  Layout: trace-major,
/// entry(trace, k) = trace * n_checkpoints + k.
struct MartingaleEnsemble {
  std::vector<double> checkpoints;           ///< strictly increasing, > 0
  std::vector<std::string> probe_ids;
  std::vector<std::vector<double>> m_values; ///< [probe][trace * K + k]
  std::vector<std::size_t> states;           ///< [trace * K + k] state at checkpoint
  std::vector<std::size_t> start_states;     ///< [trace]
  std::size_t n_traces = 0;
  bool compensated = true;

  std::size_t n_checkpoints() const { return checkpoints.size(); }
  double m(std::size_t probe, std::size_t trace, std::size_t k) const {
    return m_values[probe][trace * checkpoints.size() + k];
  }
  std::size_t state(std::size_t trace, std::size_t k) const {
    return states[trace * checkpoints.size() + k];
  }
};

/// Simulate `n_traces` stationary-start trajectories and evaluate every
/// probe's martingale at every checkpoint.  The compensator is accumulated
/// exactly over the jump skeleton.  `with_compensator = false` drops the
/// integral term — a deliberately broken ensemble used as a negative
/// control (the resulting process is mean-zero but fails increment
/// orthogonality).
template <class R>
MartingaleEnsemble martingale_ensemble(const MarkovGenerator& gen, const ProbeSet& probes,
                                       std::vector<double> checkpoints, std::size_t n_traces,
                                       R& rng, bool with_compensator = true) {
  if (checkpoints.empty()) throw std::invalid_argument("martingale_ensemble: no checkpoints");
  for (std::size_t k = 0; k < checkpoints.size(); ++k) {
    if (!(checkpoints[k] > 0.0))
      throw std::invalid_argument("martingale_ensemble: checkpoints must be positive");
    if (k + 1 < checkpoints.size() && !(checkpoints[k] < checkpoints[k + 1]))
      throw std::invalid_argument("martingale_ensemble: checkpoints must increase");
  }
  const std::size_t K = checkpoints.size();
  const std::size_t P = probes.size();

  MartingaleEnsemble ens;
  ens.checkpoints = checkpoints;
  ens.probe_ids = probes.ids;
  ens.m_values.assign(P, std::vector<double>(n_traces * K, 0.0));
  ens.states.assign(n_traces * K, 0);
  ens.start_states.resize(n_traces);
  ens.n_traces = n_traces;
  ens.compensated = with_compensator;

  StationarySampler start(gen);
  const double horizon = checkpoints.back();
  std::vector<double> comp(P);  // running compensator per probe

  for (std::size_t trace = 0; trace < n_traces; ++trace) {
    PPhiPath path = ctmc_sample(gen, start.draw(rng), horizon, rng);
    ens.start_states[trace] = path.states.front();
    std::fill(comp.begin(), comp.end(), 0.0);
    std::size_t k = 0;
    for (std::size_t i = 0; i < path.states.size() && k < K; ++i) {
      const std::size_t a = path.states[i];
      const double t0 = path.times[i];
      const double t1 = (i + 1 < path.times.size()) ? path.times[i + 1] : horizon;
      // Emit every checkpoint inside this sojourn, then advance the
      // compensator across the full sojourn.
      while (k < K && checkpoints[k] <= t1) {
        ens.states[trace * K + k] = a;
        for (std::size_t p = 0; p < P; ++p) {
          double m = probes.f[p][a] - probes.f[p][path.states.front()];
          if (with_compensator) m += comp[p] + (checkpoints[k] - t0) * probes.lf[p][a];
          ens.m_values[p][trace * K + k] = m;
        }
        ++k;
      }
      if (with_compensator)
        for (std::size_t p = 0; p < P; ++p) comp[p] += (t1 - t0) * probes.lf[p][a];
    }
    // Horizon coincides with the last checkpoint, so k == K here; guard anyway.
    for (; k < K; ++k) {
      ens.states[trace * K + k] = path.states.back();
      for (std::size_t p = 0; p < P; ++p)
        ens.m_values[p][trace * K + k] =
            probes.f[p][path.states.back()] - probes.f[p][path.states.front()] +
            (with_compensator ? comp[p] : 0.0);
    }
  }
  return ens;
}

// ---------------------------------------------------------------------------
// Martingale property tests
// ---------------------------------------------------------------------------

/// Mean-zero and increment-orthogonality checks for one probe.
/// Orthogonality statistics: for consecutive checkpoint pairs (s, t),
/// E[(M_t - M_s) h(X_s, M_s)] with h in {1, f(X_s), M_s}; each estimate is
/// z-scored and the largest |z| over all pairs and weights is reported.
/// A true martingale passes; dropping the compensator is detected through
/// the h = f(X_s) channel.
///
/// A probe with zero quadratic variation (a chain invariant, e.g. a constant)
/// has M identically zero, so its z-scores would be ratios of roundoff over
/// roundoff. Such probes are flagged degenerate and tested for exactness
/// instead: every |M| must sit at floating-point noise level.
struct MartingaleTest {
  std::vector<double> mean_z;    ///< per checkpoint, z of E[M_t] = 0
  double max_mean_z = 0.0;
  double max_orthogonality_z = 0.0;
  double max_abs_m = 0.0;   ///< largest |M| over all traces and checkpoints
  bool degenerate = false;  ///< probe has zero quadratic variation
  bool pass = false;
};

inline MartingaleTest martingale_test(const MartingaleEnsemble& ens, const ProbeSet& probes,
                                      std::size_t probe, double z_threshold = 4.0) {
  if (probe >= probes.size()) throw std::out_of_range("martingale_test: probe index");
  const std::size_t K = ens.n_checkpoints();
  MartingaleTest out;

  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t tr = 0; tr < ens.n_traces; ++tr)
      out.max_abs_m = std::max(out.max_abs_m, std::abs(ens.m(probe, tr, k)));

  if (probes.sigma2[probe] == 0.0) {
    out.degenerate = true;
    out.mean_z.assign(K, 0.0);
    double scale = 1.0;
    for (double v : probes.f[probe]) scale = std::max(scale, std::abs(v));
    for (double v : probes.lf[probe])
      scale = std::max(scale, std::abs(v) * ens.checkpoints.back());
    out.pass = out.max_abs_m <= 1e-10 * scale;
    return out;
  }

  for (std::size_t k = 0; k < K; ++k) {
    RunningStat s;
    for (std::size_t tr = 0; tr < ens.n_traces; ++tr) s.add(ens.m(probe, tr, k));
    const double z = z_score(s.mean(), 0.0, s.std_error());
    out.mean_z.push_back(z);
    out.max_mean_z = std::max(out.max_mean_z, std::abs(z));
  }

  for (std::size_t k = 0; k + 1 < K; ++k) {
    RunningStat h1, hf, hm;
    for (std::size_t tr = 0; tr < ens.n_traces; ++tr) {
      const double dm = ens.m(probe, tr, k + 1) - ens.m(probe, tr, k);
      const double ms = ens.m(probe, tr, k);
      const double fs = probes.f[probe][ens.state(tr, k)];
      h1.add(dm);
      hf.add(dm * fs);
      hm.add(dm * ms);
    }
    for (const RunningStat& s : {h1, hf, hm}) {
      const double z = z_score(s.mean(), 0.0, s.std_error());
      out.max_orthogonality_z = std::max(out.max_orthogonality_z, std::abs(z));
    }
  }
  // Increment from time 0 to the first checkpoint against f(X_0).
  {
    RunningStat hf;
    for (std::size_t tr = 0; tr < ens.n_traces; ++tr)
      hf.add(ens.m(probe, tr, 0) * probes.f[probe][ens.start_states[tr]]);
    const double z = z_score(hf.mean(), 0.0, hf.std_error());
    out.max_orthogonality_z = std::max(out.max_orthogonality_z, std::abs(z));
  }

  out.pass = out.max_mean_z < z_threshold && out.max_orthogonality_z < z_threshold;
  return out;
}

// ---------------------------------------------------------------------------
// Variance growth and the Gaussian limit
// ---------------------------------------------------------------------------

/// Per-checkpoint estimate of E[M_t^2]/t with its standard error, compared
/// against a prediction (Dirichlet-route sigma^2 by default).  The identity
/// E[M_t^2] = sigma^2 t holds exactly at all t under the stationary start,
/// so every checkpoint carries a z-score, not just the asymptotic ones.
struct VarianceCurve {
  std::vector<double> checkpoints;
  std::vector<double> estimate;   ///< mean(M_t^2) / t
  std::vector<double> std_error;  ///< of the estimate
  std::vector<double> z;          ///< against prediction
  double prediction = 0.0;
  double max_abs_z = 0.0;
  bool short_horizon_warning = false;  ///< largest t below ~5 relaxation times
  bool pass = false;
};

inline VarianceCurve variance_curve(const MartingaleEnsemble& ens, std::size_t probe,
                                    double sigma2_prediction, double spectral_gap_hint = 0.0,
                                    double z_threshold = 4.0) {
  VarianceCurve out;
  out.checkpoints = ens.checkpoints;
  out.prediction = sigma2_prediction;
  for (std::size_t k = 0; k < ens.n_checkpoints(); ++k) {
    RunningStat s;
    for (std::size_t tr = 0; tr < ens.n_traces; ++tr) {
      const double m = ens.m(probe, tr, k);
      s.add(m * m);
    }
    const double t = ens.checkpoints[k];
    out.estimate.push_back(s.mean() / t);
    out.std_error.push_back(s.std_error() / t);
    // A zero prediction means the probe is a chain invariant: M is exactly
    // zero and a z-ratio of roundoffs carries no information, so gate the
    // raw magnitude instead.
    if (sigma2_prediction == 0.0)
      out.z.push_back(0.0);
    else
      out.z.push_back(z_score(out.estimate.back(), sigma2_prediction, out.std_error.back()));
    out.max_abs_z = std::max(out.max_abs_z, std::abs(out.z.back()));
  }
  if (spectral_gap_hint > 0.0 && ens.checkpoints.back() * spectral_gap_hint < 5.0)
    out.short_horizon_warning = true;
  out.pass = out.max_abs_z < z_threshold;
  if (sigma2_prediction == 0.0)
    for (double e : out.estimate) out.pass = out.pass && e <= 1e-16;
  return out;
}

/// Kolmogorov-Smirnov comparison of M_t / sqrt(sigma^2 t) against the
/// standard normal at each checkpoint.  The Gaussian limit is asymptotic:
/// only the largest checkpoint carries the pass/fail gate; earlier ones are
/// reported for the approach curve.
struct FcltResult {
  VarianceCurve variance;
  std::vector<double> ks_p;      ///< per checkpoint
  double ks_p_at_largest = 0.0;
  bool pass = false;
};

inline FcltResult fclt_test(const MartingaleEnsemble& ens, const ProbeSet& probes,
                            std::size_t probe, double spectral_gap_hint = 0.0,
                            double p_min = 0.01, double z_threshold = 4.0) {
  if (probe >= probes.size()) throw std::out_of_range("fclt_test: probe index");
  const double s2 = probes.sigma2[probe];
  FcltResult out;
  out.variance = variance_curve(ens, probe, s2, spectral_gap_hint, z_threshold);
  if (!(s2 > 0.0)) throw std::invalid_argument("fclt_test: degenerate probe variance");
  for (std::size_t k = 0; k < ens.n_checkpoints(); ++k) {
    const double scale = std::sqrt(s2 * ens.checkpoints[k]);
    std::vector<double> sample(ens.n_traces);
    for (std::size_t tr = 0; tr < ens.n_traces; ++tr) sample[tr] = ens.m(probe, tr, k) / scale;
    KsResult ks = ks_test(std::move(sample), [](double x) { return normal_cdf(x); });
    out.ks_p.push_back(ks.p);
  }
  out.ks_p_at_largest = out.ks_p.back();
  out.pass = out.variance.pass && out.ks_p_at_largest > p_min;
  return out;
}

/// Correlation-residual curve r(t) = E[(f(X_t) - f(X_0))^2] / t.  Spectral
/// calculus gives r(t) = 2 <f, (1 - e^{-tL}) f>_m / t <= sigma^2 with
/// equality as t -> 0; for an eigenfunction with eigenvalue lambda the curve
/// is sigma^2 (1 - e^{-lambda t}) / (lambda t).  Estimated from the same
/// ensemble (no compensator needed).
struct KvResidual {
  std::vector<double> checkpoints;
  std::vector<double> estimate;
  std::vector<double> std_error;
};

inline KvResidual kv_residual(const MartingaleEnsemble& ens, const ProbeSet& probes,
                              std::size_t probe) {
  if (probe >= probes.size()) throw std::out_of_range("kv_residual: probe index");
  KvResidual out;
  out.checkpoints = ens.checkpoints;
  for (std::size_t k = 0; k < ens.n_checkpoints(); ++k) {
    RunningStat s;
    for (std::size_t tr = 0; tr < ens.n_traces; ++tr) {
      const double d = probes.f[probe][ens.state(tr, k)] -
                       probes.f[probe][ens.start_states[tr]];
      s.add(d * d);
    }
    out.estimate.push_back(s.mean() / ens.checkpoints[k]);
    out.std_error.push_back(s.std_error() / ens.checkpoints[k]);
  }
  return out;
}

}  // namespace nelson
