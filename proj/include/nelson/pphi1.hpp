#pragma once
// Continuous-time Markov-chain sampling for the ground-state-transformed
// lattice Hamiltonian, plus stationarity / reversibility / path-regularity
// diagnostics.  The generator comes from h_transform(): rates r(a,b) =
// -L(a,b) >= 0 for a != b, exit rate L(a,a) = sum of the row's rates, and
// stationary law m_a = u_a^2.  The chain is sampled exactly (exponential
// holding times + categorical jumps), so every check here probes the
// *operator* construction, not a time-discretisation of it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "operators.hpp"
#include "rng.hpp"
#include "sparse.hpp"
#include "stats.hpp"

namespace nelson {

// ---------------------------------------------------------------------------
// Path container
// ---------------------------------------------------------------------------

/// Piecewise-constant trajectory of the jump chain.  states[i] is occupied on
/// [times[i], times[i+1]) (and states.back() on [times.back(), horizon]).
/// times[0] == 0 always; times[i] for i >= 1 are the jump epochs.
struct PPhiPath {
  std::vector<double> times;
  std::vector<std::size_t> states;
  double horizon = 0.0;

  std::size_t n_jumps() const { return times.empty() ? 0 : times.size() - 1; }

  /// State occupied at time t in [0, horizon].
  std::size_t state_at(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    std::size_t idx = static_cast<std::size_t>(it - times.begin());
    if (idx == 0) return states.front();
    return states[idx - 1];
  }
};

// ---------------------------------------------------------------------------
// Stationary start
// ---------------------------------------------------------------------------

/// Draws states from a fixed probability vector by CDF inversion.
class StationarySampler {
 public:
  explicit StationarySampler(std::span<const double> weights) {
    if (weights.empty()) throw std::invalid_argument("StationarySampler: empty weight vector");
    cdf_.resize(weights.size());
    double acc = 0.0;
    for (std::size_t a = 0; a < weights.size(); ++a) {
      if (!(weights[a] >= 0.0))
        throw std::invalid_argument("StationarySampler: negative weight");
      acc += weights[a];
      cdf_[a] = acc;
    }
    if (!(acc > 0.0)) throw std::invalid_argument("StationarySampler: zero total mass");
    for (double& c : cdf_) c /= acc;
    cdf_.back() = 1.0;  // guard against round-off at the top
  }

  explicit StationarySampler(const MarkovGenerator& gen)
      : StationarySampler(std::span<const double>(gen.stationary)) {}

  template <class R>
  std::size_t draw(R& rng) const {
    double u = rng.uniform();
    auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) --it;
    return static_cast<std::size_t>(it - cdf_.begin());
  }

 private:
  std::vector<double> cdf_;
};

// ---------------------------------------------------------------------------
// Exact CTMC sampling
// ---------------------------------------------------------------------------

/// Simulate the jump chain started at `start` over [0, horizon].
/// Holding times are Exp(exit_rate); the next state is chosen by a cumulative
/// scan of the row's off-diagonal rates.  Throws if the trajectory exceeds
/// `max_jumps` events (guard against an accidentally explosive rate table).
template <class R>
PPhiPath ctmc_sample(const MarkovGenerator& gen, std::size_t start, double horizon, R& rng,
                     std::size_t max_jumps = 50'000'000) {
  if (start >= gen.L.n) throw std::out_of_range("ctmc_sample: start state out of range");
  if (!(horizon > 0.0)) throw std::invalid_argument("ctmc_sample: horizon must be positive");
  PPhiPath path;
  path.horizon = horizon;
  path.times.push_back(0.0);
  path.states.push_back(start);

  const SparseMatrix& L = gen.L;
  double t = 0.0;
  std::size_t a = start;
  while (true) {
    const double exit = gen.exit_rate(a);
    if (!(exit > 0.0)) break;  // absorbing state: no further jumps
    t += rng.exponential(exit);
    if (t >= horizon) break;
    // Categorical jump: target u_cat * exit within the row's rate mass.
    const double target = rng.uniform() * exit;
    double acc = 0.0;
    std::size_t next = a;
    const std::uint64_t begin = L.row_ptr[a], end = L.row_ptr[a + 1];
    for (std::uint64_t k = begin; k < end; ++k) {
      const std::size_t b = L.col[k];
      if (b == a) continue;
      const double rate = -L.val[k];
      if (rate <= 0.0) continue;
      acc += rate;
      if (acc >= target) {
        next = b;
        break;
      }
    }
    if (next == a) {
      // Round-off at the top of the scan: take the last admissible target.
      for (std::uint64_t k = end; k-- > begin;) {
        if (L.col[k] != a && -L.val[k] > 0.0) {
          next = L.col[k];
          break;
        }
      }
      if (next == a) break;  // row had no usable rate after all
    }
    path.times.push_back(t);
    path.states.push_back(next);
    a = next;
    if (path.n_jumps() > max_jumps)
      throw std::runtime_error("ctmc_sample: jump budget exceeded (rate table explosive?)");
  }
  return path;
}

/// Total expected jump rate under the stationary law: sum_a m_a L(a,a).
/// Useful for pre-sizing jump budgets.
inline double mean_exit_rate(const MarkovGenerator& gen) {
  double s = 0.0;
  for (std::size_t a = 0; a < gen.L.n; ++a) s += gen.stationary[a] * gen.exit_rate(a);
  return s;
}

// ---------------------------------------------------------------------------
// Two-sided stationary process
// ---------------------------------------------------------------------------

/// Two independent legs grown from a common stationary start: the pair
/// (X_{-t})_{t>=0}, (X_t)_{t>=0} of the stationary two-sided process.
struct TwoSidedPPhi {
  PPhiPath backward;  ///< leg for negative times; backward.state_at(s) = X_{-s}
  PPhiPath forward;

  std::size_t state_at(double t) const {
    return t >= 0.0 ? forward.state_at(t) : backward.state_at(-t);
  }
};

template <class R>
TwoSidedPPhi two_sided_sample(const MarkovGenerator& gen, const StationarySampler& start,
                              double horizon, R& rng) {
  TwoSidedPPhi ts;
  const std::size_t a0 = start.draw(rng);
  ts.forward = ctmc_sample(gen, a0, horizon, rng);
  ts.backward = ctmc_sample(gen, a0, horizon, rng);
  return ts;
}

// ---------------------------------------------------------------------------
// Finite-dimensional distributions vs. the semigroup
// ---------------------------------------------------------------------------

/// Monte-Carlo estimate of E[prod_i f_i(X_{t_i})] from stationary starts,
/// z-scored against the exact finite-dimensional expectation computed by the
/// backward recursion  g <- f_i .* P_{t_{i+1}-t_i} g,  value = <m, g>.
/// Times must be strictly increasing and nonnegative.
struct FddCheck {
  double mc_value = 0.0;
  double mc_std_error = 0.0;
  double exact_value = 0.0;
  double z = 0.0;
  std::size_t n_samples = 0;
};

template <class R>
FddCheck finite_dim_check(const NelsonOperator& op, const GroundState& gs,
                          const MarkovGenerator& gen, const std::vector<double>& times,
                          const std::vector<std::vector<double>>& fs, std::size_t n_samples,
                          R& rng, double expm_tol = 1e-12) {
  if (times.empty() || times.size() != fs.size())
    throw std::invalid_argument("finite_dim_check: need matching, nonempty times/functions");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < 0.0) throw std::invalid_argument("finite_dim_check: negative time");
    if (i + 1 < times.size() && !(times[i] < times[i + 1]))
      throw std::invalid_argument("finite_dim_check: times must be strictly increasing");
    if (fs[i].size() != gen.L.n)
      throw std::invalid_argument("finite_dim_check: function dimension mismatch");
  }

  // Exact value by backward induction through the transformed semigroup.
  std::vector<double> g = fs.back();
  for (std::size_t i = times.size() - 1; i-- > 0;) {
    const double dt = times[i + 1] - times[i];
    g = semigroup_apply(op, gs, g, dt, expm_tol);
    for (std::size_t a = 0; a < g.size(); ++a) g[a] *= fs[i][a];
  }
  // One more propagation from time 0 if the first observation is not at 0.
  if (times.front() > 0.0) g = semigroup_apply(op, gs, g, times.front(), expm_tol);
  double exact = 0.0;
  for (std::size_t a = 0; a < g.size(); ++a) exact += gen.stationary[a] * g[a];

  StationarySampler start(gen);
  const double horizon = times.back() > 0.0 ? times.back() : 1e-12;
  RunningStat stat;
  for (std::size_t s = 0; s < n_samples; ++s) {
    PPhiPath path = ctmc_sample(gen, start.draw(rng), horizon, rng);
    double prod = 1.0;
    for (std::size_t i = 0; i < times.size(); ++i)
      prod *= fs[i][path.state_at(std::min(times[i], horizon))];
    stat.add(prod);
  }

  FddCheck out;
  out.mc_value = stat.mean();
  out.mc_std_error = stat.std_error();
  out.exact_value = exact;
  out.z = z_score(out.mc_value, exact, out.mc_std_error);
  out.n_samples = n_samples;
  return out;
}

/// Cross-moment of the two-sided process: MC estimate of E[f(X_{-s}) g(X_t)]
/// against the exact value  sum_a m_a (P_s f)(a) (P_t g)(a),  which is what
/// conditional independence of the two legs given X_0 demands.
template <class R>
FddCheck two_sided_check(const NelsonOperator& op, const GroundState& gs,
                         const MarkovGenerator& gen, const std::vector<double>& f,
                         const std::vector<double>& g, double s, double t,
                         std::size_t n_samples, R& rng) {
  if (f.size() != gen.L.n || g.size() != gen.L.n)
    throw std::invalid_argument("two_sided_check: function dimension mismatch");
  if (!(s > 0.0) || !(t > 0.0)) throw std::invalid_argument("two_sided_check: need s, t > 0");

  std::vector<double> psf = semigroup_apply(op, gs, f, s);
  std::vector<double> ptg = semigroup_apply(op, gs, g, t);
  double exact = 0.0;
  for (std::size_t a = 0; a < gen.L.n; ++a) exact += gen.stationary[a] * psf[a] * ptg[a];

  StationarySampler start(gen);
  RunningStat stat;
  for (std::size_t i = 0; i < n_samples; ++i) {
    TwoSidedPPhi ts = two_sided_sample(gen, start, std::max(s, t), rng);
    stat.add(f[ts.state_at(-s)] * g[ts.state_at(t)]);
  }

  FddCheck out;
  out.mc_value = stat.mean();
  out.mc_std_error = stat.std_error();
  out.exact_value = exact;
  out.z = z_score(out.mc_value, exact, out.mc_std_error);
  out.n_samples = n_samples;
  return out;
}

// ---------------------------------------------------------------------------
// Stationarity and reversibility
// ---------------------------------------------------------------------------

/// Multinomial chi^2 for the particle-coordinate marginal at a fixed time:
/// draw i.i.d. stationary starts, evolve each to time t, and bin X_t by its
/// x index.  Under a correct sampler the bin counts are exactly multinomial
/// with probabilities p_bin = sum of m over the bin, so the chi^2 p-value is
/// honest.  Bins are merged left-to-right until every expected count is at
/// least `min_expected`.
template <class R>
TestReport stationarity_chi2(const MarkovGenerator& gen, const OperatorSpace& space, double t,
                             std::size_t n_samples, R& rng, double min_expected = 5.0,
                             double p_threshold = 1e-3) {
  const std::size_t nx = space.grid.particle.n;
  std::vector<double> p(nx, 0.0);
  for (std::size_t a = 0; a < gen.L.n; ++a) p[space.x_index(a)] += gen.stationary[a];

  std::vector<double> counts(nx, 0.0);
  StationarySampler start(gen);
  for (std::size_t i = 0; i < n_samples; ++i) {
    PPhiPath path = ctmc_sample(gen, start.draw(rng), t, rng);
    counts[space.x_index(path.states.back())] += 1.0;
  }

  // Merge adjacent bins until expected >= min_expected.
  std::vector<double> exp_m, obs_m;
  double e_acc = 0.0, o_acc = 0.0;
  for (std::size_t b = 0; b < nx; ++b) {
    e_acc += p[b] * static_cast<double>(n_samples);
    o_acc += counts[b];
    if (e_acc >= min_expected) {
      exp_m.push_back(e_acc);
      obs_m.push_back(o_acc);
      e_acc = o_acc = 0.0;
    }
  }
  if (e_acc > 0.0 || o_acc > 0.0) {
    if (exp_m.empty()) {
      exp_m.push_back(e_acc);
      obs_m.push_back(o_acc);
    } else {
      exp_m.back() += e_acc;
      obs_m.back() += o_acc;
    }
  }

  double chi2 = 0.0;
  for (std::size_t b = 0; b < exp_m.size(); ++b) {
    const double d = obs_m[b] - exp_m[b];
    chi2 += d * d / exp_m[b];
  }
  const double dof = static_cast<double>(exp_m.size() > 1 ? exp_m.size() - 1 : 1);
  const double pval = chi2_sf(chi2, dof);

  TestReport rep;
  rep.name = "stationarity-x-marginal-chi2";
  rep.statistic = chi2;
  rep.z_or_p = pval;
  rep.n_samples = n_samples;
  rep.pass = pval > p_threshold;
  return rep;
}

/// Ergodic occupation check along a single long trajectory.  The window
/// [0, T] is split into `n_batches` batches; per-batch occupation fractions
/// of the particle-coordinate bins give honest standard errors despite the
/// serial correlation inside each batch.  Statistic: max |z| over bins with
/// stationary probability at least min_prob; two-sided Bonferroni gate.
struct OccupationCheck {
  TestReport report;
  std::vector<double> occupied_fraction;  ///< per x bin, whole window
  std::vector<double> expected_fraction;  ///< per x bin, from m
  double total_variation = 0.0;
};

template <class R>
OccupationCheck occupation_check(const MarkovGenerator& gen, const OperatorSpace& space,
                                 double horizon, R& rng, std::size_t n_batches = 40,
                                 double min_prob = 1e-3, double max_z_threshold = 4.5) {
  if (n_batches < 8) throw std::invalid_argument("occupation_check: need >= 8 batches");
  const std::size_t nx = space.grid.particle.n;
  std::vector<double> expected(nx, 0.0);
  for (std::size_t a = 0; a < gen.L.n; ++a) expected[space.x_index(a)] += gen.stationary[a];

  StationarySampler start(gen);
  PPhiPath path = ctmc_sample(gen, start.draw(rng), horizon, rng);

  // Accumulate occupation time per (batch, bin).
  const double batch_len = horizon / static_cast<double>(n_batches);
  std::vector<double> occ(n_batches * nx, 0.0);
  for (std::size_t i = 0; i < path.states.size(); ++i) {
    double t0 = path.times[i];
    double t1 = (i + 1 < path.times.size()) ? path.times[i + 1] : horizon;
    const std::size_t bin = space.x_index(path.states[i]);
    // Split the sojourn across batch boundaries.
    while (t0 < t1) {
      const std::size_t k =
          std::min(static_cast<std::size_t>(t0 / batch_len), n_batches - 1);
      const double t_end = std::min(t1, (static_cast<double>(k) + 1.0) * batch_len);
      occ[k * nx + bin] += t_end - t0;
      t0 = t_end;
    }
  }

  OccupationCheck out;
  out.expected_fraction = expected;
  out.occupied_fraction.assign(nx, 0.0);
  double max_abs_z = 0.0;
  std::size_t tested = 0;
  for (std::size_t b = 0; b < nx; ++b) {
    RunningStat frac;
    for (std::size_t k = 0; k < n_batches; ++k) frac.add(occ[k * nx + b] / batch_len);
    out.occupied_fraction[b] = frac.mean();
    out.total_variation += 0.5 * std::abs(frac.mean() - expected[b]);
    if (expected[b] >= min_prob) {
      ++tested;
      const double z = z_score(frac.mean(), expected[b], frac.std_error());
      max_abs_z = std::max(max_abs_z, std::abs(z));
    }
  }

  out.report.name = "occupation-ergodic-max-z";
  out.report.statistic = max_abs_z;
  // Two-sided tail bound for the max over `tested` approximately normal z's.
  out.report.z_or_p =
      std::min(1.0, 2.0 * static_cast<double>(tested) * (1.0 - normal_cdf(max_abs_z)));
  out.report.n_samples = n_batches;
  out.report.pass = max_abs_z < max_z_threshold;
  return out;
}

/// Reversibility of the sampled chain: paired per-trajectory difference
/// f(X_0) g(X_t) - g(X_0) f(X_t), which has mean zero iff the chain is in
/// detailed balance with its stationary start (for generic f, g).  Returns
/// the z-score of the paired mean; |z| stays small for the transformed
/// Hamiltonian chain and blows up for the uniformised-cycle control below.
template <class R>
TestReport reversibility_check(const MarkovGenerator& gen, const std::vector<double>& f,
                               const std::vector<double>& g, double t, std::size_t n_samples,
                               R& rng, double z_threshold = 4.0) {
  if (f.size() != gen.L.n || g.size() != gen.L.n)
    throw std::invalid_argument("reversibility_check: function dimension mismatch");
  StationarySampler start(gen);
  RunningStat diff;
  for (std::size_t i = 0; i < n_samples; ++i) {
    PPhiPath path = ctmc_sample(gen, start.draw(rng), t, rng);
    const std::size_t a0 = path.states.front();
    const std::size_t at = path.states.back();
    diff.add(f[a0] * g[at] - g[a0] * f[at]);
  }
  TestReport rep;
  rep.name = "reversibility-paired-difference";
  rep.statistic = diff.mean();
  rep.z_or_p = z_score(diff.mean(), 0.0, diff.std_error());
  rep.n_samples = n_samples;
  rep.pass = std::abs(rep.z_or_p) < z_threshold;
  return rep;
}

/// Deliberately non-reversible control: unit-rate clockwise cycle on
/// n states with uniform stationary law.  reversibility_check must reject it.
inline MarkovGenerator cycle_generator(std::size_t n) {
  if (n < 3) throw std::invalid_argument("cycle_generator: need at least 3 states");
  MarkovGenerator gen;
  gen.L.n = n;
  gen.L.row_ptr.assign(n + 1, 0);
  for (std::size_t a = 0; a < n; ++a) {
    gen.L.row_ptr[a + 1] = gen.L.row_ptr[a] + 2;
    // Diagonal first or second depending on wrap, keep columns ascending.
    const std::size_t b = (a + 1) % n;
    if (b > a) {
      gen.L.col.push_back(a);
      gen.L.val.push_back(1.0);
      gen.L.col.push_back(b);
      gen.L.val.push_back(-1.0);
    } else {
      gen.L.col.push_back(b);
      gen.L.val.push_back(-1.0);
      gen.L.col.push_back(a);
      gen.L.val.push_back(1.0);
    }
  }
  gen.stationary.assign(n, 1.0 / static_cast<double>(n));
  return gen;
}

// ---------------------------------------------------------------------------
// Displacement-moment scaling (path-regularity diagnostic)
// ---------------------------------------------------------------------------

/// Fourth moment of the particle-coordinate displacement over small lags.
/// For the diffusive (Brownian-kinetic) chain E[(x(tau)-x(0))^4] scales like
/// D tau^2, the Kolmogorov-continuity rate; jump kinetics produce a slower
/// (linear-in-tau) small-lag decay and fail the quadratic envelope.  We fit D
/// by least squares in the tau^2 regressor and report the worst ratio of the
/// measured moment to D_fit tau^2.
struct MomentScaling {
  std::vector<double> taus;
  std::vector<double> fourth_moment;
  std::vector<double> std_error;
  double d_fit = 0.0;
  double max_ratio = 0.0;  ///< max over taus of m4 / (d_fit tau^2)
  std::size_t n_samples = 0;
  bool within_envelope = false;  ///< max_ratio <= envelope passed to the fit
};

template <class R>
MomentScaling moment_scaling_check(const MarkovGenerator& gen, const OperatorSpace& space,
                                   const std::vector<double>& taus, std::size_t n_samples,
                                   R& rng, double envelope = 5.0) {
  if (taus.empty()) throw std::invalid_argument("moment_scaling_check: empty tau grid");
  for (double tau : taus)
    if (!(tau > 0.0)) throw std::invalid_argument("moment_scaling_check: taus must be positive");
  const double horizon = *std::max_element(taus.begin(), taus.end());

  StationarySampler start(gen);
  std::vector<RunningStat> stats(taus.size());
  for (std::size_t i = 0; i < n_samples; ++i) {
    PPhiPath path = ctmc_sample(gen, start.draw(rng), horizon, rng);
    const double x0 = space.x_of(path.states.front());
    for (std::size_t j = 0; j < taus.size(); ++j) {
      const double dx = space.x_of(path.state_at(std::min(taus[j], horizon))) - x0;
      stats[j].add(dx * dx * dx * dx);
    }
  }

  MomentScaling out;
  out.taus = taus;
  out.n_samples = n_samples;
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < taus.size(); ++j) {
    out.fourth_moment.push_back(stats[j].mean());
    out.std_error.push_back(stats[j].std_error());
    const double t2 = taus[j] * taus[j];
    num += stats[j].mean() * t2;
    den += t2 * t2;
  }
  out.d_fit = den > 0.0 ? num / den : 0.0;
  for (std::size_t j = 0; j < taus.size(); ++j) {
    const double pred = out.d_fit * taus[j] * taus[j];
    if (pred > 0.0) out.max_ratio = std::max(out.max_ratio, out.fourth_moment[j] / pred);
  }
  out.within_envelope = out.d_fit > 0.0 && out.max_ratio <= envelope;
  return out;
}

}  // namespace nelson
