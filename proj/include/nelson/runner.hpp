#pragma once
/// \file
/// Named end-to-end pipelines. Each pipeline consumes one ExperimentConfig,
/// writes CSV/JSON outputs plus a run manifest into an output directory, and
/// returns the manifest. All randomness flows through streams derived from
/// (master seed, stream id): Monte Carlo work is split into a fixed number of
/// replicas whose streams and reduction order never depend on scheduling, so
/// for a given configuration and seed the output files are byte-identical
/// regardless of thread count (wall-clock time in the manifest is the sole,
/// documented exception).

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "nelson/config.hpp"
#include "nelson/fclt.hpp"
#include "nelson/feynman_kac.hpp"
#include "nelson/field_modes.hpp"
#include "nelson/io.hpp"
#include "nelson/operators.hpp"
#include "nelson/oracles.hpp"
#include "nelson/particle_paths.hpp"
#include "nelson/pphi1.hpp"
#include "nelson/rng.hpp"
#include "nelson/stats.hpp"

namespace nelson {

namespace detail {

/// Mergeable mean/variance accumulator (Welford update, pairwise merge).
/// Replica results are merged in replica order, so pooled numbers are
/// reproducible bit for bit.
struct Pooled {
  std::uint64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  void merge(const Pooled& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double d = o.mean - mean;
    const double t = static_cast<double>(n + o.n);
    mean += d * static_cast<double>(o.n) / t;
    m2 += o.m2 + d * d * static_cast<double>(n) * static_cast<double>(o.n) / t;
    n += o.n;
  }
  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double std_error() const {
    return n > 1 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0;
  }
};

/// From an estimate with a standard error over n independent samples, so
/// externally pooled results (e.g. FKEstimate) can join Pooled reductions.
inline Pooled pooled_from_moments(std::uint64_t n, double mean, double std_error) {
  Pooled p;
  p.n = n;
  p.mean = mean;
  const double var = std_error * std_error * static_cast<double>(n);
  p.m2 = var * static_cast<double>(n > 0 ? n - 1 : 0);
  return p;
}

/// The replica partition is a fixed constant — never derived from the machine
/// — so the stream assigned to each sample is part of the experiment
/// definition, not of the execution environment.
inline constexpr std::size_t kReplicas = 16;

inline std::size_t replica_share(std::size_t total, std::size_t r) {
  return total / kReplicas + (r < total % kReplicas ? 1 : 0);
}

/// Runs one job per replica on up to hardware_concurrency() threads (or on
/// exactly n_threads_override when nonzero). Each replica r draws from stream
/// "<label>/r"; results land in preallocated slots for the caller to reduce
/// in replica order, so the thread count cannot influence any output byte.
template <class Result, class Job>
std::vector<Result> run_replicas(std::uint64_t master, const std::string& label, Job job,
                                 std::size_t n_threads_override = 0) {
  std::vector<Result> slots(kReplicas);
  const unsigned hw = std::thread::hardware_concurrency();
  const std::size_t n_threads =
      n_threads_override > 0 ? n_threads_override
                             : std::min<std::size_t>(hw == 0 ? 1 : hw, kReplicas);
  std::atomic<std::size_t> next{0};
  std::exception_ptr err = nullptr;
  std::mutex err_mu;
  auto body = [&]() {
    try {
      for (std::size_t r = next.fetch_add(1); r < kReplicas; r = next.fetch_add(1)) {
        Rng rng(master, label + "/" + std::to_string(r));
        slots[r] = job(r, rng);
      }
    } catch (...) {
      const std::lock_guard<std::mutex> lock(err_mu);
      if (!err) err = std::current_exception();
    }
  };
  if (n_threads <= 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(body);
    for (auto& t : pool) t.join();
  }
  if (err) std::rethrow_exception(err);
  return slots;
}

template <class F>
std::vector<double> mapped(const std::vector<double>& v, F fn) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = fn(v[i]);
  return out;
}

}  // namespace detail

/// Shared state of one pipeline invocation.
struct PipelineRun {
  const ExperimentConfig& cfg;
  std::filesystem::path dir;
  bool quiet = false;
  io::RunManifest man;

  void output(const std::string& name, std::string_view content) {
    io::record_output(man, dir, name, content);
    note("  wrote " + (dir / name).string());
  }
  void note(const std::string& line) const {
    if (!quiet) std::cout << line << '\n';
  }
};

namespace pipelines {

/// Stationary field covariance: Monte Carlo E[Y_0 Y_t] of the paired probe
/// against the exact mode sum, at a ladder of lags.
inline void field_covariance(PipelineRun& run) {
  const ExperimentConfig& cfg = run.cfg;
  const ModeSet ms = cfg.mode_set();
  const std::vector<double> lags = {0.0, 0.5, 1.0, 2.0};
  const std::span<const double> f_hat(ms.form_factor);

  struct Slot {
    std::vector<detail::Pooled> prod;
  };
  auto slots = detail::run_replicas<Slot>(
      cfg.mc.master_seed, "field-covariance", [&](std::size_t r, Rng& rng) {
        Slot s;
        s.prod.resize(lags.size());
        const std::size_t n = detail::replica_share(cfg.mc.n_samples, r);
        for (std::size_t i = 0; i < n; ++i) {
          FieldState st = stationary_sample(ms, rng);
          const double y0 = pair(st, ms, f_hat);
          double at = 0.0;
          for (std::size_t l = 0; l < lags.size(); ++l) {
            if (lags[l] > at) {
              ou_step(ms, st, lags[l] - at, rng);
              at = lags[l];
            }
            s.prod[l].add(y0 * pair(st, ms, f_hat));
          }
        }
        return s;
      });

  io::CsvBuilder csv({"lag", "estimate", "std_error", "exact", "z"});
  double max_abs_z = 0.0;
  for (std::size_t l = 0; l < lags.size(); ++l) {
    detail::Pooled p;
    for (const auto& s : slots) p.merge(s.prod[l]);
    const double exact = covariance_exact(ms, f_hat, f_hat, lags[l]);
    const double z = z_score(p.mean, exact, p.std_error());
    max_abs_z = std::max(max_abs_z, std::abs(z));
    csv.add_row({io::format_double(lags[l]), io::format_double(p.mean),
                 io::format_double(p.std_error()), io::format_double(exact),
                 io::format_double(z)});
  }
  run.output("covariance.csv", csv.text);
  run.man.summary = {{"max_abs_z", max_abs_z},
                     {"n_samples", cfg.mc.n_samples},
                     {"n_modes", ms.size()},
                     {"pass", max_abs_z < 3.0}};
}

/// Free-particle law: empirical characteristic function of unit-time
/// increments for each kinetic, against exp(-psi(u)).
inline void particle_law(PipelineRun& run) {
  const ExperimentConfig& cfg = run.cfg;
  const double t = 1.0;
  const std::vector<double> us = {0.5, 1.0, 2.0};
  const double mass = cfg.particle_mass > 0.0 ? cfg.particle_mass : 1.0;

  struct Proc {
    std::string name;
    ProcessKind kind;
    std::function<double(double)> psi;
  };
  const std::vector<Proc> procs = {
      {"brownian", ProcessKind::brownian(), [](double u) { return oracle::psi_brownian(u); }},
      {"cauchy", ProcessKind::cauchy(), [](double u) { return oracle::psi_cauchy(u); }},
      {"relativistic", ProcessKind::relativistic(mass),
       [mass](double u) { return oracle::psi_relativistic(u, mass); }}};

  io::CsvBuilder csv({"process", "u", "re_estimate", "re_std_error", "re_exact", "z_re",
                      "im_estimate", "im_std_error", "z_im"});
  double max_abs_z = 0.0;
  for (const Proc& proc : procs) {
    struct Slot {
      std::vector<detail::Pooled> re, im;
    };
    auto slots = detail::run_replicas<Slot>(
        cfg.mc.master_seed, "particle-law/" + proc.name, [&](std::size_t r, Rng& rng) {
          Slot s;
          s.re.resize(us.size());
          s.im.resize(us.size());
          const std::size_t n = detail::replica_share(cfg.mc.n_samples, r);
          for (std::size_t i = 0; i < n; ++i) {
            const ParticlePath p = sample_path({0.0}, t, 1, proc.kind, rng);
            const double dx = p.x(1) - p.x(0);
            for (std::size_t k = 0; k < us.size(); ++k) {
              s.re[k].add(std::cos(us[k] * dx));
              s.im[k].add(std::sin(us[k] * dx));
            }
          }
          return s;
        });
    for (std::size_t k = 0; k < us.size(); ++k) {
      detail::Pooled re, im;
      for (const auto& s : slots) {
        re.merge(s.re[k]);
        im.merge(s.im[k]);
      }
      const double exact = std::exp(-t * proc.psi(us[k]));
      const double z_re = z_score(re.mean, exact, re.std_error());
      const double z_im = z_score(im.mean, 0.0, im.std_error());
      max_abs_z = std::max({max_abs_z, std::abs(z_re), std::abs(z_im)});
      csv.add_row({proc.name, io::format_double(us[k]), io::format_double(re.mean),
                   io::format_double(re.std_error()), io::format_double(exact),
                   io::format_double(z_re), io::format_double(im.mean),
                   io::format_double(im.std_error()), io::format_double(z_im)});
    }
  }
  run.output("cf.csv", csv.text);
  run.man.summary = {{"max_abs_z", max_abs_z},
                     {"n_samples", cfg.mc.n_samples},
                     {"pass", max_abs_z < 3.0}};
}

/// Potential-class diagnostic: sup_x E^x[int_0^t |V(Z_s)| ds] over a shrinking
/// horizon ladder; admissible potentials trend to zero.
inline void kato(PipelineRun& run) {
  const ExperimentConfig& cfg = run.cfg;
  Rng rng(cfg.mc.master_seed, "kato/0");
  const std::vector<double> t_grid = {0.4, 0.2, 0.1, 0.05};
  std::vector<double> x_grid(9);
  for (std::size_t i = 0; i < x_grid.size(); ++i)
    x_grid[i] = cfg.grids.particle.lo + (cfg.grids.particle.hi - cfg.grids.particle.lo) *
                                            static_cast<double>(i) /
                                            static_cast<double>(x_grid.size() - 1);
  const KatoDiagnostic diag = kato_diagnostic(cfg.potential_fn(), cfg.kind(), t_grid, x_grid,
                                              cfg.mc.n_samples, rng, cfg.mc.n_steps);

  io::CsvBuilder csv({"t", "sup_estimate", "std_error"});
  for (const KatoRow& row : diag.rows)
    csv.add_row({io::format_double(row.t), io::format_double(row.sup_estimate),
                 io::format_double(row.std_error)});
  run.output("kato.csv", csv.text);
  run.man.summary = {{"trends_to_zero", diag.trends_to_zero},
                     {"ceiling_flag", diag.ceiling_flag},
                     {"n_samples", cfg.mc.n_samples},
                     {"pass", diag.trends_to_zero && !diag.ceiling_flag}};
}

/// Three independent routes to the same matrix element of the interacting
/// semigroup: joint path+field sampling, path sampling with the exact field
/// moment, and the assembled operator exponential.
inline void fk_cross_check(PipelineRun& run) {
  const ExperimentConfig& cfg = run.cfg;
  const GridSpec grid = cfg.grid_spec();
  const NelsonOperator op = assemble_h(grid, cfg.mode_set(), cfg.kind(), cfg.potential_fn());
  const double t = 1.0;

  const ElementVector Phi{[](double x) { return std::exp(-0.5 * x * x); },
                          FieldFactor::vacuum()};
  FKConfig fkc;
  fkc.ms = op.modes;  // all routes share the operator-level mode content
  fkc.kind = cfg.kind();
  fkc.V = cfg.potential_fn();
  fkc.box_lo = cfg.grids.particle.lo;
  fkc.box_hi = cfg.grids.particle.hi;
  fkc.n_steps = cfg.mc.n_steps;

  struct Slot {
    detail::Pooled a, b;
  };
  auto slots = detail::run_replicas<Slot>(
      cfg.mc.master_seed, "fk-cross-check", [&](std::size_t r, Rng& rng) {
        FKConfig c = fkc;
        c.n_samples = detail::replica_share(cfg.mc.n_samples, r);
        Slot s;
        if (c.n_samples < 2) return s;
        const FKEstimate ea = fk_nelson_element_joint(c, Phi, Phi, t, rng);
        const FKEstimate eb = fk_nelson_element_oracle(c, Phi, Phi, t, rng);
        s.a = detail::pooled_from_moments(ea.n_samples, ea.value, ea.std_error);
        s.b = detail::pooled_from_moments(eb.n_samples, eb.value, eb.std_error);
        return s;
      });
  detail::Pooled a, b;
  for (const auto& s : slots) {
    a.merge(s.a);
    b.merge(s.b);
  }
  const double c_value = fk_nelson_element_krylov(op, Phi, Phi, t);

  io::CsvBuilder csv({"route", "value", "std_error", "n_samples"});
  csv.add_row({"joint", io::format_double(a.mean), io::format_double(a.std_error()),
               std::to_string(a.n)});
  csv.add_row({"field_oracle", io::format_double(b.mean), io::format_double(b.std_error()),
               std::to_string(b.n)});
  csv.add_row({"operator", io::format_double(c_value), "0", "0"});
  run.output("fk.csv", csv.text);

  const double se_ab = std::sqrt(a.std_error() * a.std_error() + b.std_error() * b.std_error());
  const double z_ab = z_score(a.mean, b.mean, se_ab);
  const double z_ac = z_score(a.mean, c_value, a.std_error());
  const double z_bc = z_score(b.mean, c_value, b.std_error());
  const double rel_ac = c_value != 0.0 ? (a.mean - c_value) / c_value : 0.0;
  const double rel_bc = c_value != 0.0 ? (b.mean - c_value) / c_value : 0.0;
  run.man.summary = {{"joint", a.mean},
                     {"field_oracle", b.mean},
                     {"operator", c_value},
                     {"z_joint_oracle", z_ab},
                     {"z_joint_operator", z_ac},
                     {"z_oracle_operator", z_bc},
                     {"rel_joint_operator", rel_ac},
                     {"rel_oracle_operator", rel_bc},
                     {"horizon", t},
                     {"n_samples", cfg.mc.n_samples}};
}

/// Assembles the full operator, solves for its ground state, and exports the
/// state, the matrix and the standard one-number diagnostics.
inline void ground_state_pipeline(PipelineRun& run) {
  const ExperimentConfig& cfg = run.cfg;
  const GridSpec grid = cfg.grid_spec();
  const NelsonOperator op = assemble_h(grid, cfg.mode_set(), cfg.kind(), cfg.potential_fn());
  const GroundState gs = ground_state(op);
  const double gap = spectral_gap(op, gs);
  const EffectiveMassResult em = effective_mass_identity(op, gs, 1.0);

  const NelsonOperator pop =
      assemble_particle_only(cfg.grids.particle, cfg.kind(), cfg.potential_fn());
  const GroundState pg = ground_state(pop);
  double peak = 0.0;
  for (double u : pg.vec) peak = std::max(peak, u);
  const double edge = std::max(pg.vec.front(), pg.vec.back()) / peak;

  run.output("ground_state.csv", io::ground_state_csv(op.space, gs));
  run.output("hamiltonian.coo", io::coo_string(op.H));

  nlohmann::json summary = {{"energy", gs.energy},
                            {"residual", gs.residual},
                            {"iterations", gs.iterations},
                            {"min_entry", gs.min_entry},
                            {"floored", gs.floored},
                            {"cell_volume", gs.cell_volume},
                            {"spectral_gap", gap},
                            {"effective_mass_residual", em.relative},
                            {"kinetic_clipped_count", op.kinetic_info.clipped_count},
                            {"kinetic_clipped_mass", op.kinetic_info.clipped_mass},
                            {"particle_only_energy", pg.energy},
                            {"boundary_edge_ratio", edge},
                            {"dim", op.H.n}};
  if (cfg.model == ExperimentConfig::Model::classical &&
      cfg.potential.kind == PotentialConfig::Kind::harmonic) {
    const double ref = oracle::oscillator_energy(std::sqrt(cfg.potential.spring));
    summary["oscillator_reference"] = ref;
    summary["particle_only_energy_error"] = pg.energy - ref;
  }
  run.man.summary = summary;
}

/// Stationarity and reversibility diagnostics of the ground-state process:
/// chi-squared marginal at a fixed time, occupation fractions along one long
/// trajectory, paired reversibility statistic (with a non-reversible control
/// that must be rejected), finite-dimensional product moments, a two-sided
/// extension, and the fourth-moment scaling diagnostic.
inline void pphi1_stationarity(PipelineRun& run) {
  const ExperimentConfig& cfg = run.cfg;
  const GridSpec grid = cfg.grid_spec();
  const NelsonOperator op = assemble_h(grid, cfg.mode_set(), cfg.kind(), cfg.potential_fn());
  const GroundState gs = ground_state(op);
  const MarkovGenerator gen = h_transform(op, gs);
  const OperatorSpace& space = op.space;
  const double gap = spectral_gap(op, gs);
  const std::size_t n = cfg.mc.n_samples;
  const double h = cfg.mc.horizon;
  const std::uint64_t seed = cfg.mc.master_seed;

  io::CsvBuilder reports({"name", "statistic", "z_or_p", "n_samples", "pass"});
  auto report_row = [&reports](const TestReport& r) {
    reports.add_row({r.name, io::format_double(r.statistic), io::format_double(r.z_or_p),
                     std::to_string(r.n_samples), r.pass ? "1" : "0"});
  };

  Rng rng_chi2(seed, "pphi1/chi2");
  const TestReport chi2 = stationarity_chi2(gen, space, h, n, rng_chi2);
  report_row(chi2);
  run.note("  chi2 p = " + io::format_double(chi2.z_or_p));

  // Occupation fractions: batch length ~10 relaxation times keeps batch means
  // close to independent, and only bins holding >= 2% of the mass enter the
  // max-z statistic — rarer bins see so few sojourns per batch that their
  // batch means are far from Gaussian and the z-scores mean little (the
  // total-variation summary still covers every bin).
  Rng rng_occ(seed, "pphi1/occupation");
  const std::size_t n_batches = 40;
  const double occ_horizon = static_cast<double>(n_batches) * 10.0 / std::max(gap, 1e-3);
  const OccupationCheck occ =
      occupation_check(gen, space, occ_horizon, rng_occ, n_batches, 0.02);
  report_row(occ.report);

  Rng rng_rev(seed, "pphi1/reversibility");
  const std::vector<double> fx = grid_function_x(space);
  std::vector<double> fx3(fx.size());
  for (std::size_t i = 0; i < fx.size(); ++i) fx3[i] = fx[i] * fx[i] * fx[i];
  const TestReport rev = reversibility_check(gen, fx, fx3, h / 2.0, n, rng_rev);
  report_row(rev);

  // Non-reversible control: a unit-rate cycle must be rejected.
  Rng rng_ctl(seed, "pphi1/control");
  const MarkovGenerator cycle = cycle_generator(8);
  std::vector<double> fc(8), gc(8);
  for (std::size_t a = 0; a < 8; ++a) {
    fc[a] = std::cos(2.0 * M_PI * static_cast<double>(a) / 8.0);
    gc[a] = std::sin(2.0 * M_PI * static_cast<double>(a) / 8.0);
  }
  TestReport ctl = reversibility_check(cycle, fc, gc, 1.0, n, rng_ctl);
  ctl.name = "reversibility-control-cycle";
  report_row(ctl);

  Rng rng_fdd(seed, "pphi1/fdd");
  const std::vector<double> times = {h / 4.0, h / 2.0, h};
  const FddCheck fdd =
      finite_dim_check(op, gs, gen, times, {fx, fx, fx}, n, rng_fdd);
  reports.add_row({"fdd-three-time-product", io::format_double(fdd.mc_value),
                   io::format_double(fdd.z), std::to_string(fdd.n_samples),
                   std::abs(fdd.z) < 4.0 ? "1" : "0"});

  Rng rng_two(seed, "pphi1/two-sided");
  const FddCheck two = two_sided_check(op, gs, gen, fx, fx, h / 2.0, h / 2.0, n, rng_two);
  reports.add_row({"two-sided-product", io::format_double(two.mc_value),
                   io::format_double(two.z), std::to_string(two.n_samples),
                   std::abs(two.z) < 4.0 ? "1" : "0"});

  Rng rng_mom(seed, "pphi1/moments");
  const std::vector<double> taus = {0.1, 0.2, 0.4, 0.8};
  const MomentScaling mom = moment_scaling_check(gen, space, taus, n, rng_mom);
  const bool diffusive = cfg.model == ExperimentConfig::Model::classical;
  reports.add_row({"fourth-moment-scaling", io::format_double(mom.d_fit),
                   io::format_double(mom.max_ratio), std::to_string(n),
                   (!diffusive || mom.within_envelope) ? "1" : "0"});
  io::CsvBuilder mom_csv({"tau", "fourth_moment", "std_error"});
  for (std::size_t j = 0; j < mom.taus.size(); ++j)
    mom_csv.add_row({io::format_double(mom.taus[j]), io::format_double(mom.fourth_moment[j]),
                     io::format_double(mom.std_error[j])});

  run.output("reports.csv", reports.text);
  run.output("moments.csv", mom_csv.text);
  const bool pass = chi2.pass && occ.report.pass && rev.pass && !ctl.pass &&
                    std::abs(fdd.z) < 4.0 && std::abs(two.z) < 4.0 &&
                    (!diffusive || mom.within_envelope);
  run.man.summary = {{"chi2_p", chi2.z_or_p},
                     {"occupation_max_z", occ.report.statistic},
                     {"occupation_total_variation", occ.total_variation},
                     {"reversibility_z", rev.z_or_p},
                     {"control_rejected", !ctl.pass},
                     {"fdd_z", fdd.z},
                     {"two_sided_z", two.z},
                     {"moment_d_fit", mom.d_fit},
                     {"moment_max_ratio", mom.max_ratio},
                     {"moment_envelope_applicable", diffusive},
                     {"spectral_gap", gap},
                     {"dim", op.H.n},
                     {"pass", pass}};
}

/// Compensated-increment diagnostics for the standard probes: zero-mean and
/// orthogonality checks, the variance line E[M_t^2] = sigma^2 t against the
/// rate-table prediction, and a deliberately broken control without the
/// compensator that the orthogonality test must flag.
inline void martingale(PipelineRun& run) {
  const ExperimentConfig& cfg = run.cfg;
  const GridSpec grid = cfg.grid_spec();
  const NelsonOperator op = assemble_h(grid, cfg.mode_set(), cfg.kind(), cfg.potential_fn());
  const GroundState gs = ground_state(op);
  const MarkovGenerator gen = h_transform(op, gs);
  const double gap = spectral_gap(op, gs);
  const double h = cfg.mc.horizon;
  const std::vector<double> checkpoints = {h / 8.0, h / 4.0, h / 2.0, h};

  const ProbeSet probes = standard_probes(op, gen, op.modes.form_factor);
  Rng rng(cfg.mc.master_seed, "martingale/ensemble");
  const MartingaleEnsemble ens =
      martingale_ensemble(gen, probes, checkpoints, cfg.mc.n_samples, rng);

  io::CsvBuilder csv({"probe", "checkpoint", "var_estimate", "var_std_error", "var_z"});
  io::CsvBuilder reports({"probe", "sigma2", "max_mean_z", "max_orth_z", "max_var_z", "pass"});
  double max_abs_z = 0.0;
  bool all_pass = true;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const MartingaleTest mt = martingale_test(ens, probes, p);
    const VarianceCurve vc = variance_curve(ens, p, probes.sigma2[p], gap);
    for (std::size_t k = 0; k < checkpoints.size(); ++k)
      csv.add_row({probes.ids[p], io::format_double(checkpoints[k]),
                   io::format_double(vc.estimate[k]), io::format_double(vc.std_error[k]),
                   io::format_double(vc.z[k])});
    const bool pass = mt.pass && vc.pass;
    all_pass = all_pass && pass;
    max_abs_z = std::max({max_abs_z, mt.max_mean_z, vc.max_abs_z});
    reports.add_row({probes.ids[p], io::format_double(probes.sigma2[p]),
                     io::format_double(mt.max_mean_z), io::format_double(mt.max_orthogonality_z),
                     io::format_double(vc.max_abs_z), pass ? "1" : "0"});
    run.note("  probe " + probes.ids[p] + ": sigma2 = " + io::format_double(probes.sigma2[p]) +
             ", max |z| = " + io::format_double(std::max(mt.max_mean_z, vc.max_abs_z)));
  }

  // Control: drop the compensator; the orthogonality statistic must explode.
  const std::size_t n_control = std::min<std::size_t>(cfg.mc.n_samples, 2000);
  Rng rng_ctl(cfg.mc.master_seed, "martingale/control");
  ProbeSet xonly;
  xonly.add(gen, "x", grid_function_x(op.space));
  const MartingaleEnsemble broken =
      martingale_ensemble(gen, xonly, checkpoints, n_control, rng_ctl, false);
  const MartingaleTest ctl = martingale_test(broken, xonly, 0);

  run.output("martingale.csv", csv.text);
  run.output("reports.csv", reports.text);
  run.man.summary = {{"max_abs_z", max_abs_z},
                     {"control_detected", !ctl.pass},
                     {"control_max_z", std::max(ctl.max_mean_z, ctl.max_orthogonality_z)},
                     {"n_traces", cfg.mc.n_samples},
                     {"spectral_gap", gap},
                     {"dim", op.H.n},
                     {"pass", all_pass && !ctl.pass}};
}

namespace detail_vt {

/// One catalogue entry: its closed form plus the real probe components whose
/// variances add up to it (complex probes split into cosine/sine parts).
struct Entry {
  std::string id;
  ClosedFormSigma2 closed;
  std::vector<std::vector<double>> components;
};

inline std::vector<Entry> catalogue_entries(const ExperimentConfig& cfg,
                                            const NelsonOperator& op, const GroundState& gs) {
  const OperatorSpace& space = op.space;
  const double gamma = 1.0;
  const std::span<const double> h_hat(op.modes.form_factor);
  const std::vector<double> fx = grid_function_x(space);
  const std::vector<double> fxi = grid_function_xi(space, op.modes, h_hat);
  const std::size_t n = fx.size();

  auto mul = [&](const std::vector<double>& a, const std::vector<double>& b) {
    return grid_function_product(a, b);
  };
  auto cos_of = [&](const std::vector<double>& a) {
    return detail::mapped(a, [](double t) { return std::cos(t); });
  };
  auto sin_of = [&](const std::vector<double>& a) {
    return detail::mapped(a, [](double t) { return std::sin(t); });
  };
  std::vector<double> sum(n);
  for (std::size_t i = 0; i < n; ++i) sum[i] = fx[i] + fxi[i];

  std::vector<Entry> entries;
  auto add = [&](const std::string& id, std::vector<std::vector<double>> comps) {
    entries.push_back({id, analytic_sigma2(id, op, gs, gamma, h_hat), std::move(comps)});
  };
  if (cfg.model == ExperimentConfig::Model::classical) {
    add("C1", {fx});
    add("C2", {fxi});
    add("C3", {mul(fx, fxi)});
    add("C4", {cos_of(fxi), sin_of(fxi)});
    add("C5", {mul(fx, cos_of(fxi)), mul(fx, sin_of(fxi))});
    add("C6", {cos_of(sum), sin_of(sum)});
  } else {
    add("R1", {fx});
    add("R2", {mul(fx, fxi)});
    add("R3", {mul(fx, cos_of(fxi)), mul(fx, sin_of(fxi))});
    add("R4", {});  // closed form only: no real-probe decomposition is simulated
  }
  return entries;
}

}  // namespace detail_vt

/// The limit-variance catalogue: closed form vs the two rate-table routes vs
/// simulation, one row per catalogue entry, as CSV and as JSON keyed by
/// entry id.
inline void variance_table(PipelineRun& run) {
  const ExperimentConfig& cfg = run.cfg;
  const GridSpec grid = cfg.grid_spec();
  const NelsonOperator op = assemble_h(grid, cfg.mode_set(), cfg.kind(), cfg.potential_fn());
  const GroundState gs = ground_state(op);
  const MarkovGenerator gen = h_transform(op, gs);
  const double T = cfg.mc.horizon;

  const std::vector<detail_vt::Entry> entries = detail_vt::catalogue_entries(cfg, op, gs);

  // One ensemble over every simulated component probe.
  ProbeSet probes;
  std::vector<std::vector<std::size_t>> comp_index(entries.size());
  for (std::size_t e = 0; e < entries.size(); ++e)
    for (std::size_t c = 0; c < entries[e].components.size(); ++c) {
      comp_index[e].push_back(probes.size());
      probes.add(gen, entries[e].id + "/" + std::to_string(c), entries[e].components[c]);
    }
  MartingaleEnsemble ens;
  if (probes.size() > 0) {
    Rng rng(cfg.mc.master_seed, "variance-table/ensemble");
    ens = martingale_ensemble(gen, probes, {T}, cfg.mc.n_samples, rng);
  }

  io::CsvBuilder csv({"example_id", "closed_form", "dirichlet", "commutator", "rel_gap",
                      "mc_sigma2", "mc_std_error", "mc_z", "simulated"});
  nlohmann::json table;
  double max_abs_rel_gap = 0.0, max_abs_mc_z = 0.0;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const detail_vt::Entry& ent = entries[e];
    double dirichlet = 0.0, commutator = 0.0;
    for (const auto& comp : ent.components) {
      const Sigma2Routes routes = commutator_sigma2(op, gs, comp);
      dirichlet += routes.dirichlet;
      commutator += routes.commutator;
    }
    const bool simulated = !ent.components.empty();
    const double rel_gap =
        simulated && ent.closed.value != 0.0 ? (dirichlet - ent.closed.value) / ent.closed.value
                                             : 0.0;
    if (simulated) max_abs_rel_gap = std::max(max_abs_rel_gap, std::abs(rel_gap));

    detail::Pooled mc;
    if (simulated) {
      for (std::size_t tr = 0; tr < ens.n_traces; ++tr) {
        double v = 0.0;
        for (std::size_t c : comp_index[e]) {
          const double m = ens.m(c, tr, 0);
          v += m * m;
        }
        mc.add(v / T);
      }
    }
    const double mc_z = simulated ? z_score(mc.mean, dirichlet, mc.std_error()) : 0.0;
    if (simulated) max_abs_mc_z = std::max(max_abs_mc_z, std::abs(mc_z));

    csv.add_row({ent.id, io::format_double(ent.closed.value), io::format_double(dirichlet),
                 io::format_double(commutator), io::format_double(rel_gap),
                 simulated ? io::format_double(mc.mean) : "",
                 simulated ? io::format_double(mc.std_error()) : "",
                 simulated ? io::format_double(mc_z) : "", simulated ? "1" : "0"});

    nlohmann::json ingredients;
    for (const auto& [name, value] : ent.closed.ingredients) ingredients[name] = value;
    nlohmann::json row = {{"closed_form", ent.closed.value},
                          {"ingredients", ingredients},
                          {"dirichlet", dirichlet},
                          {"commutator", commutator},
                          {"rel_gap", rel_gap}};
    row["mc"] = simulated ? nlohmann::json{{"sigma2", mc.mean},
                                           {"std_error", mc.std_error()},
                                           {"z", mc_z},
                                           {"n_traces", ens.n_traces},
                                           {"horizon", T}}
                          : nlohmann::json(nullptr);
    table[ent.id] = row;
    run.note("  " + ent.id + ": closed " + io::format_double(ent.closed.value) +
             ", dirichlet " + io::format_double(dirichlet) +
             (simulated ? ", mc z " + io::format_double(mc_z) : " (not simulated)"));
  }

  run.output("variance_table.csv", csv.text);
  run.output("variance_table.json", table.dump(2) + "\n");
  run.man.summary = {{"max_abs_rel_gap", max_abs_rel_gap},
                     {"max_abs_mc_z", max_abs_mc_z},
                     {"energy", gs.energy},
                     {"n_traces", cfg.mc.n_samples},
                     {"horizon", T},
                     {"dim", op.H.n},
                     {"pass", max_abs_rel_gap < 0.02 && max_abs_mc_z < 3.0}};
}

/// Long-horizon normalization: Kolmogorov-Smirnov distance of M_t/sqrt(
/// sigma^2 t) from the standard normal over a geometric ladder of horizons,
/// the variance line, and the vanishing remainder (1/t) E[(f(X_t)-f(X_0))^2].
inline void fclt_scaling(PipelineRun& run) {
  const ExperimentConfig& cfg = run.cfg;
  const GridSpec grid = cfg.grid_spec();
  const NelsonOperator op = assemble_h(grid, cfg.mode_set(), cfg.kind(), cfg.potential_fn());
  const GroundState gs = ground_state(op);
  const MarkovGenerator gen = h_transform(op, gs);
  const double gap = spectral_gap(op, gs);
  const double h = cfg.mc.horizon;
  const std::vector<double> checkpoints = {h / 64.0, h / 16.0, h / 4.0, h};

  ProbeSet probes;
  probes.add(gen, "x", grid_function_x(op.space));
  if (op.space.grid.n_op > 0)
    probes.add(gen, "xi", grid_function_xi(op.space, op.modes, op.modes.form_factor));

  Rng rng(cfg.mc.master_seed, "fclt-scaling/ensemble");
  const MartingaleEnsemble ens =
      martingale_ensemble(gen, probes, checkpoints, cfg.mc.n_samples, rng);

  io::CsvBuilder csv({"probe", "scale", "ks_p", "var_estimate", "var_std_error", "var_z",
                      "kv_estimate", "kv_std_error", "kv_over_sigma2"});
  bool all_pass = true;
  nlohmann::json per_probe;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const FcltResult fr = fclt_test(ens, probes, p, gap);
    const VarianceCurve vc = variance_curve(ens, p, probes.sigma2[p], gap);
    const KvResidual kv = kv_residual(ens, probes, p);
    for (std::size_t k = 0; k < checkpoints.size(); ++k)
      csv.add_row({probes.ids[p], io::format_double(checkpoints[k]),
                   io::format_double(fr.ks_p[k]), io::format_double(vc.estimate[k]),
                   io::format_double(vc.std_error[k]), io::format_double(vc.z[k]),
                   io::format_double(kv.estimate[k]), io::format_double(kv.std_error[k]),
                   io::format_double(kv.estimate[k] / probes.sigma2[p])});
    const double kv_ratio = kv.estimate.back() / probes.sigma2[p];
    const bool pass = fr.pass && vc.pass && kv_ratio < 0.05;
    all_pass = all_pass && pass;
    per_probe[probes.ids[p]] = {{"sigma2", probes.sigma2[p]},
                                {"ks_p_at_largest", fr.ks_p_at_largest},
                                {"max_var_z", vc.max_abs_z},
                                {"kv_ratio_at_largest", kv_ratio},
                                {"pass", pass}};
    run.note("  probe " + probes.ids[p] + ": ks p = " + io::format_double(fr.ks_p_at_largest) +
             ", kv ratio = " + io::format_double(kv_ratio));
  }
  run.output("fclt.csv", csv.text);
  run.man.summary = {{"probes", per_probe},
                     {"spectral_gap", gap},
                     {"n_traces", cfg.mc.n_samples},
                     {"horizon", h},
                     {"dim", op.H.n},
                     {"pass", all_pass}};
}

}  // namespace pipelines

inline const std::vector<std::string>& pipeline_ids() {
  static const std::vector<std::string> ids = {
      "field-covariance", "particle-law",       "kato",
      "fk-cross-check",   "ground-state",       "pphi1-stationarity",
      "martingale",       "variance-table",     "fclt-scaling"};
  return ids;
}

/// Validates the configuration (hard failures throw), runs the pipeline named
/// by cfg.experiment into out_dir, writes the manifest, and returns it.
inline io::RunManifest run_pipeline(const ExperimentConfig& cfg,
                                    const std::filesystem::path& out_dir, bool quiet = false) {
  const std::vector<CheckResult> checks = validate(cfg);
  if (has_hard_failure(checks)) {
    std::string msg = "configuration rejected:";
    for (const auto& c : checks)
      if (c.hard && !c.passed) msg += " [" + c.name + "] " + c.message + ";";
    throw std::invalid_argument(msg);
  }

  PipelineRun run{cfg, out_dir, quiet, {}};
  run.man.pipeline = cfg.experiment;
  run.man.config = config_to_json(cfg);
  run.man.config_hash = io::hex64(config_hash(cfg));
  run.man.master_seed = cfg.mc.master_seed;
  nlohmann::json validation = nlohmann::json::array();
  for (const auto& c : checks)
    validation.push_back(
        {{"name", c.name}, {"passed", c.passed}, {"hard", c.hard}, {"value", c.value}});
  run.note("pipeline " + cfg.experiment + " -> " + out_dir.string());

  const auto t0 = std::chrono::steady_clock::now();
  const std::string& id = cfg.experiment;
  if (id == "field-covariance") pipelines::field_covariance(run);
  else if (id == "particle-law") pipelines::particle_law(run);
  else if (id == "kato") pipelines::kato(run);
  else if (id == "fk-cross-check") pipelines::fk_cross_check(run);
  else if (id == "ground-state") pipelines::ground_state_pipeline(run);
  else if (id == "pphi1-stationarity") pipelines::pphi1_stationarity(run);
  else if (id == "martingale") pipelines::martingale(run);
  else if (id == "variance-table") pipelines::variance_table(run);
  else if (id == "fclt-scaling") pipelines::fclt_scaling(run);
  else {
    std::string msg = "unknown pipeline '" + id + "'; valid:";
    for (const auto& p : pipeline_ids()) msg += " " + p;
    throw std::invalid_argument(msg);
  }
  run.man.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run.man.summary["validation"] = validation;
  io::write_manifest(out_dir, run.man);
  run.note("wrote " + (out_dir / "manifest.json").string());
  return run.man;
}

}  // namespace nelson
