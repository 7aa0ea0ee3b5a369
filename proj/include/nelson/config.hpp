#pragma once
/// \file
/// Experiment configuration: one JSON-serializable description of the model
/// (kinetics, potential, field), the discretization grids, and the Monte
/// Carlo budget, plus pre-run validation checks. Every pipeline consumes
/// exactly one ExperimentConfig, and the fully resolved configuration is
/// recorded in the run manifest, so a run is reproducible from its manifest
/// alone. JSON parsing is strict: unknown keys are rejected so typos cannot
/// silently fall back to defaults.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "nelson/field_modes.hpp"
#include "nelson/operators.hpp"
#include "nelson/particle_paths.hpp"
#include "nelson/rng.hpp"

namespace nelson {

/// External potential V. Either the harmonic well V(x) = spring x^2 / 2 or a
/// tabulated profile, interpolated linearly between sorted nodes and clamped
/// to the end values outside the table (paths that leave the table must see a
/// finite potential, not an extrapolation artifact).
struct PotentialConfig {
  enum class Kind { harmonic, tabulated };
  Kind kind = Kind::harmonic;
  double spring = 1.0;    ///< curvature of the harmonic well
  std::vector<double> x;  ///< tabulated nodes, strictly increasing
  std::vector<double> v;  ///< potential values at the nodes

  /// Callable that owns its data (safe to outlive this object).
  std::function<double(double)> fn() const {
    if (kind == Kind::harmonic) {
      const double k = spring;
      return [k](double xx) { return 0.5 * k * xx * xx; };
    }
    if (x.size() < 2 || x.size() != v.size())
      throw std::invalid_argument(
          "PotentialConfig: tabulated potential needs matching x/v tables (>= 2 nodes)");
    return [xs = x, vs = v](double xx) {
      if (xx <= xs.front()) return vs.front();
      if (xx >= xs.back()) return vs.back();
      const auto it = std::upper_bound(xs.begin(), xs.end(), xx);
      const std::size_t i = static_cast<std::size_t>(it - xs.begin());
      const double w = (xx - xs[i - 1]) / (xs[i] - xs[i - 1]);
      return vs[i - 1] + w * (vs[i] - vs[i - 1]);
    };
  }
};

/// Field sector: dispersion mass, coupling strength, ultraviolet cutoff and
/// the mode grids. `n_modes` modes enter the samplers; the first `n_op` of
/// them enter the assembled operator (operator cost is exponential in n_op,
/// sampler cost linear in n_modes).
struct FieldConfig {
  double nu = 1.0;          ///< dispersion mass, omega(k) = sqrt(k^2 + nu^2)
  double coupling = 0.25;   ///< overall form-factor scale
  double cutoff = 2.0;      ///< Gaussian ultraviolet cutoff scale
  std::size_t n_modes = 1;  ///< sampler-level mode count
  double k_max = 1.0;       ///< largest retained momentum
  std::size_t n_op = 1;     ///< operator-level mode count (<= n_modes)
};

/// Monte Carlo budget and seeding. The master seed determines every stream of
/// a run; replica streams are derived from (seed, stream id), never from
/// scheduling, so outputs are byte-identical across thread counts.
struct McConfig {
  std::size_t n_samples = 10000;
  std::size_t n_steps = 64;  ///< path discretization steps per unit run
  double horizon = 4.0;      ///< largest time the experiment evolves to
  std::uint64_t master_seed = 20260819;
};

/// Complete description of one experiment run.
struct ExperimentConfig {
  enum class Model { classical, relativistic };
  Model model = Model::classical;
  double particle_mass = 1.0;  ///< rest mass; used by the relativistic kinetic only

  PotentialConfig potential;
  FieldConfig field;
  GridSpec grids;  ///< n_op is mirrored from field.n_op (see grid_spec())
  McConfig mc;
  std::string experiment = "variance-table";

  ProcessKind kind() const {
    return model == Model::classical ? ProcessKind::brownian()
                                     : ProcessKind::relativistic(particle_mass);
  }
  ModeSet mode_set() const {
    return build_mode_set(field.n_modes, field.k_max, field.nu, field.coupling, field.cutoff);
  }
  std::function<double(double)> potential_fn() const { return potential.fn(); }

  /// Grid spec with the operator-level mode count taken from the field
  /// section; field.n_op is the single authority so the two cannot drift.
  GridSpec grid_spec() const {
    GridSpec g = grids;
    g.n_op = field.n_op;
    return g;
  }
};

// --- JSON round trip ----------------------------------------------------------------

namespace detail {

inline void require_keys(const nlohmann::json& j, const char* where,
                         std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw std::invalid_argument(std::string("config: ") + where + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) { ok = true; break; }
    if (!ok)
      throw std::invalid_argument(std::string("config: unknown key '") + item.key() + "' in " +
                                  where);
  }
}

inline nlohmann::json grid_to_json(const Grid1d& g) {
  return {{"lo", g.lo}, {"hi", g.hi}, {"n", g.n}};
}

inline void grid_from_json(const nlohmann::json& j, const char* where, Grid1d& g) {
  require_keys(j, where, {"lo", "hi", "n"});
  g.lo = j.value("lo", g.lo);
  g.hi = j.value("hi", g.hi);
  g.n = j.value("n", g.n);
}

}  // namespace detail

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["model"] = {{"type", c.model == ExperimentConfig::Model::classical ? "classical"
                                                                       : "relativistic"},
                {"mass", c.particle_mass}};
  if (c.potential.kind == PotentialConfig::Kind::harmonic) {
    j["potential"] = {{"type", "harmonic"}, {"spring", c.potential.spring}};
  } else {
    j["potential"] = {{"type", "tabulated"}, {"x", c.potential.x}, {"v", c.potential.v}};
  }
  j["field"] = {{"nu", c.field.nu},         {"coupling", c.field.coupling},
                {"cutoff", c.field.cutoff}, {"n_modes", c.field.n_modes},
                {"k_max", c.field.k_max},   {"n_op", c.field.n_op}};
  j["grids"] = {{"particle", detail::grid_to_json(c.grids.particle)},
                {"quadrature", detail::grid_to_json(c.grids.quadrature)}};
  j["mc"] = {{"n_samples", c.mc.n_samples},
             {"n_steps", c.mc.n_steps},
             {"horizon", c.mc.horizon},
             {"master_seed", c.mc.master_seed}};
  j["experiment"] = c.experiment;
  return j;
}

/// Parses a (possibly partial) JSON document; missing sections keep their
/// defaults, unknown keys anywhere are an error. Grid layouts are structural
/// (particle boxes are zero-boundary interiors, quadrature grids are
/// cell-centered) and deliberately not configurable.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::require_keys(j, "top level",
                       {"model", "potential", "field", "grids", "mc", "experiment"});
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::require_keys(m, "model", {"type", "mass"});
    const std::string type = m.value("type", "classical");
    if (type == "classical") c.model = ExperimentConfig::Model::classical;
    else if (type == "relativistic") c.model = ExperimentConfig::Model::relativistic;
    else throw std::invalid_argument("config: model.type must be classical|relativistic");
    c.particle_mass = m.value("mass", c.particle_mass);
  }
  if (j.contains("potential")) {
    const auto& p = j.at("potential");
    detail::require_keys(p, "potential", {"type", "spring", "x", "v"});
    const std::string type = p.value("type", "harmonic");
    if (type == "harmonic") {
      c.potential.kind = PotentialConfig::Kind::harmonic;
      c.potential.spring = p.value("spring", c.potential.spring);
    } else if (type == "tabulated") {
      c.potential.kind = PotentialConfig::Kind::tabulated;
      c.potential.x = p.value("x", std::vector<double>{});
      c.potential.v = p.value("v", std::vector<double>{});
    } else {
      throw std::invalid_argument("config: potential.type must be harmonic|tabulated");
    }
  }
  if (j.contains("field")) {
    const auto& f = j.at("field");
    detail::require_keys(f, "field", {"nu", "coupling", "cutoff", "n_modes", "k_max", "n_op"});
    c.field.nu = f.value("nu", c.field.nu);
    c.field.coupling = f.value("coupling", c.field.coupling);
    c.field.cutoff = f.value("cutoff", c.field.cutoff);
    c.field.n_modes = f.value("n_modes", c.field.n_modes);
    c.field.k_max = f.value("k_max", c.field.k_max);
    c.field.n_op = f.value("n_op", c.field.n_op);
  }
  if (j.contains("grids")) {
    const auto& g = j.at("grids");
    detail::require_keys(g, "grids", {"particle", "quadrature"});
    if (g.contains("particle"))
      detail::grid_from_json(g.at("particle"), "grids.particle", c.grids.particle);
    if (g.contains("quadrature"))
      detail::grid_from_json(g.at("quadrature"), "grids.quadrature", c.grids.quadrature);
  }
  if (j.contains("mc")) {
    const auto& m = j.at("mc");
    detail::require_keys(m, "mc", {"n_samples", "n_steps", "horizon", "master_seed"});
    c.mc.n_samples = m.value("n_samples", c.mc.n_samples);
    c.mc.n_steps = m.value("n_steps", c.mc.n_steps);
    c.mc.horizon = m.value("horizon", c.mc.horizon);
    c.mc.master_seed = m.value("master_seed", c.mc.master_seed);
  }
  c.experiment = j.value("experiment", c.experiment);
  c.grids.n_op = c.field.n_op;
  return c;
}

inline ExperimentConfig default_config() {
  ExperimentConfig c;
  c.grids.quadrature.n = 24;  // validated closed-form agreement grid
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config: parse error in " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const std::filesystem::path& path, const ExperimentConfig& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("config: cannot write " + path.string());
  out << config_to_json(c).dump(2) << '\n';
}

/// Canonical fingerprint: FNV-1a over the compact JSON dump. Object keys are
/// stored sorted, so the dump (and hence the hash) is order-independent.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  return fnv1a64(config_to_json(c).dump());
}

// --- validation ----------------------------------------------------------------------

/// One validation check. Hard failures describe configurations whose results
/// would be meaningless (runners refuse to start); soft failures are warnings
/// (coarse grids, slow decay) that the run records but proceeds through.
struct CheckResult {
  std::string name;
  bool passed = true;
  bool hard = false;    ///< a failed hard check must block the run
  double value = 0.0;   ///< diagnostic scalar (sum, ratio, ...)
  std::string message;
};

struct ValidationOptions {
  bool run_kato = false;           ///< run the (sampling) potential-class diagnostic
  std::size_t kato_samples = 2000;
  double boundary_threshold = 1e-3;  ///< ground-state edge amplitude, relative
};

inline bool has_hard_failure(const std::vector<CheckResult>& checks) {
  for (const auto& c : checks)
    if (c.hard && !c.passed) return true;
  return false;
}

/// Pre-run checks, cheapest first:
///  - shape sanity for grids, potential tables and the Monte Carlo budget;
///  - the three coupling quadratures sum(dk phi^2 / omega^p), p = 1, 2, 3,
///    which must stay finite as dk -> 0: they control the interaction's
///    relative bound, the dressing shift and the mode-sum variances. With
///    nu <= 0 all three diverge at k = 0 in the continuum limit, so that is a
///    hard failure even though any finite mode grid gives a finite sum;
///  - ground-state boundary decay of the particle-only problem (soft): the
///    box must contain the ground state, or lattice variances pick up
///    boundary artifacts;
///  - optionally the sampling diagnostic for the potential class (soft).
inline std::vector<CheckResult> validate(const ExperimentConfig& cfg,
                                         const ValidationOptions& opts = {}) {
  std::vector<CheckResult> out;
  auto add = [&out](std::string name, bool passed, bool hard, double value, std::string msg) {
    out.push_back({std::move(name), passed, hard, value, std::move(msg)});
  };

  // Shape sanity (hard): everything later assumes these.
  {
    std::string msg;
    bool ok = true;
    auto fail = [&](const std::string& m) { ok = false; msg = msg.empty() ? m : msg + "; " + m; };
    if (cfg.grids.particle.n < 8) fail("particle grid needs n >= 8");
    if (!(cfg.grids.particle.hi > cfg.grids.particle.lo)) fail("particle box is empty");
    if (cfg.field.n_op > 0 && cfg.grids.quadrature.n < 8) fail("quadrature grid needs n >= 8");
    if (!(cfg.grids.quadrature.hi > cfg.grids.quadrature.lo)) fail("quadrature box is empty");
    if (std::abs(cfg.grids.quadrature.hi + cfg.grids.quadrature.lo) >
        1e-12 * std::abs(cfg.grids.quadrature.hi))
      fail("quadrature box must be symmetric about 0");
    if (cfg.field.n_modes == 0) fail("need at least one field mode");
    if (cfg.field.n_op > cfg.field.n_modes) fail("field.n_op exceeds field.n_modes");
    if (!(cfg.field.k_max > 0.0)) fail("field.k_max must be positive");
    if (!(cfg.field.cutoff > 0.0)) fail("field.cutoff must be positive");
    if (cfg.field.coupling < 0.0) fail("field.coupling must be nonnegative");
    if (cfg.model == ExperimentConfig::Model::relativistic && !(cfg.particle_mass > 0.0))
      fail("relativistic kinetic needs mass > 0");
    if (cfg.mc.n_samples < 2) fail("mc.n_samples must be >= 2");
    if (cfg.mc.n_steps < 1) fail("mc.n_steps must be >= 1");
    if (!(cfg.mc.horizon > 0.0)) fail("mc.horizon must be positive");
    if (cfg.potential.kind == PotentialConfig::Kind::tabulated) {
      if (cfg.potential.x.size() < 2 || cfg.potential.x.size() != cfg.potential.v.size())
        fail("tabulated potential needs matching x/v tables (>= 2 nodes)");
      for (std::size_t i = 0; ok && i + 1 < cfg.potential.x.size(); ++i)
        if (!(cfg.potential.x[i] < cfg.potential.x[i + 1]))
          fail("tabulated potential nodes must increase strictly");
    }
    add("shape-sanity", ok, true, 0.0, ok ? "grids, potential and budget well formed" : msg);
    if (!ok) return out;  // later checks would only cascade
  }

  // Coupling quadratures (hard). Finite mode sums are reported as values; the
  // pass verdict is the continuum criterion, which requires nu > 0.
  {
    const ModeSet ms = cfg.mode_set();
    double s[3] = {0.0, 0.0, 0.0};
    bool finite = true;
    for (std::size_t j = 0; j < ms.size(); ++j) {
      const double f2 = ms.form_factor[j] * ms.form_factor[j];
      const double w = ms.omega[j];
      if (!(w > 0.0)) finite = false;
      s[0] += ms.dk * f2 / w;
      s[1] += ms.dk * f2 / (w * w);
      s[2] += ms.dk * f2 / (w * w * w);
    }
    for (double v : s) finite = finite && std::isfinite(v);
    const bool infrared_ok = cfg.field.nu > 0.0;
    const char* names[3] = {"mode-sum-phi2-over-omega", "mode-sum-phi2-over-omega2",
                            "mode-sum-phi2-over-omega3"};
    const char* roles[3] = {"controls the interaction's relative bound",
                            "controls the dressing shift",
                            "controls the low-momentum mode variance"};
    for (int p = 0; p < 3; ++p) {
      const bool ok = finite && infrared_ok;
      add(names[p], ok, true, s[p],
          ok ? roles[p]
             : std::string(roles[p]) +
                   "; diverges at k = 0 in the continuum limit (needs nu > 0)");
    }
    if (has_hard_failure(out)) return out;
  }

  // Ground-state boundary decay (soft): cheap particle-only eigensolve.
  {
    NelsonOperator pop =
        assemble_particle_only(cfg.grids.particle, cfg.kind(), cfg.potential_fn());
    GroundState pg = ground_state(pop);
    double peak = 0.0;
    for (double u : pg.vec) peak = std::max(peak, u);
    const double edge = std::max(pg.vec.front(), pg.vec.back()) / peak;
    add("ground-state-boundary-decay", edge < opts.boundary_threshold, false, edge,
        edge < opts.boundary_threshold
            ? "particle box contains the ground state"
            : "ground state has not decayed at the box edge; enlarge the particle box");
  }

  // Potential class (soft, optional): sup_x E^x[int_0^t |V|] must trend to 0.
  if (opts.run_kato) {
    Rng rng(cfg.mc.master_seed, "validate/kato");
    const std::vector<double> t_grid = {0.4, 0.2, 0.1, 0.05};
    std::vector<double> x_grid(9);
    for (std::size_t i = 0; i < x_grid.size(); ++i)
      x_grid[i] = cfg.grids.particle.lo + (cfg.grids.particle.hi - cfg.grids.particle.lo) *
                                              static_cast<double>(i) /
                                              static_cast<double>(x_grid.size() - 1);
    const KatoDiagnostic diag = kato_diagnostic(cfg.potential_fn(), cfg.kind(), t_grid, x_grid,
                                                opts.kato_samples, rng);
    add("potential-class-diagnostic", diag.trends_to_zero && !diag.ceiling_flag, false,
        diag.rows.empty() ? 0.0 : diag.rows.back().sup_estimate,
        diag.ceiling_flag ? "potential integral hit the ceiling; not integrable along paths"
        : diag.trends_to_zero
            ? "sup-expected potential integral trends to zero with the horizon"
            : "sup-expected potential integral does not trend to zero");
  }

  return out;
}

}  // namespace nelson
