#pragma once
/// \file
/// Deterministic discretization of the particle--field Hamiltonian in position
/// (Q-space) coordinates: particle grid x field-quadrature grids. In this
/// representation the interaction is a diagonal multiplication operator and
/// every off-diagonal entry comes from a kinetic term, so conjugating with the
/// ground state yields a bona fide jump-rate matrix (nonnegative rates). The
/// module provides the grid types, the operator builders, the ground-state
/// eigensolver wrapper, the ground-state (Doob) transform, two independent
/// evaluation routes for the limiting variance of additive functionals, the
/// catalogue of closed-form variances, and the effective-mass identity check.
///
/// Conventions used throughout:
///  * Operators are stored as symmetric matrices on plain l2; vectors carry an
///    implicit uniform cell weight w = dx * dq^{#quadratures}. The stationary
///    probability of state a is then simply u_a^2 for the l2-normalized ground
///    vector u.
///  * The transformed generator follows the positive-semidefinite convention
///    L = diag(u)^{-1} (H - E) diag(u): off-diagonals are <= 0, the jump rate
///    a->b is -L(a,b), the exit rate is +L(a,a), and the semigroup is e^{-tL}.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nelson/field_modes.hpp"
#include "nelson/particle_paths.hpp"
#include "nelson/sparse.hpp"

namespace nelson {

// --- grids -------------------------------------------------------------------

/// One uniform 1-d grid. Two layouts:
///  * interior: nodes x_i = lo + (i+1)h with h = (hi-lo)/(n+1). Natural for
///    Dirichlet boundaries; the trapezoidal weight degenerates to the uniform
///    weight h because the boundary values vanish.
///  * centered: nodes q_i = lo + (i+1/2)h with h = (hi-lo)/n. Natural for
///    reflecting (no-flux) boundaries on the field quadratures.
struct Grid1d {
  enum class Layout { interior, centered };
  double lo = 0.0, hi = 0.0;
  std::size_t n = 0;
  Layout layout = Layout::interior;

  double spacing() const {
    return (hi - lo) / static_cast<double>(layout == Layout::interior ? n + 1 : n);
  }
  double node(std::size_t i) const {
    const double h = spacing();
    return lo + h * (layout == Layout::interior ? static_cast<double>(i + 1)
                                                : static_cast<double>(i) + 0.5);
  }
  std::vector<double> nodes() const {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = node(i);
    return v;
  }
};

/// Particle box plus one shared quadrature grid replicated over the retained
/// operator-level modes (two quadratures per mode). The operator may retain
/// fewer modes than the sampler (n_op <= ms.size()); sampler-only modes are
/// integrated out exactly on the Monte Carlo side.
struct GridSpec {
  Grid1d particle{-8.0, 8.0, 64, Grid1d::Layout::interior};
  Grid1d quadrature{-4.2426406871192851, 4.2426406871192851, 32,
                    Grid1d::Layout::centered};  // +-6 stationary std devs
  std::size_t n_op = 1;                         // operator-level mode count

  std::size_t n_quadratures() const { return 2 * n_op; }
  std::size_t field_dim() const {
    std::size_t d = 1;
    for (std::size_t j = 0; j < n_quadratures(); ++j) d *= quadrature.n;
    return d;
  }
  std::size_t dim() const { return particle.n * field_dim(); }
  double cell_volume() const {
    double w = particle.spacing();
    for (std::size_t j = 0; j < n_quadratures(); ++j) w *= quadrature.spacing();
    return w;
  }
};

/// Index bookkeeping on the product grid. The particle index varies slowest,
/// then mode-1 cosine, mode-1 sine, mode-2 cosine, ... This matches the
/// Kronecker-sum assembly order, and makes the x-marginal a contiguous-block
/// reduction.
struct OperatorSpace {
  GridSpec grid;

  std::size_t dim() const { return grid.dim(); }
  std::size_t x_index(std::size_t a) const { return a / grid.field_dim(); }
  std::size_t q_index(std::size_t a, std::size_t j) const {
    std::size_t rest = a % grid.field_dim();
    std::size_t block = grid.field_dim() / grid.quadrature.n;
    for (std::size_t k = 0; k < j; ++k) {
      rest %= block;
      block /= grid.quadrature.n;
    }
    return rest / block;
  }
  double x_of(std::size_t a) const { return grid.particle.node(x_index(a)); }
  double q_of(std::size_t a, std::size_t j) const {
    return grid.quadrature.node(q_index(a, j));
  }
  /// All quadrature coordinates of state a: (mode-1 cos, mode-1 sin, ...).
  std::vector<double> q_coords(std::size_t a) const {
    std::vector<double> q(grid.n_quadratures());
    for (std::size_t j = 0; j < q.size(); ++j) q[j] = q_of(a, j);
    return q;
  }
};

// --- particle kinetic ----------------------------------------------------------

/// Discrete Fourier kernel of a radial multiplier psi on the n-point periodic
/// grid with spacing dx: c(r) = (1/n) sum_j psi(kappa_j) cos(2 pi j r / n),
/// kappa_j the usual signed frequencies. c(r) = c(n-r); rows of the circulant
/// built from c sum to psi(0).
inline std::vector<double> multiplier_kernel(std::size_t n, double dx,
                                             const std::function<double(double)>& psi) {
  std::vector<double> c(n, 0.0);
  const double base = 2.0 * 3.14159265358979323846 / (static_cast<double>(n) * dx);
  for (std::size_t r = 0; r < n; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double signed_j =
          (j <= n / 2) ? static_cast<double>(j) : static_cast<double>(j) - static_cast<double>(n);
      const double angle = 2.0 * 3.14159265358979323846 * static_cast<double>(j) *
                           static_cast<double>(r) / static_cast<double>(n);
      acc += psi(base * signed_j) * std::cos(angle);
    }
    c[r] = acc / static_cast<double>(n);
  }
  return c;
}

struct KineticBuildInfo {
  double clipped_mass = 0.0;  ///< total positive off-diagonal weight removed per row
  std::size_t clipped_count = 0;
};

/// Particle kinetic operator on the particle grid.
///  * brownian: -1/2 d^2/dx^2 by the second-order central stencil with
///    Dirichlet boundaries (diagonal 1/dx^2, off-diagonal -1/(2 dx^2)). The
///    negative off-diagonals are what the ground-state transform turns into
///    nearest-neighbor jump rates.
///  * cauchy / relativistic: the periodic-grid Fourier multiplier of
///    sqrt(s(kappa) + m^2) - m, where s(kappa) = 2(1 - cos(kappa dx))/dx^2 is
///    the symbol of the discrete Laplacian above — i.e. the operator function
///    sqrt(-Delta_disc + m^2) - m. Two properties make this the right
///    discrete symbol. It is smooth and periodic on the frequency circle, so
///    its kernel decays exponentially in the lag; sampling the continuum
///    symbol sqrt(kappa^2 + m^2) - m instead leaves a corner at the window
///    edge whose alternating 1/lag^2 tail carries O(1) of lag^2-weighted
///    (carre-du-champ) mass at every resolution — clipping that tail shifts
///    limiting variances by tens of percent, independent of dx. And since
///    sqrt(lambda + m^2) - m is a complete Bernstein function evaluated on a
///    Markov generator, the off-diagonal entries are nonpositive up to
///    rounding, so the construction genuinely is a jump-rate matrix. Rounding
///    positives are still clipped to zero with the row sum preserved
///    (psi(0) = 0 exactly), and the clipped weight is reported as a
///    diagnostic; it should sit at machine scale.
inline SparseMatrix build_particle_kinetic(const Grid1d& grid, const ProcessKind& kind,
                                           KineticBuildInfo* info = nullptr) {
  const std::size_t n = grid.n;
  const double dx = grid.spacing();
  TripletBuilder tb(n);
  if (!kind.is_jump()) {
    const double d = 1.0 / (dx * dx);
    for (std::size_t i = 0; i < n; ++i) {
      tb.add(i, i, d);
      if (i + 1 < n) tb.add_sym(i, i + 1, -0.5 * d);
    }
    if (info) *info = {};
    return tb.build();
  }
  const double m = kind.m;
  std::vector<double> c = multiplier_kernel(n, dx, [m, dx](double kappa) {
    const double s = 2.0 * (1.0 - std::cos(kappa * dx)) / (dx * dx);
    return std::sqrt(s + m * m) - m;
  });
  KineticBuildInfo local;
  for (std::size_t i = 0; i < n; ++i) {
    double diag = c[0];
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double v = c[(j + n - i) % n];
      if (v > 0.0) {
        // Positive coupling cannot be a jump rate; absorb it into the diagonal
        // (preserves the zero row sum of the exact circulant).
        diag += v;
        local.clipped_mass += v;
        ++local.clipped_count;
      } else if (v < 0.0) {
        tb.add(i, j, v);
      }
    }
    tb.add(i, i, diag);
  }
  if (info) {
    local.clipped_mass /= static_cast<double>(n);
    local.clipped_count /= n;
    *info = local;
  }
  return tb.build();
}

// --- field generator -----------------------------------------------------------

/// One quadrature factor: the stationary Ornstein-Uhlenbeck generator
/// v d^2/dq^2 - omega q d/dq with v = omega/2 (stationary variance 1/2),
/// discretized in divergence form against the stationary weight rho = e^{-q^2}
/// and then symmetrized with sqrt(rho). Written out, the symmetric matrix has
///   off-diagonal  -(v/dq^2) e^{+dq^2/4}
///   diagonal      +(v/dq^2) (e^{-q dq - dq^2/4} + e^{+q dq - dq^2/4}),
/// with the one-sided flux dropped at the reflecting ends. Two exact
/// properties make this discretization the right one here: the discrete
/// Gaussian e^{-q_i^2/2} is an exact zero mode (the Markov chain it induces is
/// exactly reversible for the discrete stationary law), and the level-n
/// eigenvalue error has no dq^2 term — the leading stencil corrections
/// (q^4 - d^4/dq^4 and q^2 + d^2/dq^2) have vanishing expectation in every
/// oscillator eigenstate by the position-momentum symmetry, so the spectrum
/// {0, omega, 2 omega, ...} is reproduced to O(dq^4).
inline SparseMatrix build_quadrature_factor(double omega, const Grid1d& grid) {
  const std::size_t n = grid.n;
  const double dq = grid.spacing();
  const double v = 0.5 * omega;
  const double off = -(v / (dq * dq)) * std::exp(0.25 * dq * dq);
  TripletBuilder tb(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double q = grid.node(i);
    double diag = 0.0;
    if (i + 1 < n) {
      diag += (v / (dq * dq)) * std::exp(-q * dq - 0.25 * dq * dq);
      tb.add_sym(i, i + 1, off);
    }
    if (i > 0) diag += (v / (dq * dq)) * std::exp(q * dq - 0.25 * dq * dq);
    tb.add(i, i, diag);
  }
  return tb.build();
}

/// Kronecker sum of quadrature factors with the given per-quadrature
/// frequencies (slowest factor first). Spectrum approximates all finite sums
/// sum_j n_j omega_j; the joint ground is the product discrete Gaussian.
inline SparseMatrix build_quadrature_chain(const std::vector<double>& omegas,
                                           const Grid1d& grid) {
  if (omegas.empty()) throw std::invalid_argument("build_quadrature_chain: no quadratures");
  SparseMatrix acc = build_quadrature_factor(omegas.back(), grid);
  for (std::size_t j = omegas.size() - 1; j-- > 0;)
    acc = kron_sum(build_quadrature_factor(omegas[j], grid), acc);
  return acc;
}

/// Field generator for the first n_op modes of ms: cosine and sine quadratures
/// of mode j share the frequency omega_j.
inline SparseMatrix build_field_generator(const ModeSet& ms, const GridSpec& grid) {
  if (grid.n_op == 0 || grid.n_op > ms.size())
    throw std::invalid_argument("build_field_generator: bad operator mode count");
  std::vector<double> omegas;
  omegas.reserve(2 * grid.n_op);
  for (std::size_t j = 0; j < grid.n_op; ++j) {
    omegas.push_back(ms.omega[j]);
    omegas.push_back(ms.omega[j]);
  }
  return build_quadrature_chain(omegas, grid.quadrature);
}

// --- diagonal parts --------------------------------------------------------------

/// Cell-averaged potential on the particle grid: V_i = (1/dx) int_cell V, by
/// Simpson on the cell (exact through cubics, so exact for harmonic wells).
/// Averaging instead of node sampling cancels three quarters of the kinetic
/// stencil's eigenvalue bias for smooth wells — for the unit oscillator the
/// ground-energy error drops from -dx^2/32 to +dx^2/96 — without touching the
/// operator's sign structure.
inline std::vector<double> build_potential(const Grid1d& grid,
                                           const std::function<double(double)>& V) {
  const double h = grid.spacing();
  std::vector<double> d(grid.n);
  for (std::size_t i = 0; i < grid.n; ++i) {
    const double x = grid.node(i);
    d[i] = (V(x - 0.5 * h) + 4.0 * V(x) + V(x + 0.5 * h)) / 6.0;
  }
  return d;
}

/// Interaction diagonal: entry at state a is the pairing of the field with the
/// form factor translated to the particle position,
///   sum_j lambda_j (cos(k_j x) q_j^cos + sin(k_j x) q_j^sin),
/// evaluated at the grid coordinates of a — i.e. exactly
/// field_modes::interaction_value at (q(a), x(a)) for the retained modes.
inline std::vector<double> build_interaction(const OperatorSpace& space, const ModeSet& ms) {
  const std::size_t n_op = space.grid.n_op;
  if (n_op > ms.size()) throw std::invalid_argument("build_interaction: mode count");
  std::vector<double> d(space.dim());
  FieldState st;
  st.xi_c.resize(n_op);
  st.xi_s.resize(n_op);
  ModeSet trunc = truncate_modes(ms, n_op);
  for (std::size_t a = 0; a < space.dim(); ++a) {
    for (std::size_t j = 0; j < n_op; ++j) {
      st.xi_c[j] = space.q_of(a, 2 * j);
      st.xi_s[j] = space.q_of(a, 2 * j + 1);
    }
    d[a] = interaction_value(st, trunc, space.x_of(a));
  }
  return d;
}

// --- assembly ---------------------------------------------------------------------

/// The assembled Hamiltonian together with the pieces downstream evaluators
/// need: the diagonal that was added on top of the kinetic Kronecker sum
/// (needed to apply the kinetic-only part H0 = H - diag), and the retained
/// mode set.
struct NelsonOperator {
  OperatorSpace space;
  ModeSet modes;           ///< operator-level (truncated) mode set
  SparseMatrix H;          ///< full symmetric operator
  std::vector<double> added_diagonal;  ///< potential + interaction, per state
  KineticBuildInfo kinetic_info;
  ProcessKind kind = ProcessKind::brownian();

  /// y = H0 x with H0 = kinetic (+) field generator (no potential, no
  /// interaction). Diagonal subtraction is exact because both additions are
  /// multiplication operators.
  void apply_h0(std::span<const double> x, std::span<double> y) const {
    H.multiply(x, y);
    for (std::size_t a = 0; a < H.n; ++a) y[a] -= added_diagonal[a] * x[a];
  }
};

/// H = kinetic (+) field + diag(potential + interaction). The Kronecker sum
/// keeps particle and field couplings on disjoint off-diagonal slots, so the
/// transform below never mixes their signs.
inline NelsonOperator assemble_h(const GridSpec& grid, const ModeSet& ms,
                                 const ProcessKind& kind,
                                 const std::function<double(double)>& V) {
  NelsonOperator op;
  op.space = OperatorSpace{grid};
  op.modes = truncate_modes(ms, grid.n_op);
  op.kind = kind;
  SparseMatrix kin = build_particle_kinetic(grid.particle, kind, &op.kinetic_info);
  SparseMatrix field = build_field_generator(ms, grid);
  SparseMatrix h0 = kron_sum(kin, field);

  const std::vector<double> pot = build_potential(grid.particle, V);
  std::vector<double> inter = build_interaction(op.space, ms);
  op.added_diagonal.resize(op.space.dim());
  for (std::size_t a = 0; a < op.space.dim(); ++a)
    op.added_diagonal[a] = pot[op.space.x_index(a)] + inter[a];
  op.H = add_diagonal(h0, op.added_diagonal);
  return op;
}

/// Particle-only assembly (no field): used by oscillator baselines and the
/// boundary-decay validation.
inline NelsonOperator assemble_particle_only(const Grid1d& grid, const ProcessKind& kind,
                                             const std::function<double(double)>& V) {
  NelsonOperator op;
  op.space.grid.particle = grid;
  op.space.grid.n_op = 0;
  op.modes = ModeSet{};
  op.kind = kind;
  op.H = build_particle_kinetic(grid, kind, &op.kinetic_info);
  op.added_diagonal = build_potential(grid, V);
  op.H = add_diagonal(op.H, op.added_diagonal);
  return op;
}

// --- ground state -----------------------------------------------------------------

/// Lowest eigenpair with the sign fixed positive. `vec` is l2-normalized, so
/// the stationary probability of state a is vec[a]^2; the measure-normalized
/// ground function is vec / sqrt(cell_volume).
///
/// Far corners of the product grid carry true amplitudes like e^{-50} relative
/// to the peak — beneath any double-precision eigensolver's noise floor — so
/// their computed signs are meaningless. Entries below 1e-14 of the maximum
/// are clamped to that floor (`floored` counts them): they hold stationary
/// mass below 1e-28 and never influence an expectation, but the transform
/// divides by them, so they must stay positive. A genuinely negative entry
/// beyond noise level (below -1e-8 of the maximum) still throws, since that
/// indicates the discretization actually broke the sign structure.
struct GroundState {
  double energy = 0.0;
  std::vector<double> vec;   ///< l2-unit, entries > 0
  double cell_volume = 0.0;
  double residual = 0.0;
  std::size_t iterations = 0;
  double min_entry = 0.0;
  std::size_t floored = 0;

  double phi(std::size_t a) const { return vec[a] / std::sqrt(cell_volume); }
  /// Stationary probability mass of state a under the transformed process.
  double mass(std::size_t a) const { return vec[a] * vec[a]; }
};

inline GroundState ground_state(const NelsonOperator& op, double tol = 1e-11,
                                std::size_t max_iter = 300) {
  EigenPair ep = smallest_eigenpair(op.H, tol, max_iter);
  if (!ep.converged)
    throw std::runtime_error("ground_state: inverse iteration did not reach tolerance " +
                             std::to_string(tol));
  // Perron-Frobenius direction: with nonpositive off-diagonals the bottom
  // eigenvector of an irreducible H has one sign; fix it positive.
  double s = 0.0;
  for (double v : ep.vector) s += v;
  if (s < 0.0)
    for (double& v : ep.vector) v = -v;
  GroundState gs;
  gs.energy = ep.value;
  gs.vec = std::move(ep.vector);
  gs.cell_volume = op.space.grid.n_op == 0
                       ? op.space.grid.particle.spacing()
                       : op.space.grid.cell_volume();
  gs.residual = ep.residual;
  gs.iterations = ep.iterations;
  const double mx = *std::max_element(gs.vec.begin(), gs.vec.end());
  const double hard = -1e-8 * mx, floor_val = 1e-14 * mx;
  for (double& v : gs.vec) {
    if (v < hard)
      throw std::runtime_error(
          "ground_state: negative entry beyond noise level (sign structure broken)");
    if (v < floor_val) {
      v = floor_val;
      ++gs.floored;
    }
  }
  if (gs.floored > 0) {
    const double nrm = norm2(gs.vec);
    for (double& v : gs.vec) v /= nrm;
  }
  gs.min_entry = *std::min_element(gs.vec.begin(), gs.vec.end());
  return gs;
}

// --- ground-state transform ---------------------------------------------------------

/// The transformed generator L = diag(u)^{-1} (H - E) diag(u), stored with the
/// positive-semidefinite sign convention: off-diagonal L(a,b) <= 0, jump rate
/// a->b is -L(a,b), exit rate is +L(a,a), semigroup e^{-tL}, stationary law
/// m_a = u_a^2, Dirichlet form 2<f, L f>_m >= 0.
///
/// The diagonal is not taken from the similarity transform but repaired to
/// minus the row's off-diagonal sum. This makes L 1 = 0 exact (the eigenpair
/// residual is absorbed where it belongs, in the exit rates, with relative
/// size residual/u_a) and makes detailed balance m_a r(a,b) = m_b r(b,a) hold
/// to machine precision, because m_a r(a,b) = -u_a u_b H(a,b) is symmetric by
/// construction.
struct MarkovGenerator {
  SparseMatrix L;
  std::vector<double> stationary;  ///< m_a = u_a^2, sums to 1
  std::size_t clipped_count = 0;   ///< positive off-diagonal rates clipped
  double clipped_mass = 0.0;

  double exit_rate(std::size_t a) const { return L.entry(a, a); }
  std::vector<double> apply(std::span<const double> f) const { return L.multiply(f); }
};

inline MarkovGenerator h_transform(const NelsonOperator& op, const GroundState& gs) {
  const SparseMatrix& H = op.H;
  MarkovGenerator gen;
  gen.L.n = H.n;
  gen.L.row_ptr.assign(H.n + 1, 0);
  gen.L.col.reserve(H.nnz());
  gen.L.val.reserve(H.nnz());
  for (std::size_t a = 0; a < H.n; ++a) {
    const std::uint64_t begin = H.row_ptr[a], end = H.row_ptr[a + 1];
    double exit = 0.0;
    std::size_t diag_slot = static_cast<std::size_t>(-1);
    for (std::uint64_t p = begin; p < end; ++p) {
      const std::size_t b = H.col[p];
      if (b == a) {
        gen.L.col.push_back(static_cast<std::uint32_t>(b));
        gen.L.val.push_back(0.0);  // patched below
        diag_slot = gen.L.val.size() - 1;
        continue;
      }
      double lab = H.val[p] * gs.vec[b] / gs.vec[a];
      if (lab > 0.0) {
        // A positive transformed off-diagonal would be a negative rate; clip
        // to zero (rate 0) and count it. Cannot occur for the operators built
        // above (their off-diagonals are nonpositive), but tabulated input
        // may violate the sign structure.
        ++gen.clipped_count;
        gen.clipped_mass += lab;
        lab = 0.0;
      }
      if (lab != 0.0) {
        gen.L.col.push_back(static_cast<std::uint32_t>(b));
        gen.L.val.push_back(lab);
        exit += -lab;
      }
    }
    if (diag_slot == static_cast<std::size_t>(-1)) {
      gen.L.col.push_back(static_cast<std::uint32_t>(a));
      gen.L.val.push_back(0.0);
      diag_slot = gen.L.val.size() - 1;
    }
    gen.L.val[diag_slot] = exit;
    gen.L.row_ptr[a + 1] = gen.L.val.size();
    // Rows of CSR must stay column-sorted; entries were emitted in H's sorted
    // order and the diagonal slot kept its position, so order is preserved.
  }
  gen.stationary.resize(H.n);
  for (std::size_t a = 0; a < H.n; ++a) gen.stationary[a] = gs.vec[a] * gs.vec[a];
  return gen;
}

/// Spectral gap of the transformed process: the smallest eigenvalue of H - E
/// orthogonal to the ground vector. Relaxation time = 1/gap.
inline double spectral_gap(const NelsonOperator& op, const GroundState& gs,
                           double tol = 1e-8) {
  EigenPair second = smallest_eigenpair(op.H, tol, 200, gs.vec);
  return second.value - gs.energy;
}

/// e^{-tL} f computed through the symmetric side: conjugate with diag(u),
/// apply the Lanczos exponential of H shifted by E, conjugate back.
inline std::vector<double> semigroup_apply(const NelsonOperator& op, const GroundState& gs,
                                           std::span<const double> f, double t,
                                           double tol = 1e-12) {
  std::vector<double> v(f.size());
  for (std::size_t a = 0; a < v.size(); ++a) v[a] = gs.vec[a] * f[a];
  std::vector<double> w = expm_multiply(op.H, t, v, 160, tol, gs.energy);
  for (std::size_t a = 0; a < w.size(); ++a) w[a] /= gs.vec[a];
  return w;
}

// --- grid observables ----------------------------------------------------------------

/// The observables whose scaled fluctuations the harness studies, tabulated on
/// the state space: the particle coordinate, the field paired with a test
/// profile h (at the origin, cosine quadratures), and products thereof.
inline std::vector<double> grid_function_x(const OperatorSpace& space) {
  std::vector<double> f(space.dim());
  for (std::size_t a = 0; a < f.size(); ++a) f[a] = space.x_of(a);
  return f;
}

/// Pairing coefficients of the field with profile h: the grid function is
/// sum_j sqrt(dk) (h_j / sqrt(omega_j)) q_j^cos.
inline std::vector<double> grid_function_xi(const OperatorSpace& space, const ModeSet& ms,
                                            std::span<const double> h_hat) {
  if (h_hat.size() < space.grid.n_op)
    throw std::invalid_argument("grid_function_xi: profile shorter than operator modes");
  std::vector<double> f(space.dim(), 0.0);
  for (std::size_t a = 0; a < f.size(); ++a) {
    double acc = 0.0;
    for (std::size_t j = 0; j < space.grid.n_op; ++j)
      acc += std::sqrt(ms.dk) * (h_hat[j] / std::sqrt(ms.omega[j])) * space.q_of(a, 2 * j);
    f[a] = acc;
  }
  return f;
}

inline std::vector<double> grid_function_product(std::span<const double> f,
                                                 std::span<const double> g) {
  std::vector<double> h(f.size());
  for (std::size_t a = 0; a < h.size(); ++a) h[a] = f[a] * g[a];
  return h;
}

// --- variance evaluators ----------------------------------------------------------------

/// The two discrete evaluation routes for the limiting variance of the Dynkin
/// martingale of f. They are algebraically identical — both reduce to
/// -sum_{a != b} u_a u_b H(a,b) (f_a - f_b)^2, which touches neither E nor the
/// eigen-residual — but they exercise different code paths (sparse matvec
/// versus edge sum), so their agreement is a meaningful structural check.
struct Sigma2Routes {
  double commutator = 0.0;  ///< 2 < f u, [H0, f] u >
  double dirichlet = 0.0;   ///< sum_a m_a sum_b rate(a,b) (f_b - f_a)^2
};

inline Sigma2Routes commutator_sigma2(const NelsonOperator& op, const GroundState& gs,
                                      std::span<const double> f) {
  const std::size_t n = op.H.n;
  Sigma2Routes out;

  // Route 1: sigma^2 = 2 < f u, [H0, f] u > with [H0, f] u = H0(f u) - f (H0 u).
  // The added diagonal commutes with multiplication by f, so only H0 appears.
  std::vector<double> fu(n), h0fu(n), h0u(n);
  for (std::size_t a = 0; a < n; ++a) fu[a] = f[a] * gs.vec[a];
  op.apply_h0(fu, h0fu);
  op.apply_h0(gs.vec, h0u);
  double acc = 0.0;
  for (std::size_t a = 0; a < n; ++a) acc += fu[a] * (h0fu[a] - f[a] * h0u[a]);
  out.commutator = 2.0 * acc;

  // Route 2: the Dirichlet (edge) sum with m_a rate(a,b) = -u_a u_b H(a,b).
  double edge = 0.0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::uint64_t p = op.H.row_ptr[a]; p < op.H.row_ptr[a + 1]; ++p) {
      const std::size_t b = op.H.col[p];
      if (b == a) continue;
      const double df = f[b] - f[a];
      edge += -gs.vec[a] * gs.vec[b] * op.H.val[p] * df * df;
    }
  out.dirichlet = edge;
  return out;
}

/// Dirichlet-form value alone (the exact simulation target for the chain).
inline double dirichlet_sigma2(const NelsonOperator& op, const GroundState& gs,
                               std::span<const double> f) {
  return commutator_sigma2(op, gs, f).dirichlet;
}

// --- closed-form variance catalogue ------------------------------------------------------

/// Fourier-multiplier sandwich along the particle axis: sum over field slices
/// of sum_j psi(kappa_j) |u-hat(j, slice)|^2, the discrete evaluation of
/// < u, psi(-i d/dx) u > with the same frequencies the kinetic kernel uses.
inline double multiplier_sandwich(const OperatorSpace& space, std::span<const double> u,
                                  const std::function<double(double)>& psi) {
  const std::size_t nx = space.grid.particle.n;
  const std::size_t nf = space.grid.field_dim();
  const double dx = space.grid.particle.spacing();
  const double base = 2.0 * 3.14159265358979323846 / (static_cast<double>(nx) * dx);
  double total = 0.0;
  std::vector<std::complex<double>> uhat(nx);
  for (std::size_t s = 0; s < nf; ++s) {
    for (std::size_t j = 0; j < nx; ++j) {
      std::complex<double> acc(0.0, 0.0);
      for (std::size_t ix = 0; ix < nx; ++ix) {
        const double angle = -2.0 * 3.14159265358979323846 * static_cast<double>(j) *
                             static_cast<double>(ix) / static_cast<double>(nx);
        acc += u[ix * nf + s] * std::complex<double>(std::cos(angle), std::sin(angle));
      }
      uhat[j] = acc / std::sqrt(static_cast<double>(nx));
    }
    for (std::size_t j = 0; j < nx; ++j) {
      const double signed_j = (j <= nx / 2) ? static_cast<double>(j)
                                            : static_cast<double>(j) - static_cast<double>(nx);
      total += psi(base * signed_j) * std::norm(uhat[j]);
    }
  }
  return total;
}

/// Literal evaluation of the conjugate-momentum expectation
/// sum_j c_j < u, -i d/dq_j u > by central differences. For real vectors the
/// bilinear form < u, D u > with antisymmetric D vanishes identically, so this
/// returns numerical zero; it is evaluated anyway so closed-form ingredient
/// lists are complete rather than silently shortened.
inline double pi_expectation(const OperatorSpace& space, std::span<const double> u,
                             std::span<const double> coeff_per_quadrature) {
  const std::size_t nq = space.grid.quadrature.n;
  const double dq = space.grid.quadrature.spacing();
  double total = 0.0;
  for (std::size_t j = 0; j < space.grid.n_quadratures(); ++j) {
    // Stride of quadrature j in the flattened index.
    std::size_t stride = 1;
    for (std::size_t k = space.grid.n_quadratures(); k-- > j + 1;) stride *= nq;
    double s = 0.0;
    for (std::size_t a = 0; a < u.size(); ++a) {
      const std::size_t iq = space.q_index(a, j);
      const double up = iq + 1 < nq ? u[a + stride] : 0.0;
      const double dn = iq > 0 ? u[a - stride] : 0.0;
      s += u[a] * (up - dn) / (2.0 * dq);
    }
    total += coeff_per_quadrature[j] * s;
  }
  return total;
}

/// One catalogue entry: the value and its named ingredient terms.
struct ClosedFormSigma2 {
  std::string example_id;
  double value = 0.0;
  std::vector<std::pair<std::string, double>> ingredients;
};

/// Closed-form limiting variances for the standard observables, evaluated on
/// the discrete ground state. Classical kinetics:
///   C1  f = gamma x                  : gamma^2
///   C2  f = xi(h)                    : ||sqrt(omega) h||^2 = sum dk h_j^2
///   C3  f = (gamma x) xi(h)          : gamma^2 ||xi(h) u||^2
///                                      + ||gamma x u||^2 ||sqrt(omega) h||^2
///   C4  f = e^{i xi(h)}              : 2 <u, Pi(omega h) u> + ||sqrt(omega) h||^2
///   C5  f = (gamma x) e^{i xi(h)}    : gamma^2 + ||gamma x u||^2 ||sqrt(omega) h||^2
///                                      + 2 <gamma x u, Pi(omega h) gamma x u>
///   C6  f = e^{i gamma x + i xi(h)}  : gamma^2 + 2 <u, Pi(omega h) u>
///                                      + ||sqrt(omega) h||^2
/// Relativistic kinetics (multiplier sandwiches along the particle axis, d=1;
/// psi'' below is the second derivative of the lattice kinetic symbol
/// psi(kappa) = sqrt(s(kappa)+m^2), the exact discrete counterpart of the
/// continuum combination (kappa^2+m^2)^{-1/2} - kappa^2 (…)^{-3/2}
/// = m^2 (kappa^2+m^2)^{-3/2}):
///   R1  f = gamma x                  : gamma^2 <u, psi''(kappa) u>
///   R2  f = (gamma x) xi(h)          : gamma^2 <xi_h u, psi''(kappa) xi_h u>
///                                      + ||gamma x u||^2 ||sqrt(omega) h||^2
///   R3  f = (gamma x) e^{i xi(h)}    : gamma^2 <u, psi''(kappa) u>
///                                      + ||gamma x u||^2 ||sqrt(omega) h||^2
///                                      + 2 <gamma x u, Pi(omega h) gamma x u>
///   R4  f = e^{i gamma x + i xi(h)}  : 2 <u, [psi(kappa-gamma) - psi(kappa)] u>
///                                      + 2 <u, Pi(omega h) u> + ||sqrt(omega) h||^2
///
/// On the coefficient of ||gamma x u||^2 ||sqrt(omega) h||^2 in C3 and R2: the
/// product rule for the carre du champ gives
///   Gamma(x xi) = xi^2 Gamma(x) + x^2 Gamma(xi),
/// whose expectation is exactly the two terms with unit coefficients, and the
/// companion entries C5 and R3 carry the same term with coefficient 1. The
/// unit coefficient is also forced by the consistency gate between this
/// catalogue and the Dirichlet form. (A doubled variant of this term
/// circulates in displayed versions of the formula; it does not survive
/// re-derivation.)
inline ClosedFormSigma2 analytic_sigma2(const std::string& example_id,
                                        const NelsonOperator& op, const GroundState& gs,
                                        double gamma, std::span<const double> h_hat) {
  const ModeSet& ms = op.modes;
  const OperatorSpace& space = op.space;
  const std::size_t n = op.H.n;
  const double m = op.kind.m;

  const double c2 = sqrt_omega_norm2(ms, h_hat.subspan(0, ms.size()));
  std::vector<double> pi_coeff(space.grid.n_quadratures(), 0.0);
  for (std::size_t j = 0; j < space.grid.n_op; ++j)
    pi_coeff[2 * j] = std::sqrt(ms.dk * ms.omega[j]) * h_hat[j];

  const std::vector<double> fx = grid_function_x(space);
  const std::vector<double> fxi = grid_function_xi(space, ms, h_hat);
  auto weighted = [&](std::span<const double> f) {
    std::vector<double> v(n);
    for (std::size_t a = 0; a < n; ++a) v[a] = f[a] * gs.vec[a];
    return v;
  };
  auto norm2_of = [&](std::span<const double> f) {
    double s = 0.0;
    for (std::size_t a = 0; a < n; ++a) s += f[a] * f[a] * gs.vec[a] * gs.vec[a];
    return s;
  };

  ClosedFormSigma2 out;
  out.example_id = example_id;
  // The multipliers use the same lattice Laplacian symbol
  // s(kappa) = 2(1 - cos(kappa dx))/dx^2 as the assembled kinetic operator.
  // The combined multiplier behind the gamma x variance is the second
  // derivative of the kinetic symbol psi(kappa) = sqrt(s + m^2):
  //     psi'' = s''/(2 sqrt(s+m^2)) - s'^2/(4 (s+m^2)^{3/2}),
  // the exact lattice counterpart of the continuum pair
  // (-Delta+m^2)^{-1/2}, (-Delta+m^2)^{-3/2} (to which the two terms reduce
  // as dx -> 0, combining into m^2 (kappa^2+m^2)^{-3/2}).  Using the symbol's
  // own derivatives makes the sandwich agree with the Dirichlet form of the
  // assembled operator up to box-boundary effects only, since the kernel-sum
  // identity sum_r K(r) (r dx)^2 e^{-i kappa r dx} = -psi''(kappa) is exact.
  const double psi_m = m;
  const double dx = space.grid.particle.spacing();
  auto mass_multiplier = [psi_m, dx](double kappa) {
    const double s = 2.0 * (1.0 - std::cos(kappa * dx)) / (dx * dx);
    const double sp = 2.0 * std::sin(kappa * dx) / dx;
    const double spp = 2.0 * std::cos(kappa * dx);
    const double w2 = s + psi_m * psi_m;
    return spp / (2.0 * std::sqrt(w2)) - sp * sp / (4.0 * w2 * std::sqrt(w2));
  };

  if (example_id == "C1") {
    out.value = gamma * gamma;
    out.ingredients = {{"gamma^2", gamma * gamma}};
  } else if (example_id == "C2") {
    out.value = c2;
    out.ingredients = {{"sqrt_omega_h_norm2", c2}};
  } else if (example_id == "C3") {
    const double t1 = gamma * gamma * norm2_of(fxi);
    const double t2 = gamma * gamma * norm2_of(fx) * c2;
    out.value = t1 + t2;
    out.ingredients = {{"gamma^2*norm2(xi_h*u)", t1},
                       {"norm2(gamma_x*u)*sqrt_omega_h_norm2", t2}};
  } else if (example_id == "C4") {
    const double pi = 2.0 * pi_expectation(space, gs.vec, pi_coeff);
    out.value = pi + c2;
    out.ingredients = {{"2*pi_expectation(u)", pi}, {"sqrt_omega_h_norm2", c2}};
  } else if (example_id == "C5") {
    std::vector<double> gxu = weighted(fx);
    for (double& v : gxu) v *= gamma;
    const double t2 = gamma * gamma * norm2_of(fx) * c2;
    const double pi = 2.0 * pi_expectation(space, gxu, pi_coeff);
    out.value = gamma * gamma + t2 + pi;
    out.ingredients = {{"gamma^2", gamma * gamma},
                       {"norm2(gamma_x*u)*sqrt_omega_h_norm2", t2},
                       {"2*pi_expectation(gamma_x*u)", pi}};
  } else if (example_id == "C6") {
    const double pi = 2.0 * pi_expectation(space, gs.vec, pi_coeff);
    out.value = gamma * gamma + pi + c2;
    out.ingredients = {{"gamma^2", gamma * gamma},
                       {"2*pi_expectation(u)", pi},
                       {"sqrt_omega_h_norm2", c2}};
  } else if (example_id == "R1") {
    const double sandwich = multiplier_sandwich(space, gs.vec, mass_multiplier);
    out.value = gamma * gamma * sandwich;
    out.ingredients = {{"gamma^2*mass_multiplier_sandwich(u)", out.value}};
  } else if (example_id == "R2") {
    const std::vector<double> xiu = weighted(fxi);
    const double t1 = gamma * gamma * multiplier_sandwich(space, xiu, mass_multiplier);
    const double t2 = gamma * gamma * norm2_of(fx) * c2;
    out.value = t1 + t2;
    out.ingredients = {{"gamma^2*mass_multiplier_sandwich(xi_h*u)", t1},
                       {"norm2(gamma_x*u)*sqrt_omega_h_norm2", t2}};
  } else if (example_id == "R3") {
    const double t1 =
        gamma * gamma * multiplier_sandwich(space, gs.vec, mass_multiplier);
    const double t2 = gamma * gamma * norm2_of(fx) * c2;
    std::vector<double> gxu = weighted(fx);
    for (double& v : gxu) v *= gamma;
    const double pi = 2.0 * pi_expectation(space, gxu, pi_coeff);
    out.value = t1 + t2 + pi;
    out.ingredients = {{"gamma^2*mass_multiplier_sandwich(u)", t1},
                       {"norm2(gamma_x*u)*sqrt_omega_h_norm2", t2},
                       {"2*pi_expectation(gamma_x*u)", pi}};
  } else if (example_id == "R4") {
    // Conjugating the lattice kinetic operator by the plane wave e^{i gamma x}
    // shifts its symbol argument exactly, so the shifted-minus-unshifted
    // multiplier below is the lattice operator the closed form calls for.
    auto shifted = [m, gamma, dx](double kappa) {
      auto psi = [&](double k) {
        const double s = 2.0 * (1.0 - std::cos(k * dx)) / (dx * dx);
        return std::sqrt(s + m * m);
      };
      return psi(kappa - gamma) - psi(kappa);
    };
    const double t1 = 2.0 * multiplier_sandwich(space, gs.vec, shifted);
    const double pi = 2.0 * pi_expectation(space, gs.vec, pi_coeff);
    out.value = t1 + pi + c2;
    out.ingredients = {{"2*shifted_kinetic_sandwich(u)", t1},
                       {"2*pi_expectation(u)", pi},
                       {"sqrt_omega_h_norm2", c2}};
  } else {
    throw std::invalid_argument("analytic_sigma2: unknown example_id " + example_id);
  }
  return out;
}

// --- effective-mass identity ------------------------------------------------------------

/// Residual of the identity gamma^2 = 2 <gamma u', (H - E)^{-1} gamma u'>,
/// solved on the orthogonal complement of the ground vector (where H - E is
/// positive definite). u' is the central-difference particle derivative of the
/// ground vector; on the uniform grid the discrete commutator [H, x] equals
/// exactly minus that central difference, so the identity holds up to a
/// dx^2-sized quadrature defect and the eigenpair residual.
struct EffectiveMassResult {
  double residual = 0.0;       ///< gamma^2 - 2 <b, (H-E)^{-1} b>
  double relative = 0.0;       ///< residual / gamma^2 (0 when gamma = 0)
  std::size_t cg_iterations = 0;
};

inline EffectiveMassResult effective_mass_identity(const NelsonOperator& op,
                                                   const GroundState& gs, double gamma) {
  EffectiveMassResult out;
  if (gamma == 0.0) return out;
  const std::size_t n = op.H.n;
  const std::size_t nf = op.space.grid.n_op == 0 ? 1 : op.space.grid.field_dim();
  const double dx = op.space.grid.particle.spacing();
  std::vector<double> b(n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    const std::size_t ix = a / nf;
    const double up = (ix + 1 < op.space.grid.particle.n) ? gs.vec[a + nf] : 0.0;
    const double dn = (ix > 0) ? gs.vec[a - nf] : 0.0;
    b[a] = gamma * (up - dn) / (2.0 * dx);
  }
  project_out(gs.vec, b);
  std::vector<double> neg_e(n, -gs.energy);
  const SparseMatrix shifted = add_diagonal(op.H, neg_e);
  CgResult cg = cg_solve(shifted, b, 1e-10, 20000, gs.vec);
  if (!cg.converged)
    throw std::runtime_error("effective_mass_identity: projected CG did not converge");
  out.cg_iterations = cg.iterations;
  out.residual = gamma * gamma - 2.0 * dot(b, cg.x);
  out.relative = out.residual / (gamma * gamma);
  return out;
}

}  // namespace nelson
