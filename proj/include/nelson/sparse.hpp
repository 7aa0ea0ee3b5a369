#pragma once
/// \file
/// Sparse symmetric linear algebra sized for desk-scale operator grids
/// (dimensions up to ~10^5, a few dozen nonzeros per row): CSR storage with a
/// triplet builder, conjugate gradients with optional deflation against a
/// known vector, shifted inverse iteration for the lowest eigenpair, a Lanczos
/// matrix-exponential action, and a dense cyclic-Jacobi eigensolver for small
/// cross-checks. Deterministic throughout: fixed inputs give bitwise-fixed
/// outputs (no randomized pivoting or starting vectors).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace nelson {

/// Compressed sparse rows; column indices sorted within each row. Symmetric
/// matrices store both triangles so row scans see every neighbor (the jump
/// chain reads rates straight off a row).
struct SparseMatrix {
  std::size_t n = 0;
  std::vector<std::uint64_t> row_ptr;  // size n+1
  std::vector<std::uint32_t> col;
  std::vector<double> val;

  std::size_t nnz() const { return val.size(); }

  void multiply(std::span<const double> x, std::span<double> y) const {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::uint64_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p)
        acc += val[p] * x[col[p]];
      y[i] = acc;
    }
  }
  std::vector<double> multiply(std::span<const double> x) const {
    std::vector<double> y(n);
    multiply(x, y);
    return y;
  }

  /// <x, A x>.
  double quad_form(std::span<const double> x) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::uint64_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p)
        row += val[p] * x[col[p]];
      acc += x[i] * row;
    }
    return acc;
  }

  /// Entry lookup by binary search within the row; 0 if absent.
  double entry(std::size_t i, std::size_t j) const {
    const auto* first = col.data() + row_ptr[i];
    const auto* last = col.data() + row_ptr[i + 1];
    const auto* it = std::lower_bound(first, last, static_cast<std::uint32_t>(j));
    if (it == last || *it != j) return 0.0;
    return val[row_ptr[i] + static_cast<std::size_t>(it - first)];
  }

  /// max_{ij} |A_ij - A_ji|, the symmetry defect after assembly.
  double symmetry_defect() const {
    double defect = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::uint64_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p)
        defect = std::max(defect, std::abs(val[p] - entry(col[p], i)));
    return defect;
  }

  /// max_i |sum_j A_ij| (generator rows must sum to zero).
  double max_row_sum() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::uint64_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p) s += val[p];
      worst = std::max(worst, std::abs(s));
    }
    return worst;
  }

  std::vector<double> diagonal() const {
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = entry(i, i);
    return d;
  }
};

/// Accumulating triplet builder: duplicate (i, j) contributions sum, exact
/// zeros are kept only on the diagonal (so every row has a diagonal slot).
class TripletBuilder {
 public:
  explicit TripletBuilder(std::size_t n) : n_(n) {}

  void add(std::size_t i, std::size_t j, double v) {
    if (i >= n_ || j >= n_) throw std::out_of_range("TripletBuilder::add");
    entries_.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), v});
  }

  /// Adds v at (i, j) and (j, i); halves are not taken, call with the full value
  /// once per unordered pair.
  void add_sym(std::size_t i, std::size_t j, double v) {
    add(i, j, v);
    if (i != j) add(j, i, v);
  }

  SparseMatrix build() {
    std::sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) {
      return a.i != b.i ? a.i < b.i : a.j < b.j;
    });
    SparseMatrix m;
    m.n = n_;
    m.row_ptr.assign(n_ + 1, 0);
    for (std::size_t k = 0; k < entries_.size();) {
      std::size_t k2 = k;
      double acc = 0.0;
      while (k2 < entries_.size() && entries_[k2].i == entries_[k].i &&
             entries_[k2].j == entries_[k].j)
        acc += entries_[k2++].v;
      if (acc != 0.0 || entries_[k].i == entries_[k].j) {
        m.col.push_back(entries_[k].j);
        m.val.push_back(acc);
        ++m.row_ptr[entries_[k].i + 1];
      }
      k = k2;
    }
    for (std::size_t i = 0; i < n_; ++i) m.row_ptr[i + 1] += m.row_ptr[i];
    return m;
  }

 private:
  struct Entry {
    std::uint32_t i, j;
    double v;
  };
  std::size_t n_;
  std::vector<Entry> entries_;
};

// --- dense vector helpers -------------------------------------------------

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}
inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}
inline void scale(double alpha, std::span<double> x) {
  for (auto& v : x) v *= alpha;
}
/// Removes the component of x along the unit vector u.
inline void project_out(std::span<const double> u, std::span<double> x) {
  const double c = dot(u, x);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] -= c * u[i];
}

// --- Kronecker-sum assembly ------------------------------------------------

/// A (+) B = A x I + I x B on the product index a = i_A * n_B + i_B. This is
/// how particle and field factors combine: off-diagonal entries never mix the
/// two factors, which is what keeps jump rates well-defined later.
inline SparseMatrix kron_sum(const SparseMatrix& A, const SparseMatrix& B) {
  const std::size_t n = A.n * B.n;
  TripletBuilder tb(n);
  for (std::size_t ia = 0; ia < A.n; ++ia)
    for (std::uint64_t p = A.row_ptr[ia]; p < A.row_ptr[ia + 1]; ++p)
      for (std::size_t ib = 0; ib < B.n; ++ib)
        tb.add(ia * B.n + ib, static_cast<std::size_t>(A.col[p]) * B.n + ib, A.val[p]);
  for (std::size_t ia = 0; ia < A.n; ++ia)
    for (std::size_t ib = 0; ib < B.n; ++ib)
      for (std::uint64_t p = B.row_ptr[ib]; p < B.row_ptr[ib + 1]; ++p)
        tb.add(ia * B.n + ib, ia * B.n + B.col[p], B.val[p]);
  return tb.build();
}

/// Identity-sized diagonal update: A + diag(d).
inline SparseMatrix add_diagonal(const SparseMatrix& A, std::span<const double> d) {
  if (d.size() != A.n) throw std::invalid_argument("add_diagonal: size mismatch");
  TripletBuilder tb(A.n);
  for (std::size_t i = 0; i < A.n; ++i) {
    for (std::uint64_t p = A.row_ptr[i]; p < A.row_ptr[i + 1]; ++p)
      tb.add(i, A.col[p], A.val[p]);
    tb.add(i, i, d[i]);
  }
  return tb.build();
}

// --- conjugate gradients ----------------------------------------------------

struct CgResult {
  std::vector<double> x;
  std::size_t iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

/// CG for symmetric positive (semi-)definite systems. When `deflate` is given
/// (a unit vector spanning the kernel or a known eigendirection), right-hand
/// side and iterates are kept orthogonal to it, solving on the complement.
inline CgResult cg_solve(const SparseMatrix& A, std::span<const double> b,
                         double tol = 1e-10, std::size_t max_iter = 10000,
                         std::span<const double> deflate = {}) {
  CgResult res;
  res.x.assign(A.n, 0.0);
  std::vector<double> r(b.begin(), b.end());
  if (!deflate.empty()) project_out(deflate, r);
  std::vector<double> p = r, ap(A.n);
  double rr = dot(r, r);
  const double stop = tol * std::max(norm2(b), 1e-300);
  res.residual = std::sqrt(rr);
  while (res.residual > stop && res.iterations < max_iter) {
    A.multiply(p, ap);
    if (!deflate.empty()) project_out(deflate, ap);
    const double alpha = rr / dot(p, ap);
    axpy(alpha, p, res.x);
    axpy(-alpha, ap, r);
    if (!deflate.empty() && res.iterations % 32 == 31) project_out(deflate, r);
    const double rr_new = dot(r, r);
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < A.n; ++i) p[i] = r[i] + beta * p[i];
    res.residual = std::sqrt(rr);
    ++res.iterations;
  }
  res.converged = res.residual <= stop;
  return res;
}

// --- lowest eigenpair --------------------------------------------------------

struct EigenPair {
  double value = 0.0;
  std::vector<double> vector;  ///< unit l2 norm
  double residual = 0.0;       ///< ||A v - value v||
  std::size_t iterations = 0;
  bool converged = false;
};

/// Gershgorin lower bound min_i (a_ii - sum_{j != i} |a_ij|).
inline double gershgorin_lower(const SparseMatrix& A) {
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < A.n; ++i) {
    double diag = 0.0, off = 0.0;
    for (std::uint64_t p = A.row_ptr[i]; p < A.row_ptr[i + 1]; ++p) {
      if (A.col[p] == i)
        diag = A.val[p];
      else
        off += std::abs(A.val[p]);
    }
    lo = std::min(lo, diag - off);
  }
  return lo;
}

/// Shifted inverse iteration for the smallest eigenpair of a symmetric A:
/// repeatedly solve (A - sigma I) w = v by CG with sigma strictly below the
/// spectrum (Gershgorin bound minus a margin), so the inner system is SPD.
/// Optional deflation computes the smallest eigenpair orthogonal to a known
/// unit vector (used for spectral-gap estimates). The start vector is a
/// deterministic jittered-ones fill: a mirror-symmetric start (plain ones)
/// has exactly zero overlap with odd-parity eigenvectors on a symmetric
/// grid, so deflated runs would silently converge to the wrong branch.
inline EigenPair smallest_eigenpair(const SparseMatrix& A, double tol = 1e-10,
                                    std::size_t max_iter = 200,
                                    std::span<const double> deflate = {}) {
  if (A.n == 0) throw std::invalid_argument("smallest_eigenpair: empty matrix");
  const double sigma = gershgorin_lower(A) - 0.5;
  std::vector<double> neg_sigma(A.n, -sigma);
  const SparseMatrix B = add_diagonal(A, neg_sigma);  // SPD

  EigenPair ep;
  ep.vector.resize(A.n);
  {
    std::uint64_t s = 0x9e3779b97f4a7c15ull;  // fixed-seed splitmix64 fill
    for (std::size_t i = 0; i < A.n; ++i) {
      s += 0x9e3779b97f4a7c15ull;
      std::uint64_t z = s;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      z ^= z >> 31;
      ep.vector[i] = 1.0 + 0.25 * (static_cast<double>(z >> 11) * 0x1.0p-53 - 0.5);
    }
    const double nv = norm2(ep.vector);
    scale(1.0 / nv, ep.vector);
  }
  if (!deflate.empty()) {
    project_out(deflate, ep.vector);
    const double nv = norm2(ep.vector);
    if (nv < 1e-12) throw std::runtime_error("smallest_eigenpair: degenerate start");
    scale(1.0 / nv, ep.vector);
  }
  std::vector<double> av(A.n);
  for (ep.iterations = 0; ep.iterations < max_iter; ++ep.iterations) {
    CgResult cg = cg_solve(B, ep.vector, 1e-12, 20000, deflate);
    const double nw = norm2(cg.x);
    if (nw == 0.0) throw std::runtime_error("smallest_eigenpair: CG returned zero");
    scale(1.0 / nw, cg.x);
    ep.vector = std::move(cg.x);
    if (!deflate.empty()) project_out(deflate, ep.vector);
    A.multiply(ep.vector, av);
    ep.value = dot(ep.vector, av);
    axpy(-ep.value, ep.vector, av);
    ep.residual = norm2(av);
    if (ep.residual <= tol) {
      ep.converged = true;
      break;
    }
  }
  return ep;
}

// --- dense Jacobi eigensolver (small matrices) -------------------------------

struct DenseEigen {
  std::vector<double> values;   ///< ascending
  std::vector<double> vectors;  ///< column-major, vectors[k*n + i] = v_k[i]
};

/// Cyclic Jacobi diagonalization for small symmetric matrices (n up to a few
/// hundred): used on Lanczos tridiagonals and by small closed-form
/// cross-checks. a is row-major n x n, destroyed in place.
inline DenseEigen jacobi_eigensolve(std::vector<double> a, std::size_t n,
                                    std::size_t max_sweeps = 64) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
    if (off < 1e-26 * static_cast<double>(n * n)) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
  }
  // Sort ascending by eigenvalue, permuting columns.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return a[i * n + i] < a[j * n + j]; });
  DenseEigen de;
  de.values.resize(n);
  de.vectors.resize(n * n);
  for (std::size_t k = 0; k < n; ++k) {
    de.values[k] = a[order[k] * n + order[k]];
    for (std::size_t i = 0; i < n; ++i) de.vectors[k * n + i] = v[i * n + order[k]];
  }
  return de;
}

// --- Lanczos matrix exponential ----------------------------------------------

/// y = e^{-t (A - shift I)} v for symmetric A, by the Lanczos method with full
/// reorthogonalization. The Krylov dimension grows until the standard
/// a-posteriori estimate (the next off-diagonal times the last component of
/// the tridiagonal exponential) drops below tol, or m_max is reached. The
/// shift is applied to the tridiagonal eigenvalues, not the matrix, so no
/// copy is made; pass the bottom eigenvalue to keep e^{-t(A - E)} at unit
/// scale for large t instead of underflowing.
inline std::vector<double> expm_multiply(const SparseMatrix& A, double t,
                                         std::span<const double> v,
                                         std::size_t m_max = 140, double tol = 1e-12,
                                         double shift = 0.0) {
  const double beta0 = norm2(v);
  if (beta0 == 0.0) return std::vector<double>(A.n, 0.0);
  std::vector<std::vector<double>> V;
  V.emplace_back(v.begin(), v.end());
  scale(1.0 / beta0, V[0]);
  std::vector<double> alpha, beta, w(A.n);
  std::vector<double> y_small;

  for (std::size_t j = 0; j < m_max; ++j) {
    A.multiply(V[j], w);
    if (j > 0) axpy(-beta[j - 1], V[j - 1], w);
    alpha.push_back(dot(V[j], w));
    axpy(-alpha[j], V[j], w);
    for (const auto& vi : V) project_out(vi, w);  // full reorthogonalization
    const double b = norm2(w);

    // Exponential of the current tridiagonal, first column.
    const std::size_t m = alpha.size();
    std::vector<double> T(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      T[i * m + i] = alpha[i];
      if (i + 1 < m) T[i * m + i + 1] = T[(i + 1) * m + i] = beta[i];
    }
    const DenseEigen de = jacobi_eigensolve(std::move(T), m);
    y_small.assign(m, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
      const double coeff = std::exp(-t * (de.values[k] - shift)) * de.vectors[k * m + 0];
      for (std::size_t i = 0; i < m; ++i) y_small[i] += coeff * de.vectors[k * m + i];
    }
    // Error estimate relative to the current result size: an absolute test
    // would stop at m = 1 for large t with a spectral shift, where the
    // one-dimensional Rayleigh quotient sits above the true bottom eigenvalue
    // and e^{-t(rayleigh - shift)} is spuriously tiny while the true answer
    // is O(1).
    const double err = b * std::abs(y_small[m - 1]);
    if (err <= tol * std::max(norm2(y_small), 1e-300) || b < 1e-14 || j + 1 == m_max)
      break;
    beta.push_back(b);
    std::vector<double> next = w;
    scale(1.0 / b, next);
    V.push_back(std::move(next));
  }

  std::vector<double> y(A.n, 0.0);
  for (std::size_t i = 0; i < V.size(); ++i) axpy(beta0 * y_small[i], V[i], y);
  return y;
}

}  // namespace nelson
