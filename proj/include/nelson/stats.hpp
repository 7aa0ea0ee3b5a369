#pragma once
/// \file
/// Statistics layer shared by the pipelines and the test suite: running
/// moments, normal CDF/quantile, Kolmogorov-Smirnov one- and two-sample
/// tests, chi-square tail probabilities, and empirical characteristic
/// functions. Dependency-free on purpose: the numbers that decide test
/// verdicts should not hinge on an external statistics package.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nelson {

/// Welford single-pass mean/variance accumulator (numerically stable).
class RunningStat {
 public:
  void add(double x) {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }
  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  /// Unbiased sample variance.
  double variance() const {
    return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0;
  }
  double std_dev() const { return std::sqrt(variance()); }
  /// Standard error of the mean.
  double std_error() const {
    return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0;
  }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0, m2_ = 0.0;
};

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// Inverse normal CDF: Acklam's rational approximation, polished by one
/// Halley step on the CDF so the result is accurate to ~1e-14 across (0,1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p outside (0,1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // One Halley refinement against the exact CDF.
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

/// Kolmogorov distribution K(x) = P(sup|bridge| <= x). Two dual series,
/// switched near x ~ 1.18 where both converge fast.
inline double kolmogorov_cdf(double x) {
  if (x <= 0.0) return 0.0;
  if (x < 1.18) {
    // Theta-function form: sqrt(2 pi)/x * sum_{k odd} exp(-k^2 pi^2 / (8 x^2)).
    const double t = std::exp(-std::numbers::pi * std::numbers::pi / (8.0 * x * x));
    const double t2 = t * t;  // successive odd-k terms are t^{k^2}
    return std::sqrt(2.0 * std::numbers::pi) / x *
           (t * (1.0 + t2 * t2 * t2 * t2 * (1.0 + t2 * t2 * t2 * t2 * t2 * t2 * t2 * t2)));
  }
  // Alternating tail form: 1 - 2 sum (-1)^{j-1} exp(-2 j^2 x^2).
  double s = 0.0;
  for (int j = 1; j <= 5; ++j) {
    const double term = std::exp(-2.0 * j * j * x * x);
    s += (j % 2 == 1) ? term : -term;
  }
  return 1.0 - 2.0 * s;
}

/// One-sample KS p-value with Stephens' finite-n correction
/// lambda = (sqrt(n) + 0.12 + 0.11/sqrt(n)) D; also valid for two samples
/// with the effective n = n1 n2 / (n1 + n2).
inline double ks_pvalue(double d, double n_eff) {
  const double rn = std::sqrt(n_eff);
  const double lambda = (rn + 0.12 + 0.11 / rn) * d;
  return std::clamp(1.0 - kolmogorov_cdf(lambda), 0.0, 1.0);
}

struct KsResult {
  double d;  ///< KS statistic sup|F_emp - F|
  double p;  ///< asymptotic p-value (Stephens-corrected)
};

/// One-sample KS test against a CDF callable.
inline KsResult ks_test(std::vector<double> sample,
                        const std::function<double(double)>& cdf) {
  if (sample.size() < 2) throw std::invalid_argument("ks_test: need >= 2 points");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max(d, std::max(f - static_cast<double>(i) / n,
                             static_cast<double>(i + 1) / n - f));
  }
  return {d, ks_pvalue(d, n)};
}

/// Two-sample KS test (merged scan).
inline KsResult ks_test_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("ks_test_two_sample: need >= 2 points each");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const double t = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= t) ++i;
    while (j < b.size() && b[j] <= t) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return {d, ks_pvalue(d, na * nb / (na + nb))};
}

/// Regularized upper incomplete gamma Q(a, x): power series for x < a+1,
/// modified-Lentz continued fraction otherwise (both standard).
inline double gamma_q(double a, double x) {
  if (a <= 0.0 || x < 0.0) throw std::domain_error("gamma_q: need a > 0, x >= 0");
  if (x == 0.0) return 1.0;
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-15;
  if (x < a + 1.0) {
    // Series for P(a,x); Q = 1 - P.
    double ap = a, sum = 1.0 / a, del = sum;
    for (int i = 0; i < kMaxIter; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * kEps) break;
    }
    return 1.0 - sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  // Continued fraction for Q(a,x) directly.
  constexpr double kTiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / kTiny, d = 1.0 / b, h = d;
  for (int i = 1; i <= kMaxIter; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

/// Chi-square survival function P(X > x) with `dof` degrees of freedom.
inline double chi2_sf(double x, double dof) { return gamma_q(0.5 * dof, 0.5 * x); }

/// Empirical characteristic function (1/n) sum e^{i u x_k}.
inline std::complex<double> empirical_cf(std::span<const double> xs, double u) {
  std::complex<double> s{0.0, 0.0};
  for (double x : xs) s += std::complex<double>{std::cos(u * x), std::sin(u * x)};
  return s / static_cast<double>(xs.size());
}

/// z-score of an estimate against a target; infinite when se degenerates.
inline double z_score(double estimate, double target, double se) {
  if (se <= 0.0) return estimate == target ? 0.0 : std::numeric_limits<double>::infinity();
  return (estimate - target) / se;
}

/// Uniform record for distributional checks, exported as JSON
/// {statistic, z_or_p, n_samples, verdict}.
struct TestReport {
  std::string name;
  double statistic = 0.0;  ///< the measured quantity (estimate, KS D, chi2, ...)
  double z_or_p = 0.0;     ///< z-score or p-value, per the test's convention
  std::size_t n_samples = 0;
  bool pass = false;
};

}  // namespace nelson
