#pragma once
/// \file
/// Deterministic randomness. One engine wrapper supplies every scalar law the
/// samplers need (uniform, normal, exponential, inverse-Gaussian, one-sided
/// stable-1/2). All stochastic routines take an explicit Rng&; nothing reads
/// global or time-dependent state, so a fixed master seed reproduces every
/// number of a run bit for bit. Replica streams are derived from
/// (master seed, stream id) so the stream assigned to replica i never depends
/// on scheduling or on how many replicas run.

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace nelson {

/// SplitMix64 step (Steele--Lea--Flood): a full-period 64-bit mixer used to
/// expand seeds. Good dispersion even for adjacent inputs.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// FNV-1a 64-bit hash; platform-independent, used for stream ids and for
/// fingerprinting output bytes in run manifests.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Engine seed for a named stream: hash the id into the master seed, then mix.
/// Two rounds of SplitMix64 keep master=0 and short ids well dispersed.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream_id) {
  std::uint64_t s = master ^ fnv1a64(stream_id);
  splitmix64_next(s);
  return splitmix64_next(s);
}

/// Random stream: mt19937_64 plus the exact scalar samplers used throughout.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  Rng(std::uint64_t master, std::string_view stream_id)
      : eng_(derive_seed(master, stream_id)) {}

  std::uint64_t raw() { return eng_(); }

  /// U(0,1), strictly inside the open interval (safe under log/quantile maps).
  double uniform() {
    // 53-bit draw; the |1 keeps it nonzero, and (2^53-1)/2^53 < 1.
    return static_cast<double>((eng_() >> 11) | 1ull) * 0x1.0p-53;
  }

  /// N(0,1) by Marsaglia's polar method: exact law, no tail truncation.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double r = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * r;
    have_spare_ = true;
    return u * r;
  }

  /// Exponential holding time with the given rate.
  double exponential(double rate) { return -std::log(uniform()) / rate; }

  /// Inverse-Gaussian IG(mu, lambda) by the Michael--Schucany--Haas transform:
  /// mean mu, variance mu^3/lambda, Laplace transform
  /// exp((lambda/mu)(1 - sqrt(1 + 2 mu^2 u / lambda))).
  double inverse_gaussian(double mu, double lambda) {
    const double y = [this] { const double n = normal(); return n * n; }();
    double x = mu + mu * mu * y / (2.0 * lambda)
             - mu / (2.0 * lambda) * std::sqrt(4.0 * mu * lambda * y + mu * mu * y * y);
    // The subtraction cancels for large y where x ~ lambda/y; guard the rare
    // roundoff underflow through the asymptotic branch.
    if (x <= 0.0) x = lambda / y;
    return uniform() <= mu / (mu + x) ? x : mu * mu / x;
  }

  /// One-sided stable-1/2 (Levy) law with scale c: density
  /// sqrt(c/(2 pi)) x^{-3/2} e^{-c/(2x)}, Laplace transform e^{-sqrt(2 c u)}.
  /// Exact sampler: c/Z^2 with Z standard normal.
  double levy(double c) {
    double z;
    do {
      z = normal();
    } while (z == 0.0);
    return c / (z * z);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace nelson
