#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "gwhf/errors.hpp"
#include "gwhf/util.hpp"

namespace gwhf {

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Stream seed for ensemble member k.  Mixing both inputs through
/// splitmix64 keeps nearby master seeds and nearby indices uncorrelated.
inline uint64_t derive_stream(uint64_t master_seed, uint64_t k) {
  return detail::splitmix64(detail::splitmix64(master_seed) ^ (k + 0x9E3779B97F4A7C15ull));
}

/// Standard normals from mt19937_64 via Box-Muller on explicitly
/// constructed uniforms in (0, 1].  std::normal_distribution is
/// implementation-defined; this sequence is pinned by the engine alone.
class NormalSampler {
 public:
  explicit NormalSampler(uint64_t seed) : eng_(seed) {}

  double operator()() {
    if (have_) {
      have_ = false;
      return spare_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_ = true;
    return r * std::cos(a);
  }

 private:
  double uniform01() {
    // 53 random bits, shifted into (0, 1] so log() stays finite
    return (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;
  }
  std::mt19937_64 eng_;
  bool have_ = false;
  double spare_ = 0.0;
};

/// Brownian values on the uniform grid k * dt, k = 0..K, with W(0) = 0.
struct WienerPath {
  double dt = 0.0;
  std::vector<double> w;

  double t_end() const { return dt * static_cast<double>(w.size() - 1); }

  // Linear interpolation between grid values.  Times within 1e-9 grid
  // units of a sample point snap to it, so grid queries return stored
  // values exactly and increments over grid-aligned windows telescope.
  double value(double t) const {
    const double pos = t / dt;
    const long last = static_cast<long>(w.size()) - 1;
    if (pos <= 0.0) return w.front();
    const long near = std::lround(pos);
    if (std::abs(pos - static_cast<double>(near)) < 1e-9)
      return w[std::min(near, last)];
    const long k = static_cast<long>(std::floor(pos));
    if (k >= last) return w[last];
    const double frac = pos - static_cast<double>(k);
    return w[k] + frac * (w[k + 1] - w[k]);
  }
};

inline WienerPath sample_wiener(uint64_t seed, double t_end, double dt) {
  if (!(dt > 0.0) || !(t_end > 0.0)) throw InvalidInput("sample_wiener: need t_end, dt > 0");
  const double steps = t_end / dt;
  const long k = std::lround(steps);
  if (k < 1 || std::abs(steps - static_cast<double>(k)) > 1e-9)
    throw InvalidInput("sample_wiener: dt must divide t_end");
  WienerPath p;
  p.dt = dt;
  p.w.resize(k + 1);
  p.w[0] = 0.0;
  NormalSampler z(seed);
  const double s = std::sqrt(dt);
  for (long i = 1; i <= k; ++i) p.w[i] = p.w[i - 1] + s * z();
  return p;
}

/// Piecewise-linear interpolation of a Wiener path on knots spaced delta
/// apart.  delta must be a multiple of the underlying grid width so every
/// knot value is an exact sample.  The slope is the forward difference
/// quotient, right-continuous at knots; past the final knot the last
/// interval's slope is used.
struct WongZakaiPath {
  WienerPath base;
  double delta = 0.0;

  WongZakaiPath() = default;
  WongZakaiPath(WienerPath b, double d) : base(std::move(b)), delta(d) {
    if (!(delta > 0.0)) throw InvalidInput("wong-zakai width must be positive");
    const double m = delta / base.dt;
    if (std::abs(m - std::round(m)) > 1e-9)
      throw InvalidInput("wong-zakai width must be a multiple of the sample grid");
    if (delta > base.t_end() + 1e-12)
      throw InvalidInput("wong-zakai width exceeds the path horizon");
  }

  long knot_count() const { return std::lround(base.t_end() / delta); }

  double knot_value(long k) const {
    const long n = std::lround(delta / base.dt);
    const long last = static_cast<long>(base.w.size()) - 1;
    const long idx = std::min(k * n, last);
    return base.w[idx];
  }

  // Interval index for time t with the same knot snapping as
  // WienerPath::value; intervals are [k delta, (k+1) delta), so a knot
  // belongs to the interval it starts (right-continuous slope).
  long interval(double t) const {
    const double pos = t / delta;
    const long kmax = knot_count() - 1;
    const long near = std::lround(pos);
    long k = std::abs(pos - static_cast<double>(near)) < 1e-9
                 ? near
                 : static_cast<long>(std::floor(pos));
    if (k < 0) k = 0;
    if (k > kmax) k = kmax;
    return k;
  }

  double value(double t) const {
    const double pos = t / delta;
    const long near = std::lround(pos);
    if (std::abs(pos - static_cast<double>(near)) < 1e-9)
      return knot_value(std::max(near, 0L));  // exact at knots
    const long k = interval(t);
    const double t0 = static_cast<double>(k) * delta;
    const double frac = std::min(std::max((t - t0) / delta, 0.0), 1.0);
    return knot_value(k) + frac * (knot_value(k + 1) - knot_value(k));
  }

  double slope(double t) const {
    const long k = interval(t);
    return (knot_value(k + 1) - knot_value(k)) / delta;
  }
};

/// What an integrator sees: the smoothed slope for the Wong-Zakai ODE
/// scheme, true Brownian increments for the SDE schemes.  A default
/// constructed driver is silent (deterministic runs).
struct NoiseDriver {
  const WongZakaiPath* wz = nullptr;

  double slope(double t) const { return wz ? wz->slope(t) : 0.0; }

  double increment(double t, double h) const {
    return wz ? wz->base.value(t + h) - wz->base.value(t) : 0.0;
  }
};

}  // namespace gwhf
