// Seeded random helpers. Sampling is written out explicitly (no
// std::*_distribution) so a fixed seed yields the same stream on every
// standard library implementation.
#pragma once

#include "relstate/core.hpp"

#include <cstdint>
#include <random>

namespace relstate {

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Inclusive bounds. Modulo bias is below 2^-32 for the ranges used here
  // and keeping the mapping trivial keeps it portable.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(gen_() % static_cast<uint64_t>(hi - lo + 1));
  }

  // Standard normal via Box-Muller, one value per call.
  double normal() {
    double u1 = uniform01();
    if (u1 < 1e-300) u1 = 1e-300;
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double sigma) { return sigma * normal(); }

  Vec gaussian_vector(int d, double sigma) {
    Vec v(d);
    for (int k = 0; k < d; ++k) v[k] = normal(sigma);
    return v;
  }

  // Uniform direction on the unit sphere.
  Vec on_sphere(int d) {
    while (true) {
      Vec v = gaussian_vector(d, 1.0);
      const double n = v.norm();
      if (n > 1e-12) return v / n;
    }
  }

  // Uniform over the solid ball of the given radius.
  Vec in_ball(int d, double radius) {
    if (radius <= 0.0) return Vec::Zero(d);
    const double r = radius * std::pow(uniform01(), 1.0 / d);
    return r * on_sphere(d);
  }

  // Uniform random rotation; quaternion-based for d=3, angle for d=2.
  Mat random_rotation(int d) {
    if (d == 2) return rotation2(uniform(0.0, 6.283185307179586));
    Vec q = gaussian_vector(4, 1.0);
    q /= q.norm();
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat R(3, 3);
    R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return R;
  }

  // First k entries of a seeded Fisher-Yates shuffle of {0, ..., n-1}.
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    const int take = std::min(k, n);
    for (int i = 0; i < take; ++i) {
      std::swap(pool[i], pool[uniform_int(i, n - 1)]);
    }
    pool.resize(take);
    return pool;
  }

  std::vector<int> permutation(int n) { return sample_without_replacement(n, n); }

  // Derives an independent stream for a named purpose.
  Rng fork(uint64_t stream) {
    uint64_t x = gen_() ^ (0x9e3779b97f4a7c15ull * (stream + 1));
    x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27; x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return Rng(x);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace relstate
