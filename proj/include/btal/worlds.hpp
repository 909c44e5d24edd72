#pragma once

#include <cstdint>

#include "btal/common.hpp"
#include "btal/rng.hpp"

namespace btal {

/// log(0.5 N(x; c1, 0.25 I) + 0.5 N(x; c2, 0.25 I)) with c1 = (-2.5, -2.5)
/// and c2 = (2.5, 2.5), evaluated with log-sum-exp.
double golden_reward_2d(double x, double y);
double golden_reward_2d(const Vector& x);

struct BimodalWorld2D {
  static constexpr double kCenter = 2.5;
  static constexpr double kVariance = 0.25;

  double golden(const Vector& x) const { return golden_reward_2d(x); }
  /// Standard normal candidate points as columns.
  Matrix sample_points(Rng& rng, std::size_t n) const;
};

/// Linear golden reward x^T beta with beta a seeded unit vector.
struct PlantedLinearWorld {
  Vector beta;

  static PlantedLinearWorld make(std::size_t dim, std::uint64_t seed);
  std::size_t dim() const { return static_cast<std::size_t>(beta.size()); }
  double golden(const Vector& x) const { return x.dot(beta); }
  Matrix sample_points(Rng& rng, std::size_t n) const;
};

Matrix standard_normal_points(Rng& rng, std::size_t dim, std::size_t n);

/// Regular grid over [lo, hi]^2, row-major in y then x: column k is
/// (x_{k % n}, y_{k / n}).
Matrix grid_points_2d(std::size_t n, double lo, double hi);

}  // namespace btal
