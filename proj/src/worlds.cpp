#include "btal/worlds.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace btal {

double golden_reward_2d(double x, double y) {
  constexpr double c = BimodalWorld2D::kCenter;
  constexpr double var = BimodalWorld2D::kVariance;
  // log N(x; m, var I) in 2D = -log(2 pi var) - |x - m|^2 / (2 var)
  const double norm = -std::log(2.0 * std::numbers::pi * var);
  const double a = norm - ((x - c) * (x - c) + (y - c) * (y - c)) / (2.0 * var);
  const double b = norm - ((x + c) * (x + c) + (y + c) * (y + c)) / (2.0 * var);
  const double hi = std::max(a, b);
  return std::log(0.5) + hi + std::log1p(std::exp(std::min(a, b) - hi));
}

double golden_reward_2d(const Vector& x) {
  if (x.size() != 2) throw Error(ErrorCode::kDimensionMismatch, "2D world expects 2-dimensional points");
  return golden_reward_2d(x(0), x(1));
}

Matrix standard_normal_points(Rng& rng, std::size_t dim, std::size_t n) {
  Matrix m(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.normal();
  }
  return m;
}

Matrix BimodalWorld2D::sample_points(Rng& rng, std::size_t n) const { return standard_normal_points(rng, 2, n); }

PlantedLinearWorld PlantedLinearWorld::make(std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw Error(ErrorCode::kInvalidArgument, "planted world needs dim >= 1");
  Rng rng(seed);
  Vector beta = standard_normal_points(rng, dim, 1).col(0);
  while (beta.norm() == 0.0) beta = standard_normal_points(rng, dim, 1).col(0);
  return {beta / beta.norm()};
}

Matrix PlantedLinearWorld::sample_points(Rng& rng, std::size_t n) const {
  return standard_normal_points(rng, dim(), n);
}

Matrix grid_points_2d(std::size_t n, double lo, double hi) {
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "grid needs at least 2 points per side");
  Matrix g(2, static_cast<Eigen::Index>(n * n));
  const double step = (hi - lo) / static_cast<double>(n - 1);
  for (std::size_t iy = 0; iy < n; ++iy) {
    for (std::size_t ix = 0; ix < n; ++ix) {
      const auto k = static_cast<Eigen::Index>(iy * n + ix);
      g(0, k) = lo + step * static_cast<double>(ix);
      g(1, k) = lo + step * static_cast<double>(iy);
    }
  }
  return g;
}

}  // namespace btal
