#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "btal/bt_core.hpp"
#include "btal/selection.hpp"

namespace btal {

/// One pair's share of the Fisher information: weight * diff * diff^T.
struct PairContribution {
  Vector diff;
  double variance_weight = 0.0;
};

struct FisherInfo {
  Matrix matrix;
  std::size_t n_pairs = 0;

  std::size_t dim() const { return static_cast<std::size_t>(matrix.rows()); }
};

enum class DesignMode { kDopt, kPastAware };

struct DesignConfig {
  /// Prior variance of the head weights; the ridge term is I / prior_variance.
  /// Infinity drops the ridge.
  double prior_variance = 1.0;
  /// Cholesky jitter, relative to trace / D; only used when the plain
  /// factorisation fails.
  double relative_jitter = 1e-8;
  DesignMode mode = DesignMode::kDopt;
  /// Opt-in: draw the batch with probability proportional to the gradient
  /// instead of taking the top c.
  bool sample_by_gradient = false;
  std::uint64_t sample_seed = 0;

  void validate() const;
};

/// Plug-in contribution: last-layer feature difference and p_hat (1 - p_hat).
PairContribution pair_contribution(const RewardModel& model, const ComparisonPair& pair);
std::vector<PairContribution> pair_contributions(const RewardModel& model, std::span<const ComparisonPair> pairs);

/// sum_i w_i d_i d_i^T + I / prior_variance (+ past.matrix).
FisherInfo assemble_fi(std::span<const PairContribution> contribs, const FisherInfo* past, double prior_variance,
                       std::size_t dim = 0);

/// Cholesky factor of a symmetric PSD matrix; retries with growing diagonal
/// jitter (starting at relative_jitter * trace / D) when the plain factorisation
/// fails.
class JitteredCholesky {
 public:
  JitteredCholesky(const Matrix& m, double relative_jitter = 1e-8);

  double log_det() const;
  double jitter() const { return jitter_; }
  const Eigen::LLT<Matrix>& llt() const { return llt_; }

  /// Columnwise squared norm of L^{-1} x, i.e. x^T M^{-1} x per column.
  Vector quadratic_forms(const Matrix& columns) const;

 private:
  Eigen::LLT<Matrix> llt_;
  double jitter_ = 0.0;
};

double log_det_score(const FisherInfo& fi, double relative_jitter = 1e-8);

/// d/dw_i log det(M(w)) at w = 1, i.e. w_i d_i^T M^{-1} d_i, where `base` is
/// M(1): all pool contributions plus ridge and past terms.
Vector score_gradient(std::span<const PairContribution> pool, const FisherInfo& base,
                      double relative_jitter = 1e-8);

/// Matrix form: columns of `diffs` are feature differences, `weights` the
/// variance weights.
Vector score_gradient(const Matrix& diffs, const Vector& weights, const Matrix& base,
                      double relative_jitter = 1e-8);

/// Gradient-ranked selection on last-layer features (D-opt, or PA D-opt when
/// config.mode is kPastAware and past data is given).
SelectionResult select_dopt(const RewardModel& model, std::span<const ComparisonPair> pool, std::size_t c,
                            const DesignConfig& config, const LabeledDataset* past_data = nullptr,
                            const PairFeatures* features = nullptr);

/// Same machinery on an explicit design: columns of `diffs` with `weights`.
/// `past` may be empty (0x0).
SelectionResult select_by_gradient(const Matrix& diffs, const Vector& weights, std::span<const PairId> ids,
                                   std::size_t c, const DesignConfig& config, const Matrix& past,
                                   std::string strategy);

/// Exact forward greedy: repeatedly add the pair that most increases
/// log det(ridge + past + selected).
SelectionResult select_greedy_logdet(const Matrix& diffs, const Vector& weights, std::span<const PairId> ids,
                                     std::size_t c, const DesignConfig& config, const Matrix& past,
                                     std::string strategy);

SelectionResult select_dopt_greedy(const RewardModel& model, std::span<const ComparisonPair> pool, std::size_t c,
                                   const DesignConfig& config, const LabeledDataset* past_data = nullptr);

/// Past Fisher information from labeled pairs using the current plug-in
/// probabilities (no ridge).
Matrix past_information(const RewardModel& model, const LabeledDataset& past);

}  // namespace btal
