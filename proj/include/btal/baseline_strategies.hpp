#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "btal/bt_core.hpp"
#include "btal/fisher_design.hpp"
#include "btal/rng.hpp"
#include "btal/selection.hpp"

namespace btal {

enum class StrategyKind { kRandom, kEntropy, kMaxdiff, kXtx, kCoreset, kBatchBald, kDopt, kPaDopt };

std::string to_string(StrategyKind kind);
/// Accepts the lowercase names used in configs and URLs ("pa_dopt", ...).
/// Throws kConfig on anything else.
StrategyKind strategy_from_string(std::string_view name);
const std::vector<StrategyKind>& all_strategies();
bool uses_model(StrategyKind kind);

/// Bernoulli entropy in nats with 0 log 0 = 0.
double bernoulli_entropy(double p);
/// Same quantity from the logit, stable for large |z|.
double bernoulli_entropy_logit(double z);

Vector score_entropy(const RewardModel& model, std::span<const ComparisonPair> pool);
Vector score_maxdiff(const RewardModel& model, std::span<const ComparisonPair> pool);

// Model-based selectors accept optional precomputed pair_features(model, pool)
// (same order as `pool`) so callers with cached item features skip the
// forward passes.

SelectionResult select_entropy(const RewardModel& model, std::span<const ComparisonPair> pool, std::size_t c,
                               const PairFeatures* features = nullptr);
SelectionResult select_maxdiff(const RewardModel& model, std::span<const ComparisonPair> pool, std::size_t c,
                               const PairFeatures* features = nullptr);

/// det(X^T X) design: the D-opt machinery with every variance weight set to 1.
SelectionResult score_xtx_select(const RewardModel& model, std::span<const ComparisonPair> pool, std::size_t c,
                                 const DesignConfig& config = {}, const PairFeatures* features = nullptr);

struct CoresetConfig {
  std::size_t clusters = 6;
  /// Radius of the parameter ball in the sensitivity bound; 0 picks
  /// 1 / median ||d|| over the data.
  double radius = 0.0;
  std::size_t kmeans_iterations = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-point sensitivity upper bound for logistic regression on the columns of
/// `points`:
///   m_n = N / (1 + sum_G e^{-R |c_G - z_n|} * sum_{j in G, j != n} e^{-R |z_j - c_G|})
/// with k-means clusters G and centres c_G over all N columns. By the triangle
/// inequality this dominates the pairwise bound N / (1 + sum_{j != n} e^{-R |z_j - z_n|}).
/// Only the first `n_scored` columns are scored; the rest (past data) only enter
/// the denominators.
Vector coreset_sensitivity(const Matrix& points, std::size_t n_scored, const CoresetConfig& config);

/// Resolved radius for the given points under `config`.
double coreset_radius(const Matrix& points, const CoresetConfig& config);

/// Pool points are the last-layer differences d_i (orientation as given); past
/// points are signed by their outcome, z = (2y - 1) d.
SelectionResult score_coreset(const RewardModel& model, std::span<const ComparisonPair> pool,
                              const LabeledDataset* past_data, std::size_t c, const CoresetConfig& config = {},
                              const PairFeatures* features = nullptr);

/// Gaussian posterior over the head weights with the last-layer features held
/// fixed.
struct LaplacePosterior {
  Vector mean;
  Matrix precision;
  /// Lower Cholesky factor L of the precision (L L^T = precision).
  Matrix precision_factor;
  std::size_t sample_count = 100;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
  Matrix covariance() const;
  /// Columns are draws mean + L^{-T} z with z ~ N(0, I).
  Matrix sample(std::uint64_t seed) const;
};

LaplacePosterior fit_laplace(const LabeledDataset* past_data, const RewardModel& model, double prior_variance,
                             std::size_t sample_count = 100, double relative_jitter = 1e-8);

struct BatchBaldConfig {
  std::size_t samples = 100;
  /// Joint label configurations are enumerated exactly while 2^n stays at or
  /// below this; beyond it the same number of configurations is sampled.
  std::size_t max_configs = 512;
  /// Greedy batch search runs over the top-L candidates by single-point BALD
  /// (L = max(prefilter, c)). 0 disables the prefilter.
  std::size_t prefilter = 1024;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Candidate probabilities p_kj = sigmoid(beta_k^T d_j), samples along rows.
Matrix predictive_probabilities(const Matrix& head_samples, const Matrix& diffs);

/// Single-point BALD from per-sample probabilities (rows k, columns j).
Vector bald_scores(const Matrix& probs);

/// MC mutual information I(y_S; beta) for a fixed set S, by exact enumeration
/// of all 2^|S| configurations. Test oracle and audit helper; exponential.
double batch_mutual_information_exact(const Matrix& probs, std::span<const std::size_t> subset);

/// Greedy batchBALD on precomputed probabilities. Scores: batch mutual
/// information after each pick for the selected pairs, single-point BALD for
/// the rest.
SelectionResult select_batchbald_probs(const Matrix& probs, std::span<const PairId> ids, std::size_t c,
                                       const BatchBaldConfig& config);

SelectionResult select_batchbald(const LaplacePosterior& posterior, const RewardModel& model,
                                 std::span<const ComparisonPair> pool, std::size_t c, const BatchBaldConfig& config,
                                 const PairFeatures* features = nullptr);

SelectionResult select_random(std::span<const ComparisonPair> pool, std::size_t c, std::uint64_t seed);
SelectionResult select_random_ids(std::span<const PairId> ids, std::size_t c, std::uint64_t seed);

/// Everything a strategy may consult. `model` is the previous round's model
/// and may be null only for kRandom.
struct StrategyContext {
  const RewardModel* model = nullptr;
  const LabeledDataset* past = nullptr;
  DesignConfig design;
  CoresetConfig coreset;
  BatchBaldConfig batchbald;
  std::uint64_t seed = 0;
  /// Optional pair_features(*model, pool) for the pool being selected from.
  const PairFeatures* pool_features = nullptr;
};

SelectionResult select_pairs(StrategyKind kind, std::span<const ComparisonPair> pool, std::size_t c,
                             const StrategyContext& ctx);

}  // namespace btal
