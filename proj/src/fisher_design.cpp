#include "btal/fisher_design.hpp"

#include <algorithm>
#include <cmath>

namespace btal {

namespace {

constexpr int kMaxJitterAttempts = 12;

Vector variance_weights(const Vector& reward_gap) {
  Vector w(reward_gap.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    // Keep the weight strictly positive even when p_hat rounds to 0 or 1.
    w(i) = std::max(bernoulli_variance(reward_gap(i)), std::numeric_limits<double>::min());
  }
  return w;
}

Matrix ridge(std::size_t dim, double prior_variance) {
  const auto d = static_cast<Eigen::Index>(dim);
  if (std::isinf(prior_variance)) return Matrix::Zero(d, d);
  return Matrix::Identity(d, d) / prior_variance;
}

Matrix weighted_gram(const Matrix& diffs, const Vector& weights) {
  return diffs * weights.asDiagonal() * diffs.transpose();
}

std::vector<PairId> pair_ids(std::span<const ComparisonPair> pool) { return pool_pair_ids(pool); }

}  // namespace

void DesignConfig::validate() const {
  if (!(prior_variance > 0.0)) throw Error(ErrorCode::kConfig, "prior_variance must be positive");
  if (!(relative_jitter > 0.0)) throw Error(ErrorCode::kConfig, "relative_jitter must be positive");
}

PairContribution pair_contribution(const RewardModel& model, const ComparisonPair& pair) {
  const ComparisonPair one[] = {pair};
  auto c = pair_contributions(model, one);
  return std::move(c.front());
}

std::vector<PairContribution> pair_contributions(const RewardModel& model, std::span<const ComparisonPair> pairs) {
  const PairFeatures pf = pair_features(model, pairs);
  const Vector w = variance_weights(pf.reward_gap);
  std::vector<PairContribution> out;
  out.reserve(pairs.size());
  for (Eigen::Index j = 0; j < pf.diffs.cols(); ++j) out.push_back({pf.diffs.col(j), w(j)});
  return out;
}

FisherInfo assemble_fi(std::span<const PairContribution> contribs, const FisherInfo* past, double prior_variance,
                       std::size_t dim) {
  if (!(prior_variance > 0.0)) throw Error(ErrorCode::kInvalidArgument, "prior_variance must be positive");
  if (dim == 0) {
    if (!contribs.empty()) dim = static_cast<std::size_t>(contribs.front().diff.size());
    else if (past != nullptr) dim = past->dim();
    else throw Error(ErrorCode::kInvalidArgument, "cannot infer the information dimension");
  }
  FisherInfo fi{ridge(dim, prior_variance), contribs.size()};
  for (const auto& c : contribs) {
    if (static_cast<std::size_t>(c.diff.size()) != dim) {
      throw Error(ErrorCode::kDimensionMismatch, "contribution dims differ");
    }
    fi.matrix.selfadjointView<Eigen::Lower>().rankUpdate(c.diff, c.variance_weight);
  }
  fi.matrix.triangularView<Eigen::StrictlyUpper>() = fi.matrix.transpose();
  if (past != nullptr) {
    if (past->dim() != dim) throw Error(ErrorCode::kDimensionMismatch, "past information dim differs");
    fi.matrix += past->matrix;
    fi.n_pairs += past->n_pairs;
  }
  return fi;
}

JitteredCholesky::JitteredCholesky(const Matrix& m, double relative_jitter) {
  if (m.rows() != m.cols()) throw Error(ErrorCode::kDimensionMismatch, "matrix is not square");
  const auto d = m.rows();
  auto ok = [&] {
    if (llt_.info() != Eigen::Success) return false;
    const auto diag = llt_.matrixLLT().diagonal();
    return (diag.array() > 0.0).all() && diag.allFinite();
  };
  llt_.compute(m);
  if (ok()) return;
  const double scale = d > 0 ? std::max(m.trace() / static_cast<double>(d), 1e-300) : 1.0;
  double jitter = relative_jitter * scale;
  for (int attempt = 0; attempt < kMaxJitterAttempts; ++attempt, jitter *= 10.0) {
    Matrix shifted = m;
    shifted.diagonal().array() += jitter;
    llt_.compute(shifted);
    if (ok()) {
      jitter_ = jitter;
      return;
    }
  }
  throw Error(ErrorCode::kNumericalFailure, "matrix is not positive semidefinite within jitter repair");
}

double JitteredCholesky::log_det() const {
  return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

Vector JitteredCholesky::quadratic_forms(const Matrix& columns) const {
  const Matrix solved = llt_.matrixL().solve(columns);
  return solved.colwise().squaredNorm().transpose();
}

double log_det_score(const FisherInfo& fi, double relative_jitter) {
  return JitteredCholesky(fi.matrix, relative_jitter).log_det();
}

Vector score_gradient(const Matrix& diffs, const Vector& weights, const Matrix& base, double relative_jitter) {
  if (diffs.cols() != weights.size()) throw Error(ErrorCode::kDimensionMismatch, "weights and diffs differ");
  if (base.rows() != diffs.rows()) throw Error(ErrorCode::kDimensionMismatch, "base dim differs from diffs");
  const JitteredCholesky chol(base, relative_jitter);
  return weights.cwiseProduct(chol.quadratic_forms(diffs));
}

Vector score_gradient(std::span<const PairContribution> pool, const FisherInfo& base, double relative_jitter) {
  const auto d = static_cast<Eigen::Index>(base.dim());
  Matrix diffs(d, static_cast<Eigen::Index>(pool.size()));
  Vector w(static_cast<Eigen::Index>(pool.size()));
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].diff.size() != d) throw Error(ErrorCode::kDimensionMismatch, "contribution dim differs from base");
    diffs.col(static_cast<Eigen::Index>(i)) = pool[i].diff;
    w(static_cast<Eigen::Index>(i)) = pool[i].variance_weight;
  }
  return score_gradient(diffs, w, base.matrix, relative_jitter);
}

Matrix past_information(const RewardModel& model, const LabeledDataset& past) {
  const auto h = static_cast<Eigen::Index>(model.hidden_width());
  if (past.empty()) return Matrix::Zero(h, h);
  std::vector<ComparisonPair> pairs;
  pairs.reserve(past.size());
  for (const auto& e : past.entries()) pairs.push_back(e.pair);
  const PairFeatures pf = pair_features(model, pairs);
  return weighted_gram(pf.diffs, variance_weights(pf.reward_gap));
}

SelectionResult select_by_gradient(const Matrix& diffs, const Vector& weights, std::span<const PairId> ids,
                                   std::size_t c, const DesignConfig& config, const Matrix& past,
                                   std::string strategy) {
  config.validate();
  check_budget(static_cast<std::size_t>(diffs.cols()), c);
  if (ids.size() != static_cast<std::size_t>(diffs.cols())) {
    throw Error(ErrorCode::kDimensionMismatch, "ids and diffs differ in length");
  }
  Matrix base = weighted_gram(diffs, weights) + ridge(static_cast<std::size_t>(diffs.rows()), config.prior_variance);
  if (past.size() > 0) base += past;
  const Vector grad = score_gradient(diffs, weights, base, config.relative_jitter);

  SelectionResult r;
  r.strategy = std::move(strategy);
  r.pool_ids.assign(ids.begin(), ids.end());
  r.scores.assign(grad.data(), grad.data() + grad.size());
  r.selected = config.sample_by_gradient ? sample_by_weight(r.scores, r.pool_ids, c, config.sample_seed)
                                         : select_top_by_pair_id(r.scores, r.pool_ids, c);
  return r;
}

SelectionResult select_dopt(const RewardModel& model, std::span<const ComparisonPair> pool, std::size_t c,
                            const DesignConfig& config, const LabeledDataset* past_data, const PairFeatures* features) {
  check_budget(pool.size(), c);
  PairFeatures storage;
  const PairFeatures& pf = pair_features_or(features, model, pool, storage);
  const bool past_aware = config.mode == DesignMode::kPastAware;
  const Matrix past = past_aware && past_data != nullptr ? past_information(model, *past_data) : Matrix();
  return select_by_gradient(pf.diffs, variance_weights(pf.reward_gap), pair_ids(pool), c, config, past,
                            past_aware ? "pa_dopt" : "dopt");
}

SelectionResult select_greedy_logdet(const Matrix& diffs, const Vector& weights, std::span<const PairId> ids,
                                     std::size_t c, const DesignConfig& config, const Matrix& past,
                                     std::string strategy) {
  config.validate();
  const auto j = diffs.cols();
  check_budget(static_cast<std::size_t>(j), c);
  if (ids.size() != static_cast<std::size_t>(j)) throw Error(ErrorCode::kDimensionMismatch, "ids and diffs differ");

  Matrix base = ridge(static_cast<std::size_t>(diffs.rows()), config.prior_variance);
  if (past.size() > 0) base += past;
  JitteredCholesky chol(base, config.relative_jitter);
  Eigen::LLT<Matrix> llt = chol.llt();

  // gain_i = w_i d_i^T M^{-1} d_i; adding i raises log det by log(1 + gain_i).
  Vector gain = weights.cwiseProduct(chol.quadratic_forms(diffs));
  std::vector<bool> taken(static_cast<std::size_t>(j), false);
  SelectionResult r;
  r.strategy = std::move(strategy);
  r.pool_ids.assign(ids.begin(), ids.end());
  r.scores.assign(static_cast<std::size_t>(j), 0.0);

  for (std::size_t step = 0; step < c; ++step) {
    Eigen::Index best = -1;
    for (Eigen::Index i = 0; i < j; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      if (best < 0 || gain(i) > gain(best) || (gain(i) == gain(best) && ids[i] < ids[best])) best = i;
    }
    const auto b = static_cast<std::size_t>(best);
    taken[b] = true;
    r.selected.push_back(b);
    r.scores[b] = std::log1p(gain(best));

    // Sherman-Morrison on the quadratic forms, Cholesky rank-one update on M.
    const Vector u = llt.solve(diffs.col(best));
    const double denom = 1.0 + weights(best) * diffs.col(best).dot(u);
    const Vector proj = diffs.transpose() * u;
    gain -= weights.cwiseProduct(proj.cwiseAbs2()) * (weights(best) / denom);
    gain = gain.cwiseMax(0.0);
    llt.rankUpdate(diffs.col(best), weights(best));
  }
  for (Eigen::Index i = 0; i < j; ++i) {
    if (!taken[static_cast<std::size_t>(i)]) r.scores[static_cast<std::size_t>(i)] = std::log1p(gain(i));
  }
  return r;
}

SelectionResult select_dopt_greedy(const RewardModel& model, std::span<const ComparisonPair> pool, std::size_t c,
                                   const DesignConfig& config, const LabeledDataset* past_data) {
  check_budget(pool.size(), c);
  const PairFeatures pf = pair_features(model, pool);
  const bool past_aware = config.mode == DesignMode::kPastAware;
  const Matrix past = past_aware && past_data != nullptr ? past_information(model, *past_data) : Matrix();
  return select_greedy_logdet(pf.diffs, variance_weights(pf.reward_gap), pair_ids(pool), c, config, past,
                              past_aware ? "pa_dopt_greedy" : "dopt_greedy");
}

}  // namespace btal
