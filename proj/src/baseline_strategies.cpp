#include "btal/baseline_strategies.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace btal {

namespace {

constexpr std::array<std::pair<StrategyKind, std::string_view>, 8> kStrategyNames{{
    {StrategyKind::kRandom, "random"},
    {StrategyKind::kEntropy, "entropy"},
    {StrategyKind::kMaxdiff, "maxdiff"},
    {StrategyKind::kXtx, "xtx"},
    {StrategyKind::kCoreset, "coreset"},
    {StrategyKind::kBatchBald, "batchbald"},
    {StrategyKind::kDopt, "dopt"},
    {StrategyKind::kPaDopt, "pa_dopt"},
}};

SelectionResult make_result(std::string strategy, std::span<const PairId> ids, const Vector& scores) {
  SelectionResult r;
  r.strategy = std::move(strategy);
  r.pool_ids.assign(ids.begin(), ids.end());
  r.scores.assign(scores.data(), scores.data() + scores.size());
  return r;
}

SelectionResult top_by_score(std::string strategy, std::span<const ComparisonPair> pool, const Vector& scores,
                             std::size_t c) {
  const auto ids = pool_pair_ids(pool);
  SelectionResult r = make_result(std::move(strategy), ids, scores);
  r.selected = select_top_by_pair_id(r.scores, r.pool_ids, c);
  return r;
}

// Seeded k-means++ followed by Lloyd iterations. Returns centres as columns
// and fills `assign`. Stops seeding early when every point coincides with a
// centre already chosen.
Matrix kmeans(const Matrix& pts, std::size_t k, std::size_t iterations, std::uint64_t seed,
              std::vector<std::size_t>& assign) {
  const auto n = static_cast<std::size_t>(pts.cols());
  Rng rng(seed);
  std::vector<Eigen::Index> chosen{static_cast<Eigen::Index>(rng.below(n))};
  Vector d2 = (pts.colwise() - pts.col(chosen[0])).colwise().squaredNorm().transpose();
  while (chosen.size() < k) {
    const double total = d2.sum();
    if (!(total > 0.0)) break;
    const double u = rng.uniform() * total;
    Eigen::Index pick = -1;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < d2.size(); ++i) {
      acc += d2(i);
      if (u < acc) {
        pick = i;
        break;
      }
    }
    if (pick < 0) d2.maxCoeff(&pick);  // rounding left u at the very top
    chosen.push_back(pick);
    d2 = d2.cwiseMin((pts.colwise() - pts.col(pick)).colwise().squaredNorm().transpose());
  }
  Matrix centres(pts.rows(), static_cast<Eigen::Index>(chosen.size()));
  for (std::size_t g = 0; g < chosen.size(); ++g) centres.col(static_cast<Eigen::Index>(g)) = pts.col(chosen[g]);

  assign.assign(n, 0);
  for (std::size_t it = 0; it <= iterations; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      (centres.colwise() - pts.col(static_cast<Eigen::Index>(i))).colwise().squaredNorm().minCoeff(&best);
      if (assign[i] != static_cast<std::size_t>(best)) changed = true;
      assign[i] = static_cast<std::size_t>(best);
    }
    if (!changed || it == iterations) break;
    Matrix sums = Matrix::Zero(centres.rows(), centres.cols());
    std::vector<std::size_t> counts(static_cast<std::size_t>(centres.cols()), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.col(static_cast<Eigen::Index>(assign[i])) += pts.col(static_cast<Eigen::Index>(i));
      ++counts[assign[i]];
    }
    for (Eigen::Index g = 0; g < centres.cols(); ++g) {
      if (counts[static_cast<std::size_t>(g)] > 0) {
        centres.col(g) = sums.col(g) / static_cast<double>(counts[static_cast<std::size_t>(g)]);
      }
    }
  }
  return centres;
}

// Row-wise normaliser for the configuration weights: divides each row by its
// maximum and moves the log of that maximum into `log_scale`.
void renormalize_rows(Matrix& a, Vector& log_scale) {
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.row(r).maxCoeff();
    if (m > 0.0) {
      a.row(r) /= m;
      log_scale(r) += std::log(m);
    }
  }
}

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

}  // namespace

std::string to_string(StrategyKind kind) {
  for (const auto& [k, name] : kStrategyNames) {
    if (k == kind) return std::string(name);
  }
  return "unknown";
}

StrategyKind strategy_from_string(std::string_view name) {
  for (const auto& [k, n] : kStrategyNames) {
    if (n == name) return k;
  }
  throw Error(ErrorCode::kConfig, "unknown strategy '" + std::string(name) + "'");
}

const std::vector<StrategyKind>& all_strategies() {
  static const std::vector<StrategyKind> all = [] {
    std::vector<StrategyKind> v;
    for (const auto& [k, n] : kStrategyNames) v.push_back(k);
    return v;
  }();
  return all;
}

bool uses_model(StrategyKind kind) { return kind != StrategyKind::kRandom; }

double bernoulli_entropy(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "probability outside [0, 1]");
  return -xlogx(p) - xlogx(1.0 - p);
}

double bernoulli_entropy_logit(double z) {
  // -p log p - (1-p) log(1-p) with log p = -softplus(-z), log(1-p) = -softplus(z).
  const double p = sigmoid(z);
  return p * softplus(-z) + (1.0 - p) * softplus(z);
}

Vector score_entropy(const RewardModel& model, std::span<const ComparisonPair> pool) {
  const PairFeatures pf = pair_features(model, pool);
  return pf.reward_gap.unaryExpr([](double z) { return bernoulli_entropy_logit(z); });
}

Vector score_maxdiff(const RewardModel& model, std::span<const ComparisonPair> pool) {
  return pair_features(model, pool).reward_gap.cwiseAbs();
}

SelectionResult select_entropy(const RewardModel& model, std::span<const ComparisonPair> pool, std::size_t c,
                               const PairFeatures* features) {
  check_budget(pool.size(), c);
  PairFeatures storage;
  const auto& pf = pair_features_or(features, model, pool, storage);
  return top_by_score("entropy", pool, pf.reward_gap.unaryExpr([](double z) { return bernoulli_entropy_logit(z); }),
                      c);
}

SelectionResult select_maxdiff(const RewardModel& model, std::span<const ComparisonPair> pool, std::size_t c,
                               const PairFeatures* features) {
  check_budget(pool.size(), c);
  PairFeatures storage;
  return top_by_score("maxdiff", pool, pair_features_or(features, model, pool, storage).reward_gap.cwiseAbs(), c);
}

SelectionResult score_xtx_select(const RewardModel& model, std::span<const ComparisonPair> pool, std::size_t c,
                                 const DesignConfig& config, const PairFeatures* features) {
  check_budget(pool.size(), c);
  PairFeatures storage;
  const auto& pf = pair_features_or(features, model, pool, storage);
  DesignConfig cfg = config;
  cfg.mode = DesignMode::kDopt;
  return select_by_gradient(pf.diffs, Vector::Ones(pf.diffs.cols()), pool_pair_ids(pool), c, cfg, Matrix(), "xtx");
}

void CoresetConfig::validate() const {
  if (clusters == 0) throw Error(ErrorCode::kConfig, "coreset clusters must be at least 1");
  if (!(radius >= 0.0) || !std::isfinite(radius)) throw Error(ErrorCode::kConfig, "coreset radius must be >= 0");
}

double coreset_radius(const Matrix& points, const CoresetConfig& config) {
  if (config.radius > 0.0) return config.radius;
  if (points.cols() == 0) return 1.0;
  std::vector<double> norms(static_cast<std::size_t>(points.cols()));
  for (Eigen::Index j = 0; j < points.cols(); ++j) norms[static_cast<std::size_t>(j)] = points.col(j).norm();
  auto mid = norms.begin() + static_cast<std::ptrdiff_t>(norms.size() / 2);
  std::nth_element(norms.begin(), mid, norms.end());
  return *mid > 0.0 ? 1.0 / *mid : 1.0;
}

Vector coreset_sensitivity(const Matrix& points, std::size_t n_scored, const CoresetConfig& config) {
  config.validate();
  const auto n = static_cast<std::size_t>(points.cols());
  if (n_scored > n) throw Error(ErrorCode::kInvalidArgument, "n_scored exceeds the number of points");
  if (n == 0) return Vector();
  const double r = coreset_radius(points, config);
  std::vector<std::size_t> assign;
  const Matrix centres = kmeans(points, std::min(config.clusters, n), config.kmeans_iterations, config.seed, assign);
  const auto k = centres.cols();

  // near(g, j) = exp(-R |z_j - c_g|)
  Matrix near(k, static_cast<Eigen::Index>(n));
  for (Eigen::Index g = 0; g < k; ++g) {
    near.row(g) = ((points.colwise() - centres.col(g)).colwise().norm() * -r).array().exp();
  }
  Vector cluster_mass = Vector::Zero(k);
  for (std::size_t j = 0; j < n; ++j) {
    cluster_mass(static_cast<Eigen::Index>(assign[j])) += near(static_cast<Eigen::Index>(assign[j]), static_cast<Eigen::Index>(j));
  }

  Vector m(static_cast<Eigen::Index>(n_scored));
  for (std::size_t i = 0; i < n_scored; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const auto own = static_cast<Eigen::Index>(assign[i]);
    double denom = 1.0;
    for (Eigen::Index g = 0; g < k; ++g) {
      const double mass = g == own ? std::max(cluster_mass(g) - near(g, ii), 0.0) : cluster_mass(g);
      denom += near(g, ii) * mass;
    }
    m(ii) = static_cast<double>(n) / denom;
  }
  return m;
}

SelectionResult score_coreset(const RewardModel& model, std::span<const ComparisonPair> pool,
                              const LabeledDataset* past_data, std::size_t c, const CoresetConfig& config,
                              const PairFeatures* features) {
  check_budget(pool.size(), c);
  PairFeatures storage;
  const auto& pf = pair_features_or(features, model, pool, storage);
  Matrix points = pf.diffs;
  if (past_data != nullptr && !past_data->empty()) {
    std::vector<ComparisonPair> past_pairs;
    std::vector<double> signs;
    for (const auto& e : past_data->entries()) {
      past_pairs.push_back(e.pair);
      signs.push_back(e.label.outcome == 1 ? 1.0 : -1.0);
    }
    const PairFeatures past = pair_features(model, past_pairs);
    points.conservativeResize(Eigen::NoChange, pf.diffs.cols() + past.diffs.cols());
    for (Eigen::Index j = 0; j < past.diffs.cols(); ++j) {
      points.col(pf.diffs.cols() + j) = signs[static_cast<std::size_t>(j)] * past.diffs.col(j);
    }
  }
  const Vector m = coreset_sensitivity(points, pool.size(), config);
  return top_by_score("coreset", pool, m, c);
}

Matrix LaplacePosterior::covariance() const {
  const auto d = static_cast<Eigen::Index>(dim());
  const auto l = precision_factor.triangularView<Eigen::Lower>();
  Matrix linv = l.solve(Matrix::Identity(d, d));
  return linv.transpose() * linv;
}

Matrix LaplacePosterior::sample(std::uint64_t seed) const {
  Rng rng(seed);
  const auto d = static_cast<Eigen::Index>(dim());
  Matrix z(d, static_cast<Eigen::Index>(sample_count));
  for (Eigen::Index k = 0; k < z.cols(); ++k) {
    for (Eigen::Index i = 0; i < d; ++i) z(i, k) = rng.normal();
  }
  Matrix draws = precision_factor.transpose().triangularView<Eigen::Upper>().solve(z);
  draws.colwise() += mean;
  return draws;
}

LaplacePosterior fit_laplace(const LabeledDataset* past_data, const RewardModel& model, double prior_variance,
                             std::size_t sample_count, double relative_jitter) {
  if (!(prior_variance > 0.0)) throw Error(ErrorCode::kInvalidArgument, "prior_variance must be positive");
  if (sample_count < 2) throw Error(ErrorCode::kInvalidArgument, "need at least 2 posterior samples");
  std::vector<PairContribution> contribs;
  if (past_data != nullptr && !past_data->empty()) {
    std::vector<ComparisonPair> pairs;
    for (const auto& e : past_data->entries()) pairs.push_back(e.pair);
    contribs = pair_contributions(model, pairs);
  }
  LaplacePosterior post;
  post.mean = model.head();
  post.precision = assemble_fi(contribs, nullptr, prior_variance, model.hidden_width()).matrix;
  post.precision_factor = JitteredCholesky(post.precision, relative_jitter).llt().matrixL();
  post.sample_count = sample_count;
  return post;
}

void BatchBaldConfig::validate() const {
  if (samples < 2) throw Error(ErrorCode::kConfig, "batchbald needs at least 2 posterior samples");
  if (max_configs < 2) throw Error(ErrorCode::kConfig, "batchbald max_configs must be at least 2");
}

Matrix predictive_probabilities(const Matrix& head_samples, const Matrix& diffs) {
  if (head_samples.rows() != diffs.rows()) throw Error(ErrorCode::kDimensionMismatch, "sample dim differs");
  return (head_samples.transpose() * diffs).unaryExpr([](double z) { return sigmoid(z); });
}

Vector bald_scores(const Matrix& probs) {
  Vector out(probs.cols());
  for (Eigen::Index j = 0; j < probs.cols(); ++j) {
    double cond = 0.0;
    for (Eigen::Index k = 0; k < probs.rows(); ++k) cond += bernoulli_entropy(probs(k, j));
    out(j) = bernoulli_entropy(probs.col(j).mean()) - cond / static_cast<double>(probs.rows());
  }
  return out;
}

double batch_mutual_information_exact(const Matrix& probs, std::span<const std::size_t> subset) {
  const auto k = probs.rows();
  const std::size_t n = subset.size();
  if (n > 24) throw Error(ErrorCode::kInvalidArgument, "exact enumeration limited to 24 candidates");
  double joint = 0.0;
  for (std::uint64_t cfg = 0; cfg < (std::uint64_t{1} << n); ++cfg) {
    double p = 0.0;
    for (Eigen::Index s = 0; s < k; ++s) {
      double prod = 1.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double q = probs(s, static_cast<Eigen::Index>(subset[b]));
        prod *= (cfg >> b) & 1 ? q : 1.0 - q;
      }
      p += prod;
    }
    joint -= xlogx(p / static_cast<double>(k));
  }
  double cond = 0.0;
  for (auto j : subset) {
    for (Eigen::Index s = 0; s < k; ++s) cond += bernoulli_entropy(probs(s, static_cast<Eigen::Index>(j)));
  }
  return joint - cond / static_cast<double>(k);
}

SelectionResult select_batchbald_probs(const Matrix& probs, std::span<const PairId> ids, std::size_t c,
                                       const BatchBaldConfig& config) {
  config.validate();
  const auto kk = probs.rows();
  const auto j_all = static_cast<std::size_t>(probs.cols());
  check_budget(j_all, c);
  if (ids.size() != j_all) throw Error(ErrorCode::kDimensionMismatch, "ids and probabilities differ");
  if (kk < 2) throw Error(ErrorCode::kInvalidArgument, "batchbald needs at least 2 posterior samples");

  const Vector bald = bald_scores(probs);
  SelectionResult r = make_result("batchbald", ids, bald);

  std::vector<std::size_t> cand(j_all);
  std::iota(cand.begin(), cand.end(), std::size_t{0});
  const std::size_t limit = std::max(config.prefilter, c);
  if (config.prefilter > 0 && j_all > limit) cand = select_top_by_pair_id(r.scores, r.pool_ids, limit);
  std::sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

  const auto nc = static_cast<Eigen::Index>(cand.size());
  Matrix p(kk, nc);
  Vector cond(nc);
  for (Eigen::Index i = 0; i < nc; ++i) {
    p.col(i) = probs.col(static_cast<Eigen::Index>(cand[static_cast<std::size_t>(i)]));
    double h = 0.0;
    for (Eigen::Index s = 0; s < kk; ++s) h += bernoulli_entropy(p(s, i));
    cond(i) = h / static_cast<double>(kk);
  }

  // Rows of `a` are label configurations of the current batch, columns are
  // posterior samples: a(r, k) = prod_{j in batch} q_kj(y_rj), stored
  // row-normalised with the log of the scale in log_scale(r).
  Matrix a = Matrix::Ones(1, kk);
  Vector log_scale = Vector::Zero(1);
  bool sampled = false;
  std::vector<Eigen::Index> sample_of_config;  // k_m in sampled mode
  Rng rng(derive_seed(config.seed, 0xba1d));
  std::vector<bool> taken(static_cast<std::size_t>(nc), false);
  std::vector<Eigen::Index> picked;
  double cond_sum = 0.0;

  for (std::size_t step = 0; step < c; ++step) {
    const Vector mean_a = a.rowwise().mean();
    const Matrix u1 = a * p / static_cast<double>(kk);
    const auto rows = a.rows();
    Eigen::Index best = -1;
    double best_val = -std::numeric_limits<double>::infinity();
    double best_joint = 0.0;
    for (Eigen::Index i = 0; i < nc; ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      double joint = 0.0;
      for (Eigen::Index row = 0; row < rows; ++row) {
        const double m = mean_a(row);
        if (!(m > 0.0)) continue;
        const double s = log_scale(row);
        const double x1 = std::clamp(u1(row, i), 0.0, m);
        const double x0 = m - x1;
        const double t = (x1 > 0.0 ? x1 * (s + std::log(x1)) : 0.0) + (x0 > 0.0 ? x0 * (s + std::log(x0)) : 0.0);
        joint -= sampled ? t / m : std::exp(s) * t;
      }
      if (sampled) joint /= static_cast<double>(rows);
      const double val = joint - cond(i);
      if (val > best_val) {
        best_val = val;
        best = i;
        best_joint = joint;
      }
    }
    taken[static_cast<std::size_t>(best)] = true;
    picked.push_back(best);
    cond_sum += cond(best);
    const std::size_t pool_index = cand[static_cast<std::size_t>(best)];
    r.selected.push_back(pool_index);
    r.scores[pool_index] = best_joint - cond_sum;
    if (step + 1 == c) break;

    const Vector pj = p.col(best);
    if (!sampled && static_cast<std::size_t>(2 * a.rows()) <= config.max_configs) {
      Matrix next(2 * a.rows(), kk);
      next.topRows(a.rows()) = a.array().rowwise() * (1.0 - pj.array()).transpose();
      next.bottomRows(a.rows()) = a.array().rowwise() * pj.array().transpose();
      Vector next_scale(2 * a.rows());
      next_scale << log_scale, log_scale;
      a = std::move(next);
      log_scale = std::move(next_scale);
      renormalize_rows(a, log_scale);
    } else if (!sampled) {
      // Switch to sampled configurations drawn ancestrally from the
      // sample mixture over the batch so far.
      sampled = true;
      const auto m = static_cast<Eigen::Index>(config.max_configs);
      a = Matrix::Ones(m, kk);
      log_scale = Vector::Zero(m);
      sample_of_config.resize(static_cast<std::size_t>(m));
      for (Eigen::Index row = 0; row < m; ++row) {
        const auto km = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(kk)));
        sample_of_config[static_cast<std::size_t>(row)] = km;
        for (auto j : picked) {
          const bool y = rng.bernoulli(p(km, j));
          const Vector q = y ? Vector(p.col(j)) : Vector(1.0 - p.col(j).array());
          a.row(row).array() *= q.transpose().array();
          const double mx = a.row(row).maxCoeff();
          if (mx > 0.0) {
            a.row(row) /= mx;
            log_scale(row) += std::log(mx);
          }
        }
      }
    } else {
      for (Eigen::Index row = 0; row < a.rows(); ++row) {
        const bool y = rng.bernoulli(pj(sample_of_config[static_cast<std::size_t>(row)]));
        const Vector q = y ? pj : Vector(1.0 - pj.array());
        a.row(row).array() *= q.transpose().array();
      }
      renormalize_rows(a, log_scale);
    }
  }
  return r;
}

SelectionResult select_batchbald(const LaplacePosterior& posterior, const RewardModel& model,
                                 std::span<const ComparisonPair> pool, std::size_t c, const BatchBaldConfig& config,
                                 const PairFeatures* features) {
  config.validate();
  check_budget(pool.size(), c);
  if (posterior.dim() != model.hidden_width()) {
    throw Error(ErrorCode::kDimensionMismatch, "posterior dim differs from the model's hidden width");
  }
  LaplacePosterior post = posterior;
  post.sample_count = config.samples;
  const Matrix draws = post.sample(derive_seed(config.seed, 0x5a4d));
  PairFeatures storage;
  const Matrix probs = predictive_probabilities(draws, pair_features_or(features, model, pool, storage).diffs);
  const auto ids = pool_pair_ids(pool);
  return select_batchbald_probs(probs, ids, c, config);
}

SelectionResult select_random_ids(std::span<const PairId> ids, std::size_t c, std::uint64_t seed) {
  check_budget(ids.size(), c);
  Rng rng(seed);
  SelectionResult r = make_result("random", ids, Vector::Zero(static_cast<Eigen::Index>(ids.size())));
  r.selected = rng.sample_without_replacement(ids.size(), c);
  return r;
}

SelectionResult select_random(std::span<const ComparisonPair> pool, std::size_t c, std::uint64_t seed) {
  const auto ids = pool_pair_ids(pool);
  return select_random_ids(ids, c, seed);
}

SelectionResult select_pairs(StrategyKind kind, std::span<const ComparisonPair> pool, std::size_t c,
                             const StrategyContext& ctx) {
  if (kind == StrategyKind::kRandom) return select_random(pool, c, derive_seed(ctx.seed, 0x7a4d));
  if (ctx.model == nullptr) throw Error(ErrorCode::kInvalidArgument, to_string(kind) + " needs a model");
  const RewardModel& model = *ctx.model;
  switch (kind) {
    case StrategyKind::kEntropy:
      return select_entropy(model, pool, c, ctx.pool_features);
    case StrategyKind::kMaxdiff:
      return select_maxdiff(model, pool, c, ctx.pool_features);
    case StrategyKind::kXtx:
      return score_xtx_select(model, pool, c, ctx.design, ctx.pool_features);
    case StrategyKind::kCoreset: {
      CoresetConfig cfg = ctx.coreset;
      cfg.seed = derive_seed(ctx.seed, 0xc0e5, cfg.seed);
      return score_coreset(model, pool, ctx.past, c, cfg, ctx.pool_features);
    }
    case StrategyKind::kBatchBald: {
      BatchBaldConfig cfg = ctx.batchbald;
      cfg.seed = derive_seed(ctx.seed, 0xba1d, cfg.seed);
      const auto post = fit_laplace(ctx.past, model, ctx.design.prior_variance, cfg.samples,
                                    ctx.design.relative_jitter);
      return select_batchbald(post, model, pool, c, cfg, ctx.pool_features);
    }
    case StrategyKind::kDopt:
    case StrategyKind::kPaDopt: {
      DesignConfig cfg = ctx.design;
      cfg.mode = kind == StrategyKind::kDopt ? DesignMode::kDopt : DesignMode::kPastAware;
      cfg.sample_seed = derive_seed(ctx.seed, 0xd0e7, cfg.sample_seed);
      return select_dopt(model, pool, c, cfg, ctx.past, ctx.pool_features);
    }
    case StrategyKind::kRandom:
      break;
  }
  throw Error(ErrorCode::kInvalidArgument, "unhandled strategy");
}

}  // namespace btal
