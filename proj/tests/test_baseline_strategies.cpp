#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "btal/baseline_strategies.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace btal;
using btal::test::make_label;
using btal::test::make_pair;
using btal::test::random_vector;

namespace {

std::vector<ComparisonPair> random_pool(Rng& rng, std::size_t dim, std::size_t n, std::uint32_t offset = 0,
                                        double scale = 1.0) {
  std::vector<ComparisonPair> pool;
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = static_cast<std::uint32_t>(offset + 2 * i);
    pool.push_back(make_pair(a, a + 1, random_vector(rng, dim, scale), random_vector(rng, dim, scale)));
  }
  return pool;
}

std::set<std::size_t> as_set(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

// N / (1 + sum_{j != n} exp(-R |z_j - z_n|)), no clustering.
Vector pairwise_sensitivity(const Matrix& z, std::size_t n_scored, double r) {
  const auto n = z.cols();
  Vector m(static_cast<Eigen::Index>(n_scored));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n_scored); ++i) {
    double denom = 1.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) denom += std::exp(-r * (z.col(j) - z.col(i)).norm());
    }
    m(i) = static_cast<double>(n) / denom;
  }
  return m;
}

Matrix sample_probs(std::uint64_t seed, std::size_t dim, std::size_t k, std::size_t j) {
  Rng rng(seed);
  Vector mu = random_vector(rng, dim);
  Matrix beta(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(k));
  for (Eigen::Index s = 0; s < beta.cols(); ++s) beta.col(s) = mu + random_vector(rng, dim);
  Matrix diffs(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(j));
  for (Eigen::Index c = 0; c < diffs.cols(); ++c) diffs.col(c) = random_vector(rng, dim);
  return predictive_probabilities(beta, diffs);
}

std::vector<PairId> sequential_ids(std::size_t n) {
  std::vector<PairId> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(PairId{i});
  return ids;
}

}  // namespace

TEST_CASE("strategy names round trip") {
  CHECK(all_strategies().size() == 8);
  for (auto k : all_strategies()) CHECK(strategy_from_string(to_string(k)) == k);
  CHECK(to_string(StrategyKind::kPaDopt) == "pa_dopt");
  try {
    strategy_from_string("d-opt");
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
  }
  CHECK_FALSE(uses_model(StrategyKind::kRandom));
  CHECK(uses_model(StrategyKind::kCoreset));
}

TEST_CASE("entropy: peak, symmetry, degenerate limit") {
  CHECK(bernoulli_entropy(0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bernoulli_entropy(0.25) == doctest::Approx(bernoulli_entropy(0.75)).epsilon(1e-15));
  CHECK(bernoulli_entropy(1.0) == 0.0);
  CHECK(bernoulli_entropy(0.0) == 0.0);
  CHECK(bernoulli_entropy_logit(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bernoulli_entropy_logit(800.0) == 0.0);
  for (double z : {-6.0, -1.5, -0.1, 0.3, 2.0, 9.0}) {
    CHECK(bernoulli_entropy_logit(z) == doctest::Approx(bernoulli_entropy(sigmoid(z))).epsilon(1e-12));
  }
  CHECK_THROWS_AS(bernoulli_entropy(1.5), Error);
}

TEST_CASE("entropy and maxdiff scores follow the model") {
  Rng rng(4);
  const RewardModel m = RewardModel::initialized(3, 8, 6);
  auto pool = random_pool(rng, 3, 12);
  const Vector x = random_vector(rng, 3);
  pool.push_back(make_pair(900, 901, x, x));
  const Vector h = score_entropy(m, pool);
  const Vector g = score_maxdiff(m, pool);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const double gap = reward(m, pool[i].left) - reward(m, pool[i].right);
    CHECK(g(static_cast<Eigen::Index>(i)) == doctest::Approx(std::abs(gap)).epsilon(1e-12));
    CHECK(h(static_cast<Eigen::Index>(i)) == doctest::Approx(bernoulli_entropy(pref_prob(m, pool[i]))).epsilon(1e-12));
  }
  CHECK(g(12) == 0.0);
  CHECK(h(12) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("maxdiff argmax is entropy argmin") {
  for (int inst = 0; inst < 10; ++inst) {
    Rng rng(derive_seed(10, inst));
    const RewardModel m = RewardModel::initialized(2, 8, derive_seed(11, inst));
    const auto pool = random_pool(rng, 2, 30);
    const Vector h = score_entropy(m, pool);
    const Vector g = score_maxdiff(m, pool);
    Eigen::Index hmin = 0;
    Eigen::Index gmax = 0;
    h.minCoeff(&hmin);
    g.maxCoeff(&gmax);
    CHECK(hmin == gmax);
  }
}

TEST_CASE("entropy selection is unchanged when reward differences are scaled") {
  Rng rng(21);
  const RewardModel m = RewardModel::initialized(3, 8, 2);
  const auto pool = random_pool(rng, 3, 40);
  const auto base = select_entropy(m, pool, 7);
  for (double scale : {0.1, 3.0, 25.0}) {
    RewardModel scaled = m;
    scaled.set_head(m.head() * scale);
    CHECK(as_set(select_entropy(scaled, pool, 7).selected) == as_set(base.selected));
    CHECK(as_set(select_maxdiff(scaled, pool, 7).selected) == as_set(select_maxdiff(m, pool, 7).selected));
  }
}

TEST_CASE("maxdiff depends on reward differences only") {
  // Adding the same offset to both sides' rewards is expressed here by
  // comparing the score with |r_left - r_right| computed after a shift.
  Rng rng(8);
  const RewardModel m = RewardModel::initialized(2, 4, 3);
  const auto pool = random_pool(rng, 2, 10);
  const Vector g = score_maxdiff(m, pool);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const double shift = 17.0;
    const double shifted = std::abs((reward(m, pool[i].left) + shift) - (reward(m, pool[i].right) + shift));
    CHECK(g(static_cast<Eigen::Index>(i)) == doctest::Approx(shifted).epsilon(1e-9));
  }
}

TEST_CASE("xtx matches dopt when every p_hat is one half") {
  // Uniform weights 1/4 rescale M exactly when there is no ridge term.
  for (int inst = 0; inst < 10; ++inst) {
    Rng rng(derive_seed(30, inst));
    RewardModel m = RewardModel::initialized(3, 6, derive_seed(31, inst));
    m.set_head(Vector::Zero(6));
    const auto pool = random_pool(rng, 3, 25);
    DesignConfig cfg;
    cfg.prior_variance = std::numeric_limits<double>::infinity();
    const auto x = score_xtx_select(m, pool, 5, cfg);
    const auto d = select_dopt(m, pool, 5, cfg);
    CHECK(x.selected == d.selected);
    CHECK(x.strategy == "xtx");
  }
}

TEST_CASE("xtx: duplicates tie and saturation") {
  Rng rng(9);
  const RewardModel m = RewardModel::initialized(2, 5, 1);
  auto pool = random_pool(rng, 2, 8);
  pool.push_back(make_pair(100, 101, pool[2].left, pool[2].right));
  const auto r = score_xtx_select(m, pool, 9);
  CHECK(r.scores[2] == r.scores[8]);
  CHECK(as_set(r.selected).size() == 9);
}

TEST_CASE("coreset: identical candidates fall back to tie order") {
  Rng rng(2);
  const Vector a = random_vector(rng, 3);
  const Vector b = random_vector(rng, 3);
  Matrix z(3, 10);
  for (int j = 0; j < 10; ++j) z.col(j) = a - b;
  const Vector m = coreset_sensitivity(z, 10, CoresetConfig{});
  for (int j = 1; j < 10; ++j) CHECK(m(j) == m(0));

  const RewardModel model = RewardModel::initialized(3, 6, 5);
  std::vector<ComparisonPair> pool;
  for (std::uint32_t i = 0; i < 10; ++i) pool.push_back(make_pair(50 - 2 * i, 51 - 2 * i, a, b));
  const auto r = score_coreset(model, pool, nullptr, 3, CoresetConfig{});
  // Smallest pair ids are the last three entries.
  CHECK(as_set(r.selected) == std::set<std::size_t>{7, 8, 9});
}

TEST_CASE("coreset: outlier gets the largest sensitivity") {
  Rng rng(14);
  Matrix z(4, 51);
  const Vector centre = random_vector(rng, 4);
  for (int j = 0; j < 50; ++j) z.col(j) = centre + random_vector(rng, 4, 0.1);
  z.col(50) = centre + Vector::Constant(4, 12.0);
  const double r = coreset_radius(z, CoresetConfig{});
  Eigen::Index arg_clustered = 0;
  Eigen::Index arg_exact = 0;
  coreset_sensitivity(z, 51, CoresetConfig{}).maxCoeff(&arg_clustered);
  pairwise_sensitivity(z, 51, r).maxCoeff(&arg_exact);
  CHECK(arg_exact == 50);
  CHECK(arg_clustered == 50);
}

TEST_CASE("coreset: clustered bound dominates the pairwise bound") {
  for (int inst = 0; inst < 10; ++inst) {
    Rng rng(derive_seed(40, inst));
    const std::size_t d = 2 + rng.below(5);
    const std::size_t n = 20 + rng.below(60);
    const std::size_t scored = n - rng.below(10);
    Matrix z(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
    for (Eigen::Index j = 0; j < z.cols(); ++j) z.col(j) = random_vector(rng, d, 1.0 + (j % 3));
    CoresetConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(inst);
    if (inst % 2) cfg.radius = 0.7;
    const Vector clustered = coreset_sensitivity(z, scored, cfg);
    const Vector exact = pairwise_sensitivity(z, scored, coreset_radius(z, cfg));
    for (Eigen::Index i = 0; i < clustered.size(); ++i) {
      CHECK(clustered(i) >= exact(i) * (1.0 - 1e-12));
      CHECK(clustered(i) <= static_cast<double>(n));
    }
  }
}

TEST_CASE("coreset: past data enters the denominators only") {
  Rng rng(3);
  const RewardModel model = RewardModel::initialized(2, 6, 8);
  const auto pool = random_pool(rng, 2, 15);
  LabeledDataset past(2);
  for (const auto& p : random_pool(rng, 2, 10, 500)) past.add(p, make_label(p, 0));
  const auto with_past = score_coreset(model, pool, &past, 4, CoresetConfig{});
  const auto without = score_coreset(model, pool, nullptr, 4, CoresetConfig{});
  CHECK(with_past.scores.size() == 15);
  CHECK(with_past.scores != without.scores);
}

TEST_CASE("fit_laplace: prior only, precision reuse, shrinking variance") {
  Rng rng(6);
  const RewardModel m = RewardModel::initialized(3, 4, 7);
  const auto prior = fit_laplace(nullptr, m, 2.5);
  CHECK(prior.covariance().isApprox(2.5 * Matrix::Identity(4, 4), 1e-12));
  CHECK(prior.mean == m.head());

  LabeledDataset data(3);
  Vector prev_diag = prior.covariance().diagonal();
  for (const auto& p : random_pool(rng, 3, 12)) {
    data.add(p, make_label(p, 1));
    const auto post = fit_laplace(&data, m, 2.5);
    std::vector<ComparisonPair> pairs;
    for (const auto& e : data.entries()) pairs.push_back(e.pair);
    const auto contribs = pair_contributions(m, pairs);
    CHECK(post.precision == assemble_fi(contribs, nullptr, 2.5, 4).matrix);
    const Vector diag = post.precision.inverse().diagonal();
    CHECK(post.covariance().diagonal().isApprox(diag, 1e-10));
    CHECK((diag.array() <= prev_diag.array() + 1e-12).all());
    prev_diag = diag;
  }
  CHECK_THROWS_AS(fit_laplace(nullptr, m, 0.0), Error);
  CHECK_THROWS_AS(fit_laplace(nullptr, m, 1.0, 1), Error);
}

TEST_CASE("fit_laplace: samples have the posterior covariance") {
  Rng rng(61);
  const RewardModel m = RewardModel::initialized(2, 3, 9);
  LabeledDataset data(2);
  for (const auto& p : random_pool(rng, 2, 30, 0, 2.0)) data.add(p, make_label(p, 1));
  auto post = fit_laplace(&data, m, 1.0, 40000);
  const Matrix s = post.sample(5);
  const Vector mean = s.rowwise().mean();
  const Matrix centred = s.colwise() - mean;
  const Matrix cov = centred * centred.transpose() / static_cast<double>(s.cols() - 1);
  CHECK((mean - post.mean).norm() < 0.05);
  CHECK((cov - post.covariance()).norm() / post.covariance().norm() < 0.05);
  CHECK(post.sample(5) == s);
}

TEST_CASE("batchbald: c = 1 is closed-form BALD") {
  for (int inst = 0; inst < 10; ++inst) {
    const Matrix p = sample_probs(derive_seed(70, inst), 3, 100, 12);
    const auto r = select_batchbald_probs(p, sequential_ids(12), 1, BatchBaldConfig{});
    double best = -1.0;
    std::size_t arg = 0;
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double mean_p = p.col(j).mean();
      double cond = 0.0;
      for (Eigen::Index k = 0; k < p.rows(); ++k) {
        const double q = p(k, j);
        cond += -q * std::log(q) - (1 - q) * std::log(1 - q);
      }
      const double bald = -mean_p * std::log(mean_p) - (1 - mean_p) * std::log(1 - mean_p) - cond / 100.0;
      CHECK(std::abs(r.scores[static_cast<std::size_t>(j)] - bald) < 1e-10);
      if (bald > best) best = bald, arg = static_cast<std::size_t>(j);
    }
    CHECK(r.selected == std::vector<std::size_t>{arg});
  }
}

TEST_CASE("batchbald: sample-independent candidate scores zero") {
  Matrix p = sample_probs(3, 3, 50, 4);
  p.col(2).setConstant(0.3);
  const Vector b = bald_scores(p);
  CHECK(std::abs(b(2)) < 1e-15);
  const std::vector<std::size_t> s{2};
  CHECK(std::abs(batch_mutual_information_exact(p, s)) < 1e-14);
}

TEST_CASE("batchbald: greedy pair matches exhaustive search on 5 candidates") {
  for (int inst = 0; inst < 20; ++inst) {
    const Matrix p = sample_probs(derive_seed(80, inst), 3, 100, 5);
    const auto r = select_batchbald_probs(p, sequential_ids(5), 2, BatchBaldConfig{});
    double best = -1.0;
    oracle::for_each_subset(5, 2, [&](const std::vector<std::size_t>& s) {
      best = std::max(best, batch_mutual_information_exact(p, s));
    });
    const double got = batch_mutual_information_exact(p, r.selected);
    CHECK(got == doctest::Approx(best).epsilon(1e-12));
    CHECK(r.scores[r.selected[1]] == doctest::Approx(got).epsilon(1e-10));
  }
}

TEST_CASE("batchbald: exact-mode batch scores equal exact mutual information") {
  const Matrix p = sample_probs(90, 4, 60, 20);
  const auto r = select_batchbald_probs(p, sequential_ids(20), 6, BatchBaldConfig{});
  std::vector<std::size_t> prefix;
  for (auto idx : r.selected) {
    prefix.push_back(idx);
    const double mi = batch_mutual_information_exact(p, prefix);
    CHECK(r.scores[idx] == doctest::Approx(mi).epsilon(1e-9));
    CHECK(mi >= -1e-12);
  }
}

TEST_CASE("batchbald: sampled configurations track the exact objective") {
  const Matrix p = sample_probs(91, 4, 100, 30);
  BatchBaldConfig cfg;
  cfg.max_configs = 256;
  cfg.seed = 3;
  const auto r = select_batchbald_probs(p, sequential_ids(30), 11, cfg);
  CHECK(as_set(r.selected).size() == 11);
  const double est = r.scores[r.selected.back()];
  const double exact = batch_mutual_information_exact(p, r.selected);
  CHECK(std::abs(est - exact) < 0.1 * exact);
  CHECK(select_batchbald_probs(p, sequential_ids(30), 11, cfg).selected == r.selected);
}

TEST_CASE("batchbald: prefilter restricts the search to top BALD candidates") {
  const Matrix p = sample_probs(92, 3, 50, 40);
  BatchBaldConfig cfg;
  cfg.prefilter = 8;
  const auto r = select_batchbald_probs(p, sequential_ids(40), 4, cfg);
  const Vector bald = bald_scores(p);
  const auto top = select_topc(std::vector<double>(bald.data(), bald.data() + bald.size()), 8);
  for (auto i : r.selected) CHECK(std::find(top.begin(), top.end(), i) != top.end());
}

TEST_CASE("batchbald: model-level wrapper, determinism and errors") {
  Rng rng(95);
  const RewardModel m = RewardModel::initialized(3, 6, 4);
  const auto pool = random_pool(rng, 3, 20);
  const auto post = fit_laplace(nullptr, m, 1.0);
  BatchBaldConfig cfg;
  cfg.seed = 12;
  const auto a = select_batchbald(post, m, pool, 4, cfg);
  const auto b = select_batchbald(post, m, pool, 4, cfg);
  CHECK(a.selected == b.selected);
  CHECK(a.scores == b.scores);
  for (auto s : a.scores) CHECK(s >= -1e-6 / std::sqrt(100.0));
  CHECK_THROWS_AS(select_batchbald(post, m, pool, 21, cfg), Error);
  cfg.samples = 1;
  CHECK_THROWS_AS(select_batchbald(post, m, pool, 2, cfg), Error);
}

TEST_CASE("random: saturation, determinism, uniform frequency") {
  Rng rng(1);
  const auto pool = random_pool(rng, 2, 10);
  CHECK(as_set(select_random(pool, 10, 4).selected).size() == 10);
  CHECK(select_random(pool, 3, 4).selected == select_random(pool, 3, 4).selected);
  std::vector<int> counts(10, 0);
  for (int t = 0; t < 10000; ++t) ++counts[select_random(pool, 1, derive_seed(2, t)).selected[0]];
  for (int c : counts) CHECK(std::abs(c / 10000.0 - 0.1) <= 0.01);
  CHECK_THROWS_AS(select_random(pool, 11, 0), Error);
}

TEST_CASE("select_pairs: every strategy returns c distinct pool pairs") {
  Rng rng(100);
  const RewardModel m = RewardModel::initialized(3, 8, 1);
  const auto pool = random_pool(rng, 3, 60);
  LabeledDataset past(3);
  for (const auto& p : random_pool(rng, 3, 20, 1000)) past.add(p, make_label(p, 1));
  StrategyContext ctx;
  ctx.model = &m;
  ctx.past = &past;
  ctx.seed = 42;
  for (auto kind : all_strategies()) {
    const auto r = select_pairs(kind, pool, 9, ctx);
    CHECK(r.strategy == to_string(kind));
    CHECK(r.scores.size() == pool.size());
    const auto ids = r.selected_ids();
    CHECK(std::set<PairId>(ids.begin(), ids.end()).size() == 9);
    CHECK(select_pairs(kind, pool, 9, ctx).selected == r.selected);
    // Precomputed features give the identical selection and scores.
    const PairFeatures pf = pair_features(m, pool);
    StrategyContext cached = ctx;
    cached.pool_features = &pf;
    const auto rc = select_pairs(kind, pool, 9, cached);
    CHECK(rc.selected == r.selected);
    CHECK(rc.scores == r.scores);
  }
  const PairFeatures short_pf = pair_features(m, std::span(pool).first(10));
  StrategyContext bad = ctx;
  bad.pool_features = &short_pf;
  CHECK_THROWS_AS(select_pairs(StrategyKind::kDopt, pool, 3, bad), Error);
  StrategyContext no_model;
  CHECK_NOTHROW(select_pairs(StrategyKind::kRandom, pool, 3, no_model));
  CHECK_THROWS_AS(select_pairs(StrategyKind::kEntropy, pool, 3, no_model), Error);
}
