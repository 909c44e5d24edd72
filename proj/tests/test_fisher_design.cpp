#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "btal/fisher_design.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace btal;
using btal::test::make_label;
using btal::test::make_pair;
using btal::test::random_vector;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<PairId> sequential_ids(std::size_t n, std::uint32_t offset = 0) {
  std::vector<PairId> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(PairId::from_items(offset + 2 * i, offset + 2 * i + 1));
  return ids;
}

std::vector<ComparisonPair> random_pool(Rng& rng, std::size_t dim, std::size_t n, std::uint32_t offset = 0) {
  std::vector<ComparisonPair> pool;
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = static_cast<std::uint32_t>(offset + 2 * i);
    pool.push_back(make_pair(a, a + 1, random_vector(rng, dim), random_vector(rng, dim)));
  }
  return pool;
}

std::set<std::size_t> as_set(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("pair_contribution: identical sides, swap, and weight from the reward gap") {
  Rng rng(3);
  const RewardModel m = RewardModel::initialized(4, 8, 5);
  const Vector x = random_vector(rng, 4);
  const auto same = pair_contribution(m, make_pair(0, 1, x, x));
  CHECK(same.diff.norm() == 0.0);
  CHECK(same.variance_weight == doctest::Approx(0.25).epsilon(1e-15));

  const auto p = make_pair(2, 3, random_vector(rng, 4), random_vector(rng, 4));
  const auto a = pair_contribution(m, p);
  const auto b = pair_contribution(m, swapped(p));
  CHECK((a.diff + b.diff).norm() < 1e-15);
  CHECK(a.variance_weight == doctest::Approx(b.variance_weight).epsilon(1e-14));
  const double prob = pref_prob(m, p);
  CHECK(a.variance_weight == doctest::Approx(prob * (1.0 - prob)).epsilon(1e-12));
  CHECK(a.variance_weight > 0.0);
  CHECK(a.variance_weight <= 0.25);

  // Planted linear model: gap ln 3 means p = 3/4 and weight 3/16.
  CHECK(bernoulli_variance(std::log(3.0)) == doctest::Approx(0.1875).epsilon(1e-15));
}

TEST_CASE("pair_contribution: weight stays positive for saturated probabilities") {
  CHECK(bernoulli_variance(800.0) == 0.0);
  const RewardModel m = RewardModel::initialized(1, 4, 1);
  RewardModel big = m;
  big.set_head(Vector::Constant(4, 1e6));
  const auto c = pair_contribution(big, make_pair(0, 1, Vector::Constant(1, 3.0), Vector::Constant(1, -3.0)));
  CHECK(c.variance_weight > 0.0);
}

TEST_CASE("assemble_fi: hand examples") {
  const std::vector<PairContribution> one{{Vector::Unit(2, 0), 0.25}};
  const auto fi1 = assemble_fi(one, nullptr, kInf);
  CHECK(fi1.matrix.isApprox((Matrix(2, 2) << 0.25, 0, 0, 0).finished()));
  CHECK(fi1.n_pairs == 1);

  const std::vector<PairContribution> two{{Vector::Unit(2, 0), 0.25}, {Vector::Unit(2, 1), 0.25}};
  const auto fi2 = assemble_fi(two, nullptr, kInf);
  CHECK(fi2.matrix.isApprox(Matrix(Vector::Constant(2, 0.25).asDiagonal())));
  CHECK(fi2.matrix.determinant() == doctest::Approx(0.0625).epsilon(1e-14));

  const auto prior = assemble_fi({}, nullptr, 1.0, 3);
  CHECK(prior.matrix == Matrix::Identity(3, 3));

  const auto with_past = assemble_fi(one, &fi2, 2.0);
  CHECK(with_past.matrix.isApprox((Matrix(2, 2) << 1.0, 0, 0, 0.75).finished()));
  CHECK(with_past.n_pairs == 3);
}

TEST_CASE("assemble_fi: dimension errors") {
  const std::vector<PairContribution> mixed{{Vector::Unit(2, 0), 0.25}, {Vector::Unit(3, 0), 0.25}};
  CHECK_THROWS_AS(assemble_fi(mixed, nullptr, 1.0), Error);
  try {
    assemble_fi(mixed, nullptr, 1.0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDimensionMismatch);
  }
  const auto past = assemble_fi({}, nullptr, 1.0, 3);
  const std::vector<PairContribution> one{{Vector::Unit(2, 0), 0.25}};
  CHECK_THROWS_AS(assemble_fi(one, &past, 1.0), Error);
}

TEST_CASE("assemble_fi: symmetric and PSD on random inputs") {
  for (int inst = 0; inst < 30; ++inst) {
    Rng rng(derive_seed(17, inst));
    const std::size_t d = 1 + rng.below(8);
    std::vector<PairContribution> cs;
    const std::size_t n = rng.below(12);
    for (std::size_t i = 0; i < n; ++i) cs.push_back({random_vector(rng, d), 0.25 * rng.uniform()});
    const auto fi = assemble_fi(cs, nullptr, inst % 2 ? kInf : 0.5, d);
    CHECK((fi.matrix - fi.matrix.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(fi.matrix).eigenvalues();
    CHECK(ev.minCoeff() >= -1e-10 * std::max(1.0, fi.matrix.trace()));
  }
}

TEST_CASE("log_det_score: hand values and monotonicity") {
  CHECK(log_det_score({Matrix::Identity(4, 4), 0}) == doctest::Approx(0.0));
  CHECK(log_det_score({Matrix(Vector::Constant(2, 0.25).asDiagonal()), 2}) ==
        doctest::Approx(std::log(0.0625)).epsilon(1e-14));

  for (int inst = 0; inst < 50; ++inst) {
    Rng rng(derive_seed(99, inst));
    const std::size_t d = 1 + rng.below(6);
    std::vector<PairContribution> cs;
    for (std::size_t i = 0; i < 3; ++i) cs.push_back({random_vector(rng, d), 0.25 * rng.uniform()});
    const auto before = assemble_fi(cs, nullptr, 1.0);
    cs.push_back({random_vector(rng, d), 0.25 * rng.uniform()});
    const auto after = assemble_fi(cs, nullptr, 1.0);
    CHECK(log_det_score(after) >= log_det_score(before) - 1e-12);
    CHECK(log_det_score(after) == doctest::Approx(std::log(after.matrix.determinant())).epsilon(1e-10));
  }
}

TEST_CASE("JitteredCholesky: plain path, jitter repair, and failure") {
  const JitteredCholesky plain(Matrix::Identity(3, 3));
  CHECK(plain.jitter() == 0.0);

  // Rank one: the plain factorisation fails and jitter scaled by trace / D kicks in.
  Matrix rank1 = Vector::Ones(3) * Vector::Ones(3).transpose();
  const JitteredCholesky repaired(rank1, 1e-8);
  CHECK(repaired.jitter() >= 1e-8);
  CHECK(repaired.jitter() < 1e-2);
  CHECK(std::isfinite(repaired.log_det()));

  try {
    JitteredCholesky bad(-Matrix::Identity(2, 2));
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNumericalFailure);
  }
}

TEST_CASE("score_gradient: Jacobi identity against finite differences of log det") {
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    Rng rng(derive_seed(2024, inst));
    const std::size_t d = 1 + rng.below(8);
    const std::size_t j = 2 + rng.below(29);
    const auto design = oracle::random_design(derive_seed(7, inst), d, j);
    const Matrix ridge = Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    const Matrix base = ridge + design.diffs * design.weights.asDiagonal() * design.diffs.transpose();
    const Vector g = score_gradient(design.diffs, design.weights, base);
    for (Eigen::Index k = 0; k < g.size(); ++k) {
      const double fd = oracle::fd_logdet_partial(design.diffs, design.weights, ridge, k, 1e-5);
      worst = std::max(worst, std::abs(g(k) - fd) / std::max(std::abs(fd), 1e-8));
      CHECK(g(k) >= 0.0);
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("score_gradient: two orthogonal candidates plus ridge") {
  const std::vector<PairContribution> pool{{Vector::Unit(2, 0), 0.25}, {Vector::Unit(2, 1) * 2.0, 0.2}};
  const auto base = assemble_fi(pool, nullptr, 1.0);
  const Vector g = score_gradient(pool, base);
  // M = diag(1.25, 1.8); g = (0.25 / 1.25, 0.8 / 1.8).
  CHECK(g(0) == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(g(1) == doctest::Approx(0.8 / 1.8).epsilon(1e-14));
}

TEST_CASE("score_gradient: duplicates tie, zero diff scores zero") {
  Rng rng(5);
  const Vector v = random_vector(rng, 3);
  const std::vector<PairContribution> pool{{v, 0.2}, {v, 0.2}, {Vector::Zero(3), 0.25}, {random_vector(rng, 3), 0.1}};
  const Vector g = score_gradient(pool, assemble_fi(pool, nullptr, 1.0));
  CHECK(g(0) == g(1));
  CHECK(g(2) == 0.0);
}

TEST_CASE("select_by_gradient: det and log-det rankings agree") {
  for (int inst = 0; inst < 10; ++inst) {
    const auto design = oracle::random_design(derive_seed(31, inst), 3, 12);
    const auto ids = sequential_ids(12);
    const Matrix ridge = Matrix::Identity(3, 3);
    const auto r = select_by_gradient(design.diffs, design.weights, ids, 4, DesignConfig{}, Matrix(), "dopt");
    // d det / dw = det(M) * d log det / dw, estimated independently by differences of det.
    std::vector<double> det_grad(12);
    for (Eigen::Index k = 0; k < 12; ++k) {
      auto at = [&](double t) {
        Matrix m = ridge;
        for (Eigen::Index j = 0; j < 12; ++j) {
          m += (j == k ? t : 1.0) * design.weights(j) * design.diffs.col(j) * design.diffs.col(j).transpose();
        }
        return m.determinant();
      };
      det_grad[static_cast<std::size_t>(k)] = (at(1.0 + 1e-6) - at(1.0 - 1e-6)) / 2e-6;
    }
    CHECK(as_set(select_topc(det_grad, 4)) == as_set(r.selected));
  }
}

TEST_CASE("select_by_gradient: near-optimal against exhaustive subsets") {
  for (std::size_t c : {2u, 3u}) {
    double worst = 1.0;
    for (int inst = 0; inst < 20; ++inst) {
      const auto design = oracle::random_design(derive_seed(4040, c, inst), 2, 10);
      const auto ids = sequential_ids(10);
      const Matrix ridge = Matrix::Identity(2, 2);
      const double best = oracle::best_subset_det(design.diffs, design.weights, ridge, c);
      const auto r = select_by_gradient(design.diffs, design.weights, ids, c, DesignConfig{}, Matrix(), "dopt");
      const auto g = select_greedy_logdet(design.diffs, design.weights, ids, c, DesignConfig{}, Matrix(), "g");
      worst = std::min(worst, oracle::subset_det(design.diffs, design.weights, ridge, r.selected) / best);
      CHECK(oracle::subset_det(design.diffs, design.weights, ridge, g.selected) / best >= 0.95);
    }
    CHECK(worst >= 0.9);
  }
}

TEST_CASE("select_greedy_logdet: matches a from-scratch greedy") {
  for (int inst = 0; inst < 15; ++inst) {
    Rng rng(derive_seed(8, inst));
    const std::size_t d = 1 + rng.below(6);
    const auto design = oracle::random_design(derive_seed(9, inst), d, 20);
    const auto ids = sequential_ids(20);
    Matrix past = Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    if (inst % 2) {
      const Vector v = random_vector(rng, d);
      past = 3.0 * v * v.transpose();
    }
    const Matrix base = Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)) + past;
    const auto r = select_greedy_logdet(design.diffs, design.weights, ids, 6, DesignConfig{}, past, "g");
    std::vector<std::size_t> chosen;
    for (int step = 0; step < 6; ++step) {
      double best = -kInf;
      std::size_t arg = 0;
      for (std::size_t i = 0; i < 20; ++i) {
        if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
        auto trial = chosen;
        trial.push_back(i);
        const double v = std::log(oracle::subset_det(design.diffs, design.weights, base, trial));
        if (v > best) best = v, arg = i;
      }
      chosen.push_back(arg);
    }
    CHECK(r.selected == chosen);
  }
}

TEST_CASE("pa_dopt prefers the direction the past data lacks") {
  // Candidate 0 along e1 (strong), candidate 1 along e2 (weak). The past
  // already holds plenty of e1 information.
  Matrix diffs(2, 2);
  diffs << 2.0, 0.0, 0.0, 1.0;
  const Vector w = Vector::Constant(2, 0.25);
  const auto ids = sequential_ids(2);
  const Matrix past = (Matrix(2, 2) << 100.0, 0.0, 0.0, 0.0).finished();
  const Matrix ridge = Matrix::Identity(2, 2);

  DesignConfig cfg;
  const auto plain = select_by_gradient(diffs, w, ids, 1, cfg, Matrix(), "dopt");
  cfg.mode = DesignMode::kPastAware;
  const auto aware = select_by_gradient(diffs, w, ids, 1, cfg, past, "pa_dopt");
  CHECK(plain.selected == std::vector<std::size_t>{0});
  CHECK(aware.selected == std::vector<std::size_t>{1});

  // Exhaustive single-candidate scoring agrees with both choices.
  CHECK(oracle::subset_det(diffs, w, ridge, {0}) > oracle::subset_det(diffs, w, ridge, {1}));
  CHECK(oracle::subset_det(diffs, w, ridge + past, {1}) > oracle::subset_det(diffs, w, ridge + past, {0}));
}

TEST_CASE("select_dopt: model-level call-through, modes, budget") {
  Rng rng(12);
  const RewardModel m = RewardModel::initialized(3, 6, 4);
  const auto pool = random_pool(rng, 3, 25);
  const auto pf = pair_features(m, pool);

  const auto all = select_dopt(m, pool, 25, DesignConfig{});
  CHECK(as_set(all.selected).size() == 25);
  CHECK(all.strategy == "dopt");
  CHECK(all.scores.size() == 25);

  LabeledDataset past(3);
  for (const auto& p : random_pool(rng, 3, 15, 1000)) past.add(p, make_label(p, 1));
  DesignConfig cfg;
  cfg.mode = DesignMode::kPastAware;
  const auto aware = select_dopt(m, pool, 5, cfg, &past);
  CHECK(aware.strategy == "pa_dopt");
  Vector w(25);
  for (int i = 0; i < 25; ++i) w(i) = bernoulli_variance(pf.reward_gap(i));
  const auto direct =
      select_by_gradient(pf.diffs, w, pool_pair_ids(pool), 5, cfg, past_information(m, past), "pa_dopt");
  CHECK(aware.selected == direct.selected);
  CHECK(aware.scores == direct.scores);

  // Without past data the two modes coincide.
  const auto dopt = select_dopt(m, pool, 5, DesignConfig{});
  const auto pa_empty = select_dopt(m, pool, 5, cfg, nullptr);
  CHECK(dopt.selected == pa_empty.selected);

  CHECK_THROWS_AS(select_dopt(m, pool, 26, DesignConfig{}), Error);
  CHECK_THROWS_AS(select_dopt(m, {}, 1, DesignConfig{}), Error);
  try {
    select_dopt(m, pool, 26, DesignConfig{});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBudgetExceeded);
  }
}

TEST_CASE("select_dopt: pool permutation only changes order through the tie-break") {
  Rng rng(77);
  const RewardModel m = RewardModel::initialized(2, 8, 9);
  auto pool = random_pool(rng, 2, 30);
  // A duplicated candidate creates an exact tie resolved by pair id.
  pool.push_back(make_pair(500, 501, pool[3].left, pool[3].right));
  const auto ref = select_dopt(m, pool, 7, DesignConfig{});
  for (int perm = 0; perm < 5; ++perm) {
    auto shuffled = pool;
    Rng prng(derive_seed(1, perm));
    prng.shuffle(shuffled);
    const auto r = select_dopt(m, shuffled, 7, DesignConfig{});
    CHECK(r.selected_ids() == ref.selected_ids());
  }
}

TEST_CASE("select_by_gradient: opt-in sampling is seeded and distinct") {
  const auto design = oracle::random_design(55, 3, 40);
  const auto ids = sequential_ids(40);
  DesignConfig cfg;
  cfg.sample_by_gradient = true;
  cfg.sample_seed = 10;
  const auto a = select_by_gradient(design.diffs, design.weights, ids, 8, cfg, Matrix(), "dopt");
  const auto b = select_by_gradient(design.diffs, design.weights, ids, 8, cfg, Matrix(), "dopt");
  CHECK(a.selected == b.selected);
  CHECK(as_set(a.selected).size() == 8);
  cfg.sample_seed = 11;
  const auto c = select_by_gradient(design.diffs, design.weights, ids, 8, cfg, Matrix(), "dopt");
  CHECK(c.selected != a.selected);
}

TEST_CASE("DesignConfig validation") {
  DesignConfig cfg;
  cfg.prior_variance = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.prior_variance = 1.0;
  cfg.relative_jitter = -1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
