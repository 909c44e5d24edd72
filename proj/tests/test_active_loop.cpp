#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <memory>
#include <set>
#include <unordered_set>

#include "btal/active_loop.hpp"
#include "btal/worlds.hpp"
#include "test_support.hpp"

using namespace btal;
using btal::test::random_vector;

namespace {

std::shared_ptr<ItemCatalog> make_catalog(std::size_t prompts, std::size_t responses, std::size_t dim,
                                          std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Item> items;
  for (std::size_t p = 0; p < prompts; ++p) {
    for (std::size_t r = 0; r < responses; ++r) {
      Item it;
      it.meta.item_id = static_cast<std::uint32_t>(items.size());
      it.meta.prompt_id = static_cast<std::uint32_t>(p);
      it.meta.response_id = static_cast<std::uint32_t>(r);
      it.embedding = random_vector(rng, dim);
      items.push_back(std::move(it));
    }
  }
  return std::make_shared<ItemCatalog>(dim, std::move(items));
}

std::size_t distinct(const std::vector<ComparisonPair>& pool) {
  std::unordered_set<PairId> ids;
  for (const auto& p : pool) ids.insert(p.id);
  return ids.size();
}

TrainConfig quick_train() {
  TrainConfig t;
  t.hidden = 8;
  t.epochs = 20;
  t.minibatch = 32;
  t.learning_rate = 1e-2;
  t.final_learning_rate = 1e-2;
  return t;
}

AnnotatorSpec planted_annotator(const PlantedLinearWorld& world) {
  AnnotatorSpec spec;
  spec.kind = AnnotatorKind::kGoldenBernoulli;
  spec.golden = [world](const Vector& x, const ItemMeta&) -> std::optional<double> { return world.golden(x); };
  return spec;
}

}  // namespace

TEST_CASE("in-prompt pool: 500 prompts x C(10,2) = 22500 uncapped, 20000 capped") {
  const auto cat = make_catalog(600, 10, 3, 1);
  PoolConfig cfg;
  cfg.pool_cap = std::nullopt;
  const auto full = build_pool(*cat, cfg, 5, nullptr);
  CHECK(full.size() == 22500);
  CHECK(distinct(full) == 22500);
  std::set<std::uint32_t> prompts;
  for (const auto& p : full) {
    CHECK(p.left_meta.prompt_id == p.right_meta.prompt_id);
    CHECK_FALSE(p.cross_prompt);
    prompts.insert(p.left_meta.prompt_id);
  }
  CHECK(prompts.size() == 500);

  cfg.pool_cap = 20000;
  const auto capped = build_pool(*cat, cfg, 5, nullptr);
  CHECK(capped.size() == 20000);
  CHECK(distinct(capped) == 20000);
}

TEST_CASE("in-prompt pool: 3 responses give C(3,2) = 3 pairs; extra responses are subsampled") {
  const auto cat = make_catalog(1, 3, 2, 2);
  PoolConfig cfg;
  cfg.prompts_per_round = 1;
  CHECK(build_pool(*cat, cfg, 1, nullptr).size() == 3);

  const auto big = make_catalog(4, 12, 2, 3);
  cfg.prompts_per_round = 4;
  cfg.responses_per_prompt = 5;
  CHECK(build_pool(*big, cfg, 1, nullptr).size() == 4 * 10);

  const auto lonely = make_catalog(2, 1, 2, 4);
  CHECK_THROWS_AS(build_pool(*lonely, cfg, 1, nullptr), Error);
}

TEST_CASE("cross-prompt pool: distinct pairs, capped, mostly across prompts") {
  const auto cat = make_catalog(500, 10, 3, 5);
  PoolConfig cfg;
  cfg.cross_prompt = true;
  const auto pool = build_pool(*cat, cfg, 9, nullptr);
  CHECK(pool.size() == 20000);
  CHECK(distinct(pool) == 20000);
  std::size_t cross = 0;
  for (const auto& p : pool) {
    CHECK(p.cross_prompt == (p.left_meta.prompt_id != p.right_meta.prompt_id));
    cross += p.cross_prompt ? 1 : 0;
  }
  CHECK(cross > 19000);

  // Dense regime: every pair of 20 items is available.
  const auto small = make_catalog(4, 5, 2, 6);
  const auto all = build_pool(*small, cfg, 1, nullptr);
  CHECK(all.size() == 190);
  CHECK(distinct(all) == 190);
}

TEST_CASE("pools are deterministic in the seed and skip excluded pairs") {
  const auto cat = make_catalog(50, 6, 2, 7);
  PoolConfig cfg;
  cfg.prompts_per_round = 20;
  for (bool cross : {false, true}) {
    cfg.cross_prompt = cross;
    cfg.pool_cap = cross ? std::optional<std::size_t>(100) : std::nullopt;
    const auto a = build_pool(*cat, cfg, 3, nullptr);
    const auto b = build_pool(*cat, cfg, 3, nullptr);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].id == b[i].id);
    std::unordered_set<PairId> exclude;
    for (std::size_t i = 0; i < a.size(); i += 2) exclude.insert(a[i].id);
    for (const auto& p : build_pool(*cat, cfg, 3, &exclude)) CHECK_FALSE(exclude.count(p.id));
  }
}

TEST_CASE("pool config validation") {
  PoolConfig cfg;
  cfg.responses_per_prompt = 1;
  CHECK_THROWS_AS(cfg.validate(1), Error);
  cfg = {};
  cfg.pool_cap = 0;
  CHECK_THROWS_AS(cfg.validate(1), Error);
  cfg = {};
  cfg.pool_cap = 10;
  CHECK_THROWS_AS(cfg.validate(11), Error);
  CHECK_NOTHROW(cfg.validate(10));
}

TEST_CASE("annotate: Bernoulli frequency, deterministic variant, imported, per-pair seeding") {
  const auto world = PlantedLinearWorld::make(2, 1);
  Item a;
  a.meta.item_id = 0;
  a.embedding = world.beta * 0.5;
  Item b;
  b.meta.item_id = 1;
  b.embedding = -world.beta * 0.5;
  std::vector<ComparisonPair> pairs;
  const auto spec = planted_annotator(world);
  int wins = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto pair = make_comparison(a, b);
    wins += annotate(std::span(&pair, 1), spec, derive_seed(99, i))[0].outcome;
  }
  CHECK(std::abs(wins / double(n) - sigmoid(1.0)) < 0.01);

  // Equal rewards give 0.5, a gap of ln 3 gives 0.75.
  for (double gap : {0.0, std::log(3.0)}) {
    Item u = a;
    Item v = b;
    u.embedding = world.beta * gap;
    v.embedding = Vector::Zero(2);
    const auto pair = make_comparison(u, v);
    int left = 0;
    for (int i = 0; i < 10000; ++i) left += annotate(std::span(&pair, 1), spec, derive_seed(7, i))[0].outcome;
    CHECK(std::abs(left / 10000.0 - sigmoid(gap)) < 0.02);
  }

  // The deterministic annotator only looks at the order of golden rewards.
  AnnotatorSpec affine = spec;
  affine.kind = AnnotatorKind::kGoldenDeterministic;
  affine.golden = [world](const Vector& x, const ItemMeta&) -> std::optional<double> {
    return 3.0 * world.golden(x) + 11.0;
  };

  const auto pair = make_comparison(b, a);
  AnnotatorSpec det = spec;
  det.kind = AnnotatorKind::kGoldenDeterministic;
  CHECK(annotate(std::span(&pair, 1), det, 0)[0].outcome == 0);
  {
    Rng r(8);
    for (int i = 0; i < 50; ++i) {
      Item u = a;
      Item v = b;
      u.embedding = random_vector(r, 2);
      v.embedding = random_vector(r, 2);
      const auto q = make_comparison(u, v);
      CHECK(annotate(std::span(&q, 1), det, 0)[0].outcome == annotate(std::span(&q, 1), affine, 0)[0].outcome);
    }
  }

  // Labels depend on the pair id only, not on batch composition.
  const auto cat = make_catalog(1, 8, 2, 11);
  PoolConfig cfg;
  cfg.prompts_per_round = 1;
  const auto pool = build_pool(*cat, cfg, 1, nullptr);
  const auto all = annotate(pool, spec, 5);
  const auto tail = annotate(std::span(pool).subspan(10), spec, 5);
  for (std::size_t i = 0; i < tail.size(); ++i) CHECK(tail[i].outcome == all[10 + i].outcome);

  AnnotatorSpec imported;
  imported.kind = AnnotatorKind::kImported;
  imported.imported[pool[0].id] = 1;
  CHECK(annotate(std::span(pool).first(1), imported, 0)[0].outcome == 1);
  const auto flipped = swapped(pool[0]);
  CHECK(annotate(std::span(&flipped, 1), imported, 0)[0].outcome == 0);
  CHECK_THROWS_AS(annotate(std::span(pool).subspan(1, 1), imported, 0), Error);
  AnnotatorSpec human;
  human.kind = AnnotatorKind::kHumanSession;
  CHECK_THROWS_AS(annotate(std::span(pool).first(1), human, 0), Error);
  CHECK(annotator_from_string("golden_bernoulli") == AnnotatorKind::kGoldenBernoulli);
  CHECK_THROWS_AS(annotator_from_string("oracle"), Error);
}

TEST_CASE("loop: bootstrap plus rounds, disjoint batches, selector sees the previous round") {
  const auto world = PlantedLinearWorld::make(3, 4);
  auto cat = make_catalog(40, 6, 3, 12);
  PoolConfig pcfg;
  pcfg.prompts_per_round = 20;
  pcfg.pool_cap = 200;
  LoopConfig cfg;
  cfg.strategy = StrategyKind::kDopt;
  cfg.batch_size = 10;
  cfg.rounds = 3;
  cfg.train = quick_train();
  cfg.seed = 21;

  std::vector<std::size_t> seen_sizes;
  std::vector<std::size_t> seen_models;
  std::vector<Vector> previous_heads;
  LoopHooks hooks;
  hooks.selector = [&](StrategyKind kind, std::span<const ComparisonPair> pool, std::size_t c,
                       const StrategyContext& ctx) {
    seen_sizes.push_back(ctx.past->size());
    previous_heads.push_back(ctx.model->parameters());
    for (const auto& p : pool) CHECK_FALSE(ctx.past->contains(p.id));
    return select_pairs(kind, pool, c, ctx);
  };
  std::vector<Vector> trained;
  hooks.on_round = [&](const RoundRecord& rec, const LabeledDataset& data) {
    CHECK(rec.n_labels == data.size());
    trained.push_back(rec.model.parameters());
  };

  CatalogPoolSource pools(cat, pcfg);
  const auto trace = run_active_learning({}, pools, planted_annotator(world), nullptr, cfg, hooks);
  REQUIRE(trace.rounds.size() == 4);
  CHECK(trace.data.size() == 40);
  CHECK(seen_sizes == std::vector<std::size_t>{10, 20, 30});
  for (std::size_t s = 0; s < 3; ++s) CHECK(previous_heads[s] == trained[s]);
  std::unordered_set<PairId> all;
  for (const auto& r : trace.rounds) {
    CHECK(r.selected_pairs.size() == 10);
    CHECK(r.n_labels == 10 * (r.round + 1));
    for (const auto& p : r.selected_pairs) CHECK(all.insert(p.id).second);
  }
  CHECK(trace.rounds[1].selection.strategy == "dopt");

  // Same seed, same run.
  CatalogPoolSource again(cat, pcfg);
  const auto trace2 = run_active_learning({}, again, planted_annotator(world), nullptr, cfg, {});
  for (std::size_t s = 0; s < 4; ++s) {
    REQUIRE(trace2.rounds[s].selected_pairs.size() == trace.rounds[s].selected_pairs.size());
    for (std::size_t i = 0; i < trace.rounds[s].selected_pairs.size(); ++i) {
      CHECK(trace2.rounds[s].selected_pairs[i].id == trace.rounds[s].selected_pairs[i].id);
      CHECK(trace2.rounds[s].labels[i].outcome == trace.rounds[s].labels[i].outcome);
    }
    CHECK(trace2.rounds[s].model.parameters() == trace.rounds[s].model.parameters());
  }
}

TEST_CASE("loop: one random round with c = pool size labels the whole pool") {
  const auto world = PlantedLinearWorld::make(3, 5);
  auto cat = make_catalog(4, 4, 3, 13);
  PoolConfig pcfg;
  pcfg.prompts_per_round = 4;
  pcfg.pool_cap = std::nullopt;
  LabeledDataset initial(3);
  LoopConfig cfg;
  cfg.batch_size = 24;
  cfg.rounds = 1;
  cfg.train = quick_train();
  CatalogPoolSource pools(cat, pcfg);
  // Seed D_0 with one pair so the bootstrap is skipped; round 1 then takes the rest.
  auto first = build_pool(*cat, pcfg, 0, nullptr);
  initial.add(first[0], PreferenceLabel{first[0].id, 1, LabelSource::kSimulated, 0});
  cfg.batch_size = first.size() - 1;
  const auto trace = run_active_learning(initial, pools, planted_annotator(world), nullptr, cfg, {});
  CHECK(trace.rounds[0].selected_pairs.empty());
  CHECK(trace.rounds[1].pool_size == first.size() - 1);
  CHECK(trace.data.size() == first.size());
}

TEST_CASE("loop: sampled-point pools, evaluation metrics, errors carry the round") {
  BimodalWorld2D world;
  SampledPointPoolSource pools(
      2, [&](Rng& rng, std::size_t n) { return world.sample_points(rng, n); }, 60, 500);
  AnnotatorSpec spec;
  spec.kind = AnnotatorKind::kGoldenBernoulli;
  spec.golden = [&](const Vector& x, const ItemMeta&) -> std::optional<double> { return world.golden(x); };
  TestPromptSet test;
  TestPrompt tp;
  tp.embeddings = grid_points_2d(7, -3.0, 3.0);
  tp.golden = Vector(tp.embeddings.cols());
  for (Eigen::Index k = 0; k < tp.golden.size(); ++k) tp.golden(k) = world.golden(Vector(tp.embeddings.col(k)));
  test.prompts.push_back(tp);

  LoopConfig cfg;
  cfg.strategy = StrategyKind::kEntropy;
  cfg.batch_size = 20;
  cfg.rounds = 2;
  cfg.train = quick_train();
  const auto trace = run_active_learning({}, pools, spec, &test, cfg, {});
  REQUIRE(trace.rounds.size() == 3);
  for (const auto& r : trace.rounds) {
    REQUIRE(r.metrics.has_value());
    CHECK(r.metrics->one_minus_spearman >= 0.0);
    CHECK(r.metrics->one_minus_spearman <= 2.0);
    CHECK(std::isfinite(r.metrics->best_of_n));
    CHECK(r.pool_size == 500);
  }
  // Item ids keep growing across rounds, so no pair id repeats.
  CHECK(pools.last_catalog().at(0).meta.item_id == 120);

  LoopConfig bad = cfg;
  bad.batch_size = 501;
  try {
    run_active_learning({}, pools, spec, nullptr, bad, {});
    FAIL("oversized batch accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBudgetExceeded);
    CHECK(std::string(e.what()).rfind("round 0", 0) == 0);
  }
}
