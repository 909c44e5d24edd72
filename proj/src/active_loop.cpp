#include "btal/active_loop.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "btal/rng.hpp"

namespace btal {

namespace {

std::vector<ComparisonPair> subsample(std::vector<ComparisonPair> pool, std::size_t cap, Rng& rng) {
  if (pool.size() <= cap) return pool;
  auto keep = rng.sample_without_replacement(pool.size(), cap);
  std::sort(keep.begin(), keep.end());
  std::vector<ComparisonPair> out;
  out.reserve(cap);
  for (auto i : keep) out.push_back(std::move(pool[i]));
  return out;
}

bool excluded(const std::unordered_set<PairId>* exclude, PairId id) {
  return exclude != nullptr && exclude->count(id) > 0;
}

std::vector<ComparisonPair> all_pairs(const ItemCatalog& catalog, const std::vector<std::size_t>& items,
                                      const std::unordered_set<PairId>* exclude) {
  std::vector<ComparisonPair> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      const auto& a = catalog.at(items[i]);
      const auto& b = catalog.at(items[j]);
      if (excluded(exclude, PairId::from_items(a.meta.item_id, b.meta.item_id))) continue;
      out.push_back(make_comparison(a, b));
    }
  }
  return out;
}

Error with_round(const Error& e, std::size_t round) {
  return Error(e.code(), "round " + std::to_string(round) + ": " + e.what());
}

}  // namespace

void PoolConfig::validate(std::size_t batch_size) const {
  if (prompts_per_round < 1) throw Error(ErrorCode::kConfig, "prompts_per_round must be at least 1");
  if (responses_per_prompt < 2) throw Error(ErrorCode::kConfig, "responses_per_prompt must be at least 2");
  if (pool_cap && *pool_cap < 1) throw Error(ErrorCode::kConfig, "pool_cap must be at least 1");
  if (pool_cap && *pool_cap < batch_size) {
    throw Error(ErrorCode::kConfig, "pool_cap " + std::to_string(*pool_cap) + " is below the batch size " +
                                        std::to_string(batch_size));
  }
}

ItemCatalog::ItemCatalog(std::size_t dim, std::vector<Item> items) : dim_(dim), items_(std::move(items)) {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& it = items_[i];
    if (static_cast<std::size_t>(it.embedding.size()) != dim_) {
      throw Error(ErrorCode::kRecordDimMismatch, "item " + std::to_string(i) + " has dim " +
                                                     std::to_string(it.embedding.size()));
    }
    if (!index_.emplace(it.meta.item_id, i).second) {
      throw Error(ErrorCode::kConflict, "duplicate item id " + std::to_string(it.meta.item_id));
    }
    by_prompt_[it.meta.prompt_id].push_back(i);
  }
}

ItemCatalog ItemCatalog::from_dataset(const EmbeddingDataset& ds) {
  ds.validate();
  std::vector<Item> items;
  items.reserve(ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    Item it;
    it.meta.item_id = static_cast<std::uint32_t>(i);
    it.meta.prompt_id = r.prompt_id;
    it.meta.response_id = r.response_id;
    it.meta.text = r.text.value_or("");
    it.embedding = r.embedding;
    items.push_back(std::move(it));
  }
  return ItemCatalog(ds.dim, std::move(items));
}

const Item* ItemCatalog::find(std::uint32_t item_id) const {
  const auto it = index_.find(item_id);
  return it == index_.end() ? nullptr : &items_[it->second];
}

ComparisonPair make_comparison(const Item& a, const Item& b) {
  if (a.meta.item_id == b.meta.item_id) throw Error(ErrorCode::kInvalidArgument, "self-pair");
  ComparisonPair p;
  p.id = PairId::from_items(a.meta.item_id, b.meta.item_id);
  p.left = a.embedding;
  p.right = b.embedding;
  p.left_meta = a.meta;
  p.right_meta = b.meta;
  p.cross_prompt = a.meta.prompt_id != b.meta.prompt_id;
  return p;
}

std::vector<ComparisonPair> build_pool(const ItemCatalog& catalog, const PoolConfig& config, std::uint64_t seed,
                                       const std::unordered_set<PairId>* exclude) {
  config.validate(1);
  if (catalog.size() < 2) throw Error(ErrorCode::kEmptyDataset, "catalog needs at least 2 items");
  Rng rng(seed);
  std::vector<std::uint32_t> prompts;
  for (const auto& [pid, items] : catalog.by_prompt()) prompts.push_back(pid);
  const std::size_t n_prompts = std::min(config.prompts_per_round, prompts.size());
  auto pick = rng.sample_without_replacement(prompts.size(), n_prompts);
  std::sort(pick.begin(), pick.end());

  if (!config.cross_prompt) {
    std::vector<ComparisonPair> pool;
    for (auto pi : pick) {
      const auto& items = catalog.by_prompt().at(prompts[pi]);
      if (items.size() < 2) {
        throw Error(ErrorCode::kInvalidArgument,
                    "prompt " + std::to_string(prompts[pi]) + " has fewer than 2 responses");
      }
      std::vector<std::size_t> chosen = items;
      if (items.size() > config.responses_per_prompt) {
        auto sub = rng.sample_without_replacement(items.size(), config.responses_per_prompt);
        std::sort(sub.begin(), sub.end());
        chosen.clear();
        for (auto k : sub) chosen.push_back(items[k]);
      }
      auto pairs = all_pairs(catalog, chosen, exclude);
      std::move(pairs.begin(), pairs.end(), std::back_inserter(pool));
    }
    return config.pool_cap ? subsample(std::move(pool), *config.pool_cap, rng) : pool;
  }

  std::vector<std::size_t> items;
  for (auto pi : pick) {
    const auto& its = catalog.by_prompt().at(prompts[pi]);
    if (its.size() > config.responses_per_prompt) {
      auto sub = rng.sample_without_replacement(its.size(), config.responses_per_prompt);
      std::sort(sub.begin(), sub.end());
      for (auto k : sub) items.push_back(its[k]);
    } else {
      items.insert(items.end(), its.begin(), its.end());
    }
  }
  const std::uint64_t n = items.size();
  const std::uint64_t total = n * (n - 1) / 2;
  if (!config.pool_cap || 2 * static_cast<std::uint64_t>(*config.pool_cap) >= total) {
    auto pool = all_pairs(catalog, items, exclude);
    return config.pool_cap ? subsample(std::move(pool), *config.pool_cap, rng) : pool;
  }
  // Sparse regime: rejection-sample distinct unordered pairs.
  const std::size_t cap = *config.pool_cap;
  std::vector<ComparisonPair> pool;
  pool.reserve(cap);
  std::unordered_set<PairId> seen;
  seen.reserve(2 * cap);
  const std::uint64_t max_draws = 50ull * cap + 1000;
  for (std::uint64_t draw = 0; pool.size() < cap && draw < max_draws; ++draw) {
    const auto a = static_cast<std::size_t>(rng.below(n));
    const auto b = static_cast<std::size_t>(rng.below(n));
    if (a == b) continue;
    const auto& ia = catalog.at(items[a]);
    const auto& ib = catalog.at(items[b]);
    const PairId id = PairId::from_items(ia.meta.item_id, ib.meta.item_id);
    if (excluded(exclude, id) || !seen.insert(id).second) continue;
    pool.push_back(make_comparison(ia, ib));
  }
  return pool;
}

std::string to_string(AnnotatorKind kind) {
  switch (kind) {
    case AnnotatorKind::kGoldenBernoulli:
      return "golden_bernoulli";
    case AnnotatorKind::kGoldenDeterministic:
      return "golden_deterministic";
    case AnnotatorKind::kHumanSession:
      return "human_session";
    case AnnotatorKind::kImported:
      return "imported";
  }
  return "unknown";
}

AnnotatorKind annotator_from_string(std::string_view name) {
  for (auto k : {AnnotatorKind::kGoldenBernoulli, AnnotatorKind::kGoldenDeterministic, AnnotatorKind::kHumanSession,
                 AnnotatorKind::kImported}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::kConfig, "unknown annotator '" + std::string(name) + "'");
}

std::vector<PreferenceLabel> annotate(std::span<const ComparisonPair> pairs, const AnnotatorSpec& spec,
                                      std::uint64_t seed) {
  std::vector<PreferenceLabel> out;
  out.reserve(pairs.size());
  auto golden = [&](const Vector& x, const ItemMeta& meta) {
    if (!spec.golden) throw Error(ErrorCode::kConfig, "annotator " + to_string(spec.kind) + " needs a golden oracle");
    const auto g = spec.golden(x, meta);
    if (!g) throw Error(ErrorCode::kNotFound, "no golden reward for item " + std::to_string(meta.item_id));
    return *g;
  };
  for (const auto& p : pairs) {
    PreferenceLabel l;
    l.pair_id = p.id;
    switch (spec.kind) {
      case AnnotatorKind::kGoldenBernoulli: {
        const double prob = sigmoid(golden(p.left, p.left_meta) - golden(p.right, p.right_meta));
        Rng rng(derive_seed(seed, p.id.value));
        l.outcome = rng.bernoulli(prob) ? 1 : 0;
        l.annotator = LabelSource::kSimulated;
        break;
      }
      case AnnotatorKind::kGoldenDeterministic:
        l.outcome = golden(p.left, p.left_meta) > golden(p.right, p.right_meta) ? 1 : 0;
        l.annotator = LabelSource::kSimulated;
        break;
      case AnnotatorKind::kImported: {
        const auto it = spec.imported.find(p.id);
        if (it == spec.imported.end()) {
          throw Error(ErrorCode::kNotFound, "no imported label for pair " + std::to_string(p.id.value));
        }
        l.outcome = p.left_meta.item_id == p.id.first_item() ? it->second : 1 - it->second;
        l.annotator = LabelSource::kImported;
        break;
      }
      case AnnotatorKind::kHumanSession:
        throw Error(ErrorCode::kUnsupported, "human labels arrive through the annotation service");
    }
    out.push_back(l);
  }
  return out;
}

CatalogPoolSource::CatalogPoolSource(std::shared_ptr<const ItemCatalog> catalog, PoolConfig config)
    : catalog_(std::move(catalog)), config_(config) {
  if (!catalog_) throw Error(ErrorCode::kInvalidArgument, "null catalog");
}

std::vector<ComparisonPair> CatalogPoolSource::pool(std::size_t, std::uint64_t seed,
                                                    const std::unordered_set<PairId>& labeled) {
  return build_pool(*catalog_, config_, seed, &labeled);
}

SampledPointPoolSource::SampledPointPoolSource(std::size_t dim, Sampler sampler, std::size_t points,
                                               std::size_t pool_cap)
    : dim_(dim), sampler_(std::move(sampler)), points_(points), pool_cap_(pool_cap) {
  if (points_ < 2) throw Error(ErrorCode::kConfig, "need at least 2 candidate points");
  if (pool_cap_ < 1) throw Error(ErrorCode::kConfig, "pool_cap must be at least 1");
}

std::vector<ComparisonPair> SampledPointPoolSource::pool(std::size_t round, std::uint64_t seed,
                                                         const std::unordered_set<PairId>& labeled) {
  Rng rng(derive_seed(seed, 0x9017));
  const Matrix pts = sampler_(rng, points_);
  if (static_cast<std::size_t>(pts.rows()) != dim_ || static_cast<std::size_t>(pts.cols()) != points_) {
    throw Error(ErrorCode::kDimensionMismatch, "point sampler returned the wrong shape");
  }
  std::vector<Item> items(points_);
  for (std::size_t i = 0; i < points_; ++i) {
    const auto id = static_cast<std::uint32_t>(round * points_ + i);
    items[i].meta.item_id = id;
    items[i].meta.prompt_id = id;
    items[i].embedding = pts.col(static_cast<Eigen::Index>(i));
  }
  last_ = ItemCatalog(dim_, std::move(items));
  PoolConfig cfg;
  cfg.prompts_per_round = points_;
  cfg.responses_per_prompt = 2;
  cfg.cross_prompt = true;
  cfg.pool_cap = pool_cap_;
  return build_pool(last_, cfg, derive_seed(seed, 0x9018), &labeled);
}

void LoopConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorCode::kConfig, "batch_size must be at least 1");
  train.validate();
  design.validate();
  coreset.validate();
  batchbald.validate();
}

RunTrace run_active_learning(const LabeledDataset& initial, PoolSource& pools, const AnnotatorSpec& annotator,
                             const TestPromptSet* test, const LoopConfig& config, const LoopHooks& hooks) {
  config.validate();
  if (test != nullptr) test->validate();
  std::size_t n_best = config.best_of_n;
  if (test != nullptr && n_best == 0) {
    n_best = std::numeric_limits<std::size_t>::max();
    for (const auto& tp : test->prompts) n_best = std::min(n_best, tp.size());
  }

  RunTrace trace;
  trace.data = initial.dim() == 0 ? LabeledDataset(pools.dim()) : initial;
  std::unordered_set<PairId> labeled;
  for (const auto& e : trace.data.entries()) labeled.insert(e.pair.id);
  const std::uint64_t label_seed = derive_seed(config.seed, seeds::kLabel);

  auto add_labels = [&](RoundRecord& rec) {
    rec.labels = annotate(rec.selected_pairs, annotator, label_seed);
    for (std::size_t i = 0; i < rec.selected_pairs.size(); ++i) {
      trace.data.add(rec.selected_pairs[i], rec.labels[i]);
      labeled.insert(rec.selected_pairs[i].id);
    }
  };
  auto finish_round = [&](RoundRecord& rec) {
    auto tr = train_with_trace(trace.data, config.train, derive_seed(config.seed, seeds::kTrain, rec.round));
    rec.model = std::move(tr.model);
    rec.loss_trace = std::move(tr.loss_trace);
    rec.n_labels = trace.data.size();
    if (test != nullptr) rec.metrics = evaluate(rec.model, *test, n_best);
    if (hooks.on_round) hooks.on_round(rec, trace.data);
    trace.rounds.push_back(std::move(rec));
  };

  {
    RoundRecord rec;
    rec.round = 0;
    try {
      if (trace.data.empty()) {
        auto pool = pools.pool(0, derive_seed(config.seed, seeds::kPool, 0), labeled);
        rec.pool_size = pool.size();
        rec.selection = select_random(pool, config.batch_size, derive_seed(config.seed, seeds::kBootstrap));
        for (auto i : rec.selection.selected) rec.selected_pairs.push_back(pool[i]);
        add_labels(rec);
      }
      finish_round(rec);
    } catch (const Error& e) {
      throw with_round(e, 0);
    }
  }

  for (std::size_t s = 1; s <= config.rounds; ++s) {
    RoundRecord rec;
    rec.round = s;
    try {
      auto pool = pools.pool(s, derive_seed(config.seed, seeds::kPool, s), labeled);
      rec.pool_size = pool.size();
      StrategyContext ctx;
      ctx.model = &trace.rounds.back().model;
      ctx.past = &trace.data;
      ctx.design = config.design;
      ctx.coreset = config.coreset;
      ctx.batchbald = config.batchbald;
      ctx.seed = derive_seed(config.seed, seeds::kSelect, s);
      rec.selection = hooks.selector ? hooks.selector(config.strategy, pool, config.batch_size, ctx)
                                     : select_pairs(config.strategy, pool, config.batch_size, ctx);
      for (auto i : rec.selection.selected) rec.selected_pairs.push_back(pool.at(i));
      add_labels(rec);
      finish_round(rec);
    } catch (const Error& e) {
      throw with_round(e, s);
    }
    spdlog::debug("round {} done: {} labels", s, trace.data.size());
  }
  return trace;
}

}  // namespace btal
