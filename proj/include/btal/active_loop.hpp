#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "btal/baseline_strategies.hpp"
#include "btal/bt_core.hpp"
#include "btal/dataset_io.hpp"
#include "btal/eval_metrics.hpp"
#include "btal/selection.hpp"

namespace btal {

struct PoolConfig {
  std::size_t prompts_per_round = 500;
  /// Responses drawn per sampled prompt (all of them when a prompt has fewer).
  std::size_t responses_per_prompt = 10;
  bool cross_prompt = false;
  /// Maximum pool size in either mode; nullopt keeps every candidate pair.
  std::optional<std::size_t> pool_cap = 20000;

  void validate(std::size_t batch_size) const;
};

/// One prompt/response candidate with its embedding. item_id must be unique
/// within a catalog; pair ids are built from item ids.
struct Item {
  ItemMeta meta;
  Vector embedding;
};

class ItemCatalog {
 public:
  ItemCatalog() = default;
  ItemCatalog(std::size_t dim, std::vector<Item> items);

  /// Items numbered by record index.
  static ItemCatalog from_dataset(const EmbeddingDataset& ds);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return items_.size(); }
  const std::vector<Item>& items() const { return items_; }
  /// Prompt ids in ascending order with the indices of their items.
  const std::map<std::uint32_t, std::vector<std::size_t>>& by_prompt() const { return by_prompt_; }
  const Item& at(std::size_t index) const { return items_.at(index); }
  /// nullptr when unknown.
  const Item* find(std::uint32_t item_id) const;

 private:
  std::size_t dim_ = 0;
  std::vector<Item> items_;
  std::map<std::uint32_t, std::vector<std::size_t>> by_prompt_;
  std::unordered_map<std::uint32_t, std::size_t> index_;
};

ComparisonPair make_comparison(const Item& a, const Item& b);

/// Candidate pairs for one round. In-prompt: all C(R, 2) pairs of R sampled
/// responses for each of the sampled prompts. Cross-prompt: uniform distinct
/// unordered pairs over all items of the sampled prompts. Both modes are
/// then capped at pool_cap by seeded subsampling. Pairs listed in `exclude`
/// never appear.
std::vector<ComparisonPair> build_pool(const ItemCatalog& catalog, const PoolConfig& config, std::uint64_t seed,
                                       const std::unordered_set<PairId>* exclude = nullptr);

enum class AnnotatorKind { kGoldenBernoulli, kGoldenDeterministic, kHumanSession, kImported };

std::string to_string(AnnotatorKind kind);
AnnotatorKind annotator_from_string(std::string_view name);

/// Golden reward for one side of a pair; nullopt when unavailable.
using GoldenOracle = std::function<std::optional<double>(const Vector& embedding, const ItemMeta& meta)>;

struct AnnotatorSpec {
  AnnotatorKind kind = AnnotatorKind::kGoldenBernoulli;
  GoldenOracle golden;
  /// For kImported: pair id -> outcome.
  /// Outcome 1 means the item PairId::first_item() (the lower id) won; it is
  /// flipped for pairs presented the other way round.
  std::unordered_map<PairId, int> imported;
};

/// Bernoulli draws are keyed by (seed, pair id), so a pair's label does not
/// depend on which other pairs are annotated alongside it.
std::vector<PreferenceLabel> annotate(std::span<const ComparisonPair> pairs, const AnnotatorSpec& spec,
                                      std::uint64_t seed);

/// Supplies each round's candidate pool.
class PoolSource {
 public:
  virtual ~PoolSource() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<ComparisonPair> pool(std::size_t round, std::uint64_t seed,
                                           const std::unordered_set<PairId>& labeled) = 0;
};

class CatalogPoolSource : public PoolSource {
 public:
  CatalogPoolSource(std::shared_ptr<const ItemCatalog> catalog, PoolConfig config);
  std::size_t dim() const override { return catalog_->dim(); }
  std::vector<ComparisonPair> pool(std::size_t round, std::uint64_t seed,
                                   const std::unordered_set<PairId>& labeled) override;
  const ItemCatalog& catalog() const { return *catalog_; }

 private:
  std::shared_ptr<const ItemCatalog> catalog_;
  PoolConfig config_;
};

/// Fresh candidate points every round (as in the 2D world): `points` items,
/// each its own prompt, with a cross-prompt pool of up to pool_cap pairs.
/// Item ids continue across rounds so pair ids never collide.
class SampledPointPoolSource : public PoolSource {
 public:
  using Sampler = std::function<Matrix(Rng&, std::size_t)>;
  SampledPointPoolSource(std::size_t dim, Sampler sampler, std::size_t points, std::size_t pool_cap);
  std::size_t dim() const override { return dim_; }
  std::vector<ComparisonPair> pool(std::size_t round, std::uint64_t seed,
                                   const std::unordered_set<PairId>& labeled) override;
  /// The items drawn for the most recent pool.
  const ItemCatalog& last_catalog() const { return last_; }

 private:
  std::size_t dim_;
  Sampler sampler_;
  std::size_t points_;
  std::size_t pool_cap_;
  ItemCatalog last_;
};

struct LoopConfig {
  StrategyKind strategy = StrategyKind::kRandom;
  std::size_t batch_size = 125;
  std::size_t rounds = 1;
  TrainConfig train;
  DesignConfig design;
  CoresetConfig coreset;
  BatchBaldConfig batchbald;
  /// N for best-of-N; 0 uses every generation of the smallest test prompt.
  std::size_t best_of_n = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RoundRecord {
  std::size_t round = 0;
  std::size_t pool_size = 0;
  SelectionResult selection;
  std::vector<ComparisonPair> selected_pairs;
  std::vector<PreferenceLabel> labels;
  std::size_t n_labels = 0;  // |D_s|
  RewardModel model{1, 1};   // M_s, trained from scratch on D_s
  std::vector<double> loss_trace;
  std::optional<EvalResult> metrics;
};

struct RunTrace {
  std::vector<RoundRecord> rounds;  // rounds[0] is the bootstrap round
  LabeledDataset data;
};

using Selector = std::function<SelectionResult(StrategyKind, std::span<const ComparisonPair>, std::size_t,
                                               const StrategyContext&)>;

struct LoopHooks {
  /// Replaces select_pairs, e.g. to record what each selection saw.
  Selector selector;
  /// Called after every round (including round 0) has been trained and
  /// evaluated.
  std::function<void(const RoundRecord&, const LabeledDataset&)> on_round;
};

/// Round 0 trains M_0 on `initial`, or on a seeded random batch of c pairs
/// when `initial` is empty. Rounds 1..n each build a pool, select c pairs with
/// M_{s-1} and D_{s-1}, annotate them, add them to D and retrain from scratch.
RunTrace run_active_learning(const LabeledDataset& initial, PoolSource& pools, const AnnotatorSpec& annotator,
                             const TestPromptSet* test, const LoopConfig& config, const LoopHooks& hooks = {});

/// Seed streams used by the loop, exposed so other drivers (the annotation
/// service) reproduce the same per-round draws.
namespace seeds {
inline constexpr std::uint64_t kPool = 0x9001;
inline constexpr std::uint64_t kSelect = 0x5e1e;
inline constexpr std::uint64_t kLabel = 0x1abe;
inline constexpr std::uint64_t kTrain = 0x7a1b;
inline constexpr std::uint64_t kBootstrap = 0xb007;
}  // namespace seeds

}  // namespace btal
