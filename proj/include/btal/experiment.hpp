#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "btal/config.hpp"
#include "btal/run_artifact.hpp"

namespace btal {

/// Everything one seeded run needs. Pool sources can be stateful, so build a
/// fresh world per run.
struct ExperimentWorld {
  std::unique_ptr<PoolSource> pools;
  AnnotatorSpec annotator;
  std::optional<TestPromptSet> test;
  std::size_t dim = 0;
};

ExperimentWorld make_world(const ExperimentConfig& config);

/// Candidate side of a round as seen by the selector (model M_{s-1}).
struct SelectionObservation {
  std::size_t round = 0;
  std::span<const ComparisonPair> pool;
  const SelectionResult* result = nullptr;
  const RewardModel* model = nullptr;
  const PoolSource* source = nullptr;
};
using SelectionObserver = std::function<void(const SelectionObservation&)>;

/// Runs the loop for one seed. With a nonempty `out_dir`, writes the run
/// artifact there (and the 2D plot data for bimodal_2d worlds).
RunTrace run_experiment_seed(const ExperimentConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir,
                             const SelectionObserver& observer = {});

/// Runs every seed into output_path()/seed_<s>; stops at the first failure.
void run_experiment(const ExperimentConfig& config);

// 2D bimodal experiment: 4 rounds of 200 comparisons, 1000 fresh standard
// normal candidate points per round, a seeded pool of 20000 point pairs and a
// 16-unit reward MLP.
inline constexpr std::size_t k2DRounds = 4;
inline constexpr std::size_t k2DBatch = 200;
inline constexpr std::size_t k2DPoints = 1000;
inline constexpr std::size_t k2DPoolCap = 20000;
inline constexpr std::size_t k2DHidden = 16;
/// Heat-map grid for plots: kHeatmapSide^2 points over [-4, 4]^2.
inline constexpr std::size_t kHeatmapSide = 41;

ExperimentConfig make_2d_config(StrategyKind strategy);

struct Round2D {
  std::size_t round = 0;
  std::size_t candidate_points = 0;
  std::size_t pool_size = 0;
  std::size_t selected = 0;
  /// Mean |p_hat - 0.5| under M_{s-1} over the pool and over the selection.
  double pool_mean_abs_margin = 0.0;
  double selected_mean_abs_margin = 0.0;
};

struct Experiment2DResult {
  ExperimentConfig config;
  RunTrace trace;
  std::vector<Round2D> rounds;
};

Experiment2DResult run_2d_experiment(StrategyKind strategy, std::uint64_t seed,
                                     const std::filesystem::path& out_dir = {});

/// Writes plot2d/golden.csv, and per round s >= 1 the heat map of M_{s-1}
/// (plot2d/heatmap_round_XXX.csv: x,y,reward) and the selected segments
/// (plot2d/pairs_round_XXX.csv: pair_id,x1,y1,x2,y2,outcome).
void write_2d_round(const std::filesystem::path& dir, const RoundRecord& record, const RewardModel& previous);
void write_2d_golden(const std::filesystem::path& dir);

struct SweepRun {
  std::string label;  // <strategy>_c<batch>_<in|cross>
  ExperimentConfig config;
  std::uint64_t seed = 0;
};

std::vector<SweepRun> expand_sweep(const ExperimentConfig& config);

struct SweepOutcome {
  std::size_t runs = 0;
  std::size_t failures = 0;
};

/// Runs the cartesian product on `jobs` worker threads into
/// output_path()/<label>/seed_<s>, then writes sweep.csv (one row per round per
/// run), summary.csv (mean and sd per configuration and round) and
/// failures.csv. Failed runs are recorded and skipped.
SweepOutcome run_sweep(const ExperimentConfig& config, std::size_t jobs);

inline constexpr const char* kSweepHeader =
    "label,strategy,batch_size,cross_prompt,seed,round,n_labels,one_minus_spearman,best_of_n";
inline constexpr const char* kSummaryHeader =
    "label,strategy,batch_size,cross_prompt,round,n_labels,runs,mean_one_minus_spearman,sd_one_minus_spearman,"
    "mean_best_of_n,sd_best_of_n";

}  // namespace btal
