#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "btal/active_loop.hpp"

namespace btal {

enum class WorldKind { kPlantedLinear, kBimodal2D, kDataset };

std::string to_string(WorldKind kind);
WorldKind world_from_string(std::string_view name);

struct WorldConfig {
  WorldKind kind = WorldKind::kPlantedLinear;
  std::uint64_t seed = 1;
  // planted_linear
  std::size_t dim = 8;
  std::size_t prompts = 100;
  std::size_t responses = 10;
  std::size_t test_prompts = 50;
  std::size_t test_generations = 50;
  // bimodal_2d
  std::size_t points = 1000;
  std::size_t grid = 31;
  // dataset; relative paths resolve against the config file's directory
  std::string dataset;
  std::string test_dataset;
  std::string labels;
};

/// Cartesian sweep axes; an empty axis keeps the base value.
struct SweepAxes {
  std::vector<StrategyKind> strategies;
  std::vector<std::size_t> batch_sizes;
  std::vector<bool> cross_prompt;

  bool empty() const { return strategies.empty() && batch_sizes.empty() && cross_prompt.empty(); }
};

struct ExperimentConfig {
  std::string name = "experiment";
  StrategyKind strategy = StrategyKind::kRandom;
  std::size_t batch_size = 125;
  std::size_t rounds = 4;
  std::vector<std::uint64_t> seeds{1};
  AnnotatorKind annotator = AnnotatorKind::kGoldenBernoulli;
  std::size_t best_of_n = 0;
  /// Empty: $BTAL_OUTPUT_ROOT (or "runs") / name.
  std::string output_dir;
  WorldConfig world;
  PoolConfig pool;
  TrainConfig train;
  DesignConfig design;
  CoresetConfig coreset;
  BatchBaldConfig batchbald;
  SweepAxes sweep;

  /// Directory the config was loaded from; not serialized.
  std::filesystem::path base_dir;

  /// Range checks and file existence. Throws kConfig.
  void validate() const;
  std::filesystem::path resolve(const std::string& path) const;
  std::filesystem::path output_path() const;
  LoopConfig loop_config(std::uint64_t seed) const;
};

/// Unknown keys anywhere are kConfig errors.
ExperimentConfig parse_experiment_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Pretty-printed JSON with every field spelled out.
std::string format_experiment_config(const ExperimentConfig& config);

}  // namespace btal
