#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "btal/active_loop.hpp"

namespace btal {

// Run directory layout:
//   config.json              config snapshot (byte-stable)
//   metadata.json            timestamps and status; the only non-deterministic file
//   metrics.csv              round,n_labels,one_minus_spearman,best_of_n (rounds 1..n)
//   selections/round_XXX.csv pair_id,score,rank,strategy,round over the whole pool
//   labels/round_XXX.csv     pair_id,left_item,right_item,left_prompt,right_prompt,outcome
//   models/round_XXX.bin     checkpoint of M_s (round 0 = bootstrap model)

struct MetricsRow {
  std::size_t round = 0;
  std::size_t n_labels = 0;
  std::optional<double> one_minus_spearman;
  std::optional<double> best_of_n;
};

inline constexpr const char* kMetricsHeader = "round,n_labels,one_minus_spearman,best_of_n";

/// "%.17g"; the empty string for nullopt.
std::string format_number(std::optional<double> v);
std::string format_metrics_csv(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> parse_metrics_csv(std::string_view text);
MetricsRow metrics_row(const RoundRecord& record);

std::string round_file(std::size_t round, const char* ext);
std::string labels_csv(const RoundRecord& record);

class RunArtifactWriter {
 public:
  /// Creates the directory tree, writes config.json and a "running" metadata.json.
  RunArtifactWriter(std::filesystem::path dir, std::string config_json, std::uint64_t seed);

  void write_round(const RoundRecord& record);
  /// Rewrites metadata.json with the final status and finish time.
  void finish(const std::string& status, const std::string& error = {});
  const std::filesystem::path& dir() const { return dir_; }

 private:
  void write_metadata(const std::string& status, const std::string& error);

  std::filesystem::path dir_;
  std::uint64_t seed_;
  std::string created_;
  std::vector<MetricsRow> rows_;
};

struct RunArtifact {
  std::filesystem::path dir;
  std::string config_json;
  std::vector<MetricsRow> metrics;
};

/// Throws kIo naming the first missing file.
RunArtifact read_run_artifact(const std::filesystem::path& dir);

std::string utc_timestamp();

}  // namespace btal
