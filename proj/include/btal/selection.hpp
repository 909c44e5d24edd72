#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "btal/bt_core.hpp"

namespace btal {

/// Outcome of one selection call. Every pool entry keeps its score so the
/// choice can be audited afterwards.
struct SelectionResult {
  std::string strategy;
  std::vector<std::size_t> selected;  // pool indices, in pick order
  std::vector<PairId> pool_ids;       // one per pool entry
  std::vector<double> scores;         // one per pool entry

  std::vector<PairId> selected_ids() const;
};

/// Indices of the c largest scores, ties broken by ascending index.
std::vector<std::size_t> select_topc(std::span<const double> scores, std::size_t c);

/// Indices of the c largest scores, ties broken by ascending pair id.
std::vector<std::size_t> select_top_by_pair_id(std::span<const double> scores,
                                               std::span<const PairId> ids, std::size_t c);

/// Weighted sampling without replacement (exponential-key method); all weights
/// must be nonnegative. Zero-weight entries are only drawn once positive ones
/// run out, in ascending pair-id order.
std::vector<std::size_t> sample_by_weight(std::span<const double> weights, std::span<const PairId> ids,
                                          std::size_t c, std::uint64_t seed);

std::vector<PairId> pool_pair_ids(std::span<const ComparisonPair> pool);

/// Throws kEmptyDataset / kBudgetExceeded / kInvalidArgument for a bad budget.
void check_budget(std::size_t pool_size, std::size_t c);

/// CSV record lines: pair_id,score,rank,strategy,round. rank is the 1-based
/// pick order for selected pairs and 0 for the rest.
std::string selection_records(const SelectionResult& result, std::size_t round, bool include_header = true);
void write_selection_records(const SelectionResult& result, std::size_t round,
                             const std::filesystem::path& path);

}  // namespace btal
