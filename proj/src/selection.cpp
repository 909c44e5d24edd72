#include "btal/selection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "btal/fs_util.hpp"
#include "btal/rng.hpp"

namespace btal {

std::vector<PairId> SelectionResult::selected_ids() const {
  std::vector<PairId> out;
  out.reserve(selected.size());
  for (auto i : selected) out.push_back(pool_ids.at(i));
  return out;
}

void check_budget(std::size_t pool_size, std::size_t c) {
  if (pool_size == 0) throw Error(ErrorCode::kEmptyDataset, "empty candidate pool");
  if (c == 0) throw Error(ErrorCode::kInvalidArgument, "budget must be at least 1");
  if (c > pool_size) {
    throw Error(ErrorCode::kBudgetExceeded,
                "budget " + std::to_string(c) + " exceeds pool size " + std::to_string(pool_size));
  }
}

std::vector<std::size_t> select_topc(std::span<const double> scores, std::size_t c) {
  if (c > scores.size()) {
    throw Error(ErrorCode::kBudgetExceeded, "budget exceeds the number of scores");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(c), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  idx.resize(c);
  return idx;
}

std::vector<std::size_t> select_top_by_pair_id(std::span<const double> scores, std::span<const PairId> ids,
                                               std::size_t c) {
  if (scores.size() != ids.size()) throw Error(ErrorCode::kDimensionMismatch, "scores and ids differ in length");
  if (c > scores.size()) throw Error(ErrorCode::kBudgetExceeded, "budget exceeds the number of scores");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(c), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return ids[a] < ids[b];
                    });
  idx.resize(c);
  return idx;
}

std::vector<std::size_t> sample_by_weight(std::span<const double> weights, std::span<const PairId> ids,
                                          std::size_t c, std::uint64_t seed) {
  if (weights.size() != ids.size()) throw Error(ErrorCode::kDimensionMismatch, "weights and ids differ in length");
  if (c > weights.size()) throw Error(ErrorCode::kBudgetExceeded, "budget exceeds the number of weights");
  Rng rng(seed);
  // Key log(u)/w: larger is better; zero weights get -inf.
  std::vector<double> keys(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0 || !std::isfinite(weights[i])) {
      throw Error(ErrorCode::kInvalidArgument, "sampling weights must be finite and nonnegative");
    }
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    keys[i] = weights[i] > 0.0 ? std::log(u) / weights[i] : -std::numeric_limits<double>::infinity();
  }
  return select_top_by_pair_id(keys, ids, c);
}

std::vector<PairId> pool_pair_ids(std::span<const ComparisonPair> pool) {
  std::vector<PairId> ids;
  ids.reserve(pool.size());
  for (const auto& p : pool) ids.push_back(p.id);
  return ids;
}

std::string selection_records(const SelectionResult& result, std::size_t round, bool include_header) {
  std::vector<std::size_t> rank(result.pool_ids.size(), 0);
  for (std::size_t k = 0; k < result.selected.size(); ++k) rank[result.selected[k]] = k + 1;
  std::ostringstream os;
  if (include_header) os << "pair_id,score,rank,strategy,round\n";
  char buf[64];
  for (std::size_t i = 0; i < result.pool_ids.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", result.scores.at(i));
    os << result.pool_ids[i].value << ',' << buf << ',' << rank[i] << ',' << result.strategy << ',' << round
       << '\n';
  }
  return os.str();
}

void write_selection_records(const SelectionResult& result, std::size_t round, const std::filesystem::path& path) {
  write_file_atomic(path, selection_records(result, round));
}

}  // namespace btal
