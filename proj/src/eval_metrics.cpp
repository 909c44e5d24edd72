#include "btal/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <spdlog/spdlog.h>

namespace btal {

void TestPromptSet::validate() const {
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    const auto& tp = prompts[p];
    if (tp.size() < 2) {
      throw Error(ErrorCode::kInvalidArgument, "test prompt " + std::to_string(p) + " has fewer than 2 generations");
    }
    if (tp.embeddings.cols() != tp.golden.size()) {
      throw Error(ErrorCode::kDimensionMismatch, "test prompt " + std::to_string(p) + " embedding count differs");
    }
    if (!tp.golden.allFinite()) {
      throw Error(ErrorCode::kInvalidArgument, "test prompt " + std::to_string(p) + " has non-finite golden rewards");
    }
  }
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // Positions i..j-1 (0-based) share rank mean(i+1..j).
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

bool spearman_rho(std::span<const double> a, std::span<const double> b, double& rho) {
  if (a.size() != b.size()) throw Error(ErrorCode::kDimensionMismatch, "rank vectors differ in length");
  const std::size_t n = a.size();
  if (n < 2) return false;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double mean = 0.5 * static_cast<double>(n + 1);
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ra[i] - mean;
    const double y = rb[i] - mean;
    sab += x * y;
    saa += x * x;
    sbb += y * y;
  }
  if (saa == 0.0 || sbb == 0.0) return false;
  rho = sab / std::sqrt(saa * sbb);
  return true;
}

std::vector<Vector> model_scores(const RewardModel& model, const TestPromptSet& test) {
  std::vector<Vector> out;
  out.reserve(test.prompts.size());
  for (const auto& tp : test.prompts) out.push_back(model.rewards(tp.embeddings));
  return out;
}

SpearmanResult spearman_metric_scores(const std::vector<Vector>& scores, const TestPromptSet& test) {
  if (scores.size() != test.prompts.size()) throw Error(ErrorCode::kDimensionMismatch, "one score vector per prompt");
  SpearmanResult res;
  double total = 0.0;
  for (std::size_t p = 0; p < scores.size(); ++p) {
    const auto& g = test.prompts[p].golden;
    if (scores[p].size() != g.size()) {
      throw Error(ErrorCode::kDimensionMismatch, "prompt " + std::to_string(p) + " score count differs");
    }
    if (g.size() < 2) throw Error(ErrorCode::kInvalidArgument, "prompt " + std::to_string(p) + " needs 2 generations");
    double rho = 0.0;
    if (spearman_rho({scores[p].data(), static_cast<std::size_t>(scores[p].size())},
                     {g.data(), static_cast<std::size_t>(g.size())}, rho)) {
      total += 1.0 - rho;
      ++res.prompts_scored;
    } else {
      ++res.prompts_skipped;
    }
  }
  if (res.prompts_skipped > 0) {
    spdlog::warn("spearman: skipped {} of {} prompts with constant rewards", res.prompts_skipped, scores.size());
  }
  res.metric = res.prompts_scored > 0 ? total / static_cast<double>(res.prompts_scored)
                                      : std::numeric_limits<double>::quiet_NaN();
  return res;
}

SpearmanResult spearman_metric(const RewardModel& model, const TestPromptSet& test) {
  return spearman_metric_scores(model_scores(model, test), test);
}

double best_of_n_scores(const std::vector<Vector>& scores, const TestPromptSet& test, std::size_t n) {
  if (scores.size() != test.prompts.size()) throw Error(ErrorCode::kDimensionMismatch, "one score vector per prompt");
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "best-of-N needs N >= 1");
  if (test.prompts.empty()) throw Error(ErrorCode::kEmptyDataset, "no test prompts");
  double total = 0.0;
  for (std::size_t p = 0; p < scores.size(); ++p) {
    const auto& g = test.prompts[p].golden;
    if (n > static_cast<std::size_t>(g.size()) || n > static_cast<std::size_t>(scores[p].size())) {
      throw Error(ErrorCode::kInvalidArgument, "N=" + std::to_string(n) + " exceeds the " +
                                                   std::to_string(g.size()) + " generations of prompt " +
                                                   std::to_string(p));
    }
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < static_cast<Eigen::Index>(n); ++i) {
      if (scores[p](i) > scores[p](best)) best = i;
    }
    total += g(best);
  }
  return total / static_cast<double>(scores.size());
}

double best_of_n(const RewardModel& model, const TestPromptSet& test, std::size_t n) {
  return best_of_n_scores(model_scores(model, test), test, n);
}

EvalResult evaluate(const RewardModel& model, const TestPromptSet& test, std::size_t n) {
  const auto scores = model_scores(model, test);
  const auto sp = spearman_metric_scores(scores, test);
  return {sp.metric, best_of_n_scores(scores, test, n), sp.prompts_skipped};
}

}  // namespace btal
