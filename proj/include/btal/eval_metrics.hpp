#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "btal/bt_core.hpp"

namespace btal {

/// Held-out generations for one prompt: embeddings as columns plus their
/// golden rewards.
struct TestPrompt {
  Matrix embeddings;
  Vector golden;

  std::size_t size() const { return static_cast<std::size_t>(golden.size()); }
};

struct TestPromptSet {
  std::vector<TestPrompt> prompts;

  /// Throws kInvalidArgument when a prompt has fewer than 2 generations,
  /// non-finite golden rewards, or embeddings that disagree with `golden`.
  void validate() const;
};

/// Ranks starting at 1; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman correlation on average ranks. Returns false (and leaves rho
/// untouched) when either side is constant.
bool spearman_rho(std::span<const double> a, std::span<const double> b, double& rho);

struct SpearmanResult {
  double metric = 0.0;  // mean over scored prompts of 1 - rho
  std::size_t prompts_scored = 0;
  std::size_t prompts_skipped = 0;  // constant rewards on either side
};

/// `model_scores[p]` holds the model's rewards for prompt p's generations.
SpearmanResult spearman_metric_scores(const std::vector<Vector>& model_scores, const TestPromptSet& test);
SpearmanResult spearman_metric(const RewardModel& model, const TestPromptSet& test);

/// Mean golden reward of the model's pick among the first n generations of
/// every prompt; ties go to the lowest index.
double best_of_n_scores(const std::vector<Vector>& model_scores, const TestPromptSet& test, std::size_t n);
double best_of_n(const RewardModel& model, const TestPromptSet& test, std::size_t n);

std::vector<Vector> model_scores(const RewardModel& model, const TestPromptSet& test);

struct EvalResult {
  double one_minus_spearman = 0.0;
  double best_of_n = 0.0;
  std::size_t prompts_skipped = 0;
};

EvalResult evaluate(const RewardModel& model, const TestPromptSet& test, std::size_t n);

}  // namespace btal
