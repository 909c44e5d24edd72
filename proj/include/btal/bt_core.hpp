#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "btal/common.hpp"

namespace btal {

/// Display payload for one side of a comparison.
struct ItemMeta {
  std::uint32_t item_id = 0;
  std::uint32_t prompt_id = 0;
  std::uint32_t response_id = 0;
  std::string text;
};

struct ComparisonPair {
  PairId id;
  Vector left;
  Vector right;
  ItemMeta left_meta;
  ItemMeta right_meta;
  bool cross_prompt = false;

  std::size_t dim() const { return static_cast<std::size_t>(left.size()); }
};

/// The same comparison presented in the opposite order.
ComparisonPair swapped(const ComparisonPair& pair);

enum class LabelSource { kSimulated, kHuman, kImported };

std::string_view to_string(LabelSource source);
LabelSource label_source_from_string(std::string_view name);

struct PreferenceLabel {
  PairId pair_id;
  int outcome = 0;  // 1 when the left item is preferred
  LabelSource annotator = LabelSource::kSimulated;
  std::int64_t timestamp_ms = 0;
};

struct LabeledPair {
  ComparisonPair pair;
  PreferenceLabel label;
};

/// Labeled comparisons with unique pair ids and a single embedding dimension.
class LabeledDataset {
 public:
  LabeledDataset() = default;
  explicit LabeledDataset(std::size_t dim) : dim_(dim) {}

  /// Throws kConflict on a repeated pair id, kDimensionMismatch on a dim change.
  void add(ComparisonPair pair, PreferenceLabel label);
  void append(const LabeledDataset& other);

  bool contains(PairId id) const { return ids_.contains(id); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t dim() const { return dim_; }
  const std::vector<LabeledPair>& entries() const { return entries_; }
  const LabeledPair& operator[](std::size_t i) const { return entries_[i]; }

 private:
  std::vector<LabeledPair> entries_;
  std::unordered_set<PairId> ids_;
  std::size_t dim_ = 0;
};

struct TrainConfig {
  std::size_t hidden = 64;
  std::size_t epochs = 500;
  std::size_t minibatch = 256;  // clamped to the dataset size
  double learning_rate = 1e-3;
  double final_learning_rate = 1e-3;  // cosine decay target; equal to lr = constant
  double weight_decay = 1e-2;         // decoupled (AdamW style)
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
};

/// Three tanh hidden layers followed by a bias-free linear head.
///
/// Parameters live in one flat vector so the optimizer, the gradient and the
/// checkpoint share a layout:
///   W1 (H x D, row major), b1 (H), W2 (H x H), b2, W3 (H x H), b3, head (H).
class RewardModel {
 public:
  static constexpr std::size_t kHiddenLayers = 3;

  RewardModel(std::size_t input_dim, std::size_t hidden);

  /// Seeded uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static RewardModel initialized(std::size_t input_dim, std::size_t hidden, std::uint64_t seed);

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_width() const { return hidden_; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }

  const Vector& parameters() const { return params_; }
  void set_parameters(const Vector& params);

  /// Offset of the head block inside parameters().
  std::size_t head_offset() const { return parameter_count() - hidden_; }
  Eigen::Map<const Vector> head() const;
  void set_head(const Vector& head);

  /// Columns of `inputs` are embeddings; returns one feature column per input.
  Matrix features(const Matrix& inputs) const;
  Vector rewards(const Matrix& inputs) const;

  bool all_finite() const { return params_.allFinite(); }

  friend bool operator==(const RewardModel& a, const RewardModel& b) {
    return a.input_dim_ == b.input_dim_ && a.hidden_ == b.hidden_ && a.params_ == b.params_;
  }

 private:
  std::size_t input_dim_;
  std::size_t hidden_;
  Vector params_;
};

double reward(const RewardModel& model, const Vector& x);
double pref_prob(const RewardModel& model, const ComparisonPair& pair);
Vector last_layer_features(const RewardModel& model, const Vector& x);

/// Mean Bradley-Terry negative log-likelihood.
double bt_loss(const RewardModel& model, const LabeledDataset& data);

/// Gradient of bt_loss in the parameters() layout.
Vector grad_bt_loss(const RewardModel& model, const LabeledDataset& data);

struct TrainResult {
  RewardModel model;
  std::vector<double> loss_trace;  // mean minibatch loss per epoch
};

/// Trains from a fresh seeded initialisation. Deterministic in
/// (data order, config, seed).
TrainResult train_with_trace(const LabeledDataset& data, const TrainConfig& config,
                             std::uint64_t seed);
RewardModel train(const LabeledDataset& data, const TrainConfig& config, std::uint64_t seed);

/// Feature differences and reward gaps for a batch of pairs, evaluated in one
/// pass per side.
struct PairFeatures {
  Matrix diffs;       // H x J, column j = F(left_j) - F(right_j)
  Vector reward_gap;  // J, r(left_j) - r(right_j)
};

PairFeatures pair_features(const RewardModel& model, std::span<const ComparisonPair> pairs);

/// `cached` when given (after a size check), otherwise computed into `storage`.
const PairFeatures& pair_features_or(const PairFeatures* cached, const RewardModel& model,
                                     std::span<const ComparisonPair> pairs, PairFeatures& storage);

/// Maximum-likelihood fit of the linear model P(left) = sigmoid(d^T beta) by
/// Newton iterations. Rows of `diffs` are difference vectors.
Vector fit_linear_bt(const Matrix& diffs, std::span<const int> outcomes,
                     std::size_t max_iterations = 100, double tolerance = 1e-10);

void save_checkpoint(const RewardModel& model, const std::filesystem::path& path);
RewardModel load_checkpoint(const std::filesystem::path& path);

}  // namespace btal
