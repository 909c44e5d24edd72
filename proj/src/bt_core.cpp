#include "btal/bt_core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "btal/binary_io.hpp"
#include "btal/fs_util.hpp"
#include "btal/rng.hpp"

namespace btal {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr char kCheckpointMagic[8] = {'B', 'T', 'A', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct Layout {
  std::size_t input_dim;
  std::size_t hidden;

  std::size_t rows(std::size_t) const { return hidden; }
  std::size_t cols(std::size_t layer) const { return layer == 0 ? input_dim : hidden; }

  std::size_t weight_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) off += rows(l) * cols(l) + rows(l);
    return off;
  }
  std::size_t bias_offset(std::size_t layer) const { return weight_offset(layer) + rows(layer) * cols(layer); }
  std::size_t head_offset() const { return weight_offset(RewardModel::kHiddenLayers); }
  std::size_t total() const { return head_offset() + hidden; }
};

Eigen::Map<const RowMat> weight(const Layout& l, const Vector& p, std::size_t layer) {
  return {p.data() + l.weight_offset(layer), static_cast<Eigen::Index>(l.rows(layer)),
          static_cast<Eigen::Index>(l.cols(layer))};
}
Eigen::Map<RowMat> weight(const Layout& l, Vector& p, std::size_t layer) {
  return {p.data() + l.weight_offset(layer), static_cast<Eigen::Index>(l.rows(layer)),
          static_cast<Eigen::Index>(l.cols(layer))};
}
Eigen::Map<const Vector> bias(const Layout& l, const Vector& p, std::size_t layer) {
  return {p.data() + l.bias_offset(layer), static_cast<Eigen::Index>(l.rows(layer))};
}
Eigen::Map<Vector> bias(const Layout& l, Vector& p, std::size_t layer) {
  return {p.data() + l.bias_offset(layer), static_cast<Eigen::Index>(l.rows(layer))};
}

// act[0] is the input block, act[l + 1] the output of hidden layer l.
struct Activations {
  std::array<Matrix, RewardModel::kHiddenLayers + 1> act;
};

void forward(const Layout& l, const Vector& p, const Matrix& inputs, Activations& a) {
  a.act[0] = inputs;
  for (std::size_t layer = 0; layer < RewardModel::kHiddenLayers; ++layer) {
    Matrix z = weight(l, p, layer) * a.act[layer];
    z.colwise() += bias(l, p, layer);
    a.act[layer + 1] = z.array().tanh().matrix();
  }
}

// Accumulates dL/dparams given dL/dreward for every column of the batch.
void backward(const Layout& l, const Vector& p, const Activations& a,
              const Eigen::RowVectorXd& d_reward, Vector& grad) {
  const Eigen::Index h = static_cast<Eigen::Index>(l.hidden);
  Eigen::Map<const Vector> head(p.data() + l.head_offset(), h);
  Eigen::Map<Vector> g_head(grad.data() + l.head_offset(), h);
  const Matrix& top = a.act[RewardModel::kHiddenLayers];
  g_head.noalias() += top * d_reward.transpose();

  Matrix delta = head * d_reward;
  for (std::size_t layer = RewardModel::kHiddenLayers; layer-- > 0;) {
    const Matrix& out = a.act[layer + 1];
    delta.array() *= (1.0 - out.array().square());
    weight(l, grad, layer).noalias() += delta * a.act[layer].transpose();
    bias(l, grad, layer).noalias() += delta.rowwise().sum();
    if (layer > 0) delta = weight(l, p, layer).transpose() * delta;
  }
}

struct PairBatch {
  Matrix left;   // D x B
  Matrix right;  // D x B
  Vector outcome;
};

PairBatch gather(const LabeledDataset& data) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto d = static_cast<Eigen::Index>(data.dim());
  PairBatch b{Matrix(d, n), Matrix(d, n), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& e = data[static_cast<std::size_t>(i)];
    b.left.col(i) = e.pair.left;
    b.right.col(i) = e.pair.right;
    b.outcome(i) = e.label.outcome;
  }
  return b;
}

// Mean loss over the batch; adds the gradient of the mean into `grad` when given.
double batch_loss(const Layout& l, const Vector& p, const Matrix& left, const Matrix& right,
                  const Vector& outcome, Vector* grad, Activations& al, Activations& ar) {
  forward(l, p, left, al);
  forward(l, p, right, ar);
  const Eigen::Index h = static_cast<Eigen::Index>(l.hidden);
  Eigen::Map<const Vector> head(p.data() + l.head_offset(), h);
  const Eigen::RowVectorXd gap =
      head.transpose() * (al.act[RewardModel::kHiddenLayers] - ar.act[RewardModel::kHiddenLayers]);
  const auto n = gap.size();
  double loss = 0.0;
  Eigen::RowVectorXd d_gap(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    loss += softplus(gap(i)) - outcome(i) * gap(i);
    d_gap(i) = (sigmoid(gap(i)) - outcome(i)) / static_cast<double>(n);
  }
  if (grad != nullptr) {
    backward(l, p, al, d_gap, *grad);
    backward(l, p, ar, -d_gap, *grad);
  }
  return loss / static_cast<double>(n);
}

void check_dim(const RewardModel& model, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != model.input_dim()) {
    std::ostringstream os;
    os << "embedding has dim " << x.size() << ", model expects " << model.input_dim();
    throw Error(ErrorCode::kDimensionMismatch, os.str());
  }
}

void check_dim(const RewardModel& model, const ComparisonPair& pair) {
  check_dim(model, pair.left);
  check_dim(model, pair.right);
}

}  // namespace

// ---------------------------------------------------------------------------

ComparisonPair swapped(const ComparisonPair& pair) {
  ComparisonPair s = pair;
  std::swap(s.left, s.right);
  std::swap(s.left_meta, s.right_meta);
  return s;
}

std::string_view to_string(LabelSource source) {
  switch (source) {
    case LabelSource::kSimulated: return "simulated";
    case LabelSource::kHuman: return "human";
    case LabelSource::kImported: return "imported";
  }
  return "unknown";
}

LabelSource label_source_from_string(std::string_view name) {
  if (name == "simulated") return LabelSource::kSimulated;
  if (name == "human") return LabelSource::kHuman;
  if (name == "imported") return LabelSource::kImported;
  throw Error(ErrorCode::kInvalidArgument, "unknown label source '" + std::string(name) + "'");
}

void LabeledDataset::add(ComparisonPair pair, PreferenceLabel label) {
  if (pair.left.size() != pair.right.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "pair sides have different dims");
  }
  if (label.outcome != 0 && label.outcome != 1) {
    throw Error(ErrorCode::kInvalidArgument, "outcome must be 0 or 1");
  }
  if (label.pair_id != pair.id) {
    throw Error(ErrorCode::kInvalidArgument, "label pair id does not match the pair");
  }
  if (entries_.empty() && dim_ == 0) dim_ = pair.dim();
  if (pair.dim() != dim_) {
    throw Error(ErrorCode::kDimensionMismatch, "pair dim " + std::to_string(pair.dim()) +
                                                   " differs from dataset dim " + std::to_string(dim_));
  }
  if (!ids_.insert(pair.id).second) {
    throw Error(ErrorCode::kConflict, "duplicate pair id " + std::to_string(pair.id.value));
  }
  entries_.push_back({std::move(pair), label});
}

void LabeledDataset::append(const LabeledDataset& other) {
  for (const auto& e : other.entries()) add(e.pair, e.label);
}

void TrainConfig::validate() const {
  if (hidden == 0 || epochs == 0 || minibatch == 0) {
    throw Error(ErrorCode::kConfig, "hidden, epochs and minibatch must be positive");
  }
  if (!(learning_rate > 0.0) || !(final_learning_rate > 0.0) || weight_decay < 0.0) {
    throw Error(ErrorCode::kConfig, "learning rates must be positive and weight decay nonnegative");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) ||
      !(adam_epsilon > 0.0)) {
    throw Error(ErrorCode::kConfig, "invalid Adam moment parameters");
  }
}

// ---------------------------------------------------------------------------

RewardModel::RewardModel(std::size_t input_dim, std::size_t hidden)
    : input_dim_(input_dim), hidden_(hidden) {
  if (input_dim == 0 || hidden == 0) {
    throw Error(ErrorCode::kInvalidArgument, "input_dim and hidden must be positive");
  }
  params_ = Vector::Zero(static_cast<Eigen::Index>(Layout{input_dim, hidden}.total()));
}

RewardModel RewardModel::initialized(std::size_t input_dim, std::size_t hidden, std::uint64_t seed) {
  RewardModel m(input_dim, hidden);
  const Layout l{input_dim, hidden};
  Rng rng(seed);
  for (std::size_t layer = 0; layer < kHiddenLayers; ++layer) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.cols(layer)));
    auto w = weight(l, m.params_, layer);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
    auto b = bias(l, m.params_, layer);
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = rng.uniform(-bound, bound);
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (std::size_t i = l.head_offset(); i < l.total(); ++i) {
    m.params_(static_cast<Eigen::Index>(i)) = rng.uniform(-bound, bound);
  }
  return m;
}

void RewardModel::set_parameters(const Vector& params) {
  if (params.size() != params_.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "parameter vector has the wrong length");
  }
  params_ = params;
}

Eigen::Map<const Vector> RewardModel::head() const {
  return {params_.data() + head_offset(), static_cast<Eigen::Index>(hidden_)};
}

void RewardModel::set_head(const Vector& head) {
  if (static_cast<std::size_t>(head.size()) != hidden_) {
    throw Error(ErrorCode::kDimensionMismatch, "head has the wrong length");
  }
  params_.segment(static_cast<Eigen::Index>(head_offset()), head.size()) = head;
}

Matrix RewardModel::features(const Matrix& inputs) const {
  if (static_cast<std::size_t>(inputs.rows()) != input_dim_) {
    throw Error(ErrorCode::kDimensionMismatch, "input block has " + std::to_string(inputs.rows()) +
                                                   " rows, model expects " + std::to_string(input_dim_));
  }
  Activations a;
  forward(Layout{input_dim_, hidden_}, params_, inputs, a);
  return std::move(a.act[kHiddenLayers]);
}

Vector RewardModel::rewards(const Matrix& inputs) const {
  return features(inputs).transpose() * head();
}

// ---------------------------------------------------------------------------

double reward(const RewardModel& model, const Vector& x) {
  check_dim(model, x);
  return model.rewards(x)(0);
}

double pref_prob(const RewardModel& model, const ComparisonPair& pair) {
  check_dim(model, pair);
  return sigmoid(reward(model, pair.left) - reward(model, pair.right));
}

Vector last_layer_features(const RewardModel& model, const Vector& x) {
  check_dim(model, x);
  return model.features(x).col(0);
}

double bt_loss(const RewardModel& model, const LabeledDataset& data) {
  if (data.empty()) throw Error(ErrorCode::kEmptyDataset, "bt_loss on an empty dataset");
  if (data.dim() != model.input_dim()) throw Error(ErrorCode::kDimensionMismatch, "dataset dim differs from model");
  const PairBatch b = gather(data);
  Activations al, ar;
  return batch_loss(Layout{model.input_dim(), model.hidden_width()}, model.parameters(), b.left, b.right,
                    b.outcome, nullptr, al, ar);
}

Vector grad_bt_loss(const RewardModel& model, const LabeledDataset& data) {
  if (data.empty()) throw Error(ErrorCode::kEmptyDataset, "grad_bt_loss on an empty dataset");
  if (data.dim() != model.input_dim()) throw Error(ErrorCode::kDimensionMismatch, "dataset dim differs from model");
  const PairBatch b = gather(data);
  Vector grad = Vector::Zero(static_cast<Eigen::Index>(model.parameter_count()));
  Activations al, ar;
  batch_loss(Layout{model.input_dim(), model.hidden_width()}, model.parameters(), b.left, b.right, b.outcome,
             &grad, al, ar);
  return grad;
}

TrainResult train_with_trace(const LabeledDataset& data, const TrainConfig& config, std::uint64_t seed) {
  config.validate();
  if (data.empty()) throw Error(ErrorCode::kEmptyDataset, "cannot train on an empty dataset");

  const std::size_t n = data.size();
  const Layout layout{data.dim(), config.hidden};
  RewardModel model = RewardModel::initialized(data.dim(), config.hidden, derive_seed(seed, 0x1417));
  Vector params = model.parameters();
  const PairBatch all = gather(data);

  const std::size_t batch = std::min(config.minibatch, n);
  const Eigen::Index d = static_cast<Eigen::Index>(data.dim());
  Vector m = Vector::Zero(params.size());
  Vector v = Vector::Zero(params.size());
  Vector grad(params.size());
  Matrix left(d, static_cast<Eigen::Index>(batch));
  Matrix right(d, static_cast<Eigen::Index>(batch));
  Vector outcome(static_cast<Eigen::Index>(batch));
  Activations al, ar;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng shuffle_rng(derive_seed(seed, 0x5eed));

  TrainResult result{model, {}};
  result.loss_trace.reserve(config.epochs);
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double progress =
        config.epochs > 1 ? static_cast<double>(epoch) / static_cast<double>(config.epochs - 1) : 0.0;
    const double lr = config.final_learning_rate +
                      0.5 * (config.learning_rate - config.final_learning_rate) *
                          (1.0 + std::cos(std::numbers::pi * progress));
    if (n > batch) shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      const auto ilen = static_cast<Eigen::Index>(len);
      if (ilen != left.cols()) {
        left.resize(d, ilen);
        right.resize(d, ilen);
        outcome.resize(ilen);
      }
      for (std::size_t k = 0; k < len; ++k) {
        const auto src = static_cast<Eigen::Index>(order[start + k]);
        const auto dst = static_cast<Eigen::Index>(k);
        left.col(dst) = all.left.col(src);
        right.col(dst) = all.right.col(src);
        outcome(dst) = all.outcome(src);
      }
      grad.setZero();
      const double loss = batch_loss(layout, params, left, right, outcome, &grad, al, ar);
      if (!std::isfinite(loss) || !grad.allFinite()) {
        throw Error(ErrorCode::kNonFiniteLoss, "non-finite loss at epoch " + std::to_string(epoch));
      }
      epoch_loss += loss * static_cast<double>(len);

      ++step;
      const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(step));
      m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * grad;
      v = config.adam_beta2 * v + (1.0 - config.adam_beta2) * grad.cwiseProduct(grad);
      params *= (1.0 - lr * config.weight_decay);
      params.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.adam_epsilon);
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(n));
  }
  result.model.set_parameters(params);
  if (!result.model.all_finite()) {
    throw Error(ErrorCode::kNonFiniteLoss, "non-finite parameters after training");
  }
  return result;
}

RewardModel train(const LabeledDataset& data, const TrainConfig& config, std::uint64_t seed) {
  return train_with_trace(data, config, seed).model;
}

PairFeatures pair_features(const RewardModel& model, std::span<const ComparisonPair> pairs) {
  const auto d = static_cast<Eigen::Index>(model.input_dim());
  const auto j = static_cast<Eigen::Index>(pairs.size());
  Matrix left(d, j), right(d, j);
  for (Eigen::Index i = 0; i < j; ++i) {
    const auto& p = pairs[static_cast<std::size_t>(i)];
    check_dim(model, p);
    left.col(i) = p.left;
    right.col(i) = p.right;
  }
  PairFeatures out;
  if (j == 0) {
    out.diffs = Matrix(static_cast<Eigen::Index>(model.hidden_width()), 0);
    out.reward_gap = Vector(0);
    return out;
  }
  out.diffs = model.features(left) - model.features(right);
  out.reward_gap = out.diffs.transpose() * model.head();
  return out;
}

const PairFeatures& pair_features_or(const PairFeatures* cached, const RewardModel& model,
                                     std::span<const ComparisonPair> pairs, PairFeatures& storage) {
  if (cached == nullptr) {
    storage = pair_features(model, pairs);
    return storage;
  }
  if (static_cast<std::size_t>(cached->diffs.cols()) != pairs.size() ||
      static_cast<std::size_t>(cached->diffs.rows()) != model.hidden_width() ||
      cached->reward_gap.size() != cached->diffs.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "cached pair features do not match the pool");
  }
  return *cached;
}

Vector fit_linear_bt(const Matrix& diffs, std::span<const int> outcomes, std::size_t max_iterations,
                     double tolerance) {
  const Eigen::Index n = diffs.rows();
  if (n == 0) throw Error(ErrorCode::kEmptyDataset, "fit_linear_bt on an empty design");
  if (static_cast<std::size_t>(n) != outcomes.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "outcome count differs from design rows");
  }
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = outcomes[static_cast<std::size_t>(i)];

  auto log_lik = [&](const Vector& beta) {
    const Vector eta = diffs * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) ll += y(i) * eta(i) - softplus(eta(i));
    return ll;
  };

  Vector beta = Vector::Zero(diffs.cols());
  double current = log_lik(beta);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    const Vector eta = diffs * beta;
    Vector resid(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      resid(i) = y(i) - sigmoid(eta(i));
      w(i) = bernoulli_variance(eta(i));
    }
    const Vector score = diffs.transpose() * resid;
    const Matrix info = diffs.transpose() * w.asDiagonal() * diffs;
    Eigen::LLT<Matrix> llt(info);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::kNumericalFailure, "singular information matrix in linear BT fit");
    }
    Vector step = llt.solve(score);
    // Step halving keeps the iteration monotone in the likelihood.
    double t = 1.0;
    Vector next = beta + step;
    double next_ll = log_lik(next);
    while (next_ll < current && t > 1e-8) {
      t *= 0.5;
      next = beta + t * step;
      next_ll = log_lik(next);
    }
    beta = next;
    current = next_ll;
    if ((t * step).norm() < tolerance * (1.0 + beta.norm())) break;
  }
  return beta;
}

void save_checkpoint(const RewardModel& model, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  out.reserve(32 + 4 * model.parameter_count());
  binary::put_bytes(out, std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic)));
  binary::put_u32(out, kCheckpointVersion);
  binary::put_u32(out, static_cast<std::uint32_t>(model.input_dim()));
  binary::put_u32(out, static_cast<std::uint32_t>(model.hidden_width()));
  binary::put_u32(out, static_cast<std::uint32_t>(RewardModel::kHiddenLayers));
  binary::put_u64(out, model.parameter_count());
  for (Eigen::Index i = 0; i < model.parameters().size(); ++i) {
    binary::put_f32(out, static_cast<float>(model.parameters()(i)));
  }
  write_file_atomic(path, out);
}

RewardModel load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  constexpr std::size_t kHeader = 32;
  if (bytes.size() < kHeader || !std::equal(std::begin(kCheckpointMagic), std::end(kCheckpointMagic), bytes.begin())) {
    throw Error(ErrorCode::kCorruptHeader, "not a reward model checkpoint: " + path.string());
  }
  const auto version = binary::get_u32(bytes.data() + 8);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kCorruptHeader, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto input_dim = binary::get_u32(bytes.data() + 12);
  const auto hidden = binary::get_u32(bytes.data() + 16);
  const auto layers = binary::get_u32(bytes.data() + 20);
  const auto count = binary::get_u64(bytes.data() + 24);
  if (layers != RewardModel::kHiddenLayers || input_dim == 0 || hidden == 0 ||
      count != Layout{input_dim, hidden}.total()) {
    throw Error(ErrorCode::kCorruptHeader, "inconsistent checkpoint header in " + path.string());
  }
  if (bytes.size() != kHeader + 4 * count) {
    throw Error(ErrorCode::kTruncatedRecords, "checkpoint payload size mismatch at byte offset " +
                                                  std::to_string(bytes.size()));
  }
  RewardModel model(input_dim, hidden);
  Vector params(static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    params(static_cast<Eigen::Index>(i)) = binary::get_f32(bytes.data() + kHeader + 4 * i);
  }
  model.set_parameters(params);
  return model;
}

}  // namespace btal
