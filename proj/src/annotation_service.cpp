#include "btal/annotation_service.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "btal/fs_util.hpp"
#include "httplib.h"

namespace btal {

namespace fs = std::filesystem;
using nlohmann::json;

std::string error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound:
      return "not_found";
    case ErrorCode::kConflict:
      return "conflict";
    case ErrorCode::kBudgetExceeded:
      return "budget_exceeded";
    case ErrorCode::kConfig:
      return "invalid_config";
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kRecordDimMismatch:
      return "invalid_argument";
    case ErrorCode::kEmptyDataset:
      return "empty_pool";
    case ErrorCode::kUnsupported:
      return "unsupported";
    case ErrorCode::kIo:
      return "io_error";
    default:
      return "internal";
  }
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound:
      return 404;
    case ErrorCode::kConflict:
    case ErrorCode::kBudgetExceeded:
    case ErrorCode::kEmptyDataset:
      return 409;
    case ErrorCode::kConfig:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kRecordDimMismatch:
    case ErrorCode::kUnsupported:
      return 400;
    default:
      return 500;
  }
}

json error_body(const Error& e) {
  json detail = json::object();
  if (const auto* se = dynamic_cast<const ServiceError*>(&e); se != nullptr && !se->detail.is_null()) {
    detail = se->detail;
  }
  return {{"code", error_code_name(e.code())}, {"message", e.what()}, {"detail", detail}};
}

namespace {

// Manual retrains draw from their own stream so they never reuse a round's seed.
constexpr std::uint64_t kManualTrain = 0x4e7a;

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string to_string(RetrainMode m) { return m == RetrainMode::kSync ? "sync" : "background"; }

RetrainMode retrain_from_string(const std::string& s) {
  if (s == "sync") return RetrainMode::kSync;
  if (s == "background") return RetrainMode::kBackground;
  throw ServiceError(ErrorCode::kConfig, "retrain must be \"background\" or \"sync\"", {{"retrain", s}});
}

json item_json(const ItemMeta& m) {
  return {{"item_id", m.item_id}, {"prompt_id", m.prompt_id}, {"response_id", m.response_id}, {"text", m.text}};
}

/// Features per distinct item id, then pair differences; one forward pass per item.
PairFeatures pool_features(const RewardModel& model, const std::vector<ComparisonPair>& pool) {
  std::unordered_map<std::uint32_t, Eigen::Index> column;
  std::vector<const Vector*> inputs;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> sides(pool.size());
  auto col_of = [&](const ItemMeta& meta, const Vector& x) {
    const auto [it, fresh] = column.emplace(meta.item_id, static_cast<Eigen::Index>(inputs.size()));
    if (fresh) inputs.push_back(&x);
    return it->second;
  };
  for (std::size_t i = 0; i < pool.size(); ++i) {
    sides[i] = {col_of(pool[i].left_meta, pool[i].left), col_of(pool[i].right_meta, pool[i].right)};
  }
  Matrix x(static_cast<Eigen::Index>(model.input_dim()), static_cast<Eigen::Index>(inputs.size()));
  for (std::size_t k = 0; k < inputs.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = *inputs[k];
  const Matrix f = model.features(x);
  PairFeatures pf;
  pf.diffs = Matrix(f.rows(), static_cast<Eigen::Index>(pool.size()));
  for (std::size_t i = 0; i < pool.size(); ++i) {
    pf.diffs.col(static_cast<Eigen::Index>(i)) = f.col(sides[i].first) - f.col(sides[i].second);
  }
  pf.reward_gap = pf.diffs.transpose() * model.head();
  return pf;
}

}  // namespace

// ---------------------------------------------------------------------------

Session::Session(std::string id, ExperimentConfig config, RetrainMode mode, fs::path dir)
    : id_(std::move(id)), config_(std::move(config)), mode_(mode), dir_(std::move(dir)) {
  config_.validate();
  seed_ = config_.seeds.front();
  world_ = make_world(config_);
  data_ = LabeledDataset(world_.dim);
}

Session::~Session() {
  {
    std::lock_guard lk(job_mu_);
    stop_ = true;
  }
  job_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

std::unique_ptr<Session> Session::create(std::string id, const ExperimentConfig& config, RetrainMode mode,
                                         const fs::path& dir) {
  ExperimentConfig cfg = config;
  // Pin file references so recovery does not depend on the server's cwd.
  for (auto* p : {&cfg.world.dataset, &cfg.world.test_dataset, &cfg.world.labels}) {
    if (!p->empty()) *p = fs::absolute(cfg.resolve(*p)).string();
  }
  cfg.base_dir.clear();
  cfg.annotator = AnnotatorKind::kGoldenBernoulli;  // unused: labels come from people
  std::unique_ptr<Session> s(new Session(std::move(id), cfg, mode, dir));
  fs::create_directories(dir / "selections");
  fs::create_directories(dir / "labels");
  fs::create_directories(dir / "models");
  write_file_atomic(dir / "config.json", format_experiment_config(s->config_));
  write_file_atomic(dir / "metrics.csv", format_metrics_csv({}));
  write_file_atomic(dir / "metadata.json", json{{"created", utc_timestamp()}, {"status", "running"},
                                                {"seed", s->seed_}, {"session_id", s->id_}}
                                                   .dump(2) + "\n");
  write_file_atomic(dir / "session.json",
                    json{{"session_id", s->id_}, {"retrain", to_string(mode)}}.dump(2) + "\n");
  {
    std::unique_lock lock(s->mu_);
    s->start_round(0);
    auto sel = select_random(*s->pool_, s->config_.batch_size, derive_seed(s->seed_, seeds::kBootstrap));
    std::vector<PairId> ranked;
    for (auto i : sel.selected) ranked.push_back(sel.pool_ids[i]);
    s->set_queue(ranked, sel, 0, true);
  }
  s->worker_ = std::thread([p = s.get()] { p->worker_loop(); });
  return s;
}

std::unique_ptr<Session> Session::recover(const fs::path& dir) {
  const json meta = json::parse(read_file_text(dir / "session.json"));
  const auto cfg = parse_experiment_config(read_file_text(dir / "config.json"));
  std::unique_ptr<Session> s(new Session(meta.at("session_id").get<std::string>(), cfg,
                                         retrain_from_string(meta.at("retrain").get<std::string>()), dir));
  std::unique_lock lock(s->mu_);
  s->replaying_ = true;
  s->start_round(0);
  std::istringstream wal(fs::exists(dir / "wal.jsonl") ? read_file_text(dir / "wal.jsonl") : std::string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(wal, line)) {
    ++lineno;
    if (line.empty()) continue;
    json ev;
    try {
      ev = json::parse(line);
    } catch (const json::parse_error&) {
      // A torn final line from a crash mid-append: the label was never acknowledged.
      spdlog::warn("session {}: ignoring unreadable WAL line {}", s->id_, lineno);
      continue;
    }
    const auto kind = ev.at("event").get<std::string>();
    if (kind == "queue") {
      if (ev.at("round").get<std::size_t>() != s->round_) continue;
      std::vector<PairId> ranked;
      for (const auto& p : ev.at("pairs")) ranked.push_back(PairId{std::stoull(p.get<std::string>())});
      SelectionResult sel;
      sel.strategy = ev.at("strategy").get<std::string>();
      for (std::size_t k = 0; k < ranked.size(); ++k) {
        sel.pool_ids.push_back(ranked[k]);
        sel.scores.push_back(ev.at("scores").at(k).get<double>());
        sel.selected.push_back(k);
      }
      s->set_queue(ranked, sel, ev.at("model_version").get<std::uint64_t>(), false);
    } else if (kind == "label") {
      s->apply_label(PairId{std::stoull(ev.at("pair_id").get<std::string>())}, ev.at("outcome").get<int>(),
                     ev.at("nonce").get<std::string>(), ev.at("timestamp_ms").get<std::int64_t>(), false);
      s->nonces_[ev.at("nonce").get<std::string>()] = ev.at("response");
    } else if (kind == "retrain") {
      TrainJob job{s->round_, true, ++s->jobs_issued_, s->data_};
      s->run_job(job, true);
    }
  }
  s->replaying_ = false;
  lock.unlock();
  s->worker_ = std::thread([p = s.get()] { p->worker_loop(); });
  return s;
}

void Session::wal(const json& event) {
  if (!replaying_) append_line_durable(dir_ / "wal.jsonl", event.dump());
}

void Session::start_round(std::size_t round) {
  round_ = round;
  queue_.reset();
  selection_.reset();
  pending_.clear();
  round_pairs_.clear();
  round_labels_.clear();
  auto pool = std::make_shared<std::vector<ComparisonPair>>(
      world_.pools->pool(round, derive_seed(seed_, seeds::kPool, round), labeled_));
  if (pool->size() < config_.batch_size) {
    throw ServiceError(ErrorCode::kEmptyDataset, "round " + std::to_string(round) + " pool has " +
                                                     std::to_string(pool->size()) + " unlabeled pairs, fewer than c");
  }
  pool_index_.clear();
  for (std::size_t i = 0; i < pool->size(); ++i) pool_index_.emplace((*pool)[i].id, i);
  pool_ = std::move(pool);
}

void Session::set_queue(const std::vector<PairId>& ranked, const SelectionResult& selection,
                        std::uint64_t model_version, bool log) {
  std::vector<std::size_t> q;
  json ids = json::array();
  json scores = json::array();
  for (const auto& id : ranked) {
    const auto it = pool_index_.find(id);
    if (it == pool_index_.end()) {
      throw Error(ErrorCode::kInternal, "queued pair " + std::to_string(id.value) + " is not in the round pool");
    }
    q.push_back(it->second);
    ids.push_back(std::to_string(id.value));
  }
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    const auto pos = std::find(selection.pool_ids.begin(), selection.pool_ids.end(), ranked[k]);
    scores.push_back(pos == selection.pool_ids.end() ? 0.0 : selection.scores[pos - selection.pool_ids.begin()]);
  }
  if (log) {
    wal({{"event", "queue"},
         {"round", round_},
         {"model_version", model_version},
         {"strategy", selection.strategy},
         {"pairs", ids},
         {"scores", scores}});
  }
  queue_ = std::move(q);
  selection_ = selection;
  queue_model_version_ = model_version;
  for (auto i : *queue_) {
    if (!labeled_.count((*pool_)[i].id)) pending_.insert((*pool_)[i].id);
  }
}

void Session::ensure_queue(std::unique_lock<std::shared_mutex>& lock) {
  while (!queue_ && !complete_) {
    if (!model_) {
      if (!worker_error_.empty()) throw Error(ErrorCode::kInternal, "training failed: " + worker_error_);
      model_cv_.wait(lock);
      continue;
    }
    const auto model = model_;
    const auto pool = pool_;
    const auto t0 = std::chrono::steady_clock::now();
    const PairFeatures pf = pool_features(*model, *pool);
    const auto t1 = std::chrono::steady_clock::now();
    StrategyContext ctx;
    ctx.model = model.get();
    ctx.past = &data_;
    ctx.design = config_.design;
    ctx.coreset = config_.coreset;
    ctx.batchbald = config_.batchbald;
    ctx.seed = derive_seed(seed_, seeds::kSelect, round_);
    ctx.pool_features = &pf;
    const auto sel = select_pairs(config_.strategy, *pool, config_.batch_size, ctx);
    const auto t2 = std::chrono::steady_clock::now();
    spdlog::debug("session {} round {}: features {:.1f} ms, selection {:.1f} ms over {} pairs", id_, round_,
                  std::chrono::duration<double, std::milli>(t1 - t0).count(),
                  std::chrono::duration<double, std::milli>(t2 - t1).count(), pool->size());
    std::vector<PairId> ranked;
    for (auto i : sel.selected) ranked.push_back(sel.pool_ids[i]);
    set_queue(ranked, sel, model_version_, true);
  }
}

std::size_t Session::pending_count() const {
  if (complete_) return 0;
  return queue_ ? pending_.size() : config_.batch_size - round_labels_.size();
}

json Session::status() const {
  std::shared_lock lock(mu_);
  bool training = false;
  {
    std::lock_guard lk(job_mu_);
    training = busy_ || !jobs_.empty();
  }
  json s{{"session_id", id_},
         {"round", round_},
         {"rounds", config_.rounds},
         {"complete", complete_},
         {"strategy", to_string(config_.strategy)},
         {"batch_size", config_.batch_size},
         {"labels_collected", human_labels_},
         {"round_labels", round_labels_.size()},
         {"pending", pending_count()},
         {"model_version", model_version_},
         {"training", training},
         {"retrain", to_string(mode_)}};
  if (world_.test && metrics_) {
    s["metrics"] = {{"one_minus_spearman", metrics_->one_minus_spearman}, {"best_of_n", metrics_->best_of_n}};
  }
  if (!worker_error_.empty()) s["training_error"] = worker_error_;
  return s;
}

json Session::pair_json(const ComparisonPair& p) const {
  return {{"pair_id", std::to_string(p.id.value)},
          {"left", item_json(p.left_meta)},
          {"right", item_json(p.right_meta)},
          {"cross_prompt", p.cross_prompt}};
}

json Session::next_pairs(std::size_t k) {
  if (k == 0) throw ServiceError(ErrorCode::kInvalidArgument, "k must be at least 1");
  auto build = [&]() -> json {
    if (complete_) {
      throw ServiceError(ErrorCode::kBudgetExceeded, "session complete: all rounds are labeled",
                         {{"rounds", config_.rounds}});
    }
    if (k > pending_.size()) {
      throw ServiceError(ErrorCode::kBudgetExceeded,
                         "k exceeds the pairs remaining in this round",
                         {{"k", k}, {"remaining", pending_.size()}});
    }
    json pairs = json::array();
    for (std::size_t r = 0; r < queue_->size() && pairs.size() < k; ++r) {
      const auto& p = (*pool_)[(*queue_)[r]];
      if (!pending_.count(p.id)) continue;
      json j = pair_json(p);
      j["rank"] = r + 1;
      j["score"] = selection_->scores.empty()
                       ? 0.0
                       : selection_->scores[static_cast<std::size_t>(
                             std::find(selection_->pool_ids.begin(), selection_->pool_ids.end(), p.id) -
                             selection_->pool_ids.begin())];
      pairs.push_back(std::move(j));
    }
    return {{"round", round_}, {"model_version", queue_model_version_}, {"pairs", pairs}};
  };
  {
    std::shared_lock lock(mu_);
    if (queue_ || complete_) return build();
  }
  std::unique_lock lock(mu_);
  ensure_queue(lock);
  return build();
}

json Session::apply_label(PairId id, int outcome, const std::string& nonce, std::int64_t timestamp_ms, bool log) {
  if (const auto it = nonces_.find(nonce); it != nonces_.end()) return it->second;
  if (complete_) throw ServiceError(ErrorCode::kConflict, "session complete", {{"pair_id", std::to_string(id.value)}});
  if (!pool_index_.count(id) && !labeled_.count(id)) {
    throw ServiceError(ErrorCode::kNotFound, "unknown pair", {{"pair_id", std::to_string(id.value)}});
  }
  if (!pending_.count(id)) {
    throw ServiceError(ErrorCode::kConflict, labeled_.count(id) ? "pair already labeled" : "pair is not pending",
                       {{"pair_id", std::to_string(id.value)}, {"round", round_}});
  }
  const bool closes = round_labels_.size() + 1 == config_.batch_size;
  json response{{"pair_id", std::to_string(id.value)},
                {"outcome", outcome},
                {"nonce", nonce},
                {"round", round_},
                {"labels_collected", human_labels_ + 1},
                {"round_labels", closes ? 0 : round_labels_.size() + 1},
                {"round_closed", closes},
                {"current_round", closes ? round_ + 1 : round_}};
  // Write ahead: the label is durable before any state changes or the ack.
  if (log) {
    wal({{"event", "label"},
         {"pair_id", std::to_string(id.value)},
         {"outcome", outcome},
         {"nonce", nonce},
         {"timestamp_ms", timestamp_ms},
         {"response", response}});
  }
  const auto& pair = (*pool_)[pool_index_.at(id)];
  const PreferenceLabel label{id, outcome, LabelSource::kHuman, timestamp_ms};
  data_.add(pair, label);
  labeled_.insert(id);
  pending_.erase(id);
  round_pairs_.push_back(pair);
  round_labels_.push_back(label);
  ++human_labels_;
  nonces_[nonce] = response;
  if (closes) close_round();
  return response;
}

json Session::submit_label(const std::string& pair_id, const json& outcome, const std::string& nonce) {
  if (nonce.empty()) throw ServiceError(ErrorCode::kInvalidArgument, "nonce is required");
  const PairId id = parse_pair_id(pair_id);
  {
    std::shared_lock lock(mu_);
    if (const auto it = nonces_.find(nonce); it != nonces_.end()) return it->second;
  }
  if (!outcome.is_number_integer() || (outcome.get<std::int64_t>() != 0 && outcome.get<std::int64_t>() != 1)) {
    throw ServiceError(ErrorCode::kInvalidArgument, "outcome must be 0 or 1", {{"outcome", outcome}});
  }
  std::unique_lock lock(mu_);
  return apply_label(id, outcome.get<int>(), nonce, now_ms(), true);
}

void Session::close_round() {
  if (!replaying_) {
    RoundRecord rec;
    rec.round = round_;
    rec.selected_pairs = round_pairs_;
    rec.labels = round_labels_;
    write_selection_records(*selection_, round_, dir_ / "selections" / round_file(round_, "csv"));
    write_file_atomic(dir_ / "labels" / round_file(round_, "csv"), labels_csv(rec));
  }
  TrainJob job{round_, false, ++jobs_issued_, data_};
  const std::size_t closed = round_;
  if (closed + 1 > config_.rounds) {
    complete_ = true;
    queue_.reset();
    pending_.clear();
  } else {
    start_round(closed + 1);
  }
  if (replaying_ || mode_ == RetrainMode::kSync) {
    run_job(job, replaying_);
  } else {
    enqueue(std::move(job));
  }
  if (complete_ && !replaying_) {
    json meta = json::parse(read_file_text(dir_ / "metadata.json"));
    meta["status"] = "complete";
    meta["updated"] = utc_timestamp();
    write_file_atomic(dir_ / "metadata.json", meta.dump(2) + "\n");
  }
}

void Session::enqueue(TrainJob job) {
  {
    std::lock_guard lk(job_mu_);
    jobs_.push_back(std::move(job));
  }
  job_cv_.notify_one();
}

void Session::run_job(const TrainJob& job, bool replay) {
  // Caller holds mu_ exclusively; this is the sync and replay path.
  const auto file = dir_ / "models" / (job.manual ? "retrain_v" + std::to_string(job.version) + ".bin"
                                                  : round_file(job.round, "bin"));
  auto model = std::make_shared<RewardModel>(
      replay && fs::exists(file)
          ? load_checkpoint(file)
          : train(job.data, config_.train,
                  job.manual ? derive_seed(seed_, kManualTrain, job.version)
                             : derive_seed(seed_, seeds::kTrain, job.round)));
  install(job, std::move(model), file);
}

void Session::install(const TrainJob& job, std::shared_ptr<const RewardModel> model, const fs::path& file) {
  if (!fs::exists(file)) save_checkpoint(*model, file);
  if (world_.test) {
    std::size_t n = config_.best_of_n;
    if (n == 0) {
      n = std::numeric_limits<std::size_t>::max();
      for (const auto& tp : world_.test->prompts) n = std::min(n, tp.size());
    }
    metrics_ = evaluate(*model, *world_.test, n);
  }
  model_ = std::move(model);
  model_version_ = job.version;
  if (!job.manual && job.round >= 1) {
    MetricsRow row;
    row.round = job.round;
    row.n_labels = job.data.size();
    if (metrics_) {
      row.one_minus_spearman = metrics_->one_minus_spearman;
      row.best_of_n = metrics_->best_of_n;
    }
    metrics_rows_.push_back(row);
    write_file_atomic(dir_ / "metrics.csv", format_metrics_csv(metrics_rows_));
  }
  model_cv_.notify_all();
}

void Session::worker_loop() {
  for (;;) {
    TrainJob job;
    {
      std::unique_lock lk(job_mu_);
      job_cv_.wait(lk, [&] { return stop_ || !jobs_.empty(); });
      if (stop_) return;
      job = std::move(jobs_.front());
      jobs_.pop_front();
      busy_ = true;
    }
    try {
      const auto file = dir_ / "models" / (job.manual ? "retrain_v" + std::to_string(job.version) + ".bin"
                                                      : round_file(job.round, "bin"));
      auto model = std::make_shared<const RewardModel>(
          train(job.data, config_.train,
                job.manual ? derive_seed(seed_, kManualTrain, job.version)
                           : derive_seed(seed_, seeds::kTrain, job.round)));
      std::unique_lock lock(mu_);
      install(job, std::move(model), file);
      // Have the next queue ready before anyone asks for it.
      ensure_queue(lock);
    } catch (const std::exception& e) {
      std::unique_lock lock(mu_);
      worker_error_ = e.what();
      spdlog::error("session {}: training job failed: {}", id_, e.what());
      model_cv_.notify_all();
    }
    {
      std::lock_guard lk(job_mu_);
      busy_ = false;
    }
    idle_cv_.notify_all();
  }
}

void Session::wait_idle() {
  std::unique_lock lk(job_mu_);
  idle_cv_.wait(lk, [&] { return !busy_ && jobs_.empty(); });
}

json Session::retrain(bool wait) {
  std::uint64_t version = 0;
  {
    std::unique_lock lock(mu_);
    if (data_.empty()) throw ServiceError(ErrorCode::kConflict, "no labels to train on yet");
    wal({{"event", "retrain"}, {"labels", data_.size()}});
    TrainJob job{round_, true, ++jobs_issued_, data_};
    version = job.version;
    if (mode_ == RetrainMode::kSync) {
      run_job(job, false);
    } else {
      enqueue(std::move(job));
    }
  }
  if (wait) {
    std::unique_lock lock(mu_);
    model_cv_.wait(lock, [&] { return model_version_ >= version || !worker_error_.empty(); });
  }
  json s = status();
  s["requested_version"] = version;
  return s;
}

PairId Session::parse_pair_id(const std::string& s) const {
  if (s.empty() || s.size() > 20 || s.find_first_not_of("0123456789") != std::string::npos) {
    throw ServiceError(ErrorCode::kInvalidArgument, "pair_id must be a decimal integer", {{"pair_id", s}});
  }
  try {
    return PairId{std::stoull(s)};
  } catch (const std::exception&) {
    throw ServiceError(ErrorCode::kInvalidArgument, "pair_id out of range", {{"pair_id", s}});
  }
}

json Session::pair(const std::string& pair_id) const {
  const PairId id = parse_pair_id(pair_id);
  std::shared_lock lock(mu_);
  if (labeled_.count(id)) {
    for (const auto& e : data_.entries()) {
      if (e.pair.id != id) continue;
      json j = pair_json(e.pair);
      j["status"] = "labeled";
      j["outcome"] = e.label.outcome;
      return j;
    }
  }
  const auto it = pool_index_.find(id);
  if (it == pool_index_.end()) throw ServiceError(ErrorCode::kNotFound, "unknown pair", {{"pair_id", pair_id}});
  json j = pair_json((*pool_)[it->second]);
  j["status"] = pending_.count(id) ? "pending" : "candidate";
  j["round"] = round_;
  return j;
}

Session::Snapshot Session::snapshot() const {
  std::shared_lock lock(mu_);
  return {round_, pool_, model_, data_, derive_seed(seed_, seeds::kSelect, round_)};
}

// ---------------------------------------------------------------------------

SessionManager::SessionManager(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_ / "sessions");
  for (const auto& e : fs::directory_iterator(root_ / "sessions")) {
    if (!e.is_directory() || !fs::exists(e.path() / "session.json")) continue;
    try {
      auto s = Session::recover(e.path());
      spdlog::info("recovered session {}", s->id());
      sessions_.emplace(s->id(), std::move(s));
    } catch (const std::exception& ex) {
      spdlog::error("cannot recover {}: {}", e.path().string(), ex.what());
    }
  }
}

json SessionManager::create(const json& body) {
  if (!body.is_object() || !body.contains("config") || !body["config"].is_object()) {
    throw ServiceError(ErrorCode::kConfig, "body must be {\"config\": {...}}");
  }
  for (const auto& [key, v] : body.items()) {
    if (key != "config" && key != "retrain") throw ServiceError(ErrorCode::kConfig, "unknown key '" + key + "'");
  }
  const auto cfg = parse_experiment_config(body["config"].dump());
  const auto mode = retrain_from_string(body.value("retrain", std::string("background")));
  static std::mt19937_64 gen{std::random_device{}()};
  std::string id;
  std::unique_lock lock(mu_);
  do {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "s-%016llx", static_cast<unsigned long long>(gen()));
    id = buf;
  } while (sessions_.count(id) || fs::exists(root_ / "sessions" / id));
  lock.unlock();
  const auto dir = root_ / "sessions" / id;
  std::shared_ptr<Session> s;
  try {
    s = Session::create(id, cfg, mode, dir);
  } catch (...) {
    fs::remove_all(dir);
    throw;
  }
  lock.lock();
  sessions_.emplace(id, s);
  lock.unlock();
  return {{"session_id", id}, {"status", s->status()}};
}

std::shared_ptr<Session> SessionManager::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(ErrorCode::kNotFound, "unknown session", {{"session_id", id}});
  return it->second;
}

std::size_t SessionManager::size() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

// ---------------------------------------------------------------------------

namespace {

template <typename F>
void handle(httplib::Response& res, int ok_status, F&& f) {
  try {
    const json body = f();
    res.status = ok_status;
    res.set_content(body.dump(), "application/json");
  } catch (const Error& e) {
    res.status = http_status(e.code());
    res.set_content(error_body(e).dump(), "application/json");
  } catch (const json::exception& e) {
    res.status = 400;
    res.set_content(error_body(Error(ErrorCode::kInvalidArgument, e.what())).dump(), "application/json");
  } catch (const std::exception& e) {
    res.status = 500;
    res.set_content(error_body(Error(ErrorCode::kInternal, e.what())).dump(), "application/json");
  }
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ServiceError(ErrorCode::kInvalidArgument, "request body is not JSON", {{"parse_error", e.what()}});
  }
}

}  // namespace

void register_routes(httplib::Server& server, SessionManager& sessions) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Post("/v1/sessions", [&](const httplib::Request& req, httplib::Response& res) {
    handle(res, 201, [&] { return sessions.create(parse_body(req)); });
  });
  server.Get(R"(/v1/sessions/([^/]+)/status)", [&](const httplib::Request& req, httplib::Response& res) {
    handle(res, 200, [&] { return sessions.get(req.matches[1])->status(); });
  });
  server.Get(R"(/v1/sessions/([^/]+)/next)", [&](const httplib::Request& req, httplib::Response& res) {
    handle(res, 200, [&] {
      std::size_t k = 1;
      if (req.has_param("k")) {
        const auto v = req.get_param_value("k");
        if (v.empty() || v.size() > 9 || v.find_first_not_of("0123456789") != std::string::npos) {
          throw ServiceError(ErrorCode::kInvalidArgument, "k must be a positive integer", {{"k", v}});
        }
        k = std::stoul(v);
      }
      return sessions.get(req.matches[1])->next_pairs(k);
    });
  });
  server.Post(R"(/v1/sessions/([^/]+)/labels)", [&](const httplib::Request& req, httplib::Response& res) {
    handle(res, 200, [&] {
      const auto session = sessions.get(req.matches[1]);
      const json body = parse_body(req);
      for (const auto& [key, v] : body.items()) {
        if (key != "pair_id" && key != "outcome" && key != "nonce") {
          throw ServiceError(ErrorCode::kInvalidArgument, "unknown key '" + key + "'");
        }
      }
      const auto& pid = body.contains("pair_id") ? body["pair_id"] : json();
      std::string pair_id = pid.is_string() ? pid.get<std::string>()
                            : pid.is_number_unsigned() ? std::to_string(pid.get<std::uint64_t>())
                                                       : std::string();
      const std::string nonce = body.contains("nonce") && body["nonce"].is_string() ? body["nonce"].get<std::string>()
                                                                                     : std::string();
      return session->submit_label(pair_id, body.contains("outcome") ? body["outcome"] : json(), nonce);
    });
  });
  server.Post(R"(/v1/sessions/([^/]+)/retrain)", [&](const httplib::Request& req, httplib::Response& res) {
    handle(res, 202, [&] {
      const json body = parse_body(req);
      return sessions.get(req.matches[1])->retrain(body.value("wait", false));
    });
  });
  server.Get(R"(/v1/sessions/([^/]+)/pairs/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
    handle(res, 200, [&] { return sessions.get(req.matches[1])->pair(req.matches[2]); });
  });
}

int serve(const std::string& host, int port, const fs::path& root) {
  SessionManager sessions(root);
  httplib::Server server;
  register_routes(server, sessions);
  spdlog::info("serving /v1 on {}:{} with state under {}", host, port, root.string());
  if (!server.listen(host, port)) {
    spdlog::error("cannot listen on {}:{}", host, port);
    return 3;
  }
  return 0;
}

}  // namespace btal
