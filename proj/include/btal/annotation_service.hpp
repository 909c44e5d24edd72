#pragma once

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "btal/experiment.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace btal {

/// Error with an HTTP-facing code string ("not_found", "conflict", ...).
struct ServiceError : Error {
  ServiceError(ErrorCode code, std::string message, nlohmann::json detail = {})
      : Error(code, std::move(message)), detail(std::move(detail)) {}
  nlohmann::json detail;
};

std::string error_code_name(ErrorCode code);
int http_status(ErrorCode code);
/// {code, message, detail}
nlohmann::json error_body(const Error& e);

enum class RetrainMode { kBackground, kSync };

/// One live human-annotation session: the active-learning loop with labels
/// arriving over HTTP. Every accepted label and every computed queue is
/// appended to wal.jsonl before the caller sees it, so a restart replays to the
/// same state.
///
/// Locking: readers (status, next with a ready queue, pair lookup) share the
/// session lock; label submission, queue computation and model swaps take it
/// exclusively. Training runs on one FIFO worker thread per session.
class Session {
 public:
  /// New session under `dir` (created). Builds round 0's bootstrap queue.
  static std::unique_ptr<Session> create(std::string id, const ExperimentConfig& config, RetrainMode mode,
                                         const std::filesystem::path& dir);
  /// Rebuilds a session from its directory by replaying the WAL.
  static std::unique_ptr<Session> recover(const std::filesystem::path& dir);
  ~Session();

  const std::string& id() const { return id_; }

  nlohmann::json status() const;
  /// The first k pending pairs of the current round's ranked queue.
  nlohmann::json next_pairs(std::size_t k);
  nlohmann::json submit_label(const std::string& pair_id, const nlohmann::json& outcome, const std::string& nonce);
  /// Trains on the current labels; waits for the new model when `wait`.
  nlohmann::json retrain(bool wait);
  nlohmann::json pair(const std::string& pair_id) const;

  /// Blocks until every queued training job has finished.
  void wait_idle();

  /// For tests: the state a strategy would see for the current round.
  struct Snapshot {
    std::size_t round = 0;
    std::shared_ptr<const std::vector<ComparisonPair>> pool;
    std::shared_ptr<const RewardModel> model;
    LabeledDataset data;
    std::uint64_t select_seed = 0;
  };
  Snapshot snapshot() const;
  const ExperimentConfig& config() const { return config_; }

 private:
  struct TrainJob {
    std::size_t round = 0;  // round whose close triggered it
    bool manual = false;
    std::uint64_t version = 0;  // model version this job produces
    LabeledDataset data;
  };

  Session(std::string id, ExperimentConfig config, RetrainMode mode, std::filesystem::path dir);

  void start_round(std::size_t round);
  void ensure_queue(std::unique_lock<std::shared_mutex>& lock);
  void set_queue(const std::vector<PairId>& ranked, const SelectionResult& selection, std::uint64_t model_version,
                 bool log);
  nlohmann::json apply_label(PairId id, int outcome, const std::string& nonce, std::int64_t timestamp_ms, bool log);
  void close_round();
  void enqueue(TrainJob job);
  void run_job(const TrainJob& job, bool replay);
  void install(const TrainJob& job, std::shared_ptr<const RewardModel> model, const std::filesystem::path& file);
  void worker_loop();
  void wal(const nlohmann::json& event);
  PairId parse_pair_id(const std::string& s) const;
  nlohmann::json pair_json(const ComparisonPair& p) const;
  std::size_t pending_count() const;

  std::string id_;
  ExperimentConfig config_;
  RetrainMode mode_;
  std::filesystem::path dir_;
  std::uint64_t seed_ = 0;
  ExperimentWorld world_;

  mutable std::shared_mutex mu_;
  std::size_t round_ = 0;
  bool complete_ = false;
  bool replaying_ = false;  // WAL replay: no artifact writes, no new WAL lines
  LabeledDataset data_;
  std::unordered_set<PairId> labeled_;
  std::shared_ptr<const std::vector<ComparisonPair>> pool_;
  std::unordered_map<PairId, std::size_t> pool_index_;
  std::optional<std::vector<std::size_t>> queue_;  // ranked pool indices
  std::optional<SelectionResult> selection_;
  std::uint64_t queue_model_version_ = 0;
  std::unordered_set<PairId> pending_;
  std::vector<ComparisonPair> round_pairs_;
  std::vector<PreferenceLabel> round_labels_;
  std::unordered_map<std::string, nlohmann::json> nonces_;
  std::size_t human_labels_ = 0;

  std::shared_ptr<const RewardModel> model_;
  std::uint64_t model_version_ = 0;
  std::uint64_t jobs_issued_ = 0;
  std::optional<EvalResult> metrics_;
  std::vector<MetricsRow> metrics_rows_;
  std::condition_variable_any model_cv_;  // a model was installed or training failed

  mutable std::mutex job_mu_;
  std::condition_variable job_cv_;
  std::condition_variable idle_cv_;
  std::deque<TrainJob> jobs_;
  bool busy_ = false;
  bool stop_ = false;
  std::string worker_error_;
  std::thread worker_;
};

/// Owns the sessions under root/sessions and recovers them on construction.
class SessionManager {
 public:
  explicit SessionManager(std::filesystem::path root);

  /// Body: {"config": ExperimentConfig, "retrain": "background" | "sync"}.
  nlohmann::json create(const nlohmann::json& body);
  std::shared_ptr<Session> get(const std::string& id) const;
  std::size_t size() const;

 private:
  std::filesystem::path root_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

/// Registers the /v1 routes on `server`.
void register_routes(httplib::Server& server, SessionManager& sessions);

/// Blocking; returns when the server stops.
int serve(const std::string& host, int port, const std::filesystem::path& root);

}  // namespace btal
