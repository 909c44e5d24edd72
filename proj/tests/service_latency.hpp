#pragma once

// next_pairs latency on a 20,000-pair pool with 64-dimensional embeddings,
// measured over HTTP against an in-process server.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <vector>

#include "btal/config.hpp"
#include "live_server.hpp"

namespace btal::testing {

struct LatencyReport {
  std::size_t pool_size = 0;
  std::size_t dim = 0;
  double cold_ms = 0.0;     // first queue computation in the process
  double compute_ms = 0.0;  // a later round's queue computation, after warm-up
  double served_max_ms = 0.0;  // repeated next calls on a ready queue
};

inline ExperimentConfig latency_config() {
  ExperimentConfig c;
  c.name = "latency";
  c.strategy = StrategyKind::kDopt;
  c.batch_size = 50;
  c.rounds = 3;
  c.world.dim = 64;
  c.world.prompts = 500;
  c.world.responses = 10;
  c.world.test_prompts = 4;
  c.world.test_generations = 8;
  c.pool.prompts_per_round = 500;
  c.pool.responses_per_prompt = 10;
  c.pool.pool_cap = 20000;
  c.train.hidden = 64;
  c.train.epochs = 10;
  c.train.minibatch = 50;
  return c;
}

inline LatencyReport measure_service_latency(const std::filesystem::path& root) {
  using clock = std::chrono::steady_clock;
  const auto ms = [](clock::duration d) { return std::chrono::duration<double, std::milli>(d).count(); };
  std::filesystem::remove_all(root);
  LiveServer srv(root);
  const auto cfg = latency_config();
  const auto created =
      srv.post("/v1/sessions", {{"config", json::parse(format_experiment_config(cfg))}, {"retrain", "sync"}});
  if (created.status != 201) throw std::runtime_error("create failed: " + created.body.dump());
  const auto sid = created.body["session_id"].get<std::string>();
  const std::string base = "/v1/sessions/" + sid;

  auto label_round = [&](int round) {
    const auto next = srv.get(base + "/next?k=" + std::to_string(cfg.batch_size));
    if (next.status != 200) throw std::runtime_error("next failed: " + next.body.dump());
    int i = 0;
    for (const auto& p : next.body["pairs"]) {
      const auto r = srv.post(base + "/labels", {{"pair_id", p["pair_id"]},
                                                 {"outcome", i % 2},
                                                 {"nonce", std::to_string(round) + "_" + std::to_string(i)}});
      if (r.status != 200) throw std::runtime_error("label failed: " + r.body.dump());
      ++i;
    }
  };
  auto timed_next = [&](std::size_t k) {
    const auto t0 = clock::now();
    const auto r = srv.get(base + "/next?k=" + std::to_string(k));
    const double t = ms(clock::now() - t0);
    if (r.status != 200) throw std::runtime_error("next failed: " + r.body.dump());
    return t;
  };

  LatencyReport rep;
  rep.dim = cfg.world.dim;
  label_round(0);
  rep.cold_ms = timed_next(1);
  label_round(1);
  rep.compute_ms = timed_next(1);
  for (int i = 0; i < 30; ++i) rep.served_max_ms = std::max(rep.served_max_ms, timed_next(5));
  rep.pool_size = srv.sessions().get(sid)->snapshot().pool->size();
  return rep;
}

}  // namespace btal::testing
