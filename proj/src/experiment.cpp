#include "btal/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "btal/fs_util.hpp"
#include "btal/worlds.hpp"
#include "json.hpp"

namespace btal {

namespace fs = std::filesystem;

namespace {

TestPromptSet planted_test_set(const PlantedLinearWorld& world, const WorldConfig& wc) {
  Rng rng(derive_seed(wc.seed, 2));
  TestPromptSet set;
  for (std::size_t p = 0; p < wc.test_prompts; ++p) {
    TestPrompt tp;
    tp.embeddings = world.sample_points(rng, wc.test_generations);
    tp.golden = tp.embeddings.transpose() * world.beta;
    set.prompts.push_back(std::move(tp));
  }
  return set;
}

TestPromptSet dataset_test_set(const EmbeddingDataset& ds) {
  if (!ds.has_golden()) throw Error(ErrorCode::kConfig, "config: world.test_dataset has no golden scores");
  std::map<std::uint32_t, std::vector<const EmbeddingRecord*>> groups;
  for (const auto& r : ds.records) groups[r.prompt_id].push_back(&r);
  TestPromptSet set;
  for (const auto& [pid, recs] : groups) {
    TestPrompt tp;
    tp.embeddings = Matrix(ds.dim, static_cast<Eigen::Index>(recs.size()));
    tp.golden = Vector(static_cast<Eigen::Index>(recs.size()));
    for (std::size_t i = 0; i < recs.size(); ++i) {
      tp.embeddings.col(static_cast<Eigen::Index>(i)) = recs[i]->embedding;
      tp.golden(static_cast<Eigen::Index>(i)) = *recs[i]->golden;
    }
    set.prompts.push_back(std::move(tp));
  }
  set.validate();
  return set;
}

std::unordered_map<PairId, int> load_imported_labels(const fs::path& path) {
  std::unordered_map<PairId, int> out;
  std::istringstream is(read_file_text(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto left = j.at("left").get<std::uint32_t>();
      const auto right = j.at("right").get<std::uint32_t>();
      const int y = j.at("outcome").get<int>();
      if ((y != 0 && y != 1) || left == right) throw std::runtime_error("bad outcome or self-pair");
      out[PairId::from_items(left, right)] = left < right ? y : 1 - y;
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kConfig, "labels " + path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

ExperimentWorld make_world(const ExperimentConfig& config) {
  const auto& wc = config.world;
  ExperimentWorld w;
  switch (wc.kind) {
    case WorldKind::kPlantedLinear: {
      const auto world = PlantedLinearWorld::make(wc.dim, wc.seed);
      Rng rng(derive_seed(wc.seed, 1));
      std::vector<Item> items;
      for (std::size_t p = 0; p < wc.prompts; ++p) {
        const Matrix pts = world.sample_points(rng, wc.responses);
        for (std::size_t r = 0; r < wc.responses; ++r) {
          Item it;
          it.meta.item_id = static_cast<std::uint32_t>(items.size());
          it.meta.prompt_id = static_cast<std::uint32_t>(p);
          it.meta.response_id = static_cast<std::uint32_t>(r);
          it.embedding = pts.col(static_cast<Eigen::Index>(r));
          items.push_back(std::move(it));
        }
      }
      w.pools = std::make_unique<CatalogPoolSource>(std::make_shared<ItemCatalog>(wc.dim, std::move(items)),
                                                    config.pool);
      w.annotator.golden = [world](const Vector& x, const ItemMeta&) -> std::optional<double> {
        return world.golden(x);
      };
      w.test = planted_test_set(world, wc);
      w.dim = wc.dim;
      break;
    }
    case WorldKind::kBimodal2D: {
      const BimodalWorld2D world;
      w.pools = std::make_unique<SampledPointPoolSource>(
          2, [world](Rng& rng, std::size_t n) { return world.sample_points(rng, n); }, wc.points,
          config.pool.pool_cap.value_or(k2DPoolCap));
      w.annotator.golden = [](const Vector& x, const ItemMeta&) -> std::optional<double> {
        return golden_reward_2d(x);
      };
      TestPrompt tp;
      tp.embeddings = grid_points_2d(wc.grid, -3.0, 3.0);
      tp.golden = Vector(tp.embeddings.cols());
      for (Eigen::Index k = 0; k < tp.golden.size(); ++k) tp.golden(k) = golden_reward_2d(tp.embeddings(0, k), tp.embeddings(1, k));
      w.test = TestPromptSet{{std::move(tp)}};
      w.dim = 2;
      break;
    }
    case WorldKind::kDataset: {
      const auto ds = load_embedding_dataset(config.resolve(wc.dataset));
      auto catalog = std::make_shared<ItemCatalog>(ItemCatalog::from_dataset(ds));
      if (ds.has_golden()) {
        auto golden = std::make_shared<std::unordered_map<std::uint32_t, double>>();
        for (std::size_t i = 0; i < ds.records.size(); ++i) (*golden)[static_cast<std::uint32_t>(i)] = *ds.records[i].golden;
        w.annotator.golden = [golden](const Vector&, const ItemMeta& meta) -> std::optional<double> {
          const auto it = golden->find(meta.item_id);
          if (it == golden->end()) return std::nullopt;
          return it->second;
        };
      }
      if (!wc.test_dataset.empty()) {
        const auto test = load_embedding_dataset(config.resolve(wc.test_dataset));
        if (test.dim != ds.dim) throw Error(ErrorCode::kConfig, "config: test dataset dim differs from the dataset");
        w.test = dataset_test_set(test);
      }
      if (config.annotator == AnnotatorKind::kImported) w.annotator.imported = load_imported_labels(config.resolve(wc.labels));
      w.dim = ds.dim;
      w.pools = std::make_unique<CatalogPoolSource>(std::move(catalog), config.pool);
      break;
    }
  }
  w.annotator.kind = config.annotator;
  return w;
}

void write_2d_golden(const fs::path& dir) {
  const Matrix g = grid_points_2d(kHeatmapSide, -4.0, 4.0);
  std::ostringstream os;
  os << "x,y,reward\n";
  for (Eigen::Index k = 0; k < g.cols(); ++k) {
    os << format_number(g(0, k)) << ',' << format_number(g(1, k)) << ','
       << format_number(golden_reward_2d(g(0, k), g(1, k))) << '\n';
  }
  fs::create_directories(dir / "plot2d");
  write_file_atomic(dir / "plot2d" / "golden.csv", os.str());
}

void write_2d_round(const fs::path& dir, const RoundRecord& record, const RewardModel& previous) {
  const Matrix g = grid_points_2d(kHeatmapSide, -4.0, 4.0);
  const Vector r = previous.rewards(g);
  std::ostringstream heat;
  heat << "x,y,reward\n";
  for (Eigen::Index k = 0; k < g.cols(); ++k) {
    heat << format_number(g(0, k)) << ',' << format_number(g(1, k)) << ',' << format_number(r(k)) << '\n';
  }
  std::ostringstream pairs;
  pairs << "pair_id,x1,y1,x2,y2,outcome\n";
  for (std::size_t i = 0; i < record.selected_pairs.size(); ++i) {
    const auto& p = record.selected_pairs[i];
    pairs << p.id.value << ',' << format_number(p.left(0)) << ',' << format_number(p.left(1)) << ','
          << format_number(p.right(0)) << ',' << format_number(p.right(1)) << ',' << record.labels.at(i).outcome
          << '\n';
  }
  fs::create_directories(dir / "plot2d");
  write_file_atomic(dir / "plot2d" / ("heatmap_" + round_file(record.round, "csv")), heat.str());
  write_file_atomic(dir / "plot2d" / ("pairs_" + round_file(record.round, "csv")), pairs.str());
}

RunTrace run_experiment_seed(const ExperimentConfig& config, std::uint64_t seed, const fs::path& out_dir,
                             const SelectionObserver& observer) {
  config.validate();
  ExperimentWorld world = make_world(config);
  const LoopConfig loop = config.loop_config(seed);
  const bool is_2d = config.world.kind == WorldKind::kBimodal2D;

  std::unique_ptr<RunArtifactWriter> writer;
  if (!out_dir.empty()) {
    ExperimentConfig snapshot = config;
    snapshot.seeds = {seed};
    writer = std::make_unique<RunArtifactWriter>(out_dir, format_experiment_config(snapshot), seed);
    if (is_2d) write_2d_golden(out_dir);
  }

  std::optional<RewardModel> previous;
  std::size_t next_round = 0;
  LoopHooks hooks;
  hooks.selector = [&](StrategyKind kind, std::span<const ComparisonPair> pool, std::size_t c,
                       const StrategyContext& ctx) {
    auto result = select_pairs(kind, pool, c, ctx);
    if (observer) observer({next_round, pool, &result, ctx.model, world.pools.get()});
    return result;
  };
  hooks.on_round = [&](const RoundRecord& rec, const LabeledDataset&) {
    if (writer) {
      writer->write_round(rec);
      if (is_2d && previous) write_2d_round(out_dir, rec, *previous);
    }
    previous = rec.model;
    next_round = rec.round + 1;
  };
  try {
    auto trace = run_active_learning({}, *world.pools, world.annotator, world.test ? &*world.test : nullptr, loop, hooks);
    if (writer) writer->finish("complete");
    return trace;
  } catch (const Error& e) {
    if (writer) writer->finish("failed", e.what());
    throw;
  }
}

void run_experiment(const ExperimentConfig& config) {
  config.validate();
  for (auto seed : config.seeds) {
    spdlog::info("{}: seed {}", config.name, seed);
    run_experiment_seed(config, seed, config.output_path() / ("seed_" + std::to_string(seed)));
  }
}

ExperimentConfig make_2d_config(StrategyKind strategy) {
  ExperimentConfig c;
  c.name = "2d_" + to_string(strategy);
  c.strategy = strategy;
  c.batch_size = k2DBatch;
  c.rounds = k2DRounds;
  c.world.kind = WorldKind::kBimodal2D;
  c.world.points = k2DPoints;
  c.pool.pool_cap = k2DPoolCap;
  c.train.hidden = k2DHidden;
  c.train.epochs = 200;
  c.train.minibatch = 100;
  c.train.learning_rate = 1e-2;
  c.train.final_learning_rate = 1e-3;
  return c;
}

Experiment2DResult run_2d_experiment(StrategyKind strategy, std::uint64_t seed, const fs::path& out_dir) {
  Experiment2DResult out;
  out.config = make_2d_config(strategy);
  out.config.seeds = {seed};
  auto observer = [&](const SelectionObservation& obs) {
    Round2D r;
    r.round = obs.round;
    r.pool_size = obs.pool.size();
    r.selected = obs.result->selected.size();
    if (const auto* src = dynamic_cast<const SampledPointPoolSource*>(obs.source)) {
      r.candidate_points = src->last_catalog().size();
    }
    const Vector gap = pair_features(*obs.model, obs.pool).reward_gap;
    const Vector margin = gap.unaryExpr([](double z) { return std::abs(sigmoid(z) - 0.5); });
    r.pool_mean_abs_margin = margin.mean();
    double sel = 0.0;
    for (auto i : obs.result->selected) sel += margin(static_cast<Eigen::Index>(i));
    r.selected_mean_abs_margin = sel / static_cast<double>(r.selected);
    out.rounds.push_back(r);
  };
  out.trace = run_experiment_seed(out.config, seed, out_dir, observer);
  return out;
}

std::vector<SweepRun> expand_sweep(const ExperimentConfig& config) {
  const auto strategies = config.sweep.strategies.empty() ? std::vector<StrategyKind>{config.strategy}
                                                          : config.sweep.strategies;
  const auto batches = config.sweep.batch_sizes.empty() ? std::vector<std::size_t>{config.batch_size}
                                                        : config.sweep.batch_sizes;
  const auto modes = config.sweep.cross_prompt.empty() ? std::vector<bool>{config.pool.cross_prompt}
                                                       : config.sweep.cross_prompt;
  std::vector<SweepRun> runs;
  for (auto s : strategies) {
    for (auto b : batches) {
      for (bool cross : modes) {
        for (auto seed : config.seeds) {
          SweepRun r;
          r.label = to_string(s) + "_c" + std::to_string(b) + (cross ? "_cross" : "_in");
          r.config = config;
          r.config.strategy = s;
          r.config.batch_size = b;
          r.config.pool.cross_prompt = cross;
          r.config.sweep = {};
          r.config.seeds = {seed};
          r.seed = seed;
          runs.push_back(std::move(r));
        }
      }
    }
  }
  return runs;
}

SweepOutcome run_sweep(const ExperimentConfig& config, std::size_t jobs) {
  config.validate();
  const auto runs = expand_sweep(config);
  const fs::path root = config.output_path();
  fs::create_directories(root);
  std::vector<std::vector<MetricsRow>> rows(runs.size());
  std::vector<std::string> errors(runs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      const auto& r = runs[i];
      try {
        const auto trace = run_experiment_seed(r.config, r.seed, root / r.label / ("seed_" + std::to_string(r.seed)));
        for (std::size_t s = 1; s < trace.rounds.size(); ++s) rows[i].push_back(metrics_row(trace.rounds[s]));
      } catch (const std::exception& e) {
        errors[i] = e.what();
        spdlog::error("{} seed {} failed: {}", r.label, r.seed, e.what());
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::max<std::size_t>(1, jobs); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  SweepOutcome outcome;
  outcome.runs = runs.size();
  std::ostringstream sweep;
  std::ostringstream failures;
  sweep << kSweepHeader << '\n';
  failures << "label,seed,message\n";
  struct Acc {
    const SweepRun* run = nullptr;
    std::size_t n_labels = 0;
    std::size_t runs = 0;
    std::vector<double> oms;
    std::vector<double> bon;
  };
  std::map<std::pair<std::string, std::size_t>, Acc> acc;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    if (std::find(order.begin(), order.end(), r.label) == order.end()) order.push_back(r.label);
    if (!errors[i].empty()) {
      ++outcome.failures;
      std::string msg = errors[i];
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      std::replace(msg.begin(), msg.end(), '"', '\'');
      failures << r.label << ',' << r.seed << ",\"" << msg << "\"\n";
      continue;
    }
    for (const auto& m : rows[i]) {
      sweep << r.label << ',' << to_string(r.config.strategy) << ',' << r.config.batch_size << ','
            << (r.config.pool.cross_prompt ? 1 : 0) << ',' << r.seed << ',' << m.round << ',' << m.n_labels << ','
            << format_number(m.one_minus_spearman) << ',' << format_number(m.best_of_n) << '\n';
      auto& a = acc[{r.label, m.round}];
      a.run = &r;
      a.n_labels = m.n_labels;
      ++a.runs;
      if (m.one_minus_spearman) a.oms.push_back(*m.one_minus_spearman);
      if (m.best_of_n) a.bon.push_back(*m.best_of_n);
    }
  }
  auto mean_sd = [](const std::vector<double>& v) -> std::pair<std::optional<double>, std::optional<double>> {
    if (v.empty()) return {std::nullopt, std::nullopt};
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    if (v.size() < 2) return {m, std::nullopt};
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
  };
  std::ostringstream summary;
  summary << kSummaryHeader << '\n';
  for (const auto& label : order) {
    for (const auto& [key, a] : acc) {
      if (key.first != label) continue;
      const auto [om, osd] = mean_sd(a.oms);
      const auto [bm, bsd] = mean_sd(a.bon);
      summary << label << ',' << to_string(a.run->config.strategy) << ',' << a.run->config.batch_size << ','
              << (a.run->config.pool.cross_prompt ? 1 : 0) << ',' << key.second << ',' << a.n_labels << ','
              << a.runs << ',' << format_number(om) << ',' << format_number(osd) << ',' << format_number(bm)
              << ',' << format_number(bsd) << '\n';
    }
  }
  write_file_atomic(root / "sweep.csv", sweep.str());
  write_file_atomic(root / "summary.csv", summary.str());
  write_file_atomic(root / "failures.csv", failures.str());
  return outcome;
}

}  // namespace btal
