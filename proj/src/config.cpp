#include "btal/config.hpp"

#include <cstdlib>
#include <set>

#include "btal/fs_util.hpp"
#include "json.hpp"

namespace btal {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::kConfig, "config: " + where + ": " + what);
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) fail(where, "expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!ok.count(key)) fail(where, "unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) fail(where + "." + key, "expected a boolean");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned()) fail(where + "." + key, "expected a nonnegative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) fail(where + "." + key, "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) fail(where + "." + key, "expected a string");
    }
    out = it->get<T>();
  } catch (const json::exception& e) {
    fail(where + "." + key, e.what());
  }
}

template <typename Parse>
void read_enum(const json& obj, const char* key, Parse parse, auto& out, const std::string& where) {
  std::string name;
  read(obj, key, name, where);
  if (!obj.contains(key)) return;
  try {
    out = parse(name);
  } catch (const Error& e) {
    fail(where + "." + key, e.what());
  }
}

void parse_world(const json& j, WorldConfig& w) {
  check_keys(j, "world", {"kind", "seed", "dim", "prompts", "responses", "test_prompts", "test_generations", "points",
                          "grid", "dataset", "test_dataset", "labels"});
  read_enum(j, "kind", world_from_string, w.kind, "world");
  read(j, "seed", w.seed, "world");
  read(j, "dim", w.dim, "world");
  read(j, "prompts", w.prompts, "world");
  read(j, "responses", w.responses, "world");
  read(j, "test_prompts", w.test_prompts, "world");
  read(j, "test_generations", w.test_generations, "world");
  read(j, "points", w.points, "world");
  read(j, "grid", w.grid, "world");
  read(j, "dataset", w.dataset, "world");
  read(j, "test_dataset", w.test_dataset, "world");
  read(j, "labels", w.labels, "world");
}

void parse_pool(const json& j, PoolConfig& p) {
  check_keys(j, "pool", {"prompts_per_round", "responses_per_prompt", "cross_prompt", "pool_cap"});
  read(j, "prompts_per_round", p.prompts_per_round, "pool");
  read(j, "responses_per_prompt", p.responses_per_prompt, "pool");
  read(j, "cross_prompt", p.cross_prompt, "pool");
  if (j.contains("pool_cap")) {
    if (j["pool_cap"].is_null()) {
      p.pool_cap = std::nullopt;
    } else {
      std::size_t cap = 0;
      read(j, "pool_cap", cap, "pool");
      p.pool_cap = cap;
    }
  }
}

void parse_train(const json& j, TrainConfig& t) {
  check_keys(j, "train", {"hidden", "epochs", "minibatch", "learning_rate", "final_learning_rate", "weight_decay",
                          "adam_beta1", "adam_beta2", "adam_epsilon"});
  read(j, "hidden", t.hidden, "train");
  read(j, "epochs", t.epochs, "train");
  read(j, "minibatch", t.minibatch, "train");
  read(j, "learning_rate", t.learning_rate, "train");
  read(j, "final_learning_rate", t.final_learning_rate, "train");
  read(j, "weight_decay", t.weight_decay, "train");
  read(j, "adam_beta1", t.adam_beta1, "train");
  read(j, "adam_beta2", t.adam_beta2, "train");
  read(j, "adam_epsilon", t.adam_epsilon, "train");
}

void parse_sweep(const json& j, SweepAxes& s) {
  check_keys(j, "sweep", {"strategies", "batch_sizes", "cross_prompt"});
  try {
    if (j.contains("strategies")) {
      for (const auto& v : j["strategies"]) s.strategies.push_back(strategy_from_string(v.get<std::string>()));
    }
    if (j.contains("batch_sizes")) {
      for (const auto& v : j["batch_sizes"]) {
        if (!v.is_number_unsigned()) fail("sweep.batch_sizes", "expected nonnegative integers");
        s.batch_sizes.push_back(v.get<std::size_t>());
      }
    }
    if (j.contains("cross_prompt")) {
      for (const auto& v : j["cross_prompt"]) {
        if (!v.is_boolean()) fail("sweep.cross_prompt", "expected booleans");
        s.cross_prompt.push_back(v.get<bool>());
      }
    }
  } catch (const json::exception& e) {
    fail("sweep", e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig && std::string(e.what()).rfind("config:", 0) == 0) throw;
    fail("sweep", e.what());
  }
}

json pool_cap_json(const PoolConfig& p) { return p.pool_cap ? json(*p.pool_cap) : json(nullptr); }

}  // namespace

std::string to_string(WorldKind kind) {
  switch (kind) {
    case WorldKind::kPlantedLinear:
      return "planted_linear";
    case WorldKind::kBimodal2D:
      return "bimodal_2d";
    case WorldKind::kDataset:
      return "dataset";
  }
  return "unknown";
}

WorldKind world_from_string(std::string_view name) {
  for (auto k : {WorldKind::kPlantedLinear, WorldKind::kBimodal2D, WorldKind::kDataset}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::kConfig, "unknown world kind '" + std::string(name) + "'");
}

ExperimentConfig parse_experiment_config(std::string_view json_text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail("parse", e.what());
  }
  check_keys(j, "config", {"name", "strategy", "batch_size", "rounds", "seeds", "annotator", "best_of_n", "output_dir",
                           "world", "pool", "train", "design", "coreset", "batchbald", "sweep"});
  ExperimentConfig c;
  c.base_dir = base_dir;
  read(j, "name", c.name, "config");
  read_enum(j, "strategy", strategy_from_string, c.strategy, "config");
  read(j, "batch_size", c.batch_size, "config");
  read(j, "rounds", c.rounds, "config");
  if (j.contains("seeds")) {
    if (!j["seeds"].is_array()) fail("seeds", "expected an array");
    c.seeds.clear();
    for (const auto& s : j["seeds"]) {
      if (!s.is_number_unsigned()) fail("seeds", "expected nonnegative integers");
      c.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  read_enum(j, "annotator", annotator_from_string, c.annotator, "config");
  read(j, "best_of_n", c.best_of_n, "config");
  read(j, "output_dir", c.output_dir, "config");
  if (j.contains("world")) parse_world(j["world"], c.world);
  if (j.contains("pool")) parse_pool(j["pool"], c.pool);
  if (j.contains("train")) parse_train(j["train"], c.train);
  if (j.contains("design")) {
    const auto& d = j["design"];
    check_keys(d, "design", {"prior_variance", "relative_jitter", "sample_by_gradient"});
    read(d, "prior_variance", c.design.prior_variance, "design");
    read(d, "relative_jitter", c.design.relative_jitter, "design");
    read(d, "sample_by_gradient", c.design.sample_by_gradient, "design");
  }
  if (j.contains("coreset")) {
    const auto& d = j["coreset"];
    check_keys(d, "coreset", {"clusters", "radius", "kmeans_iterations"});
    read(d, "clusters", c.coreset.clusters, "coreset");
    read(d, "radius", c.coreset.radius, "coreset");
    read(d, "kmeans_iterations", c.coreset.kmeans_iterations, "coreset");
  }
  if (j.contains("batchbald")) {
    const auto& d = j["batchbald"];
    check_keys(d, "batchbald", {"samples", "max_configs", "prefilter"});
    read(d, "samples", c.batchbald.samples, "batchbald");
    read(d, "max_configs", c.batchbald.max_configs, "batchbald");
    read(d, "prefilter", c.batchbald.prefilter, "batchbald");
  }
  if (j.contains("sweep")) parse_sweep(j["sweep"], c.sweep);
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file_text(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, "config: cannot read " + path.string() + ": " + e.what());
  }
  return parse_experiment_config(text, path.parent_path());
}

std::string format_experiment_config(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["strategy"] = to_string(c.strategy);
  j["batch_size"] = c.batch_size;
  j["rounds"] = c.rounds;
  j["seeds"] = c.seeds;
  j["annotator"] = to_string(c.annotator);
  j["best_of_n"] = c.best_of_n;
  j["output_dir"] = c.output_dir;
  const auto& w = c.world;
  j["world"] = {{"kind", to_string(w.kind)},
                {"seed", w.seed},
                {"dim", w.dim},
                {"prompts", w.prompts},
                {"responses", w.responses},
                {"test_prompts", w.test_prompts},
                {"test_generations", w.test_generations},
                {"points", w.points},
                {"grid", w.grid},
                {"dataset", w.dataset},
                {"test_dataset", w.test_dataset},
                {"labels", w.labels}};
  j["pool"] = {{"prompts_per_round", c.pool.prompts_per_round},
               {"responses_per_prompt", c.pool.responses_per_prompt},
               {"cross_prompt", c.pool.cross_prompt},
               {"pool_cap", pool_cap_json(c.pool)}};
  const auto& t = c.train;
  j["train"] = {{"hidden", t.hidden},
                {"epochs", t.epochs},
                {"minibatch", t.minibatch},
                {"learning_rate", t.learning_rate},
                {"final_learning_rate", t.final_learning_rate},
                {"weight_decay", t.weight_decay},
                {"adam_beta1", t.adam_beta1},
                {"adam_beta2", t.adam_beta2},
                {"adam_epsilon", t.adam_epsilon}};
  j["design"] = {{"prior_variance", c.design.prior_variance},
                 {"relative_jitter", c.design.relative_jitter},
                 {"sample_by_gradient", c.design.sample_by_gradient}};
  j["coreset"] = {{"clusters", c.coreset.clusters},
                  {"radius", c.coreset.radius},
                  {"kmeans_iterations", c.coreset.kmeans_iterations}};
  j["batchbald"] = {{"samples", c.batchbald.samples},
                    {"max_configs", c.batchbald.max_configs},
                    {"prefilter", c.batchbald.prefilter}};
  json strategies = json::array();
  for (auto s : c.sweep.strategies) strategies.push_back(to_string(s));
  j["sweep"] = {{"strategies", strategies},
                {"batch_sizes", c.sweep.batch_sizes},
                {"cross_prompt", c.sweep.cross_prompt}};
  return j.dump(2) + "\n";
}

std::filesystem::path ExperimentConfig::resolve(const std::string& path) const {
  const std::filesystem::path p(path);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

std::filesystem::path ExperimentConfig::output_path() const {
  if (!output_dir.empty()) return resolve(output_dir);
  const char* root = std::getenv("BTAL_OUTPUT_ROOT");
  return std::filesystem::path(root != nullptr && *root != '\0' ? root : "runs") / name;
}

void ExperimentConfig::validate() const {
  auto check = [](bool ok, const std::string& where, const std::string& what) {
    if (!ok) fail(where, what);
  };
  check(!name.empty() && name.find('/') == std::string::npos, "name", "must be a nonempty path component");
  check(!seeds.empty(), "seeds", "must be nonempty");
  check(batch_size >= 1, "batch_size", "must be at least 1");
  check(rounds >= 1, "rounds", "must be at least 1");
  check(annotator != AnnotatorKind::kHumanSession, "annotator", "human_session runs through the annotation service");
  try {
    loop_config(seeds.front()).validate();
    pool.validate(batch_size);
    for (auto b : sweep.batch_sizes) pool.validate(b);
  } catch (const Error& e) {
    fail("ranges", e.what());
  }
  for (auto b : sweep.batch_sizes) check(b >= 1, "sweep.batch_sizes", "must be at least 1");
  switch (world.kind) {
    case WorldKind::kPlantedLinear:
      check(world.dim >= 1, "world.dim", "must be at least 1");
      check(world.prompts >= 1 && world.responses >= 2, "world", "needs prompts >= 1 and responses >= 2");
      check(world.test_prompts >= 1 && world.test_generations >= 2, "world",
            "needs test_prompts >= 1 and test_generations >= 2");
      break;
    case WorldKind::kBimodal2D:
      check(world.points >= 2, "world.points", "must be at least 2");
      check(world.grid >= 2, "world.grid", "must be at least 2");
      check(pool.pool_cap.has_value(), "pool.pool_cap", "the 2D world needs a finite pool cap");
      break;
    case WorldKind::kDataset:
      check(!world.dataset.empty(), "world.dataset", "required for dataset worlds");
      check(std::filesystem::exists(resolve(world.dataset)), "world.dataset",
            "file not found: " + resolve(world.dataset).string());
      if (!world.test_dataset.empty()) {
        check(std::filesystem::exists(resolve(world.test_dataset)), "world.test_dataset",
              "file not found: " + resolve(world.test_dataset).string());
      }
      if (annotator == AnnotatorKind::kImported) {
        check(!world.labels.empty() && std::filesystem::exists(resolve(world.labels)), "world.labels",
              "imported annotator needs an existing labels file");
      }
      break;
  }
  if (annotator == AnnotatorKind::kImported) {
    check(world.kind == WorldKind::kDataset, "annotator", "imported labels need a dataset world");
  }
}

LoopConfig ExperimentConfig::loop_config(std::uint64_t seed) const {
  LoopConfig l;
  l.strategy = strategy;
  l.batch_size = batch_size;
  l.rounds = rounds;
  l.train = train;
  l.design = design;
  l.coreset = coreset;
  l.batchbald = batchbald;
  l.best_of_n = best_of_n;
  l.seed = seed;
  return l;
}

}  // namespace btal
