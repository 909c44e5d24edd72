// btal: experiments, sweeps, plots, dataset tooling and the annotation service.
//
// Exit codes: 0 ok, 2 config or usage error, 3 runtime error. Failures print
// one JSON error record on stderr.

#include <cstdlib>
#include <iostream>
#include <set>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "btal/annotation_service.hpp"
#include "btal/config.hpp"
#include "btal/dataset_io.hpp"
#include "btal/experiment.hpp"
#include "btal/plot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

int fail(const std::string& command, std::string_view code, const std::string& message, int exit_code) {
  std::cerr << json{{"error", {{"command", command}, {"code", code}, {"message", message}, {"exit_code", exit_code}}}}
                   .dump()
            << std::endl;
  return exit_code;
}

fs::path default_root() {
  const char* env = std::getenv("BTAL_OUTPUT_ROOT");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
}

json dataset_summary(const btal::EmbeddingDataset& ds) {
  std::set<std::uint32_t> prompts;
  for (const auto& r : ds.records) prompts.insert(r.prompt_id);
  return {{"dim", ds.dim},
          {"records", ds.records.size()},
          {"prompts", prompts.size()},
          {"golden", ds.has_golden()},
          {"text", ds.has_text()}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active preference learning for reward models"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  std::string config_path;
  std::string output_override;
  auto* run = app.add_subcommand("run", "Run every seed of an experiment config");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--output", output_override, "Output directory (overrides output_dir)");

  std::size_t jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Run the cartesian sweep of a config");
  sweep->add_option("--config", config_path, "Experiment config with a sweep section")->required();
  sweep->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  sweep->add_option("--output", output_override, "Output directory (overrides output_dir)");

  std::string plot_in;
  std::string plot_out;
  auto* plot = app.add_subcommand("plot", "Learning curves, 2D panels and the plotted CSV");
  plot->add_option("--input", plot_in, "Run directory, seed root or sweep root")->required();
  plot->add_option("--out", plot_out, "Output directory")->required();

  auto* dataset = app.add_subcommand("dataset", "Embedding dataset tooling");
  dataset->require_subcommand(1);
  std::string ds_in;
  std::string ds_out;
  dataset->add_subcommand("validate", "Check a dataset and print a summary")->add_option("input", ds_in, "Binary or .jsonl dataset")->required();
  auto* convert = dataset->add_subcommand("convert", "Convert between binary and JSONL (by output extension)");
  convert->add_option("input", ds_in, "Source dataset")->required();
  convert->add_option("output", ds_out, "Destination; .jsonl writes JSONL, anything else binary")->required();

  std::string host = "127.0.0.1";
  int port = 8080;
  std::string serve_root;
  auto* serve = app.add_subcommand("serve", "Run the /v1 annotation service");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port")->check(CLI::Range(1, 65535));
  serve->add_option("--root", serve_root, "State directory (default $BTAL_OUTPUT_ROOT or runs)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << '\n';
    return fail("usage", "usage_error", e.what(), kExitConfig);
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
  spdlog::set_default_logger(spdlog::default_logger()->clone("btal"));

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (*run) {
      auto cfg = btal::load_experiment_config(config_path);
      if (!output_override.empty()) cfg.output_dir = output_override;
      btal::run_experiment(cfg);
      std::cout << json{{"output", cfg.output_path().string()}, {"seeds", cfg.seeds}}.dump() << '\n';
    } else if (*sweep) {
      auto cfg = btal::load_experiment_config(config_path);
      if (!output_override.empty()) cfg.output_dir = output_override;
      const auto outcome = btal::run_sweep(cfg, jobs);
      std::cout << json{{"output", cfg.output_path().string()}, {"runs", outcome.runs}, {"failures", outcome.failures}}
                       .dump()
                << '\n';
      // Every run was attempted; report the failures recorded in failures.csv.
      if (outcome.failures > 0) {
        return fail(command, "run_failures",
                    std::to_string(outcome.failures) + " of " + std::to_string(outcome.runs) +
                        " runs failed; see failures.csv",
                    kExitRuntime);
      }
    } else if (*plot) {
      json files = json::array();
      for (const auto& f : btal::plot_artifact(plot_in, plot_out)) files.push_back(f.string());
      std::cout << json{{"files", files}}.dump() << '\n';
    } else if (*dataset) {
      const auto ds = btal::load_embedding_dataset(ds_in);
      ds.validate();
      if (*convert) {
        if (fs::path(ds_out).extension() == ".jsonl") {
          btal::save_jsonl_dataset(ds, ds_out);
        } else {
          btal::save_embedding_dataset(ds, ds_out);
        }
      }
      std::cout << dataset_summary(ds).dump() << '\n';
    } else if (*serve) {
      return btal::serve(host, port, serve_root.empty() ? default_root() : fs::path(serve_root));
    }
  } catch (const btal::Error& e) {
    return fail(command, btal::to_string(e.code()), e.what(),
                e.code() == btal::ErrorCode::kConfig ? kExitConfig : kExitRuntime);
  } catch (const std::exception& e) {
    return fail(command, "internal", e.what(), kExitRuntime);
  }
  return kExitOk;
}
