#include "btal/run_artifact.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <sstream>

#include "btal/fs_util.hpp"
#include "json.hpp"

namespace btal {

namespace fs = std::filesystem;

std::string format_number(std::optional<double> v) {
  if (!v) return {};
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", *v);
  return buf;
}

std::string format_metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    os << r.round << ',' << r.n_labels << ',' << format_number(r.one_minus_spearman) << ','
       << format_number(r.best_of_n) << '\n';
  }
  return os.str();
}

std::vector<MetricsRow> parse_metrics_csv(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader) {
    throw Error(ErrorCode::kCorruptHeader, "metrics file does not start with '" + std::string(kMetricsHeader) + "'");
  }
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 4) throw Error(ErrorCode::kCorruptHeader, "metrics line " + std::to_string(lineno) + " malformed");
    try {
      MetricsRow r;
      r.round = std::stoull(f[0]);
      r.n_labels = std::stoull(f[1]);
      if (!f[2].empty()) r.one_minus_spearman = std::stod(f[2]);
      if (!f[3].empty()) r.best_of_n = std::stod(f[3]);
      rows.push_back(r);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kCorruptHeader, "metrics line " + std::to_string(lineno) + " malformed");
    }
  }
  return rows;
}

MetricsRow metrics_row(const RoundRecord& record) {
  MetricsRow r;
  r.round = record.round;
  r.n_labels = record.n_labels;
  if (record.metrics) {
    r.one_minus_spearman = record.metrics->one_minus_spearman;
    r.best_of_n = record.metrics->best_of_n;
  }
  return r;
}

std::string round_file(std::size_t round, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "round_%03zu.%s", round, ext);
  return buf;
}

std::string labels_csv(const RoundRecord& record) {
  std::ostringstream os;
  os << "pair_id,left_item,right_item,left_prompt,right_prompt,outcome\n";
  for (std::size_t i = 0; i < record.selected_pairs.size(); ++i) {
    const auto& p = record.selected_pairs[i];
    os << p.id.value << ',' << p.left_meta.item_id << ',' << p.right_meta.item_id << ',' << p.left_meta.prompt_id
       << ',' << p.right_meta.prompt_id << ',' << record.labels.at(i).outcome << '\n';
  }
  return os.str();
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunArtifactWriter::RunArtifactWriter(fs::path dir, std::string config_json, std::uint64_t seed)
    : dir_(std::move(dir)), seed_(seed), created_(utc_timestamp()) {
  std::error_code ec;
  for (const char* sub : {"selections", "labels", "models"}) {
    fs::create_directories(dir_ / sub, ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot create " + (dir_ / sub).string() + ": " + ec.message());
  }
  write_file_atomic(dir_ / "config.json", config_json);
  write_file_atomic(dir_ / "metrics.csv", format_metrics_csv(rows_));
  write_metadata("running", {});
}

void RunArtifactWriter::write_metadata(const std::string& status, const std::string& error) {
  nlohmann::json m{{"created", created_}, {"updated", utc_timestamp()}, {"status", status}, {"seed", seed_}};
  if (!error.empty()) m["error"] = error;
  write_file_atomic(dir_ / "metadata.json", m.dump(2) + "\n");
}

void RunArtifactWriter::write_round(const RoundRecord& record) {
  write_selection_records(record.selection, record.round, dir_ / "selections" / round_file(record.round, "csv"));
  write_file_atomic(dir_ / "labels" / round_file(record.round, "csv"), labels_csv(record));
  save_checkpoint(record.model, dir_ / "models" / round_file(record.round, "bin"));
  if (record.round >= 1) {
    rows_.push_back(metrics_row(record));
    write_file_atomic(dir_ / "metrics.csv", format_metrics_csv(rows_));
  }
}

void RunArtifactWriter::finish(const std::string& status, const std::string& error) { write_metadata(status, error); }

RunArtifact read_run_artifact(const fs::path& dir) {
  for (const char* f : {"config.json", "metrics.csv", "metadata.json"}) {
    if (!fs::exists(dir / f)) throw Error(ErrorCode::kIo, "run artifact is missing " + (dir / f).string());
  }
  RunArtifact a;
  a.dir = dir;
  a.config_json = read_file_text(dir / "config.json");
  a.metrics = parse_metrics_csv(read_file_text(dir / "metrics.csv"));
  return a;
}

}  // namespace btal
