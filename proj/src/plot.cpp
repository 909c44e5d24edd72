#include "btal/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include "btal/common.hpp"
#include "btal/fs_util.hpp"
#include "btal/run_artifact.hpp"

namespace btal {

namespace fs = std::filesystem;

namespace {

using Table = std::vector<std::vector<std::string>>;

Table read_csv(const fs::path& path) {
  Table rows;
  std::istringstream is(read_file_text(path));
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    rows.push_back(std::move(f));
  }
  return rows;
}

double num(const std::string& s) { return s.empty() ? std::nan("") : std::stod(s); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> sd;  // empty or same length as y; NaN = no band
};

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                         "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string line_chart(const std::string& title, const std::string& ylabel, const std::vector<Series>& series) {
  constexpr double W = 720, H = 440, L = 70, R = 180, T = 40, B = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      const double sd = i < s.sd.size() && std::isfinite(s.sd[i]) ? s.sd[i] : 0.0;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i] - sd);
      y1 = std::max(y1, s.y[i] + sd);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double xv = x0 + (x1 - x0) * k / 5.0;
    const double yv = y0 + (y1 - y0) * k / 5.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << fmt(xv) << "</text>\n"
       << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">annotations</text>\n"
     << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (T + H - B) / 2 << ")\">" << ylabel << "</text>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kColors[si % 10];
    if (!s.sd.empty()) {
      std::ostringstream upper, lower;
      bool any = false;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.y[i]) || !std::isfinite(s.sd[i])) continue;
        any = true;
        upper << px(s.x[i]) << ',' << py(s.y[i] + s.sd[i]) << ' ';
      }
      for (std::size_t i = s.x.size(); i-- > 0;) {
        if (!std::isfinite(s.y[i]) || !std::isfinite(s.sd[i])) continue;
        lower << px(s.x[i]) << ',' << py(s.y[i] - s.sd[i]) << ' ';
      }
      if (any) {
        os << "<polygon points=\"" << upper.str() << lower.str() << "\" fill=\"" << color
           << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
      }
    }
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.y[i])) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    os << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.y[i])) {
        os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
    }
    const double ly = T + 10 + 18.0 * static_cast<double>(si);
    os << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << W - R + 38 << "\" y=\"" << ly + 4 << "\">" << s.name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string color_ramp(double t) {
  // Dark blue -> teal -> yellow.
  t = std::clamp(t, 0.0, 1.0);
  const double r = t < 0.5 ? 30 + 2 * t * 10 : 40 + (t - 0.5) * 2 * 213;
  const double g = t < 0.5 ? 20 + 2 * t * 150 : 170 + (t - 0.5) * 2 * 61;
  const double b = t < 0.5 ? 110 + 2 * t * 30 : 140 - (t - 0.5) * 2 * 103;
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", static_cast<int>(r), static_cast<int>(g), static_cast<int>(b));
  return buf;
}

std::string panel_2d(const fs::path& plot_dir, const std::string& title) {
  std::vector<std::size_t> rounds;
  for (std::size_t s = 1; fs::exists(plot_dir / ("heatmap_" + round_file(s, "csv"))); ++s) rounds.push_back(s);
  constexpr double P = 260, M = 20, T = 50;
  const double W = M + static_cast<double>(rounds.size()) * (P + M);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << T + P + 30
     << "\" font-family=\"sans-serif\" font-size=\"13\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  for (std::size_t k = 0; k < rounds.size(); ++k) {
    const auto heat = read_csv(plot_dir / ("heatmap_" + round_file(rounds[k], "csv")));
    const auto pairs = read_csv(plot_dir / ("pairs_" + round_file(rounds[k], "csv")));
    const double ox = M + static_cast<double>(k) * (P + M);
    std::vector<double> xs, ys, rs;
    for (std::size_t i = 1; i < heat.size(); ++i) {
      xs.push_back(num(heat[i][0]));
      ys.push_back(num(heat[i][1]));
      rs.push_back(num(heat[i][2]));
    }
    if (rs.empty()) continue;
    const double lo = *std::min_element(xs.begin(), xs.end());
    const double hi = *std::max_element(xs.begin(), xs.end());
    const double rmin = *std::min_element(rs.begin(), rs.end());
    const double rmax = *std::max_element(rs.begin(), rs.end());
    const auto side = static_cast<double>(std::llround(std::sqrt(static_cast<double>(rs.size()))));
    const double cell = P / side;
    auto sx = [&](double x) { return ox + (x - lo) / (hi - lo) * (P - cell) + cell / 2; };
    auto sy = [&](double y) { return T + P - ((y - lo) / (hi - lo) * (P - cell) + cell / 2); };
    for (std::size_t i = 0; i < rs.size(); ++i) {
      os << "<rect x=\"" << sx(xs[i]) - cell / 2 << "\" y=\"" << sy(ys[i]) - cell / 2 << "\" width=\"" << cell + 0.3
         << "\" height=\"" << cell + 0.3 << "\" fill=\"" << color_ramp((rs[i] - rmin) / (rmax - rmin + 1e-300))
         << "\"/>\n";
    }
    for (std::size_t i = 1; i < pairs.size(); ++i) {
      const double a = num(pairs[i][1]), b = num(pairs[i][2]), c = num(pairs[i][3]), d = num(pairs[i][4]);
      if (std::max({std::abs(a), std::abs(b), std::abs(c), std::abs(d)}) > hi) continue;
      os << "<line x1=\"" << sx(a) << "\" y1=\"" << sy(b) << "\" x2=\"" << sx(c) << "\" y2=\"" << sy(d)
         << "\" stroke=\"red\" stroke-width=\"0.8\"/>\n"
         << "<circle cx=\"" << sx(a) << "\" cy=\"" << sy(b) << "\" r=\"1.8\" fill=\"red\"/>\n"
         << "<circle cx=\"" << sx(c) << "\" cy=\"" << sy(d) << "\" r=\"1.8\" fill=\"red\"/>\n";
    }
    os << "<text x=\"" << ox + P / 2 << "\" y=\"" << T + P + 20 << "\" text-anchor=\"middle\">round " << rounds[k]
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void add(std::vector<fs::path>& files, const fs::path& path, const std::string& text) {
  write_file_atomic(path, text);
  files.push_back(path);
}

/// Mean and sample sd per n_labels across runs; sd is NaN with one run.
void band(const std::vector<std::vector<MetricsRow>>& runs, bool best_of_n, Series& s) {
  std::map<std::size_t, std::vector<double>> by_x;
  for (const auto& run : runs) {
    for (const auto& r : run) {
      const auto v = best_of_n ? r.best_of_n : r.one_minus_spearman;
      if (v) by_x[r.n_labels].push_back(*v);
    }
  }
  for (const auto& [x, v] : by_x) {
    double m = 0.0;
    for (double e : v) m += e;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double e : v) ss += (e - m) * (e - m);
    s.x.push_back(static_cast<double>(x));
    s.y.push_back(m);
    s.sd.push_back(v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : std::nan(""));
  }
}

}  // namespace

std::vector<fs::path> plot_artifact(const fs::path& input, const fs::path& out) {
  std::vector<fs::path> files;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + out.string() + ": " + ec.message());

  if (fs::exists(input / "summary.csv")) {
    const auto summary = read_csv(input / "summary.csv");
    if (summary.empty()) throw Error(ErrorCode::kIo, "empty " + (input / "summary.csv").string());
    std::map<std::string, std::pair<Series, Series>> curves;
    std::vector<std::string> order;
    std::ostringstream csv;
    csv << "label,round,n_labels,metric,mean,sd\n";
    for (std::size_t i = 1; i < summary.size(); ++i) {
      const auto& r = summary[i];
      if (r.size() != 11) throw Error(ErrorCode::kCorruptHeader, "summary.csv row " + std::to_string(i) + " malformed");
      if (!curves.count(r[0])) order.push_back(r[0]);
      auto& [oms, bon] = curves[r[0]];
      oms.name = bon.name = r[0];
      for (auto* s : {&oms, &bon}) s->x.push_back(num(r[5]));
      oms.y.push_back(num(r[7]));
      oms.sd.push_back(num(r[8]));
      bon.y.push_back(num(r[9]));
      bon.sd.push_back(num(r[10]));
      csv << r[0] << ',' << r[4] << ',' << r[5] << ",one_minus_spearman," << r[7] << ',' << r[8] << '\n'
          << r[0] << ',' << r[4] << ',' << r[5] << ",best_of_n," << r[9] << ',' << r[10] << '\n';
    }
    std::vector<Series> a, b;
    for (const auto& l : order) a.push_back(curves[l].first), b.push_back(curves[l].second);
    add(files, out / "curves.csv", csv.str());
    add(files, out / "one_minus_spearman.svg", line_chart("1 - Spearman", "1 - Spearman", a));
    add(files, out / "best_of_n.svg", line_chart("Best-of-N reward", "best-of-N reward", b));
    return files;
  }

  std::vector<fs::path> run_dirs;
  if (fs::exists(input / "metrics.csv")) {
    run_dirs.push_back(input);
  } else if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input)) {
      if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0 && fs::exists(e.path() / "metrics.csv")) {
        run_dirs.push_back(e.path());
      }
    }
    std::sort(run_dirs.begin(), run_dirs.end());
  }
  if (run_dirs.empty()) {
    throw Error(ErrorCode::kIo, "no metrics.csv, summary.csv or seed_*/metrics.csv under " + input.string());
  }

  std::ostringstream csv;
  csv << "run,round,n_labels,one_minus_spearman,best_of_n\n";
  std::vector<std::vector<MetricsRow>> runs;
  for (const auto& dir : run_dirs) {
    const auto artifact = read_run_artifact(dir);
    runs.push_back(artifact.metrics);
    const auto raw = read_csv(dir / "metrics.csv");
    for (std::size_t i = 1; i < raw.size(); ++i) {
      csv << dir.filename().string();
      for (const auto& cell : raw[i]) csv << ',' << cell;
      csv << '\n';
    }
    if (fs::exists(dir / "plot2d")) {
      const std::string suffix = run_dirs.size() > 1 ? "_" + dir.filename().string() : "";
      add(files, out / ("panel_2d" + suffix + ".svg"), panel_2d(dir / "plot2d", "2D world: " + dir.filename().string()));
    }
  }
  Series oms, bon;
  oms.name = bon.name = input.filename().empty() ? input.parent_path().filename().string() : input.filename().string();
  band(runs, false, oms);
  band(runs, true, bon);
  add(files, out / "curves.csv", csv.str());
  add(files, out / "one_minus_spearman.svg", line_chart("1 - Spearman", "1 - Spearman", {oms}));
  add(files, out / "best_of_n.svg", line_chart("Best-of-N reward", "best-of-N reward", {bon}));
  return files;
}

}  // namespace btal
