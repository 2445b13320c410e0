#ifndef SRPO_REPORT_HPP_
#define SRPO_REPORT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "srpo/run.hpp"

// Reporting: metrics parsing, run manifests with content checksums, and
// dependency-free SVG line charts.

namespace srpo {

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) {
    const auto b = field.find_first_not_of(" \t");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? ""
                                         : field.substr(b, e - b + 1));
  }
  return out;
}

inline std::vector<StepMetrics> parse_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read metrics file: " + path);
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("metrics file is empty: " + path);
  if (split_csv_row(line) != split_csv_row(kMetricsHeader))
    throw std::runtime_error("metrics file has wrong columns: " + path);
  std::vector<StepMetrics> rows;
  long lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_row(line);
    if (f.size() != 12)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 12 fields, got " +
                               std::to_string(f.size()));
    StepMetrics m;
    m.step = std::stol(f[0]);
    m.wall_seconds = std::stod(f[1]);
    m.mean_loss = std::stod(f[2]);
    m.grpo_frac = std::stod(f[3]);
    m.sdpo_frac = std::stod(f[4]);
    m.teacher_avail_frac = std::stod(f[5]);
    m.mean_teacher_entropy = std::stod(f[6]);
    m.mean_response_length = std::stod(f[7]);
    m.train_accuracy = std::stod(f[8]);
    m.eval_avg_at_k = std::stod(f[9]);
    m.grad_norm = std::stod(f[10]);
    m.dropped_token_count = std::stol(f[11]);
    rows.push_back(m);
  }
  return rows;
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read file: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// Checksum of a metrics file with the wall_seconds column zeroed, so that
// re-runs of the same seed produce the same value (wall time is the one
// non-deterministic column).
inline std::uint64_t metrics_checksum(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read metrics file: " + path);
  std::ostringstream norm;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (first || line.empty()) {
      norm << line << "\n";
      first = false;
      continue;
    }
    auto f = split_csv_row(line);
    if (f.size() > 1) f[1] = "0";
    for (std::size_t i = 0; i < f.size(); ++i)
      norm << (i ? ", " : "") << f[i];
    norm << "\n";
  }
  return fnv1a64(norm.str());
}

inline constexpr const char* kCodeVersion = "srpo-lab 0.1.0";

inline void write_manifest(const std::string& out_dir, const TrainConfig& cfg,
                           const std::vector<std::string>& files) {
  nlohmann::json checksums = nlohmann::json::object();
  for (const auto& name : files) {
    const std::string path = out_dir + "/" + name;
    std::ostringstream hex;
    hex << std::hex << std::setw(16) << std::setfill('0')
        << (name == "metrics.csv" ? metrics_checksum(path)
                                  : fnv1a64(read_file_bytes(path)));
    checksums[name] = hex.str();
  }
  const nlohmann::json manifest = {{"code_version", kCodeVersion},
                                   {"seed", cfg.seed},
                                   {"out_dir", out_dir},
                                   {"config", to_json(cfg)},
                                   {"checksums", checksums}};
  std::ofstream os(out_dir + "/manifest.json");
  os << manifest.dump(2) << "\n";
}

// centered-window rolling mean (window w, truncated at the edges)
inline std::vector<double> rolling_mean(const std::vector<double>& x, int w) {
  if (w < 1) throw std::runtime_error("rolling_mean: window must be >= 1");
  const int n = static_cast<int>(x.size());
  std::vector<double> out(x.size());
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - w / 2);
    const int hi = std::min(n - 1, i + w / 2);
    double s = 0.0;
    for (int j = lo; j <= hi; ++j) s += x[j];
    out[i] = s / (hi - lo + 1);
  }
  return out;
}

struct Series {
  std::string label;
  // one smoothed trace per seed; all traces must share x (step index)
  std::vector<double> steps;
  std::vector<std::vector<double>> per_seed;
};

namespace detail_svg {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

}  // namespace detail_svg

// Self-contained SVG line chart: per-series mean line over seeds plus a
// +/- 1 std band (population std; collapses onto the line for one seed).
inline std::string render_chart_svg(const std::string& title,
                                    const std::vector<Series>& series) {
  const double W = 720, H = 420, ml = 60, mr = 20, mt = 40, mb = 40;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  struct Band {
    std::vector<double> steps, mean, lo, hi;
    std::string label;
  };
  std::vector<Band> bands;
  for (const auto& s : series) {
    Band b;
    b.label = s.label;
    b.steps = s.steps;
    for (std::size_t i = 0; i < s.steps.size(); ++i) {
      double sum = 0.0, sq = 0.0;
      for (const auto& trace : s.per_seed) sum += trace[i];
      const double mean = sum / s.per_seed.size();
      for (const auto& trace : s.per_seed)
        sq += (trace[i] - mean) * (trace[i] - mean);
      const double sd = std::sqrt(sq / s.per_seed.size());
      b.mean.push_back(mean);
      b.lo.push_back(mean - sd);
      b.hi.push_back(mean + sd);
      xmin = std::min(xmin, s.steps[i]);
      xmax = std::max(xmax, s.steps[i]);
      ymin = std::min(ymin, mean - sd);
      ymax = std::max(ymax, mean + sd);
    }
    bands.push_back(std::move(b));
  }
  if (bands.empty() || bands[0].steps.empty())
    throw std::runtime_error("render_chart_svg: no data");
  if (xmax <= xmin) xmax = xmin + 1.0;
  if (ymax <= ymin) {
    ymax = ymin + 1.0;
    ymin -= 1.0;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
     << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"16\">"
     << title << "</text>\n";
  // axes and a few ticks
  os << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr
     << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
     << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << H - mb + 16
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << detail_svg::fmt(xv) << "</text>\n"
       << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << detail_svg::fmt(yv) << "</text>\n";
  }
  for (std::size_t s = 0; s < bands.size(); ++s) {
    const Band& b = bands[s];
    const std::string color = colors[s % 4];
    std::ostringstream poly;
    for (std::size_t i = 0; i < b.steps.size(); ++i)
      poly << detail_svg::fmt(px(b.steps[i])) << ","
           << detail_svg::fmt(py(b.hi[i])) << " ";
    for (std::size_t i = b.steps.size(); i-- > 0;)
      poly << detail_svg::fmt(px(b.steps[i])) << ","
           << detail_svg::fmt(py(b.lo[i])) << " ";
    os << "<polygon points=\"" << poly.str() << "\" fill=\"" << color
       << "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
    std::ostringstream line;
    for (std::size_t i = 0; i < b.steps.size(); ++i)
      line << detail_svg::fmt(px(b.steps[i])) << ","
           << detail_svg::fmt(py(b.mean[i])) << " ";
    os << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\""
       << color << "\" stroke-width=\"1.5\"/>\n"
       << "<text x=\"" << W - mr - 8 << "\" y=\"" << mt + 16 * (s + 1)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" "
          "fill=\""
       << color << "\">" << b.label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// Emits the four telemetry charts (accuracy, response length, routing
// fractions, teacher entropy) from one or more per-seed metrics files.
// All files must cover the same step range. Returns the written paths.
inline std::vector<std::string> write_plots(
    const std::vector<std::string>& metrics_paths, const std::string& out_dir) {
  if (metrics_paths.empty())
    throw std::runtime_error("write_plots: no metrics files given");
  std::vector<std::vector<StepMetrics>> runs;
  for (const auto& p : metrics_paths) runs.push_back(parse_metrics_csv(p));
  const std::size_t n = runs[0].size();
  if (n == 0) throw std::runtime_error("write_plots: empty metrics file");
  for (const auto& r : runs)
    if (r.size() != n)
      throw std::runtime_error("write_plots: metrics files differ in length");

  std::vector<double> steps;
  for (const auto& m : runs[0]) steps.push_back(static_cast<double>(m.step));
  auto smoothed = [&](double StepMetrics::*field) {
    std::vector<std::vector<double>> per_seed;
    for (const auto& r : runs) {
      std::vector<double> x;
      for (const auto& m : r) x.push_back(m.*field);
      per_seed.push_back(rolling_mean(x, 5));
    }
    return per_seed;
  };

  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& title,
                  std::vector<Series> series) {
    const std::string path = out_dir + "/" + name;
    std::ofstream os(path);
    os << render_chart_svg(title, series);
    written.push_back(path);
  };
  emit("accuracy.svg", "Accuracy",
       {Series{"train_accuracy", steps, smoothed(&StepMetrics::train_accuracy)},
        Series{"eval_avg_at_k", steps, smoothed(&StepMetrics::eval_avg_at_k)}});
  emit("response_length.svg", "Mean response length",
       {Series{"mean_response_length", steps,
               smoothed(&StepMetrics::mean_response_length)}});
  emit("routing.svg", "Routing fractions",
       {Series{"sdpo_frac", steps, smoothed(&StepMetrics::sdpo_frac)},
        Series{"grpo_frac", steps, smoothed(&StepMetrics::grpo_frac)},
        Series{"teacher_avail_frac", steps,
               smoothed(&StepMetrics::teacher_avail_frac)}});
  emit("teacher_entropy.svg", "Mean teacher entropy",
       {Series{"mean_teacher_entropy", steps,
               smoothed(&StepMetrics::mean_teacher_entropy)}});
  return written;
}

}  // namespace srpo

#endif  // SRPO_REPORT_HPP_
