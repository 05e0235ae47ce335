#pragma once

// Plots of a campaign report as standalone SVG files, each with a CSV of the
// numbers it draws.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "pathoattack/campaign.hpp"
#include "pathoattack/image_io.hpp"
#include "pathoattack/ingest.hpp"

namespace pathoattack {

namespace svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

class Canvas {
 public:
  Canvas(double w, double h) : w_(w), h_(h) {}

  void text(double x, double y, const std::string& s, int size = 12, const char* anchor = "start",
            double rotate = 0.0) {
    body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << size
          << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\"";
    if (rotate != 0.0) body_ << " transform=\"rotate(" << num(rotate) << " " << num(x) << " " << num(y) << ")\"";
    body_ << ">" << escape(s) << "</text>\n";
  }
  void line(double x1, double y1, double x2, double y2, const char* stroke = "#000", double width = 1.0) {
    body_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
          << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill, const char* stroke = "none") {
    body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
          << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const char* stroke, double width = 2.0) {
    body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\" points=\"";
    for (const auto& [x, y] : pts) body_ << num(x) << "," << num(y) << " ";
    body_ << "\"/>\n";
  }

  std::string str() const {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w_) << "\" height=\"" << num(h_)
        << "\" viewBox=\"0 0 " << num(w_) << " " << num(h_) << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n"
        << body_.str() << "</svg>\n";
    return out.str();
  }

 private:
  double w_, h_;
  std::ostringstream body_;
};

inline std::string blues(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const int r = static_cast<int>(247 - t * (247 - 8));
  const int g = static_cast<int>(251 - t * (251 - 48));
  const int b = static_cast<int>(255 - t * (255 - 107));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace svg

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string csv_num(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

inline std::string matrix_csv(const LabelSet& labels, const CountMatrix& m) {
  std::string out = "true\\predicted";
  for (const auto& l : labels.names()) out += "," + csv_field(l);
  out += "\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    out += csv_field(labels[i]);
    for (std::size_t v : m[i]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

inline std::string heatmap_svg(const LabelSet& labels, const CountMatrix& m, const std::string& title) {
  const double cell = 44, left = 150, top = 60;
  const double n = static_cast<double>(labels.size());
  svg::Canvas c(left + n * cell + 40, top + n * cell + 120);
  c.text(left + n * cell / 2, 28, title, 15, "middle");
  std::size_t peak = 1;
  for (const auto& row : m) {
    for (std::size_t v : row) peak = std::max(peak, v);
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    c.text(left - 8, top + (static_cast<double>(i) + 0.6) * cell, labels[i], 11, "end");
    for (std::size_t j = 0; j < m[i].size(); ++j) {
      const double t = static_cast<double>(m[i][j]) / static_cast<double>(peak);
      const double x = left + static_cast<double>(j) * cell, y = top + static_cast<double>(i) * cell;
      c.rect(x, y, cell, cell, svg::blues(t), "#ccc");
      c.text(x + cell / 2, y + cell * 0.6, std::to_string(m[i][j]), 11, "middle");
    }
  }
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const double x = left + (static_cast<double>(j) + 0.5) * cell, y = top + n * cell + 10;
    c.text(x, y, labels[j], 11, "end", -45);
  }
  c.text(left + n * cell / 2, top + n * cell + 110, "predicted label", 12, "middle");
  c.text(20, top + n * cell / 2, "true label", 12, "middle", -90);
  return c.str();
}

struct PlotFrame {
  double left = 70, top = 50, width = 480, height = 300;
  double x(double frac) const { return left + frac * width; }
  double y(double frac) const { return top + (1.0 - frac) * height; }
};

}  // namespace detail

/// Writes asr_per_step, heatmap_pre, heatmap_post, ssim_histogram and
/// class_distribution as .svg + .csv under out_dir/plots. Returns the paths.
inline std::vector<std::filesystem::path> render_report(const CampaignReport& report,
                                                        const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (report.rows.empty() || report.asr.per_step.empty()) throw InvalidArgument("render_report: empty report");
  const fs::path dir = out_dir / "plots";
  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_file_atomic(dir / name, text);
    written.push_back(dir / name);
  };

  // Attack success rate per step, one line per attacked class.
  {
    const auto& steps = report.asr.per_step;
    std::vector<std::string> classes, omitted;
    for (const auto& l : report.labels.names()) {
      (report.asr.per_class.contains(l) ? classes : omitted).push_back(l);
    }
    std::string csv = "step,overall";
    for (const auto& l : classes) csv += "," + detail::csv_field(l);
    csv += "\n";
    for (std::size_t s = 0; s < steps.size(); ++s) {
      csv += std::to_string(s + 1) + "," + detail::csv_num(steps[s]);
      for (const auto& l : classes) csv += "," + detail::csv_num(report.asr.per_class.at(l)[s]);
      csv += "\n";
    }
    emit("asr_per_step.csv", csv);

    detail::PlotFrame f;
    svg::Canvas c(f.left + f.width + 230, f.top + f.height + 70);
    c.text(f.x(0.5), 28, "Attack success rate per step", 15, "middle");
    c.line(f.x(0), f.y(0), f.x(1), f.y(0));
    c.line(f.x(0), f.y(0), f.x(0), f.y(1));
    const double span = steps.size() > 1 ? static_cast<double>(steps.size() - 1) : 1.0;
    auto px = [&](std::size_t s) { return steps.size() > 1 ? f.x(static_cast<double>(s) / span) : f.x(0.5); };
    for (std::size_t s = 0; s < steps.size(); ++s) {
      c.line(px(s), f.y(0), px(s), f.y(0) + 5);
      c.text(px(s), f.y(0) + 18, std::to_string(s + 1), 11, "middle");
    }
    for (int t = 0; t <= 4; ++t) {
      const double v = t / 4.0;
      c.line(f.x(0) - 5, f.y(v), f.x(0), f.y(v));
      c.text(f.x(0) - 8, f.y(v) + 4, svg::num(v), 11, "end");
    }
    c.text(f.x(0.5), f.y(0) + 40, "step", 12, "middle");
    c.text(22, f.y(0.5), "cumulative ASR", 12, "middle", -90);
    auto curve = [&](const std::vector<double>& v, const char* color, double width) {
      std::vector<std::pair<double, double>> pts;
      for (std::size_t s = 0; s < v.size(); ++s) pts.emplace_back(px(s), f.y(v[s]));
      if (pts.size() == 1) pts.emplace_back(pts.front().first + 1, pts.front().second);
      c.polyline(pts, color, width);
    };
    double ly = f.top + 10;
    for (std::size_t i = 0; i < classes.size(); ++i) {
      curve(report.asr.per_class.at(classes[i]), svg::palette(i), 1.5);
      c.line(f.x(1) + 20, ly - 4, f.x(1) + 40, ly - 4, svg::palette(i), 3);
      c.text(f.x(1) + 46, ly, classes[i], 11);
      ly += 18;
    }
    curve(steps, "#000", 3.0);
    c.line(f.x(1) + 20, ly - 4, f.x(1) + 40, ly - 4, "#000", 3);
    c.text(f.x(1) + 46, ly, "overall", 11);
    ly += 18;
    for (const auto& l : omitted) {
      c.text(f.x(1) + 20, ly, l + ": no attacks in sample", 10);
      ly += 16;
    }
    emit("asr_per_step.svg", c.str());
  }

  emit("heatmap_pre.csv", detail::matrix_csv(report.labels, report.pre_matrix));
  emit("heatmap_pre.svg", detail::heatmap_svg(report.labels, report.pre_matrix, "Predictions before attack"));
  emit("heatmap_post.csv", detail::matrix_csv(report.labels, report.post_matrix));
  emit("heatmap_post.svg", detail::heatmap_svg(report.labels, report.post_matrix, "Predictions after attack"));

  // Final SSIM histogram: 20 bins over [0, 1], values below 0 land in the first bin.
  {
    constexpr std::size_t bins = 20;
    std::vector<std::size_t> hist(bins, 0);
    for (const auto& row : report.rows) {
      const auto b = static_cast<std::size_t>(std::clamp(row.final_ssim, 0.0, 1.0) * bins);
      ++hist[std::min(b, bins - 1)];
    }
    std::string csv = "bin_low,bin_high,count\n";
    for (std::size_t b = 0; b < bins; ++b) {
      csv += detail::csv_num(static_cast<double>(b) / bins) + "," + detail::csv_num(static_cast<double>(b + 1) / bins) +
             "," + std::to_string(hist[b]) + "\n";
    }
    emit("ssim_histogram.csv", csv);

    detail::PlotFrame f;
    svg::Canvas c(f.left + f.width + 40, f.top + f.height + 70);
    c.text(f.x(0.5), 28, "Final SSIM (threshold " + svg::num(report.ssim_stats.threshold) + ")", 15, "middle");
    const double peak = static_cast<double>(std::max<std::size_t>(1, *std::max_element(hist.begin(), hist.end())));
    for (std::size_t b = 0; b < bins; ++b) {
      const double h = static_cast<double>(hist[b]) / peak;
      c.rect(f.x(static_cast<double>(b) / bins), f.y(h), f.width / bins - 1, h * f.height, "#4c78a8");
    }
    c.line(f.x(0), f.y(0), f.x(1), f.y(0));
    for (int t = 0; t <= 4; ++t) c.text(f.x(t / 4.0), f.y(0) + 18, svg::num(t / 4.0), 11, "middle");
    c.line(f.x(report.ssim_stats.threshold), f.y(0), f.x(report.ssim_stats.threshold), f.y(1), "#d62728", 1.5);
    c.text(f.x(0.5), f.y(0) + 40, "SSIM to original", 12, "middle");
    emit("ssim_histogram.svg", c.str());
  }

  // Class distribution of the scanned dataset.
  {
    const auto shares = dataset_stats(report.dataset_counts, report.labels);
    std::string csv = "label,count,fraction\n";
    for (const auto& s : shares) csv += detail::csv_field(s.label) + "," + std::to_string(s.count) + "," + detail::csv_num(s.fraction) + "\n";
    emit("class_distribution.csv", csv);

    detail::PlotFrame f;
    f.left = 150;
    const double bar = 24;
    svg::Canvas c(f.left + f.width + 120, f.top + bar * static_cast<double>(shares.size()) + 40);
    c.text(f.x(0.5), 28, "Dataset class distribution", 15, "middle");
    double peak = 0;
    for (const auto& s : shares) peak = std::max(peak, s.fraction);
    for (std::size_t i = 0; i < shares.size(); ++i) {
      const double y = f.top + bar * static_cast<double>(i);
      const double w = peak > 0 ? shares[i].fraction / peak * f.width : 0.0;
      c.text(f.left - 8, y + bar * 0.65, shares[i].label, 11, "end");
      c.rect(f.left, y + 2, w, bar - 4, svg::palette(i));
      c.text(f.left + w + 6, y + bar * 0.65,
             std::to_string(shares[i].count) + " (" + svg::num(100.0 * shares[i].fraction) + "%)", 11);
    }
    emit("class_distribution.svg", c.str());
  }
  return written;
}

}  // namespace pathoattack
