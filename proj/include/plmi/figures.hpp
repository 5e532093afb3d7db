#pragma once

// Plain SVG renderings of sweep heatmaps, per-layer ablation bars,
// category x stage bars with SEM whiskers and stacked head counts. Every
// figure carries the run's config hash in a <desc> element and a footer.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "plmi/heads.hpp"
#include "plmi/metrics.hpp"
#include "plmi/patching.hpp"

namespace plmi {

namespace svg {

inline std::string escape(std::string_view s) {
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

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string open(int w, int h, std::string_view title, std::string_view config_hash) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
         std::to_string(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n<desc>config_hash=" +
         std::string(config_hash) + "</desc>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n" +
         "<text x=\"10\" y=\"18\" font-size=\"14\">" + escape(title) + "</text>\n";
}

inline std::string close(int h, std::string_view config_hash) {
  return "<text x=\"10\" y=\"" + std::to_string(h - 6) + "\" font-size=\"9\" fill=\"#666\">config " +
         std::string(config_hash.substr(0, 16)) + "</text>\n</svg>\n";
}

inline std::string rect(double x, double y, double w, double h, std::string_view fill) {
  return "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
         "\" fill=\"" + std::string(fill) + "\"/>\n";
}

inline std::string line(double x1, double y1, double x2, double y2, std::string_view stroke = "black") {
  return "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) +
         "\" stroke=\"" + std::string(stroke) + "\"/>\n";
}

inline std::string text(double x, double y, std::string_view s, std::string_view anchor = "start", int rotate = 0) {
  std::string t = "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + std::string(anchor) + "\"";
  if (rotate) t += " transform=\"rotate(" + std::to_string(rotate) + " " + num(x) + " " + num(y) + ")\"";
  return t + ">" + escape(s) + "</text>\n";
}

// Diverging blue-white-red for v in [-1, 1].
inline std::string diverging(double v) {
  v = std::clamp(v, -1.0, 1.0);
  const int a = static_cast<int>(std::lround(255 * (1 - std::abs(v))));
  char buf[8];
  if (v >= 0) std::snprintf(buf, sizeof buf, "#ff%02x%02x", a, a);
  else std::snprintf(buf, sizeof buf, "#%02x%02xff", a, a);
  return buf;
}

inline constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1"};

}  // namespace svg

// Layers run down the vertical axis, layer 0 at the bottom.
inline std::string heatmap_svg(const SweepGrid& raw, std::string_view config_hash) {
  const SweepGrid g = raw.normalized ? raw : normalize_per_layer(raw);
  const int cell = 22, left = 60, top = 34;
  const int w = left + g.cols * cell + 20;
  const int h = top + g.rows * cell + 110;
  std::string s = svg::open(w, h,
                            g.pair_id + " " + std::string(to_string(g.granularity)) + " " +
                                std::string(to_string(g.mode)) + " (per-layer max-abs)",
                            config_hash);
  for (int r = 0; r < g.rows; ++r) {
    const double y = top + (g.rows - 1 - r) * cell;
    s += svg::text(left - 6, y + cell * 0.65, "L" + std::to_string(r), "end");
    for (int c = 0; c < g.cols; ++c) s += svg::rect(left + c * cell, y, cell - 1, cell - 1, svg::diverging(g.at(r, c)));
  }
  for (int c = 0; c < g.cols; ++c) {
    const std::string label = c < static_cast<int>(g.col_labels.size()) ? g.col_labels[c] : std::to_string(c);
    s += svg::text(left + c * cell + cell * 0.6, top + g.rows * cell + 8, label, "end", -60);
  }
  return s + svg::close(h, config_hash);
}

// One bar per layer; negative values hang below the axis.
inline std::string layer_bars_svg(const std::vector<double>& values, std::string_view title,
                                  std::string_view config_hash) {
  const int bw = 26, left = 60, top = 34, plot_h = 200;
  const int n = static_cast<int>(values.size());
  const int w = left + n * bw + 20;
  const int h = top + plot_h + 50;
  double lo = 0, hi = 0;
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo < 1e-12) hi = lo + 1;
  auto y_of = [&](double v) { return top + (hi - v) / (hi - lo) * plot_h; };
  std::string s = svg::open(w, h, title, config_hash);
  s += svg::line(left, y_of(0), left + n * bw, y_of(0));
  s += svg::text(left - 6, y_of(hi) + 4, svg::num(hi), "end");
  s += svg::text(left - 6, y_of(lo) + 4, svg::num(lo), "end");
  for (int i = 0; i < n; ++i) {
    const double y0 = y_of(std::max(values[i], 0.0)), y1 = y_of(std::min(values[i], 0.0));
    s += svg::rect(left + i * bw + 3, y0, bw - 6, y1 - y0, svg::kPalette[0]);
    s += svg::text(left + i * bw + bw / 2.0, top + plot_h + 16, std::to_string(i), "middle");
  }
  s += svg::text(left + n * bw / 2.0, top + plot_h + 32, "layer", "middle");
  return s + svg::close(h, config_hash);
}

// Grouped bars per category, one bar per stage; whiskers only where SEM exists.
inline std::string aggregate_bars_svg(const AggregateTable& t, std::string_view config_hash) {
  std::vector<TokenCategory> cats;
  for (const auto& r : t.rows) {
    if (std::find(cats.begin(), cats.end(), r.category) == cats.end()) cats.push_back(r.category);
  }
  const int ng = static_cast<int>(t.groups.size());
  const int bw = 14, gap = 16, left = 60, top = 50, plot_h = 220;
  const int gw = ng * bw + gap;
  const int w = left + static_cast<int>(cats.size()) * gw + 20;
  const int h = top + plot_h + 110;
  double hi = 0;
  for (const auto& r : t.rows) hi = std::max(hi, r.mean_abs_dld + r.sem.value_or(0));
  if (hi <= 0) hi = 1;
  auto y_of = [&](double v) { return top + (hi - v) / hi * plot_h; };
  std::string s = svg::open(w, h, "Mean |dLD| by token category and layer group", config_hash);
  for (int g = 0; g < ng; ++g) {
    s += svg::rect(left + g * 90, 26, 10, 10, svg::kPalette[g % 7]);
    s += svg::text(left + g * 90 + 14, 35, t.groups[g].name);
  }
  s += svg::line(left, y_of(0), left + static_cast<int>(cats.size()) * gw, y_of(0));
  s += svg::text(left - 6, y_of(hi) + 4, svg::num(hi), "end");
  for (std::size_t ci = 0; ci < cats.size(); ++ci) {
    const double x0 = left + ci * gw + gap / 2.0;
    for (int g = 0; g < ng; ++g) {
      const AggregateRow* r = t.find(cats[ci], t.groups[g].name);
      if (!r) continue;
      const double x = x0 + g * bw;
      s += svg::rect(x, y_of(r->mean_abs_dld), bw - 2, y_of(0) - y_of(r->mean_abs_dld), svg::kPalette[g % 7]);
      if (r->sem) {
        const double xc = x + (bw - 2) / 2.0;
        const double ya = y_of(r->mean_abs_dld + *r->sem), yb = y_of(std::max(0.0, r->mean_abs_dld - *r->sem));
        s += "<g class=\"sem\">\n" + svg::line(xc, ya, xc, yb) + svg::line(xc - 3, ya, xc + 3, ya) +
             svg::line(xc - 3, yb, xc + 3, yb) + "</g>\n";
      }
    }
    s += svg::text(x0 + ng * bw / 2.0, top + plot_h + 10, to_string(cats[ci]), "end", -45);
  }
  return s + svg::close(h, config_hash);
}

inline std::string head_counts_svg(const HeadCounts& c, std::string_view config_hash) {
  const int bw = 26, left = 60, top = 50, plot_h = 200;
  const int n = static_cast<int>(c.mean.size());
  const int w = std::max(left + n * bw + 20, 520);
  const int h = top + plot_h + 50;
  double hi = 0;
  for (const auto& row : c.mean) {
    double sum = 0;
    for (double v : row) sum += v;
    hi = std::max(hi, sum);
  }
  if (hi <= 0) hi = 1;
  std::string s = svg::open(w, h, "Mean labeled heads per layer", config_hash);
  for (std::size_t l = 0; l < kAllHeadLabels.size(); ++l) {
    s += svg::rect(10 + l * 72, 26, 8, 8, svg::kPalette[l]);
    s += svg::text(20 + l * 72, 34, to_string(kAllHeadLabels[l]).substr(0, 11));
  }
  for (int i = 0; i < n; ++i) {
    double acc = 0;
    for (std::size_t l = 0; l < kAllHeadLabels.size(); ++l) {
      const double v = c.mean[i][l];
      if (v <= 0) continue;
      const double y1 = top + plot_h - acc / hi * plot_h;
      acc += v;
      const double y0 = top + plot_h - acc / hi * plot_h;
      s += svg::rect(left + i * bw + 3, y0, bw - 6, y1 - y0, svg::kPalette[l]);
    }
    s += svg::text(left + i * bw + bw / 2.0, top + plot_h + 16, std::to_string(i), "middle");
  }
  s += svg::text(left - 6, top + 4, svg::num(hi), "end");
  return s + svg::close(h, config_hash);
}

}  // namespace plmi
