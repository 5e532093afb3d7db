#pragma once

// Summary statistics over raw residual sweep grids: layer stages, the nested
// category x stage mean of |dLD| with SEM, per-position stage means and the
// late-layer persistence report.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "plmi/dataset.hpp"
#include "plmi/errors.hpp"
#include "plmi/patching.hpp"

namespace plmi {

struct LayerGroup {
  std::string name;
  int lo = 0;  // inclusive
  int hi = 0;  // inclusive

  int size() const { return hi - lo + 1; }
  friend bool operator==(const LayerGroup&, const LayerGroup&) = default;
};

inline std::vector<LayerGroup> make_layer_groups(int n_layers, std::string_view scheme) {
  if (n_layers < 3) throw ConfigError("layer grouping needs at least 3 layers, got " + std::to_string(n_layers));
  if (scheme == "paper36") {
    if (n_layers != 36) {
      throw ConfigError("scheme paper36 needs a 36-layer model, got " + std::to_string(n_layers) +
                        " layers (use proportional)");
    }
  } else if (scheme != "proportional") {
    throw ConfigError("unknown layer-group scheme '" + std::string(scheme) + "'");
  }
  // Boundaries at 14/36 and 24/36 of the depth, rounded down.
  const int b1 = n_layers * 14 / 36;
  const int b2 = n_layers * 24 / 36;
  return {{"Early", 0, b1 - 1}, {"Middle", b1, b2 - 1}, {"Late", b2, n_layers - 1}};
}

struct AggregateRow {
  TokenCategory category = TokenCategory::Other;
  std::string group;
  double mean_abs_dld = 0;
  std::optional<double> sem;  // absent with a single sample
  int n_samples = 0;
  int n_token_instances = 0;
};

struct AggregateTable {
  std::vector<LayerGroup> groups;
  std::vector<AggregateRow> rows;  // category order, then group order; populated rows only

  const AggregateRow* find(TokenCategory c, std::string_view group) const {
    for (const auto& r : rows) {
      if (r.category == c && r.group == group) return &r;
    }
    return nullptr;
  }
};

namespace detail {

inline void check_aggregatable(const SweepGrid& g, std::size_t n_annotations, const std::vector<LayerGroup>& groups) {
  if (g.normalized) throw Error(g.pair_id + ": normalized grids cannot be aggregated");
  if (g.granularity == Granularity::Head) throw Error(g.pair_id + ": head grids have no token axis");
  if (static_cast<std::size_t>(g.cols) != n_annotations) {
    throw Error(g.pair_id + ": grid has " + std::to_string(g.cols) + " positions but " +
                std::to_string(n_annotations) + " annotations");
  }
  for (const auto& gr : groups) {
    if (gr.lo < 0 || gr.hi >= g.rows || gr.lo > gr.hi) {
      throw Error(g.pair_id + ": layer group " + gr.name + " outside the grid's " + std::to_string(g.rows) + " layers");
    }
  }
}

inline double stage_mean_abs(const SweepGrid& g, const LayerGroup& gr, int position) {
  double s = 0;
  for (int l = gr.lo; l <= gr.hi; ++l) s += std::abs(g.at(l, position));
  return s / gr.size();
}

}  // namespace detail

// (i) mean over layers of a stage, (ii) mean over a sample's tokens of a
// category, (iii) mean over samples. SEM uses the n-1 deviation of the
// per-sample means.
inline AggregateTable mean_abs_dld_by_category(std::span<const SweepGrid> grids,
                                               std::span<const std::vector<TokenAnnotation>> annotations,
                                               const std::vector<LayerGroup>& groups) {
  if (grids.size() != annotations.size()) throw Error("grid and annotation counts differ");
  for (std::size_t s = 0; s < grids.size(); ++s) detail::check_aggregatable(grids[s], annotations[s].size(), groups);

  AggregateTable table;
  table.groups = groups;
  for (TokenCategory c : kAllCategories) {
    for (const auto& gr : groups) {
      std::vector<double> per_sample;
      int instances = 0;
      for (std::size_t s = 0; s < grids.size(); ++s) {
        double acc = 0;
        int n = 0;
        for (const auto& a : annotations[s]) {
          if (a.category != c) continue;
          acc += detail::stage_mean_abs(grids[s], gr, a.position);
          ++n;
        }
        if (n == 0) continue;  // absent in this sample
        per_sample.push_back(acc / n);
        instances += n;
      }
      if (per_sample.empty()) continue;
      AggregateRow row;
      row.category = c;
      row.group = gr.name;
      row.n_samples = static_cast<int>(per_sample.size());
      row.n_token_instances = instances;
      double sum = 0;
      for (double v : per_sample) sum += v;
      row.mean_abs_dld = sum / row.n_samples;
      if (row.n_samples > 1) {
        double ss = 0;
        for (double v : per_sample) ss += (v - row.mean_abs_dld) * (v - row.mean_abs_dld);
        row.sem = std::sqrt(ss / (row.n_samples - 1)) / std::sqrt(static_cast<double>(row.n_samples));
      }
      table.rows.push_back(row);
    }
  }
  return table;
}

struct StageMeans {
  std::vector<LayerGroup> groups;
  std::vector<std::vector<double>> values;  // [group][position]
};

inline StageMeans per_token_stage_mean(const SweepGrid& grid, const std::vector<LayerGroup>& groups) {
  if (grid.normalized) throw Error(grid.pair_id + ": normalized grids cannot be aggregated");
  StageMeans out;
  out.groups = groups;
  for (const auto& gr : groups) {
    if (gr.lo < 0 || gr.hi >= grid.rows || gr.lo > gr.hi) throw Error("layer group " + gr.name + " outside the grid");
    std::vector<double> row(static_cast<std::size_t>(grid.cols));
    for (int t = 0; t < grid.cols; ++t) row[static_cast<std::size_t>(t)] = detail::stage_mean_abs(grid, gr, t);
    out.values.push_back(std::move(row));
  }
  return out;
}

struct PersistenceOptions {
  double early_fraction = 0.25;  // Late must reach this share of Early
  bool require_median = true;    // ... and the median Late over non-fact categories
};

struct Retrospection {
  TokenCategory category = TokenCategory::Other;
  double early = 0;
  double late = 0;
  std::optional<double> ratio;  // absent when Early is degenerate
  bool persistent = false;
};

inline bool is_fact_category(TokenCategory c) {
  return c == TokenCategory::FactsVar || c == TokenCategory::FactsIs || c == TokenCategory::FactsValue;
}

// Compares the first and last stage of the table.
inline std::vector<Retrospection> retrospection_score(const AggregateTable& table, const PersistenceOptions& opt = {}) {
  if (table.groups.size() < 2 || table.rows.empty()) throw Error("retrospection needs a populated multi-stage table");
  const std::string& early_name = table.groups.front().name;
  const std::string& late_name = table.groups.back().name;

  std::vector<double> other_late;
  for (const auto& r : table.rows) {
    if (r.group == late_name && !is_fact_category(r.category)) other_late.push_back(r.mean_abs_dld);
  }
  std::optional<double> median;
  if (!other_late.empty()) {
    std::sort(other_late.begin(), other_late.end());
    const std::size_t n = other_late.size();
    median = n % 2 ? other_late[n / 2] : 0.5 * (other_late[n / 2 - 1] + other_late[n / 2]);
  }

  std::vector<Retrospection> out;
  for (TokenCategory c : kAllCategories) {
    const AggregateRow* e = table.find(c, early_name);
    const AggregateRow* l = table.find(c, late_name);
    if (!e || !l) continue;
    Retrospection r;
    r.category = c;
    r.early = e->mean_abs_dld;
    r.late = l->mean_abs_dld;
    if (r.early >= kRatioGuard) r.ratio = r.late / r.early;
    r.persistent = r.late > 0 && r.late >= opt.early_fraction * r.early &&
                   (!opt.require_median || !median || r.late >= *median);
    out.push_back(r);
  }
  return out;
}

}  // namespace plmi
