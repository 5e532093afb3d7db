#pragma once

// Rule-based functional labels for attention heads, read off one prompt's
// attention matrices and its token annotations.

#include <array>
#include <string>
#include <vector>

#include "plmi/dataset.hpp"
#include "plmi/errors.hpp"
#include "plmi/model.hpp"

namespace plmi {

enum class HeadLabel { Splitting, Transmission, EntityBinding, FactRetrieval, Idle, SelfProcessing, ExpressionProcessing };

inline constexpr std::array<HeadLabel, 7> kAllHeadLabels = {
    HeadLabel::Splitting, HeadLabel::Transmission,   HeadLabel::EntityBinding,       HeadLabel::FactRetrieval,
    HeadLabel::Idle,      HeadLabel::SelfProcessing, HeadLabel::ExpressionProcessing,
};

inline std::string_view to_string(HeadLabel l) {
  switch (l) {
    case HeadLabel::Splitting: return "splitting";
    case HeadLabel::Transmission: return "transmission";
    case HeadLabel::EntityBinding: return "entity_binding";
    case HeadLabel::FactRetrieval: return "fact_retrieval";
    case HeadLabel::Idle: return "idle";
    case HeadLabel::SelfProcessing: return "self_processing";
    case HeadLabel::ExpressionProcessing: return "expression_processing";
  }
  return "?";
}

inline HeadLabel head_label_from_string(std::string_view s) {
  for (HeadLabel l : kAllHeadLabels) {
    if (to_string(l) == s) return l;
  }
  throw ConfigError("unknown head label '" + std::string(s) + "'");
}

struct Thresholds {
  double split = 0.5;
  double trans = 0.4;
  double bind = 0.3;
  double fact = 0.3;
  double idle = 0.8;
  double diag = 0.6;
  double expr = 0.6;

  double& operator[](HeadLabel l) {
    switch (l) {
      case HeadLabel::Splitting: return split;
      case HeadLabel::Transmission: return trans;
      case HeadLabel::EntityBinding: return bind;
      case HeadLabel::FactRetrieval: return fact;
      case HeadLabel::Idle: return idle;
      case HeadLabel::SelfProcessing: return diag;
      case HeadLabel::ExpressionProcessing: return expr;
    }
    return split;
  }
  double operator[](HeadLabel l) const { return const_cast<Thresholds&>(*this)[l]; }
};

// Fixed side conditions.
inline constexpr double kSelfOffDiagonalMax = 0.2;
inline constexpr double kExprOffDiagonalMin = 0.2;

struct HeadLabelSet {
  int layer = 0;
  int head = 0;
  std::array<double, 7> scores{};  // indexed like kAllHeadLabels
  std::vector<HeadLabel> labels;
  double self_off_diagonal = 0;  // side condition of SelfProcessing
  double expr_off_diagonal = 0;  // side condition of ExpressionProcessing
  double terminal_mass = 0;      // reported only

  double score(HeadLabel l) const { return scores[static_cast<std::size_t>(l)]; }
  bool has(HeadLabel l) const {
    for (HeadLabel x : labels) {
      if (x == l) return true;
    }
    return false;
  }
};

namespace detail {

inline double mean_or_zero(double sum, int n) { return n == 0 ? 0.0 : sum / n; }

}  // namespace detail

inline HeadLabelSet classify_head(const AttentionMatrix& m, const std::vector<TokenAnnotation>& ann,
                                  const Thresholds& th = {}) {
  const int n = m.size;
  if (static_cast<int>(ann.size()) != n) {
    throw Error("attention matrix L" + std::to_string(m.layer) + "H" + std::to_string(m.head) + " has " +
                std::to_string(n) + " positions but " + std::to_string(ann.size()) + " annotations");
  }
  auto cat = [&](int i) { return ann[static_cast<std::size_t>(i)].category; };
  auto reg = [&](int i) { return ann[static_cast<std::size_t>(i)].region; };
  HeadLabelSet out;
  out.layer = m.layer;
  out.head = m.head;

  // Splitting: delimiter mass, column 0 excluded, over rows that can see a delimiter.
  {
    double sum = 0;
    int rows = 0;
    for (int q = 1; q < n; ++q) {
      bool any = false;
      double mass = 0;
      for (int k = 1; k <= q; ++k) {
        if (cat(k) != TokenCategory::Delimiter) continue;
        any = true;
        mass += m.at(q, k);
      }
      if (!any) continue;
      sum += mass;
      ++rows;
    }
    out.scores[0] = detail::mean_or_zero(sum, rows);
  }

  // Transmission: best region of >= 3 tokens by mean mass on earlier same-region tokens.
  {
    double best = 0;
    for (Region r : {Region::Facts, Region::Expression, Region::Query}) {
      int size = 0;
      for (int i = 0; i < n; ++i) size += reg(i) == r;
      if (size < 3) continue;
      double sum = 0;
      int rows = 0;
      for (int q = 0; q < n; ++q) {
        if (reg(q) != r) continue;
        bool any = false;
        double mass = 0;
        for (int k = 1; k < q; ++k) {
          if (reg(k) != r || cat(k) == TokenCategory::Delimiter) continue;
          any = true;
          mass += m.at(q, k);
        }
        if (!any) continue;
        sum += mass;
        ++rows;
      }
      best = std::max(best, detail::mean_or_zero(sum, rows));
    }
    out.scores[1] = best;
  }

  // EntityBinding: each truth value onto its own variable.
  {
    double sum = 0;
    int rows = 0;
    for (int v = 0; v < n; ++v) {
      if (cat(v) != TokenCategory::FactsValue) continue;
      int u = v - 1;
      while (u >= 0 && cat(u) != TokenCategory::FactsVar) --u;
      if (u <= 0) continue;
      sum += m.at(v, u);
      ++rows;
    }
    out.scores[2] = detail::mean_or_zero(sum, rows);
  }

  // FactRetrieval: truth-value mass from the query row, or from expression rows on average.
  {
    auto value_mass = [&](int q) {
      double s = 0;
      for (int k = 1; k <= q; ++k) {
        if (cat(k) == TokenCategory::FactsValue) s += m.at(q, k);
      }
      return s;
    };
    double query = 0;
    for (int q = 0; q < n; ++q) {
      if (cat(q) == TokenCategory::QueryToken) query = value_mass(q);
    }
    double sum = 0;
    int rows = 0;
    for (int q = 0; q < n; ++q) {
      if (reg(q) != Region::Expression) continue;
      sum += value_mass(q);
      ++rows;
    }
    out.scores[3] = std::max(query, detail::mean_or_zero(sum, rows));
  }

  // Idle: first-token mass over all rows.
  {
    double sum = 0;
    for (int q = 0; q < n; ++q) sum += m.at(q, 0);
    out.scores[4] = detail::mean_or_zero(sum, n);
  }

  // SelfProcessing: diagonal mass and the off-diagonal remainder (column 0 excluded).
  {
    double diag = 0, off = 0;
    int rows = 0;
    for (int q = 1; q < n; ++q) {
      diag += m.at(q, q);
      for (int k = 1; k < q; ++k) off += m.at(q, k);
      ++rows;
    }
    out.scores[5] = detail::mean_or_zero(diag, rows);
    out.self_off_diagonal = detail::mean_or_zero(off, rows);
  }

  // ExpressionProcessing: mass kept inside the expression block.
  {
    double in = 0, off = 0;
    int rows = 0;
    for (int q = 0; q < n; ++q) {
      if (reg(q) != Region::Expression) continue;
      for (int k = 0; k <= q; ++k) {
        if (reg(k) != Region::Expression) continue;
        in += m.at(q, k);
        if (k != q) off += m.at(q, k);
      }
      ++rows;
    }
    out.scores[6] = detail::mean_or_zero(in, rows);
    out.expr_off_diagonal = detail::mean_or_zero(off, rows);
  }

  // Segment-terminal columns: truth values and expr_last.
  {
    double sum = 0;
    for (int q = 0; q < n; ++q) {
      for (int k = 1; k <= q; ++k) {
        if (cat(k) == TokenCategory::FactsValue || cat(k) == TokenCategory::ExprLast) sum += m.at(q, k);
      }
    }
    out.terminal_mass = detail::mean_or_zero(sum, n);
  }

  for (HeadLabel l : kAllHeadLabels) {
    bool on = out.score(l) >= th[l];
    if (l == HeadLabel::SelfProcessing) on = on && out.self_off_diagonal <= kSelfOffDiagonalMax;
    if (l == HeadLabel::ExpressionProcessing) on = on && out.expr_off_diagonal >= kExprOffDiagonalMin;
    if (on) out.labels.push_back(l);
  }
  return out;
}

inline std::vector<AttentionMatrix> capture_attention(std::string_view prompt, Model& model) {
  return model.attention_patterns(prompt);
}

inline std::vector<HeadLabelSet> classify_prompt(std::string_view prompt, const std::vector<TokenAnnotation>& ann,
                                                 Model& model, const Thresholds& th = {}) {
  std::vector<HeadLabelSet> out;
  for (const auto& m : capture_attention(prompt, model)) out.push_back(classify_head(m, ann, th));
  return out;
}

struct HeadCounts {
  int n_layers = 0;
  int n_heads = 0;
  int n_prompts = 0;
  std::vector<std::array<double, 7>> mean;  // [layer][label]
};

// Per layer and label: labeled heads per prompt, averaged over prompts.
inline HeadCounts count_heads_per_layer(std::span<const ContrastPair> corpus, Model& model, const Thresholds& th = {}) {
  if (corpus.empty()) throw Error("head counting needs a non-empty corpus");
  HeadCounts c;
  c.n_layers = model.spec().n_layers;
  c.n_heads = model.spec().n_heads;
  c.mean.assign(static_cast<std::size_t>(c.n_layers), {});
  for (const auto& p : corpus) {
    for (const auto& h : classify_prompt(p.clean.prompt, p.annotations, model, th)) {
      for (HeadLabel l : h.labels) c.mean[static_cast<std::size_t>(h.layer)][static_cast<std::size_t>(l)] += 1;
    }
    ++c.n_prompts;
  }
  for (auto& row : c.mean) {
    for (double& v : row) v /= c.n_prompts;
  }
  return c;
}

}  // namespace plmi
