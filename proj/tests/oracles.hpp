#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls the library routine it is meant to check.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "plmi/dataset.hpp"
#include "plmi/heads.hpp"
#include "plmi/metrics.hpp"
#include "plmi/model.hpp"
#include "plmi/patching.hpp"

namespace oracle {

using namespace plmi;

// ---------------------------------------------------------------------------
// Truth tables over A..D as 16-bit masks. Row r assigns variable k (A = 0)
// the value of bit (3 - k) of r, inverted, so row 0 is all-True; this matches
// enumeration order with A most significant.

inline constexpr std::uint16_t kAll = 0xFFFF;

inline std::uint16_t var_mask(int k) {
  std::uint16_t m = 0;
  for (int r = 0; r < 16; ++r) {
    if (((r >> (3 - k)) & 1) == 0) m |= static_cast<std::uint16_t>(1u << r);
  }
  return m;
}

struct RandomExpr {
  std::string text;
  std::uint16_t mask = 0;
};

// Random formula with a fully parenthesized surface and its truth table.
inline RandomExpr random_expr(std::mt19937_64& g, int depth) {
  std::uniform_int_distribution<int> pick(0, depth <= 0 ? 1 : 5);
  const int kind = pick(g);
  if (kind == 0) {
    const bool v = g() & 1;
    const char* words[] = {"True", "False", "T", "F", "⊤", "⊥"};
    const int w = static_cast<int>(g() % 3);
    return {v ? words[2 * w] : words[2 * w + 1], v ? kAll : std::uint16_t{0}};
  }
  if (kind == 1) {
    const int k = static_cast<int>(g() % 4);
    return {std::string(1, static_cast<char>('A' + k)), var_mask(k)};
  }
  if (kind == 2) {
    RandomExpr c = random_expr(g, depth - 1);
    const bool word = g() & 1;
    return {(word ? "not (" : "¬(") + c.text + ")", static_cast<std::uint16_t>(~c.mask)};
  }
  RandomExpr a = random_expr(g, depth - 1);
  RandomExpr b = random_expr(g, depth - 1);
  const bool is_and = kind == 3 || kind == 5;
  const bool glyph = g() % 3 == 0;
  const std::string op = is_and ? (glyph ? " ∧ " : " and ") : (glyph ? " ∨ " : " or ");
  return {"(" + a.text + op + b.text + ")",
          static_cast<std::uint16_t>(is_and ? (a.mask & b.mask) : (a.mask | b.mask))};
}

inline int row_of(const Assignment& a) {
  int r = 0;
  for (int k = 0; k < 4; ++k) {
    auto it = a.find(static_cast<char>('A' + k));
    const bool v = it == a.end() ? true : it->second;
    if (!v) r |= 1 << (3 - k);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Two-hop answers by inline substitution of derived facts.

inline std::string substitute(const RuleTemplate& t, std::string query) {
  for (int pass = 0; pass < 4; ++pass) {
    for (const auto& f : t.facts) {
      if (!f.derived) continue;
      std::string out;
      for (char c : query) {
        if (c == f.variable) out += "(" + f.derived_text + ")";
        else out += c;
      }
      query = out;
    }
  }
  return query;
}

inline bool substituted_answer(const RuleTemplate& t, const Assignment& a) {
  return eval_expr(parse_expr(substitute(t, t.query_text)), a);
}

// ---------------------------------------------------------------------------
// Pair invariants checked from scratch.

inline std::string check_pair(const ContrastPair& p, const Tokenizer& tok) {
  const auto a = tok.encode(p.clean.prompt);
  const auto b = tok.encode(p.corrupt.prompt);
  if (a.size() != b.size()) return "token lengths differ";
  if (p.annotations.size() != a.size()) return "annotation count differs from token count";
  std::vector<std::size_t> diff;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].id != b[i].id) diff.push_back(i);
  }
  if (diff.size() != p.corrupted_fact_indices.size()) return "differing positions != flipped facts";
  if (diff.empty()) return "no differing token";
  for (std::size_t i : diff) {
    if (p.annotations[i].category != TokenCategory::FactsValue) return "difference outside facts_value";
  }
  if (p.clean.answer == p.corrupt.answer) return "answers not flipped";
  int queries = 0;
  for (const auto& an : p.annotations) queries += an.category == TokenCategory::QueryToken;
  if (queries != 1) return "query_token count != 1";
  if (p.annotations.back().category != TokenCategory::QueryToken) return "last token is not the query";
  return "";
}

// ---------------------------------------------------------------------------
// Brute-force sweeps: one explicit intervention per cell.

inline double ld_of(const std::vector<double>& logits, const AnswerTokens& ans, bool clean_answer) {
  const int good = clean_answer ? ans.true_id : ans.false_id;
  const int bad = clean_answer ? ans.false_id : ans.true_id;
  return logits[static_cast<std::size_t>(good)] - logits[static_cast<std::size_t>(bad)];
}

inline std::vector<double> brute_sweep(const ContrastPair& p, Model& m, const AnswerTokens& ans, SiteKind kind,
                                       InterventionMode mode) {
  const int T = static_cast<int>(m.tokenizer().encode(p.clean.prompt).size());
  const int L = m.spec().n_layers;
  const int C = kind == SiteKind::HeadOutput ? m.spec().n_heads : T;
  std::vector<ActivationSite> sites;
  for (int l = 0; l < L; ++l) {
    for (int c = 0; c < C; ++c) {
      if (kind == SiteKind::ResidPre) sites.push_back(ActivationSite::resid_pre(l, c));
      else if (kind == SiteKind::MlpOut) sites.push_back(ActivationSite::mlp_out(l, c));
      else sites.push_back(ActivationSite::head_output(l, c));
    }
  }
  const auto clean = m.run_with_capture(p.clean.prompt, sites);
  const double base = ld_of(m.run_with_capture(p.corrupt.prompt, {}).logits, ans, p.clean.answer);
  std::vector<double> out;
  for (const auto& s : sites) {
    std::vector<Intervention> one{{s, mode}};
    const auto logits = m.run_with_intervention(p.corrupt.prompt, one, &clean.cache);
    out.push_back(ld_of(logits, ans, p.clean.answer) - base);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nested category x stage means, computed directly from raw grids.

struct BruteCell {
  double mean = 0;
  std::optional<double> sem;
  int n_samples = 0;
};

inline std::map<std::pair<int, std::string>, BruteCell> brute_aggregate(
    const std::vector<SweepGrid>& grids, const std::vector<std::vector<TokenAnnotation>>& anns,
    const std::vector<LayerGroup>& groups) {
  std::map<std::pair<int, std::string>, std::vector<double>> samples;
  for (std::size_t s = 0; s < grids.size(); ++s) {
    std::map<std::pair<int, std::string>, std::pair<double, int>> acc;  // sum of layer-means, token count
    for (const auto& a : anns[s]) {
      for (const auto& g : groups) {
        double layer_sum = 0;
        for (int l = g.lo; l <= g.hi; ++l) {
          layer_sum += std::fabs(grids[s].dld[static_cast<std::size_t>(l) * grids[s].cols + a.position]);
        }
        auto& cell = acc[{static_cast<int>(a.category), g.name}];
        cell.first += layer_sum / (g.hi - g.lo + 1);
        cell.second += 1;
      }
    }
    for (const auto& [key, v] : acc) samples[key].push_back(v.first / v.second);
  }
  std::map<std::pair<int, std::string>, BruteCell> out;
  for (const auto& [key, v] : samples) {
    BruteCell c;
    c.n_samples = static_cast<int>(v.size());
    double s = 0;
    for (double x : v) s += x;
    c.mean = s / v.size();
    if (v.size() > 1) {
      double ss = 0;
      for (double x : v) ss += (x - c.mean) * (x - c.mean);
      c.sem = std::sqrt(ss / (v.size() - 1) / v.size());
    }
    out[key] = c;
  }
  return out;
}

inline SweepGrid random_grid(std::mt19937_64& g, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  SweepGrid grid;
  grid.pair_id = "synthetic";
  grid.rows = rows;
  grid.cols = cols;
  for (int i = 0; i < rows * cols; ++i) {
    grid.dld.push_back(n(g));
    grid.ld_patched.push_back(0);
  }
  return grid;
}

inline std::vector<TokenAnnotation> random_annotations(std::mt19937_64& g, int cols) {
  std::vector<TokenAnnotation> out;
  for (int i = 0; i < cols; ++i) {
    const auto c = kAllCategories[g() % kAllCategories.size()];
    out.push_back({i, static_cast<Region>(g() % 3), c});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic attention matrices, one per head label, over a real prompt's
// annotations. Rows not targeted by a construction use a filler of 0.6 on
// the first token and 0.4 on the diagonal.

class Attn {
 public:
  explicit Attn(int n) : n_(n), w_(static_cast<std::size_t>(n) * n, 0.0) {}
  double& at(int q, int k) { return w_[static_cast<std::size_t>(q) * n_ + k]; }
  void filler(int q) {
    clear_row(q);
    if (q == 0) {
      at(0, 0) = 1;
      return;
    }
    at(q, 0) = 0.6;
    at(q, q) = 0.4;
  }
  void clear_row(int q) {
    for (int k = 0; k < n_; ++k) at(q, k) = 0;
  }
  AttentionMatrix done(int layer = 0, int head = 0) const { return AttentionMatrix{layer, head, n_, w_}; }

 private:
  int n_;
  std::vector<double> w_;
};

inline AttentionMatrix construct(HeadLabel label, const std::vector<TokenAnnotation>& ann) {
  const int n = static_cast<int>(ann.size());
  Attn m(n);
  for (int q = 0; q < n; ++q) m.filler(q);
  auto cat = [&](int i) { return ann[static_cast<std::size_t>(i)].category; };
  auto reg = [&](int i) { return ann[static_cast<std::size_t>(i)].region; };
  switch (label) {
    case HeadLabel::Splitting:
      for (int q = 1; q < n; ++q) {
        std::vector<int> d;
        for (int k = 1; k <= q; ++k) {
          if (cat(k) == TokenCategory::Delimiter) d.push_back(k);
        }
        if (d.empty()) continue;
        m.clear_row(q);
        m.at(q, 0) = 0.1;
        for (int k : d) m.at(q, k) += 0.9 / d.size();
      }
      break;
    case HeadLabel::Transmission:
      for (int q = 1; q < n; ++q) {
        if (reg(q) != Region::Facts) continue;
        m.clear_row(q);
        for (int k = 0; k < q; ++k) m.at(q, k) = 1.0 / q;
      }
      break;
    case HeadLabel::EntityBinding:
      for (int v = 0; v < n; ++v) {
        if (cat(v) != TokenCategory::FactsValue) continue;
        int u = v - 1;
        while (u >= 0 && cat(u) != TokenCategory::FactsVar) --u;
        if (u <= 0) continue;
        m.clear_row(v);
        m.at(v, u) = 0.5;
        m.at(v, 0) = 0.5;
      }
      break;
    case HeadLabel::FactRetrieval: {
      const int q = n - 1;
      std::vector<int> vals;
      for (int k = 1; k <= q; ++k) {
        if (cat(k) == TokenCategory::FactsValue) vals.push_back(k);
      }
      m.clear_row(q);
      m.at(q, 0) = 0.2;
      for (int k : vals) m.at(q, k) += 0.8 / vals.size();
      break;
    }
    case HeadLabel::Idle:
      for (int q = 0; q < n; ++q) {
        m.clear_row(q);
        m.at(q, 0) = 1;
      }
      break;
    case HeadLabel::SelfProcessing:
      for (int q = 1; q < n; ++q) {
        m.clear_row(q);
        m.at(q, q) = 0.9;
        m.at(q, 0) = 0.1;
      }
      break;
    case HeadLabel::ExpressionProcessing:
      for (int q = 1; q < n; ++q) {
        if (reg(q) != Region::Expression) continue;
        std::vector<int> earlier;
        for (int k = 1; k < q; ++k) {
          if (reg(k) == Region::Expression) earlier.push_back(k);
        }
        m.clear_row(q);
        if (earlier.empty()) {
          m.at(q, q) = 0.5;
          m.at(q, 0) = 0.5;
          continue;
        }
        m.at(q, q) = 0.5;
        m.at(q, 0) = 0.15;
        for (int k : earlier) m.at(q, k) += 0.35 / earlier.size();
      }
      break;
  }
  return m.done();
}

// Label scores recomputed from explicit column sets.
inline std::array<double, 7> brute_scores(const AttentionMatrix& m, const std::vector<TokenAnnotation>& ann) {
  const int n = m.size;
  std::set<int> delim, values, vars, expr;
  for (const auto& a : ann) {
    if (a.category == TokenCategory::Delimiter) delim.insert(a.position);
    if (a.category == TokenCategory::FactsValue) values.insert(a.position);
    if (a.category == TokenCategory::FactsVar) vars.insert(a.position);
    if (a.region == Region::Expression) expr.insert(a.position);
  }
  std::array<double, 7> s{};
  auto row_mass = [&](int q, const std::set<int>& cols) {
    double x = 0;
    for (int k : cols) {
      if (k >= 1 && k <= q) x += m.at(q, k);
    }
    return x;
  };
  {
    double sum = 0;
    int rows = 0;
    for (int q = 1; q < n; ++q) {
      if (delim.empty() || *delim.begin() > q) continue;
      sum += row_mass(q, delim);
      ++rows;
    }
    s[0] = rows ? sum / rows : 0;
  }
  {
    double best = 0;
    for (Region r : kAllRegions) {
      std::set<int> members;
      for (const auto& a : ann) {
        if (a.region == r) members.insert(a.position);
      }
      if (members.size() < 3) continue;
      double sum = 0;
      int rows = 0;
      for (int q : members) {
        std::set<int> cand;
        for (int k : members) {
          if (k >= 1 && k < q && !delim.count(k)) cand.insert(k);
        }
        if (cand.empty()) continue;
        double x = 0;
        for (int k : cand) x += m.at(q, k);
        sum += x;
        ++rows;
      }
      if (rows) best = std::max(best, sum / rows);
    }
    s[1] = best;
  }
  {
    double sum = 0;
    int rows = 0;
    for (int v : values) {
      auto it = vars.lower_bound(v);
      if (it == vars.begin()) continue;
      const int u = *std::prev(it);
      if (u == 0) continue;
      sum += m.at(v, u);
      ++rows;
    }
    s[2] = rows ? sum / rows : 0;
  }
  {
    const double query = row_mass(n - 1, values);
    double sum = 0;
    for (int q : expr) sum += row_mass(q, values);
    s[3] = std::max(query, expr.empty() ? 0.0 : sum / expr.size());
  }
  {
    double sum = 0;
    for (int q = 0; q < n; ++q) sum += m.at(q, 0);
    s[4] = sum / n;
  }
  {
    double sum = 0;
    for (int q = 1; q < n; ++q) sum += m.at(q, q);
    s[5] = n > 1 ? sum / (n - 1) : 0;
  }
  {
    double sum = 0;
    for (int q : expr) {
      for (int k : expr) {
        if (k <= q) sum += m.at(q, k);
      }
    }
    s[6] = expr.empty() ? 0 : sum / expr.size();
  }
  return s;
}

}  // namespace oracle
