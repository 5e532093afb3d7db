#pragma once

// Rule templates, prompt rendering, clean/corrupt contrast pairs and token
// annotation for the propositional-logic probing corpus.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "plmi/errors.hpp"
#include "plmi/logic.hpp"
#include "plmi/rng.hpp"
#include "plmi/tokenizer.hpp"

namespace plmi {

enum class RuleCategory {
  Identity,
  Domination,
  Idempotent,
  DoubleNegation,
  ExcludedMiddle,
  Contradiction,
  Commutative,
  Associative,
  Distributive,
  DeMorgan,
  Absorption,
};

inline constexpr std::array<RuleCategory, 11> kAllRules = {
    RuleCategory::Identity,      RuleCategory::Domination,     RuleCategory::Idempotent,
    RuleCategory::DoubleNegation, RuleCategory::ExcludedMiddle, RuleCategory::Contradiction,
    RuleCategory::Commutative,   RuleCategory::Associative,    RuleCategory::Distributive,
    RuleCategory::DeMorgan,      RuleCategory::Absorption,
};

inline std::string_view to_string(RuleCategory r) {
  switch (r) {
    case RuleCategory::Identity: return "identity";
    case RuleCategory::Domination: return "domination";
    case RuleCategory::Idempotent: return "idempotent";
    case RuleCategory::DoubleNegation: return "double_negation";
    case RuleCategory::ExcludedMiddle: return "excluded_middle";
    case RuleCategory::Contradiction: return "contradiction";
    case RuleCategory::Commutative: return "commutative";
    case RuleCategory::Associative: return "associative";
    case RuleCategory::Distributive: return "distributive";
    case RuleCategory::DeMorgan: return "de_morgan";
    case RuleCategory::Absorption: return "absorption";
  }
  return "?";
}

inline RuleCategory rule_from_string(std::string_view s) {
  for (RuleCategory r : kAllRules) {
    if (to_string(r) == s) return r;
  }
  throw ConfigError("unknown rule category '" + std::string(s) + "'");
}

enum class Depth { OneHop, TwoHop };

inline std::string_view to_string(Depth d) { return d == Depth::OneHop ? "one_hop" : "two_hop"; }

inline Depth depth_from_string(std::string_view s) {
  if (s == "one_hop" || s == "1" || s == "one-hop") return Depth::OneHop;
  if (s == "two_hop" || s == "2" || s == "two-hop") return Depth::TwoHop;
  throw ConfigError("unknown depth '" + std::string(s) + "' (expected one_hop|two_hop)");
}

enum class Region { Facts, Expression, Query };

inline constexpr std::array<Region, 3> kAllRegions = {Region::Facts, Region::Expression, Region::Query};

inline std::string_view to_string(Region r) {
  switch (r) {
    case Region::Facts: return "facts";
    case Region::Expression: return "expression";
    case Region::Query: return "query";
  }
  return "?";
}

inline Region region_from_string(std::string_view s) {
  for (Region r : kAllRegions) {
    if (to_string(r) == s) return r;
  }
  throw ConfigError("unknown region '" + std::string(s) + "' (expected facts|expression|query)");
}

enum class TokenCategory {
  FactsVar,
  FactsIs,
  FactsValue,
  Delimiter,
  ExprOpen,
  ExprNeg,
  ExprVar,
  ExprOp,
  ExprClose,
  ExprLast,
  QueryToken,
  Other,
};

inline constexpr std::array<TokenCategory, 12> kAllCategories = {
    TokenCategory::FactsVar, TokenCategory::FactsIs,   TokenCategory::FactsValue, TokenCategory::Delimiter,
    TokenCategory::ExprOpen, TokenCategory::ExprNeg,   TokenCategory::ExprVar,    TokenCategory::ExprOp,
    TokenCategory::ExprClose, TokenCategory::ExprLast, TokenCategory::QueryToken, TokenCategory::Other,
};

inline std::string_view to_string(TokenCategory c) {
  switch (c) {
    case TokenCategory::FactsVar: return "facts_var";
    case TokenCategory::FactsIs: return "facts_is";
    case TokenCategory::FactsValue: return "facts_value";
    case TokenCategory::Delimiter: return "delimiter";
    case TokenCategory::ExprOpen: return "expr_open";
    case TokenCategory::ExprNeg: return "expr_neg";
    case TokenCategory::ExprVar: return "expr_var";
    case TokenCategory::ExprOp: return "expr_op";
    case TokenCategory::ExprClose: return "expr_close";
    case TokenCategory::ExprLast: return "expr_last";
    case TokenCategory::QueryToken: return "query_token";
    case TokenCategory::Other: return "other";
  }
  return "?";
}

inline TokenCategory category_from_string(std::string_view s) {
  for (TokenCategory c : kAllCategories) {
    if (to_string(c) == s) return c;
  }
  throw ConfigError("unknown token category '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Templates

struct FactSlot {
  char variable = 0;
  // Empty for a free truth value; otherwise the expression text whose value
  // defines this fact (two-hop chains).
  std::string derived_text;
  std::optional<Expr> derived;

  bool is_free() const { return !derived.has_value(); }
};

struct RuleTemplate {
  std::string id;  // e.g. "de_morgan.one_hop.t0"
  RuleCategory category = RuleCategory::Identity;
  Depth depth = Depth::OneHop;
  std::vector<FactSlot> facts;
  std::string query_text;
  Expr query;
  bool in_table = false;  // one of the canonical printed templates

  std::vector<int> free_fact_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < facts.size(); ++i) {
      if (facts[i].is_free()) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  std::string free_variables() const {
    std::string out;
    for (const auto& f : facts) {
      if (f.is_free()) out += f.variable;
    }
    return out;
  }

  void validate() const {
    if (depth == Depth::OneHop) {
      for (const auto& f : facts) {
        if (!f.is_free()) throw Error(id + ": one-hop template with a derived fact");
      }
      return;
    }
    const std::string qvars = plmi::free_variables(query);
    bool chained = false;
    for (const auto& f : facts) {
      if (!f.is_free() && qvars.find(f.variable) != std::string::npos) chained = true;
    }
    if (!chained) throw Error(id + ": two-hop template without a derived fact in the query");
  }
};

enum class TemplateSet { Table, Extended };

inline std::string_view to_string(TemplateSet s) { return s == TemplateSet::Table ? "table" : "extended"; }

inline TemplateSet template_set_from_string(std::string_view s) {
  if (s == "table") return TemplateSet::Table;
  if (s == "extended") return TemplateSet::Extended;
  throw ConfigError("unknown template set '" + std::string(s) + "' (expected table|extended)");
}

namespace detail {

struct RuleForms {
  RuleCategory rule;
  std::vector<std::string> forms;  // query text over A, B, C; constants as T/F
  std::size_t table_forms;         // leading forms that appear in the printed rule table
};

inline const std::vector<RuleForms>& rule_forms() {
  static const std::vector<RuleForms> forms = {
      {RuleCategory::Identity, {"A and T", "A or F"}, 2},
      {RuleCategory::Domination, {"A and F", "A or T"}, 2},
      {RuleCategory::Idempotent, {"A and A", "A or A"}, 2},
      {RuleCategory::DoubleNegation, {"(¬(¬A))"}, 1},
      {RuleCategory::ExcludedMiddle, {"A or ¬A"}, 1},
      {RuleCategory::Contradiction, {"A and ¬A"}, 1},
      {RuleCategory::Commutative, {"A and B", "B and A", "A or B", "B or A"}, 1},
      {RuleCategory::Associative, {"(A and B) and C", "A and (B and C)", "(A or B) or C", "A or (B or C)"}, 1},
      {RuleCategory::Distributive,
       {"A and (B or C)", "(A and B) or (A and C)", "A or (B and C)", "(A or B) and (A or C)"},
       1},
      {RuleCategory::DeMorgan, {"(¬A or ¬B)", "¬(A and B)", "(¬A and ¬B)", "¬(A or B)"}, 1},
      {RuleCategory::Absorption, {"A and (A or B)", "A or (A and B)"}, 1},
  };
  return forms;
}

inline FactSlot free_fact(char v) { return FactSlot{v, {}, std::nullopt}; }

}  // namespace detail

// Canonical template catalog, ordered by rule, depth, form.
//
// One-hop: facts are the form's variables (alphabetical), query is the form.
// Two-hop: the form becomes a derived fact bound to the next free letter,
// followed by one more free fact; the query joins the derived and the fresh
// variable with "and"/"or" (both operand orders in the extended set). Forms
// over three variables would need a fifth letter and are one-hop only.
inline std::vector<RuleTemplate> build_templates(TemplateSet set, std::string_view alphabet = kDefaultAlphabet) {
  std::vector<RuleTemplate> out;
  for (const auto& rf : detail::rule_forms()) {
    const std::size_t nforms = set == TemplateSet::Table ? rf.table_forms : rf.forms.size();
    for (Depth depth : {Depth::OneHop, Depth::TwoHop}) {
      int k = 0;
      for (std::size_t f = 0; f < nforms; ++f) {
        const std::string& form = rf.forms[f];
        const Expr body = parse_expr(form, alphabet);
        const std::string vars = free_variables(body);
        if (depth == Depth::OneHop) {
          RuleTemplate t;
          t.id = std::string(to_string(rf.rule)) + ".one_hop.t" + std::to_string(k++);
          t.category = rf.rule;
          t.depth = depth;
          for (char v : vars) t.facts.push_back(detail::free_fact(v));
          t.query_text = form;
          t.query = body;
          t.in_table = f < rf.table_forms;
          t.validate();
          out.push_back(std::move(t));
          continue;
        }
        if (vars.size() + 2 > alphabet.size()) continue;
        const char derived = alphabet[vars.size()];
        const char fresh = alphabet[vars.size() + 1];
        std::vector<std::pair<std::string, bool>> queries = {
            {std::string(1, derived) + " and " + fresh, true},
            {std::string(1, derived) + " or " + fresh, true},
        };
        if (set == TemplateSet::Extended) {
          queries.push_back({std::string(1, fresh) + " and " + derived, false});
          queries.push_back({std::string(1, fresh) + " or " + derived, false});
        }
        for (const auto& [q, printed] : queries) {
          RuleTemplate t;
          t.id = std::string(to_string(rf.rule)) + ".two_hop.t" + std::to_string(k++);
          t.category = rf.rule;
          t.depth = depth;
          for (char v : vars) t.facts.push_back(detail::free_fact(v));
          t.facts.push_back(FactSlot{derived, form, body});
          t.facts.push_back(detail::free_fact(fresh));
          t.query_text = q;
          t.query = parse_expr(q, alphabet);
          t.in_table = printed && f < rf.table_forms;
          t.validate();
          out.push_back(std::move(t));
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Samples

struct PromptSpan {
  std::size_t begin = 0;  // byte range in the prompt
  std::size_t end = 0;
  Region region = Region::Facts;
  TokenCategory category = TokenCategory::Other;
  int fact_index = -1;
};

struct Sample {
  std::string id;
  std::string template_id;
  RuleCategory rule = RuleCategory::Identity;
  Depth depth = Depth::OneHop;
  Assignment assignment;  // free facts only
  std::string prompt;
  bool answer = false;
  ValueStyle style = ValueStyle::Long;
  std::vector<PromptSpan> spans;  // empty when loaded from a dataset file
};

struct RenderOptions {
  ValueStyle style = ValueStyle::Long;
  NegationStyle negation = NegationStyle::Glyph;
};

namespace detail {

class PromptBuilder {
 public:
  void text(std::string_view s) { prompt_ += s; }

  void span(std::string_view s, Region region, TokenCategory cat, int fact = -1) {
    const std::size_t b = prompt_.size();
    prompt_ += s;
    spans_.push_back(PromptSpan{b, prompt_.size(), region, cat, fact});
  }

  // Copies an expression template, substituting constants with the value
  // style and negations with the chosen surface form.
  void expression(std::string_view src, const RenderOptions& opt, Region region, bool expression_categories) {
    const auto lexemes = lex_expr(src, "ABCDEFGHIJKLMNOPQRSTUVWXYZ");
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < lexemes.size(); ++i) {
      const Lexeme& l = lexemes[i];
      prompt_ += src.substr(cursor, l.offset - cursor);
      cursor = l.offset + l.length;
      std::string surface(src.substr(l.offset, l.length));
      TokenCategory cat = TokenCategory::Other;
      switch (l.kind) {
        case LexemeKind::Open: cat = TokenCategory::ExprOpen; break;
        case LexemeKind::Close: cat = TokenCategory::ExprClose; break;
        case LexemeKind::Not:
          cat = TokenCategory::ExprNeg;
          surface = opt.negation == NegationStyle::Glyph ? "¬" : "not";
          break;
        case LexemeKind::And:
        case LexemeKind::Or: cat = TokenCategory::ExprOp; break;
        case LexemeKind::Const:
          cat = TokenCategory::ExprVar;
          surface = render_value(l.value, opt.style);
          break;
        case LexemeKind::Var: cat = TokenCategory::ExprVar; break;
      }
      span(surface, region, expression_categories ? cat : TokenCategory::Other);
      if (l.kind == LexemeKind::Not && opt.negation == NegationStyle::Word && cursor < src.size() &&
          src[cursor] != ' ') {
        prompt_ += ' ';
      }
    }
    prompt_ += src.substr(cursor);
  }

  std::string prompt_;
  std::vector<PromptSpan> spans_;
};

inline std::string assignment_key(const Assignment& a) {
  std::string s;
  for (const auto& [k, v] : a) {
    s += k;
    s += v ? 'T' : 'F';
  }
  return s;
}

}  // namespace detail

// Resolves derived facts in order, then evaluates the query.
inline bool resolve_answer(const RuleTemplate& t, const Assignment& free_values) {
  Assignment env;
  for (const auto& f : t.facts) {
    if (f.is_free()) {
      auto it = free_values.find(f.variable);
      if (it == free_values.end()) throw UnboundVariable(f.variable);
      env[f.variable] = it->second;
    } else {
      try {
        env[f.variable] = eval_expr(*f.derived, env);
      } catch (const UnboundVariable& e) {
        throw Error(t.id + ": unresolvable derived fact '" + std::string(1, f.variable) + " is " + f.derived_text +
                    "': " + e.what());
      }
    }
  }
  return eval_expr(t.query, env);
}

inline Sample instantiate_rule(const RuleTemplate& t, const Assignment& a, const RenderOptions& opt = {}) {
  detail::PromptBuilder b;
  for (std::size_t i = 0; i < t.facts.size(); ++i) {
    const FactSlot& f = t.facts[i];
    const int fi = static_cast<int>(i);
    if (i > 0) {
      b.span(",", Region::Facts, TokenCategory::Delimiter);
      b.text(" ");
    }
    b.span(std::string(1, f.variable), Region::Facts, TokenCategory::FactsVar, fi);
    b.text(" ");
    b.span("is", Region::Facts, TokenCategory::FactsIs, fi);
    b.text(" ");
    if (f.is_free()) {
      auto it = a.find(f.variable);
      if (it == a.end()) throw UnboundVariable(f.variable);
      b.span(render_value(it->second, opt.style), Region::Facts, TokenCategory::FactsValue, fi);
    } else {
      b.expression(f.derived_text, opt, Region::Facts, false);
    }
  }
  b.span(",", Region::Facts, TokenCategory::Delimiter);
  b.text(" ");
  b.expression(t.query_text, opt, Region::Expression, true);
  b.text(" ");
  b.span("is", Region::Query, TokenCategory::QueryToken);

  Sample s;
  s.template_id = t.id;
  s.rule = t.category;
  s.depth = t.depth;
  for (const auto& f : t.facts) {
    if (f.is_free()) s.assignment[f.variable] = a.at(f.variable);
  }
  s.id = t.id + "." + detail::assignment_key(s.assignment);
  s.prompt = std::move(b.prompt_);
  s.answer = resolve_answer(t, s.assignment);
  s.style = opt.style;
  s.spans = std::move(b.spans_);
  return s;
}

// ---------------------------------------------------------------------------
// Annotation

struct TokenAnnotation {
  int position = 0;
  Region region = Region::Facts;
  TokenCategory category = TokenCategory::Other;

  friend bool operator==(const TokenAnnotation&, const TokenAnnotation&) = default;
};

// Labels every token of the prompt. Tokens map to the span holding their
// first non-space byte; the final token of the expression region becomes
// expr_last and the final token of the prompt becomes query_token.
inline std::vector<TokenAnnotation> annotate_tokens(const Sample& s, const Tokenizer& tok) {
  if (s.spans.empty()) throw Error(s.id + ": sample carries no span information");
  const auto tokens = tok.encode(s.prompt);
  if (tokens.size() < 3) throw Error(s.id + ": prompt renders to fewer than 3 tokens");

  std::vector<TokenAnnotation> out(tokens.size());
  std::vector<int> span_of(tokens.size(), -1);
  std::vector<int> tokens_in_span(s.spans.size(), 0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::size_t key = tokens[i].offset;
    while (key < tokens[i].offset + tokens[i].length && s.prompt[key] == ' ') ++key;
    out[i].position = static_cast<int>(i);
    for (std::size_t k = 0; k < s.spans.size(); ++k) {
      if (key >= s.spans[k].begin && key < s.spans[k].end) {
        span_of[i] = static_cast<int>(k);
        ++tokens_in_span[k];
        break;
      }
    }
    if (span_of[i] >= 0) {
      out[i].region = s.spans[span_of[i]].region;
      out[i].category = s.spans[span_of[i]].category;
    } else {
      out[i].region = i > 0 ? out[i - 1].region : Region::Facts;
      out[i].category = TokenCategory::Other;
    }
  }
  for (std::size_t k = 0; k < s.spans.size(); ++k) {
    if (s.spans[k].category == TokenCategory::FactsValue && tokens_in_span[k] != 1) {
      throw AnnotationAmbiguous(s.id + ": truth value '" + s.prompt.substr(s.spans[k].begin, s.spans[k].end - s.spans[k].begin) +
                                "' spans " + std::to_string(tokens_in_span[k]) + " tokens under the " + tok.name() +
                                " tokenizer");
    }
  }
  if (out.back().region != Region::Query) throw Error(s.id + ": prompt does not end in the query token");
  for (auto& a : out) {
    if (a.category == TokenCategory::QueryToken) a.category = TokenCategory::Other;
  }
  out.back().category = TokenCategory::QueryToken;
  for (std::size_t i = out.size(); i-- > 0;) {
    if (out[i].region == Region::Expression) {
      out[i].category = TokenCategory::ExprLast;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Contrast pairs

struct ContrastPair {
  std::string id;
  RuleCategory rule = RuleCategory::Identity;
  Depth depth = Depth::OneHop;
  Sample clean;
  Sample corrupt;
  std::vector<int> corrupted_fact_indices;
  std::vector<TokenAnnotation> annotations;
  ValueStyle style = ValueStyle::Long;
  std::uint64_t seed = 0;
};

inline std::vector<int> differing_positions(const std::vector<Token>& a, const std::vector<Token>& b) {
  std::vector<int> out;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i].id != b[i].id) out.push_back(static_cast<int>(i));
  }
  return out;
}

struct PairOptions {
  RenderOptions render;
  int flips = 1;  // number of free facts flipped per pair
};

// Every corruption of `clean` that flips exactly `flips` free facts and
// changes the resolved answer, in ascending order of flipped fact indices.
inline std::vector<ContrastPair> make_contrast_pairs(const RuleTemplate& t, const Sample& clean, const Tokenizer& tok,
                                                     const PairOptions& opt = {}) {
  const std::vector<int> free_idx = t.free_fact_indices();
  if (opt.flips < 1 || opt.flips > static_cast<int>(free_idx.size())) {
    throw Error(t.id + ": cannot flip " + std::to_string(opt.flips) + " of " + std::to_string(free_idx.size()) +
                " free facts");
  }
  const auto clean_tokens = tok.encode(clean.prompt);
  const auto clean_ann = annotate_tokens(clean, tok);

  std::vector<ContrastPair> out;
  const std::size_t n = free_idx.size();
  for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
    if (std::popcount(mask) != opt.flips) continue;
    Assignment a = clean.assignment;
    std::vector<int> flipped;
    for (std::size_t k = 0; k < n; ++k) {
      if (mask & (1u << k)) {
        const char v = t.facts[static_cast<std::size_t>(free_idx[k])].variable;
        a[v] = !a[v];
        flipped.push_back(free_idx[k]);
      }
    }
    Sample corrupt = instantiate_rule(t, a, opt.render);
    if (corrupt.answer == clean.answer) continue;

    const auto corrupt_tokens = tok.encode(corrupt.prompt);
    if (corrupt_tokens.size() != clean_tokens.size()) {
      throw TokenizationMisaligned(clean.id + " vs " + corrupt.id + ": " + std::to_string(clean_tokens.size()) +
                                   " vs " + std::to_string(corrupt_tokens.size()) + " tokens");
    }
    if (annotate_tokens(corrupt, tok) != clean_ann) {
      throw TokenizationMisaligned(clean.id + " vs " + corrupt.id + ": annotations differ");
    }
    const auto diff = differing_positions(clean_tokens, corrupt_tokens);
    if (diff.empty()) throw TokenizationMisaligned(clean.id + " vs " + corrupt.id + ": prompts tokenize identically");
    for (int p : diff) {
      if (clean_ann[static_cast<std::size_t>(p)].category != TokenCategory::FactsValue) {
        throw TokenizationMisaligned(clean.id + " vs " + corrupt.id + ": difference outside fact values at token " +
                                     std::to_string(p));
      }
    }

    ContrastPair p;
    p.id = clean.id + ".f";
    for (std::size_t k = 0; k < flipped.size(); ++k) p.id += (k ? "+" : "") + std::to_string(flipped[k]);
    p.rule = t.category;
    p.depth = t.depth;
    p.clean = clean;
    p.corrupt = std::move(corrupt);
    p.corrupted_fact_indices = std::move(flipped);
    p.annotations = clean_ann;
    p.style = opt.render.style;
    out.push_back(std::move(p));
  }
  if (out.empty()) {
    throw NoAnswerFlippingCorruption(clean.id + ": no " + std::to_string(opt.flips) +
                                     "-fact flip changes the answer");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus generation

using QuotaKey = std::pair<RuleCategory, Depth>;

// Per-rule pair quotas of the shipped corpus: 74 one-hop + 296 two-hop.
// Rules whose one-hop forms are tautologies or contradictions have no
// answer-flipping corruption and get no one-hop quota.
inline std::map<QuotaKey, int> default_quotas() {
  using R = RuleCategory;
  std::map<QuotaKey, int> q;
  const std::array<std::pair<R, int>, 11> one = {{{R::Identity, 4},
                                                  {R::Domination, 0},
                                                  {R::Idempotent, 4},
                                                  {R::DoubleNegation, 2},
                                                  {R::ExcludedMiddle, 0},
                                                  {R::Contradiction, 0},
                                                  {R::Commutative, 12},
                                                  {R::Associative, 14},
                                                  {R::Distributive, 18},
                                                  {R::DeMorgan, 12},
                                                  {R::Absorption, 8}}};
  const std::array<std::pair<R, int>, 11> two = {{{R::Identity, 28},
                                                  {R::Domination, 12},
                                                  {R::Idempotent, 28},
                                                  {R::DoubleNegation, 14},
                                                  {R::ExcludedMiddle, 6},
                                                  {R::Contradiction, 6},
                                                  {R::Commutative, 72},
                                                  {R::Associative, 0},
                                                  {R::Distributive, 0},
                                                  {R::DeMorgan, 80},
                                                  {R::Absorption, 50}}};
  for (auto [r, n] : one) q[{r, Depth::OneHop}] = n;
  for (auto [r, n] : two) q[{r, Depth::TwoHop}] = n;
  return q;
}

inline constexpr std::uint64_t kDefaultSeed = 2024;

struct CorpusConfig {
  std::vector<RuleCategory> rules{kAllRules.begin(), kAllRules.end()};
  std::vector<Depth> depths{Depth::OneHop, Depth::TwoHop};
  RenderOptions render;
  TemplateSet templates = TemplateSet::Extended;
  bool exhaustive = false;  // true: emit every valid pair, ignore quotas
  std::map<QuotaKey, int> quotas = default_quotas();
  std::uint64_t seed = kDefaultSeed;
  int flips = 1;
};

struct RuleCount {
  RuleCategory rule;
  Depth depth;
  int templates = 0;
  int pool = 0;     // valid pairs before subsampling
  int quota = -1;   // -1 when exhaustive
  int emitted = 0;
};

struct CorpusReport {
  std::vector<RuleCount> counts;
  std::vector<std::string> warnings;
  ValueStyle requested_style = ValueStyle::Long;
  ValueStyle style = ValueStyle::Long;
  int one_hop = 0;
  int two_hop = 0;

  int total() const { return one_hop + two_hop; }
};

struct Corpus {
  std::vector<ContrastPair> pairs;
  CorpusReport report;
};

namespace detail {

inline bool value_is_single_token(const Tokenizer& tok, ValueStyle style) {
  for (bool v : {true, false}) {
    if (!tok.single_token_id(" " + render_value(v, style))) return false;
  }
  return true;
}

}  // namespace detail

inline Corpus generate_corpus(const CorpusConfig& cfg, const Tokenizer& tok) {
  Corpus corpus;
  CorpusReport& rep = corpus.report;
  RenderOptions render = cfg.render;
  rep.requested_style = render.style;
  if (!detail::value_is_single_token(tok, render.style)) {
    if (render.style == ValueStyle::Long && detail::value_is_single_token(tok, ValueStyle::Short)) {
      render.style = ValueStyle::Short;
      rep.warnings.push_back("tokenizer '" + tok.name() +
                             "' splits long truth values; corpus switched to short style (T/F)");
    } else {
      throw AnnotationAmbiguous("tokenizer '" + tok.name() + "' splits truth values in every supported style");
    }
  }
  rep.style = render.style;

  const auto templates = build_templates(cfg.templates);
  for (RuleCategory rule : kAllRules) {
    if (std::find(cfg.rules.begin(), cfg.rules.end(), rule) == cfg.rules.end()) continue;
    for (Depth depth : {Depth::OneHop, Depth::TwoHop}) {
      if (std::find(cfg.depths.begin(), cfg.depths.end(), depth) == cfg.depths.end()) continue;
      RuleCount rc{rule, depth};
      std::vector<ContrastPair> pool;
      for (const auto& t : templates) {
        if (t.category != rule || t.depth != depth) continue;
        ++rc.templates;
        if (cfg.flips > static_cast<int>(t.free_fact_indices().size())) continue;
        for (const auto& a : enumerate_assignments(t.free_variables())) {
          const Sample clean = instantiate_rule(t, a, render);
          try {
            for (auto& p : make_contrast_pairs(t, clean, tok, PairOptions{render, cfg.flips})) {
              pool.push_back(std::move(p));
            }
          } catch (const NoAnswerFlippingCorruption&) {
          }
        }
      }
      rc.pool = static_cast<int>(pool.size());
      if (rc.templates == 0) continue;

      std::vector<std::size_t> keep;
      if (cfg.exhaustive) {
        for (std::size_t i = 0; i < pool.size(); ++i) keep.push_back(i);
      } else {
        auto it = cfg.quotas.find({rule, depth});
        rc.quota = it == cfg.quotas.end() ? 0 : it->second;
        if (rc.quota > rc.pool) {
          rep.warnings.push_back(std::string(to_string(rule)) + "/" + std::string(to_string(depth)) + ": quota " +
                                 std::to_string(rc.quota) + " exceeds the " + std::to_string(rc.pool) +
                                 " valid pairs; emitting all");
        }
        Rng rng(mix_seed(cfg.seed, std::string(to_string(rule)) + "/" + std::string(to_string(depth))));
        keep = rng.sample_indices(pool.size(), static_cast<std::size_t>(std::max(rc.quota, 0)));
        std::sort(keep.begin(), keep.end());
      }
      if (rc.pool == 0) {
        rep.warnings.push_back(std::string(to_string(rule)) + "/" + std::string(to_string(depth)) +
                               ": no answer-flipping corruption exists (tautology or contradiction); 0 pairs");
      }
      for (std::size_t i : keep) {
        pool[i].seed = cfg.seed;
        corpus.pairs.push_back(std::move(pool[i]));
      }
      rc.emitted = static_cast<int>(keep.size());
      (depth == Depth::OneHop ? rep.one_hop : rep.two_hop) += rc.emitted;
      rep.counts.push_back(rc);
    }
  }
  return corpus;
}

}  // namespace plmi
