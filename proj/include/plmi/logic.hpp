#pragma once

// Propositional formulas over single-letter variables: lexing, parsing,
// evaluation, truth-table enumeration and brute-force equivalence.
//
// Grammar (left-associative binary operators, negation binds tightest):
//
//   expr    := and_expr ( ("or" | "∨") and_expr )*
//   and_expr:= unary ( ("and" | "∧") unary )*
//   unary   := ("¬" | "not") unary | primary
//   primary := constant | variable | "(" expr ")"
//   constant:= "True" | "False" | "T" | "F" | "⊤" | "⊥"

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "plmi/errors.hpp"

namespace plmi {

enum class ValueStyle { Long, Short };

inline std::string_view to_string(ValueStyle s) { return s == ValueStyle::Long ? "long" : "short"; }

inline ValueStyle value_style_from_string(std::string_view s) {
  if (s == "long" || s == "Long") return ValueStyle::Long;
  if (s == "short" || s == "Short") return ValueStyle::Short;
  throw ConfigError("unknown value style '" + std::string(s) + "' (expected long|short)");
}

inline std::string render_value(bool v, ValueStyle style) {
  if (style == ValueStyle::Long) return v ? "True" : "False";
  return v ? "T" : "F";
}

enum class NegationStyle { Glyph, Word };

inline std::string_view to_string(NegationStyle n) { return n == NegationStyle::Glyph ? "glyph" : "word"; }

inline NegationStyle negation_style_from_string(std::string_view s) {
  if (s == "glyph") return NegationStyle::Glyph;
  if (s == "word") return NegationStyle::Word;
  throw ConfigError("unknown negation style '" + std::string(s) + "' (expected glyph|word)");
}

struct Expr {
  enum class Kind { Const, Var, Not, And, Or };

  Kind kind = Kind::Const;
  bool value = false;  // Const only
  char name = 0;       // Var only
  std::shared_ptr<const Expr> lhs;  // Not: operand; And/Or: left
  std::shared_ptr<const Expr> rhs;  // And/Or: right

  static Expr constant(bool v) {
    Expr e;
    e.kind = Kind::Const;
    e.value = v;
    return e;
  }
  static Expr var(char n) {
    Expr e;
    e.kind = Kind::Var;
    e.name = n;
    return e;
  }
  static Expr negate(Expr x) {
    Expr e;
    e.kind = Kind::Not;
    e.lhs = std::make_shared<const Expr>(std::move(x));
    return e;
  }
  static Expr conj(Expr a, Expr b) { return binary(Kind::And, std::move(a), std::move(b)); }
  static Expr disj(Expr a, Expr b) { return binary(Kind::Or, std::move(a), std::move(b)); }

  const Expr& child() const { return *lhs; }
  const Expr& left() const { return *lhs; }
  const Expr& right() const { return *rhs; }

  friend bool operator==(const Expr& a, const Expr& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
      case Kind::Const: return a.value == b.value;
      case Kind::Var: return a.name == b.name;
      case Kind::Not: return *a.lhs == *b.lhs;
      case Kind::And:
      case Kind::Or: return *a.lhs == *b.lhs && *a.rhs == *b.rhs;
    }
    return false;
  }

 private:
  static Expr binary(Kind k, Expr a, Expr b) {
    Expr e;
    e.kind = k;
    e.lhs = std::make_shared<const Expr>(std::move(a));
    e.rhs = std::make_shared<const Expr>(std::move(b));
    return e;
  }
};

using Assignment = std::map<char, bool>;

inline constexpr std::string_view kDefaultAlphabet = "ABCD";

// ---------------------------------------------------------------------------
// Lexing

enum class LexemeKind { Open, Close, Not, And, Or, Const, Var };

struct Lexeme {
  LexemeKind kind;
  std::size_t offset;  // byte offset into the source text
  std::size_t length;  // byte length
  bool value = false;  // Const
  char name = 0;       // Var
};

namespace detail {

inline bool starts_with_at(std::string_view s, std::size_t i, std::string_view p) {
  return s.substr(i, p.size()) == p;
}

inline bool is_ascii_alpha(char c) { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z'); }

}  // namespace detail

inline std::vector<Lexeme> lex_expr(std::string_view text, std::string_view alphabet = kDefaultAlphabet) {
  std::vector<Lexeme> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++i;
      continue;
    }
    if (c == '(') {
      out.push_back({LexemeKind::Open, i, 1});
      ++i;
      continue;
    }
    if (c == ')') {
      out.push_back({LexemeKind::Close, i, 1});
      ++i;
      continue;
    }
    if (detail::starts_with_at(text, i, "¬")) {
      out.push_back({LexemeKind::Not, i, std::string_view("¬").size()});
      i += std::string_view("¬").size();
      continue;
    }
    if (detail::starts_with_at(text, i, "∧")) {
      out.push_back({LexemeKind::And, i, std::string_view("∧").size()});
      i += std::string_view("∧").size();
      continue;
    }
    if (detail::starts_with_at(text, i, "∨")) {
      out.push_back({LexemeKind::Or, i, std::string_view("∨").size()});
      i += std::string_view("∨").size();
      continue;
    }
    if (detail::starts_with_at(text, i, "⊤") || detail::starts_with_at(text, i, "⊥")) {
      const bool v = detail::starts_with_at(text, i, "⊤");
      Lexeme l{LexemeKind::Const, i, std::string_view("⊤").size()};
      l.value = v;
      out.push_back(l);
      i += l.length;
      continue;
    }
    if (detail::is_ascii_alpha(c)) {
      std::size_t j = i;
      while (j < text.size() && detail::is_ascii_alpha(text[j])) ++j;
      const std::string_view word = text.substr(i, j - i);
      Lexeme l{LexemeKind::Var, i, j - i};
      if (word == "and") {
        l.kind = LexemeKind::And;
      } else if (word == "or") {
        l.kind = LexemeKind::Or;
      } else if (word == "not") {
        l.kind = LexemeKind::Not;
      } else if (word == "True" || word == "T") {
        l.kind = LexemeKind::Const;
        l.value = true;
      } else if (word == "False" || word == "F") {
        l.kind = LexemeKind::Const;
        l.value = false;
      } else if (word.size() == 1 && alphabet.find(word[0]) != std::string_view::npos) {
        l.name = word[0];
      } else {
        throw ParseError("unknown token '" + std::string(word) + "'", i);
      }
      out.push_back(l);
      i = j;
      continue;
    }
    throw ParseError("unknown token '" + std::string(1, c) + "'", i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

class Parser {
 public:
  Parser(std::string_view text, std::vector<Lexeme> lexemes)
      : text_(text), lex_(std::move(lexemes)) {}

  Expr parse() {
    Expr e = parse_or();
    if (pos_ != lex_.size()) throw ParseError("unexpected token", lex_[pos_].offset);
    return e;
  }

 private:
  std::size_t here() const { return pos_ < lex_.size() ? lex_[pos_].offset : text_.size(); }
  bool at(LexemeKind k) const { return pos_ < lex_.size() && lex_[pos_].kind == k; }

  Expr parse_or() {
    Expr e = parse_and();
    while (at(LexemeKind::Or)) {
      ++pos_;
      e = Expr::disj(std::move(e), parse_and());
    }
    return e;
  }

  Expr parse_and() {
    Expr e = parse_unary();
    while (at(LexemeKind::And)) {
      ++pos_;
      e = Expr::conj(std::move(e), parse_unary());
    }
    return e;
  }

  Expr parse_unary() {
    if (at(LexemeKind::Not)) {
      ++pos_;
      return Expr::negate(parse_unary());
    }
    return parse_primary();
  }

  Expr parse_primary() {
    if (pos_ >= lex_.size()) throw ParseError("unexpected end of expression", text_.size());
    const Lexeme& l = lex_[pos_];
    switch (l.kind) {
      case LexemeKind::Const:
        ++pos_;
        return Expr::constant(l.value);
      case LexemeKind::Var:
        ++pos_;
        return Expr::var(l.name);
      case LexemeKind::Open: {
        ++pos_;
        Expr e = parse_or();
        if (!at(LexemeKind::Close)) throw ParseError("expected ')'", here());
        ++pos_;
        return e;
      }
      default:
        throw ParseError("expected operand", l.offset);
    }
  }

  std::string_view text_;
  std::vector<Lexeme> lex_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Expr parse_expr(std::string_view text, std::string_view alphabet = kDefaultAlphabet) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw ParseError("empty expression", 0);
  }
  return detail::Parser(text, lex_expr(text, alphabet)).parse();
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline int precedence(Expr::Kind k) {
  switch (k) {
    case Expr::Kind::Or: return 1;
    case Expr::Kind::And: return 2;
    case Expr::Kind::Not: return 3;
    default: return 4;
  }
}

inline void render_into(const Expr& e, ValueStyle style, NegationStyle neg, std::string& out) {
  switch (e.kind) {
    case Expr::Kind::Const:
      out += render_value(e.value, style);
      return;
    case Expr::Kind::Var:
      out += e.name;
      return;
    case Expr::Kind::Not: {
      out += neg == NegationStyle::Glyph ? "¬" : "not ";
      const bool paren = precedence(e.child().kind) < precedence(Expr::Kind::Not);
      if (paren) out += '(';
      render_into(e.child(), style, neg, out);
      if (paren) out += ')';
      return;
    }
    case Expr::Kind::And:
    case Expr::Kind::Or: {
      const int p = precedence(e.kind);
      const bool lp = precedence(e.left().kind) < p;
      // Right operand of equal precedence needs parentheses to keep left association.
      const bool rp = precedence(e.right().kind) <= p;
      if (lp) out += '(';
      render_into(e.left(), style, neg, out);
      if (lp) out += ')';
      out += e.kind == Expr::Kind::And ? " and " : " or ";
      if (rp) out += '(';
      render_into(e.right(), style, neg, out);
      if (rp) out += ')';
      return;
    }
  }
}

}  // namespace detail

inline std::string render_expr(const Expr& e, ValueStyle style = ValueStyle::Long,
                               NegationStyle neg = NegationStyle::Glyph) {
  std::string out;
  detail::render_into(e, style, neg, out);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

inline bool eval_expr(const Expr& e, const Assignment& a) {
  switch (e.kind) {
    case Expr::Kind::Const: return e.value;
    case Expr::Kind::Var: {
      auto it = a.find(e.name);
      if (it == a.end()) throw UnboundVariable(e.name);
      return it->second;
    }
    case Expr::Kind::Not: return !eval_expr(e.child(), a);
    case Expr::Kind::And: return eval_expr(e.left(), a) && eval_expr(e.right(), a);
    case Expr::Kind::Or: return eval_expr(e.left(), a) || eval_expr(e.right(), a);
  }
  return false;
}

// Sorted, distinct.
inline std::string free_variables(const Expr& e) {
  std::string vars;
  auto walk = [&](auto&& self, const Expr& x) -> void {
    switch (x.kind) {
      case Expr::Kind::Const: return;
      case Expr::Kind::Var:
        if (vars.find(x.name) == std::string::npos) vars += x.name;
        return;
      case Expr::Kind::Not: self(self, x.child()); return;
      default:
        self(self, x.left());
        self(self, x.right());
    }
  };
  walk(walk, e);
  std::sort(vars.begin(), vars.end());
  return vars;
}

// All 2^n assignments, True before False, leftmost variable most significant.
inline std::vector<Assignment> enumerate_assignments(std::string_view vars) {
  if (vars.empty()) throw Error("enumerate_assignments: empty variable list");
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (vars.find(vars[i], i + 1) != std::string_view::npos) throw DuplicateVariable(vars[i]);
  }
  if (vars.size() > 20) throw Error("enumerate_assignments: too many variables");
  const std::size_t n = vars.size();
  std::vector<Assignment> out;
  out.reserve(std::size_t{1} << n);
  for (std::uint32_t i = 0; i < (1u << n); ++i) {
    Assignment a;
    for (std::size_t k = 0; k < n; ++k) a[vars[k]] = ((i >> (n - 1 - k)) & 1u) == 0;
    out.push_back(std::move(a));
  }
  return out;
}

inline bool equivalence_check(const Expr& e1, const Expr& e2) {
  std::string vars = free_variables(e1) + free_variables(e2);
  std::sort(vars.begin(), vars.end());
  vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
  if (vars.empty()) return eval_expr(e1, {}) == eval_expr(e2, {});
  for (const auto& a : enumerate_assignments(vars)) {
    if (eval_expr(e1, a) != eval_expr(e2, a)) return false;
  }
  return true;
}

// The eleven Boolean-algebra laws, each with its dual where one exists.
struct Law {
  std::string_view name;
  std::string_view lhs;
  std::string_view rhs;
};

inline constexpr std::array<Law, 19> kBooleanLaws = {{
    {"identity", "A and T", "A"},
    {"identity", "A or F", "A"},
    {"domination", "A or T", "T"},
    {"domination", "A and F", "F"},
    {"idempotent", "A and A", "A"},
    {"idempotent", "A or A", "A"},
    {"double_negation", "¬(¬A)", "A"},
    {"excluded_middle", "A or ¬A", "T"},
    {"contradiction", "A and ¬A", "F"},
    {"commutative", "A and B", "B and A"},
    {"commutative", "A or B", "B or A"},
    {"associative", "(A and B) and C", "A and (B and C)"},
    {"associative", "(A or B) or C", "A or (B or C)"},
    {"distributive", "A and (B or C)", "(A and B) or (A and C)"},
    {"distributive", "A or (B and C)", "(A or B) and (A or C)"},
    {"de_morgan", "¬(A and B)", "¬A or ¬B"},
    {"de_morgan", "¬(A or B)", "¬A and ¬B"},
    {"absorption", "A and (A or B)", "A"},
    {"absorption", "A or (A and B)", "A"},
}};

}  // namespace plmi
