#pragma once

// Keeps pairs the model answers correctly on both prompts, judged by a
// restricted argmax over the two answer tokens at the final position.

#include <map>
#include <string>
#include <vector>

#include "plmi/dataset.hpp"
#include "plmi/errors.hpp"
#include "plmi/model.hpp"

namespace plmi {

struct RetentionRate {
  int total = 0;
  int retained = 0;

  double rate() const { return total == 0 ? 0.0 : static_cast<double>(retained) / total; }
};

struct RetentionReport {
  RetentionRate overall;
  std::map<Depth, RetentionRate> by_depth;
  std::map<RuleCategory, RetentionRate> by_rule;
};

struct FilterResult {
  std::vector<ContrastPair> retained;
  RetentionReport report;
};

// Strictly greater: a tie counts as a wrong prediction.
inline bool predicts(std::span<const double> logits, const AnswerTokens& answers, bool expected) {
  const double t = logits[static_cast<std::size_t>(answers.true_id)];
  const double f = logits[static_cast<std::size_t>(answers.false_id)];
  return expected ? t > f : f > t;
}

inline FilterResult filter_by_model(const std::vector<ContrastPair>& pairs, Model& model, const AnswerTokens& answers) {
  FilterResult out;
  for (Depth d : {Depth::OneHop, Depth::TwoHop}) out.report.by_depth[d];
  for (const auto& p : pairs) {
    bool ok = false;
    try {
      ok = predicts(model.run(p.clean.prompt), answers, p.clean.answer) &&
           predicts(model.run(p.corrupt.prompt), answers, p.corrupt.answer);
    } catch (const Error& e) {
      throw Error(p.id + ": " + e.what());
    }
    for (RetentionRate* r : {&out.report.overall, &out.report.by_depth[p.depth], &out.report.by_rule[p.rule]}) {
      ++r->total;
      if (ok) ++r->retained;
    }
    if (ok) out.retained.push_back(p);
  }
  return out;
}

}  // namespace plmi
