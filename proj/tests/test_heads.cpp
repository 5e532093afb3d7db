#include <gtest/gtest.h>

#include "oracles.hpp"
#include "plmi/heads.hpp"
#include "plmi/toy_model.hpp"

using namespace plmi;

namespace {

std::vector<TokenAnnotation> annotations_of(const std::string& id, const Assignment& a) {
  WordTokenizer tok;
  for (const auto& t : build_templates(TemplateSet::Extended)) {
    if (t.id == id) return annotate_tokens(instantiate_rule(t, a), tok);
  }
  throw std::runtime_error(id);
}

std::vector<std::vector<TokenAnnotation>> prompts() {
  return {annotations_of("de_morgan.one_hop.t0", {{'A', true}, {'B', false}}),
          annotations_of("distributive.one_hop.t1", {{'A', true}, {'B', false}, {'C', true}}),
          annotations_of("de_morgan.two_hop.t0", {{'A', true}, {'B', false}, {'D', true}})};
}

}  // namespace

TEST(Heads, ConstructionsGetExactlyTheirLabel) {
  for (const auto& ann : prompts()) {
    for (HeadLabel l : kAllHeadLabels) {
      const auto m = oracle::construct(l, ann);
      for (int q = 0; q < m.size; ++q) {
        double s = 0;
        for (int k = 0; k < m.size; ++k) s += m.at(q, k);
        ASSERT_NEAR(s, 1.0, 1e-12);
      }
      const auto h = classify_head(m, ann);
      EXPECT_EQ(h.labels, std::vector<HeadLabel>{l}) << to_string(l) << " on " << ann.size() << " tokens";
    }
  }
}

TEST(Heads, ScoresMatchBruteForceMassSums) {
  auto model = build_toy_model(ToyConfig{.seed = 8, .n_layers = 4, .n_heads = 4, .d_model = 16});
  WordTokenizer tok;
  for (const auto& t : build_templates(TemplateSet::Table)) {
    Assignment a;
    for (char v : t.free_variables()) a[v] = v != 'B';
    const Sample s = instantiate_rule(t, a);
    const auto ann = annotate_tokens(s, tok);
    for (const auto& m : model->attention_patterns(s.prompt)) {
      const auto h = classify_head(m, ann);
      const auto want = oracle::brute_scores(m, ann);
      for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(h.scores[i], want[i], 1e-9) << t.id << " label " << i;
    }
  }
}

TEST(Heads, ThresholdMonotonicity) {
  auto model = build_toy_model(ToyConfig{.seed = 2, .n_layers = 4, .n_heads = 4, .d_model = 16});
  const auto anns = prompts();
  std::vector<std::pair<AttentionMatrix, const std::vector<TokenAnnotation>*>> mats;
  for (const auto& ann : anns) {
    for (HeadLabel l : kAllHeadLabels) mats.push_back({oracle::construct(l, ann), &ann});
  }
  WordTokenizer tok;
  const auto ts = build_templates(TemplateSet::Table);
  const auto& t = ts.front();
  const Sample s = instantiate_rule(t, {{'A', true}});
  const auto ann = annotate_tokens(s, tok);
  for (const auto& m : model->attention_patterns(s.prompt)) mats.push_back({m, &ann});

  for (HeadLabel l : kAllHeadLabels) {
    for (const auto& [m, a] : mats) {
      bool prev = true;
      for (int k = 0; k <= 20; ++k) {
        Thresholds th;
        th[l] = k / 20.0;
        const bool on = classify_head(m, *a, th).has(l);
        EXPECT_LE(on, prev) << to_string(l) << " at " << k;
        prev = on;
      }
    }
  }
}

TEST(Heads, SideConditions) {
  const auto ann = prompts()[0];
  auto self = oracle::construct(HeadLabel::SelfProcessing, ann);
  // Move off-diagonal mass onto the row's previous token.
  for (int q = 2; q < self.size; ++q) {
    self.at(q, q) = 0.6;
    self.at(q, q - 1) = 0.3;
  }
  const auto h = classify_head(self, ann);
  EXPECT_GE(h.score(HeadLabel::SelfProcessing), 0.6);
  EXPECT_GT(h.self_off_diagonal, kSelfOffDiagonalMax);
  EXPECT_FALSE(h.has(HeadLabel::SelfProcessing));
}


TEST(Heads, SizeMismatchThrows) {
  const auto ann = prompts()[0];
  const auto m = oracle::construct(HeadLabel::Idle, prompts()[1]);
  EXPECT_THROW(classify_head(m, ann), Error);
}

TEST(Heads, CountsAverageOverPrompts) {
  auto model = build_toy_model(ToyConfig{.seed = 2, .n_layers = 4, .n_heads = 4, .d_model = 16});
  CorpusConfig cfg;
  cfg.rules = {RuleCategory::DeMorgan};
  cfg.depths = {Depth::OneHop};
  const auto pairs = generate_corpus(cfg, model->tokenizer()).pairs;
  const auto c = count_heads_per_layer(pairs, *model);
  EXPECT_EQ(c.n_prompts, static_cast<int>(pairs.size()));
  ASSERT_EQ(c.mean.size(), 4u);
  double manual = 0;
  for (const auto& p : pairs) {
    for (const auto& h : classify_prompt(p.clean.prompt, p.annotations, *model)) {
      if (h.layer == 0) manual += h.has(HeadLabel::Idle);
    }
  }
  EXPECT_NEAR(c.mean[0][static_cast<std::size_t>(HeadLabel::Idle)], manual / pairs.size(), 1e-12);
  for (const auto& row : c.mean) {
    for (double v : row) EXPECT_LE(v, 4.0);
  }
  EXPECT_THROW(count_heads_per_layer(std::span<const ContrastPair>{}, *model), Error);
}

TEST(Heads, LabelNames) {
  for (HeadLabel l : kAllHeadLabels) EXPECT_EQ(head_label_from_string(to_string(l)), l);
  EXPECT_THROW(head_label_from_string("mover"), ConfigError);
}
