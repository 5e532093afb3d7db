#include <gtest/gtest.h>

#include "oracles.hpp"
#include "plmi/filter.hpp"
#include "plmi/patching.hpp"
#include "plmi/toy_model.hpp"

using namespace plmi;

namespace {

struct Fixture {
  std::unique_ptr<Model> model = build_toy_model(3);
  ContrastPair pair;
  AnswerTokens ans;
  PairBaseline base;

  Fixture() {
    const auto ts = build_templates(TemplateSet::Table);
    for (const auto& t : ts) {
      if (t.id != "de_morgan.one_hop.t0") continue;
      pair = make_contrast_pairs(t, instantiate_rule(t, {{'A', true}, {'B', false}}), model->tokenizer()).front();
    }
    ans = answer_token_ids(model->tokenizer(), pair.style);
    BaselineOptions opt;
    opt.force = true;
    base = run_pair_baseline(pair, *model, ans, opt);
  }
};

int flipped_position(const ContrastPair& p, const Tokenizer& tok) {
  const auto d = differing_positions(tok.encode(p.clean.prompt), tok.encode(p.corrupt.prompt));
  return d.front();
}

}  // namespace

TEST(Patching, LogitDifferenceSign) {
  AnswerTokens a{7, 8, " True", " False"};
  std::vector<double> logits(10, 0.0);
  logits[7] = 2.5;
  logits[8] = 1.0;
  EXPECT_DOUBLE_EQ(logit_difference(logits, a, true, false), 1.5);
  EXPECT_DOUBLE_EQ(logit_difference(logits, a, false, true), -1.5);
}

TEST(Patching, ResidualSweepMatchesBruteForce) {
  Fixture f;
  const SweepGrid g = sweep_residual(f.pair, *f.model, f.ans, f.base);
  const auto want = oracle::brute_sweep(f.pair, *f.model, f.ans, SiteKind::ResidPre, InterventionMode::ReplaceFromCache);
  ASSERT_EQ(g.dld.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(g.dld[i], want[i], 1e-9);
  EXPECT_EQ(g.col_labels.size(), 16u);
  EXPECT_EQ(g.col_labels[2], " True");
}

TEST(Patching, HeadAndMlpSweepsMatchBruteForce) {
  Fixture f;
  const SweepGrid h = sweep_heads(f.pair, *f.model, f.ans, f.base);
  const auto hw = oracle::brute_sweep(f.pair, *f.model, f.ans, SiteKind::HeadOutput, InterventionMode::ReplaceFromCache);
  for (std::size_t i = 0; i < hw.size(); ++i) EXPECT_NEAR(h.dld[i], hw[i], 1e-9);
  EXPECT_EQ(h.col_labels, (std::vector<std::string>{"H0", "H1"}));
  for (auto mode : {InterventionMode::ReplaceFromCache, InterventionMode::ZeroAblate}) {
    const SweepGrid m = sweep_mlp(f.pair, *f.model, f.ans, f.base, mode);
    const auto mw = oracle::brute_sweep(f.pair, *f.model, f.ans, SiteKind::MlpOut, mode);
    for (std::size_t i = 0; i < mw.size(); ++i) EXPECT_NEAR(m.dld[i], mw[i], 1e-9);
  }
}

TEST(Patching, LayerZeroRestoresCleanRun) {
  Fixture f;
  const SweepGrid g = sweep_residual(f.pair, *f.model, f.ans, f.base);
  const int p = flipped_position(f.pair, f.model->tokenizer());
  EXPECT_NEAR(g.cell(0, p).ld_patched, f.base.ld_clean, 1e-9);
  for (int c = 0; c < p; ++c) EXPECT_NEAR(g.at(0, c), 0.0, 1e-12);
}

TEST(Patching, DldIdentity) {
  Fixture f;
  const SweepGrid g = sweep_mlp(f.pair, *f.model, f.ans, f.base, InterventionMode::ZeroAblate);
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      const auto cell = g.cell(r, c);
      EXPECT_EQ(cell.dld, cell.ld_patched - cell.ld_baseline);
    }
  }
}

TEST(Patching, UnforcedBaselineRejectsWrongPredictions) {
  Fixture f;
  const bool correct = f.base.ld_clean > 0 && f.base.ld_baseline < 0;
  if (correct) {
    EXPECT_NO_THROW(run_pair_baseline(f.pair, *f.model, f.ans));
  } else {
    EXPECT_THROW(run_pair_baseline(f.pair, *f.model, f.ans), Error);
    EXPECT_FALSE(f.base.warnings.empty());
  }
}

TEST(Patching, NormalizePerLayer) {
  SweepGrid g;
  g.rows = 2;
  g.cols = 3;
  g.dld = {2, -4, 1, 0, 0, 0};
  g.ld_patched.assign(6, 0);
  const SweepGrid n = normalize_per_layer(g);
  EXPECT_TRUE(n.normalized);
  EXPECT_EQ(std::vector<double>(n.dld.begin(), n.dld.begin() + 3), (std::vector<double>{0.5, -1, 0.25}));
  EXPECT_EQ(n.at(1, 2), 0.0);
}

TEST(Patching, RelativeChange) {
  EXPECT_EQ(ablation_metric(2.0, 1.0, AblationMetric::RLD), 0.5);
  EXPECT_EQ(ablation_metric(-2.0, -3.0, AblationMetric::RLD), 0.5);
  EXPECT_EQ(ablation_metric(2.0, 1.0, AblationMetric::DLD), -1.0);
  EXPECT_THROW(ablation_metric(1e-8, 1.0, AblationMetric::RLD), DegenerateBaseline);
  EXPECT_NO_THROW(ablation_metric(1e-8, 1.0, AblationMetric::DLD));
}

TEST(Patching, RegionAblationTargetsMlpOut) {
  Fixture f;
  const auto t = ablation_target(f.pair);
  const auto one = region_ablation(t, Region::Expression, 2, AblationScope::SingleLayer, 4);
  ASSERT_EQ(one.size(), 7u);
  for (const auto& iv : one) {
    EXPECT_EQ(iv.site.kind, SiteKind::MlpOut);
    EXPECT_EQ(iv.site.layer, 2);
    EXPECT_EQ(iv.mode, InterventionMode::ZeroAblate);
  }
  EXPECT_EQ(region_ablation(t, Region::Query, 0, AblationScope::AllLayers, 4).size(), 4u);
}

TEST(Patching, AblationProfileMatchesSingleCalls) {
  Fixture f;
  const auto t = ablation_target(f.pair);
  const auto prof = ablation_profile(t, *f.model, f.ans, Region::Facts, AblationMetric::DLD);
  ASSERT_EQ(prof.ld_after.size(), 4u);
  for (int l = 0; l < 4; ++l) {
    const auto r = ablate_region(t, *f.model, f.ans, Region::Facts, l, AblationMetric::DLD);
    EXPECT_EQ(r.ld_after, prof.ld_after[l]);
    EXPECT_EQ(*prof.value[l], r.value);
  }
  EXPECT_THROW(ablate_region(t, *f.model, f.ans, Region::Facts, 4, AblationMetric::DLD), SiteError);
}

TEST(Patching, MisalignedPairThrows) {
  Fixture f;
  ContrastPair bad = f.pair;
  bad.corrupt.prompt = "A is True, B is False, (¬A or ¬B or A) is";
  EXPECT_THROW(run_pair_baseline(bad, *f.model, f.ans), TokenizationMisaligned);
}

TEST(Filter, RestrictedArgmaxTieIsWrong) {
  AnswerTokens a{0, 1, "", ""};
  std::vector<double> tie{1.0, 1.0, 99.0};
  EXPECT_FALSE(predicts(tie, a, true));
  EXPECT_FALSE(predicts(tie, a, false));
  std::vector<double> t{2.0, 1.0, 99.0};
  EXPECT_TRUE(predicts(t, a, true));
}

TEST(Filter, ReportCountsEveryPair) {
  auto m = build_toy_model(10);
  CorpusConfig cfg;
  cfg.rules = {RuleCategory::DeMorgan, RuleCategory::Commutative};
  const Corpus c = generate_corpus(cfg, m->tokenizer());
  const auto r = filter_by_model(c.pairs, *m, answer_token_ids(m->tokenizer(), ValueStyle::Long));
  EXPECT_EQ(r.report.overall.total, static_cast<int>(c.pairs.size()));
  EXPECT_EQ(r.report.overall.retained, static_cast<int>(r.retained.size()));
  int by_depth = 0;
  for (const auto& [d, rate] : r.report.by_depth) by_depth += rate.total;
  EXPECT_EQ(by_depth, r.report.overall.total);
}
