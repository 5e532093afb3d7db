#include <gtest/gtest.h>

#include "plmi/toy_model.hpp"

using namespace plmi;

namespace {
const std::string kPrompt = "A is True, B is False, (¬A or ¬B) is";
}

TEST(ToyModel, DeterministicPerSeed) {
  auto a = build_toy_model(1);
  auto b = build_toy_model(1);
  auto c = build_toy_model(2);
  EXPECT_EQ(a->run(kPrompt), b->run(kPrompt));
  EXPECT_NE(a->run(kPrompt), c->run(kPrompt));
  EXPECT_EQ(a->run(kPrompt).size(), static_cast<std::size_t>(a->spec().vocab_size));
}

TEST(ToyModel, EmptyInterventionMatchesPlainRun) {
  auto m = build_toy_model(3);
  EXPECT_EQ(m->run_with_intervention(kPrompt, {}, nullptr), m->run(kPrompt));
}

TEST(ToyModel, PatchingFromOwnCacheIsIdentity) {
  auto m = build_toy_model(3);
  const int T = m->prompt_length(kPrompt);
  const auto sites = all_sites(m->spec(), T);
  const auto cap = m->run_with_capture(kPrompt, sites);
  EXPECT_EQ(cap.cache.size(), sites.size());
  for (const auto& s : {ActivationSite::resid_pre(2, 5), ActivationSite::head_output(1, 1), ActivationSite::mlp_out(3, 15)}) {
    const Intervention iv{s, InterventionMode::ReplaceFromCache};
    const auto out = m->run_with_intervention(kPrompt, std::span(&iv, 1), &cap.cache);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], cap.logits[i], 1e-12);
  }
}

TEST(ToyModel, CapturedWidths) {
  auto m = build_toy_model(ToyConfig{.seed = 4, .n_layers = 3, .n_heads = 4, .d_model = 16});
  const int T = m->prompt_length(kPrompt);
  const auto cap = m->run_with_capture(kPrompt, all_sites(m->spec(), T));
  for (const auto& [site, v] : cap.cache) EXPECT_EQ(v.size(), site_width(m->spec(), site, T)) << site.str();
  EXPECT_EQ(m->spec().d_head, 4);
}

TEST(ToyModel, ZeroAblationChangesOutput) {
  auto m = build_toy_model(3);
  const Intervention iv{ActivationSite::mlp_out(0, 15), InterventionMode::ZeroAblate};
  EXPECT_NE(m->run_with_intervention(kPrompt, std::span(&iv, 1), nullptr), m->run(kPrompt));
}

TEST(ToyModel, CausalMasking) {
  auto m = build_toy_model(3);
  const int T = m->prompt_length(kPrompt);
  const auto a = m->run_with_capture(kPrompt, all_sites(m->spec(), SiteKind::ResidPre, T));
  const std::string other = "A is True, B is True, (¬A or ¬B) is";
  const auto b = m->run_with_capture(other, all_sites(m->spec(), SiteKind::ResidPre, T));
  for (int l = 0; l < m->spec().n_layers; ++l) {
    for (int p = 0; p < 6; ++p) EXPECT_EQ(a.cache.at(ActivationSite::resid_pre(l, p)), b.cache.at(ActivationSite::resid_pre(l, p)));
  }
  EXPECT_NE(a.cache.at(ActivationSite::resid_pre(0, 6)), b.cache.at(ActivationSite::resid_pre(0, 6)));
}

TEST(ToyModel, AttentionRowsAreCausalDistributions) {
  auto m = build_toy_model(5);
  const auto pats = m->attention_patterns(kPrompt);
  ASSERT_EQ(pats.size(), static_cast<std::size_t>(m->spec().n_layers * m->spec().n_heads));
  for (const auto& a : pats) {
    for (int q = 0; q < a.size; ++q) {
      double s = 0;
      for (int k = 0; k < a.size; ++k) {
        if (k > q) {
          EXPECT_EQ(a.at(q, k), 0.0);
        }
        s += a.at(q, k);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(ToyModel, SiteErrors) {
  auto m = build_toy_model(3);
  const ActivationCache empty;
  const Intervention bad_layer{ActivationSite::resid_pre(9, 0), InterventionMode::ZeroAblate};
  EXPECT_THROW(m->run_with_intervention(kPrompt, std::span(&bad_layer, 1), nullptr), SiteError);
  const Intervention missing{ActivationSite::resid_pre(0, 0), InterventionMode::ReplaceFromCache};
  EXPECT_THROW(m->run_with_intervention(kPrompt, std::span(&missing, 1), &empty), SiteError);
  EXPECT_THROW(m->run_with_capture(kPrompt, std::vector{ActivationSite::head_output(0, 7)}), SiteError);
}

TEST(ToyModel, Float32CloseToFloat64) {
  ToyConfig c;
  c.seed = 6;
  auto d = build_toy_model(c);
  c.precision = "float32";
  auto f = build_toy_model(c);
  EXPECT_EQ(f->spec().precision, "float32");
  const auto a = d->run(kPrompt), b = f->run(kPrompt);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-3);
}

TEST(ToyModel, ContextLimit) {
  ToyConfig c;
  c.context_limit = 8;
  auto m = build_toy_model(c);
  EXPECT_THROW(m->run(kPrompt), Error);
}
