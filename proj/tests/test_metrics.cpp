#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "plmi/metrics.hpp"

using namespace plmi;

TEST(Groups, ProportionalSplits) {
  const auto six = make_layer_groups(6, "proportional");
  EXPECT_EQ(six, (std::vector<LayerGroup>{{"Early", 0, 1}, {"Middle", 2, 3}, {"Late", 4, 5}}));
  const auto four = make_layer_groups(4, "proportional");
  EXPECT_EQ(four, (std::vector<LayerGroup>{{"Early", 0, 0}, {"Middle", 1, 1}, {"Late", 2, 3}}));
}

TEST(Groups, ThirtySixLayers) {
  const auto g = make_layer_groups(36, "paper36");
  EXPECT_EQ(g, (std::vector<LayerGroup>{{"Early", 0, 13}, {"Middle", 14, 23}, {"Late", 24, 35}}));
  EXPECT_EQ(g, make_layer_groups(36, "proportional"));
  EXPECT_THROW(make_layer_groups(4, "paper36"), ConfigError);
  EXPECT_THROW(make_layer_groups(2, "proportional"), ConfigError);
  EXPECT_THROW(make_layer_groups(12, "thirds"), ConfigError);
}

TEST(Groups, CoverEveryLayerOnce) {
  for (int n = 3; n <= 80; ++n) {
    const auto g = make_layer_groups(n, "proportional");
    EXPECT_EQ(g[0].lo, 0);
    EXPECT_EQ(g[2].hi, n - 1);
    EXPECT_EQ(g[1].lo, g[0].hi + 1);
    EXPECT_EQ(g[2].lo, g[1].hi + 1);
    for (const auto& x : g) EXPECT_GE(x.size(), 1) << n;
  }
}

TEST(Aggregate, MatchesBruteForce) {
  std::mt19937_64 g(21);
  for (int trial = 0; trial < 10; ++trial) {
    const int rows = 3 + static_cast<int>(g() % 8);
    const auto groups = make_layer_groups(rows, "proportional");
    std::vector<SweepGrid> grids;
    std::vector<std::vector<TokenAnnotation>> anns;
    for (int s = 0; s < 1 + static_cast<int>(g() % 6); ++s) {
      const int cols = 3 + static_cast<int>(g() % 15);
      grids.push_back(oracle::random_grid(g, rows, cols));
      anns.push_back(oracle::random_annotations(g, cols));
    }
    const auto t = mean_abs_dld_by_category(grids, anns, groups);
    const auto want = oracle::brute_aggregate(grids, anns, groups);
    EXPECT_EQ(t.rows.size(), want.size());
    for (const auto& r : t.rows) {
      const auto& w = want.at({static_cast<int>(r.category), r.group});
      EXPECT_NEAR(r.mean_abs_dld, w.mean, 1e-12);
      EXPECT_EQ(r.n_samples, w.n_samples);
      ASSERT_EQ(r.sem.has_value(), w.sem.has_value());
      if (r.sem) {
        EXPECT_NEAR(*r.sem, *w.sem, 1e-12);
      }
    }
  }
}

TEST(Aggregate, NestedNotPooledMean) {
  // One sample with two query-like tokens, one with one: nested mean weights samples equally.
  SweepGrid a;
  a.rows = 3;
  a.cols = 2;
  a.dld = {1, 3, 1, 3, 1, 3};
  SweepGrid b;
  b.rows = 3;
  b.cols = 1;
  b.dld = {-10, -10, -10};
  using C = TokenCategory;
  std::vector<std::vector<TokenAnnotation>> anns = {{{0, Region::Facts, C::FactsValue}, {1, Region::Facts, C::FactsValue}},
                                                    {{0, Region::Facts, C::FactsValue}}};
  std::vector<SweepGrid> grids = {a, b};
  const auto t = mean_abs_dld_by_category(grids, anns, make_layer_groups(3, "proportional"));
  const auto* r = t.find(C::FactsValue, "Early");
  ASSERT_NE(r, nullptr);
  EXPECT_DOUBLE_EQ(r->mean_abs_dld, 6.0);
  EXPECT_EQ(r->n_token_instances, 3);
  EXPECT_DOUBLE_EQ(*r->sem, 4.0);
}

TEST(Aggregate, SingleSampleHasNoSem) {
  std::mt19937_64 g(1);
  std::vector<SweepGrid> grids = {oracle::random_grid(g, 4, 5)};
  std::vector<std::vector<TokenAnnotation>> anns = {oracle::random_annotations(g, 5)};
  for (const auto& r : mean_abs_dld_by_category(grids, anns, make_layer_groups(4, "proportional")).rows) {
    EXPECT_FALSE(r.sem.has_value());
  }
}

TEST(Aggregate, RejectsBadInputs) {
  std::mt19937_64 g(2);
  const auto groups = make_layer_groups(4, "proportional");
  std::vector<SweepGrid> grids = {oracle::random_grid(g, 4, 5)};
  std::vector<std::vector<TokenAnnotation>> anns = {oracle::random_annotations(g, 5)};
  auto n = grids;
  n[0].normalized = true;
  EXPECT_THROW(mean_abs_dld_by_category(n, anns, groups), Error);
  auto h = grids;
  h[0].granularity = Granularity::Head;
  EXPECT_THROW(mean_abs_dld_by_category(h, anns, groups), Error);
  auto short_ann = anns;
  short_ann[0].pop_back();
  EXPECT_THROW(mean_abs_dld_by_category(grids, short_ann, groups), Error);
  EXPECT_THROW(mean_abs_dld_by_category(grids, anns, make_layer_groups(6, "proportional")), Error);
}

TEST(StageMeans, PerTokenMatchesManual) {
  std::mt19937_64 g(3);
  const SweepGrid grid = oracle::random_grid(g, 6, 4);
  const auto groups = make_layer_groups(6, "proportional");
  const auto s = per_token_stage_mean(grid, groups);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    for (int t = 0; t < 4; ++t) {
      const double want = (std::fabs(grid.at(groups[gi].lo, t)) + std::fabs(grid.at(groups[gi].hi, t))) / 2;
      EXPECT_NEAR(s.values[gi][t], want, 1e-12);
    }
  }
}

namespace {

AggregateTable table_of(std::vector<std::tuple<TokenCategory, double, double>> rows) {
  AggregateTable t;
  t.groups = make_layer_groups(4, "proportional");
  for (auto [c, e, l] : rows) {
    t.rows.push_back({c, "Early", e, std::nullopt, 1, 1});
    t.rows.push_back({c, "Late", l, std::nullopt, 1, 1});
  }
  return t;
}

}  // namespace

TEST(Retrospection, PersistenceRule) {
  using C = TokenCategory;
  const auto t = table_of({{C::FactsValue, 1.0, 0.5}, {C::FactsVar, 1.0, 0.1}, {C::QueryToken, 0.1, 0.4},
                           {C::ExprOp, 0.2, 0.2}, {C::ExprVar, 0.0, 0.0}});
  std::map<C, Retrospection> by;
  for (const auto& r : retrospection_score(t)) by[r.category] = r;
  EXPECT_TRUE(by[C::FactsValue].persistent);
  EXPECT_DOUBLE_EQ(*by[C::FactsValue].ratio, 0.5);
  EXPECT_FALSE(by[C::FactsVar].persistent);  // below a quarter of Early
  EXPECT_TRUE(by[C::QueryToken].persistent);
  EXPECT_FALSE(by[C::ExprVar].persistent);
  EXPECT_FALSE(by[C::ExprVar].ratio.has_value());
  EXPECT_TRUE(by[C::ExprOp].persistent);  // equal to the median passes
}

TEST(Retrospection, MedianCanBeSwitchedOff) {
  using C = TokenCategory;
  const auto t = table_of({{C::FactsValue, 1.0, 0.3}, {C::QueryToken, 0.1, 0.9}, {C::ExprOp, 0.1, 0.8}});
  PersistenceOptions opt;
  auto facts = [&] {
    for (const auto& r : retrospection_score(t, opt)) {
      if (r.category == C::FactsValue) return r.persistent;
    }
    throw std::runtime_error("missing row");
  };
  EXPECT_FALSE(facts());
  opt.require_median = false;
  EXPECT_TRUE(facts());
}

TEST(Retrospection, ScaleInvariantFlags) {
  std::mt19937_64 g(9);
  std::vector<SweepGrid> grids;
  std::vector<std::vector<TokenAnnotation>> anns;
  for (int s = 0; s < 5; ++s) {
    grids.push_back(oracle::random_grid(g, 6, 12));
    anns.push_back(oracle::random_annotations(g, 12));
  }
  const auto groups = make_layer_groups(6, "proportional");
  const auto base = retrospection_score(mean_abs_dld_by_category(grids, anns, groups));
  for (double k : {-3.0, 0.5, 7.0}) {
    auto scaled = grids;
    for (auto& gr : scaled) {
      for (double& v : gr.dld) v *= k;
    }
    const auto r = retrospection_score(mean_abs_dld_by_category(scaled, anns, groups));
    ASSERT_EQ(r.size(), base.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
      EXPECT_EQ(r[i].persistent, base[i].persistent);
      EXPECT_NEAR(r[i].late, std::fabs(k) * base[i].late, 1e-12);
    }
  }
}
