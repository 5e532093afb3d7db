#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "plmi/logic.hpp"

using namespace plmi;

TEST(Logic, EveryLawHoldsExhaustively) {
  std::set<std::string_view> names;
  for (const auto& law : kBooleanLaws) {
    names.insert(law.name);
    EXPECT_TRUE(equivalence_check(parse_expr(law.lhs), parse_expr(law.rhs))) << law.lhs << " = " << law.rhs;
  }
  EXPECT_EQ(names.size(), 11u);
}

TEST(Logic, NonLawsAreRejected) {
  EXPECT_FALSE(equivalence_check(parse_expr("¬(A and B)"), parse_expr("¬A and ¬B")));
  EXPECT_FALSE(equivalence_check(parse_expr("A or B"), parse_expr("A")));
  EXPECT_FALSE(equivalence_check(parse_expr("T"), parse_expr("F")));
}

TEST(Logic, RandomExpressionsMatchTruthTables) {
  std::mt19937_64 g(11);
  for (int i = 0; i < 500; ++i) {
    const auto r = oracle::random_expr(g, 4);
    const Expr e = parse_expr(r.text);
    for (const auto& a : enumerate_assignments("ABCD")) {
      const bool want = (r.mask >> oracle::row_of(a)) & 1;
      ASSERT_EQ(eval_expr(e, a), want) << r.text;
    }
  }
}

TEST(Logic, SurfaceFormsAreInterchangeable) {
  const Expr a = parse_expr("¬A ∧ (B ∨ ⊤)");
  const Expr b = parse_expr("not A and (B or True)");
  const Expr c = parse_expr("¬A and (B or T)");
  EXPECT_EQ(a, b);
  EXPECT_EQ(b, c);
}

TEST(Logic, PrecedenceNotAndOr) {
  const Expr e = parse_expr("A or B and ¬C");
  ASSERT_EQ(e.kind, Expr::Kind::Or);
  EXPECT_EQ(e.right().kind, Expr::Kind::And);
  EXPECT_EQ(e.right().right().kind, Expr::Kind::Not);
  EXPECT_EQ(parse_expr("A and B and C").left().kind, Expr::Kind::And);
}

TEST(Logic, RenderRoundTrips) {
  std::mt19937_64 g(5);
  for (int i = 0; i < 200; ++i) {
    const Expr e = parse_expr(oracle::random_expr(g, 3).text);
    for (auto style : {ValueStyle::Long, ValueStyle::Short}) {
      for (auto neg : {NegationStyle::Glyph, NegationStyle::Word}) {
        EXPECT_EQ(parse_expr(render_expr(e, style, neg)), e);
      }
    }
  }
  EXPECT_EQ(render_expr(parse_expr("(¬A or ¬B)")), "¬A or ¬B");
  EXPECT_EQ(render_expr(parse_expr("A and (B and C)")), "A and (B and C)");
}

TEST(Logic, ParseErrorsCarryOffsets) {
  try {
    parse_expr("A and (B or");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset, 11u);
  }
  EXPECT_THROW(parse_expr(""), ParseError);
  EXPECT_THROW(parse_expr("A B"), ParseError);
  EXPECT_THROW(parse_expr("A and Z"), ParseError);
  EXPECT_THROW(parse_expr("A & B"), ParseError);
  EXPECT_NO_THROW(parse_expr("A and Z", "AZ"));
}

TEST(Logic, UnboundVariableThrows) {
  EXPECT_THROW(eval_expr(parse_expr("A and B"), {{'A', true}}), UnboundVariable);
}

TEST(Logic, EnumerationOrder) {
  const auto as = enumerate_assignments("AB");
  ASSERT_EQ(as.size(), 4u);
  EXPECT_TRUE(as[0].at('A') && as[0].at('B'));
  EXPECT_TRUE(as[1].at('A') && !as[1].at('B'));
  EXPECT_TRUE(!as[2].at('A') && as[2].at('B'));
  EXPECT_THROW(enumerate_assignments("AA"), DuplicateVariable);
  EXPECT_THROW(enumerate_assignments(""), Error);
}

TEST(Logic, FreeVariablesSortedDistinct) {
  EXPECT_EQ(free_variables(parse_expr("(C or A) and ¬(A or B) and T")), "ABC");
  EXPECT_EQ(free_variables(parse_expr("T or F")), "");
}

TEST(Logic, StyleNamesRoundTrip) {
  EXPECT_EQ(value_style_from_string(to_string(ValueStyle::Short)), ValueStyle::Short);
  EXPECT_EQ(negation_style_from_string(to_string(NegationStyle::Word)), NegationStyle::Word);
  EXPECT_THROW(value_style_from_string("medium"), ConfigError);
  EXPECT_EQ(render_value(true, ValueStyle::Long), "True");
  EXPECT_EQ(render_value(false, ValueStyle::Short), "F");
}
