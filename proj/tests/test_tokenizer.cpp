#include <gtest/gtest.h>

#include "plmi/model.hpp"
#include "plmi/toy_model.hpp"

using namespace plmi;

TEST(Tokenizer, WordSplitsDeMorganPrompt) {
  WordTokenizer tok;
  const std::string p = "A is True, B is False, (¬A or ¬B) is";
  std::vector<std::string> texts;
  for (const auto& t : tok.encode(p)) {
    texts.push_back(t.text);
    EXPECT_EQ(p.substr(t.offset, t.length), t.text);
  }
  const std::vector<std::string> want = {"A", " is", " True", ",", " B", " is", " False", ",",
                                         " (", "¬", "A", " or", " ¬", "B", ")", " is"};
  EXPECT_EQ(texts, want);
}

TEST(Tokenizer, AnswerIdsAreFixed) {
  WordTokenizer tok;
  const auto a = answer_token_ids(tok, ValueStyle::Long);
  EXPECT_EQ(a.true_id, 7);
  EXPECT_EQ(a.false_id, 8);
  EXPECT_EQ(tok.decode(7), " True");
  EXPECT_EQ(tok.decode(8), " False");
}

TEST(Tokenizer, CharTokenizerSplitsLongValues) {
  CharTokenizer tok;
  EXPECT_FALSE(tok.single_token_id(" True"));
  EXPECT_TRUE(tok.single_token_id(" T"));
  EXPECT_THROW(answer_token_ids(tok, ValueStyle::Long), MultiTokenAnswer);
  EXPECT_NO_THROW(answer_token_ids(tok, ValueStyle::Short));
}

TEST(Tokenizer, EncodeDecodeRoundTrip) {
  for (const std::string name : {"word", "char"}) {
    auto tok = make_tokenizer(name);
    const std::string p = "C is (A and not B), D is F, (C or D) is";
    std::string back;
    for (const auto& t : tok->encode(p)) back += tok->decode(t.id);
    EXPECT_EQ(back, p) << name;
  }
}

TEST(Tokenizer, UnknownInputThrows) {
  WordTokenizer tok;
  EXPECT_THROW(tok.encode("A is maybe"), TokenizationError);
  EXPECT_THROW(make_tokenizer("bpe"), ConfigError);
}
