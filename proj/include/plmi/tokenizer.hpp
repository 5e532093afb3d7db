#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "plmi/errors.hpp"

namespace plmi {

struct Token {
  int id = -1;
  std::string text;         // surface form, including any merged leading space
  std::size_t offset = 0;   // byte offset of the surface form in the prompt
  std::size_t length = 0;
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual std::vector<Token> encode(std::string_view text) const = 0;
  virtual int vocab_size() const = 0;
  virtual const std::string& decode(int id) const = 0;
  virtual std::string name() const = 0;

  // Id of `surface` when it encodes to exactly one token, else nullopt.
  std::optional<int> single_token_id(std::string_view surface) const {
    std::vector<Token> toks;
    try {
      toks = encode(surface);
    } catch (const TokenizationError&) {
      return std::nullopt;
    }
    if (toks.size() != 1 || toks[0].text != surface) return std::nullopt;
    return toks[0].id;
  }
};

namespace detail {

// Length of the UTF-8 sequence starting with byte `c`.
inline std::size_t utf8_length(unsigned char c) {
  if (c < 0x80) return 1;
  if ((c >> 5) == 0x6) return 2;
  if ((c >> 4) == 0xE) return 3;
  if ((c >> 3) == 0x1E) return 4;
  return 1;
}

class VocabTokenizer : public Tokenizer {
 public:
  int vocab_size() const override { return static_cast<int>(vocab_.size()); }

  const std::string& decode(int id) const override {
    if (id < 0 || id >= vocab_size()) throw TokenizationError("token id out of range: " + std::to_string(id));
    return vocab_[static_cast<std::size_t>(id)];
  }

 protected:
  void add(std::string surface) {
    if (ids_.count(surface)) return;
    ids_.emplace(surface, static_cast<int>(vocab_.size()));
    vocab_.push_back(std::move(surface));
  }

  Token lookup(std::string surface, std::size_t offset) const {
    auto it = ids_.find(surface);
    if (it == ids_.end()) {
      throw TokenizationError(name() + ": no token for '" + surface + "' at offset " + std::to_string(offset));
    }
    const std::size_t len = surface.size();
    return Token{it->second, std::move(surface), offset, len};
  }

  std::vector<std::string> vocab_;
  std::map<std::string, int, std::less<>> ids_;
};

}  // namespace detail

// Word-level tokenizer over the prompt language. A single space preceding a
// word or symbol is merged into it (" True", " ("), mirroring BPE vocabularies
// of causal LMs. Fixed vocabulary: " True" -> 7, " False" -> 8.
class WordTokenizer final : public detail::VocabTokenizer {
 public:
  explicit WordTokenizer(std::string_view alphabet = "ABCD") : alphabet_(alphabet) {
    for (const char* s : {",", "(", " (", ")", "¬", " ¬", " is", " True", " False", " T", " F", " and",
                          " or", " not", "True", "False", "T", "F", "not", "is", "and", "or", ".", " ."}) {
      add(s);
    }
    for (char c : alphabet_) {
      add(std::string(1, c));
      add(std::string(" ") + c);
    }
  }

  std::string name() const override { return "word"; }

  std::vector<Token> encode(std::string_view text) const override {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < text.size()) {
      const std::size_t start = i;
      if (text[i] == ' ') ++i;
      if (i >= text.size()) throw TokenizationError("word: trailing space at offset " + std::to_string(start));
      std::size_t j = i;
      const char c = text[i];
      if ((c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z')) {
        while (j < text.size() && ((text[j] >= 'A' && text[j] <= 'Z') || (text[j] >= 'a' && text[j] <= 'z'))) ++j;
      } else {
        j = i + detail::utf8_length(static_cast<unsigned char>(c));
      }
      out.push_back(lookup(std::string(text.substr(start, j - start)), start));
      i = j;
    }
    return out;
  }

 private:
  std::string alphabet_;
};

// Character-level tokenizer: one code point per token, with a preceding
// single space merged into it (" T" is one token, " True" is four).
class CharTokenizer final : public detail::VocabTokenizer {
 public:
  CharTokenizer() {
    const std::string_view ascii =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789(),.:;!?-_'";
    for (char c : ascii) {
      add(std::string(1, c));
      add(std::string(" ") + c);
    }
    for (const char* s : {"¬", "∧", "∨", "⊤", "⊥"}) {
      add(s);
      add(std::string(" ") + s);
    }
  }

  std::string name() const override { return "char"; }

  std::vector<Token> encode(std::string_view text) const override {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < text.size()) {
      const std::size_t start = i;
      if (text[i] == ' ') ++i;
      if (i >= text.size()) throw TokenizationError("char: trailing space at offset " + std::to_string(start));
      const std::size_t j = i + detail::utf8_length(static_cast<unsigned char>(text[i]));
      out.push_back(lookup(std::string(text.substr(start, j - start)), start));
      i = j;
    }
    return out;
  }
};

}  // namespace plmi
