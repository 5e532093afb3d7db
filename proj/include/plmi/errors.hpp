#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace plmi {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : Error {
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " at offset " + std::to_string(offset)), offset(offset) {}
  std::size_t offset;
};

struct UnboundVariable : Error {
  explicit UnboundVariable(char name)
      : Error(std::string("unbound variable '") + name + "'"), name(name) {}
  char name;
};

struct DuplicateVariable : Error {
  explicit DuplicateVariable(char name)
      : Error(std::string("duplicate variable '") + name + "'"), name(name) {}
  char name;
};

struct NoAnswerFlippingCorruption : Error {
  using Error::Error;
};

struct TokenizationMisaligned : Error {
  using Error::Error;
};

struct TokenizationError : Error {
  using Error::Error;
};

struct AnnotationAmbiguous : Error {
  using Error::Error;
};

struct MultiTokenAnswer : Error {
  explicit MultiTokenAnswer(const std::string& surface)
      : Error("answer surface form '" + surface + "' is not a single token"),
        surface(surface) {}
  std::string surface;
};

// Out-of-range activation site, missing cache entry or shape mismatch.
struct SiteError : Error {
  using Error::Error;
};

struct DegenerateBaseline : Error {
  explicit DegenerateBaseline(double ld_origin)
      : Error("degenerate baseline: |LD_origin| = " + std::to_string(ld_origin) +
              " is below the division guard"),
        ld_origin(ld_origin) {}
  double ld_origin;
};

struct UnsupportedOperation : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct ModelUnavailable : Error {
  using Error::Error;
};

struct StageError : Error {
  StageError(const std::string& stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage(stage) {}
  std::string stage;
};

}  // namespace plmi
