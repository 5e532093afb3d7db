#pragma once

// Hookable causal-LM contract: named activation sites, capture caches and
// replacement/zero-ablation interventions on a single forward pass.

#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "plmi/errors.hpp"
#include "plmi/logic.hpp"
#include "plmi/tokenizer.hpp"

namespace plmi {

struct ModelSpec {
  std::string model_id;
  int n_layers = 0;
  int n_heads = 0;
  int d_model = 0;
  int d_head = 0;
  int vocab_size = 0;
  int context_limit = 0;
  std::string tokenizer;
  std::string precision;  // "float64" | "float32"
  std::string device = "cpu";
};

enum class SiteKind : std::uint8_t { ResidPre = 0, HeadOutput = 1, MlpOut = 2 };

inline std::string_view to_string(SiteKind k) {
  switch (k) {
    case SiteKind::ResidPre: return "resid_pre";
    case SiteKind::HeadOutput: return "head_output";
    case SiteKind::MlpOut: return "mlp_out";
  }
  return "?";
}

// ResidPre(layer, position) and MlpOut(layer, position) hold d_model values.
// HeadOutput(layer, head) holds the head's pre-projection output for every
// position, row-major [position][d_head]; with position >= 0 it addresses a
// single position (d_head values).
struct ActivationSite {
  SiteKind kind = SiteKind::ResidPre;
  int layer = 0;
  int head = -1;
  int position = -1;

  static ActivationSite resid_pre(int layer, int position) { return {SiteKind::ResidPre, layer, -1, position}; }
  static ActivationSite mlp_out(int layer, int position) { return {SiteKind::MlpOut, layer, -1, position}; }
  static ActivationSite head_output(int layer, int head) { return {SiteKind::HeadOutput, layer, head, -1}; }
  static ActivationSite head_output_at(int layer, int head, int position) {
    return {SiteKind::HeadOutput, layer, head, position};
  }

  friend auto operator<=>(const ActivationSite&, const ActivationSite&) = default;

  std::string str() const {
    std::string s(to_string(kind));
    s += "[" + std::to_string(layer);
    if (kind == SiteKind::HeadOutput) s += ",h" + std::to_string(head);
    if (position >= 0) s += ",p" + std::to_string(position);
    return s + "]";
  }
};

using ActivationCache = std::map<ActivationSite, std::vector<double>>;

enum class InterventionMode { ReplaceFromCache, ZeroAblate };

inline std::string_view to_string(InterventionMode m) {
  return m == InterventionMode::ReplaceFromCache ? "patch" : "zero";
}

struct Intervention {
  ActivationSite site;
  InterventionMode mode = InterventionMode::ReplaceFromCache;
};

struct CaptureResult {
  std::vector<double> logits;  // final position, full vocabulary
  ActivationCache cache;
};

// Row-stochastic causal attention weights of one head on one prompt.
struct AttentionMatrix {
  int layer = 0;
  int head = 0;
  int size = 0;
  std::vector<double> weights;  // [query][key], size * size

  double at(int q, int k) const { return weights[static_cast<std::size_t>(q) * size + k]; }
  double& at(int q, int k) { return weights[static_cast<std::size_t>(q) * size + k]; }
};

class Model {
 public:
  virtual ~Model() = default;

  virtual const ModelSpec& spec() const = 0;
  virtual const Tokenizer& tokenizer() const = 0;

  virtual CaptureResult run_with_capture(std::string_view prompt, std::span<const ActivationSite> sites) = 0;

  // Forward pass with the listed sites overwritten before any downstream use.
  virtual std::vector<double> run_with_intervention(std::string_view prompt,
                                                    std::span<const Intervention> interventions,
                                                    const ActivationCache* cache) = 0;

  virtual std::vector<AttentionMatrix> attention_patterns(std::string_view /*prompt*/) {
    throw UnsupportedOperation(spec().model_id + ": attention readout not supported");
  }

  std::vector<double> run(std::string_view prompt) { return run_with_capture(prompt, {}).logits; }

  int prompt_length(std::string_view prompt) const {
    return static_cast<int>(tokenizer().encode(prompt).size());
  }
};

// Every site of one kind for a prompt of `n_positions` tokens. HeadOutput
// sites cover all positions at once.
inline std::vector<ActivationSite> all_sites(const ModelSpec& spec, SiteKind kind, int n_positions) {
  std::vector<ActivationSite> out;
  for (int l = 0; l < spec.n_layers; ++l) {
    if (kind == SiteKind::HeadOutput) {
      for (int h = 0; h < spec.n_heads; ++h) out.push_back(ActivationSite::head_output(l, h));
    } else {
      for (int p = 0; p < n_positions; ++p) {
        out.push_back(kind == SiteKind::ResidPre ? ActivationSite::resid_pre(l, p) : ActivationSite::mlp_out(l, p));
      }
    }
  }
  return out;
}

inline std::vector<ActivationSite> all_sites(const ModelSpec& spec, int n_positions) {
  std::vector<ActivationSite> out;
  for (SiteKind k : {SiteKind::ResidPre, SiteKind::HeadOutput, SiteKind::MlpOut}) {
    auto part = all_sites(spec, k, n_positions);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

inline std::size_t site_width(const ModelSpec& spec, const ActivationSite& s, int n_positions) {
  if (s.kind != SiteKind::HeadOutput) return static_cast<std::size_t>(spec.d_model);
  if (s.position >= 0) return static_cast<std::size_t>(spec.d_head);
  return static_cast<std::size_t>(spec.d_head) * static_cast<std::size_t>(n_positions);
}

inline void check_site(const ModelSpec& spec, const ActivationSite& s, int n_positions) {
  const bool bad_layer = s.layer < 0 || s.layer >= spec.n_layers;
  const bool needs_pos = s.kind != SiteKind::HeadOutput;
  const bool bad_pos = needs_pos ? (s.position < 0 || s.position >= n_positions) : (s.position >= n_positions);
  const bool bad_head = s.kind == SiteKind::HeadOutput && (s.head < 0 || s.head >= spec.n_heads);
  if (bad_layer || bad_pos || bad_head) {
    throw SiteError("activation site " + s.str() + " out of range for " + std::to_string(spec.n_layers) + " layers, " +
                    std::to_string(spec.n_heads) + " heads, " + std::to_string(n_positions) + " positions");
  }
}

struct AnswerTokens {
  int true_id = -1;
  int false_id = -1;
  std::string true_surface;
  std::string false_surface;

  int id_for(bool v) const { return v ? true_id : false_id; }
};

// Leading-space single-token forms of the two truth values.
inline AnswerTokens answer_token_ids(const Tokenizer& tok, ValueStyle style) {
  AnswerTokens a;
  a.true_surface = " " + render_value(true, style);
  a.false_surface = " " + render_value(false, style);
  const auto t = tok.single_token_id(a.true_surface);
  if (!t) throw MultiTokenAnswer(a.true_surface);
  const auto f = tok.single_token_id(a.false_surface);
  if (!f) throw MultiTokenAnswer(a.false_surface);
  a.true_id = *t;
  a.false_id = *f;
  return a;
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace plmi
