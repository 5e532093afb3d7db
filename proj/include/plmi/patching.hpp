#pragma once

// Three-pass activation patching (clean capture, corrupt baseline, patched
// rerun), sweep geometries over residual/head/MLP sites, and region-wise MLP
// zero-ablation.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "plmi/dataset.hpp"
#include "plmi/errors.hpp"
#include "plmi/model.hpp"

namespace plmi {

// Logit of the clean-correct answer minus logit of the corrupt-correct one.
// With clean = True, corrupt = False this is Logits(True) - Logits(False).
inline double logit_difference(std::span<const double> logits, const AnswerTokens& answers, bool clean_answer,
                               bool corrupt_answer) {
  return logits[static_cast<std::size_t>(answers.id_for(clean_answer))] -
         logits[static_cast<std::size_t>(answers.id_for(corrupt_answer))];
}

inline double tolerance_for(const std::string& precision) {
  if (precision == "float64") return 1e-6;
  return 1e-4;
}

enum class Granularity { Resid, Head, Mlp };

inline std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::Resid: return "resid";
    case Granularity::Head: return "head";
    case Granularity::Mlp: return "mlp";
  }
  return "?";
}

inline Granularity granularity_from_string(std::string_view s) {
  if (s == "resid") return Granularity::Resid;
  if (s == "head") return Granularity::Head;
  if (s == "mlp") return Granularity::Mlp;
  throw ConfigError("unknown granularity '" + std::string(s) + "' (expected resid|head|mlp)");
}

inline InterventionMode mode_from_string(std::string_view s) {
  if (s == "patch") return InterventionMode::ReplaceFromCache;
  if (s == "zero") return InterventionMode::ZeroAblate;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected patch|zero)");
}

inline SiteKind site_kind(Granularity g) {
  switch (g) {
    case Granularity::Resid: return SiteKind::ResidPre;
    case Granularity::Head: return SiteKind::HeadOutput;
    case Granularity::Mlp: return SiteKind::MlpOut;
  }
  return SiteKind::ResidPre;
}

struct PatchResult {
  std::string pair_id;
  ActivationSite site;
  double ld_clean = 0;
  double ld_baseline = 0;
  double ld_patched = 0;
  double dld = 0;
};

struct SweepGrid {
  std::string pair_id;
  Granularity granularity = Granularity::Resid;
  InterventionMode mode = InterventionMode::ReplaceFromCache;
  std::string precision;
  double tolerance = 0;
  int rows = 0;  // layers
  int cols = 0;  // positions or heads
  std::vector<std::string> col_labels;
  std::vector<double> dld;         // rows * cols
  std::vector<double> ld_patched;  // rows * cols
  double ld_clean = 0;
  double ld_baseline = 0;
  bool normalized = false;

  double& at(int r, int c) { return dld[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return dld[static_cast<std::size_t>(r) * cols + c]; }

  ActivationSite site(int r, int c) const {
    switch (granularity) {
      case Granularity::Resid: return ActivationSite::resid_pre(r, c);
      case Granularity::Head: return ActivationSite::head_output(r, c);
      case Granularity::Mlp: return ActivationSite::mlp_out(r, c);
    }
    return {};
  }

  PatchResult cell(int r, int c) const {
    const std::size_t i = static_cast<std::size_t>(r) * cols + c;
    return PatchResult{pair_id, site(r, c), ld_clean, ld_baseline, ld_patched[i], dld[i]};
  }
};

struct PairBaseline {
  double ld_clean = 0;
  double ld_baseline = 0;
  ActivationCache clean_cache;
  int n_positions = 0;
  std::vector<std::string> warnings;
};

struct BaselineOptions {
  bool force = false;  // proceed (with a warning) when the model is wrong on either prompt
  std::vector<SiteKind> capture = {SiteKind::ResidPre, SiteKind::HeadOutput, SiteKind::MlpOut};
};

// Passes one and two: clean run with capture, unpatched corrupt run.
inline PairBaseline run_pair_baseline(const ContrastPair& pair, Model& model, const AnswerTokens& answers,
                                      const BaselineOptions& opt = {}) {
  PairBaseline b;
  b.n_positions = model.prompt_length(pair.clean.prompt);
  if (model.prompt_length(pair.corrupt.prompt) != b.n_positions) {
    throw TokenizationMisaligned(pair.id + ": clean and corrupt prompts differ in token count");
  }
  std::vector<ActivationSite> sites;
  for (SiteKind k : opt.capture) {
    auto part = all_sites(model.spec(), k, b.n_positions);
    sites.insert(sites.end(), part.begin(), part.end());
  }
  auto clean = model.run_with_capture(pair.clean.prompt, sites);
  b.clean_cache = std::move(clean.cache);
  b.ld_clean = logit_difference(clean.logits, answers, pair.clean.answer, pair.corrupt.answer);
  const auto corrupt = model.run(pair.corrupt.prompt);
  b.ld_baseline = logit_difference(corrupt, answers, pair.clean.answer, pair.corrupt.answer);

  if (!(b.ld_clean > 0) || !(b.ld_baseline < 0)) {
    const std::string msg = pair.id + ": model does not prefer the correct answer on both prompts (LD_clean = " +
                            std::to_string(b.ld_clean) + ", LD_baseline = " + std::to_string(b.ld_baseline) + ")";
    if (!opt.force) throw Error(msg + "; filter the pair or force the run");
    b.warnings.push_back(msg);
  }
  return b;
}

// Pass three, once per cell: the corrupt prompt rerun with one site replaced
// from the clean cache (or zeroed).
inline SweepGrid sweep(const ContrastPair& pair, Model& model, const AnswerTokens& answers, const PairBaseline& base,
                       Granularity g, InterventionMode mode = InterventionMode::ReplaceFromCache) {
  const ModelSpec& spec = model.spec();
  SweepGrid grid;
  grid.pair_id = pair.id;
  grid.granularity = g;
  grid.mode = mode;
  grid.precision = spec.precision;
  grid.tolerance = tolerance_for(spec.precision);
  grid.rows = spec.n_layers;
  grid.cols = g == Granularity::Head ? spec.n_heads : base.n_positions;
  grid.ld_clean = base.ld_clean;
  grid.ld_baseline = base.ld_baseline;
  if (g == Granularity::Head) {
    for (int h = 0; h < spec.n_heads; ++h) grid.col_labels.push_back("H" + std::to_string(h));
  } else {
    for (const auto& t : model.tokenizer().encode(pair.corrupt.prompt)) grid.col_labels.push_back(t.text);
  }
  const std::size_t n = static_cast<std::size_t>(grid.rows) * grid.cols;
  grid.dld.assign(n, 0.0);
  grid.ld_patched.assign(n, 0.0);

  const ActivationCache* cache = mode == InterventionMode::ReplaceFromCache ? &base.clean_cache : nullptr;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const Intervention iv{grid.site(r, c), mode};
      const auto logits = model.run_with_intervention(pair.corrupt.prompt, std::span(&iv, 1), cache);
      const double ld = logit_difference(logits, answers, pair.clean.answer, pair.corrupt.answer);
      const std::size_t i = static_cast<std::size_t>(r) * grid.cols + c;
      grid.ld_patched[i] = ld;
      grid.dld[i] = ld - base.ld_baseline;
    }
  }
  return grid;
}

inline SweepGrid sweep_residual(const ContrastPair& pair, Model& model, const AnswerTokens& answers,
                                const PairBaseline& base) {
  return sweep(pair, model, answers, base, Granularity::Resid);
}

inline SweepGrid sweep_heads(const ContrastPair& pair, Model& model, const AnswerTokens& answers,
                             const PairBaseline& base) {
  return sweep(pair, model, answers, base, Granularity::Head);
}

inline SweepGrid sweep_mlp(const ContrastPair& pair, Model& model, const AnswerTokens& answers,
                           const PairBaseline& base, InterventionMode mode) {
  return sweep(pair, model, answers, base, Granularity::Mlp, mode);
}

// Each layer row divided by its largest absolute value; zero rows unchanged.
inline SweepGrid normalize_per_layer(SweepGrid grid) {
  for (int r = 0; r < grid.rows; ++r) {
    double mx = 0;
    for (int c = 0; c < grid.cols; ++c) mx = std::max(mx, std::abs(grid.at(r, c)));
    if (mx == 0) continue;
    for (int c = 0; c < grid.cols; ++c) grid.at(r, c) /= mx;
  }
  grid.normalized = true;
  return grid;
}

// ---------------------------------------------------------------------------
// Region ablation

enum class AblationMetric { DLD, RLD };

inline std::string_view to_string(AblationMetric m) { return m == AblationMetric::DLD ? "dld" : "rld"; }

inline AblationMetric metric_from_string(std::string_view s) {
  if (s == "dld") return AblationMetric::DLD;
  if (s == "rld") return AblationMetric::RLD;
  throw ConfigError("unknown metric '" + std::string(s) + "' (expected dld|rld)");
}

enum class AblationScope { SingleLayer, AllLayers };

inline constexpr double kRatioGuard = 1e-6;

// dLD = LD_after - LD_origin;  R_LD = |(LD_after - LD_origin) / LD_origin|.
inline double ablation_metric(double ld_origin, double ld_after, AblationMetric metric) {
  if (metric == AblationMetric::DLD) return ld_after - ld_origin;
  if (std::abs(ld_origin) < kRatioGuard) throw DegenerateBaseline(ld_origin);
  return std::abs((ld_after - ld_origin) / ld_origin);
}

struct AblationTarget {
  std::string id;
  std::string prompt;
  bool answer = false;         // correct answer of `prompt`
  bool contrast_answer = true; // the opposing answer token
  std::vector<TokenAnnotation> annotations;
};

inline AblationTarget ablation_target(const ContrastPair& pair) {
  return AblationTarget{pair.id, pair.clean.prompt, pair.clean.answer, pair.corrupt.answer, pair.annotations};
}

inline AblationTarget ablation_target(const Sample& s, const Tokenizer& tok) {
  return AblationTarget{s.id, s.prompt, s.answer, !s.answer, annotate_tokens(s, tok)};
}

inline std::vector<Intervention> region_ablation(const AblationTarget& target, Region region, int layer,
                                                 AblationScope scope, int n_layers) {
  std::vector<Intervention> ivs;
  const int lo = scope == AblationScope::AllLayers ? 0 : layer;
  const int hi = scope == AblationScope::AllLayers ? n_layers - 1 : layer;
  for (int l = lo; l <= hi; ++l) {
    for (const auto& a : target.annotations) {
      if (a.region == region) ivs.push_back({ActivationSite::mlp_out(l, a.position), InterventionMode::ZeroAblate});
    }
  }
  return ivs;
}

struct AblationResult {
  double ld_origin = 0;
  double ld_after = 0;
  double value = 0;
};

// Zero-ablates MlpOut at every position of `region` (one layer, or all
// layers with AblationScope::AllLayers) on the target prompt.
inline AblationResult ablate_region(const AblationTarget& target, Model& model, const AnswerTokens& answers,
                                    Region region, int layer, AblationMetric metric,
                                    AblationScope scope = AblationScope::SingleLayer) {
  if (scope == AblationScope::SingleLayer && (layer < 0 || layer >= model.spec().n_layers)) {
    throw SiteError("ablation layer " + std::to_string(layer) + " out of range");
  }
  AblationResult r;
  r.ld_origin = logit_difference(model.run(target.prompt), answers, target.answer, target.contrast_answer);
  const auto ivs = region_ablation(target, region, layer, scope, model.spec().n_layers);
  r.ld_after = ivs.empty() ? r.ld_origin
                           : logit_difference(model.run_with_intervention(target.prompt, ivs, nullptr), answers,
                                              target.answer, target.contrast_answer);
  r.value = ablation_metric(r.ld_origin, r.ld_after, metric);
  return r;
}

struct AblationProfile {
  std::string target_id;
  Region region = Region::Facts;
  AblationMetric metric = AblationMetric::DLD;
  double ld_origin = 0;
  std::vector<double> ld_after;              // per layer
  std::vector<std::optional<double>> value;  // per layer; empty when degenerate
};

inline AblationProfile ablation_profile(const AblationTarget& target, Model& model, const AnswerTokens& answers,
                                        Region region, AblationMetric metric) {
  AblationProfile p;
  p.target_id = target.id;
  p.region = region;
  p.metric = metric;
  p.ld_origin = logit_difference(model.run(target.prompt), answers, target.answer, target.contrast_answer);
  for (int l = 0; l < model.spec().n_layers; ++l) {
    const auto ivs = region_ablation(target, region, l, AblationScope::SingleLayer, model.spec().n_layers);
    const double after = ivs.empty() ? p.ld_origin
                                     : logit_difference(model.run_with_intervention(target.prompt, ivs, nullptr),
                                                        answers, target.answer, target.contrast_answer);
    p.ld_after.push_back(after);
    try {
      p.value.push_back(ablation_metric(p.ld_origin, after, metric));
    } catch (const DegenerateBaseline&) {
      p.value.push_back(std::nullopt);
    }
  }
  return p;
}

}  // namespace plmi
