#pragma once

// Small seeded decoder-only transformer exposing every hook site of the
// Model contract. Pre-norm blocks (RMSNorm), rotary positions inside
// attention, GELU MLP. No positional term is added to the residual stream,
// so ResidPre(0, p) is exactly the embedding of token p.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "plmi/errors.hpp"
#include "plmi/model.hpp"
#include "plmi/rng.hpp"
#include "plmi/tokenizer.hpp"

namespace plmi {

struct ToyConfig {
  std::uint64_t seed = 0;
  int n_layers = 4;
  int n_heads = 2;
  int d_model = 16;
  int d_mlp = 64;
  int context_limit = 64;
  std::string precision = "float64";  // or "float32"
  std::string tokenizer = "word";     // or "char"
};

inline std::unique_ptr<Tokenizer> make_tokenizer(const std::string& name) {
  if (name == "word") return std::make_unique<WordTokenizer>();
  if (name == "char") return std::make_unique<CharTokenizer>();
  throw ConfigError("unknown tokenizer '" + name + "' (expected word|char)");
}

template <typename Scalar>
class ToyTransformer final : public Model {
  static_assert(std::is_floating_point_v<Scalar>);

 public:
  explicit ToyTransformer(const ToyConfig& cfg) : cfg_(cfg), tok_(make_tokenizer(cfg.tokenizer)) {
    if (cfg.n_layers < 1 || cfg.n_layers > 8) throw ConfigError("toy model supports 1..8 layers");
    if (cfg.n_heads < 1 || cfg.d_model % cfg.n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if ((cfg.d_model / cfg.n_heads) % 2 != 0) throw ConfigError("head width must be even for rotary positions");

    spec_.model_id = "toy-s" + std::to_string(cfg.seed) + "-l" + std::to_string(cfg.n_layers) + "h" +
                     std::to_string(cfg.n_heads) + "d" + std::to_string(cfg.d_model);
    spec_.n_layers = cfg.n_layers;
    spec_.n_heads = cfg.n_heads;
    spec_.d_model = cfg.d_model;
    spec_.d_head = cfg.d_model / cfg.n_heads;
    spec_.vocab_size = tok_->vocab_size();
    spec_.context_limit = cfg.context_limit;
    spec_.tokenizer = tok_->name();
    spec_.precision = std::is_same_v<Scalar, double> ? "float64" : "float32";

    init_weights();
  }

  const ModelSpec& spec() const override { return spec_; }
  const Tokenizer& tokenizer() const override { return *tok_; }

  CaptureResult run_with_capture(std::string_view prompt, std::span<const ActivationSite> sites) override {
    const auto ids = encode(prompt);
    const int n = static_cast<int>(ids.size());
    Hooks hooks;
    for (const auto& s : sites) {
      check_site(spec_, s, n);
      hooks.capture.insert(s);
    }
    CaptureResult r;
    hooks.out = &r.cache;
    r.logits = forward(ids, hooks);
    return r;
  }

  std::vector<double> run_with_intervention(std::string_view prompt, std::span<const Intervention> interventions,
                                            const ActivationCache* cache) override {
    const auto ids = encode(prompt);
    const int n = static_cast<int>(ids.size());
    Hooks hooks;
    hooks.src = cache;
    for (const auto& iv : interventions) {
      check_site(spec_, iv.site, n);
      if (iv.mode == InterventionMode::ReplaceFromCache) {
        const std::vector<double>& v = cached_value(cache, iv.site);
        if (v.size() != site_width(spec_, iv.site, n)) {
          throw SiteError("cached value for " + iv.site.str() + " has " + std::to_string(v.size()) +
                          " entries, expected " + std::to_string(site_width(spec_, iv.site, n)));
        }
      }
      hooks.interventions[iv.site] = iv.mode;
    }
    return forward(ids, hooks);
  }

  std::vector<AttentionMatrix> attention_patterns(std::string_view prompt) override {
    const auto ids = encode(prompt);
    Hooks hooks;
    std::vector<AttentionMatrix> out;
    hooks.attention = &out;
    forward(ids, hooks);
    return out;
  }

 private:
  using Vec = std::vector<Scalar>;

  struct Layer {
    Vec attn_gain, mlp_gain;
    Vec wq, wk, wv;  // [head][d_model][d_head]
    Vec wo;          // [head][d_head][d_model]
    Vec w_in, b_in;  // [d_model][d_mlp], [d_mlp]
    Vec w_out, b_out;  // [d_mlp][d_model], [d_model]
  };

  struct Hooks {
    std::set<ActivationSite> capture;
    ActivationCache* out = nullptr;
    std::map<ActivationSite, InterventionMode> interventions;
    const ActivationCache* src = nullptr;
    std::vector<AttentionMatrix>* attention = nullptr;
  };

  std::vector<int> encode(std::string_view prompt) const {
    const auto toks = tok_->encode(prompt);
    if (toks.empty()) throw TokenizationError("empty prompt");
    if (static_cast<int>(toks.size()) > spec_.context_limit) {
      throw TokenizationError("prompt of " + std::to_string(toks.size()) + " tokens exceeds context limit " +
                              std::to_string(spec_.context_limit));
    }
    std::vector<int> ids;
    ids.reserve(toks.size());
    for (const auto& t : toks) ids.push_back(t.id);
    return ids;
  }

  static const std::vector<double>& cached_value(const ActivationCache* cache, const ActivationSite& s) {
    if (!cache) throw SiteError("replacement of " + s.str() + " requested without a cache");
    auto it = cache->find(s);
    if (it == cache->end() && s.kind == SiteKind::HeadOutput && s.position >= 0) {
      it = cache->find(ActivationSite::head_output(s.layer, s.head));
    }
    if (it == cache->end()) throw SiteError("missing cache entry for " + s.str());
    return it->second;
  }

  void init_weights() {
    Rng rng(mix_seed(cfg_.seed, "toy-transformer"));
    const int d = cfg_.d_model, dh = spec_.d_head, H = cfg_.n_heads, m = cfg_.d_mlp, V = spec_.vocab_size;
    auto fill = [&](Vec& v, std::size_t n, double scale) {
      v.resize(n);
      for (auto& x : v) x = static_cast<Scalar>(rng.normal() * scale);
    };
    auto gains = [&](Vec& v, std::size_t n) {
      v.resize(n);
      for (auto& x : v) x = static_cast<Scalar>(1.0 + 0.1 * rng.normal());
    };
    fill(embed_, static_cast<std::size_t>(V) * d, 1.0);
    layers_.resize(static_cast<std::size_t>(cfg_.n_layers));
    for (auto& L : layers_) {
      gains(L.attn_gain, d);
      fill(L.wq, static_cast<std::size_t>(H) * d * dh, 1.5 / std::sqrt(d));
      fill(L.wk, static_cast<std::size_t>(H) * d * dh, 1.5 / std::sqrt(d));
      fill(L.wv, static_cast<std::size_t>(H) * d * dh, 1.0 / std::sqrt(d));
      fill(L.wo, static_cast<std::size_t>(H) * dh * d, 1.0 / std::sqrt(dh * H));
      gains(L.mlp_gain, d);
      fill(L.w_in, static_cast<std::size_t>(d) * m, 1.0 / std::sqrt(d));
      fill(L.b_in, m, 0.1);
      fill(L.w_out, static_cast<std::size_t>(m) * d, 1.0 / std::sqrt(m));
      fill(L.b_out, d, 0.1);
    }
    gains(final_gain_, d);
    fill(unembed_, static_cast<std::size_t>(d) * V, 1.0 / std::sqrt(d));
  }

  static Vec rms_norm(const Scalar* x, const Vec& gain) {
    const std::size_t d = gain.size();
    Scalar ss = 0;
    for (std::size_t i = 0; i < d; ++i) ss += x[i] * x[i];
    const Scalar inv = Scalar(1) / std::sqrt(ss / static_cast<Scalar>(d) + Scalar(1e-6));
    Vec out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = x[i] * inv * gain[i];
    return out;
  }

  static Scalar gelu(Scalar x) {
    const Scalar c = static_cast<Scalar>(0.7978845608028654);
    return Scalar(0.5) * x * (Scalar(1) + std::tanh(c * (x + Scalar(0.044715) * x * x * x)));
  }

  void rotate(Scalar* v, int pos) const {
    const int dh = spec_.d_head;
    for (int i = 0; i < dh / 2; ++i) {
      const double theta = pos / std::pow(10000.0, (2.0 * i) / dh);
      const Scalar c = static_cast<Scalar>(std::cos(theta)), s = static_cast<Scalar>(std::sin(theta));
      const Scalar a = v[2 * i], b = v[2 * i + 1];
      v[2 * i] = a * c - b * s;
      v[2 * i + 1] = a * s + b * c;
    }
  }

  // Capture and/or overwrite a [n_rows x width] block addressed by `site`.
  void hook_rows(Hooks& hooks, const ActivationSite& site, Scalar* data, std::size_t width, int first_row,
                 int n_rows) const {
    const std::size_t count = width * static_cast<std::size_t>(n_rows);
    Scalar* block = data + width * static_cast<std::size_t>(first_row);
    if (auto it = hooks.interventions.find(site); it != hooks.interventions.end()) {
      if (it->second == InterventionMode::ZeroAblate) {
        std::fill(block, block + count, Scalar(0));
      } else {
        const auto& v = cached_value(hooks.src, site);
        // Full-head cache entries serve per-position replacements.
        const std::size_t offset = v.size() == count ? 0 : width * static_cast<std::size_t>(first_row);
        for (std::size_t i = 0; i < count; ++i) block[i] = static_cast<Scalar>(v[offset + i]);
      }
    }
    if (hooks.out && hooks.capture.count(site)) {
      (*hooks.out)[site] = std::vector<double>(block, block + count);
    }
  }

  void hook_positions(Hooks& hooks, SiteKind kind, int layer, Vec& x, int n) const {
    const std::size_t d = static_cast<std::size_t>(spec_.d_model);
    for (int t = 0; t < n; ++t) {
      const ActivationSite s = kind == SiteKind::ResidPre ? ActivationSite::resid_pre(layer, t)
                                                          : ActivationSite::mlp_out(layer, t);
      if (hooks.interventions.count(s) || hooks.capture.count(s)) hook_rows(hooks, s, x.data(), d, t, 1);
    }
  }

  std::vector<double> forward(const std::vector<int>& ids, Hooks& hooks) const {
    const int n = static_cast<int>(ids.size());
    const int d = spec_.d_model, dh = spec_.d_head, H = spec_.n_heads, m = cfg_.d_mlp, V = spec_.vocab_size;
    const std::size_t ud = static_cast<std::size_t>(d), udh = static_cast<std::size_t>(dh);

    Vec x(static_cast<std::size_t>(n) * ud);
    for (int t = 0; t < n; ++t) {
      std::copy_n(embed_.begin() + static_cast<std::ptrdiff_t>(ids[t]) * d, d, x.begin() + t * d);
    }

    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    for (int l = 0; l < spec_.n_layers; ++l) {
      const Layer& L = layers_[static_cast<std::size_t>(l)];
      hook_positions(hooks, SiteKind::ResidPre, l, x, n);

      std::vector<Vec> normed(static_cast<std::size_t>(n));
      for (int t = 0; t < n; ++t) normed[t] = rms_norm(&x[t * ud], L.attn_gain);

      Vec attn_out(static_cast<std::size_t>(n) * ud, Scalar(0));
      for (int h = 0; h < H; ++h) {
        Vec q(n * udh, 0), k(n * udh, 0), v(n * udh, 0);
        const std::size_t wbase = static_cast<std::size_t>(h) * ud * udh;
        for (int t = 0; t < n; ++t) {
          for (int i = 0; i < d; ++i) {
            const Scalar xi = normed[t][i];
            const std::size_t row = wbase + static_cast<std::size_t>(i) * udh;
            for (int j = 0; j < dh; ++j) {
              q[t * udh + j] += xi * L.wq[row + j];
              k[t * udh + j] += xi * L.wk[row + j];
              v[t * udh + j] += xi * L.wv[row + j];
            }
          }
          rotate(&q[t * udh], t);
          rotate(&k[t * udh], t);
        }

        AttentionMatrix pattern{l, h, n, std::vector<double>(static_cast<std::size_t>(n) * n, 0.0)};
        Vec z(n * udh, 0);
        for (int t = 0; t < n; ++t) {
          Vec w(static_cast<std::size_t>(t) + 1);
          Scalar mx = -std::numeric_limits<Scalar>::infinity();
          for (int s = 0; s <= t; ++s) {
            Scalar dot = 0;
            for (int j = 0; j < dh; ++j) dot += q[t * udh + j] * k[s * udh + j];
            w[s] = dot * scale;
            mx = std::max(mx, w[s]);
          }
          Scalar sum = 0;
          for (int s = 0; s <= t; ++s) {
            w[s] = std::exp(w[s] - mx);
            sum += w[s];
          }
          for (int s = 0; s <= t; ++s) {
            w[s] /= sum;
            pattern.at(t, s) = static_cast<double>(w[s]);
            for (int j = 0; j < dh; ++j) z[t * udh + j] += w[s] * v[s * udh + j];
          }
        }
        if (hooks.attention) hooks.attention->push_back(std::move(pattern));

        const ActivationSite whole = ActivationSite::head_output(l, h);
        if (hooks.interventions.count(whole) || hooks.capture.count(whole)) hook_rows(hooks, whole, z.data(), udh, 0, n);
        for (int t = 0; t < n; ++t) {
          const ActivationSite at = ActivationSite::head_output_at(l, h, t);
          if (hooks.interventions.count(at) || hooks.capture.count(at)) hook_rows(hooks, at, z.data(), udh, t, 1);
        }

        const std::size_t obase = static_cast<std::size_t>(h) * udh * ud;
        for (int t = 0; t < n; ++t) {
          for (int j = 0; j < dh; ++j) {
            const Scalar zj = z[t * udh + j];
            const std::size_t row = obase + static_cast<std::size_t>(j) * ud;
            for (int i = 0; i < d; ++i) attn_out[t * ud + i] += zj * L.wo[row + i];
          }
        }
      }
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += attn_out[i];

      Vec mlp(static_cast<std::size_t>(n) * ud, Scalar(0));
      for (int t = 0; t < n; ++t) {
        const Vec hn = rms_norm(&x[t * ud], L.mlp_gain);
        Vec hidden(L.b_in);
        for (int i = 0; i < d; ++i) {
          const std::size_t row = static_cast<std::size_t>(i) * m;
          for (int j = 0; j < m; ++j) hidden[j] += hn[i] * L.w_in[row + j];
        }
        for (auto& hv : hidden) hv = gelu(hv);
        for (int i = 0; i < d; ++i) mlp[t * ud + i] = L.b_out[i];
        for (int j = 0; j < m; ++j) {
          const std::size_t row = static_cast<std::size_t>(j) * ud;
          for (int i = 0; i < d; ++i) mlp[t * ud + i] += hidden[j] * L.w_out[row + i];
        }
      }
      hook_positions(hooks, SiteKind::MlpOut, l, mlp, n);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += mlp[i];
    }

    const Vec fin = rms_norm(&x[static_cast<std::size_t>(n - 1) * ud], final_gain_);
    std::vector<double> logits(static_cast<std::size_t>(V), 0.0);
    for (int vtok = 0; vtok < V; ++vtok) {
      Scalar acc = 0;
      for (int i = 0; i < d; ++i) acc += fin[i] * unembed_[static_cast<std::size_t>(i) * V + vtok];
      logits[vtok] = static_cast<double>(acc);
    }
    return logits;
  }

  ToyConfig cfg_;
  std::unique_ptr<Tokenizer> tok_;
  ModelSpec spec_;
  Vec embed_;  // [vocab][d_model]
  std::vector<Layer> layers_;
  Vec final_gain_;
  Vec unembed_;  // [d_model][vocab]
};

inline std::unique_ptr<Model> build_toy_model(const ToyConfig& cfg) {
  if (cfg.precision == "float64") return std::make_unique<ToyTransformer<double>>(cfg);
  if (cfg.precision == "float32") return std::make_unique<ToyTransformer<float>>(cfg);
  throw ConfigError("unknown precision '" + cfg.precision + "' (expected float64|float32)");
}

inline std::unique_ptr<Model> build_toy_model(std::uint64_t seed, int n_layers = 4, int n_heads = 2, int d_model = 16) {
  ToyConfig cfg;
  cfg.seed = seed;
  cfg.n_layers = n_layers;
  cfg.n_heads = n_heads;
  cfg.d_model = d_model;
  return build_toy_model(cfg);
}

}  // namespace plmi
