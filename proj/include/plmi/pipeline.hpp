#pragma once

// End-to-end runs: config (de)serialization, the staged pipeline
// gen -> filter -> sweeps -> ablations -> aggregate -> heads -> report,
// checksum-keyed resume, and the run manifest.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "plmi/dataset.hpp"
#include "plmi/errors.hpp"
#include "plmi/figures.hpp"
#include "plmi/filter.hpp"
#include "plmi/hash.hpp"
#include "plmi/heads.hpp"
#include "plmi/io.hpp"
#include "plmi/metrics.hpp"
#include "plmi/patching.hpp"
#include "plmi/toy_model.hpp"

namespace plmi {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kModelCacheEnv = "PLMI_MODEL_CACHE";

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

struct ModelConfig {
  std::string id = "toy";
  std::uint64_t seed = 0;
  int n_layers = 4;
  int n_heads = 2;
  int d_model = 16;
  int d_mlp = 64;
  int context_limit = 64;
  std::string precision = "float64";
  std::string tokenizer = "word";
  std::string device = "cpu";
};

struct SweepSelection {
  std::vector<Granularity> granularities{Granularity::Resid, Granularity::Head, Granularity::Mlp};
  InterventionMode mlp_mode = InterventionMode::ReplaceFromCache;
  int max_pairs = -1;  // -1: every analysed pair
};

struct AblationConfig {
  std::vector<Region> regions{Region::Facts, Region::Expression, Region::Query};
  std::vector<AblationMetric> metrics{AblationMetric::DLD, AblationMetric::RLD};
  AblationScope scope = AblationScope::SingleLayer;
  int max_pairs = -1;
};

struct ExperimentConfig {
  ModelConfig model;
  CorpusConfig corpus;
  int corpus_limit = -1;  // seeded subsample of the generated corpus; -1 keeps all
  SweepSelection sweeps;
  AblationConfig ablation;
  std::string groups = "proportional";
  Thresholds thresholds;
  PersistenceOptions persistence;
  fs::path output_dir = "runs/default";
  std::uint64_t seed = kDefaultSeed;
  bool force = false;  // analyse every generated pair, not only the retained ones
};

namespace detail {

template <typename T, typename F>
Json names(const std::vector<T>& v, F&& f) {
  Json a = Json::array();
  for (const auto& x : v) a.push_back(f(x));
  return a;
}

inline std::string scope_name(AblationScope s) { return s == AblationScope::SingleLayer ? "layer" : "all_layers"; }

inline AblationScope scope_from_string(std::string_view s) {
  if (s == "layer") return AblationScope::SingleLayer;
  if (s == "all_layers") return AblationScope::AllLayers;
  throw ConfigError("unknown ablation scope '" + std::string(s) + "' (expected layer|all_layers)");
}

inline void check_keys(const Json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [k, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
      throw ConfigError(std::string(where) + ": unknown key '" + k + "'");
    }
  }
}

}  // namespace detail

inline Json to_json(const ExperimentConfig& c, bool with_output_dir = true) {
  Json quotas;
  for (const auto& [key, n] : c.corpus.quotas) {
    quotas[std::string(to_string(key.first)) + "/" + std::string(to_string(key.second))] = n;
  }
  Json j;
  j["model"] = Json{{"id", c.model.id},
                    {"seed", c.model.seed},
                    {"n_layers", c.model.n_layers},
                    {"n_heads", c.model.n_heads},
                    {"d_model", c.model.d_model},
                    {"d_mlp", c.model.d_mlp},
                    {"context_limit", c.model.context_limit},
                    {"precision", c.model.precision},
                    {"tokenizer", c.model.tokenizer},
                    {"device", c.model.device}};
  j["corpus"] = Json{{"rules", detail::names(c.corpus.rules, [](auto r) { return to_string(r); })},
                     {"depths", detail::names(c.corpus.depths, [](auto d) { return to_string(d); })},
                     {"style", to_string(c.corpus.render.style)},
                     {"negation", to_string(c.corpus.render.negation)},
                     {"templates", to_string(c.corpus.templates)},
                     {"exhaustive", c.corpus.exhaustive},
                     {"flips", c.corpus.flips},
                     {"limit", c.corpus_limit},
                     {"quotas", quotas}};
  j["sweeps"] = Json{{"granularities", detail::names(c.sweeps.granularities, [](auto g) { return to_string(g); })},
                     {"mlp_mode", to_string(c.sweeps.mlp_mode)},
                     {"max_pairs", c.sweeps.max_pairs}};
  j["ablation"] = Json{{"regions", detail::names(c.ablation.regions, [](auto r) { return to_string(r); })},
                       {"metrics", detail::names(c.ablation.metrics, [](auto m) { return to_string(m); })},
                       {"scope", detail::scope_name(c.ablation.scope)},
                       {"max_pairs", c.ablation.max_pairs}};
  j["groups"] = c.groups;
  j["thresholds"] = to_json(c.thresholds);
  j["persistence"] = Json{{"early_fraction", c.persistence.early_fraction},
                          {"require_median", c.persistence.require_median}};
  j["seed"] = c.seed;
  j["force"] = c.force;
  if (with_output_dir) j["output_dir"] = c.output_dir.generic_string();
  return j;
}

// Missing keys keep their defaults; unknown keys are rejected.
inline ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  try {
    detail::check_keys(j, "config",
                       {"model", "corpus", "sweeps", "ablation", "groups", "thresholds", "persistence", "output_dir",
                        "seed", "force"});
    c.force = j.value("force", c.force);
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("model")) {
      const auto& m = j["model"];
      detail::check_keys(m, "model",
                         {"id", "seed", "n_layers", "n_heads", "d_model", "d_mlp", "context_limit", "precision",
                          "tokenizer", "device"});
      c.model.id = m.value("id", c.model.id);
      c.model.seed = m.value("seed", c.model.seed);
      c.model.n_layers = m.value("n_layers", c.model.n_layers);
      c.model.n_heads = m.value("n_heads", c.model.n_heads);
      c.model.d_model = m.value("d_model", c.model.d_model);
      c.model.d_mlp = m.value("d_mlp", c.model.d_mlp);
      c.model.context_limit = m.value("context_limit", c.model.context_limit);
      c.model.precision = m.value("precision", c.model.precision);
      c.model.tokenizer = m.value("tokenizer", c.model.tokenizer);
      c.model.device = m.value("device", c.model.device);
    }
    if (j.contains("corpus")) {
      const auto& k = j["corpus"];
      detail::check_keys(k, "corpus",
                         {"rules", "depths", "style", "negation", "templates", "exhaustive", "flips", "limit", "quotas"});
      if (k.contains("rules")) {
        c.corpus.rules.clear();
        for (const auto& r : k["rules"]) c.corpus.rules.push_back(rule_from_string(r.get<std::string>()));
      }
      if (k.contains("depths")) {
        c.corpus.depths.clear();
        for (const auto& d : k["depths"]) c.corpus.depths.push_back(depth_from_string(d.get<std::string>()));
      }
      if (k.contains("style")) c.corpus.render.style = value_style_from_string(k["style"].get<std::string>());
      if (k.contains("negation")) c.corpus.render.negation = negation_style_from_string(k["negation"].get<std::string>());
      if (k.contains("templates")) c.corpus.templates = template_set_from_string(k["templates"].get<std::string>());
      c.corpus.exhaustive = k.value("exhaustive", c.corpus.exhaustive);
      c.corpus.flips = k.value("flips", c.corpus.flips);
      c.corpus_limit = k.value("limit", c.corpus_limit);
      if (k.contains("quotas")) {
        for (const auto& [key, n] : k["quotas"].items()) {
          const auto slash = key.find('/');
          if (slash == std::string::npos) throw ConfigError("quota key '" + key + "' is not rule/depth");
          c.corpus.quotas[{rule_from_string(key.substr(0, slash)), depth_from_string(key.substr(slash + 1))}] =
              n.get<int>();
        }
      }
    }
    if (j.contains("sweeps")) {
      const auto& s = j["sweeps"];
      detail::check_keys(s, "sweeps", {"granularities", "mlp_mode", "max_pairs"});
      if (s.contains("granularities")) {
        c.sweeps.granularities.clear();
        for (const auto& g : s["granularities"]) c.sweeps.granularities.push_back(granularity_from_string(g.get<std::string>()));
      }
      if (s.contains("mlp_mode")) c.sweeps.mlp_mode = mode_from_string(s["mlp_mode"].get<std::string>());
      c.sweeps.max_pairs = s.value("max_pairs", c.sweeps.max_pairs);
    }
    if (j.contains("ablation")) {
      const auto& a = j["ablation"];
      detail::check_keys(a, "ablation", {"regions", "metrics", "scope", "max_pairs"});
      if (a.contains("regions")) {
        c.ablation.regions.clear();
        for (const auto& r : a["regions"]) c.ablation.regions.push_back(region_from_string(r.get<std::string>()));
      }
      if (a.contains("metrics")) {
        c.ablation.metrics.clear();
        for (const auto& m : a["metrics"]) c.ablation.metrics.push_back(metric_from_string(m.get<std::string>()));
      }
      if (a.contains("scope")) c.ablation.scope = detail::scope_from_string(a["scope"].get<std::string>());
      c.ablation.max_pairs = a.value("max_pairs", c.ablation.max_pairs);
    }
    c.groups = j.value("groups", c.groups);
    if (j.contains("thresholds")) c.thresholds = thresholds_from_json(j["thresholds"]);
    if (j.contains("persistence")) {
      const auto& p = j["persistence"];
      detail::check_keys(p, "persistence", {"early_fraction", "require_median"});
      c.persistence.early_fraction = p.value("early_fraction", c.persistence.early_fraction);
      c.persistence.require_median = p.value("require_median", c.persistence.require_median);
    }
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.corpus.seed = c.seed;
  return c;
}

inline ExperimentConfig load_config(const fs::path& p) {
  Json j;
  try {
    j = Json::parse(read_file(p));
  } catch (const Json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return config_from_json(j);
}

// Hash over the canonical form; the output directory does not take part.
inline std::string config_hash(const ExperimentConfig& c) { return sha256_hex(to_json(c, false).dump()); }

inline void validate_config(const ExperimentConfig& c) {
  if (c.model.n_layers < 3) throw ConfigError("layer grouping needs at least 3 layers");
  if (c.groups == "paper36" && c.model.n_layers != 36) {
    throw ConfigError("groups 'paper36' needs a 36-layer model; this config has " + std::to_string(c.model.n_layers));
  }
  if (c.groups != "paper36" && c.groups != "proportional") throw ConfigError("unknown groups scheme '" + c.groups + "'");
  if (c.corpus.flips < 1) throw ConfigError("corpus.flips must be >= 1");
  make_tokenizer(c.model.tokenizer);
  if (c.model.precision != "float64" && c.model.precision != "float32") {
    throw ConfigError("unknown precision '" + c.model.precision + "'");
  }
}

// ---------------------------------------------------------------------------
// Models

inline ToyConfig toy_config(const ModelConfig& m) {
  ToyConfig t;
  t.seed = m.seed;
  t.n_layers = m.n_layers;
  t.n_heads = m.n_heads;
  t.d_model = m.d_model;
  t.d_mlp = m.d_mlp;
  t.context_limit = m.context_limit;
  t.precision = m.precision;
  t.tokenizer = m.tokenizer;
  return t;
}

inline std::unique_ptr<Model> load_model(const ModelConfig& m) {
  if (m.id == "toy") return build_toy_model(toy_config(m));
  const char* env = std::getenv(kModelCacheEnv);
  const std::string where = env ? (fs::path(env) / m.id).string() : "<unset " + std::string(kModelCacheEnv) + ">";
  throw ModelUnavailable("model '" + m.id + "' is not available (looked in " + where +
                         "); this build ships only the 'toy' backend");
}

// ---------------------------------------------------------------------------
// Stage helpers shared by the pipeline and the CLI verbs

inline std::vector<ContrastPair> limit_pairs(std::vector<ContrastPair> pairs, int limit, std::uint64_t seed) {
  if (limit < 0 || static_cast<std::size_t>(limit) >= pairs.size()) return pairs;
  Rng rng(mix_seed(seed, "corpus-limit"));
  auto idx = rng.sample_indices(pairs.size(), static_cast<std::size_t>(limit));
  std::sort(idx.begin(), idx.end());
  std::vector<ContrastPair> out;
  for (auto i : idx) out.push_back(std::move(pairs[i]));
  return out;
}

inline Json to_json(const CorpusReport& r) {
  Json counts = Json::array();
  for (const auto& c : r.counts) {
    counts.push_back(Json{{"rule", to_string(c.rule)},
                          {"depth", to_string(c.depth)},
                          {"templates", c.templates},
                          {"pool", c.pool},
                          {"quota", c.quota},
                          {"emitted", c.emitted}});
  }
  return Json{{"requested_style", to_string(r.requested_style)},
              {"style", to_string(r.style)},
              {"one_hop", r.one_hop},
              {"two_hop", r.two_hop},
              {"total", r.total()},
              {"counts", counts},
              {"warnings", r.warnings}};
}

inline std::string sweep_file_name(const SweepGrid& g) {
  return sanitize_name(g.pair_id) + "." + std::string(to_string(g.granularity)) + ".json";
}

struct AblationSummary {
  Region region = Region::Facts;
  AblationMetric metric = AblationMetric::DLD;
  AblationScope scope = AblationScope::SingleLayer;
  std::vector<AblationProfile> profiles;
  std::vector<std::optional<double>> layer_mean;  // over non-degenerate pairs
  int degenerate = 0;
};

inline AblationSummary run_ablations(const std::vector<ContrastPair>& pairs, Model& model, const AnswerTokens& answers,
                                     Region region, AblationMetric metric, AblationScope scope) {
  AblationSummary s;
  s.region = region;
  s.metric = metric;
  s.scope = scope;
  const int L = model.spec().n_layers;
  std::vector<double> sum(static_cast<std::size_t>(L), 0.0);
  std::vector<int> n(static_cast<std::size_t>(L), 0);
  for (const auto& p : pairs) {
    const AblationTarget target = ablation_target(p);
    AblationProfile prof;
    if (scope == AblationScope::SingleLayer) {
      prof = ablation_profile(target, model, answers, region, metric);
    } else {
      // Cumulative: every layer ablated at once, reported in slot 0.
      prof.target_id = target.id;
      prof.region = region;
      prof.metric = metric;
      try {
        const auto r = ablate_region(target, model, answers, region, 0, metric, AblationScope::AllLayers);
        prof.ld_origin = r.ld_origin;
        prof.ld_after = {r.ld_after};
        prof.value = {r.value};
      } catch (const DegenerateBaseline& e) {
        prof.ld_origin = e.ld_origin;
        prof.ld_after = {e.ld_origin};
        prof.value = {std::nullopt};
      }
    }
    for (std::size_t l = 0; l < prof.value.size(); ++l) {
      if (!prof.value[l]) continue;
      sum[l] += *prof.value[l];
      ++n[l];
    }
    for (const auto& v : prof.value) {
      if (!v) {
        ++s.degenerate;
        break;
      }
    }
    s.profiles.push_back(std::move(prof));
  }
  const std::size_t slots = scope == AblationScope::SingleLayer ? static_cast<std::size_t>(L) : 1;
  for (std::size_t l = 0; l < slots; ++l) s.layer_mean.push_back(n[l] ? std::optional(sum[l] / n[l]) : std::nullopt);
  return s;
}

inline Json to_json(const AblationSummary& s) {
  Json profiles = Json::array();
  for (const auto& p : s.profiles) profiles.push_back(to_json(p));
  Json mean = Json::array();
  for (const auto& v : s.layer_mean) mean.push_back(v ? Json(*v) : Json(nullptr));
  return Json{{"region", to_string(s.region)},
              {"metric", to_string(s.metric)},
              {"scope", detail::scope_name(s.scope)},
              {"degenerate_pairs", s.degenerate},
              {"layer_mean", mean},
              {"profiles", profiles}};
}

inline std::string ablation_file_name(Region r, AblationMetric m) {
  return std::string(to_string(r)) + "." + std::string(to_string(m)) + ".json";
}

struct TableFiles {
  std::vector<std::string> written;  // relative paths
};

inline std::string retention_tsv_or_header(const RetentionReport& r) {
  return r.overall.total == 0 ? std::string("scope\ttotal\tretained\trate\n") : retention_tsv(r);
}

// Delimited text plus JSON mirror of each table; empty inputs give headers only.
inline std::vector<std::string> export_tables(const fs::path& dir, const RetentionReport* retention,
                                              const AggregateTable* aggregate,
                                              const std::vector<Retrospection>* retro,
                                              const PersistenceOptions& persistence, const HeadCounts* counts) {
  std::vector<std::string> out;
  auto put = [&](const std::string& rel, const std::string& data) {
    write_file(dir / rel, data);
    out.push_back(rel);
  };
  if (retention) {
    put("tables/retention.tsv", retention_tsv_or_header(*retention));
    put("tables/retention.json",
        (retention->overall.total == 0 ? Json::array() : to_json(*retention)).dump(2) + "\n");
  }
  if (aggregate) {
    put("tables/aggregate.tsv", aggregate_tsv(*aggregate));
    put("tables/aggregate.json", to_json(*aggregate).dump(2) + "\n");
  }
  if (retro) {
    put("tables/retrospection.tsv", retrospection_tsv(*retro));
    put("tables/retrospection.json", to_json(*retro, persistence).dump(2) + "\n");
  }
  if (counts) {
    put("tables/head_counts.tsv", head_counts_tsv(*counts));
    put("tables/head_counts.json", to_json(*counts).dump(2) + "\n");
  }
  return out;
}

struct FigureOutput {
  std::vector<std::string> written;  // relative to the results root
  std::vector<std::string> warnings;
};

inline std::vector<fs::path> sorted_files(const fs::path& dir, std::string_view ext) {
  std::vector<fs::path> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Reads persisted results under `root` and writes figures to root/figures.
inline FigureOutput emit_figures(const fs::path& root, std::string_view config_hash) {
  FigureOutput f;
  auto put = [&](const std::string& rel, const std::string& svg) {
    write_file(root / rel, svg);
    f.written.push_back(rel);
  };
  const auto sweeps = sorted_files(root / "results/sweeps", ".json");
  if (sweeps.empty()) f.warnings.push_back("heatmaps: no sweep results");
  for (const auto& p : sweeps) {
    const SweepGrid g = grid_from_json(Json::parse(read_file(p)));
    put("figures/sweeps/" + p.stem().string() + ".svg", heatmap_svg(g, config_hash));
  }
  const auto ablations = sorted_files(root / "results/ablations", ".json");
  if (ablations.empty()) f.warnings.push_back("ablation bars: no ablation results");
  for (const auto& p : ablations) {
    const Json j = Json::parse(read_file(p));
    std::vector<double> means;
    for (const auto& v : j.at("layer_mean")) means.push_back(v.is_null() ? 0.0 : v.get<double>());
    if (j.at("profiles").empty()) {
      f.warnings.push_back("ablation bars: " + p.filename().string() + " has no pairs");
      continue;
    }
    put("figures/ablation_" + p.stem().string() + ".svg",
        layer_bars_svg(means,
                       "Zero-ablation of MLP outputs, " + j.at("region").get<std::string>() + " region (" +
                           j.at("metric").get<std::string>() + ")",
                       config_hash));
  }
  const fs::path agg = root / "tables/aggregate.json";
  if (fs::exists(agg)) {
    const AggregateTable t = aggregate_from_json(Json::parse(read_file(agg)));
    if (t.rows.empty()) f.warnings.push_back("category bars: aggregate table is empty");
    else put("figures/aggregate.svg", aggregate_bars_svg(t, config_hash));
  } else {
    f.warnings.push_back("category bars: no aggregate table");
  }
  const fs::path hc = root / "tables/head_counts.json";
  if (fs::exists(hc)) {
    const HeadCounts c = head_counts_from_json(Json::parse(read_file(hc)));
    if (c.n_prompts == 0) f.warnings.push_back("head counts: no prompts classified");
    else put("figures/head_counts.svg", head_counts_svg(c, config_hash));
  } else {
    f.warnings.push_back("head counts: no counts table");
  }
  return f;
}

// ---------------------------------------------------------------------------
// Manifest

struct FileEntry {
  std::string path;  // relative, '/'-separated
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct StageRecord {
  std::string name;
  std::string status;  // run | skipped | failed
  double seconds = 0;
  std::string fingerprint;
  std::vector<FileEntry> inputs;
  std::vector<FileEntry> outputs;
  std::vector<std::string> warnings;
  std::string error;
};

struct RunManifest {
  std::string config_hash;
  std::map<std::string, std::string> versions;
  std::vector<StageRecord> stages;
  std::vector<FileEntry> files;

  const StageRecord* stage(std::string_view name) const {
    for (const auto& s : stages) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }
};

inline FileEntry file_entry(const fs::path& root, const std::string& rel) {
  const fs::path p = root / rel;
  return FileEntry{rel, sha256_file(p), fs::file_size(p)};
}

inline Json to_json(const FileEntry& f) { return Json{{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}}; }

inline FileEntry file_entry_from_json(const Json& j) {
  return FileEntry{j.at("path").get<std::string>(), j.at("sha256").get<std::string>(),
                   j.at("bytes").get<std::uintmax_t>()};
}

inline Json to_json(const RunManifest& m) {
  Json stages = Json::array();
  for (const auto& s : m.stages) {
    Json in = Json::array(), out = Json::array();
    for (const auto& f : s.inputs) in.push_back(to_json(f));
    for (const auto& f : s.outputs) out.push_back(to_json(f));
    Json st{{"name", s.name},       {"status", s.status}, {"seconds", s.seconds}, {"fingerprint", s.fingerprint},
            {"inputs", in},         {"outputs", out},     {"warnings", s.warnings}};
    if (!s.error.empty()) st["error"] = s.error;
    stages.push_back(st);
  }
  Json files = Json::array();
  for (const auto& f : m.files) files.push_back(to_json(f));
  Json versions;
  for (const auto& [k, v] : m.versions) versions[k] = v;
  return Json{{"config_hash", m.config_hash}, {"versions", versions}, {"stages", stages}, {"files", files}};
}

inline RunManifest manifest_from_json(const Json& j) {
  RunManifest m;
  m.config_hash = j.at("config_hash").get<std::string>();
  for (const auto& [k, v] : j.at("versions").items()) m.versions[k] = v.get<std::string>();
  for (const auto& s : j.at("stages")) {
    StageRecord r;
    r.name = s.at("name").get<std::string>();
    r.status = s.at("status").get<std::string>();
    r.seconds = s.at("seconds").get<double>();
    r.fingerprint = s.at("fingerprint").get<std::string>();
    for (const auto& f : s.at("inputs")) r.inputs.push_back(file_entry_from_json(f));
    for (const auto& f : s.at("outputs")) r.outputs.push_back(file_entry_from_json(f));
    r.warnings = s.at("warnings").get<std::vector<std::string>>();
    if (s.contains("error")) r.error = s.at("error").get<std::string>();
    m.stages.push_back(std::move(r));
  }
  for (const auto& f : j.at("files")) m.files.push_back(file_entry_from_json(f));
  return m;
}

inline std::optional<RunManifest> read_manifest(const fs::path& dir) {
  const fs::path p = dir / "manifest.json";
  if (!fs::exists(p)) return std::nullopt;
  try {
    return manifest_from_json(Json::parse(read_file(p)));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

// Files whose current checksum differs from the manifest (or that vanished).
inline std::vector<std::string> verify_manifest(const fs::path& dir, const RunManifest& m) {
  std::vector<std::string> bad;
  for (const auto& f : m.files) {
    const fs::path p = dir / f.path;
    if (!fs::exists(p) || sha256_file(p) != f.sha256) bad.push_back(f.path);
  }
  return bad;
}

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineOptions {
  bool resume = true;
  std::function<void(const std::string&)> log;  // progress lines; may be empty
};

namespace detail {

class Runner {
 public:
  Runner(const ExperimentConfig& cfg, const PipelineOptions& opt)
      : cfg_(cfg), opt_(opt), root_(cfg.output_dir), hash_(config_hash(cfg)) {
    manifest_.config_hash = hash_;
    manifest_.versions = {{"plmi", kVersion},
                          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
    if (opt.resume) previous_ = read_manifest(root_);
    if (previous_ && previous_->config_hash != hash_) previous_.reset();
  }

  RunManifest run() {
    fs::create_directories(root_);
    write_file(root_ / "config.json", to_json(cfg_).dump(2) + "\n");

    stage("gen", {}, [&](StageRecord& rec) { return gen(rec); });
    stage("filter", {"data/pairs.jsonl"}, [&](StageRecord& rec) { return filter(rec); });
    stage("sweeps", {"data/analysis.jsonl"}, [&](StageRecord& rec) { return sweeps(rec); });
    stage("ablations", {"data/analysis.jsonl"}, [&](StageRecord& rec) { return ablations(rec); });
    stage("aggregate", with_results({"data/analysis.jsonl"}, "results/sweeps"),
          [&](StageRecord& rec) { return aggregate(rec); });
    stage("heads", {"data/analysis.jsonl"}, [&](StageRecord& rec) { return heads(rec); });
    std::vector<std::string> report_inputs = with_results(with_results({}, "results/sweeps"), "results/ablations");
    for (const char* t : {"tables/aggregate.json", "tables/head_counts.json"}) report_inputs.push_back(t);
    stage("report", report_inputs, [&](StageRecord& rec) { return report(rec); });
    finish();
    return manifest_;
  }

 private:
  using Body = std::function<std::vector<std::string>(StageRecord&)>;

  void log(const std::string& s) const {
    if (opt_.log) opt_.log(s);
  }

  std::vector<std::string> with_results(std::vector<std::string> v, const std::string& sub) const {
    for (const auto& p : sorted_files(root_ / sub, ".json")) v.push_back(sub + "/" + p.filename().string());
    return v;
  }

  void stage(const std::string& name, const std::vector<std::string>& inputs, const Body& body) {
    StageRecord rec;
    rec.name = name;
    std::string fp = hash_ + "\n" + name + "\n";
    try {
      for (const auto& in : inputs) {
        if (!fs::exists(root_ / in)) continue;
        rec.inputs.push_back(file_entry(root_, in));
        fp += in + " " + rec.inputs.back().sha256 + "\n";
      }
    } catch (const std::exception& e) {
      fail(rec, e.what());
    }
    rec.fingerprint = sha256_hex(fp);

    if (previous_) {
      const StageRecord* prev = previous_->stage(name);
      if (prev && prev->status != "failed" && prev->fingerprint == rec.fingerprint && outputs_intact(*prev)) {
        rec.status = "skipped";
        rec.outputs = prev->outputs;
        rec.warnings = prev->warnings;
        log(name + ": unchanged, skipped");
        manifest_.stages.push_back(std::move(rec));
        return;
      }
    }

    log(name + ": running");
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::string> outs;
    try {
      outs = body(rec);
      for (const auto& o : outs) rec.outputs.push_back(file_entry(root_, o));
    } catch (const std::exception& e) {
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      fail(rec, e.what());
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.status = "run";
    for (const auto& w : rec.warnings) log(name + ": warning: " + w);
    manifest_.stages.push_back(std::move(rec));
  }

  [[noreturn]] void fail(StageRecord& rec, const std::string& what) {
    rec.status = "failed";
    rec.error = what;
    manifest_.stages.push_back(rec);
    finish();
    throw StageError(rec.name, what);
  }

  bool outputs_intact(const StageRecord& prev) const {
    for (const auto& f : prev.outputs) {
      const fs::path p = root_ / f.path;
      if (!fs::exists(p) || sha256_file(p) != f.sha256) return false;
    }
    return true;
  }

  void finish() {
    manifest_.files.clear();
    for (const auto& e : fs::recursive_directory_iterator(root_)) {
      if (!e.is_regular_file()) continue;
      const std::string rel = fs::relative(e.path(), root_).generic_string();
      if (rel == "manifest.json") continue;
      manifest_.files.push_back(file_entry(root_, rel));
    }
    std::sort(manifest_.files.begin(), manifest_.files.end(),
              [](const FileEntry& a, const FileEntry& b) { return a.path < b.path; });
    write_file(root_ / "manifest.json", to_json(manifest_).dump(2) + "\n");
  }

  Model& model() {
    if (!model_) model_ = load_model(cfg_.model);
    return *model_;
  }

  const Tokenizer& tokenizer() {
    if (!tok_) tok_ = make_tokenizer(cfg_.model.tokenizer);
    return *tok_;
  }

  AnswerTokens answers(const std::vector<ContrastPair>& pairs) {
    const ValueStyle style = pairs.empty() ? cfg_.corpus.render.style : pairs.front().style;
    return answer_token_ids(model().tokenizer(), style);
  }

  std::vector<ContrastPair> analysed() { return read_pairs(root_ / "data/analysis.jsonl"); }

  static std::vector<ContrastPair> head_n(std::vector<ContrastPair> v, int n) {
    if (n >= 0 && static_cast<std::size_t>(n) < v.size()) v.resize(static_cast<std::size_t>(n));
    return v;
  }

  void clear_dir(const std::string& rel) { fs::remove_all(root_ / rel); }

  std::vector<std::string> gen(StageRecord& rec) {
    Corpus corpus = generate_corpus(cfg_.corpus, tokenizer());
    rec.warnings = corpus.report.warnings;
    const auto pairs = limit_pairs(std::move(corpus.pairs), cfg_.corpus_limit, cfg_.seed);
    write_pairs(root_ / "data/pairs.jsonl", pairs);
    write_file(root_ / "data/corpus_report.json", to_json(corpus.report).dump(2) + "\n");
    return {"data/pairs.jsonl", "data/corpus_report.json"};
  }

  std::vector<std::string> filter(StageRecord& rec) {
    const auto pairs = read_pairs(root_ / "data/pairs.jsonl");
    Model& m = model();
    FilterResult fr;
    if (!pairs.empty()) fr = filter_by_model(pairs, m, answers(pairs));
    if (fr.retained.empty()) rec.warnings.push_back("no pairs retained");
    write_pairs(root_ / "data/retained.jsonl", fr.retained);
    if (cfg_.force) rec.warnings.push_back("force: analysing all " + std::to_string(pairs.size()) + " pairs");
    write_pairs(root_ / "data/analysis.jsonl", cfg_.force ? pairs : fr.retained);
    auto outs = export_tables(root_, &fr.report, nullptr, nullptr, cfg_.persistence, nullptr);
    outs.insert(outs.begin(), {"data/retained.jsonl", "data/analysis.jsonl"});
    return outs;
  }

  std::vector<std::string> sweeps(StageRecord& rec) {
    clear_dir("results/sweeps");
    const auto pairs = head_n(analysed(), cfg_.sweeps.max_pairs);
    std::vector<std::string> outs;
    if (pairs.empty()) {
      rec.warnings.push_back("no pairs to sweep");
      return outs;
    }
    Model& m = model();
    const AnswerTokens ans = answers(pairs);
    BaselineOptions bo;
    bo.force = cfg_.force;
    for (const auto& p : pairs) {
      const PairBaseline base = run_pair_baseline(p, m, ans, bo);
      for (const auto& w : base.warnings) rec.warnings.push_back(w);
      for (Granularity g : cfg_.sweeps.granularities) {
        const InterventionMode mode = g == Granularity::Mlp ? cfg_.sweeps.mlp_mode : InterventionMode::ReplaceFromCache;
        const SweepGrid grid = sweep(p, m, ans, base, g, mode);
        const std::string rel = "results/sweeps/" + sweep_file_name(grid);
        write_file(root_ / rel, to_json(grid).dump() + "\n");
        outs.push_back(rel);
      }
    }
    return outs;
  }

  std::vector<std::string> ablations(StageRecord& rec) {
    clear_dir("results/ablations");
    const auto pairs = head_n(analysed(), cfg_.ablation.max_pairs);
    std::vector<std::string> outs;
    if (pairs.empty()) {
      rec.warnings.push_back("no pairs to ablate");
      return outs;
    }
    Model& m = model();
    const AnswerTokens ans = answers(pairs);
    for (Region r : cfg_.ablation.regions) {
      for (AblationMetric met : cfg_.ablation.metrics) {
        const AblationSummary s = run_ablations(pairs, m, ans, r, met, cfg_.ablation.scope);
        if (s.degenerate) {
          rec.warnings.push_back(std::string(to_string(r)) + "/" + std::string(to_string(met)) + ": " +
                                 std::to_string(s.degenerate) + " pairs with degenerate baseline");
        }
        const std::string rel = "results/ablations/" + ablation_file_name(r, met);
        write_file(root_ / rel, to_json(s).dump() + "\n");
        outs.push_back(rel);
      }
    }
    return outs;
  }

  std::vector<std::string> aggregate(StageRecord& rec) {
    const auto pairs = analysed();
    std::map<std::string, const ContrastPair*> by_id;
    for (const auto& p : pairs) by_id[sanitize_name(p.id)] = &p;
    std::vector<SweepGrid> grids;
    std::vector<std::vector<TokenAnnotation>> anns;
    for (const auto& f : sorted_files(root_ / "results/sweeps", ".json")) {
      SweepGrid g = grid_from_json(Json::parse(read_file(f)));
      if (g.granularity != Granularity::Resid) continue;
      auto it = by_id.find(sanitize_name(g.pair_id));
      if (it == by_id.end()) throw Error(g.pair_id + ": sweep result without an analysed pair");
      anns.push_back(it->second->annotations);
      grids.push_back(std::move(g));
    }
    const auto groups = make_layer_groups(cfg_.model.n_layers, cfg_.groups);
    AggregateTable table;
    table.groups = groups;
    std::vector<Retrospection> retro;
    Json stage_means = Json::array();
    if (grids.empty()) {
      rec.warnings.push_back("no residual sweeps to aggregate");
    } else {
      table = mean_abs_dld_by_category(grids, anns, groups);
      retro = retrospection_score(table, cfg_.persistence);
      for (const auto& g : grids) {
        const StageMeans sm = per_token_stage_mean(g, groups);
        Json per_group;
        for (std::size_t i = 0; i < groups.size(); ++i) per_group[groups[i].name] = sm.values[i];
        stage_means.push_back(Json{{"pair_id", g.pair_id}, {"tokens", g.col_labels}, {"stages", per_group}});
      }
    }
    auto outs = export_tables(root_, nullptr, &table, &retro, cfg_.persistence, nullptr);
    write_file(root_ / "tables/stage_means.json", stage_means.dump(2) + "\n");
    outs.push_back("tables/stage_means.json");
    return outs;
  }

  std::vector<std::string> heads(StageRecord& rec) {
    clear_dir("results/heads");
    const auto pairs = analysed();
    HeadCounts counts;
    std::vector<std::string> outs;
    if (pairs.empty()) {
      rec.warnings.push_back("no prompts for head classification");
    } else {
      Model& m = model();
      for (const auto& p : pairs) {
        const auto hs = classify_prompt(p.clean.prompt, p.annotations, m, cfg_.thresholds);
        const std::string rel = "results/heads/" + sanitize_name(p.id) + ".json";
        write_file(root_ / rel, head_report_json(p.id, hs, cfg_.thresholds).dump() + "\n");
        outs.push_back(rel);
      }
      counts = count_heads_per_layer(pairs, m, cfg_.thresholds);
    }
    auto tables = export_tables(root_, nullptr, nullptr, nullptr, cfg_.persistence, &counts);
    outs.insert(outs.end(), tables.begin(), tables.end());
    return outs;
  }

  std::vector<std::string> report(StageRecord& rec) {
    clear_dir("figures");
    FigureOutput f = emit_figures(root_, hash_);
    rec.warnings = f.warnings;
    return f.written;
  }

  const ExperimentConfig& cfg_;
  const PipelineOptions& opt_;
  fs::path root_;
  std::string hash_;
  RunManifest manifest_;
  std::optional<RunManifest> previous_;
  std::unique_ptr<Model> model_;
  std::unique_ptr<Tokenizer> tok_;
};

}  // namespace detail

// Any stage failure writes the partial manifest and throws StageError.
inline RunManifest run_pipeline(const ExperimentConfig& cfg, const PipelineOptions& opt = {}) {
  validate_config(cfg);
  detail::Runner runner(cfg, opt);
  return runner.run();
}

}  // namespace plmi
