#pragma once

// On-disk formats: JSONL pair datasets, per-sweep result JSON, activation
// cache blobs with JSON sidecars, and TSV/JSON tables.

#include <bit>
#include <cctype>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "plmi/dataset.hpp"
#include "plmi/errors.hpp"
#include "plmi/filter.hpp"
#include "plmi/hash.hpp"
#include "plmi/heads.hpp"
#include "plmi/metrics.hpp"
#include "plmi/model.hpp"
#include "plmi/patching.hpp"

namespace plmi {

using Json = nlohmann::ordered_json;

// Shortest round-trip decimal form.
inline std::string format_number(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// ---------------------------------------------------------------------------
// Pair datasets

inline Json to_json(const TokenAnnotation& a) {
  return Json{{"position", a.position}, {"region", to_string(a.region)}, {"category", to_string(a.category)}};
}

inline Json to_json(const ContrastPair& p) {
  Json ann = Json::array();
  for (const auto& a : p.annotations) ann.push_back(to_json(a));
  return Json{{"id", p.id},
              {"rule", to_string(p.rule)},
              {"depth", to_string(p.depth)},
              {"prompt_clean", p.clean.prompt},
              {"prompt_corrupt", p.corrupt.prompt},
              {"answer_clean", p.clean.answer},
              {"answer_corrupt", p.corrupt.answer},
              {"corrupted_fact_indices", p.corrupted_fact_indices},
              {"value_style", to_string(p.style)},
              {"annotations", ann},
              {"seed", p.seed}};
}

inline ContrastPair pair_from_json(const Json& j) {
  try {
    ContrastPair p;
    p.id = j.at("id").get<std::string>();
    p.rule = rule_from_string(j.at("rule").get<std::string>());
    p.depth = depth_from_string(j.at("depth").get<std::string>());
    p.style = value_style_from_string(j.at("value_style").get<std::string>());
    p.seed = j.at("seed").get<std::uint64_t>();
    p.corrupted_fact_indices = j.at("corrupted_fact_indices").get<std::vector<int>>();
    for (auto* s : {&p.clean, &p.corrupt}) {
      s->rule = p.rule;
      s->depth = p.depth;
      s->style = p.style;
    }
    p.clean.id = p.id + ".clean";
    p.corrupt.id = p.id + ".corrupt";
    p.clean.prompt = j.at("prompt_clean").get<std::string>();
    p.corrupt.prompt = j.at("prompt_corrupt").get<std::string>();
    p.clean.answer = j.at("answer_clean").get<bool>();
    p.corrupt.answer = j.at("answer_corrupt").get<bool>();
    for (const auto& a : j.at("annotations")) {
      p.annotations.push_back({a.at("position").get<int>(), region_from_string(a.at("region").get<std::string>()),
                               category_from_string(a.at("category").get<std::string>())});
    }
    return p;
  } catch (const Json::exception& e) {
    throw Error(std::string("malformed pair record: ") + e.what());
  }
}

inline std::string pairs_to_jsonl(const std::vector<ContrastPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) out += to_json(p).dump() + "\n";
  return out;
}

inline std::vector<ContrastPair> pairs_from_jsonl(std::string_view text) {
  std::vector<ContrastPair> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(pair_from_json(Json::parse(line)));
    } catch (const std::exception& e) {
      throw Error("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline void write_pairs(const std::filesystem::path& p, const std::vector<ContrastPair>& pairs) {
  write_file(p, pairs_to_jsonl(pairs));
}

inline std::vector<ContrastPair> read_pairs(const std::filesystem::path& p) { return pairs_from_jsonl(read_file(p)); }

// ---------------------------------------------------------------------------
// Sweep results

inline Json matrix_json(const std::vector<double>& v, int rows, int cols) {
  Json m = Json::array();
  for (int r = 0; r < rows; ++r) {
    Json row = Json::array();
    for (int c = 0; c < cols; ++c) row.push_back(v[static_cast<std::size_t>(r) * cols + c]);
    m.push_back(std::move(row));
  }
  return m;
}

inline Json to_json(const SweepGrid& g) {
  return Json{{"pair_id", g.pair_id},
              {"granularity", to_string(g.granularity)},
              {"mode", to_string(g.mode)},
              {"precision", g.precision},
              {"tolerance", g.tolerance},
              {"rows", g.rows},
              {"cols", g.cols},
              {"col_labels", g.col_labels},
              {"ld_clean", g.ld_clean},
              {"ld_baseline", g.ld_baseline},
              {"normalization", g.normalized ? "max_abs_per_layer" : "none"},
              {"grid", matrix_json(g.dld, g.rows, g.cols)},
              {"ld_patched", matrix_json(g.ld_patched, g.rows, g.cols)}};
}

inline SweepGrid grid_from_json(const Json& j) {
  try {
    SweepGrid g;
    g.pair_id = j.at("pair_id").get<std::string>();
    g.granularity = granularity_from_string(j.at("granularity").get<std::string>());
    g.mode = mode_from_string(j.at("mode").get<std::string>());
    g.precision = j.at("precision").get<std::string>();
    g.tolerance = j.at("tolerance").get<double>();
    g.rows = j.at("rows").get<int>();
    g.cols = j.at("cols").get<int>();
    g.col_labels = j.at("col_labels").get<std::vector<std::string>>();
    g.ld_clean = j.at("ld_clean").get<double>();
    g.ld_baseline = j.at("ld_baseline").get<double>();
    g.normalized = j.at("normalization").get<std::string>() != "none";
    for (const char* key : {"grid", "ld_patched"}) {
      auto& dst = std::strcmp(key, "grid") == 0 ? g.dld : g.ld_patched;
      const auto& m = j.at(key);
      if (static_cast<int>(m.size()) != g.rows) throw Error(std::string(key) + ": row count mismatch");
      for (const auto& row : m) {
        if (static_cast<int>(row.size()) != g.cols) throw Error(std::string(key) + ": column count mismatch");
        for (const auto& v : row) dst.push_back(v.get<double>());
      }
    }
    return g;
  } catch (const Json::exception& e) {
    throw Error(std::string("malformed sweep result: ") + e.what());
  }
}

inline Json to_json(const AblationProfile& p) {
  Json values = Json::array();
  for (const auto& v : p.value) values.push_back(v ? Json(*v) : Json(nullptr));
  return Json{{"id", p.target_id},      {"region", to_string(p.region)}, {"metric", to_string(p.metric)},
              {"ld_origin", p.ld_origin}, {"ld_after", p.ld_after},      {"value", values}};
}

inline AblationProfile ablation_from_json(const Json& j) {
  AblationProfile p;
  p.target_id = j.at("id").get<std::string>();
  p.region = region_from_string(j.at("region").get<std::string>());
  p.metric = metric_from_string(j.at("metric").get<std::string>());
  p.ld_origin = j.at("ld_origin").get<double>();
  p.ld_after = j.at("ld_after").get<std::vector<double>>();
  for (const auto& v : j.at("value")) p.value.push_back(v.is_null() ? std::nullopt : std::optional(v.get<double>()));
  return p;
}

// ---------------------------------------------------------------------------
// Activation caches: raw little-endian float64 blob plus JSON sidecar.

inline std::string site_list_hash(const ActivationCache& cache) {
  std::string s;
  for (const auto& [site, _] : cache) s += site.str() + "\n";
  return sha256_hex(s).substr(0, 16);
}

inline std::string sanitize_name(std::string_view s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_') ? c : '_';
  return out;
}

inline std::filesystem::path cache_stem(const std::filesystem::path& dir, std::string_view pair_id, std::string_view role,
                                        std::string_view site_hash) {
  return dir / (sanitize_name(pair_id) + "." + std::string(role) + "." + std::string(site_hash));
}

inline std::filesystem::path save_cache(const std::filesystem::path& dir, std::string_view pair_id,
                                        std::string_view role, const ActivationCache& cache, const ModelSpec& spec) {
  static_assert(std::endian::native == std::endian::little, "cache blobs assume a little-endian host");
  const std::string hash = site_list_hash(cache);
  const auto stem = cache_stem(dir, pair_id, role, hash);
  std::string blob;
  Json sites = Json::array();
  for (const auto& [site, v] : cache) {
    sites.push_back(Json{{"kind", to_string(site.kind)},
                         {"layer", site.layer},
                         {"head", site.head},
                         {"position", site.position},
                         {"offset", blob.size() / sizeof(double)},
                         {"length", v.size()}});
    blob.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  const Json side{{"pair_id", pair_id}, {"role", role},          {"site_hash", hash},
                  {"model_id", spec.model_id}, {"precision", spec.precision}, {"dtype", "float64"},
                  {"blob_sha256", sha256_hex(blob)}, {"sites", sites}};
  write_file(stem.string() + ".bin", blob);
  write_file(stem.string() + ".json", side.dump(2) + "\n");
  return stem;
}

inline SiteKind site_kind_from_string(std::string_view s) {
  for (SiteKind k : {SiteKind::ResidPre, SiteKind::HeadOutput, SiteKind::MlpOut}) {
    if (to_string(k) == s) return k;
  }
  throw Error("unknown site kind '" + std::string(s) + "'");
}

inline ActivationCache load_cache(const std::filesystem::path& stem) {
  const Json side = Json::parse(read_file(stem.string() + ".json"));
  const std::string blob = read_file(stem.string() + ".bin");
  if (sha256_hex(blob) != side.at("blob_sha256").get<std::string>()) throw Error(stem.string() + ": checksum mismatch");
  ActivationCache cache;
  for (const auto& s : side.at("sites")) {
    ActivationSite site{site_kind_from_string(s.at("kind").get<std::string>()), s.at("layer").get<int>(),
                        s.at("head").get<int>(), s.at("position").get<int>()};
    const auto off = s.at("offset").get<std::size_t>();
    const auto len = s.at("length").get<std::size_t>();
    if ((off + len) * sizeof(double) > blob.size()) throw Error(stem.string() + ": truncated blob");
    std::vector<double> v(len);
    std::memcpy(v.data(), blob.data() + off * sizeof(double), len * sizeof(double));
    cache.emplace(site, std::move(v));
  }
  return cache;
}

// ---------------------------------------------------------------------------
// Tables. TSV with a fixed header; an empty input gives the header alone.

inline std::string aggregate_tsv(const AggregateTable& t) {
  std::string out = "category\tgroup\tmean_abs_dld\tsem\tn_samples\tn_token_instances\n";
  for (const auto& r : t.rows) {
    out += std::string(to_string(r.category)) + "\t" + r.group + "\t" + format_number(r.mean_abs_dld) + "\t" +
           (r.sem ? format_number(*r.sem) : "") + "\t" + std::to_string(r.n_samples) + "\t" +
           std::to_string(r.n_token_instances) + "\n";
  }
  return out;
}

inline Json to_json(const AggregateTable& t) {
  Json groups = Json::array();
  for (const auto& g : t.groups) groups.push_back(Json{{"name", g.name}, {"lo", g.lo}, {"hi", g.hi}});
  Json rows = Json::array();
  for (const auto& r : t.rows) {
    rows.push_back(Json{{"category", to_string(r.category)},
                        {"group", r.group},
                        {"mean_abs_dld", r.mean_abs_dld},
                        {"sem", r.sem ? Json(*r.sem) : Json(nullptr)},
                        {"n_samples", r.n_samples},
                        {"n_token_instances", r.n_token_instances}});
  }
  return Json{{"groups", groups}, {"rows", rows}};
}

inline AggregateTable aggregate_from_json(const Json& j) {
  AggregateTable t;
  for (const auto& g : j.at("groups")) t.groups.push_back({g.at("name"), g.at("lo"), g.at("hi")});
  for (const auto& r : j.at("rows")) {
    AggregateRow row;
    row.category = category_from_string(r.at("category").get<std::string>());
    row.group = r.at("group").get<std::string>();
    row.mean_abs_dld = r.at("mean_abs_dld").get<double>();
    if (!r.at("sem").is_null()) row.sem = r.at("sem").get<double>();
    row.n_samples = r.at("n_samples").get<int>();
    row.n_token_instances = r.at("n_token_instances").get<int>();
    t.rows.push_back(row);
  }
  return t;
}

inline std::string retrospection_tsv(const std::vector<Retrospection>& rs) {
  std::string out = "category\tearly\tlate\tratio\tpersistent\n";
  for (const auto& r : rs) {
    out += std::string(to_string(r.category)) + "\t" + format_number(r.early) + "\t" + format_number(r.late) + "\t" +
           (r.ratio ? format_number(*r.ratio) : "") + "\t" + (r.persistent ? "true" : "false") + "\n";
  }
  return out;
}

inline Json to_json(const std::vector<Retrospection>& rs, const PersistenceOptions& opt) {
  Json rows = Json::array();
  for (const auto& r : rs) {
    rows.push_back(Json{{"category", to_string(r.category)},
                        {"early", r.early},
                        {"late", r.late},
                        {"ratio", r.ratio ? Json(*r.ratio) : Json(nullptr)},
                        {"persistent", r.persistent}});
  }
  return Json{{"early_fraction", opt.early_fraction}, {"require_median", opt.require_median}, {"rows", rows}};
}

namespace detail {

inline std::vector<std::pair<std::string, RetentionRate>> retention_rows(const RetentionReport& r) {
  std::vector<std::pair<std::string, RetentionRate>> rows{{"overall", r.overall}};
  for (const auto& [d, rate] : r.by_depth) rows.emplace_back(std::string(to_string(d)), rate);
  for (const auto& [rule, rate] : r.by_rule) rows.emplace_back("rule:" + std::string(to_string(rule)), rate);
  return rows;
}

}  // namespace detail

inline std::string retention_tsv(const RetentionReport& r) {
  std::string out = "scope\ttotal\tretained\trate\n";
  for (const auto& [scope, rate] : detail::retention_rows(r)) {
    out += scope + "\t" + std::to_string(rate.total) + "\t" + std::to_string(rate.retained) + "\t" +
           format_number(rate.rate()) + "\n";
  }
  return out;
}

inline Json to_json(const RetentionReport& r) {
  Json rows = Json::array();
  for (const auto& [scope, rate] : detail::retention_rows(r)) {
    rows.push_back(Json{{"scope", scope}, {"total", rate.total}, {"retained", rate.retained}, {"rate", rate.rate()}});
  }
  return rows;
}

inline Json to_json(const Thresholds& th) {
  Json j;
  for (HeadLabel l : kAllHeadLabels) j[std::string(to_string(l))] = th[l];
  j["self_off_diagonal_max"] = kSelfOffDiagonalMax;
  j["expr_off_diagonal_min"] = kExprOffDiagonalMin;
  return j;
}

inline Thresholds thresholds_from_json(const Json& j) {
  Thresholds th;
  for (const auto& [key, value] : j.items()) {
    if (key == "self_off_diagonal_max" || key == "expr_off_diagonal_min") continue;
    th[head_label_from_string(key)] = value.get<double>();
  }
  return th;
}

inline Json head_report_json(std::string_view prompt_id, const std::vector<HeadLabelSet>& heads, const Thresholds& th) {
  Json hs = Json::array();
  for (const auto& h : heads) {
    Json labels = Json::array();
    for (HeadLabel l : h.labels) labels.push_back(Json{{"name", to_string(l)}, {"score", h.score(l)}});
    Json scores;
    for (HeadLabel l : kAllHeadLabels) scores[std::string(to_string(l))] = h.score(l);
    hs.push_back(Json{{"layer", h.layer},
                      {"head", h.head},
                      {"labels", labels},
                      {"scores", scores},
                      {"terminal_mass", h.terminal_mass}});
  }
  return Json{{"prompt_id", prompt_id}, {"heads", hs}, {"thresholds", to_json(th)}};
}

inline std::string head_counts_tsv(const HeadCounts& c) {
  std::string out = "layer";
  for (HeadLabel l : kAllHeadLabels) out += "\t" + std::string(to_string(l));
  out += "\n";
  for (std::size_t layer = 0; layer < c.mean.size(); ++layer) {
    out += std::to_string(layer);
    for (double v : c.mean[layer]) out += "\t" + format_number(v);
    out += "\n";
  }
  return out;
}

inline Json to_json(const HeadCounts& c) {
  Json layers = Json::array();
  for (std::size_t layer = 0; layer < c.mean.size(); ++layer) {
    Json row{{"layer", layer}};
    for (HeadLabel l : kAllHeadLabels) row[std::string(to_string(l))] = c.mean[layer][static_cast<std::size_t>(l)];
    layers.push_back(row);
  }
  return Json{{"n_layers", c.n_layers}, {"n_heads", c.n_heads}, {"n_prompts", c.n_prompts}, {"layers", layers}};
}

inline HeadCounts head_counts_from_json(const Json& j) {
  HeadCounts c;
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.n_prompts = j.at("n_prompts");
  for (const auto& row : j.at("layers")) {
    std::array<double, 7> v{};
    for (HeadLabel l : kAllHeadLabels) v[static_cast<std::size_t>(l)] = row.at(std::string(to_string(l))).get<double>();
    c.mean.push_back(v);
  }
  return c;
}

}  // namespace plmi
