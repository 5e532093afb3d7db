// plmi: command-line front end for corpus generation, model filtering,
// patching sweeps, region ablation, aggregation, head labels and reports.
//
// Exit codes: 0 success, 1 stage failure, 2 configuration error.

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "plmi/pipeline.hpp"

namespace fs = std::filesystem;
using namespace plmi;

namespace {

std::vector<std::string> split_list(const std::vector<std::string>& items) {
  std::vector<std::string> out;
  for (const auto& item : items) {
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ',')) {
      if (!part.empty()) out.push_back(part);
    }
  }
  return out;
}

struct ModelFlags {
  std::string config;
  std::string id;
  std::optional<std::uint64_t> seed;
  std::optional<int> layers, heads, d_model;
  std::string precision, tokenizer;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "Experiment config; its model section is the base");
    app->add_option("--model", id, "Model id ('toy' is built in; others resolve under $PLMI_MODEL_CACHE)");
    app->add_option("--model-seed", seed, "Toy model seed");
    app->add_option("--layers", layers, "Toy model layers");
    app->add_option("--heads", heads, "Toy model heads");
    app->add_option("--d-model", d_model, "Toy model width");
    app->add_option("--precision", precision, "float64 | float32");
    app->add_option("--tokenizer", tokenizer, "word | char");
  }

  ModelConfig resolve() const {
    ModelConfig m = config.empty() ? ModelConfig{} : load_config(config).model;
    if (!id.empty()) m.id = id;
    if (seed) m.seed = *seed;
    if (layers) m.n_layers = *layers;
    if (heads) m.n_heads = *heads;
    if (d_model) m.d_model = *d_model;
    if (!precision.empty()) m.precision = precision;
    if (!tokenizer.empty()) m.tokenizer = tokenizer;
    return m;
  }
};

Thresholds parse_thresholds(const std::string& arg) {
  if (arg.empty()) return {};
  const std::string text = fs::exists(arg) ? read_file(arg) : arg;
  try {
    return thresholds_from_json(Json::parse(text));
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("thresholds: ") + e.what());
  }
}

AnswerTokens answers_for(const std::vector<ContrastPair>& pairs, Model& m) {
  return answer_token_ids(m.tokenizer(), pairs.empty() ? ValueStyle::Long : pairs.front().style);
}

void print_warnings(const std::vector<std::string>& ws) {
  for (const auto& w : ws) std::cerr << "warning: " << w << "\n";
}

std::string hash_for_dir(const fs::path& root) {
  const fs::path cfg = root / "config.json";
  if (fs::exists(cfg)) return config_hash(load_config(cfg));
  return sha256_hex("");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Activation-patching toolkit for propositional-logic prompts"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate clean/corrupt contrast pairs");
  std::vector<std::string> gen_rules, gen_depths;
  std::string gen_style = "long", gen_negation = "glyph", gen_templates = "extended", gen_out = "pairs.jsonl",
              gen_tokenizer = "word", gen_report;
  std::uint64_t gen_seed = kDefaultSeed;
  bool gen_exhaustive = false;
  int gen_flips = 1, gen_limit = -1;
  gen->add_option("--rules", gen_rules, "Rule categories (comma list; default all)");
  gen->add_option("--depth", gen_depths, "one_hop,two_hop (default both)");
  gen->add_option("--style", gen_style, "Truth-value style: long | short");
  gen->add_option("--negation", gen_negation, "glyph | word");
  gen->add_option("--templates", gen_templates, "table | extended");
  gen->add_flag("--exhaustive", gen_exhaustive, "Emit every valid pair instead of the quota subsample");
  gen->add_option("--flips", gen_flips, "Facts flipped per corruption");
  gen->add_option("--seed", gen_seed, "Sampling seed");
  gen->add_option("--limit", gen_limit, "Seeded subsample of the result");
  gen->add_option("--tokenizer", gen_tokenizer, "word | char");
  gen->add_option("--out", gen_out, "Output JSONL");
  gen->add_option("--report", gen_report, "Optional JSON file for per-rule counts");

  // filter
  auto* filt = app.add_subcommand("filter", "Keep pairs the model answers correctly on both prompts");
  ModelFlags filt_model;
  filt_model.attach(filt);
  std::string filt_in = "pairs.jsonl", filt_out = "retained.jsonl", filt_tables;
  filt->add_option("--in", filt_in, "Input pairs JSONL");
  filt->add_option("--out", filt_out, "Retained pairs JSONL");
  filt->add_option("--tables", filt_tables, "Directory for retention tables");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Activation-patching sweeps");
  ModelFlags sw_model;
  sw_model.attach(sw);
  std::string sw_gran = "resid", sw_mode = "patch", sw_pairs = "retained.jsonl", sw_out = "run";
  bool sw_force = false, sw_normalize = false;
  int sw_max = -1;
  sw->add_option("--granularity", sw_gran, "resid | head | mlp");
  sw->add_option("--mode", sw_mode, "patch | zero");
  sw->add_option("--pairs", sw_pairs, "Pairs JSONL");
  sw->add_option("--out", sw_out, "Results root (writes results/sweeps/)");
  sw->add_option("--max-pairs", sw_max, "Only the first N pairs");
  sw->add_flag("--force", sw_force, "Run on pairs the model gets wrong (warns)");
  sw->add_flag("--normalize", sw_normalize, "Also write per-layer normalized copies (display only)");

  // ablate-region
  auto* ab = app.add_subcommand("ablate-region", "Zero-ablate MLP outputs over a prompt region");
  ModelFlags ab_model;
  ab_model.attach(ab);
  std::vector<std::string> ab_regions{"facts", "expression", "query"};
  std::string ab_metric = "dld", ab_scope = "layer", ab_pairs = "retained.jsonl", ab_out = "run";
  int ab_max = -1;
  ab->add_option("--region", ab_regions, "facts | expression | query (comma list)");
  ab->add_option("--metric", ab_metric, "dld | rld");
  ab->add_option("--scope", ab_scope, "layer | all_layers");
  ab->add_option("--pairs", ab_pairs, "Pairs JSONL");
  ab->add_option("--out", ab_out, "Results root (writes results/ablations/)");
  ab->add_option("--max-pairs", ab_max, "Only the first N pairs");

  // aggregate
  auto* ag = app.add_subcommand("aggregate", "Mean |dLD| by token category and layer group");
  std::string ag_dir = "run", ag_pairs, ag_groups = "proportional";
  double ag_fraction = 0.25;
  bool ag_no_median = false;
  ag->add_option("--results-dir", ag_dir, "Results root with results/sweeps/");
  ag->add_option("--pairs", ag_pairs, "Pairs JSONL with annotations (default <root>/data/analysis.jsonl)");
  ag->add_option("--groups", ag_groups, "paper36 | proportional");
  ag->add_option("--early-fraction", ag_fraction, "Persistence floor as a share of the Early value");
  ag->add_flag("--no-median", ag_no_median, "Drop the median condition from the persistence flag");

  // heads
  auto* hd = app.add_subcommand("heads", "Attention-head labels");
  hd->require_subcommand(1);
  std::string hd_thresholds, hd_pairs = "retained.jsonl", hd_out = "run";
  int hd_limit = -1;
  ModelFlags hd_model;
  auto* hd_classify = hd->add_subcommand("classify", "Per-prompt head report");
  auto* hd_count = hd->add_subcommand("count", "Per-layer mean labeled-head counts");
  for (auto* sub : {hd_classify, hd_count}) {
    hd_model.attach(sub);
    sub->add_option("--thresholds", hd_thresholds, "JSON file or inline JSON object");
    sub->add_option("--pairs", hd_pairs, "Pairs JSONL (clean prompts are classified)");
    sub->add_option("--out", hd_out, "Results root");
    sub->add_option("--limit", hd_limit, "Only the first N prompts");
  }

  // report
  auto* rp = app.add_subcommand("report", "Render figures from persisted results");
  std::string rp_dir = "run";
  rp->add_option("--results-dir", rp_dir, "Results root");

  // run
  auto* run = app.add_subcommand("run", "Full pipeline from a config file");
  std::string run_config, run_out;
  bool run_no_resume = false, run_force = false, run_quiet = false;
  run->add_option("--config", run_config, "Experiment config JSON (default: built-in defaults)");
  run->add_option("--out", run_out, "Override output_dir");
  run->add_flag("--no-resume", run_no_resume, "Recompute every stage");
  run->add_flag("--force", run_force, "Analyse every generated pair, not only retained ones");
  run->add_flag("--quiet", run_quiet, "No progress lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      CorpusConfig cfg;
      if (!gen_rules.empty()) {
        cfg.rules.clear();
        for (const auto& r : split_list(gen_rules)) cfg.rules.push_back(rule_from_string(r));
      }
      if (!gen_depths.empty()) {
        cfg.depths.clear();
        for (const auto& d : split_list(gen_depths)) cfg.depths.push_back(depth_from_string(d));
      }
      cfg.render.style = value_style_from_string(gen_style);
      cfg.render.negation = negation_style_from_string(gen_negation);
      cfg.templates = template_set_from_string(gen_templates);
      cfg.exhaustive = gen_exhaustive;
      cfg.flips = gen_flips;
      cfg.seed = gen_seed;
      const auto tok = make_tokenizer(gen_tokenizer);
      Corpus c = generate_corpus(cfg, *tok);
      print_warnings(c.report.warnings);
      const auto pairs = limit_pairs(std::move(c.pairs), gen_limit, gen_seed);
      write_pairs(gen_out, pairs);
      if (!gen_report.empty()) write_file(gen_report, to_json(c.report).dump(2) + "\n");
      std::cout << "wrote " << pairs.size() << " pairs (" << c.report.one_hop << " one-hop, " << c.report.two_hop
                << " two-hop before limit) to " << gen_out << "\n";
      return 0;
    }
    if (*filt) {
      const auto pairs = read_pairs(filt_in);
      auto model = load_model(filt_model.resolve());
      FilterResult fr;
      if (!pairs.empty()) fr = filter_by_model(pairs, *model, answers_for(pairs, *model));
      write_pairs(filt_out, fr.retained);
      if (!filt_tables.empty()) export_tables(filt_tables, &fr.report, nullptr, nullptr, {}, nullptr);
      std::cout << "retained " << fr.report.overall.retained << "/" << fr.report.overall.total;
      for (const auto& [d, r] : fr.report.by_depth) std::cout << ", " << to_string(d) << " " << r.retained << "/" << r.total;
      std::cout << "\n";
      return 0;
    }
    if (*sw) {
      const Granularity g = granularity_from_string(sw_gran);
      const InterventionMode mode = mode_from_string(sw_mode);
      auto pairs = read_pairs(sw_pairs);
      if (sw_max >= 0 && static_cast<std::size_t>(sw_max) < pairs.size()) pairs.resize(static_cast<std::size_t>(sw_max));
      auto model = load_model(sw_model.resolve());
      if (pairs.empty()) {
        std::cerr << "warning: no pairs to sweep\n";
        return 0;
      }
      const AnswerTokens ans = answers_for(pairs, *model);
      BaselineOptions bo;
      bo.force = sw_force;
      if (mode == InterventionMode::ZeroAblate) bo.capture.clear();
      for (const auto& p : pairs) {
        const PairBaseline base = run_pair_baseline(p, *model, ans, bo);
        print_warnings(base.warnings);
        const SweepGrid grid = sweep(p, *model, ans, base, g, mode);
        write_file(fs::path(sw_out) / "results/sweeps" / sweep_file_name(grid), to_json(grid).dump() + "\n");
        if (sw_normalize) {
          write_file(fs::path(sw_out) / "results/sweeps_normalized" / sweep_file_name(grid),
                     to_json(normalize_per_layer(grid)).dump() + "\n");
        }
      }
      std::cout << "swept " << pairs.size() << " pairs (" << sw_gran << ", " << sw_mode << ")\n";
      return 0;
    }
    if (*ab) {
      const AblationMetric metric = metric_from_string(ab_metric);
      const AblationScope scope = detail::scope_from_string(ab_scope);
      auto pairs = read_pairs(ab_pairs);
      if (ab_max >= 0 && static_cast<std::size_t>(ab_max) < pairs.size()) pairs.resize(static_cast<std::size_t>(ab_max));
      auto model = load_model(ab_model.resolve());
      if (pairs.empty()) {
        std::cerr << "warning: no pairs to ablate\n";
        return 0;
      }
      const AnswerTokens ans = answers_for(pairs, *model);
      for (const auto& rname : split_list(ab_regions)) {
        const Region r = region_from_string(rname);
        const AblationSummary s = run_ablations(pairs, *model, ans, r, metric, scope);
        if (s.degenerate) std::cerr << "warning: " << s.degenerate << " pairs with degenerate baseline\n";
        write_file(fs::path(ab_out) / "results/ablations" / ablation_file_name(r, metric), to_json(s).dump() + "\n");
        std::cout << rname << " " << ab_metric << ":";
        for (const auto& v : s.layer_mean) std::cout << " " << (v ? format_number(*v) : "n/a");
        std::cout << "\n";
      }
      return 0;
    }
    if (*ag) {
      const fs::path root = ag_dir;
      const auto pairs = read_pairs(ag_pairs.empty() ? root / "data/analysis.jsonl" : fs::path(ag_pairs));
      std::map<std::string, const ContrastPair*> by_id;
      for (const auto& p : pairs) by_id[sanitize_name(p.id)] = &p;
      std::vector<SweepGrid> grids;
      std::vector<std::vector<TokenAnnotation>> anns;
      for (const auto& f : sorted_files(root / "results/sweeps", ".json")) {
        SweepGrid g = grid_from_json(Json::parse(read_file(f)));
        if (g.granularity != Granularity::Resid) continue;
        auto it = by_id.find(sanitize_name(g.pair_id));
        if (it == by_id.end()) throw Error(g.pair_id + ": no annotations in the pairs file");
        anns.push_back(it->second->annotations);
        grids.push_back(std::move(g));
      }
      PersistenceOptions po{ag_fraction, !ag_no_median};
      AggregateTable table;
      std::vector<Retrospection> retro;
      if (grids.empty()) {
        std::cerr << "warning: no residual sweeps under " << (root / "results/sweeps") << "\n";
      } else {
        table = mean_abs_dld_by_category(grids, anns, make_layer_groups(grids.front().rows, ag_groups));
        retro = retrospection_score(table, po);
      }
      export_tables(root, nullptr, &table, &retro, po, nullptr);
      std::cout << aggregate_tsv(table);
      return 0;
    }
    if (*hd) {
      const Thresholds th = parse_thresholds(hd_thresholds);
      auto pairs = read_pairs(hd_pairs);
      if (hd_limit >= 0 && static_cast<std::size_t>(hd_limit) < pairs.size()) pairs.resize(static_cast<std::size_t>(hd_limit));
      auto model = load_model(hd_model.resolve());
      if (*hd_classify) {
        for (const auto& p : pairs) {
          const auto hs = classify_prompt(p.clean.prompt, p.annotations, *model, th);
          write_file(fs::path(hd_out) / "results/heads" / (sanitize_name(p.id) + ".json"),
                     head_report_json(p.id, hs, th).dump() + "\n");
        }
        std::cout << "classified heads for " << pairs.size() << " prompts\n";
      } else {
        HeadCounts counts;
        if (pairs.empty()) std::cerr << "warning: empty corpus; writing headers only\n";
        else counts = count_heads_per_layer(pairs, *model, th);
        export_tables(hd_out, nullptr, nullptr, nullptr, {}, &counts);
        std::cout << head_counts_tsv(counts);
      }
      return 0;
    }
    if (*rp) {
      const FigureOutput f = emit_figures(rp_dir, hash_for_dir(rp_dir));
      print_warnings(f.warnings);
      std::cout << "wrote " << f.written.size() << " figures\n";
      return 0;
    }
    if (*run) {
      ExperimentConfig cfg = run_config.empty() ? ExperimentConfig{} : load_config(run_config);
      if (!run_out.empty()) cfg.output_dir = run_out;
      if (run_force) cfg.force = true;
      PipelineOptions opt;
      opt.resume = !run_no_resume;
      if (!run_quiet) opt.log = [](const std::string& s) { std::cerr << s << "\n"; };
      if (!run_config.empty()) write_file(cfg.output_dir / "config.source.json", read_file(run_config));
      const RunManifest m = run_pipeline(cfg, opt);
      std::cout << "run complete: " << m.files.size() << " files, config " << m.config_hash.substr(0, 16) << ", manifest "
                << (cfg.output_dir / "manifest.json").string() << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
