#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hotsearch/bottleneck.hpp"
#include "hotsearch/errors.hpp"
#include "hotsearch/evalbridge.hpp"
#include "hotsearch/netzoo.hpp"
#include "hotsearch/perfmodel.hpp"
#include "hotsearch/search.hpp"
#include "hotsearch/searchspace.hpp"
#include "hotsearch/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hotsearch;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { kOk = 0, kNoResult = 1, kInputError = 2, kInternal = 3 };

struct Common {
  std::optional<std::string> zoo;
  std::vector<std::string> builtins;
  std::optional<std::string> fpga;
  std::string out = ".";
  std::uint64_t seed = 1;
  int jobs = 1;
};

std::string num(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::vector<NetworkArch> load_models(const Common& c) {
  std::vector<NetworkArch> models;
  if (c.zoo) {
    for (auto& m : parse_manifest(*c.zoo).models) models.push_back(std::move(m));
  }
  for (const auto& spec : c.builtins) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.empty() || parts.size() > 3) throw ConfigError("--builtin: expected NAME[:SEED[:DEPTH]], got " + spec);
    try {
      const std::uint64_t seed = parts.size() > 1 ? std::stoull(parts[1]) : 1;
      const int depth = parts.size() > 2 ? std::stoi(parts[2]) : 3;
      models.push_back(builtin_network(parts[0], seed, depth));
    } catch (const std::logic_error&) {
      throw ConfigError("--builtin: bad number in " + spec);
    }
  }
  for (std::size_t i = 0; i < models.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (models[i].name() == models[j].name()) throw ConfigError("duplicate model name " + models[i].name());
  return models;
}

FpgaSpec load_fpga(const Common& c) { return c.fpga ? load_fpga_spec(*c.fpga) : FpgaSpec{}; }

json models_json(const std::vector<NetworkArch>& models) {
  json out = json::array();
  for (const auto& m : models)
    out.push_back({{"name", m.name()},
                   {"accuracy", m.baseline_accuracy()},
                   {"parameters", m.parameter_count()},
                   {"checksum", std::to_string(m.weight_checksum())}});
  return out;
}

json header(const json& run_config, std::uint64_t seed) {
  return {{"tool", "hotsearch"}, {"version", kVersion}, {"config_digest", digest(run_config)}, {"seed", seed}};
}

std::string csv_header(const json& h) {
  return "# tool=hotsearch version=" + h["version"].get<std::string>() +
         " config_digest=" + h["config_digest"].get<std::string>() + " seed=" + std::to_string(h["seed"].get<std::uint64_t>()) +
         "\n";
}

fs::path output_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out);
  return fs::path(c.out) / name;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

const NetworkArch& pick_model(const std::vector<NetworkArch>& models, const std::optional<std::string>& name) {
  if (models.empty()) throw ConfigError("no model given; use --zoo or --builtin");
  if (name) {
    for (const auto& m : models)
      if (m.name() == *name) return m;
    throw ConfigError("model not found: " + *name);
  }
  if (models.size() != 1) throw ConfigError("several models loaded; choose one with --model");
  return models.front();
}

json lanes_json(const AcceleratorDesign& d, int word_bits) {
  const auto l = d.lanes(word_bits);
  return {l.input, l.output, l.weight};
}

// ---------------------------------------------------------------------------

int cmd_analyze(const Common& c, std::optional<double> t_ms) {
  const auto models = load_models(c);
  const auto fpga = load_fpga(c);
  json run{{"command", "analyze"}, {"models", models_json(models)}, {"fpga", to_json(fpga)}};
  if (t_ms) run["t_ms"] = *t_ms;
  const auto h = header(run, c.seed);

  struct Row {
    std::string name;
    double accuracy;
    std::optional<AcceleratorDesign> design;
    std::int64_t cycles = 0;
    double ms = 0.0;
  };
  std::vector<Row> rows;
  for (const auto& m : models) {
    Row r{m.name(), m.baseline_accuracy(), std::nullopt};
    try {
      r.design = optimize_design(m, fpga);
      const auto lat = network_latency(m, *r.design, fpga);
      r.cycles = lat.total_cycles;
      r.ms = lat.total_ms;
    } catch (const InfeasibleError& e) {
      std::cerr << m.name() << ": " << e.what() << "\n";
      r.design.reset();
    }
    rows.push_back(r);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.design.has_value() != b.design.has_value()) return a.design.has_value();
    if (a.ms != b.ms) return a.ms < b.ms;
    return a.name < b.name;
  });

  std::string text = csv_header(h);
  text += "model,accuracy,tm,tn,tm_d,tr,tc,lanes_i,lanes_o,lanes_w,cycles,latency_ms,meets_t\n";
  for (const auto& r : rows) {
    text += r.name + "," + num(r.accuracy);
    if (r.design) {
      const auto& d = *r.design;
      const auto l = d.lanes(fpga.compute_word_bits);
      for (int v : {d.tm, d.tn, d.tm_d, d.tr, d.tc, l.input, l.output, l.weight}) text += "," + std::to_string(v);
      text += "," + std::to_string(r.cycles) + "," + num(r.ms);
      text += "," + std::string(t_ms ? (r.ms <= *t_ms ? "yes" : "no") : "");
    } else {
      text += ",,,,,,,,,,,no";
    }
    text += "\n";
  }
  write_text(output_path(c, "analyze.csv"), text);
  std::cout << text;
  return kOk;
}

struct DesignOverrides {
  std::optional<int> tm, tn, tm_d;
  std::optional<std::string> lanes;
  bool no_bram_check = false;
};

std::optional<LaneSplit> parse_lanes(const std::optional<std::string>& text) {
  if (!text) return std::nullopt;
  LaneSplit s;
  char a, b;
  std::istringstream in(*text);
  if (!(in >> s.input >> a >> s.output >> b >> s.weight) || a != ',' || b != ',' || !in.eof())
    throw ConfigError("--lanes: expected I,O,W, got " + *text);
  return s;
}

int cmd_detect(const Common& c, const std::optional<std::string>& model, const DesignOverrides& o) {
  const auto models = load_models(c);
  const auto fpga = load_fpga(c);
  const auto& net = pick_model(models, model);
  DesignSearchOptions ds;
  ds.fixed_tm = o.tm;
  ds.fixed_tn = o.tn;
  ds.fixed_tm_d = o.tm_d;
  ds.fixed_lanes = parse_lanes(o.lanes);
  ds.check_buffers = !o.no_bram_check;
  const auto design = optimize_design(net, fpga, {}, ds);
  const auto analysis = analyze_network(net, design, fpga, {}, LatencyOptions{!o.no_bram_check});

  json run{{"command", "detect"},
           {"models", models_json({net})},
           {"fpga", to_json(fpga)},
           {"design", to_json(design)},
           {"bram_check", !o.no_bram_check}};
  json layers = json::array();
  for (const auto& l : analysis.layers) {
    const auto& op = net.ops()[l.op_index];
    layers.push_back({{"op", l.op_index},
                      {"src", op.src},
                      {"dst", op.dst},
                      {"kind", std::string(to_string(op.kind))},
                      {"label", std::string(1, to_char(l.bottleneck.label))},
                      {"runner_up", std::string(1, to_char(l.bottleneck.runner_up))},
                      {"slack", l.bottleneck.slack},
                      {"t_comp", l.bd.t_comp},
                      {"t_i", l.bd.t_i},
                      {"t_w", l.bd.t_w},
                      {"t_o", l.bd.t_o},
                      {"lat1", l.bd.lat1},
                      {"lat2", l.bd.lat2},
                      {"lat", l.bd.lat_total},
                      {"latency_ms", l.bd.lat_ms}});
  }
  const auto& hist = analysis.histogram;
  json doc{{"header", header(run, c.seed)},
           {"model", net.name()},
           {"design", to_json(design)},
           {"lanes", lanes_json(design, fpga.compute_word_bits)},
           {"total_cycles", analysis.total_cycles},
           {"latency_ms", analysis.total_ms},
           {"layers", layers},
           {"histogram", {{"C", hist[0]}, {"I", hist[1]}, {"W", hist[2]}, {"O", hist[3]}}}};
  write_json(output_path(c, "detect.json"), doc);
  std::cout << net.name() << ": " << num(analysis.total_ms, 4) << " ms, bottlenecks C=" << hist[0] << " I=" << hist[1]
            << " W=" << hist[2] << " O=" << hist[3] << "\n";
  return kOk;
}

int cmd_space(const Common& c, const std::optional<std::string>& model, const SpaceCaps& caps) {
  const auto models = load_models(c);
  const auto fpga = load_fpga(c);
  const auto& net = pick_model(models, model);
  const auto design = optimize_design(net, fpga);
  const auto space = build_space(net, design, analyze_network(net, design, fpga), fpga, caps);
  json run{{"command", "space"}, {"models", models_json({net})}, {"fpga", to_json(fpga)}, {"caps", to_json(caps)}};
  json dims = json::array();
  for (const auto& d : space.dimensions()) dims.push_back({{"name", d.name}, {"count", d.count}});
  json doc{{"header", header(run, c.seed)},
           {"model", net.name()},
           {"baseline_design", to_json(design)},
           {"cardinality", space.cardinality()},
           {"cardinality_exact", space.cardinality_exact()},
           {"dimensions", dims},
           {"space", space_json(space)}};
  write_json(output_path(c, "space.json"), doc);
  std::cout << net.name() << ": " << space.dimensions().size() << " dimensions, cardinality "
            << (space.cardinality_exact() ? "" : ">= ") << space.cardinality() << "\n";
  return kOk;
}

struct SearchFlags {
  std::optional<std::string> config;
  std::optional<double> t_ms, alpha;
  std::optional<int> beta, episodes, top_k, mc_samples;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> evaluator;
};

json episode_json(const Episode& e) {
  json out{{"digest", e.digest},
           {"episode", e.index},
           {"latency_ms", e.latency_ms},
           {"reward", e.reward},
           {"config", to_json(e.config)}};
  out["accuracy"] = e.accuracy ? json(*e.accuracy) : json(nullptr);
  return out;
}

int cmd_search(Common c, const SearchFlags& f) {
  SearchConfig cfg;
  fs::path base_dir = ".";
  if (f.config) {
    std::ifstream in(*f.config);
    if (!in) throw ConfigError("cannot read search config " + *f.config);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError("search config '" + *f.config + "': " + e.what());
    }
    cfg = search_config_from_json(doc);
    base_dir = fs::path(*f.config).parent_path();
    if (!doc.contains("jobs")) cfg.search.jobs = c.jobs;
  } else {
    cfg.search.jobs = c.jobs;
  }
  auto& s = cfg.search;
  if (f.t_ms) s.t_constraint_ms = *f.t_ms;
  if (f.alpha) s.alpha = *f.alpha;
  if (f.beta) s.beta = *f.beta;
  if (f.episodes) s.episodes_max = *f.episodes;
  if (f.seed) s.seed = *f.seed;
  if (f.top_k) cfg.top_k = *f.top_k;
  if (f.mc_samples) cfg.mc_samples = *f.mc_samples;
  if (f.evaluator) cfg.evaluator = evaluator_spec_from_string(*f.evaluator);
  if (!f.config && !f.t_ms) throw ConfigError("search: the latency constraint is required (--t-ms or config)");
  if (!(s.t_constraint_ms > 0.0)) throw ConfigError("search: t_constraint_ms must be positive");
  c.seed = s.seed;

  const auto zoo = load_models(c);
  const auto fpga = load_fpga(c);
  if (zoo.empty()) throw ConfigError("search: empty model zoo");
  const auto evaluator = make_evaluator(cfg.evaluator, zoo, base_dir);

  json run_cfg = to_json(cfg);
  run_cfg.erase("jobs");
  const json run{{"command", "search"}, {"models", models_json(zoo)}, {"fpga", to_json(fpga)}, {"search", run_cfg}};
  const auto h = header(run, s.seed);

  SelectionOptions sel;
  sel.t_constraint_ms = s.t_constraint_ms;
  sel.samples = cfg.mc_samples;
  sel.top_k = cfg.top_k;
  sel.alpha = s.alpha;
  sel.seed = s.seed;
  sel.caps = s.caps;
  const auto selection = monte_carlo_select(zoo, fpga, sel);

  std::vector<NetworkArch> backbones;
  for (const auto& name : selection.selected)
    for (const auto& m : zoo)
      if (m.name() == name) backbones.push_back(m);
  auto result = run_search(backbones, fpga, s, *evaluator);
  if (backbones.empty())
    result.diagnostic = "every model was pruned: no sampled configuration met T = " + num(s.t_constraint_ms) + " ms";

  std::string trace = csv_header(h);
  trace += "model,episode,digest,latency_ms,accuracy,reward,feasible,failed\n";
  for (const auto& b : result.backbones)
    for (const auto& e : b.episodes)
      trace += b.model + "," + std::to_string(e.index) + "," + e.digest + "," + num(e.latency_ms) + "," +
               (e.accuracy ? num(*e.accuracy) : "") + "," + num(e.reward) + "," + (e.feasible ? "1" : "0") + "," +
               (e.failed ? "1" : "0") + "\n";
  write_text(output_path(c, "trace.csv"), trace);

  json points = json::array();
  for (const auto& p : result.pareto.points())
    points.push_back({{"digest", p.digest}, {"latency_ms", p.latency_ms}, {"accuracy", p.accuracy},
                      {"config", to_json(p.config)}});
  write_json(output_path(c, "pareto.json"), {{"header", h}, {"points", points}});

  json stats = json::array();
  for (const auto& st : selection.stats)
    stats.push_back({{"model", st.model},
                     {"accuracy", st.accuracy},
                     {"design_found", st.design_found},
                     {"baseline_ms", st.baseline_ms},
                     {"min_ms", st.min_ms},
                     {"avg_ms", st.avg_ms},
                     {"max_ms", st.max_ms},
                     {"samples", st.samples},
                     {"infeasible", st.infeasible},
                     {"satisfied", st.satisfied},
                     {"pruned", st.pruned},
                     {"score", st.score}});
  json per_backbone = json::array();
  for (const auto& b : result.backbones) {
    json entry{{"model", b.model},
               {"baseline_ms", b.baseline_ms},
               {"baseline_accuracy", b.baseline_accuracy},
               {"baseline_design", to_json(b.baseline_design)},
               {"cardinality", b.space.cardinality()},
               {"episodes", b.episodes.size()}};
    if (b.best) {
      entry["best"] = episode_json(*b.best);
      entry["latency_reduction_pct"] = 100.0 * (b.baseline_ms - b.best->latency_ms) / b.baseline_ms;
      entry["accuracy_delta"] = *b.best->accuracy - b.baseline_accuracy;
    } else {
      entry["best"] = nullptr;
    }
    per_backbone.push_back(std::move(entry));
  }
  json summary{{"header", h},
               {"t_constraint_ms", s.t_constraint_ms},
               {"alpha", s.alpha},
               {"evaluator", evaluator->kind()},
               {"selection", {{"stats", stats}, {"ranked", selection.ranked}, {"selected", selection.selected}}},
               {"backbones", per_backbone},
               {"pareto_size", result.pareto.points().size()}};
  if (result.best) {
    const auto& best = *result.best;
    const auto it = std::find_if(result.backbones.begin(), result.backbones.end(),
                                 [&](const BackboneSearch& b) { return b.model == best.model; });
    summary["best"] = episode_json(best);
    summary["best"]["model"] = best.model;
    summary["latency_reduction_pct"] = 100.0 * (it->baseline_ms - best.latency_ms) / it->baseline_ms;
    summary["accuracy_delta"] = *best.accuracy - it->baseline_accuracy;
    summary["identity"] = best.config.is_identity_compression() && best.config.design == it->baseline_design;
  } else {
    summary["best"] = nullptr;
    summary["diagnostic"] = result.diagnostic;
  }
  write_json(output_path(c, "summary.json"), summary);

  if (!result.best) {
    std::cerr << "search: " << result.diagnostic << "\n";
    return kNoResult;
  }
  std::cout << "best: " << result.best->model << " " << num(result.best->latency_ms, 4) << " ms, accuracy "
            << num(*result.best->accuracy, 4) << ", reduction " << num(summary["latency_reduction_pct"].get<double>(), 2)
            << "%\n";
  return kOk;
}

int cmd_verify(const Common& c, const std::optional<std::string>& mutant) {
  VerifyOptions o;
  o.seed = c.seed;
  o.mutant = mutant;
  const auto report = run_verification(o);
  for (const auto& s : report.suites) {
    std::cout << (s.ok() ? "PASS " : "FAIL ") << s.name << " " << s.passed << "/" << s.total << "\n";
    for (const auto& f : s.failures) std::cout << "  " << f << "\n";
  }
  return report.ok() ? kOk : kInternal;
}

int cmd_export(const Common& c, const std::string& stem, bool structure_only) {
  ModelZoo zoo{load_models(c)};
  if (zoo.models.empty()) throw ConfigError("export: no model given");
  fs::create_directories(c.out);
  if (!structure_only) {
    std::cout << write_manifest(zoo, c.out, stem).string() << "\n";
    return kOk;
  }
  json doc = json::array();
  for (const auto& m : zoo.models) {
    auto jm = manifest_json(m, "");
    for (auto& op : jm["ops"]) op["weights"] = nullptr;
    doc.push_back(std::move(jm));
  }
  const auto path = fs::path(c.out) / (stem + ".json");
  write_json(path, doc.size() == 1 ? doc[0] : json{{"models", doc}});
  std::cout << path.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bottleneck-guided hot-start co-search of compression and accelerator design"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--zoo", common.zoo, "Model zoo manifest")->check(CLI::ExistingFile);
    sub->add_option("--builtin", common.builtins, "Builtin model NAME[:SEED[:DEPTH]] (repeatable)");
    sub->add_option("--fpga", common.fpga, "FPGA spec JSON")->check(CLI::ExistingFile);
    sub->add_option("--out", common.out, "Output directory");
    sub->add_option("--seed", common.seed, "Random seed");
    sub->add_option("--jobs", common.jobs, "Worker threads")->check(CLI::PositiveNumber);
  };

  std::optional<double> analyze_t;
  auto* analyze = app.add_subcommand("analyze", "Optimised design and latency per model");
  add_common(analyze);
  analyze->add_option("--t-ms", analyze_t, "Latency constraint for the meets_t column");

  std::optional<std::string> model;
  DesignOverrides overrides;
  auto* detect = app.add_subcommand("detect", "Per-layer bottleneck table");
  add_common(detect);
  detect->add_option("--model", model, "Model name");
  detect->add_option("--tm", overrides.tm, "Fix Tm");
  detect->add_option("--tn", overrides.tn, "Fix Tn");
  detect->add_option("--tm-d", overrides.tm_d, "Fix the depthwise Tm");
  detect->add_option("--lanes", overrides.lanes, "Fix the lane split I,O,W");
  detect->add_flag("--no-bram-check", overrides.no_bram_check, "Skip the on-chip buffer constraint");

  std::optional<std::string> space_caps_path;
  auto* space = app.add_subcommand("space", "Bottleneck-pruned joint search space");
  add_common(space);
  space->add_option("--model", model, "Model name");
  space->add_option("--caps", space_caps_path, "Space caps JSON")->check(CLI::ExistingFile);

  SearchFlags sf;
  auto* search = app.add_subcommand("search", "Monte-Carlo backbone selection then policy-gradient co-search");
  add_common(search);
  search->add_option("--config", sf.config, "Search config JSON")->check(CLI::ExistingFile);
  search->add_option("--t-ms", sf.t_ms, "Latency constraint T in ms");
  search->add_option("--alpha", sf.alpha, "Reward weight of accuracy");
  search->add_option("--beta", sf.beta, "Fine-tuning batches per evaluation");
  search->add_option("--episodes", sf.episodes, "Episodes per backbone");
  search->add_option("--top-k", sf.top_k, "Backbones to search");
  search->add_option("--mc-samples", sf.mc_samples, "Monte-Carlo draws per model");
  search->add_option("--evaluator", sf.evaluator, "surrogate | table:PATH[:surrogate] | external:CMD ARGS");

  std::optional<std::string> mutant;
  auto* verify = app.add_subcommand("verify", "Oracle test battery");
  add_common(verify);
  verify->add_option("--mutant", mutant, "Run against a deliberately broken model")
      ->check(CLI::IsMember(mutant_names()));

  std::string stem = "zoo";
  bool structure_only = false;
  auto* exp = app.add_subcommand("export", "Write models as a manifest");
  add_common(exp);
  exp->add_option("--stem", stem, "Manifest file stem");
  exp->add_flag("--structure-only", structure_only, "Omit weights");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInputError;
  }

  try {
    if (*analyze) return cmd_analyze(common, analyze_t);
    if (*detect) return cmd_detect(common, model, overrides);
    if (*space) {
      SpaceCaps caps;
      if (space_caps_path) {
        std::ifstream in(*space_caps_path);
        caps = caps_from_json(json::parse(in));
      }
      return cmd_space(common, model, caps);
    }
    if (*search) {
      if (search->count("--seed")) sf.seed = common.seed;
      return cmd_search(common, sf);
    }
    if (*verify) return cmd_verify(common, mutant);
    if (*exp) return cmd_export(common, stem, structure_only);
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kNoResult;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const ValidationError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const UnsupportedTopologyError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const ConfigError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const json::exception& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}
