#include "hotsearch/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <thread>

#include "hotsearch/bottleneck.hpp"
#include "hotsearch/errors.hpp"

namespace hotsearch {

namespace {

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Feasible episodes only: highest accuracy, then lowest latency, then earliest.
bool better_answer(const Episode& a, const Episode& b) {
  if (*a.accuracy != *b.accuracy) return *a.accuracy > *b.accuracy;
  if (a.latency_ms != b.latency_ms) return a.latency_ms < b.latency_ms;
  return false;
}

template <typename F>
void parallel_for(std::size_t n, int jobs, F&& body) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> workers;
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  for (std::size_t w = 0; w < count; ++w)
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += count) body(i);
    });
  for (auto& t : workers) t.join();
}

}  // namespace

void RewardSpec::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("reward: alpha must be in [0, 1]");
  if (!(t_constraint_ms > 0.0)) throw ConfigError("reward: T must be positive");
  if (!(t_min_ms < t_constraint_ms)) throw ConfigError("reward: T_min must be below T");
  if (!(a_min < a_ori)) throw ConfigError("reward: A_min must be below A_ori");
}

RewardSpec RewardSpec::make(double alpha, double t_constraint_ms, double a_ori, double a_min_fraction,
                            double t_min_fraction) {
  RewardSpec s{alpha, t_constraint_ms, a_min_fraction * a_ori, t_min_fraction * t_constraint_ms, a_ori};
  s.validate();
  return s;
}

double reward(std::optional<double> accuracy, double latency_ms, const RewardSpec& spec) {
  if (!(latency_ms > 0.0)) throw ValidationError("reward: latency must be positive");
  double r_acc, r_lat;
  if (latency_ms > spec.t_constraint_ms) {
    r_acc = -1.0;
    r_lat = spec.t_constraint_ms - latency_ms;
  } else {
    if (!accuracy) throw ValidationError("reward: accuracy is required when the latency meets T");
    r_acc = (*accuracy - spec.a_min) / (spec.a_ori - spec.a_min) * 2.0 - 1.0;
    r_lat = (spec.t_constraint_ms - latency_ms) / (spec.t_constraint_ms - spec.t_min_ms) * 2.0 - 1.0;
  }
  return spec.alpha * r_acc + (1.0 - spec.alpha) * r_lat;
}

bool dominates(const ParetoPoint& a, const ParetoPoint& b) {
  return a.latency_ms <= b.latency_ms && a.accuracy >= b.accuracy &&
         (a.latency_ms < b.latency_ms || a.accuracy > b.accuracy);
}

bool ParetoSet::insert(const ParetoPoint& point) {
  for (const auto& p : points_)
    if (dominates(p, point) || (p.latency_ms == point.latency_ms && p.accuracy == point.accuracy)) return false;
  std::erase_if(points_, [&](const ParetoPoint& p) { return dominates(point, p); });
  const auto pos = std::lower_bound(points_.begin(), points_.end(), point, [](const ParetoPoint& a, const ParetoPoint& b) {
    return a.latency_ms < b.latency_ms;
  });
  points_.insert(pos, point);
  return true;
}

nlohmann::json to_json(const ParetoSet& set) {
  auto out = nlohmann::json::array();
  for (const auto& p : set.points())
    out.push_back({{"model", p.config.model},
                   {"digest", p.digest},
                   {"latency_ms", p.latency_ms},
                   {"accuracy", p.accuracy},
                   {"config", to_json(p.config)}});
  return out;
}

std::optional<EvalResponse> EvaluationCache::find(const std::string& digest) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(digest);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void EvaluationCache::store(const std::string& digest, const EvalResponse& response) {
  std::lock_guard lock(mutex_);
  entries_.emplace(digest, response);
}

EvalResponse fine_tune_proxy(const CompressionConfig& config, Evaluator& evaluator, int beta) {
  if (beta < 0) throw ConfigError("fine-tune budget beta must be non-negative");
  return evaluator.evaluate(make_request(config, beta));
}

Episode evaluate_choices(const NetworkArch& net, const JointSpace& space, const Choices& choices, const FpgaSpec& fpga,
                         const RewardSpec& spec, Evaluator& evaluator, int beta, EvaluationCache* cache) {
  Episode e;
  e.model = net.name();
  e.actions = choices;
  e.config = space.config(choices);
  e.digest = digest(e.config);
  const auto settings = to_settings(net, e.config);
  if (auto violation = resource_violation(net, e.config.design, fpga, settings)) {
    e.failed = true;
    e.message = "infeasible: " + *violation;
    return e;
  }
  try {
    e.latency_ms = network_latency(net, e.config.design, fpga, settings).total_ms;
  } catch (const Error& err) {
    e.failed = true;
    e.message = std::string("infeasible: ") + err.what();
    return e;
  }
  if (e.latency_ms > spec.t_constraint_ms) {
    e.reward = reward(std::nullopt, e.latency_ms, spec);
    return e;
  }
  std::optional<EvalResponse> response = cache ? cache->find(e.digest) : std::nullopt;
  if (!response) {
    try {
      response = fine_tune_proxy(e.config, evaluator, beta);
    } catch (const Error& err) {
      response = EvalResponse::error(err.what());
    }
    if (cache) cache->store(e.digest, *response);
  }
  if (!response->is_ok()) {
    e.failed = true;
    e.message = "evaluator: " + response->message;
    return e;
  }
  e.accuracy = response->accuracy;
  e.feasible = true;
  e.reward = reward(e.accuracy, e.latency_ms, spec);
  return e;
}

SelectionResult monte_carlo_select(const std::vector<NetworkArch>& zoo, const FpgaSpec& fpga,
                                   const SelectionOptions& options) {
  if (options.samples < 1) throw ConfigError("monte carlo selection needs at least one sample");
  if (options.top_k < 1) throw ConfigError("monte carlo selection: top_k must be >= 1");
  SelectionResult out;
  if (zoo.empty()) return out;
  double a_ori = 0.0;
  for (const auto& m : zoo) a_ori = std::max(a_ori, m.baseline_accuracy());
  const auto spec = RewardSpec::make(options.alpha, options.t_constraint_ms, a_ori);

  for (const auto& net : zoo) {
    BackboneStats s;
    s.model = net.name();
    s.accuracy = net.baseline_accuracy();
    try {
      s.design = optimize_design(net, fpga);
      s.design_found = true;
    } catch (const InfeasibleError& e) {
      s.message = e.what();
      out.stats.push_back(s);
      continue;
    }
    s.baseline_ms = network_latency(net, s.design, fpga).total_ms;
    const auto space = build_space(net, s.design, analyze_network(net, s.design, fpga), fpga, options.caps);
    Rng rng(options.seed ^ name_hash(net.name()));
    double total = 0.0;
    s.min_ms = std::numeric_limits<double>::infinity();
    for (int i = 0; i < options.samples; ++i) {
      const Choices choices = i == 0 ? space.identity() : space.sample_uniform(rng);
      ++s.samples;
      const auto config = space.config(choices);
      const auto settings = to_settings(net, config);
      if (resource_violation(net, config.design, fpga, settings)) {
        ++s.infeasible;
        continue;
      }
      const double lat = network_latency(net, config.design, fpga, settings).total_ms;
      s.min_ms = std::min(s.min_ms, lat);
      s.max_ms = std::max(s.max_ms, lat);
      total += lat;
      if (lat <= options.t_constraint_ms) ++s.satisfied;
    }
    const int measured = s.samples - s.infeasible;
    s.avg_ms = measured > 0 ? total / measured : 0.0;
    s.pruned = measured == 0 || s.min_ms > options.t_constraint_ms;
    if (!s.pruned) s.score = reward(s.accuracy, s.min_ms, spec);
    if (measured == 0) s.min_ms = 0.0;
    out.stats.push_back(s);
  }

  std::vector<const BackboneStats*> survivors;
  for (const auto& s : out.stats)
    if (s.design_found && !s.pruned) survivors.push_back(&s);
  std::stable_sort(survivors.begin(), survivors.end(), [](const BackboneStats* a, const BackboneStats* b) {
    if (a->score != b->score) return a->score > b->score;
    if (a->min_ms != b->min_ms) return a->min_ms < b->min_ms;
    return a->model < b->model;
  });
  for (const auto* s : survivors) out.ranked.push_back(s->model);
  for (std::size_t i = 0; i < out.ranked.size() && i < static_cast<std::size_t>(options.top_k); ++i)
    out.selected.push_back(out.ranked[i]);
  return out;
}

BackboneSearch search_backbone(const NetworkArch& net, const FpgaSpec& fpga, const SearchOptions& options,
                               Evaluator& evaluator, const JointSpace* space) {
  if (options.episodes_max < 1) throw ConfigError("search: episodes_max must be >= 1");
  if (options.beta < 0) throw ConfigError("search: beta must be non-negative");
  BackboneSearch out;
  out.model = net.name();
  out.baseline_accuracy = net.baseline_accuracy();
  out.spec = RewardSpec::make(options.alpha, options.t_constraint_ms, net.baseline_accuracy(), options.a_min_fraction,
                              options.t_min_fraction);
  if (space) {
    out.baseline_design = space->baseline();
    out.space = *space;
  } else {
    out.baseline_design = optimize_design(net, fpga);
    out.space = build_space(net, out.baseline_design, analyze_network(net, out.baseline_design, fpga), fpga,
                            options.caps);
  }
  out.baseline_ms = network_latency(net, out.baseline_design, fpga).total_ms;

  std::vector<std::size_t> slots;
  for (const auto& d : out.space.dimensions()) slots.push_back(d.count);
  Controller controller(slots, options.controller);
  Rng rng(options.seed ^ name_hash(net.name()));
  EvaluationCache cache;
  const int jobs = evaluator.concurrent_safe() ? options.jobs : 1;
  const auto m = static_cast<std::size_t>(options.controller.batch);

  for (std::size_t start = 0; start < static_cast<std::size_t>(options.episodes_max); start += m) {
    const std::size_t n = std::min(m, static_cast<std::size_t>(options.episodes_max) - start);
    std::vector<Choices> batch_actions;
    for (std::size_t i = 0; i < n; ++i) batch_actions.push_back(controller.sample(rng).actions);
    std::vector<Episode> batch(n);
    parallel_for(n, jobs, [&](std::size_t i) {
      batch[i] = evaluate_choices(net, out.space, batch_actions[i], fpga, out.spec, evaluator, options.beta, &cache);
      batch[i].index = start + i;
    });
    if (n == m) {
      std::vector<ScoredSample> scored;
      for (const auto& e : batch) scored.push_back({e.actions, e.reward});
      controller.update(scored);
    }
    for (auto& e : batch) out.episodes.push_back(std::move(e));
  }

  out.reference = evaluate_choices(net, out.space, out.space.identity(), fpga, out.spec, evaluator, options.beta, &cache);
  if (out.reference.feasible) out.best = out.reference;
  for (const auto& e : out.episodes) {
    if (!out.best_reward || e.reward > out.best_reward->reward) out.best_reward = e;
    if (e.feasible && (!out.best || better_answer(e, *out.best))) out.best = e;
  }
  return out;
}

SearchResult run_search(const std::vector<NetworkArch>& backbones, const FpgaSpec& fpga, const SearchOptions& options,
                        Evaluator& evaluator) {
  SearchResult out;
  for (const auto& net : backbones) {
    out.backbones.push_back(search_backbone(net, fpga, options, evaluator));
    const auto& b = out.backbones.back();
    if (b.reference.feasible)
      out.pareto.insert({b.reference.config, b.reference.digest, b.reference.latency_ms, *b.reference.accuracy});
    for (const auto& e : b.episodes)
      if (e.feasible) out.pareto.insert({e.config, e.digest, e.latency_ms, *e.accuracy});
    if (b.best && (!out.best || better_answer(*b.best, *out.best))) out.best = b.best;
  }
  if (!out.best) {
    if (backbones.empty()) {
      out.diagnostic = "no backbone to search";
    } else {
      double fastest = std::numeric_limits<double>::infinity();
      for (const auto& b : out.backbones)
        for (const auto& e : b.episodes)
          if (!e.failed) fastest = std::min(fastest, e.latency_ms);
      out.diagnostic = "no configuration met T = " + std::to_string(options.t_constraint_ms) + " ms";
      if (std::isfinite(fastest)) out.diagnostic += "; fastest sampled latency " + std::to_string(fastest) + " ms";
    }
  }
  return out;
}

ExhaustiveResult exhaustive_search(const NetworkArch& net, const JointSpace& space, const FpgaSpec& fpga,
                                   const RewardSpec& spec, Evaluator& evaluator, int beta, std::uint64_t cap) {
  if (!space.cardinality_exact() || space.cardinality() > cap)
    throw ConfigError("exhaustive search: space cardinality exceeds the cap of " + std::to_string(cap));
  ExhaustiveResult out;
  EvaluationCache cache;
  for (std::uint64_t i = 0; i < space.cardinality(); ++i) {
    auto e = evaluate_choices(net, space, space.decode(i), fpga, spec, evaluator, beta, &cache);
    e.index = static_cast<std::size_t>(i);
    ++out.evaluated;
    if (!out.best || e.reward > out.best->reward) out.best = std::move(e);
  }
  return out;
}

SearchConfig search_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("search config: expected an object");
  static const std::set<std::string> known{"alpha",       "beta",           "gamma",          "lr",
                                           "batch",       "episodes_max",   "t_constraint_ms", "top_k",
                                           "seed",        "evaluator",      "mc_samples",     "jobs",
                                           "a_min_fraction", "t_min_fraction", "baseline_decay", "caps"};
  for (const auto& [key, value] : doc.items())
    if (!known.count(key)) throw ConfigError("search config: unknown key " + key);
  SearchConfig c;
  auto& s = c.search;
  try {
    s.alpha = doc.value("alpha", s.alpha);
    s.beta = doc.value("beta", s.beta);
    s.controller.gamma = doc.value("gamma", s.controller.gamma);
    s.controller.lr = doc.value("lr", s.controller.lr);
    s.controller.batch = doc.value("batch", s.controller.batch);
    s.controller.baseline_decay = doc.value("baseline_decay", s.controller.baseline_decay);
    s.episodes_max = doc.value("episodes_max", s.episodes_max);
    s.t_constraint_ms = doc.value("t_constraint_ms", s.t_constraint_ms);
    s.seed = doc.value("seed", s.seed);
    s.jobs = doc.value("jobs", s.jobs);
    s.a_min_fraction = doc.value("a_min_fraction", s.a_min_fraction);
    s.t_min_fraction = doc.value("t_min_fraction", s.t_min_fraction);
    if (doc.contains("caps")) s.caps = caps_from_json(doc.at("caps"));
    c.top_k = doc.value("top_k", c.top_k);
    c.mc_samples = doc.value("mc_samples", c.mc_samples);
    if (doc.contains("evaluator")) c.evaluator = doc.at("evaluator");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("search config: ") + e.what());
  }
  s.controller.validate();
  if (s.episodes_max < 1) throw ConfigError("search config: episodes_max must be >= 1");
  if (s.jobs < 1) throw ConfigError("search config: jobs must be >= 1");
  if (c.top_k < 1) throw ConfigError("search config: top_k must be >= 1");
  if (c.mc_samples < 1) throw ConfigError("search config: mc_samples must be >= 1");
  return c;
}

nlohmann::json to_json(const SearchConfig& c) {
  const auto& s = c.search;
  return {{"alpha", s.alpha},
          {"beta", s.beta},
          {"gamma", s.controller.gamma},
          {"lr", s.controller.lr},
          {"batch", s.controller.batch},
          {"baseline_decay", s.controller.baseline_decay},
          {"episodes_max", s.episodes_max},
          {"t_constraint_ms", s.t_constraint_ms},
          {"seed", s.seed},
          {"jobs", s.jobs},
          {"a_min_fraction", s.a_min_fraction},
          {"t_min_fraction", s.t_min_fraction},
          {"caps", to_json(s.caps)},
          {"top_k", c.top_k},
          {"mc_samples", c.mc_samples},
          {"evaluator", c.evaluator}};
}

}  // namespace hotsearch
