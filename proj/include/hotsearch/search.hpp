#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hotsearch/evalbridge.hpp"
#include "hotsearch/netzoo.hpp"
#include "hotsearch/perfmodel.hpp"
#include "hotsearch/rng.hpp"
#include "hotsearch/searchspace.hpp"

namespace hotsearch {

struct RewardSpec {
  double alpha = 0.7;
  double t_constraint_ms = 1.0;
  double a_min = 0.0;
  double t_min_ms = 0.5;
  double a_ori = 1.0;

  void validate() const;
  // a_min = a_min_fraction * a_ori and t_min = t_min_fraction * T.
  static RewardSpec make(double alpha, double t_constraint_ms, double a_ori, double a_min_fraction = 0.5,
                         double t_min_fraction = 0.5);
};

// Over the constraint the accuracy term is -1 and the latency term is T - lat;
// otherwise both are normalised to [-1, 1].
double reward(std::optional<double> accuracy, double latency_ms, const RewardSpec& spec);

struct ControllerConfig {
  double gamma = 0.99;
  double lr = 0.05;
  int batch = 5;
  double baseline_decay = 0.9;

  void validate() const;
};

struct ControllerSample {
  Choices actions;
  std::vector<double> log_probs;  // per slot

  double log_prob() const;
};

struct ScoredSample {
  Choices actions;
  double reward = 0.0;
};

// Independent softmax logits per decision slot, trained with REINFORCE and an
// exponential-moving-average baseline.
class Controller {
 public:
  Controller(std::vector<std::size_t> slot_sizes, ControllerConfig config = {});

  ControllerSample sample(Rng& rng) const;
  std::vector<double> probabilities(std::size_t slot) const;
  double log_prob(const Choices& actions) const;

  const std::vector<std::vector<double>>& logits() const { return logits_; }
  void set_logits(std::vector<std::vector<double>> logits);
  std::optional<double> baseline() const { return baseline_; }
  const ControllerConfig& config() const { return config_; }

  // (1/m) sum_k sum_t gamma^(T - t) grad log pi(a_t) (R_k - b) for slots t = 1..T.
  std::vector<std::vector<double>> gradient(const std::vector<ScoredSample>& batch, double baseline) const;

  // One ascent step; the baseline starts at the first batch mean and then
  // follows b <- decay * b + (1 - decay) * mean.
  void update(const std::vector<ScoredSample>& batch);

 private:
  std::vector<std::vector<double>> logits_;
  ControllerConfig config_;
  std::optional<double> baseline_;
};

struct Episode {
  std::string model;
  std::size_t index = 0;
  Choices actions;
  CompressionConfig config;
  std::string digest;
  double latency_ms = 0.0;
  std::optional<double> accuracy;
  double reward = -1.0;
  bool feasible = false;  // resources fit and latency <= T
  bool failed = false;    // resource violation or evaluator failure
  std::string message;
};

struct ParetoPoint {
  CompressionConfig config;
  std::string digest;
  double latency_ms = 0.0;
  double accuracy = 0.0;
};

// Lower latency and higher accuracy are better.
bool dominates(const ParetoPoint& a, const ParetoPoint& b);

class ParetoSet {
 public:
  // False when the point is dominated by, or equal to, a member.
  bool insert(const ParetoPoint& point);
  const std::vector<ParetoPoint>& points() const { return points_; }

 private:
  std::vector<ParetoPoint> points_;
};

nlohmann::json to_json(const ParetoSet& set);

// Memoises evaluator answers by configuration digest.
class EvaluationCache {
 public:
  std::optional<EvalResponse> find(const std::string& digest) const;
  void store(const std::string& digest, const EvalResponse& response);

 private:
  mutable std::mutex mutex_;
  std::map<std::string, EvalResponse> entries_;
};

// Latency, feasibility, optional accuracy and reward of one configuration.
// Accuracy is only requested when the latency meets T.
Episode evaluate_choices(const NetworkArch& net, const JointSpace& space, const Choices& choices, const FpgaSpec& fpga,
                         const RewardSpec& spec, Evaluator& evaluator, int beta, EvaluationCache* cache = nullptr);

EvalResponse fine_tune_proxy(const CompressionConfig& config, Evaluator& evaluator, int beta);

struct BackboneStats {
  std::string model;
  double accuracy = 0.0;
  bool design_found = false;
  std::string message;
  AcceleratorDesign design;
  double baseline_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
  double avg_ms = 0.0;
  int samples = 0;
  int infeasible = 0;  // draws rejected by the resource check
  int satisfied = 0;   // draws with latency <= T
  bool pruned = true;
  double score = -1.0;
};

struct SelectionResult {
  std::vector<BackboneStats> stats;  // zoo order
  std::vector<std::string> ranked;   // survivors, best first
  std::vector<std::string> selected; // first top_k of ranked
};

struct SelectionOptions {
  double t_constraint_ms = 1.0;
  int samples = 100;
  int top_k = 1;
  double alpha = 0.7;
  std::uint64_t seed = 1;
  SpaceCaps caps;
};

// Draw 0 of every model is its uncompressed baseline; the rest are uniform.
SelectionResult monte_carlo_select(const std::vector<NetworkArch>& zoo, const FpgaSpec& fpga,
                                   const SelectionOptions& options);

struct SearchOptions {
  double alpha = 0.7;
  double t_constraint_ms = 1.0;
  double a_min_fraction = 0.5;
  double t_min_fraction = 0.5;
  int beta = 10;
  int episodes_max = 2000;
  std::uint64_t seed = 1;
  int jobs = 1;
  ControllerConfig controller;
  SpaceCaps caps;
};

struct BackboneSearch {
  std::string model;
  AcceleratorDesign baseline_design;
  double baseline_ms = 0.0;
  double baseline_accuracy = 0.0;
  RewardSpec spec;
  JointSpace space;
  std::vector<Episode> episodes;
  Episode reference;                  // the backbone itself, outside the trace
  std::optional<Episode> best;        // feasible, max accuracy, then min latency
  std::optional<Episode> best_reward; // highest reward seen
};

struct SearchResult {
  std::vector<BackboneSearch> backbones;
  ParetoSet pareto;
  std::optional<Episode> best;
  std::string diagnostic;  // set when no feasible configuration was found
};

BackboneSearch search_backbone(const NetworkArch& net, const FpgaSpec& fpga, const SearchOptions& options,
                               Evaluator& evaluator, const JointSpace* space = nullptr);

SearchResult run_search(const std::vector<NetworkArch>& backbones, const FpgaSpec& fpga, const SearchOptions& options,
                        Evaluator& evaluator);

struct ExhaustiveResult {
  std::optional<Episode> best;  // argmax reward, lowest index on ties
  std::uint64_t evaluated = 0;
};

ExhaustiveResult exhaustive_search(const NetworkArch& net, const JointSpace& space, const FpgaSpec& fpga,
                                   const RewardSpec& spec, Evaluator& evaluator, int beta = 10,
                                   std::uint64_t cap = 100'000);

// The search configuration file; unknown keys are rejected.
struct SearchConfig {
  SearchOptions search;
  int top_k = 1;
  int mc_samples = 100;
  nlohmann::json evaluator = {{"kind", "surrogate"}};
};

SearchConfig search_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const SearchConfig& config);

}  // namespace hotsearch
