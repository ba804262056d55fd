#include <algorithm>
#include <cmath>
#include <numeric>

#include "hotsearch/errors.hpp"
#include "hotsearch/search.hpp"

namespace hotsearch {

namespace {

std::vector<double> softmax(const std::vector<double>& logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += p[i] = std::exp(logits[i] - peak);
  for (double& v : p) v /= total;
  return p;
}

}  // namespace

void ControllerConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("controller: gamma must be in (0, 1]");
  if (!(lr > 0.0)) throw ConfigError("controller: lr must be positive");
  if (batch < 1) throw ConfigError("controller: batch must be >= 1");
  if (!(baseline_decay >= 0.0 && baseline_decay < 1.0)) throw ConfigError("controller: baseline_decay must be in [0, 1)");
}

double ControllerSample::log_prob() const { return std::accumulate(log_probs.begin(), log_probs.end(), 0.0); }

Controller::Controller(std::vector<std::size_t> slot_sizes, ControllerConfig config) : config_(config) {
  config_.validate();
  for (std::size_t n : slot_sizes) {
    if (n == 0) throw ValidationError("controller: every slot needs at least one action");
    logits_.emplace_back(n, 0.0);
  }
}

std::vector<double> Controller::probabilities(std::size_t slot) const { return softmax(logits_.at(slot)); }

ControllerSample Controller::sample(Rng& rng) const {
  ControllerSample s;
  for (const auto& slot : logits_) {
    if (slot.size() == 1) {
      s.actions.push_back(0);
      s.log_probs.push_back(0.0);
      continue;
    }
    const auto p = softmax(slot);
    const double u = rng.uniform();
    double cumulative = 0.0;
    std::size_t pick = p.size() - 1;
    for (std::size_t i = 0; i < p.size(); ++i) {
      cumulative += p[i];
      if (u < cumulative) {
        pick = i;
        break;
      }
    }
    s.actions.push_back(pick);
    s.log_probs.push_back(std::log(p[pick]));
  }
  return s;
}

double Controller::log_prob(const Choices& actions) const {
  if (actions.size() != logits_.size()) throw ValidationError("controller: wrong number of actions");
  double total = 0.0;
  for (std::size_t t = 0; t < logits_.size(); ++t) total += std::log(softmax(logits_[t]).at(actions[t]));
  return total;
}

void Controller::set_logits(std::vector<std::vector<double>> logits) {
  if (logits.size() != logits_.size()) throw ValidationError("controller: slot count mismatch");
  for (std::size_t t = 0; t < logits.size(); ++t)
    if (logits[t].size() != logits_[t].size()) throw ValidationError("controller: slot size mismatch");
  for (const auto& slot : logits)
    for (double v : slot)
      if (!std::isfinite(v)) throw ValidationError("controller: logits must be finite");
  logits_ = std::move(logits);
}

std::vector<std::vector<double>> Controller::gradient(const std::vector<ScoredSample>& batch, double baseline) const {
  std::vector<std::vector<double>> grad;
  for (const auto& slot : logits_) grad.emplace_back(slot.size(), 0.0);
  if (batch.empty()) return grad;
  const std::size_t steps = logits_.size();
  std::vector<std::vector<double>> probs;
  for (const auto& slot : logits_) probs.push_back(softmax(slot));
  for (const auto& s : batch) {
    if (s.actions.size() != steps) throw ValidationError("controller: wrong number of actions");
    const double advantage = s.reward - baseline;
    for (std::size_t t = 0; t < steps; ++t) {
      // Slot t is step t + 1 of T.
      const double discount = std::pow(config_.gamma, static_cast<double>(steps - (t + 1)));
      for (std::size_t a = 0; a < probs[t].size(); ++a) {
        const double dlog = (a == s.actions[t] ? 1.0 : 0.0) - probs[t][a];
        grad[t][a] += discount * dlog * advantage;
      }
    }
  }
  for (auto& slot : grad)
    for (double& g : slot) g /= static_cast<double>(batch.size());
  return grad;
}

void Controller::update(const std::vector<ScoredSample>& batch) {
  if (batch.empty()) return;
  double mean = 0.0;
  for (const auto& s : batch) mean += s.reward;
  mean /= static_cast<double>(batch.size());
  if (!baseline_) baseline_ = mean;
  const auto grad = gradient(batch, *baseline_);
  for (std::size_t t = 0; t < logits_.size(); ++t)
    for (std::size_t a = 0; a < logits_[t].size(); ++a) logits_[t][a] += config_.lr * grad[t][a];
  baseline_ = config_.baseline_decay * *baseline_ + (1.0 - config_.baseline_decay) * mean;
}

}  // namespace hotsearch
