#include "hotsearch/evalbridge.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <tuple>

#include "hotsearch/compress.hpp"
#include "hotsearch/errors.hpp"

namespace hotsearch {

namespace {

using PatternKey = std::tuple<std::uint64_t, std::size_t, int, int, int>;

struct PatternCache {
  std::mutex mutex;
  std::map<PatternKey, double> pruned;
};

PatternCache& pattern_cache() {
  static PatternCache cache;
  return cache;
}

double energy(const FloatTensor& w) {
  double e = 0.0;
  for (float v : w.data()) e += static_cast<double>(v) * v;
  return e;
}

// Energy removed when the layer's kernels take their harmonised masks.
double pattern_pruned_energy(const FloatTensor& w, int k, PatternChoice choice, int tn) {
  const auto lib = select_library(w, k, choice.pat_c, choice.pat_n);
  const auto assigned = assign_patterns(w, lib);
  const std::size_t m = w.dim(0), n = w.dim(1);
  const auto harm = harmonize_tiles(assigned, m, n, tn);
  double pruned = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const auto& mask = lib.masks[harm.kernel_masks[i * n + j]];
      const auto ch = static_cast<std::size_t>(harm.permutation[j]);
      for (int z : mask.zeros) {
        const double v = w(i, ch, z / k, z % k);
        pruned += v * v;
      }
    }
  return pruned;
}

std::int64_t nominal_weight_count(const NetworkArch& net, std::size_t op_index) {
  const auto d = layer_dims(net, op_index);
  return d.m * (d.depthwise ? 1 : d.n) * d.k * d.k;
}

}  // namespace

std::string canonical_json(const nlohmann::json& doc) { return doc.dump(-1, ' ', false); }

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256: digest computation failed");
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return out.str();
}

std::string digest(const nlohmann::json& doc) { return sha256_hex(canonical_json(doc)); }

std::string digest(const CompressionConfig& config) { return digest(to_json(config)); }

EvalRequest make_request(const CompressionConfig& config, int beta) {
  EvalRequest r;
  r.model_name = config.model;
  r.config = to_json(config);
  r.config_digest = digest(r.config);
  r.beta = beta;
  return r;
}

nlohmann::json to_json(const EvalRequest& request) {
  return {{"model", request.model_name},
          {"digest", request.config_digest},
          {"config", request.config},
          {"beta", request.beta}};
}

EvalRequest request_from_json(const nlohmann::json& doc) {
  try {
    EvalRequest r;
    r.model_name = doc.at("model").get<std::string>();
    r.config_digest = doc.at("digest").get<std::string>();
    r.config = doc.at("config");
    r.beta = doc.at("beta").get<int>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("eval request: ") + e.what());
  }
}

EvalResponse EvalResponse::ok(double accuracy, std::string message) {
  return {Status::Ok, accuracy, std::move(message)};
}

EvalResponse EvalResponse::error(std::string message) { return {Status::Error, std::nullopt, std::move(message)}; }

nlohmann::json to_json(const EvalResponse& response) {
  nlohmann::json out{{"status", response.is_ok() ? "ok" : "error"}};
  if (response.accuracy) out["accuracy"] = *response.accuracy;
  if (!response.message.empty()) out["message"] = response.message;
  return out;
}

EvalResponse response_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ProtocolError("eval response: expected an object");
  const auto status = doc.find("status");
  if (status == doc.end() || !status->is_string()) throw ProtocolError("eval response: missing status");
  std::string message;
  if (auto m = doc.find("message"); m != doc.end() && m->is_string()) message = m->get<std::string>();
  if (*status == "error") {
    if (doc.contains("accuracy")) throw ProtocolError("eval response: error status must not carry an accuracy");
    return EvalResponse::error(message);
  }
  if (*status != "ok") throw ProtocolError("eval response: unknown status");
  const auto acc = doc.find("accuracy");
  if (acc == doc.end() || !acc->is_number()) throw ProtocolError("eval response: ok status needs a numeric accuracy");
  const double a = acc->get<double>();
  if (!(a >= 0.0 && a <= 1.0)) throw ProtocolError("eval response: accuracy outside [0, 1]");
  return EvalResponse::ok(a, message);
}

CompressionStats compression_stats(const NetworkArch& net, const CompressionConfig& config) {
  CompressionStats s;
  double total_energy = 0.0, pruned_energy = 0.0;
  double weight_total = 0.0, weighted_error = 0.0;
  std::map<std::size_t, const LayerChoice*> choices;
  for (const auto& l : config.layers) choices[l.op_index] = &l;

  for (std::size_t i : net.convolution_ops()) {
    const auto& op = net.ops()[i];
    const auto it = choices.find(i);
    const LayerChoice* choice = it == choices.end() ? nullptr : it->second;
    if (!op.weights) {
      const double count = static_cast<double>(nominal_weight_count(net, i));
      total_energy += count;
      weight_total += count;
      if (choice && choice->pattern.active()) pruned_energy += count * choice->pattern.pat_c / (op.k * op.k);
      if (choice && choice->quant_frac)
        weighted_error +=
            count * std::ldexp(1.0, -*choice->quant_frac - 1) / std::ldexp(1.0, choice->int_bits - 1);
      continue;
    }
    const auto& w = *op.weights;
    total_energy += energy(w);
    weight_total += static_cast<double>(w.size());
    if (choice && choice->pattern.active() && op.k >= 2) {
      const PatternKey key{net.weight_checksum(), i, choice->pattern.pat_c, choice->pattern.pat_n, config.design.tn};
      auto& cache = pattern_cache();
      std::optional<double> cached;
      {
        std::lock_guard lock(cache.mutex);
        if (auto c = cache.pruned.find(key); c != cache.pruned.end()) cached = c->second;
      }
      if (!cached) {
        cached = pattern_pruned_energy(w, op.k, choice->pattern, std::max(1, config.design.tn));
        std::lock_guard lock(cache.mutex);
        cache.pruned.emplace(key, *cached);
      }
      pruned_energy += *cached;
    }
    if (choice && choice->quant_frac) {
      double peak = 0.0;
      for (float v : w.data()) peak = std::max(peak, std::abs(static_cast<double>(v)));
      if (peak > 0.0) {
        const auto q = quantize(w, {choice->int_bits, *choice->quant_frac});
        weighted_error += static_cast<double>(w.size()) * q.max_abs_error / peak;
      }
    }
  }
  s.pruned_energy_fraction = total_energy > 0.0 ? pruned_energy / total_energy : 0.0;
  s.quant_error_ratio = weight_total > 0.0 ? weighted_error / weight_total : 0.0;

  double channels = 0.0, cut = 0.0;
  for (const auto& n : net.nodes())
    if (!net.producers(n.id).empty()) channels += n.channels;
  for (const auto& [node, c] : config.cuts) cut += c;
  s.cut_fraction = channels > 0.0 ? cut / channels : 0.0;
  return s;
}

double surrogate_accuracy(double a_ori, const CompressionStats& stats, const SurrogateCoefficients& coeffs) {
  const double raw = a_ori - coeffs.pruned_energy * stats.pruned_energy_fraction -
                     coeffs.quant_error * stats.quant_error_ratio - coeffs.cut_fraction * stats.cut_fraction;
  return std::clamp(raw, coeffs.a_min_fraction * a_ori, a_ori);
}

SurrogateEvaluator::SurrogateEvaluator(std::vector<NetworkArch> models, SurrogateCoefficients coeffs)
    : models_(std::move(models)), coeffs_(coeffs) {}

const NetworkArch& SurrogateEvaluator::model(const std::string& name) const {
  for (const auto& m : models_)
    if (m.name() == name) return m;
  throw ValidationError("surrogate evaluator: unknown model " + name);
}

EvalResponse SurrogateEvaluator::evaluate(const EvalRequest& request) {
  {
    std::lock_guard lock(mutex_);
    betas_.push_back(request.beta);
  }
  try {
    const auto& net = model(request.model_name);
    const auto config = config_from_json(request.config);
    return EvalResponse::ok(surrogate_accuracy(net.baseline_accuracy(), compression_stats(net, config), coeffs_));
  } catch (const Error& e) {
    return EvalResponse::error(e.what());
  }
}

std::vector<int> SurrogateEvaluator::recorded_betas() const {
  std::lock_guard lock(mutex_);
  return betas_;
}

std::map<std::string, double> parse_accuracy_table(std::istream& in, const std::string& source) {
  std::map<std::string, double> table;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw ParseError(source + ":" + std::to_string(line_no) + ": expected digest,accuracy");
    const std::string key = line.substr(0, comma);
    const std::string value = line.substr(comma + 1);
    if (line_no == 1 && key == "digest") continue;
    double acc = 0.0;
    try {
      std::size_t used = 0;
      acc = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": accuracy is not a number");
    }
    if (!(acc >= 0.0 && acc <= 1.0)) throw ParseError(source + ":" + std::to_string(line_no) + ": accuracy outside [0, 1]");
    table[key] = acc;
  }
  return table;
}

TableEvaluator::TableEvaluator(std::map<std::string, double> table, Fallback fallback,
                               std::shared_ptr<Evaluator> surrogate)
    : table_(std::move(table)), fallback_(fallback), surrogate_(std::move(surrogate)) {
  if (fallback_ == Fallback::Surrogate && !surrogate_)
    throw ConfigError("table evaluator: surrogate fallback needs a surrogate evaluator");
}

TableEvaluator TableEvaluator::from_csv(const std::filesystem::path& path, Fallback fallback,
                                        std::shared_ptr<Evaluator> surrogate) {
  std::ifstream in(path);
  if (!in) throw ConfigError("table evaluator: cannot open " + path.string());
  return TableEvaluator(parse_accuracy_table(in, path.string()), fallback, std::move(surrogate));
}

EvalResponse TableEvaluator::evaluate(const EvalRequest& request) {
  if (auto it = table_.find(request.config_digest); it != table_.end()) return EvalResponse::ok(it->second);
  if (fallback_ == Fallback::Surrogate) return surrogate_->evaluate(request);
  return EvalResponse::error("table evaluator: no entry for digest " + request.config_digest);
}

std::shared_ptr<Evaluator> make_evaluator(const nlohmann::json& spec, const std::vector<NetworkArch>& models,
                                          const std::filesystem::path& base_dir) {
  if (!spec.is_object() || !spec.contains("kind")) throw ConfigError("evaluator: expected {\"kind\": ...}");
  const std::string kind = spec.at("kind").get<std::string>();
  try {
    SurrogateCoefficients c;
    c.pruned_energy = spec.value("pruned_energy", c.pruned_energy);
    c.quant_error = spec.value("quant_error", c.quant_error);
    c.cut_fraction = spec.value("cut_fraction", c.cut_fraction);
    c.a_min_fraction = spec.value("a_min_fraction", c.a_min_fraction);
    if (kind == "surrogate") return std::make_shared<SurrogateEvaluator>(models, c);
    if (kind == "table") {
      std::filesystem::path path = spec.at("path").get<std::string>();
      if (path.is_relative()) path = base_dir / path;
      const std::string fb = spec.value("fallback", std::string("error"));
      if (fb != "error" && fb != "surrogate") throw ConfigError("evaluator: fallback must be error or surrogate");
      const auto fallback = fb == "surrogate" ? TableEvaluator::Fallback::Surrogate : TableEvaluator::Fallback::Error;
      std::shared_ptr<Evaluator> sur;
      if (fallback == TableEvaluator::Fallback::Surrogate) sur = std::make_shared<SurrogateEvaluator>(models, c);
      return std::make_shared<TableEvaluator>(TableEvaluator::from_csv(path, fallback, sur));
    }
    if (kind == "external") {
      const auto command = spec.at("command").get<std::vector<std::string>>();
      if (command.empty()) throw ConfigError("evaluator: external command is empty");
      const double timeout_s = spec.value("timeout_s", 300.0);
      if (!(timeout_s > 0.0)) throw ConfigError("evaluator: timeout_s must be positive");
      return std::make_shared<ExternalEvaluator>(
          command, std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(timeout_s * 1000.0))));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("evaluator: ") + e.what());
  }
  throw ConfigError("evaluator: unknown kind " + kind);
}

nlohmann::json evaluator_spec_from_string(const std::string& text) {
  if (text == "surrogate") return {{"kind", "surrogate"}};
  if (text.rfind("table:", 0) == 0) {
    std::string rest = text.substr(6);
    std::string fallback = "error";
    for (const std::string suffix : {":surrogate", ":error"})
      if (rest.size() > suffix.size() && rest.compare(rest.size() - suffix.size(), suffix.size(), suffix) == 0) {
        fallback = suffix.substr(1);
        rest.resize(rest.size() - suffix.size());
        break;
      }
    return {{"kind", "table"}, {"path", rest}, {"fallback", fallback}};
  }
  if (text.rfind("external:", 0) == 0) {
    std::istringstream words(text.substr(9));
    std::vector<std::string> command;
    for (std::string w; words >> w;) command.push_back(w);
    if (command.empty()) throw ConfigError("evaluator: external needs a command");
    return {{"kind", "external"}, {"command", command}};
  }
  throw ConfigError("evaluator: expected surrogate, table:PATH[:surrogate] or external:CMD");
}

}  // namespace hotsearch
