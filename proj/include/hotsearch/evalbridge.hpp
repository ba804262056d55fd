#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hotsearch/netzoo.hpp"
#include "hotsearch/searchspace.hpp"

namespace hotsearch {

// Serialisation with sorted keys and no whitespace.
std::string canonical_json(const nlohmann::json& doc);
std::string sha256_hex(std::string_view bytes);
std::string digest(const nlohmann::json& doc);
std::string digest(const CompressionConfig& config);

struct EvalRequest {
  std::string model_name;
  std::string config_digest;
  nlohmann::json config;
  int beta = 10;
};

EvalRequest make_request(const CompressionConfig& config, int beta);
nlohmann::json to_json(const EvalRequest& request);
EvalRequest request_from_json(const nlohmann::json& doc);

struct EvalResponse {
  enum class Status { Ok, Error };
  Status status = Status::Error;
  std::optional<double> accuracy;
  std::string message;

  static EvalResponse ok(double accuracy, std::string message = {});
  static EvalResponse error(std::string message);
  bool is_ok() const { return status == Status::Ok; }
};

nlohmann::json to_json(const EvalResponse& response);
// Throws ProtocolError on anything that is not a valid response object.
EvalResponse response_from_json(const nlohmann::json& doc);

class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual EvalResponse evaluate(const EvalRequest& request) = 0;
  // Whether evaluate may be called from several threads at once.
  virtual bool concurrent_safe() const = 0;
  virtual std::string kind() const = 0;
};

struct SurrogateCoefficients {
  double pruned_energy = 0.05;
  double quant_error = 0.10;
  double cut_fraction = 0.15;
  double a_min_fraction = 0.5;  // accuracy floor as a fraction of the baseline
};

struct CompressionStats {
  double pruned_energy_fraction = 0.0;  // network-wide share of weight energy removed by patterns
  double quant_error_ratio = 0.0;       // weight-count-weighted max error over max |w|
  double cut_fraction = 0.0;            // removed channels over channels of non-input nodes
};

// Structure-only networks fall back to pat_c / K^2 and 2^(-F-1) / 2^(I-1).
CompressionStats compression_stats(const NetworkArch& net, const CompressionConfig& config);

double surrogate_accuracy(double a_ori, const CompressionStats& stats, const SurrogateCoefficients& coeffs = {});

// Deterministic stand-in for fine-tuning. Expansion costs nothing.
class SurrogateEvaluator : public Evaluator {
 public:
  explicit SurrogateEvaluator(std::vector<NetworkArch> models, SurrogateCoefficients coeffs = {});

  EvalResponse evaluate(const EvalRequest& request) override;
  bool concurrent_safe() const override { return true; }
  std::string kind() const override { return "surrogate"; }

  // Betas seen so far; the surrogate ignores the budget but records it.
  std::vector<int> recorded_betas() const;

 private:
  const NetworkArch& model(const std::string& name) const;

  std::vector<NetworkArch> models_;
  SurrogateCoefficients coeffs_;
  mutable std::mutex mutex_;
  std::vector<int> betas_;
};

// CSV "digest,accuracy" lookup.
class TableEvaluator : public Evaluator {
 public:
  enum class Fallback { Error, Surrogate };

  TableEvaluator(std::map<std::string, double> table, Fallback fallback,
                 std::shared_ptr<Evaluator> surrogate = nullptr);
  static TableEvaluator from_csv(const std::filesystem::path& path, Fallback fallback,
                                 std::shared_ptr<Evaluator> surrogate = nullptr);

  EvalResponse evaluate(const EvalRequest& request) override;
  bool concurrent_safe() const override { return true; }
  std::string kind() const override { return "table"; }

 private:
  std::map<std::string, double> table_;
  Fallback fallback_;
  std::shared_ptr<Evaluator> surrogate_;
};

std::map<std::string, double> parse_accuracy_table(std::istream& in, const std::string& source);

// Child process speaking NDJSON on stdin/stdout. The child's first line must
// be the handshake {"protocol":"hotsearch-eval","version":1}; after that each
// request line gets exactly one response line. One request in flight at a time.
class ExternalEvaluator : public Evaluator {
 public:
  explicit ExternalEvaluator(std::vector<std::string> command,
                             std::chrono::milliseconds timeout = std::chrono::seconds(300));
  ~ExternalEvaluator() override;
  ExternalEvaluator(const ExternalEvaluator&) = delete;
  ExternalEvaluator& operator=(const ExternalEvaluator&) = delete;

  EvalResponse evaluate(const EvalRequest& request) override;
  bool concurrent_safe() const override { return false; }
  std::string kind() const override { return "external"; }

 private:
  void start();
  void stop();
  std::optional<std::string> read_line(std::chrono::milliseconds timeout);
  void write_line(const std::string& line);

  std::vector<std::string> command_;
  std::chrono::milliseconds timeout_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  std::mutex mutex_;
};

inline constexpr const char* kEvalProtocol = "hotsearch-eval";
inline constexpr int kEvalProtocolVersion = 1;

// {"kind": "surrogate" | "table" | "external", ...}
std::shared_ptr<Evaluator> make_evaluator(const nlohmann::json& spec, const std::vector<NetworkArch>& models,
                                          const std::filesystem::path& base_dir = ".");

// Short forms used on the command line: "surrogate", "table:PATH[:surrogate]",
// "external:CMD ARGS...".
nlohmann::json evaluator_spec_from_string(const std::string& text);

}  // namespace hotsearch
