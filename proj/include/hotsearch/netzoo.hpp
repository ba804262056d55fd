#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hotsearch/tensor.hpp"

namespace hotsearch {

struct NodeSpec {
  std::string id;
  int rows = 1;
  int cols = 1;
  int channels = 1;

  bool operator==(const NodeSpec&) const = default;
};

enum class OpKind { Conv, DepthwiseConv, Pool, Linear };

std::string_view to_string(OpKind kind);
OpKind op_kind_from_string(std::string_view text);

struct OperatorSpec {
  std::string src;
  std::string dst;
  OpKind kind = OpKind::Conv;
  int k = 1;
  int stride = 1;
  int padding = 0;
  // [dst_ch][src_ch][K][K]; [ch][1][K][K] for depthwise. Absent for Pool and for
  // structure-only manifests.
  std::optional<FloatTensor> weights;
  // Pool/Linear are zero-latency unless this is set.
  std::optional<std::int64_t> fixed_latency_cycles;

  bool is_convolution() const { return kind == OpKind::Conv || kind == OpKind::DepthwiseConv; }
  bool operator==(const OperatorSpec&) const = default;
};

// A neural architecture: feature-map nodes, operator edges, pre-trained weights
// and the baseline accuracy. Immutable once constructed; transforms return new
// instances. The constructor validates every structural invariant and stores
// the operators in a deterministic topological order.
class NetworkArch {
 public:
  NetworkArch(std::string name, double baseline_accuracy, std::vector<NodeSpec> nodes,
              std::vector<OperatorSpec> ops);

  const std::string& name() const { return name_; }
  double baseline_accuracy() const { return baseline_accuracy_; }
  const std::vector<NodeSpec>& nodes() const { return nodes_; }
  const std::vector<OperatorSpec>& ops() const { return ops_; }

  const NodeSpec& node(std::string_view id) const;
  bool has_node(std::string_view id) const;
  std::vector<std::size_t> producers(std::string_view node_id) const;
  std::vector<std::size_t> consumers(std::string_view node_id) const;

  // Conv and depthwise ops, in topological order.
  std::vector<std::size_t> convolution_ops() const;

  // Sum of filter elements over convolution ops.
  std::int64_t weight_count() const;
  // weight_count() plus one bias per output channel of each convolution, the
  // usual model-zoo parameter count.
  std::int64_t parameter_count() const;

  // Order-sensitive FNV-1a over the float bit patterns of every weight tensor.
  std::uint64_t weight_checksum() const;

  NetworkArch with_ops(std::vector<OperatorSpec> ops) const;
  NetworkArch with_graph(std::vector<NodeSpec> nodes, std::vector<OperatorSpec> ops) const;

  bool operator==(const NetworkArch&) const = default;

 private:
  void validate_and_order();

  std::string name_;
  double baseline_accuracy_ = 0.0;
  std::vector<NodeSpec> nodes_;
  std::vector<OperatorSpec> ops_;
};

struct ModelZoo {
  std::vector<NetworkArch> models;

  const NetworkArch& find(std::string_view name) const;
};

// Spatial output size of a sliding-window op.
int window_output(int input, int k, int stride, int padding);

// Manifest I/O. A manifest is a single model object, an array of model
// objects, or {"models": [...]}. Weight paths are relative to the manifest.
ModelZoo parse_manifest(const std::filesystem::path& path);
ModelZoo parse_manifest_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);

// Writes <dir>/<stem>.json plus one little-endian float32 blob per weighted op.
std::filesystem::path write_manifest(const ModelZoo& zoo, const std::filesystem::path& dir,
                                     const std::string& stem);
nlohmann::json manifest_json(const NetworkArch& net, const std::string& weight_prefix);

// Reference and synthetic networks. Weights are uniform in [-1, 1] from a
// seeded generator. Names: "alexnet", "tiny", "random".
NetworkArch builtin_network(std::string_view name, std::uint64_t seed = 1, int depth = 3);
std::vector<std::string> builtin_names();

// Permutes the input channels of op `op_index`: new channel i is old channel
// permutation[i]. The producing op's output filters are permuted the same way,
// so the network function is unchanged.
NetworkArch reorder_input_channels(const NetworkArch& net, std::size_t op_index,
                                   std::span<const int> permutation);

}  // namespace hotsearch
