#include "hotsearch/netzoo.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>

#include "hotsearch/errors.hpp"
#include "hotsearch/rng.hpp"

namespace hotsearch {

namespace {

std::string op_label(std::size_t index, const OperatorSpec& op) {
  std::ostringstream out;
  out << "op " << index << " (" << op.src << "->" << op.dst << ")";
  return out.str();
}

std::vector<std::size_t> expected_weight_shape(const OperatorSpec& op, const NodeSpec& src,
                                               const NodeSpec& dst) {
  const auto k = static_cast<std::size_t>(op.k);
  switch (op.kind) {
    case OpKind::Conv:
      return {static_cast<std::size_t>(dst.channels), static_cast<std::size_t>(src.channels), k, k};
    case OpKind::DepthwiseConv:
      return {static_cast<std::size_t>(dst.channels), 1, k, k};
    case OpKind::Linear:
      return {static_cast<std::size_t>(dst.channels),
              static_cast<std::size_t>(src.channels) * src.rows * src.cols, 1, 1};
    case OpKind::Pool:
      break;
  }
  return {};
}

}  // namespace

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::Conv: return "conv";
    case OpKind::DepthwiseConv: return "dwconv";
    case OpKind::Pool: return "pool";
    case OpKind::Linear: return "linear";
  }
  return "?";
}

OpKind op_kind_from_string(std::string_view text) {
  if (text == "conv") return OpKind::Conv;
  if (text == "dwconv") return OpKind::DepthwiseConv;
  if (text == "pool") return OpKind::Pool;
  if (text == "linear") return OpKind::Linear;
  throw ParseError("unknown operator kind '" + std::string(text) + "'");
}

int window_output(int input, int k, int stride, int padding) {
  const int span = input + 2 * padding - k;
  if (span < 0) return 0;
  return span / stride + 1;
}

NetworkArch::NetworkArch(std::string name, double baseline_accuracy, std::vector<NodeSpec> nodes,
                         std::vector<OperatorSpec> ops)
    : name_(std::move(name)),
      baseline_accuracy_(baseline_accuracy),
      nodes_(std::move(nodes)),
      ops_(std::move(ops)) {
  validate_and_order();
}

void NetworkArch::validate_and_order() {
  if (name_.empty()) throw ValidationError("network name is empty");
  if (!(baseline_accuracy_ >= 0.0 && baseline_accuracy_ <= 1.0))
    throw ValidationError(name_ + ": baseline_accuracy must lie in [0, 1]");

  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (n.id.empty()) throw ValidationError(name_ + ": node " + std::to_string(i) + " has an empty id");
    if (n.rows < 1 || n.cols < 1 || n.channels < 1)
      throw ValidationError(name_ + ": node '" + n.id + "' must have positive rows/cols/channels");
    if (!index.emplace(n.id, i).second)
      throw ValidationError(name_ + ": duplicate node id '" + n.id + "'");
  }

  for (std::size_t i = 0; i < ops_.size(); ++i) {
    const auto& op = ops_[i];
    const std::string label = name_ + ": " + op_label(i, op);
    auto s = index.find(op.src);
    auto d = index.find(op.dst);
    if (s == index.end()) throw ValidationError(label + ": unknown src node");
    if (d == index.end()) throw ValidationError(label + ": unknown dst node");
    if (op.src == op.dst) throw ValidationError(label + ": self loop");
    if (op.k < 1 || op.stride < 1 || op.padding < 0)
      throw ValidationError(label + ": k and stride must be positive, padding non-negative");
    const auto& src = nodes_[s->second];
    const auto& dst = nodes_[d->second];

    if (op.kind == OpKind::Linear) {
      if (dst.rows != 1 || dst.cols != 1) throw ValidationError(label + ": linear output must be 1x1");
      if (op.k != 1) throw ValidationError(label + ": linear op must have k = 1");
    } else {
      const int rows = window_output(src.rows, op.k, op.stride, op.padding);
      const int cols = window_output(src.cols, op.k, op.stride, op.padding);
      if (rows != dst.rows || cols != dst.cols)
        throw ValidationError(label + ": output dims " + std::to_string(dst.rows) + "x" +
                              std::to_string(dst.cols) + " inconsistent with input, k, stride, padding (expected " +
                              std::to_string(rows) + "x" + std::to_string(cols) + ")");
    }
    if ((op.kind == OpKind::DepthwiseConv || op.kind == OpKind::Pool) && src.channels != dst.channels)
      throw ValidationError(label + ": channel count must be preserved");

    if (op.kind == OpKind::Pool) {
      if (op.weights) throw ValidationError(label + ": pool op cannot carry weights");
    } else if (op.weights) {
      const auto expected = expected_weight_shape(op, src, dst);
      if (op.weights->shape() != expected) {
        std::ostringstream msg;
        msg << label << ": weight shape [";
        for (std::size_t j = 0; j < op.weights->rank(); ++j) msg << (j ? "x" : "") << op.weights->dim(j);
        msg << "] inconsistent with expected [";
        for (std::size_t j = 0; j < expected.size(); ++j) msg << (j ? "x" : "") << expected[j];
        msg << "]";
        throw ValidationError(msg.str());
      }
    }
    if (op.fixed_latency_cycles && *op.fixed_latency_cycles < 0)
      throw ValidationError(label + ": fixed_latency_cycles must be non-negative");
  }

  // Kahn's algorithm; among ready ops the lowest original index goes first.
  std::vector<int> pending_inputs(nodes_.size(), 0);
  for (const auto& op : ops_) ++pending_inputs[index.find(op.dst)->second];
  std::vector<bool> emitted(ops_.size(), false);
  std::vector<OperatorSpec> ordered;
  ordered.reserve(ops_.size());
  std::vector<int> node_ready(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) node_ready[i] = pending_inputs[i] == 0;
  bool progress = true;
  while (ordered.size() < ops_.size() && progress) {
    progress = false;
    for (std::size_t i = 0; i < ops_.size(); ++i) {
      if (emitted[i]) continue;
      const auto src = index.find(ops_[i].src)->second;
      if (!node_ready[src]) continue;
      emitted[i] = true;
      ordered.push_back(ops_[i]);
      const auto dst = index.find(ops_[i].dst)->second;
      if (--pending_inputs[dst] == 0) node_ready[dst] = 1;
      progress = true;
      break;
    }
  }
  if (ordered.size() != ops_.size()) throw ValidationError(name_ + ": operator graph contains a cycle");
  ops_ = std::move(ordered);
}

const NodeSpec& NetworkArch::node(std::string_view id) const {
  for (const auto& n : nodes_)
    if (n.id == id) return n;
  throw ValidationError(name_ + ": unknown node '" + std::string(id) + "'");
}

bool NetworkArch::has_node(std::string_view id) const {
  return std::any_of(nodes_.begin(), nodes_.end(), [&](const NodeSpec& n) { return n.id == id; });
}

std::vector<std::size_t> NetworkArch::producers(std::string_view node_id) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ops_.size(); ++i)
    if (ops_[i].dst == node_id) out.push_back(i);
  return out;
}

std::vector<std::size_t> NetworkArch::consumers(std::string_view node_id) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ops_.size(); ++i)
    if (ops_[i].src == node_id) out.push_back(i);
  return out;
}

std::vector<std::size_t> NetworkArch::convolution_ops() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ops_.size(); ++i)
    if (ops_[i].is_convolution()) out.push_back(i);
  return out;
}

std::int64_t NetworkArch::weight_count() const {
  std::int64_t total = 0;
  for (const auto& op : ops_) {
    if (!op.is_convolution()) continue;
    const auto shape = expected_weight_shape(op, node(op.src), node(op.dst));
    total += static_cast<std::int64_t>(FloatTensor::element_count(shape));
  }
  return total;
}

std::int64_t NetworkArch::parameter_count() const {
  std::int64_t total = weight_count();
  for (const auto& op : ops_)
    if (op.is_convolution()) total += node(op.dst).channels;
  return total;
}

std::uint64_t NetworkArch::weight_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& op : ops_) {
    if (!op.weights) continue;
    for (float v : op.weights->data()) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      for (int b = 0; b < 4; ++b) {
        h ^= (bits >> (8 * b)) & 0xffu;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

NetworkArch NetworkArch::with_ops(std::vector<OperatorSpec> ops) const {
  return NetworkArch(name_, baseline_accuracy_, nodes_, std::move(ops));
}

NetworkArch NetworkArch::with_graph(std::vector<NodeSpec> nodes, std::vector<OperatorSpec> ops) const {
  return NetworkArch(name_, baseline_accuracy_, std::move(nodes), std::move(ops));
}

const NetworkArch& ModelZoo::find(std::string_view name) const {
  for (const auto& m : models)
    if (m.name() == name) return m;
  throw ConfigError("model '" + std::string(name) + "' not found in zoo");
}

// ---------------------------------------------------------------------------
// Manifest I/O
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

const json& require(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object()) throw ParseError(where + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(where + "." + key + ": missing required field");
  return *it;
}

int require_int(const json& obj, const std::string& key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_number_integer()) throw ParseError(where + "." + key + ": expected integer");
  return v.get<int>();
}

std::string require_string(const json& obj, const std::string& key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) throw ParseError(where + "." + key + ": expected string");
  return v.get<std::string>();
}

FloatTensor read_blob(const std::filesystem::path& path, std::vector<std::size_t> shape,
                      const std::string& where) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(where + ".weights: cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t count = FloatTensor::element_count(shape);
  if (bytes.size() != count * 4)
    throw ValidationError(where + ": weight blob '" + path.string() + "' holds " +
                          std::to_string(bytes.size() / 4) + " floats, expected " + std::to_string(count));
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
  return FloatTensor(std::move(shape), std::move(values));
}

void write_blob(const std::filesystem::path& path, const FloatTensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  std::vector<char> bytes(t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(t.data()[i]);
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

NetworkArch parse_model(const json& m, const std::filesystem::path& base_dir, const std::string& where) {
  const std::string name = require_string(m, "name", where);
  const auto& acc = require(m, "baseline_accuracy", where);
  if (!acc.is_number()) throw ParseError(where + ".baseline_accuracy: expected number");

  const auto& jnodes = require(m, "nodes", where);
  if (!jnodes.is_array()) throw ParseError(where + ".nodes: expected array");
  std::vector<NodeSpec> nodes;
  for (std::size_t i = 0; i < jnodes.size(); ++i) {
    const std::string w = where + ".nodes[" + std::to_string(i) + "]";
    nodes.push_back({require_string(jnodes[i], "id", w), require_int(jnodes[i], "rows", w),
                     require_int(jnodes[i], "cols", w), require_int(jnodes[i], "channels", w)});
  }
  std::map<std::string, NodeSpec> by_id;
  for (const auto& n : nodes) by_id.emplace(n.id, n);

  const auto& jops = require(m, "ops", where);
  if (!jops.is_array()) throw ParseError(where + ".ops: expected array");
  std::vector<OperatorSpec> ops;
  for (std::size_t i = 0; i < jops.size(); ++i) {
    const std::string w = where + ".ops[" + std::to_string(i) + "]";
    const auto& jo = jops[i];
    OperatorSpec op;
    op.src = require_string(jo, "src", w);
    op.dst = require_string(jo, "dst", w);
    try {
      op.kind = op_kind_from_string(require_string(jo, "kind", w));
    } catch (const ParseError& e) {
      throw ParseError(w + ".kind: " + e.what());
    }
    op.k = require_int(jo, "k", w);
    op.stride = require_int(jo, "stride", w);
    op.padding = require_int(jo, "padding", w);
    if (auto it = jo.find("fixed_latency_cycles"); it != jo.end() && !it->is_null()) {
      if (!it->is_number_integer()) throw ParseError(w + ".fixed_latency_cycles: expected integer or null");
      op.fixed_latency_cycles = it->get<std::int64_t>();
    }
    if (auto it = jo.find("weights"); it != jo.end() && !it->is_null()) {
      if (!it->is_string()) throw ParseError(w + ".weights: expected path string or null");
      auto s = by_id.find(op.src);
      auto d = by_id.find(op.dst);
      if (s == by_id.end() || d == by_id.end())
        throw ValidationError(name + ": " + op_label(i, op) + ": unknown node");
      if (op.kind == OpKind::Pool) throw ValidationError(name + ": " + op_label(i, op) + ": pool op cannot carry weights");
      if (op.k < 1) throw ValidationError(name + ": " + op_label(i, op) + ": k must be positive");
      op.weights = read_blob(base_dir / it->get<std::string>(), expected_weight_shape(op, s->second, d->second),
                             name + ": " + op_label(i, op));
    }
    ops.push_back(std::move(op));
  }
  return NetworkArch(name, acc.get<double>(), std::move(nodes), std::move(ops));
}

}  // namespace

ModelZoo parse_manifest_json(const json& doc, const std::filesystem::path& base_dir) {
  ModelZoo zoo;
  const json* models = &doc;
  if (doc.is_object() && doc.contains("models")) models = &doc["models"];
  if (models->is_object()) {
    zoo.models.push_back(parse_model(*models, base_dir, "model"));
  } else if (models->is_array()) {
    for (std::size_t i = 0; i < models->size(); ++i)
      zoo.models.push_back(parse_model((*models)[i], base_dir, "models[" + std::to_string(i) + "]"));
  } else {
    throw ParseError("manifest: expected a model object or an array of models");
  }
  std::set<std::string> names;
  for (const auto& m : zoo.models)
    if (!names.insert(m.name()).second) throw ValidationError("duplicate model name '" + m.name() + "'");
  return zoo;
}

ModelZoo parse_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("manifest '" + path.string() + "': " + e.what());
  }
  return parse_manifest_json(doc, path.parent_path());
}

json manifest_json(const NetworkArch& net, const std::string& weight_prefix) {
  json m;
  m["name"] = net.name();
  m["baseline_accuracy"] = net.baseline_accuracy();
  m["nodes"] = json::array();
  for (const auto& n : net.nodes())
    m["nodes"].push_back({{"id", n.id}, {"rows", n.rows}, {"cols", n.cols}, {"channels", n.channels}});
  m["ops"] = json::array();
  for (std::size_t i = 0; i < net.ops().size(); ++i) {
    const auto& op = net.ops()[i];
    json jo{{"src", op.src}, {"dst", op.dst}, {"kind", std::string(to_string(op.kind))},
            {"k", op.k}, {"stride", op.stride}, {"padding", op.padding}};
    jo["weights"] = op.weights ? json(weight_prefix + "op" + std::to_string(i) + ".bin") : json(nullptr);
    jo["fixed_latency_cycles"] = op.fixed_latency_cycles ? json(*op.fixed_latency_cycles) : json(nullptr);
    m["ops"].push_back(std::move(jo));
  }
  return m;
}

std::filesystem::path write_manifest(const ModelZoo& zoo, const std::filesystem::path& dir,
                                     const std::string& stem) {
  std::filesystem::create_directories(dir);
  json doc;
  doc["models"] = json::array();
  for (const auto& net : zoo.models) {
    const std::string prefix = stem + "_" + net.name() + "_";
    doc["models"].push_back(manifest_json(net, prefix));
    for (std::size_t i = 0; i < net.ops().size(); ++i)
      if (net.ops()[i].weights) write_blob(dir / (prefix + "op" + std::to_string(i) + ".bin"), *net.ops()[i].weights);
  }
  const auto path = dir / (stem + ".json");
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << doc.dump(2) << "\n";
  return path;
}

// ---------------------------------------------------------------------------
// Built-in networks
// ---------------------------------------------------------------------------

namespace {

void fill_weights(std::vector<NodeSpec>& nodes, std::vector<OperatorSpec>& ops, std::uint64_t seed) {
  Rng rng(seed);
  std::map<std::string, NodeSpec> by_id;
  for (const auto& n : nodes) by_id.emplace(n.id, n);
  for (auto& op : ops) {
    if (op.kind == OpKind::Pool) continue;
    FloatTensor w(expected_weight_shape(op, by_id.at(op.src), by_id.at(op.dst)));
    for (auto& v : w.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    op.weights = std::move(w);
  }
}

OperatorSpec conv(std::string src, std::string dst, int k, int stride, int pad,
                  OpKind kind = OpKind::Conv) {
  OperatorSpec op;
  op.src = std::move(src);
  op.dst = std::move(dst);
  op.kind = kind;
  op.k = k;
  op.stride = stride;
  op.padding = pad;
  return op;
}

}  // namespace

std::vector<std::string> builtin_names() { return {"alexnet", "tiny", "random"}; }

NetworkArch builtin_network(std::string_view name, std::uint64_t seed, int depth) {
  std::vector<NodeSpec> nodes;
  std::vector<OperatorSpec> ops;
  std::string net_name(name);
  double accuracy = 0.0;

  if (name == "alexnet") {
    // torchvision AlexNet feature extractor, 224x224 input.
    nodes = {{"input", 224, 224, 3}, {"conv1", 55, 55, 64},  {"pool1", 27, 27, 64},
             {"conv2", 27, 27, 192}, {"pool2", 13, 13, 192}, {"conv3", 13, 13, 384},
             {"conv4", 13, 13, 256}, {"conv5", 13, 13, 256}, {"pool5", 6, 6, 256}};
    ops = {conv("input", "conv1", 11, 4, 2), conv("conv1", "pool1", 3, 2, 0, OpKind::Pool),
           conv("pool1", "conv2", 5, 1, 2),  conv("conv2", "pool2", 3, 2, 0, OpKind::Pool),
           conv("pool2", "conv3", 3, 1, 1),  conv("conv3", "conv4", 3, 1, 1),
           conv("conv4", "conv5", 3, 1, 1),  conv("conv5", "pool5", 3, 2, 0, OpKind::Pool)};
    accuracy = 0.5652;
  } else if (name == "tiny") {
    nodes = {{"input", 8, 8, 3}, {"a", 8, 8, 4}, {"b", 8, 8, 4}};
    ops = {conv("input", "a", 3, 1, 1), conv("a", "b", 3, 1, 1)};
    accuracy = 0.80;
  } else if (name == "random") {
    if (depth < 1) throw ConfigError("random network depth must be >= 1");
    Rng shape_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const int dim = 6 + static_cast<int>(shape_rng.below(7));
    nodes.push_back({"n0", dim, dim, 1 + static_cast<int>(shape_rng.below(4))});
    for (int i = 0; i < depth; ++i) {
      static constexpr int kSizes[] = {1, 3, 5};
      const int k = kSizes[shape_rng.below(3)];
      const std::string id = "n" + std::to_string(i + 1);
      nodes.push_back({id, dim, dim, 1 + static_cast<int>(shape_rng.below(8))});
      ops.push_back(conv(nodes[i].id, id, k, 1, k / 2));
    }
    net_name = "random-" + std::to_string(seed) + "-" + std::to_string(depth);
    accuracy = 0.70;
  } else {
    throw ConfigError("unknown builtin network '" + std::string(name) + "'");
  }
  fill_weights(nodes, ops, seed);
  return NetworkArch(net_name, accuracy, std::move(nodes), std::move(ops));
}

// ---------------------------------------------------------------------------
// Channel reorder
// ---------------------------------------------------------------------------

NetworkArch reorder_input_channels(const NetworkArch& net, std::size_t op_index,
                                   std::span<const int> permutation) {
  if (op_index >= net.ops().size()) throw ValidationError("reorder: op index out of range");
  const auto& op = net.ops()[op_index];
  const std::string label = net.name() + ": " + op_label(op_index, op);
  if (op.kind != OpKind::Conv) throw UnsupportedTopologyError(label + ": reorder needs a standard convolution");
  const auto& src = net.node(op.src);
  if (permutation.size() != static_cast<std::size_t>(src.channels))
    throw ValidationError(label + ": permutation has " + std::to_string(permutation.size()) +
                          " entries, node has " + std::to_string(src.channels) + " channels");
  std::vector<bool> seen(permutation.size(), false);
  for (int p : permutation) {
    if (p < 0 || static_cast<std::size_t>(p) >= permutation.size() || seen[p])
      throw ValidationError(label + ": permutation is not a bijection");
    seen[p] = true;
  }

  const auto producers = net.producers(op.src);
  const auto consumers = net.consumers(op.src);
  if (producers.size() != 1)
    throw UnsupportedTopologyError(label + ": node '" + op.src + "' must have exactly one producer");
  if (consumers.size() != 1)
    throw UnsupportedTopologyError(label + ": node '" + op.src + "' feeds multiple consumers");
  const std::size_t producer = producers.front();
  if (net.ops()[producer].kind != OpKind::Conv)
    throw UnsupportedTopologyError(label + ": producer of '" + op.src + "' is not a standard convolution");

  auto ops = net.ops();
  if (auto& w = ops[op_index].weights) {
    FloatTensor out(w->shape());
    const std::size_t m = w->dim(0), n = w->dim(1), k = w->dim(2);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t y = 0; y < k; ++y)
          for (std::size_t x = 0; x < k; ++x) out(a, b, y, x) = (*w)(a, permutation[b], y, x);
    w = std::move(out);
  }
  if (auto& w = ops[producer].weights) {
    FloatTensor out(w->shape());
    const std::size_t m = w->dim(0), n = w->dim(1), k = w->dim(2);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t y = 0; y < k; ++y)
          for (std::size_t x = 0; x < k; ++x) out(a, b, y, x) = (*w)(permutation[a], b, y, x);
    w = std::move(out);
  }
  return net.with_ops(std::move(ops));
}

}  // namespace hotsearch
