#include "hotsearch/compress.hpp"

#include <algorithm>
#include <cfenv>
#include <limits>
#include <numeric>

#include "hotsearch/rng.hpp"

namespace hotsearch {

namespace {

FloatTensor slice_dim(const FloatTensor& t, std::size_t axis, const std::vector<int>& keep) {
  auto shape = t.shape();
  const std::size_t outer = std::accumulate(shape.begin(), shape.begin() + axis, std::size_t{1}, std::multiplies<>());
  const std::size_t inner =
      std::accumulate(shape.begin() + axis + 1, shape.end(), std::size_t{1}, std::multiplies<>());
  const std::size_t old_extent = shape[axis];
  shape[axis] = keep.size();
  FloatTensor out(shape);
  auto dst = out.data();
  const auto src = t.data();
  std::size_t w = 0;
  for (std::size_t o = 0; o < outer; ++o)
    for (int k : keep) {
      const std::size_t base = (o * old_extent + static_cast<std::size_t>(k)) * inner;
      std::copy(src.begin() + base, src.begin() + base + inner, dst.begin() + w);
      w += inner;
    }
  return out;
}

double round_half_even(double x) {
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double r = std::nearbyint(x);
  std::fesetround(saved);
  return r;
}

double quantize_raw(double w, const FixedPointFormat& fmt) {
  const double limit = std::ldexp(1.0, fmt.int_bits - 1 + fmt.frac_bits) - 1.0;
  return std::clamp(round_half_even(std::ldexp(w, fmt.frac_bits)), -limit, limit);
}

}  // namespace

std::vector<int> rank_channels(const NetworkArch& net, const std::string& node_id, ChannelRanking ranking) {
  const int channels = net.node(node_id).channels;
  std::vector<int> order(static_cast<std::size_t>(channels));
  std::iota(order.begin(), order.end(), 0);
  if (ranking.kind == ChannelRanking::Kind::Random) {
    Rng rng(ranking.seed);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
  }
  const auto producers = net.producers(node_id);
  if (producers.size() != 1) return order;
  const auto& op = net.ops()[producers.front()];
  if (!op.weights) return order;
  const auto& w = *op.weights;
  const std::size_t per_channel = w.size() / w.dim(0);
  std::vector<double> l1(static_cast<std::size_t>(channels), 0.0);
  const auto data = w.data();
  for (std::size_t c = 0; c < l1.size(); ++c)
    for (std::size_t i = 0; i < per_channel; ++i) l1[c] += std::abs(static_cast<double>(data[c * per_channel + i]));
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return l1[a] < l1[b]; });
  return order;
}

bool channel_cuttable(const NetworkArch& net, const std::string& node_id) {
  if (!net.has_node(node_id)) return false;
  const auto producers = net.producers(node_id);
  const auto consumers = net.consumers(node_id);
  return producers.size() == 1 && consumers.size() == 1 && net.ops()[producers[0]].kind == OpKind::Conv &&
         net.ops()[consumers[0]].kind == OpKind::Conv;
}

NetworkArch cut_channels(const NetworkArch& net, const std::string& node_id, int cut_n, ChannelRanking ranking) {
  const auto& node = net.node(node_id);
  if (cut_n <= 0 || cut_n >= node.channels)
    throw ValidationError(net.name() + ": node " + node_id + ": cut must be in (0, " + std::to_string(node.channels) +
                          ")");
  if (!channel_cuttable(net, node_id))
    throw UnsupportedTopologyError(net.name() + ": node " + node_id +
                                   ": channel cutting needs exactly one conv producer and one conv consumer");
  const auto order = rank_channels(net, node_id, ranking);
  std::vector<int> keep(order.begin() + cut_n, order.end());
  std::sort(keep.begin(), keep.end());

  auto nodes = net.nodes();
  for (auto& n : nodes)
    if (n.id == node_id) n.channels -= cut_n;
  auto ops = net.ops();
  const std::size_t producer = net.producers(node_id).front();
  const std::size_t consumer = net.consumers(node_id).front();
  if (ops[producer].weights) ops[producer].weights = slice_dim(*ops[producer].weights, 0, keep);
  if (ops[consumer].weights) ops[consumer].weights = slice_dim(*ops[consumer].weights, 1, keep);
  return net.with_graph(std::move(nodes), std::move(ops));
}

void FixedPointFormat::validate() const {
  if (int_bits < 1 || frac_bits < 0 || int_bits + frac_bits > 32)
    throw ValidationError("fixed-point format needs I >= 1, F >= 0, I + F <= 32 (got <" + std::to_string(int_bits) +
                          ", " + std::to_string(frac_bits) + ">)");
}

double quantize_value(double w, const FixedPointFormat& fmt) {
  fmt.validate();
  return std::ldexp(quantize_raw(w, fmt), -fmt.frac_bits);
}

QuantizationResult quantize(const FloatTensor& weights, const FixedPointFormat& fmt) {
  fmt.validate();
  QuantizationResult out{weights, 0.0};
  for (auto& w : out.weights.data()) {
    const double q = std::ldexp(quantize_raw(w, fmt), -fmt.frac_bits);
    out.max_abs_error = std::max(out.max_abs_error, std::abs(static_cast<double>(w) - q));
    w = static_cast<float>(q);
  }
  return out;
}

int derive_int_bits(const FloatTensor& weights) {
  constexpr double kEpsilon = 1e-12;
  double peak = 0.0;
  for (float w : weights.data()) peak = std::max(peak, std::abs(static_cast<double>(w)));
  if (peak == 0.0) return 1;
  return 1 + std::max(0, static_cast<int>(std::ceil(std::log2(peak + kEpsilon))));
}

FixedTensor to_fixed(const FloatTensor& values, const FixedPointFormat& fmt) {
  fmt.validate();
  std::vector<std::int64_t> raw;
  raw.reserve(values.size());
  for (float v : values.data()) raw.push_back(static_cast<std::int64_t>(quantize_raw(v, fmt)));
  return FixedTensor(values.shape(), std::move(raw));
}

OperatorSpec expand_filter(const OperatorSpec& op, int exp_n) {
  if (!op.is_convolution()) throw ValidationError("expand_filter: op is not a convolution");
  if (exp_n < 2 || exp_n % 2 != 0) throw ValidationError("expand_filter: exp_n must be even and >= 2");
  OperatorSpec out = op;
  const int half = exp_n / 2;
  out.k = op.k + exp_n;
  out.padding = op.padding + half;
  if (op.weights) {
    const auto& w = *op.weights;
    FloatTensor grown({w.dim(0), w.dim(1), static_cast<std::size_t>(out.k), static_cast<std::size_t>(out.k)});
    for (std::size_t m = 0; m < w.dim(0); ++m)
      for (std::size_t n = 0; n < w.dim(1); ++n)
        for (std::size_t y = 0; y < w.dim(2); ++y)
          for (std::size_t x = 0; x < w.dim(3); ++x) grown(m, n, y + half, x + half) = w(m, n, y, x);
    out.weights = std::move(grown);
  }
  return out;
}

FloatTensor naive_conv(const FloatTensor& input, const OperatorSpec& op) {
  if (!op.weights) throw ValidationError("naive_conv: op has no weights");
  return naive_conv(input, *op.weights, op);
}

FloatTensor max_pool(const FloatTensor& input, int k, int stride, int padding) {
  const auto rows = static_cast<std::int64_t>(input.dim(1));
  const auto cols = static_cast<std::int64_t>(input.dim(2));
  const std::int64_t out_rows = (rows + 2 * padding - k) / stride + 1;
  const std::int64_t out_cols = (cols + 2 * padding - k) / stride + 1;
  FloatTensor out({input.dim(0), static_cast<std::size_t>(out_rows), static_cast<std::size_t>(out_cols)});
  for (std::size_t c = 0; c < input.dim(0); ++c)
    for (std::int64_t y = 0; y < out_rows; ++y)
      for (std::int64_t x = 0; x < out_cols; ++x) {
        float best = -std::numeric_limits<float>::infinity();
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const std::int64_t iy = y * stride + ky - padding, ix = x * stride + kx - padding;
            if (iy >= 0 && iy < rows && ix >= 0 && ix < cols) best = std::max(best, input(c, iy, ix));
          }
        out(c, y, x) = best;
      }
  return out;
}

std::map<std::string, FloatTensor> run_network(const NetworkArch& net, const FloatTensor& input) {
  std::vector<std::string> sources;
  for (const auto& n : net.nodes())
    if (net.producers(n.id).empty()) sources.push_back(n.id);
  if (sources.size() != 1) throw UnsupportedTopologyError(net.name() + ": run_network needs exactly one input node");
  const auto& src = net.node(sources.front());
  const std::vector<std::size_t> expected{static_cast<std::size_t>(src.channels), static_cast<std::size_t>(src.rows),
                                          static_cast<std::size_t>(src.cols)};
  if (input.shape() != expected) throw ValidationError(net.name() + ": input shape does not match node " + src.id);

  std::map<std::string, FloatTensor> values{{src.id, input}};
  for (const auto& op : net.ops()) {
    const auto& x = values.at(op.src);
    FloatTensor y;
    switch (op.kind) {
      case OpKind::Conv:
      case OpKind::DepthwiseConv:
        y = naive_conv(x, op);
        break;
      case OpKind::Pool:
        y = max_pool(x, op.k, op.stride, op.padding);
        break;
      case OpKind::Linear: {
        if (!op.weights) throw ValidationError("run_network: linear op has no weights");
        const auto& w = *op.weights;
        y = FloatTensor({w.dim(0), 1, 1});
        const auto xs = x.data();
        for (std::size_t m = 0; m < w.dim(0); ++m) {
          float acc = 0.0f;
          for (std::size_t i = 0; i < w.dim(1); ++i) acc += w(m, i, 0, 0) * xs[i];
          y(m, 0, 0) = acc;
        }
        break;
      }
    }
    auto it = values.find(op.dst);
    if (it == values.end()) {
      values.emplace(op.dst, std::move(y));
    } else {
      auto acc = it->second.data();
      const auto add = y.data();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
    }
  }
  return values;
}

}  // namespace hotsearch
