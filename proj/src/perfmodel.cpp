#include "hotsearch/perfmodel.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "hotsearch/errors.hpp"

namespace hotsearch {

using nlohmann::json;

void FpgaSpec::validate() const {
  if (dsp_total < 1 || bram_blocks < 1 || bram_bits_per_block < 1 || bw_total_bits_per_cycle < 1 ||
      clock_hz < 1 || compute_word_bits < 1)
    throw ConfigError("fpga spec: all fields must be positive");
  if (bw_total_bits_per_cycle % compute_word_bits != 0)
    throw ConfigError("fpga spec: bw_bits_per_cycle must be a multiple of word_bits");
}

FpgaSpec fpga_from_json(const json& doc) {
  if (!doc.is_object()) throw ParseError("fpga spec: expected an object");
  FpgaSpec f;
  auto read = [&](const char* key, auto& field) {
    auto it = doc.find(key);
    if (it == doc.end()) return;
    if (!it->is_number_integer()) throw ParseError(std::string("fpga spec.") + key + ": expected integer");
    field = it->get<std::remove_reference_t<decltype(field)>>();
  };
  read("dsp", f.dsp_total);
  read("bram_blocks", f.bram_blocks);
  read("block_bits", f.bram_bits_per_block);
  read("bw_bits_per_cycle", f.bw_total_bits_per_cycle);
  read("clock_hz", f.clock_hz);
  read("word_bits", f.compute_word_bits);
  f.validate();
  return f;
}

json to_json(const FpgaSpec& f) {
  return {{"dsp", f.dsp_total},
          {"bram_blocks", f.bram_blocks},
          {"block_bits", f.bram_bits_per_block},
          {"bw_bits_per_cycle", f.bw_total_bits_per_cycle},
          {"clock_hz", f.clock_hz},
          {"word_bits", f.compute_word_bits}};
}

FpgaSpec load_fpga_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open fpga spec '" + path.string() + "'");
  try {
    return fpga_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError("fpga spec '" + path.string() + "': " + e.what());
  }
}

void AcceleratorDesign::set_lanes(const LaneSplit& split, int word_bits) {
  ib_bits = split.input * word_bits;
  ob_bits = split.output * word_bits;
  wb_bits = split.weight * word_bits;
}

json to_json(const AcceleratorDesign& d) {
  return {{"tm", d.tm},         {"tn", d.tn},           {"tr", d.tr},           {"tc", d.tc},
          {"tm_d", d.tm_d},     {"ib_bits", d.ib_bits}, {"ob_bits", d.ob_bits}, {"wb_bits", d.wb_bits}};
}

AcceleratorDesign design_from_json(const json& doc) {
  AcceleratorDesign d;
  try {
    d.tm = doc.at("tm").get<int>();
    d.tn = doc.at("tn").get<int>();
    d.tr = doc.at("tr").get<int>();
    d.tc = doc.at("tc").get<int>();
    d.tm_d = doc.at("tm_d").get<int>();
    d.ib_bits = doc.at("ib_bits").get<int>();
    d.ob_bits = doc.at("ob_bits").get<int>();
    d.wb_bits = doc.at("wb_bits").get<int>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("design: ") + e.what());
  }
  return d;
}

LayerDims layer_dims(const NetworkArch& net, std::size_t op_index) {
  const auto& op = net.ops().at(op_index);
  if (!op.is_convolution())
    throw ValidationError(net.name() + ": op " + std::to_string(op_index) + " is not a convolution");
  const auto& src = net.node(op.src);
  const auto& dst = net.node(op.dst);
  return {dst.channels, src.channels, dst.rows, dst.cols, op.k, op.kind == OpKind::DepthwiseConv};
}

std::int64_t tile_compute_cycles(int k, int tr, int tc, int pattern_zeros) {
  if (pattern_zeros < 0 || pattern_zeros >= k * k)
    throw ValidationError("invalid pattern: " + std::to_string(pattern_zeros) + " zeros in a " +
                          std::to_string(k) + "x" + std::to_string(k) + " kernel");
  return static_cast<std::int64_t>(k * k - pattern_zeros) * tr * tc;
}

namespace {

// Output-channel and input-channel parallelism of the engine a layer runs on.
std::pair<std::int64_t, std::int64_t> engine_shape(const AcceleratorDesign& d, bool depthwise) {
  if (depthwise) return {d.tm_d, 1};
  return {d.tm, d.tn};
}

}  // namespace

BufferBlocks buffer_blocks(const AcceleratorDesign& d, int k, const DataWidths& w, int block_bits,
                           bool depthwise) {
  const auto [tm, tn] = engine_shape(d, depthwise);
  // The depthwise engine reads tm_d input channels per tile.
  const std::int64_t in_channels = depthwise ? tm : tn;
  const std::int64_t pixels = static_cast<std::int64_t>(d.tr) * d.tc;
  BufferBlocks b;
  b.input = 2 * in_channels * ceil_div(pixels * w.bit_i, block_bits);
  b.output = 2 * tm * ceil_div(pixels * w.bit_o, block_bits);
  b.weight = 2 * tm * tn * ceil_div(static_cast<std::int64_t>(k) * k * w.bit_w, block_bits);
  return b;
}

TransferCycles tile_transfer_cycles(const AcceleratorDesign& d, int k, const DataWidths& w, bool depthwise) {
  if (d.ib_bits <= 0 || d.ob_bits <= 0 || d.wb_bits <= 0)
    throw ConfigError("every stream needs a positive bandwidth allocation");
  const auto [tm, tn] = engine_shape(d, depthwise);
  const std::int64_t in_channels = depthwise ? tm : tn;
  const std::int64_t pixels = static_cast<std::int64_t>(d.tr) * d.tc;
  TransferCycles t;
  t.t_i = ceil_div(in_channels * pixels * w.bit_i, d.ib_bits);
  t.t_w = ceil_div(tm * tn * k * k * w.bit_w, d.wb_bits);
  t.t_o = ceil_div(tm * pixels * w.bit_o, d.ob_bits);
  return t;
}

LatencyBreakdown layer_latency(const LayerDims& dims, const AcceleratorDesign& d, const DataWidths& w,
                               const LayerEffects& fx, std::int64_t clock_hz) {
  if (dims.depthwise && d.tm_d < 1) throw InfeasibleError("depthwise layer needs a depthwise engine (tm_d >= 1)");
  if (d.tm < 1 || d.tn < 1 || d.tr < 1 || d.tc < 1) throw ConfigError("tile sizes must be positive");
  if (fx.expand < 0 || fx.cut_in < 0 || fx.cut_out < 0) throw ValidationError("invalid compression: negative amount");

  const std::int64_t m = dims.m - fx.cut_out;
  const std::int64_t n = dims.depthwise ? m : dims.n - fx.cut_in;
  if (m < 1 || n < 1) throw ValidationError("invalid compression: non-positive effective channels");
  const int k = dims.k + fx.expand;
  const auto [tm, tn] = engine_shape(d, dims.depthwise);

  LatencyBreakdown bd;
  bd.t_comp = tile_compute_cycles(k, d.tr, d.tc, fx.pattern_zeros);
  const auto t = tile_transfer_cycles(d, k, w, dims.depthwise);
  bd.t_i = t.t_i;
  bd.t_w = t.t_w;
  bd.t_o = t.t_o;
  bd.lat1 = std::max({bd.t_comp, bd.t_i, bd.t_w});
  bd.inner_trips = dims.depthwise ? 1 : ceil_div(n, tn);
  bd.lat2 = std::max(bd.inner_trips * bd.lat1, bd.t_o);
  bd.outer_trips = ceil_div(dims.r, d.tr) * ceil_div(dims.c, d.tc) * ceil_div(m, tm);
  bd.lat_total = bd.outer_trips * bd.lat2 + (bd.t_o + bd.lat1);
  bd.lat_ms = static_cast<double>(bd.lat_total) * 1e3 / static_cast<double>(clock_hz);
  return bd;
}

LayerEffects layer_effects(const NetworkArch& net, std::size_t op_index, const NetworkSettings& settings) {
  const auto& op = net.ops().at(op_index);
  const auto setting = settings.layer(op_index);
  LayerEffects fx;
  fx.pattern_zeros = setting.pattern_zeros;
  fx.expand = setting.expand;
  fx.cut_out = settings.cut(op.dst);
  fx.cut_in = op.kind == OpKind::DepthwiseConv ? fx.cut_out : settings.cut(op.src);
  return fx;
}

BufferBlocks network_buffer_blocks(const NetworkArch& net, const AcceleratorDesign& design,
                                   const FpgaSpec& fpga, const NetworkSettings& settings) {
  BufferBlocks worst;
  for (std::size_t i : net.convolution_ops()) {
    const auto& op = net.ops()[i];
    const auto s = settings.layer(i);
    const bool dw = op.kind == OpKind::DepthwiseConv;
    if (dw && design.tm_d < 1) continue;
    const auto b = buffer_blocks(design, op.k + s.expand, s.widths, fpga.bram_bits_per_block, dw);
    worst.input = std::max(worst.input, b.input);
    worst.output = std::max(worst.output, b.output);
    worst.weight = std::max(worst.weight, b.weight);
  }
  return worst;
}

std::optional<std::string> resource_violation(const NetworkArch& net, const AcceleratorDesign& d,
                                              const FpgaSpec& fpga, const NetworkSettings& settings) {
  std::ostringstream msg;
  if (d.tm < 1 || d.tn < 1 || d.tr < 1 || d.tc < 1 || d.tm_d < 0) return "tile sizes must be positive";
  if (d.ib_bits < 1 || d.ob_bits < 1 || d.wb_bits < 1) return "every stream needs a positive bandwidth";
  const std::int64_t dsp = static_cast<std::int64_t>(d.tm) * d.tn + d.tm_d;
  if (dsp > fpga.dsp_total) {
    msg << "dsp: tm*tn + tm_d = " << dsp << " exceeds " << fpga.dsp_total;
    return msg.str();
  }
  const std::int64_t bw = static_cast<std::int64_t>(d.ib_bits) + d.ob_bits + d.wb_bits;
  if (bw > fpga.bw_total_bits_per_cycle) {
    msg << "bandwidth: I_b + O_b + W_b = " << bw << " exceeds " << fpga.bw_total_bits_per_cycle << " bits/cycle";
    return msg.str();
  }
  const auto convs = net.convolution_ops();
  const bool has_dw = std::any_of(convs.begin(), convs.end(),
                                  [&](std::size_t i) { return net.ops()[i].kind == OpKind::DepthwiseConv; });
  if (has_dw && d.tm_d < 1) return "dsp: depthwise layers need tm_d >= 1";
  const auto buffers = network_buffer_blocks(net, d, fpga, settings);
  if (buffers.total() > fpga.bram_blocks) {
    // Name the layer whose own buffer demand is largest.
    std::size_t worst = convs.empty() ? 0 : convs.front();
    std::int64_t worst_total = -1;
    for (std::size_t i : convs) {
      const auto& op = net.ops()[i];
      const auto s = settings.layer(i);
      const auto b = buffer_blocks(d, op.k + s.expand, s.widths, fpga.bram_bits_per_block,
                                   op.kind == OpKind::DepthwiseConv);
      if (b.total() > worst_total) {
        worst_total = b.total();
        worst = i;
      }
    }
    msg << "bram: buffers need " << buffers.total() << " blocks (I " << buffers.input << ", O " << buffers.output
        << ", W " << buffers.weight << ") of " << fpga.bram_blocks << "; worst layer op " << worst << " ("
        << net.ops()[worst].src << "->" << net.ops()[worst].dst << ")";
    return msg.str();
  }
  return std::nullopt;
}

NetworkLatency network_latency(const NetworkArch& net, const AcceleratorDesign& design, const FpgaSpec& fpga,
                               const NetworkSettings& settings, LatencyOptions options) {
  if (options.check_resources) {
    if (auto violation = resource_violation(net, design, fpga, settings))
      throw InfeasibleError(net.name() + ": design infeasible: " + *violation);
  }
  NetworkLatency out;
  out.buffers = network_buffer_blocks(net, design, fpga, settings);
  for (std::size_t i = 0; i < net.ops().size(); ++i) {
    const auto& op = net.ops()[i];
    LayerLatency ll;
    ll.op_index = i;
    if (op.is_convolution()) {
      ll.modeled = true;
      ll.dims = layer_dims(net, i);
      ll.effects = layer_effects(net, i, settings);
      ll.widths = settings.layer(i).widths;
      const std::string where = net.name() + ": op " + std::to_string(i) + " (" + op.src + "->" + op.dst + "): ";
      try {
        ll.bd = layer_latency(ll.dims, design, ll.widths, ll.effects, fpga.clock_hz);
      } catch (const InfeasibleError& e) {
        throw InfeasibleError(where + e.what());
      } catch (const ValidationError& e) {
        throw ValidationError(where + e.what());
      } catch (const ConfigError& e) {
        throw ConfigError(where + e.what());
      }
    } else {
      ll.bd.lat_total = op.fixed_latency_cycles.value_or(0);
      ll.bd.lat_ms = static_cast<double>(ll.bd.lat_total) * 1e3 / static_cast<double>(fpga.clock_hz);
    }
    out.total_cycles += ll.bd.lat_total;
    out.layers.push_back(ll);
  }
  out.total_ms = static_cast<double>(out.total_cycles) * 1e3 / static_cast<double>(fpga.clock_hz);
  return out;
}

}  // namespace hotsearch
