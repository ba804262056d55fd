#include "hotsearch/bottleneck.hpp"

#include <algorithm>

#include "hotsearch/errors.hpp"

namespace hotsearch {

namespace {

// Sanity bound only; compute grows quadratically in K so the loop always exits first.
constexpr int kMaxExpansion = 1024;

LayerDims effective_dims(const LayerDims& dims, const LayerEffects& fx) {
  LayerDims d = dims;
  d.m -= fx.cut_out;
  d.n = dims.depthwise ? d.m : dims.n - fx.cut_in;
  d.k += fx.expand;
  return d;
}

}  // namespace

char to_char(BottleneckLabel label) {
  static constexpr char kChars[] = {'C', 'I', 'W', 'O'};
  return kChars[static_cast<int>(label)];
}

Bottleneck detect(const LatencyBreakdown& bd, const LayerDims& /*dims*/, const AcceleratorDesign& /*design*/) {
  struct Term {
    BottleneckLabel label;
    std::int64_t cycles;
  };
  std::array<Term, 3> terms{{{BottleneckLabel::C, bd.t_comp}, {BottleneckLabel::I, bd.t_i}, {BottleneckLabel::W, bd.t_w}}};
  // Stable sort keeps the C, I, W order among equal terms.
  std::stable_sort(terms.begin(), terms.end(), [](const Term& a, const Term& b) { return a.cycles > b.cycles; });

  Bottleneck b;
  const std::int64_t streamed = bd.inner_trips * bd.lat1;
  if (bd.t_o > streamed) {
    b.label = BottleneckLabel::O;
    b.dominant_cycles = bd.t_o;
    b.slack = bd.t_o - streamed;
    b.runner_up = terms[0].label;
    return b;
  }
  b.label = terms[0].label;
  b.dominant_cycles = terms[0].cycles;
  b.slack = terms[0].cycles - terms[1].cycles;
  b.runner_up = terms[1].label;
  return b;
}

PatternProjection pattern_effectiveness(const LayerDims& dims, const AcceleratorDesign& design,
                                        const DataWidths& widths, const LayerEffects& effects, int pattern_zeros,
                                        std::int64_t clock_hz) {
  const auto base = layer_latency(dims, design, widths, effects, clock_hz);
  PatternProjection p;
  if (detect(base, dims, design).label != BottleneckLabel::C) return p;
  LayerEffects patterned = effects;
  patterned.pattern_zeros = pattern_zeros;
  const auto after = layer_latency(dims, design, widths, patterned, clock_hz);
  p.tile_saving = base.lat1 - after.lat1;
  p.layer_saving = base.lat_total - after.lat_total;
  p.helps = p.layer_saving > 0;
  return p;
}

bool channel_effectiveness(const LatencyBreakdown& bd, const LayerDims& dims, const AcceleratorDesign& design,
                           std::int64_t cut, CutSide side) {
  if (side == CutSide::Output) {
    const std::int64_t tm = dims.depthwise ? design.tm_d : design.tm;
    if (cut <= 0 || cut >= dims.m || tm < 1) return false;
    return ceil_div(dims.m - cut, tm) < ceil_div(dims.m, tm);
  }
  if (dims.depthwise || cut <= 0 || cut >= dims.n) return false;
  const bool fewer_rounds = ceil_div(dims.n - cut, design.tn) < ceil_div(dims.n, design.tn);
  const bool ofm_dominated = bd.t_o >= bd.inner_trips * bd.lat1;
  return fewer_rounds && !ofm_dominated;
}

bool channel_effectiveness(const LatencyBreakdown& bd, const LayerDims& dims, const AcceleratorDesign& design,
                           std::int64_t cut) {
  return channel_effectiveness(bd, dims, design, cut, CutSide::Output) ||
         channel_effectiveness(bd, dims, design, cut, CutSide::Input);
}

std::int64_t min_effective_cut(const LayerDims& dims, const AcceleratorDesign& design, CutSide side) {
  if (side == CutSide::Input && dims.depthwise) return 0;
  const std::int64_t extent = side == CutSide::Output ? dims.m : dims.n;
  const std::int64_t tile = side == CutSide::Output ? (dims.depthwise ? design.tm_d : design.tm) : design.tn;
  if (tile < 1) return 0;
  const std::int64_t trips = ceil_div(extent, tile);
  if (trips <= 1) return 0;
  return extent - tile * (trips - 1);
}

bool quant_effectiveness(const Bottleneck& bottleneck) { return bottleneck.label == BottleneckLabel::W; }

int expansion_headroom(const NetworkArch& net, std::size_t op_index, const AcceleratorDesign& design,
                       const FpgaSpec& fpga, const NetworkSettings& settings) {
  const auto& op = net.ops().at(op_index);
  if (!op.is_convolution()) return 0;
  const auto dims = layer_dims(net, op_index);
  const auto fx = layer_effects(net, op_index, settings);
  const auto widths = settings.layer(op_index).widths;
  const auto base = layer_latency(dims, design, widths, fx, fpga.clock_hz);
  if (detect(base, dims, design).label == BottleneckLabel::C) return 0;

  NetworkSettings trial = settings;
  if (trial.layers.size() < net.ops().size()) trial.layers.resize(net.ops().size());
  int headroom = 0;
  for (int e = 2; e <= kMaxExpansion; e += 2) {
    LayerEffects grown = fx;
    grown.expand = fx.expand + e;
    const auto after = layer_latency(dims, design, widths, grown, fpga.clock_hz);
    if (after.lat_total != base.lat_total) break;
    trial.layers[op_index].expand = grown.expand;
    if (resource_violation(net, design, fpga, trial)) break;
    headroom = e;
  }
  return headroom;
}

NetworkAnalysis analyze_network(const NetworkArch& net, const AcceleratorDesign& design, const FpgaSpec& fpga,
                                const NetworkSettings& settings, LatencyOptions options) {
  const auto latency = network_latency(net, design, fpga, settings, options);
  NetworkAnalysis out;
  out.total_cycles = latency.total_cycles;
  out.total_ms = latency.total_ms;
  for (const auto& ll : latency.layers) {
    if (!ll.modeled) continue;
    LayerAnalysis a;
    a.op_index = ll.op_index;
    a.dims = ll.dims;
    a.effects = ll.effects;
    a.bd = ll.bd;
    a.bottleneck = detect(ll.bd, ll.dims, design);

    const auto eff = effective_dims(ll.dims, ll.effects);
    auto& v = a.verdict;
    const int k = eff.k;
    if (k >= 2 && ll.effects.pattern_zeros + 1 < k * k)
      v.pattern_helps =
          pattern_effectiveness(ll.dims, design, ll.widths, ll.effects, ll.effects.pattern_zeros + 1, fpga.clock_hz).helps;
    v.min_effective_cut_in = min_effective_cut(eff, design, CutSide::Input);
    v.min_effective_cut_out = min_effective_cut(eff, design, CutSide::Output);
    v.channel_helps_input = v.min_effective_cut_in > 0 &&
                            channel_effectiveness(ll.bd, eff, design, v.min_effective_cut_in, CutSide::Input);
    v.channel_helps_output = v.min_effective_cut_out > 0 &&
                             channel_effectiveness(ll.bd, eff, design, v.min_effective_cut_out, CutSide::Output);
    v.quant_helps = quant_effectiveness(a.bottleneck);
    v.expansion_headroom = options.check_resources ? expansion_headroom(net, ll.op_index, design, fpga, settings) : 0;
    v.expansion_free = v.expansion_headroom > 0;

    ++out.histogram[static_cast<int>(a.bottleneck.label)];
    out.layers.push_back(a);
  }
  return out;
}

}  // namespace hotsearch
