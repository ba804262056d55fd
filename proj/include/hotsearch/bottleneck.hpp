#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "hotsearch/perfmodel.hpp"

namespace hotsearch {

enum class BottleneckLabel { C = 0, I = 1, W = 2, O = 3 };

char to_char(BottleneckLabel label);

struct Bottleneck {
  BottleneckLabel label = BottleneckLabel::C;
  std::int64_t dominant_cycles = 0;
  std::int64_t slack = 0;  // dominant term minus the runner-up inside its max
  BottleneckLabel runner_up = BottleneckLabel::C;
};

// O when t_o strictly dominates Lat2; otherwise the largest of
// (t_comp, t_i, t_w) with ties resolved in the order C, I, W.
Bottleneck detect(const LatencyBreakdown& bd, const LayerDims& dims, const AcceleratorDesign& design);

struct PatternProjection {
  bool helps = false;
  std::int64_t tile_saving = 0;   // Lat1 reduction
  std::int64_t layer_saving = 0;  // Lat reduction
};

// Savings are recomputed through layer_latency, never taken from closed forms.
PatternProjection pattern_effectiveness(const LayerDims& dims, const AcceleratorDesign& design,
                                        const DataWidths& widths, const LayerEffects& effects,
                                        int pattern_zeros, std::int64_t clock_hz = 200'000'000);

enum class CutSide { Input, Output };

// Whether removing `cut` channels from the given side can shorten the layer.
bool channel_effectiveness(const LatencyBreakdown& bd, const LayerDims& dims, const AcceleratorDesign& design,
                           std::int64_t cut, CutSide side);
// Either side.
bool channel_effectiveness(const LatencyBreakdown& bd, const LayerDims& dims, const AcceleratorDesign& design,
                           std::int64_t cut);

// Smallest cut that lowers the trip count on that side; 0 when none can.
std::int64_t min_effective_cut(const LayerDims& dims, const AcceleratorDesign& design, CutSide side);

bool quant_effectiveness(const Bottleneck& bottleneck);

// Largest even filter growth that leaves the layer latency and the shared
// buffer budget untouched.
int expansion_headroom(const NetworkArch& net, std::size_t op_index, const AcceleratorDesign& design,
                       const FpgaSpec& fpga, const NetworkSettings& settings = {});

struct TechniqueVerdict {
  bool pattern_helps = false;
  bool channel_helps_input = false;
  bool channel_helps_output = false;
  bool quant_helps = false;
  bool expansion_free = false;
  std::int64_t min_effective_cut_in = 0;
  std::int64_t min_effective_cut_out = 0;
  int expansion_headroom = 0;
};

struct LayerAnalysis {
  std::size_t op_index = 0;
  LayerDims dims;
  LayerEffects effects;
  LatencyBreakdown bd;
  Bottleneck bottleneck;
  TechniqueVerdict verdict;
};

struct NetworkAnalysis {
  std::vector<LayerAnalysis> layers;  // convolution layers only
  std::array<int, 4> histogram{};     // C, I, W, O
  std::int64_t total_cycles = 0;
  double total_ms = 0.0;
};

NetworkAnalysis analyze_network(const NetworkArch& net, const AcceleratorDesign& design, const FpgaSpec& fpga,
                                const NetworkSettings& settings = {}, LatencyOptions options = {});

}  // namespace hotsearch
