#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hotsearch/netzoo.hpp"

namespace hotsearch {

// Target device. Bandwidth is in bits per cycle; a lane is one compute word.
struct FpgaSpec {
  int dsp_total = 2520;
  int bram_blocks = 1824;
  int bram_bits_per_block = 18 * 1024;
  int bw_total_bits_per_cycle = 512;  // 4 HP ports x 128 bit
  std::int64_t clock_hz = 200'000'000;
  int compute_word_bits = 16;

  void validate() const;
  int total_lanes() const { return bw_total_bits_per_cycle / compute_word_bits; }
  bool operator==(const FpgaSpec&) const = default;
};

FpgaSpec fpga_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const FpgaSpec& fpga);
FpgaSpec load_fpga_spec(const std::filesystem::path& path);

struct LaneSplit {
  int input = 1;
  int output = 1;
  int weight = 1;

  int total() const { return input + output + weight; }
  auto operator<=>(const LaneSplit&) const = default;
};

// Loop tiling plus per-stream bandwidth allocation. tm_d is the output-channel
// tile of the depthwise engine (0 when the network has no depthwise layer).
struct AcceleratorDesign {
  int tm = 1;
  int tn = 1;
  int tr = 1;
  int tc = 1;
  int tm_d = 0;
  int ib_bits = 16;
  int ob_bits = 16;
  int wb_bits = 16;

  LaneSplit lanes(int word_bits) const { return {ib_bits / word_bits, ob_bits / word_bits, wb_bits / word_bits}; }
  void set_lanes(const LaneSplit& split, int word_bits);
  auto operator<=>(const AcceleratorDesign&) const = default;
};

nlohmann::json to_json(const AcceleratorDesign& design);
AcceleratorDesign design_from_json(const nlohmann::json& doc);

struct DataWidths {
  int bit_i = 16;
  int bit_w = 16;
  int bit_o = 16;

  bool operator==(const DataWidths&) const = default;
};

// Convolution geometry as seen by the accelerator: M output channels, N input
// channels, R x C output pixels, K x K filter.
struct LayerDims {
  std::int64_t m = 1;
  std::int64_t n = 1;
  std::int64_t r = 1;
  std::int64_t c = 1;
  int k = 1;
  bool depthwise = false;

  bool operator==(const LayerDims&) const = default;
};

LayerDims layer_dims(const NetworkArch& net, std::size_t op_index);

// Per-layer compression seen by the latency model.
struct LayerEffects {
  int pattern_zeros = 0;  // zeros per pattern mask (skipped compute positions)
  int cut_in = 0;         // channels removed from the input node
  int cut_out = 0;        // channels removed from the output node
  int expand = 0;         // filter expansion, K' = K + expand

  bool operator==(const LayerEffects&) const = default;
};

struct TransferCycles {
  std::int64_t t_i = 0;
  std::int64_t t_w = 0;
  std::int64_t t_o = 0;
};

struct BufferBlocks {
  std::int64_t input = 0;
  std::int64_t output = 0;
  std::int64_t weight = 0;

  std::int64_t total() const { return input + output + weight; }
};

struct LatencyBreakdown {
  std::int64_t t_comp = 0;
  std::int64_t t_i = 0;
  std::int64_t t_w = 0;
  std::int64_t t_o = 0;
  std::int64_t lat1 = 0;
  std::int64_t lat2 = 0;
  std::int64_t lat_total = 0;
  std::int64_t inner_trips = 0;  // ceil(N'/Tn); 1 for depthwise
  std::int64_t outer_trips = 0;  // ceil(R/Tr) * ceil(C/Tc) * ceil(M'/Tm)
  double lat_ms = 0.0;

  bool operator==(const LatencyBreakdown&) const = default;
};

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

// Cycles to consume one on-chip tile: (K*K - zeros) * Tr * Tc.
std::int64_t tile_compute_cycles(int k, int tr, int tc, int pattern_zeros = 0);

// BRAM blocks for the double-buffered IFM, OFM and weight tiles.
BufferBlocks buffer_blocks(const AcceleratorDesign& design, int k, const DataWidths& widths,
                           int block_bits, bool depthwise = false);

// Off-chip transfer cycles per tile for each stream.
TransferCycles tile_transfer_cycles(const AcceleratorDesign& design, int k, const DataWidths& widths,
                                    bool depthwise = false);

LatencyBreakdown layer_latency(const LayerDims& dims, const AcceleratorDesign& design,
                               const DataWidths& widths, const LayerEffects& effects = {},
                               std::int64_t clock_hz = 200'000'000);

// Event-driven replay of the double-buffered tile pipeline. Shares only the
// per-tile costs with layer_latency; the schedule is simulated, not summed.
std::int64_t simulate_layer(const LayerDims& dims, const AcceleratorDesign& design,
                            const DataWidths& widths, const LayerEffects& effects = {});

// Network-level settings: per-op pattern/expansion/bit-width and per-node cuts.
struct LayerSetting {
  int pattern_zeros = 0;
  int expand = 0;
  DataWidths widths;

  bool operator==(const LayerSetting&) const = default;
};

struct NetworkSettings {
  std::vector<LayerSetting> layers;  // indexed by op; empty means defaults
  std::map<std::string, int> node_cuts;

  LayerSetting layer(std::size_t op_index) const {
    return op_index < layers.size() ? layers[op_index] : LayerSetting{};
  }
  int cut(const std::string& node) const {
    auto it = node_cuts.find(node);
    return it == node_cuts.end() ? 0 : it->second;
  }
};

LayerEffects layer_effects(const NetworkArch& net, std::size_t op_index, const NetworkSettings& settings);

struct LayerLatency {
  std::size_t op_index = 0;
  bool modeled = false;  // false for pool/linear pass-through
  LayerDims dims;
  LayerEffects effects;
  DataWidths widths;
  LatencyBreakdown bd;
};

struct NetworkLatency {
  std::vector<LayerLatency> layers;
  std::int64_t total_cycles = 0;
  double total_ms = 0.0;
  BufferBlocks buffers;
};

struct LatencyOptions {
  bool check_resources = true;
};

// Buffers are shared by all layers, so each buffer is sized for its worst layer.
BufferBlocks network_buffer_blocks(const NetworkArch& net, const AcceleratorDesign& design,
                                   const FpgaSpec& fpga, const NetworkSettings& settings = {});

// First violated resource constraint (DSP, bandwidth, BRAM), or nullopt.
std::optional<std::string> resource_violation(const NetworkArch& net, const AcceleratorDesign& design,
                                              const FpgaSpec& fpga, const NetworkSettings& settings = {});

NetworkLatency network_latency(const NetworkArch& net, const AcceleratorDesign& design,
                               const FpgaSpec& fpga, const NetworkSettings& settings = {},
                               LatencyOptions options = {});

// ---------------------------------------------------------------------------
// Design optimisation
// ---------------------------------------------------------------------------

struct DesignSearchOptions {
  std::optional<int> fixed_tm;
  std::optional<int> fixed_tn;
  std::optional<int> fixed_tm_d;
  std::optional<LaneSplit> fixed_lanes;
  bool check_buffers = true;
};

// Smallest tile value for every distinct trip count ceil(extent / t).
std::vector<int> tile_breakpoints(const std::vector<std::int64_t>& extents);

// Candidate Tr (rows = true) or Tc values for a network.
std::vector<int> tile_size_candidates(const NetworkArch& net, bool rows);

// All (input, output, weight) lane splits, each >= 1, summing to total_lanes.
std::vector<LaneSplit> lane_splits(int total_lanes);

// Exhaustive search over tiling and lane allocation minimising network
// latency; ties broken by (latency, tm, tn, tm_d, tr, tc, lanes).
AcceleratorDesign optimize_design(const NetworkArch& net, const FpgaSpec& fpga,
                                  const NetworkSettings& settings = {},
                                  const DesignSearchOptions& options = {});

}  // namespace hotsearch
