#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hotsearch/errors.hpp"
#include "hotsearch/netzoo.hpp"
#include "hotsearch/tensor.hpp"

namespace hotsearch {

// Zero positions of a K x K kernel, stored as sorted flat indices row * k + col.
struct PatternMask {
  int k = 3;
  std::vector<int> zeros;

  int pat_c() const { return static_cast<int>(zeros.size()); }
  bool keeps(int position) const;
  auto operator<=>(const PatternMask&) const = default;
};

struct PatternLibrary {
  int k = 3;
  int pat_c = 0;
  std::vector<PatternMask> masks;

  std::size_t size() const { return masks.size(); }
};

// JSON list of [row, col] zero positions per mask.
nlohmann::json to_json(const PatternLibrary& library);
PatternLibrary library_from_json(const nlohmann::json& doc, int k);

std::uint64_t binomial(int n, int r);
std::uint64_t pattern_count(int k, int pat_c);

// All C(k*k, pat_c) masks in lexicographic order of their zero sets.
std::vector<PatternMask> enumerate_patterns(int k, int pat_c);

// Per kernel (index m * N + n), the library mask keeping the most energy;
// ties go to the lowest index.
std::vector<int> assign_patterns(const FloatTensor& weights, const PatternLibrary& library);

// Greedy forward selection of pat_n masks maximising the total kept energy
// when every kernel takes its best selected mask. Masks are returned in
// enumeration order.
PatternLibrary select_library(const FloatTensor& weights, int k, int pat_c, int pat_n);

struct TileHarmonization {
  std::vector<int> permutation;    // new input channel i is old channel permutation[i]
  int tn = 1;
  std::vector<int> tile_masks;     // [m][tile], tile over permuted input channels
  std::vector<int> kernel_masks;   // [m][n] after forcing, permuted channel order
  std::int64_t forced = 0;         // kernels whose mask was overridden
};

// Sorts input channels by their majority mask, groups them into tiles of tn
// channels and forces every kernel of a filter inside one tile to the tile's
// majority mask.
TileHarmonization harmonize_tiles(std::span<const int> assignments, std::size_t m, std::size_t n, int tn);

// Zeroes the masked positions of every kernel; other weights are untouched.
FloatTensor apply_pattern(const FloatTensor& weights, const PatternLibrary& library,
                          std::span<const int> kernel_masks);

// sum(kept^2) / sum(all^2); 1 for an all-zero tensor.
double kept_energy_fraction(const FloatTensor& original, const FloatTensor& pruned);

struct ChannelRanking {
  enum class Kind { L1, Random } kind = Kind::L1;
  std::uint64_t seed = 0;
};

// Channels of `node_id` in cut order: ascending L1 norm of the producing
// filter (stable), or a seeded shuffle.
std::vector<int> rank_channels(const NetworkArch& net, const std::string& node_id, ChannelRanking ranking);

// Whether cut_channels accepts this node: one Conv producer, one Conv consumer.
bool channel_cuttable(const NetworkArch& net, const std::string& node_id);

// Removes cut_n channels from a node, dropping the producer's output filters
// and the consumer's input kernel slices.
NetworkArch cut_channels(const NetworkArch& net, const std::string& node_id, int cut_n,
                         ChannelRanking ranking = {});

struct FixedPointFormat {
  int int_bits = 1;   // includes the sign bit
  int frac_bits = 15;

  void validate() const;
  double step() const { return std::ldexp(1.0, -frac_bits); }
  double max_value() const { return std::ldexp(1.0, int_bits - 1) - step(); }
  int total_bits() const { return int_bits + frac_bits; }
  bool operator==(const FixedPointFormat&) const = default;
};

struct QuantizationResult {
  FloatTensor weights;
  double max_abs_error = 0.0;
};

// Round half to even onto multiples of 2^-F, saturating at +-(2^(I-1) - 2^-F).
double quantize_value(double w, const FixedPointFormat& fmt);
QuantizationResult quantize(const FloatTensor& weights, const FixedPointFormat& fmt);

// 1 + max(0, ceil(log2(max|w| + eps))).
int derive_int_bits(const FloatTensor& weights);

// Raw fixed-point integers w * 2^F, rounded and saturated as in quantize.
FixedTensor to_fixed(const FloatTensor& values, const FixedPointFormat& fmt);

// Grows the kernel by exp_n with a zero ring and adds exp_n / 2 padding.
OperatorSpec expand_filter(const OperatorSpec& op, int exp_n);

// Direct convolution, accumulated in (m, n, ky, kx) order. Weights are
// [M][N][K][K] or [M][1][K][K] when depthwise.
template <typename T>
Tensor<T> naive_conv(const Tensor<T>& input, const Tensor<T>& weights, int k, int stride, int padding,
                     bool depthwise) {
  if (input.rank() != 3 || weights.rank() != 4) throw ValidationError("naive_conv: expects [C][H][W] input");
  const auto channels = static_cast<std::int64_t>(input.dim(0));
  const auto rows = static_cast<std::int64_t>(input.dim(1));
  const auto cols = static_cast<std::int64_t>(input.dim(2));
  const auto m = static_cast<std::int64_t>(weights.dim(0));
  const auto n = static_cast<std::int64_t>(weights.dim(1));
  if (weights.dim(2) != static_cast<std::size_t>(k) || weights.dim(3) != static_cast<std::size_t>(k))
    throw ValidationError("naive_conv: kernel size mismatch");
  if (depthwise ? (n != 1 || m != channels) : n != channels)
    throw ValidationError("naive_conv: channel mismatch between input and weights");
  const std::int64_t out_rows = (rows + 2 * padding - k) / stride + 1;
  const std::int64_t out_cols = (cols + 2 * padding - k) / stride + 1;
  if (out_rows < 1 || out_cols < 1) throw ValidationError("naive_conv: empty output");

  Tensor<T> out({static_cast<std::size_t>(m), static_cast<std::size_t>(out_rows), static_cast<std::size_t>(out_cols)});
  for (std::int64_t o = 0; o < m; ++o)
    for (std::int64_t y = 0; y < out_rows; ++y)
      for (std::int64_t x = 0; x < out_cols; ++x) {
        T acc{};
        for (std::int64_t i = 0; i < n; ++i) {
          const std::int64_t ch = depthwise ? o : i;
          for (int ky = 0; ky < k; ++ky) {
            const std::int64_t iy = y * stride + ky - padding;
            if (iy < 0 || iy >= rows) continue;
            for (int kx = 0; kx < k; ++kx) {
              const std::int64_t ix = x * stride + kx - padding;
              if (ix < 0 || ix >= cols) continue;
              acc += weights(o, i, ky, kx) * input(ch, iy, ix);
            }
          }
        }
        out(o, y, x) = acc;
      }
  return out;
}

template <typename T>
Tensor<T> naive_conv(const Tensor<T>& input, const Tensor<T>& weights, const OperatorSpec& op) {
  if (!op.is_convolution()) throw ValidationError("naive_conv: op is not a convolution");
  return naive_conv(input, weights, op.k, op.stride, op.padding, op.kind == OpKind::DepthwiseConv);
}

FloatTensor naive_conv(const FloatTensor& input, const OperatorSpec& op);

FloatTensor max_pool(const FloatTensor& input, int k, int stride, int padding);

// Evaluates every node for a [C][H][W] input on the network's first node.
// Nodes with several producers sum them. Ops without weights are rejected
// unless they are pools.
std::map<std::string, FloatTensor> run_network(const NetworkArch& net, const FloatTensor& input);

}  // namespace hotsearch
