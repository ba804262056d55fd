#pragma once

#include <string>
#include <vector>

#include "hotsearch/netzoo.hpp"
#include "hotsearch/rng.hpp"

namespace testing {

using namespace hotsearch;

inline FloatTensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  FloatTensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

struct LayerDef {
  int channels;
  int k;
  bool depthwise = false;
  int stride = 1;
  int padding = -1;  // -1: same padding
};

// input -> l0 -> l1 -> ... on square maps; weights are uniform in [-1, 1].
inline NetworkArch chain(const std::string& name, int side, int in_channels, const std::vector<LayerDef>& layers,
                         std::uint64_t seed = 1, bool with_weights = true, double accuracy = 0.8) {
  Rng rng(seed);
  std::vector<NodeSpec> nodes{{"input", side, side, in_channels}};
  std::vector<OperatorSpec> ops;
  int ch = in_channels;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    OperatorSpec op;
    op.src = nodes.back().id;
    op.dst = "n" + std::to_string(i + 1);
    op.kind = l.depthwise ? OpKind::DepthwiseConv : OpKind::Conv;
    op.k = l.k;
    op.stride = l.stride;
    op.padding = l.padding < 0 ? l.k / 2 : l.padding;
    const int out_ch = l.depthwise ? ch : l.channels;
    if (with_weights)
      op.weights = random_tensor({static_cast<std::size_t>(out_ch), l.depthwise ? 1u : static_cast<std::size_t>(ch),
                                  static_cast<std::size_t>(l.k), static_cast<std::size_t>(l.k)},
                                 rng);
    side = window_output(side, l.k, op.stride, op.padding);
    nodes.push_back({op.dst, side, side, out_ch});
    ops.push_back(std::move(op));
    ch = out_ch;
  }
  return NetworkArch(name, accuracy, std::move(nodes), std::move(ops));
}

}  // namespace testing
