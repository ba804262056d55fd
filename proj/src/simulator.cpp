#include <algorithm>
#include <array>

#include "hotsearch/errors.hpp"
#include "hotsearch/perfmodel.hpp"

namespace hotsearch {

// Four independent resources: the IFM port, the weight port, the MAC array and
// the OFM port. IFM/weight tiles land in ping-pong buffers, so tile j may only
// start loading once tile j-2 has been consumed. OFM accumulates on chip for
// the inner input-channel rounds of an outer trip and is written back from a
// second ping-pong pair, so trip g may only start computing once the
// write-back of trip g-2 has drained.
std::int64_t simulate_layer(const LayerDims& dims, const AcceleratorDesign& design, const DataWidths& widths,
                            const LayerEffects& fx) {
  if (dims.depthwise && design.tm_d < 1) throw InfeasibleError("depthwise layer needs a depthwise engine (tm_d >= 1)");
  const std::int64_t m = dims.m - fx.cut_out;
  const std::int64_t n = dims.depthwise ? m : dims.n - fx.cut_in;
  if (m < 1 || n < 1) throw ValidationError("invalid compression: non-positive effective channels");
  const int k = dims.k + fx.expand;
  const std::int64_t tm = dims.depthwise ? design.tm_d : design.tm;

  const std::int64_t compute = tile_compute_cycles(k, design.tr, design.tc, fx.pattern_zeros);
  const auto transfer = tile_transfer_cycles(design, k, widths, dims.depthwise);

  const std::int64_t inner = dims.depthwise ? 1 : ceil_div(n, design.tn);
  std::int64_t outer = 0;
  for (std::int64_t r = 0; r < dims.r; r += design.tr)
    for (std::int64_t c = 0; c < dims.c; c += design.tc)
      for (std::int64_t o = 0; o < m; o += tm) ++outer;

  std::int64_t ifm_port = 0, weight_port = 0, mac = 0, ofm_port = 0;
  std::array<std::int64_t, 2> consumed{0, 0};   // compute end of tiles j-2, j-1
  std::array<std::int64_t, 2> written{0, 0};    // write-back end of trips g-2, g-1
  std::int64_t tile = 0;
  for (std::int64_t g = 0; g < outer; ++g) {
    for (std::int64_t i = 0; i < inner; ++i, ++tile) {
      const std::int64_t slot_free = tile >= 2 ? consumed[0] : 0;
      ifm_port = std::max(ifm_port, slot_free) + transfer.t_i;
      weight_port = std::max(weight_port, slot_free) + transfer.t_w;
      std::int64_t start = std::max({mac, ifm_port, weight_port});
      if (i == 0 && g >= 2) start = std::max(start, written[0]);
      mac = start + compute;
      consumed = {consumed[1], mac};
    }
    ofm_port = std::max(ofm_port, mac) + transfer.t_o;
    written = {written[1], ofm_port};
  }
  return ofm_port;
}

}  // namespace hotsearch
