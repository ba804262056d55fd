#include <algorithm>
#include <limits>
#include <set>
#include <sstream>
#include <tuple>

#include "hotsearch/errors.hpp"
#include "hotsearch/perfmodel.hpp"

namespace hotsearch {

namespace {

constexpr int kTileSizeBase[] = {7, 8, 10, 13, 14, 16, 26, 28, 32, 56, 64};

struct ModeledLayer {
  LayerDims dims;
  LayerEffects effects;
  DataWidths widths;
  std::int64_t m_eff = 0;
  std::int64_t n_eff = 0;
  int k_eff = 0;
};

struct Tiling {
  std::int64_t lower_bound = 0;
  int tm = 0, tn = 0, tm_d = 0, tr = 0, tc = 0;
};

}  // namespace

std::vector<int> tile_breakpoints(const std::vector<std::int64_t>& extents) {
  std::set<int> out;
  for (std::int64_t e : extents) {
    if (e < 1) continue;
    // ceil(e / t) takes each value q on an interval whose smallest t is ceil(e / q).
    for (std::int64_t t = 1; t <= e;) {
      const std::int64_t q = ceil_div(e, t);
      out.insert(static_cast<int>(ceil_div(e, q)));
      if (q == 1) break;
      // next t with a smaller trip count
      t = ceil_div(e, q - 1);
    }
  }
  return {out.begin(), out.end()};
}

std::vector<int> tile_size_candidates(const NetworkArch& net, bool rows) {
  std::set<int> extents;
  int largest = 0;
  for (std::size_t i : net.convolution_ops()) {
    const auto d = layer_dims(net, i);
    const int e = static_cast<int>(rows ? d.r : d.c);
    extents.insert(e);
    largest = std::max(largest, e);
  }
  std::set<int> out;
  for (int v : kTileSizeBase)
    if (v <= largest) out.insert(v);
  for (int e : extents) out.insert(e);
  return {out.begin(), out.end()};
}

std::vector<LaneSplit> lane_splits(int total_lanes) {
  std::vector<LaneSplit> out;
  for (int i = 1; i <= total_lanes - 2; ++i)
    for (int o = 1; i + o <= total_lanes - 1; ++o) out.push_back({i, o, total_lanes - i - o});
  return out;
}

AcceleratorDesign optimize_design(const NetworkArch& net, const FpgaSpec& fpga, const NetworkSettings& settings,
                                  const DesignSearchOptions& options) {
  fpga.validate();
  std::vector<ModeledLayer> layers;
  for (std::size_t i : net.convolution_ops()) {
    ModeledLayer l;
    l.dims = layer_dims(net, i);
    l.effects = layer_effects(net, i, settings);
    l.widths = settings.layer(i).widths;
    l.m_eff = l.dims.m - l.effects.cut_out;
    l.n_eff = l.dims.depthwise ? l.m_eff : l.dims.n - l.effects.cut_in;
    l.k_eff = l.dims.k + l.effects.expand;
    if (l.m_eff < 1 || l.n_eff < 1)
      throw ValidationError(net.name() + ": op " + std::to_string(i) + ": non-positive effective channels");
    layers.push_back(l);
  }

  std::vector<LaneSplit> splits =
      options.fixed_lanes ? std::vector<LaneSplit>{*options.fixed_lanes} : lane_splits(fpga.total_lanes());
  if (splits.empty()) throw InfeasibleError(net.name() + ": no lane split available (need >= 3 lanes)");

  if (layers.empty()) {
    AcceleratorDesign d;
    d.set_lanes(splits.front(), fpga.compute_word_bits);
    return d;
  }

  std::vector<std::int64_t> conv_m, conv_n, dw_m;
  for (const auto& l : layers) {
    if (l.dims.depthwise) {
      dw_m.push_back(l.m_eff);
    } else {
      conv_m.push_back(l.m_eff);
      conv_n.push_back(l.n_eff);
    }
  }
  std::vector<int> tms = options.fixed_tm ? std::vector<int>{*options.fixed_tm}
                         : conv_m.empty() ? std::vector<int>{1}
                                          : tile_breakpoints(conv_m);
  std::vector<int> tns = options.fixed_tn ? std::vector<int>{*options.fixed_tn}
                         : conv_n.empty() ? std::vector<int>{1}
                                          : tile_breakpoints(conv_n);
  std::vector<int> tmds = options.fixed_tm_d ? std::vector<int>{*options.fixed_tm_d}
                          : dw_m.empty()     ? std::vector<int>{0}
                                             : tile_breakpoints(dw_m);
  const auto rows = tile_size_candidates(net, true);
  const auto cols = tile_size_candidates(net, false);

  std::vector<Tiling> tilings;
  bool dsp_ok = false;
  for (int tm : tms)
    for (int tn : tns)
      for (int tmd : tmds) {
        if (static_cast<std::int64_t>(tm) * tn + tmd > fpga.dsp_total) continue;
        if (!dw_m.empty() && tmd < 1) continue;
        dsp_ok = true;
        for (int tr : rows)
          for (int tc : cols) {
            AcceleratorDesign d{tm, tn, tr, tc, tmd, 1, 1, 1};
            if (options.check_buffers) {
              BufferBlocks worst;
              for (const auto& l : layers) {
                const auto b = buffer_blocks(d, l.k_eff, l.widths, fpga.bram_bits_per_block, l.dims.depthwise);
                worst.input = std::max(worst.input, b.input);
                worst.output = std::max(worst.output, b.output);
                worst.weight = std::max(worst.weight, b.weight);
              }
              if (worst.total() > fpga.bram_blocks) continue;
            }
            // Compute-only latency: no design with this tiling can beat it.
            std::int64_t bound = 0;
            for (const auto& l : layers) {
              const std::int64_t tile_m = l.dims.depthwise ? tmd : tm;
              const std::int64_t inner = l.dims.depthwise ? 1 : ceil_div(l.n_eff, tn);
              const std::int64_t outer = ceil_div(l.dims.r, tr) * ceil_div(l.dims.c, tc) * ceil_div(l.m_eff, tile_m);
              const std::int64_t comp = tile_compute_cycles(l.k_eff, tr, tc, l.effects.pattern_zeros);
              bound += outer * inner * comp + comp;
            }
            tilings.push_back({bound, tm, tn, tmd, tr, tc});
          }
      }
  if (!dsp_ok) {
    std::ostringstream msg;
    msg << net.name() << ": no feasible design; binding constraint: dsp (tm*tn + tm_d <= " << fpga.dsp_total;
    if (!dw_m.empty()) msg << " with tm_d >= 1 for depthwise layers";
    msg << ")";
    throw InfeasibleError(msg.str());
  }
  if (tilings.empty())
    throw InfeasibleError(net.name() + ": no feasible design; binding constraint: bram (buffers exceed " +
                          std::to_string(fpga.bram_blocks) + " blocks for every tiling)");

  std::sort(tilings.begin(), tilings.end(), [](const Tiling& a, const Tiling& b) {
    return std::tie(a.lower_bound, a.tm, a.tn, a.tm_d, a.tr, a.tc) <
           std::tie(b.lower_bound, b.tm, b.tn, b.tm_d, b.tr, b.tc);
  });

  using Key = std::tuple<std::int64_t, int, int, int, int, int, int, int, int>;
  std::optional<Key> best;
  AcceleratorDesign best_design;
  for (const auto& t : tilings) {
    if (best && t.lower_bound > std::get<0>(*best)) break;
    for (const auto& s : splits) {
      AcceleratorDesign d{t.tm, t.tn, t.tr, t.tc, t.tm_d, 0, 0, 0};
      d.set_lanes(s, fpga.compute_word_bits);
      std::int64_t total = 0;
      for (const auto& l : layers) {
        total += layer_latency(l.dims, d, l.widths, l.effects, fpga.clock_hz).lat_total;
        if (best && total > std::get<0>(*best)) break;
      }
      const Key key{total, t.tm, t.tn, t.tm_d, t.tr, t.tc, s.input, s.output, s.weight};
      if (!best || key < *best) {
        best = key;
        best_design = d;
      }
    }
  }
  return best_design;
}

}  // namespace hotsearch
