#include <doctest.h>

#include "hotsearch/bottleneck.hpp"
#include "hotsearch/errors.hpp"
#include "support.hpp"

using namespace hotsearch;
using testing::chain;

namespace {

AcceleratorDesign design(int tm, int tn, int tr, int tc, LaneSplit lanes, int tm_d = 0) {
  AcceleratorDesign d;
  d.tm = tm;
  d.tn = tn;
  d.tr = tr;
  d.tc = tc;
  d.tm_d = tm_d;
  d.set_lanes(lanes, 16);
  return d;
}

LatencyBreakdown terms(std::int64_t comp, std::int64_t ti, std::int64_t tw, std::int64_t to) {
  LatencyBreakdown bd;
  bd.t_comp = comp;
  bd.t_i = ti;
  bd.t_w = tw;
  bd.t_o = to;
  bd.lat1 = std::max({comp, ti, tw});
  bd.inner_trips = 2;
  return bd;
}

}  // namespace

TEST_CASE("detect labels") {
  const LayerDims dims{8, 8, 8, 8, 3, false};
  const auto d = design(4, 4, 4, 4, {1, 1, 1});

  const auto c = detect(terms(900, 200, 100, 50), dims, d);
  CHECK(c.label == BottleneckLabel::C);
  CHECK(c.dominant_cycles == 900);
  CHECK(c.slack == 700);
  CHECK(c.runner_up == BottleneckLabel::I);

  // Two inner trips, so t_o must beat 2 * Lat1.
  CHECK(detect(terms(900, 200, 100, 1801), dims, d).label == BottleneckLabel::O);
  CHECK(detect(terms(100, 900, 200, 1801), dims, d).label == BottleneckLabel::O);
  CHECK(detect(terms(900, 200, 100, 1800), dims, d).label == BottleneckLabel::C);

  const auto tie = detect(terms(100, 300, 300, 10), dims, d);
  CHECK(tie.label == BottleneckLabel::I);
  CHECK(tie.slack == 0);
  CHECK(tie.runner_up == BottleneckLabel::W);
  CHECK_FALSE(quant_effectiveness(tie));

  CHECK(quant_effectiveness(detect(terms(100, 200, 300, 10), dims, d)));
  CHECK_FALSE(quant_effectiveness(c));
}

TEST_CASE("pattern effectiveness") {
  SUBCASE("compute bound K=3 drops by 5/9") {
    const LayerDims dims{4, 4, 20, 20, 3, false};
    const auto d = design(4, 4, 10, 10, {16, 8, 8});
    const auto base = layer_latency(dims, d, {});
    REQUIRE(detect(base, dims, d).label == BottleneckLabel::C);
    const auto p = pattern_effectiveness(dims, d, {}, {}, 4);
    CHECK(p.helps);
    LayerEffects fx;
    fx.pattern_zeros = 4;
    const auto after = layer_latency(dims, d, {}, fx);
    CHECK(after.t_comp * 9 == base.t_comp * 5);
    CHECK(p.tile_saving == base.lat1 - after.lat1);
    CHECK(p.layer_saving == base.lat_total - after.lat_total);
  }
  SUBCASE("saving is clamped by the next binding term") {
    // t_comp = 900, t_i = 6 * 100 * 16 / 16 = 600.
    const LayerDims dims{4, 12, 20, 20, 3, false};
    const auto d = design(1, 6, 10, 10, {1, 8, 8});
    const auto base = layer_latency(dims, d, {});
    REQUIRE(base.t_comp == 900);
    REQUIRE(base.t_i == 600);
    const auto p = pattern_effectiveness(dims, d, {}, {}, 4);
    CHECK(p.helps);
    CHECK(p.tile_saving == 300);
  }
  SUBCASE("input bound layer") {
    const LayerDims dims{4, 16, 8, 8, 1, false};
    const auto d = design(4, 16, 8, 8, {1, 20, 11});
    REQUIRE(detect(layer_latency(dims, d, {}), dims, d).label == BottleneckLabel::I);
    const auto p = pattern_effectiveness(dims, d, {}, {}, 0);
    CHECK_FALSE(p.helps);
    CHECK(p.tile_saving == 0);
    CHECK(p.layer_saving == 0);
  }
}

TEST_CASE("channel effectiveness") {
  const auto d = design(100, 36, 7, 7, {4, 4, 4});
  SUBCASE("output side") {
    const LayerDims dims{512, 64, 7, 7, 3, false};
    const auto bd = layer_latency(dims, d, {});
    CHECK(channel_effectiveness(bd, dims, d, 32, CutSide::Output));
    CHECK_FALSE(channel_effectiveness(bd, dims, d, 11, CutSide::Output));
    CHECK(channel_effectiveness(bd, dims, d, 12, CutSide::Output));
    CHECK(min_effective_cut(dims, d, CutSide::Output) == 12);
  }
  SUBCASE("input side") {
    const LayerDims dims{64, 512, 7, 7, 3, false};
    const auto bd = layer_latency(dims, d, {});
    REQUIRE(bd.t_o < bd.inner_trips * bd.lat1);
    CHECK(channel_effectiveness(bd, dims, d, 16, CutSide::Input));
    CHECK_FALSE(channel_effectiveness(bd, dims, d, 7, CutSide::Input));
    CHECK(min_effective_cut(dims, d, CutSide::Input) == 8);
  }
  SUBCASE("small cut on an output-bound layer") {
    const LayerDims dims{120, 4, 8, 8, 1, false};
    const auto od = design(100, 4, 8, 8, {20, 1, 11});
    const auto bd = layer_latency(dims, od, {});
    REQUIRE(detect(bd, dims, od).label == BottleneckLabel::O);
    CHECK_FALSE(channel_effectiveness(bd, dims, od, 10));
    CHECK_FALSE(channel_effectiveness(bd, dims, od, 3, CutSide::Input));
  }
}

TEST_CASE("verdict invariants on random layers") {
  Rng rng(23);
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); };
  for (int trial = 0; trial < 300; ++trial) {
    static constexpr int kSizes[] = {1, 3, 5};
    const int k = kSizes[rng.below(3)];
    const LayerDims dims{pick(1, 40), pick(1, 40), pick(1, 12), pick(1, 12), k, false};
    const auto d = design(pick(1, 12), pick(1, 12), pick(1, 8), pick(1, 8), {pick(1, 8), pick(1, 8), pick(1, 8)});
    const auto bd = layer_latency(dims, d, {});
    const auto b = detect(bd, dims, d);
    CAPTURE(trial);

    if (k > 1) {
      const int zeros = pick(1, k * k - 1);
      const auto p = pattern_effectiveness(dims, d, {}, {}, zeros);
      LayerEffects fx;
      fx.pattern_zeros = zeros;
      if (p.helps) CHECK(layer_latency(dims, d, {}, fx).lat_total < bd.lat_total);
      CHECK(p.helps == (b.label == BottleneckLabel::C && p.layer_saving > 0));
    }

    for (auto side : {CutSide::Input, CutSide::Output}) {
      const auto extent = side == CutSide::Input ? dims.n : dims.m;
      if (extent < 2) continue;
      const auto cut = pick(1, static_cast<int>(extent - 1));
      if (!channel_effectiveness(bd, dims, d, cut, side)) {
        LayerEffects fx;
        (side == CutSide::Input ? fx.cut_in : fx.cut_out) = static_cast<int>(cut);
        CHECK(layer_latency(dims, d, {}, fx).lat_total == bd.lat_total);
      }
    }

    if (quant_effectiveness(b)) CHECK(layer_latency(dims, d, {16, 8, 16}).lat1 < bd.lat1);
  }
}

TEST_CASE("expansion headroom") {
  const FpgaSpec fpga;
  SUBCASE("compute bound layer") {
    const auto net = chain("c", 16, 4, {{4, 3}}, 1, false);
    const auto d = design(4, 4, 16, 16, {10, 10, 12});
    const auto a = analyze_network(net, d, fpga);
    REQUIRE(a.layers[0].bottleneck.label == BottleneckLabel::C);
    CHECK(expansion_headroom(net, 0, d, fpga) == 0);
  }
  SUBCASE("exact tie between compute and input") {
    // t_comp = 9 * 16 = 144, t_i = 9 * 16 * 16 / 16 = 144.
    const auto net = chain("tie", 4, 9, {{2, 3}}, 1, false);
    const auto d = design(2, 9, 4, 4, {1, 10, 10});
    const auto bd = layer_latency(layer_dims(net, 0), d, {});
    REQUIRE(bd.t_comp == bd.t_i);
    CHECK(expansion_headroom(net, 0, d, fpga) == 0);
  }
  SUBCASE("input bound layer with slack") {
    const auto net = chain("slack", 4, 16, {{2, 1}}, 1, false);
    const auto d = design(2, 16, 4, 4, {1, 10, 10});
    const auto bd = layer_latency(layer_dims(net, 0), d, {});
    REQUIRE(bd.t_i >= 16 * bd.t_comp);
    const int h = expansion_headroom(net, 0, d, fpga);
    CHECK(h >= 2);
    CHECK(h % 2 == 0);
  }
  SUBCASE("h keeps the latency and h + 2 does not") {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
      const auto net = builtin_network("random", seed, 3);
      const auto d = optimize_design(net, fpga);
      const auto base = network_latency(net, d, fpga);
      for (std::size_t i : net.convolution_ops()) {
        const int h = expansion_headroom(net, i, d, fpga);
        NetworkSettings s;
        s.layers.resize(net.ops().size());
        s.layers[i].expand = h;
        CHECK(network_latency(net, d, fpga, s).layers[i].bd.lat_total == base.layers[i].bd.lat_total);
        s.layers[i].expand = h + 2;
        const bool broken = resource_violation(net, d, fpga, s).has_value();
        CHECK((broken ||
               network_latency(net, d, fpga, s, {false}).layers[i].bd.lat_total != base.layers[i].bd.lat_total));
      }
    }
  }
}

TEST_CASE("network histogram") {
  const FpgaSpec fpga;
  // Shared design: t_comp = 4 K^2, t_i = 16, t_o = 16 * bit_o / 16, t_w = K^2 * bit_w / 2.
  const auto d = design(4, 4, 2, 2, {1, 1, 2});
  const auto net = chain("four", 4, 4, {{4, 3}, {4, 1}, {4, 3}, {4, 1}}, 1, false);
  NetworkSettings s;
  s.layers.resize(4);
  s.layers[0].widths = {16, 4, 16};   // C
  s.layers[1].widths = {16, 4, 16};   // I
  s.layers[2].widths = {16, 16, 16};  // W
  s.layers[3].widths = {16, 4, 32};   // O
  const auto a = analyze_network(net, d, fpga, s);
  REQUIRE(a.layers.size() == 4);
  CHECK(a.layers[0].bottleneck.label == BottleneckLabel::C);
  CHECK(a.layers[1].bottleneck.label == BottleneckLabel::I);
  CHECK(a.layers[2].bottleneck.label == BottleneckLabel::W);
  CHECK(a.layers[3].bottleneck.label == BottleneckLabel::O);
  CHECK(a.histogram == std::array<int, 4>{1, 1, 1, 1});

  const auto one = chain("one", 4, 4, {{4, 3}}, 1, false);
  NetworkSettings s1;
  s1.layers = {s.layers[0]};
  CHECK(analyze_network(one, d, fpga, s1).histogram == std::array<int, 4>{1, 0, 0, 0});
}

TEST_CASE("detect is a pure function") {
  const LayerDims dims{30, 20, 10, 10, 3, false};
  const auto d = design(7, 5, 5, 5, {3, 2, 1});
  const auto bd = layer_latency(dims, d, {});
  const auto a = detect(bd, dims, d);
  const auto b = detect(bd, dims, d);
  CHECK(a.label == b.label);
  CHECK(a.slack == b.slack);
  CHECK(a.slack >= 0);
}
