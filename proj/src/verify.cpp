#include "hotsearch/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hotsearch/compress.hpp"
#include "hotsearch/errors.hpp"
#include "hotsearch/rng.hpp"
#include "hotsearch/search.hpp"

namespace hotsearch {

namespace {

constexpr std::size_t kMaxFailures = 5;

int pick(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

struct RandomLayer {
  LayerDims dims;
  AcceleratorDesign design;
  DataWidths widths;
  LayerEffects effects;
};

RandomLayer random_layer(Rng& rng) {
  RandomLayer l;
  static constexpr int kSizes[] = {1, 3, 5};
  l.dims.k = kSizes[rng.below(3)];
  l.dims.depthwise = rng.below(4) == 0;
  l.dims.m = pick(rng, 1, 16);
  l.dims.n = l.dims.depthwise ? l.dims.m : pick(rng, 1, 16);
  l.dims.r = pick(rng, 1, 12);
  l.dims.c = pick(rng, 1, 12);
  auto& d = l.design;
  d.tm = pick(rng, 1, static_cast<int>(l.dims.m));
  d.tn = pick(rng, 1, static_cast<int>(l.dims.n));
  d.tm_d = l.dims.depthwise ? pick(rng, 1, static_cast<int>(l.dims.m)) : 0;
  d.tr = pick(rng, 1, static_cast<int>(l.dims.r));
  d.tc = pick(rng, 1, static_cast<int>(l.dims.c));
  d.set_lanes({pick(rng, 1, 8), pick(rng, 1, 8), pick(rng, 1, 8)}, 16);
  if (l.dims.k > 1 && rng.below(2) == 0) l.effects.pattern_zeros = pick(rng, 1, l.dims.k * l.dims.k - 1);
  return l;
}

std::string describe(const RandomLayer& l) {
  std::ostringstream s;
  s << "M=" << l.dims.m << " N=" << l.dims.n << " R=" << l.dims.r << " C=" << l.dims.c << " K=" << l.dims.k
    << (l.dims.depthwise ? " dw" : "") << " tm=" << l.design.tm << " tn=" << l.design.tn << " tm_d=" << l.design.tm_d
    << " tr=" << l.design.tr << " tc=" << l.design.tc << " lanes=" << l.design.ib_bits / 16 << ","
    << l.design.ob_bits / 16 << "," << l.design.wb_bits / 16 << " zeros=" << l.effects.pattern_zeros;
  return s.str();
}

// Layer latency summed tile by tile from the raw per-tile costs.
std::int64_t loop_sum_latency(const RandomLayer& l) {
  const auto& d = l.design;
  const bool dw = l.dims.depthwise;
  const std::int64_t tm = dw ? d.tm_d : d.tm;
  const std::int64_t tn = dw ? 1 : d.tn;
  const std::int64_t in_ch = dw ? d.tm_d : d.tn;
  const std::int64_t k = l.dims.k;
  const std::int64_t px = static_cast<std::int64_t>(d.tr) * d.tc;
  auto up = [](std::int64_t a, std::int64_t b) { return (a + b - 1) / b; };
  const std::int64_t comp = (k * k - l.effects.pattern_zeros) * px;
  const std::int64_t ti = up(in_ch * px * l.widths.bit_i, d.ib_bits);
  const std::int64_t tw = up(tm * tn * k * k * l.widths.bit_w, d.wb_bits);
  const std::int64_t to = up(tm * px * l.widths.bit_o, d.ob_bits);
  const std::int64_t lat1 = std::max({comp, ti, tw});
  std::int64_t total = 0;
  for (std::int64_t r = 0; r < l.dims.r; r += d.tr)
    for (std::int64_t c = 0; c < l.dims.c; c += d.tc)
      for (std::int64_t m = 0; m < l.dims.m; m += tm) {
        std::int64_t inner = 0;
        if (dw) {
          inner = lat1;
        } else {
          for (std::int64_t n = 0; n < l.dims.n; n += tn) inner += lat1;
        }
        total += std::max(inner, to);
      }
  return total + to + lat1;
}

void record(OracleSuite& suite, bool ok, const std::string& what) {
  ++suite.total;
  if (ok) {
    ++suite.passed;
  } else if (suite.failures.size() < kMaxFailures) {
    suite.failures.push_back(what);
  }
}

OracleSuite simulator_suite(const VerifyOptions& o, const LayerModel& model) {
  OracleSuite suite{"model-vs-simulator", 0, 0, {}};
  Rng rng(o.seed);
  for (int i = 0; i < o.layers; ++i) {
    const auto l = random_layer(rng);
    const auto bd = model(l.dims, l.design, l.widths, l.effects);
    const std::int64_t sim = simulate_layer(l.dims, l.design, l.widths, l.effects);
    const std::int64_t tol = std::max(bd.lat1, bd.t_o);
    record(suite, std::llabs(bd.lat_total - sim) <= tol,
           describe(l) + ": model " + std::to_string(bd.lat_total) + " vs simulated " + std::to_string(sim));
  }
  return suite;
}

OracleSuite loop_sum_suite(const VerifyOptions& o, const LayerModel& model) {
  OracleSuite suite{"model-vs-loop-sum", 0, 0, {}};
  Rng rng(o.seed + 1);
  for (int i = 0; i < o.layers; ++i) {
    const auto l = random_layer(rng);
    const auto got = model(l.dims, l.design, l.widths, l.effects).lat_total;
    const auto want = loop_sum_latency(l);
    record(suite, got == want, describe(l) + ": model " + std::to_string(got) + " vs loop sum " + std::to_string(want));
  }
  return suite;
}

OracleSuite expansion_suite(const VerifyOptions& o) {
  OracleSuite suite{"filter-expansion-invariance", 0, 0, {}};
  Rng rng(o.seed + 2);
  const FixedPointFormat act{4, 8}, wfmt{2, 10};
  for (int i = 0; i < o.conv_triples; ++i) {
    static constexpr int kSizes[] = {1, 3, 5};
    const bool dw = rng.below(3) == 0;
    const int k = kSizes[rng.below(3)];
    const int stride = pick(rng, 1, 2);
    const int pad = pick(rng, 0, k / 2);
    const int cin = pick(rng, 1, 4);
    const int cout = dw ? cin : pick(rng, 1, 4);
    const int side = pick(rng, std::max(5, k), 9);
    const int exp = rng.below(2) == 0 ? 2 : 4;

    OperatorSpec op;
    op.kind = dw ? OpKind::DepthwiseConv : OpKind::Conv;
    op.k = k;
    op.stride = stride;
    op.padding = pad;
    FloatTensor w({static_cast<std::size_t>(cout), dw ? 1u : static_cast<std::size_t>(cin), static_cast<std::size_t>(k),
                   static_cast<std::size_t>(k)});
    for (auto& v : w.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    op.weights = w;
    FloatTensor x({static_cast<std::size_t>(cin), static_cast<std::size_t>(side), static_cast<std::size_t>(side)});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-2.0, 2.0));

    const auto grown = expand_filter(op, exp);
    const auto y0 = naive_conv(x, op);
    const auto y1 = naive_conv(x, grown);
    double err = y0.shape() == y1.shape() ? 0.0 : INFINITY;
    if (std::isfinite(err))
      for (std::size_t j = 0; j < y0.size(); ++j)
        err = std::max(err, std::abs(static_cast<double>(y0.data()[j]) - y1.data()[j]));
    const auto fx = to_fixed(x, act);
    const bool fixed_equal =
        naive_conv(fx, to_fixed(*op.weights, wfmt), op) == naive_conv(fx, to_fixed(*grown.weights, wfmt), grown);
    std::ostringstream what;
    what << (dw ? "dw" : "conv") << " K=" << k << " s=" << stride << " p=" << pad << " exp=" << exp
         << ": float max err " << err << ", fixed " << (fixed_equal ? "equal" : "differs");
    record(suite, err <= 1e-6 && fixed_equal, what.str());
  }
  return suite;
}

OracleSuite search_suite(const VerifyOptions& o) {
  OracleSuite suite{"reinforce-vs-exhaustive", 0, 0, {}};
  const FpgaSpec fpga;
  for (int s = 1; s <= o.search_seeds; ++s) {
    const auto seed = o.seed * 1000 + static_cast<std::uint64_t>(s);
    const auto net = builtin_network("tiny", seed);
    SearchOptions opts;
    opts.seed = seed;
    opts.caps.pattern_categories = 2;
    opts.caps.lane_splits = 4;
    opts.caps.tilings = 2;
    const auto design = optimize_design(net, fpga);
    opts.t_constraint_ms = 0.9 * network_latency(net, design, fpga).total_ms;
    opts.episodes_max = 1000;
    const auto space = build_space(net, design, analyze_network(net, design, fpga), fpga, opts.caps);
    SurrogateEvaluator evaluator({net});
    const auto found = search_backbone(net, fpga, opts, evaluator, &space);
    const auto optimum = exhaustive_search(net, space, fpga, found.spec, evaluator, opts.beta);
    const double best = optimum.best->reward;
    const double got = found.best_reward->reward;
    std::ostringstream what;
    what << "tiny seed " << seed << ": search " << got << " vs exhaustive " << best;
    record(suite, got >= best - 0.05 * std::abs(best), what.str());
  }
  return suite;
}

}  // namespace

LayerModel layer_model(const std::optional<std::string>& mutant) {
  if (!mutant) {
    return [](const LayerDims& d, const AcceleratorDesign& a, const DataWidths& w, const LayerEffects& fx) {
      return layer_latency(d, a, w, fx);
    };
  }
  if (*mutant == "latency-tail") {
    return [](const LayerDims& d, const AcceleratorDesign& a, const DataWidths& w, const LayerEffects& fx) {
      auto bd = layer_latency(d, a, w, fx);
      bd.lat_total += 1;
      return bd;
    };
  }
  throw ConfigError("unknown mutant '" + *mutant + "'");
}

std::vector<std::string> mutant_names() { return {"latency-tail"}; }

bool VerifyReport::ok() const {
  return std::all_of(suites.begin(), suites.end(), [](const OracleSuite& s) { return s.ok(); });
}

VerifyReport run_verification(const VerifyOptions& options) {
  const auto model = layer_model(options.mutant);
  VerifyReport report;
  report.suites.push_back(simulator_suite(options, model));
  report.suites.push_back(loop_sum_suite(options, model));
  report.suites.push_back(expansion_suite(options));
  report.suites.push_back(search_suite(options));
  return report;
}

nlohmann::json to_json(const VerifyReport& report) {
  auto suites = nlohmann::json::array();
  for (const auto& s : report.suites)
    suites.push_back({{"name", s.name}, {"passed", s.passed}, {"total", s.total}, {"failures", s.failures}});
  return {{"ok", report.ok()}, {"suites", suites}};
}

}  // namespace hotsearch
