#include "hotsearch/searchspace.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <tuple>

#include "hotsearch/compress.hpp"
#include "hotsearch/errors.hpp"

namespace hotsearch {

namespace {

// Up to `count` values spread evenly over `values` (which must be sorted),
// always keeping both ends.
std::vector<int> spread(const std::vector<int>& values, int count) {
  if (count <= 0 || values.empty()) return {};
  if (values.size() <= static_cast<std::size_t>(count)) return values;
  if (count == 1) return {values.front()};
  std::vector<int> out;
  const double step = static_cast<double>(values.size() - 1) / (count - 1);
  for (int i = 0; i < count; ++i) out.push_back(values[static_cast<std::size_t>(std::lround(i * step))]);
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<PatternChoice> pattern_choices(int k, const SpaceCaps& caps) {
  std::vector<PatternChoice> out{{}};
  if (k < 2) return out;
  std::vector<int> categories;
  for (int c = 1; c < k * k; ++c)
    if (pattern_count(k, c) <= caps.pattern_candidates) categories.push_back(c);
  for (int c : spread(categories, caps.pattern_categories)) {
    const auto available = pattern_count(k, c);
    for (int n : caps.pat_n)
      if (n >= 1 && static_cast<std::uint64_t>(n) <= available) out.push_back({c, n});
  }
  return out;
}

std::vector<int> quant_choices(int int_bits, const SpaceCaps& caps) {
  std::vector<int> out{-1};
  // 15 - I fraction bits is the 16-bit baseline itself.
  std::vector<int> fracs;
  for (int f = caps.min_frac_bits; f <= 14 - int_bits; ++f) fracs.push_back(f);
  for (int f : spread(fracs, caps.quant_levels)) out.push_back(f);
  return out;
}

std::vector<int> cut_levels(int channels, std::int64_t first, int step, int levels) {
  std::vector<int> out;
  if (first <= 0) return out;
  for (int j = 0; j < levels; ++j) {
    const std::int64_t cut = first + static_cast<std::int64_t>(j) * step;
    if (cut >= channels) break;
    out.push_back(static_cast<int>(cut));
  }
  return out;
}

std::vector<int> neighbours(const std::vector<int>& breakpoints, int value) {
  std::vector<int> out;
  auto it = std::lower_bound(breakpoints.begin(), breakpoints.end(), value);
  if (it != breakpoints.begin()) out.push_back(*std::prev(it));
  auto next = std::upper_bound(breakpoints.begin(), breakpoints.end(), value);
  if (next != breakpoints.end()) out.push_back(*next);
  return out;
}

HardwareSpace hardware_space(const NetworkArch& net, const AcceleratorDesign& design, const FpgaSpec& fpga,
                             const SpaceCaps& caps) {
  HardwareSpace hw;
  const int word = fpga.compute_word_bits;
  const LaneSplit base = design.lanes(word);
  hw.lane_splits.push_back(base);
  hw.tilings.push_back({design.tm, design.tn, design.tm_d, design.tr, design.tc});

  auto latency_of = [&](const AcceleratorDesign& d) -> std::optional<std::int64_t> {
    if (resource_violation(net, d, fpga)) return std::nullopt;
    return network_latency(net, d, fpga).total_cycles;
  };

  std::set<LaneSplit> seen{base};
  std::vector<std::pair<std::int64_t, LaneSplit>> lane_moves;
  for (int from = 0; from < 3; ++from)
    for (int to = 0; to < 3; ++to) {
      if (from == to) continue;
      for (int amount : {1, 2}) {
        std::array<int, 3> v{base.input, base.output, base.weight};
        if (v[from] - amount < 1) continue;
        v[from] -= amount;
        v[to] += amount;
        const LaneSplit s{v[0], v[1], v[2]};
        if (!seen.insert(s).second) continue;
        AcceleratorDesign d = design;
        d.set_lanes(s, word);
        if (auto lat = latency_of(d)) lane_moves.push_back({*lat, s});
      }
    }
  std::sort(lane_moves.begin(), lane_moves.end());
  for (const auto& [lat, s] : lane_moves) {
    if (static_cast<int>(hw.lane_splits.size()) >= caps.lane_splits) break;
    hw.lane_splits.push_back(s);
  }

  std::vector<std::int64_t> conv_m, conv_n, dw_m;
  for (std::size_t i : net.convolution_ops()) {
    const auto d = layer_dims(net, i);
    if (d.depthwise) {
      dw_m.push_back(d.m);
    } else {
      conv_m.push_back(d.m);
      conv_n.push_back(d.n);
    }
  }
  std::set<TilingChoice> tried{hw.tilings.front()};
  std::vector<std::pair<std::int64_t, TilingChoice>> tiling_moves;
  auto consider = [&](TilingChoice t) {
    if (!tried.insert(t).second) return;
    AcceleratorDesign d = design;
    d.tm = t.tm;
    d.tn = t.tn;
    d.tm_d = t.tm_d;
    if (auto lat = latency_of(d)) tiling_moves.push_back({*lat, t});
  };
  const TilingChoice b = hw.tilings.front();
  for (int tm : neighbours(tile_breakpoints(conv_m), b.tm)) consider({tm, b.tn, b.tm_d, b.tr, b.tc});
  for (int tn : neighbours(tile_breakpoints(conv_n), b.tn)) consider({b.tm, tn, b.tm_d, b.tr, b.tc});
  if (!dw_m.empty())
    for (int tmd : neighbours(tile_breakpoints(dw_m), b.tm_d)) consider({b.tm, b.tn, tmd, b.tr, b.tc});
  std::sort(tiling_moves.begin(), tiling_moves.end());
  for (const auto& [lat, t] : tiling_moves) {
    if (static_cast<int>(hw.tilings.size()) >= caps.tilings) break;
    hw.tilings.push_back(t);
  }
  return hw;
}

}  // namespace

void SpaceCaps::validate() const {
  if (pattern_categories < 0 || cut_levels < 0 || quant_levels < 0 || exp_levels < 0)
    throw ConfigError("space caps must be non-negative");
  if (lane_splits < 1 || tilings < 1) throw ConfigError("space caps: lane_splits and tilings must be >= 1");
  if (min_frac_bits < 0) throw ConfigError("space caps: min_frac_bits must be >= 0");
  if (near_tie < 0.0) throw ConfigError("space caps: near_tie must be >= 0");
}

SpaceCaps caps_from_json(const nlohmann::json& doc, SpaceCaps caps) {
  if (!doc.is_object()) throw ConfigError("space caps: expected an object");
  try {
    caps.pattern_categories = doc.value("pattern_categories", caps.pattern_categories);
    caps.pat_n = doc.value("pat_n", caps.pat_n);
    caps.pattern_candidates = doc.value("pattern_candidates", caps.pattern_candidates);
    caps.cut_levels = doc.value("cut_levels", caps.cut_levels);
    caps.quant_levels = doc.value("quant_levels", caps.quant_levels);
    caps.min_frac_bits = doc.value("min_frac_bits", caps.min_frac_bits);
    caps.exp_levels = doc.value("exp_levels", caps.exp_levels);
    caps.lane_splits = doc.value("lane_splits", caps.lane_splits);
    caps.tilings = doc.value("tilings", caps.tilings);
    caps.near_tie = doc.value("near_tie", caps.near_tie);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("space caps: ") + e.what());
  }
  caps.validate();
  return caps;
}

nlohmann::json to_json(const SpaceCaps& caps) {
  return {{"pattern_categories", caps.pattern_categories}, {"pat_n", caps.pat_n},
          {"pattern_candidates", caps.pattern_candidates}, {"cut_levels", caps.cut_levels},
          {"quant_levels", caps.quant_levels},             {"min_frac_bits", caps.min_frac_bits},
          {"exp_levels", caps.exp_levels},                 {"lane_splits", caps.lane_splits},
          {"tilings", caps.tilings},                       {"near_tie", caps.near_tie}};
}

bool CompressionConfig::is_identity_compression() const {
  if (!cuts.empty()) return false;
  return std::all_of(layers.begin(), layers.end(), [](const LayerChoice& l) {
    return !l.pattern.active() && !l.quant_frac && l.expand == 0;
  });
}

nlohmann::json to_json(const CompressionConfig& config) {
  auto layers = nlohmann::json::array();
  for (const auto& l : config.layers) {
    layers.push_back({{"op", l.op_index},
                      {"pat_c", l.pattern.pat_c},
                      {"pat_n", l.pattern.pat_n},
                      {"quant_frac", l.quant_frac ? nlohmann::json(*l.quant_frac) : nlohmann::json(nullptr)},
                      {"int_bits", l.int_bits},
                      {"expand", l.expand}});
  }
  return {{"model", config.model}, {"layers", layers}, {"cuts", config.cuts}, {"design", to_json(config.design)}};
}

CompressionConfig config_from_json(const nlohmann::json& doc) {
  CompressionConfig c;
  try {
    c.model = doc.at("model").get<std::string>();
    for (const auto& l : doc.at("layers")) {
      LayerChoice lc;
      lc.op_index = l.at("op").get<std::size_t>();
      lc.pattern = {l.at("pat_c").get<int>(), l.at("pat_n").get<int>()};
      if (!l.at("quant_frac").is_null()) lc.quant_frac = l.at("quant_frac").get<int>();
      lc.int_bits = l.at("int_bits").get<int>();
      lc.expand = l.at("expand").get<int>();
      c.layers.push_back(lc);
    }
    c.cuts = doc.at("cuts").get<std::map<std::string, int>>();
    c.design = design_from_json(doc.at("design"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("compression config: ") + e.what());
  }
  return c;
}

NetworkSettings to_settings(const NetworkArch& net, const CompressionConfig& config) {
  NetworkSettings s;
  s.layers.resize(net.ops().size());
  for (const auto& l : config.layers) {
    if (l.op_index >= s.layers.size()) throw ValidationError("compression config: op index out of range");
    auto& ls = s.layers[l.op_index];
    ls.pattern_zeros = l.pattern.pat_c;
    ls.expand = l.expand;
    if (l.quant_frac) ls.widths.bit_w = l.int_bits + *l.quant_frac;
  }
  for (const auto& [node, cut] : config.cuts)
    if (cut != 0) s.node_cuts[node] = cut;
  return s;
}

JointSpace::JointSpace(std::string model, AcceleratorDesign baseline, int word_bits, std::vector<LayerSpace> layers,
                       std::vector<CutSpace> cuts, HardwareSpace hardware)
    : model_(std::move(model)),
      baseline_(baseline),
      word_bits_(word_bits),
      layers_(std::move(layers)),
      cuts_(std::move(cuts)),
      hardware_(std::move(hardware)) {
  if (hardware_.lane_splits.empty() || hardware_.tilings.empty())
    throw ValidationError("joint space: hardware space needs at least the baseline");
  for (const auto& l : layers_) {
    const std::string p = "op" + std::to_string(l.op_index) + ".";
    dims_.push_back({p + "pattern", l.pattern_choices.size()});
    dims_.push_back({p + "quant", l.quant_choices.size()});
    dims_.push_back({p + "expand", l.exp_choices.size()});
  }
  for (const auto& c : cuts_) dims_.push_back({"cut." + c.node, c.choices.size()});
  dims_.push_back({"hw.lanes", hardware_.lane_splits.size()});
  dims_.push_back({"hw.tiling", hardware_.tilings.size()});
  for (const auto& d : dims_) {
    if (d.count == 0) throw ValidationError("joint space: empty dimension " + d.name);
    if (cardinality_ > std::numeric_limits<std::uint64_t>::max() / d.count) {
      cardinality_ = std::numeric_limits<std::uint64_t>::max();
      exact_ = false;
    } else if (exact_) {
      cardinality_ *= d.count;
    }
  }
}

void JointSpace::check(const Choices& choices) const {
  if (choices.size() != dims_.size()) throw ValidationError("joint space: wrong number of choices");
  for (std::size_t i = 0; i < dims_.size(); ++i)
    if (choices[i] >= dims_[i].count) throw ValidationError("joint space: choice out of range for " + dims_[i].name);
}

Choices JointSpace::decode(std::uint64_t index) const {
  if (!exact_) throw ValidationError("joint space: cardinality too large for indexing");
  if (index >= cardinality_) throw ValidationError("joint space: index out of range");
  Choices out(dims_.size());
  for (std::size_t i = dims_.size(); i-- > 0;) {
    out[i] = static_cast<std::size_t>(index % dims_[i].count);
    index /= dims_[i].count;
  }
  return out;
}

std::uint64_t JointSpace::encode(const Choices& choices) const {
  if (!exact_) throw ValidationError("joint space: cardinality too large for indexing");
  check(choices);
  std::uint64_t index = 0;
  for (std::size_t i = 0; i < dims_.size(); ++i) index = index * dims_[i].count + choices[i];
  return index;
}

Choices JointSpace::sample_uniform(Rng& rng) const {
  Choices out(dims_.size());
  for (std::size_t i = 0; i < dims_.size(); ++i) out[i] = static_cast<std::size_t>(rng.below(dims_[i].count));
  return out;
}

CompressionConfig JointSpace::config(const Choices& choices) const {
  check(choices);
  CompressionConfig c;
  c.model = model_;
  std::size_t d = 0;
  for (const auto& l : layers_) {
    LayerChoice lc;
    lc.op_index = l.op_index;
    lc.int_bits = l.int_bits;
    lc.pattern = l.pattern_choices[choices[d++]];
    const std::size_t q = choices[d++];
    if (q != 0) lc.quant_frac = l.quant_choices[q];
    lc.expand = l.exp_choices[choices[d++]];
    c.layers.push_back(lc);
  }
  for (const auto& cut : cuts_) {
    const int v = cut.choices[choices[d++]];
    if (v != 0) c.cuts[cut.node] = v;
  }
  const LaneSplit lanes = hardware_.lane_splits[choices[d++]];
  const TilingChoice t = hardware_.tilings[choices[d++]];
  c.design = baseline_;
  c.design.tm = t.tm;
  c.design.tn = t.tn;
  c.design.tm_d = t.tm_d;
  c.design.tr = t.tr;
  c.design.tc = t.tc;
  c.design.set_lanes(lanes, word_bits_);
  return c;
}

JointSpace build_space(const NetworkArch& net, const AcceleratorDesign& design, const NetworkAnalysis& analysis,
                       const FpgaSpec& fpga, const SpaceCaps& caps) {
  caps.validate();
  std::vector<LayerSpace> layers;
  std::map<std::string, CutSpace> cuts;
  auto add_cuts = [&](const std::string& node, int step, std::int64_t first) {
    if (!channel_cuttable(net, node)) return;
    const int channels = net.node(node).channels;
    const auto levels = cut_levels(channels, first, step, caps.cut_levels);
    if (levels.empty()) return;
    auto& cs = cuts[node];
    cs.node = node;
    cs.channels = channels;
    cs.step = std::max(cs.step, step);
    std::set<int> merged(cs.choices.begin(), cs.choices.end());
    merged.insert(levels.begin(), levels.end());
    cs.choices.assign(merged.begin(), merged.end());
    if (cs.choices.size() > static_cast<std::size_t>(caps.cut_levels) + 1) cs.choices.resize(caps.cut_levels + 1);
  };

  for (const auto& la : analysis.layers) {
    const auto& op = net.ops().at(la.op_index);
    LayerSpace ls;
    ls.op_index = la.op_index;
    ls.src = op.src;
    ls.dst = op.dst;
    ls.k = op.k;
    ls.int_bits = op.weights ? derive_int_bits(*op.weights) : 1;
    ls.label = la.bottleneck.label;
    const auto& b = la.bottleneck;
    ls.near_tie = b.dominant_cycles > 0 &&
                  static_cast<double>(b.slack) <= caps.near_tie * static_cast<double>(b.dominant_cycles);

    std::set<BottleneckLabel> labels{b.label};
    if (ls.near_tie) labels.insert(b.runner_up);
    auto runner_up = [&](BottleneckLabel l) { return ls.near_tie && b.runner_up == l; };
    const auto& v = la.verdict;

    if (labels.count(BottleneckLabel::C) && (v.pattern_helps || runner_up(BottleneckLabel::C)))
      ls.pattern_choices = pattern_choices(op.k, caps);
    if (labels.count(BottleneckLabel::W) && (v.quant_helps || runner_up(BottleneckLabel::W)))
      ls.quant_choices = quant_choices(ls.int_bits, caps);
    if (labels.count(BottleneckLabel::I) && v.channel_helps_input)
      add_cuts(op.src, design.tn, v.min_effective_cut_in);
    if (labels.count(BottleneckLabel::O) && v.channel_helps_output)
      add_cuts(op.dst, la.dims.depthwise ? design.tm_d : design.tm, v.min_effective_cut_out);
    if (labels.count(BottleneckLabel::I) || labels.count(BottleneckLabel::O))
      for (int e = 2; e <= v.expansion_headroom && static_cast<int>(ls.exp_choices.size()) <= caps.exp_levels; e += 2)
        ls.exp_choices.push_back(e);
    layers.push_back(std::move(ls));
  }

  std::vector<CutSpace> cut_list;
  for (auto& [node, cs] : cuts) cut_list.push_back(std::move(cs));
  return JointSpace(net.name(), design, fpga.compute_word_bits, std::move(layers), std::move(cut_list), hardware_space(net, design, fpga, caps));
}

nlohmann::json space_json(const JointSpace& space) {
  nlohmann::json out;
  out["model"] = space.model();
  out["cardinality"] = space.cardinality();
  out["cardinality_exact"] = space.cardinality_exact();
  out["baseline_design"] = to_json(space.baseline());
  auto dims = nlohmann::json::array();
  for (const auto& d : space.dimensions()) dims.push_back({{"name", d.name}, {"count", d.count}});
  out["dimensions"] = dims;
  auto layers = nlohmann::json::array();
  for (const auto& l : space.layers()) {
    auto patterns = nlohmann::json::array();
    for (const auto& p : l.pattern_choices) patterns.push_back({p.pat_c, p.pat_n});
    auto quants = nlohmann::json::array();
    for (int q : l.quant_choices) quants.push_back(q < 0 ? nlohmann::json(nullptr) : nlohmann::json(q));
    layers.push_back({{"op", l.op_index},
                      {"src", l.src},
                      {"dst", l.dst},
                      {"bottleneck", std::string(1, to_char(l.label))},
                      {"near_tie", l.near_tie},
                      {"k", l.k},
                      {"int_bits", l.int_bits},
                      {"pattern", patterns},
                      {"quant_frac", quants},
                      {"expand", l.exp_choices}});
  }
  out["layers"] = layers;
  auto cuts = nlohmann::json::array();
  for (const auto& c : space.cuts())
    cuts.push_back({{"node", c.node}, {"channels", c.channels}, {"step", c.step}, {"choices", c.choices}});
  out["cuts"] = cuts;
  auto lanes = nlohmann::json::array();
  for (const auto& s : space.hardware().lane_splits) lanes.push_back({s.input, s.output, s.weight});
  auto tilings = nlohmann::json::array();
  for (const auto& t : space.hardware().tilings)
    tilings.push_back({{"tm", t.tm}, {"tn", t.tn}, {"tm_d", t.tm_d}, {"tr", t.tr}, {"tc", t.tc}});
  out["hardware"] = {{"lane_splits", lanes}, {"tilings", tilings}};
  return out;
}

}  // namespace hotsearch
