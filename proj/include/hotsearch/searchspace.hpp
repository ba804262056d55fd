#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hotsearch/bottleneck.hpp"
#include "hotsearch/perfmodel.hpp"
#include "hotsearch/rng.hpp"

namespace hotsearch {

struct PatternChoice {
  int pat_c = 0;  // 0 means no pattern pruning
  int pat_n = 0;

  bool active() const { return pat_c > 0; }
  auto operator<=>(const PatternChoice&) const = default;
};

// Choice lists for one convolution layer. Slot 0 of every list is the
// identity choice.
struct LayerSpace {
  std::size_t op_index = 0;
  std::string src;
  std::string dst;
  int k = 1;
  int int_bits = 1;
  BottleneckLabel label = BottleneckLabel::C;
  bool near_tie = false;
  std::vector<PatternChoice> pattern_choices{{}};
  std::vector<int> quant_choices{-1};  // fraction bits; -1 keeps 16-bit weights
  std::vector<int> exp_choices{0};
};

struct CutSpace {
  std::string node;
  int channels = 0;
  int step = 1;
  std::vector<int> choices{0};
};

struct TilingChoice {
  int tm = 1, tn = 1, tm_d = 0, tr = 1, tc = 1;
  auto operator<=>(const TilingChoice&) const = default;
};

struct HardwareSpace {
  std::vector<LaneSplit> lane_splits;   // [0] is the baseline split
  std::vector<TilingChoice> tilings;    // [0] is the baseline tiling
};

struct SpaceCaps {
  int pattern_categories = 4;
  std::vector<int> pat_n{2, 4};
  std::uint64_t pattern_candidates = 4096;  // categories with more masks are skipped
  int cut_levels = 3;
  int quant_levels = 4;
  int min_frac_bits = 3;
  int exp_levels = 2;
  int lane_splits = 8;
  int tilings = 4;
  double near_tie = 0.10;  // slack / dominant below which both labels get a space

  void validate() const;
};

SpaceCaps caps_from_json(const nlohmann::json& doc, SpaceCaps defaults = {});
nlohmann::json to_json(const SpaceCaps& caps);

struct LayerChoice {
  std::size_t op_index = 0;
  PatternChoice pattern;
  std::optional<int> quant_frac;
  int int_bits = 1;
  int expand = 0;

  bool operator==(const LayerChoice&) const = default;
};

// A fully decoded point of the joint space.
struct CompressionConfig {
  std::string model;
  std::vector<LayerChoice> layers;
  std::map<std::string, int> cuts;
  AcceleratorDesign design;

  bool is_identity_compression() const;
  bool operator==(const CompressionConfig&) const = default;
};

nlohmann::json to_json(const CompressionConfig& config);
CompressionConfig config_from_json(const nlohmann::json& doc);

// Settings seen by the latency model for this configuration.
NetworkSettings to_settings(const NetworkArch& net, const CompressionConfig& config);

struct Dimension {
  std::string name;
  std::size_t count = 1;
};

using Choices = std::vector<std::size_t>;

class JointSpace {
 public:
  JointSpace() = default;
  JointSpace(std::string model, AcceleratorDesign baseline, int word_bits, std::vector<LayerSpace> layers,
             std::vector<CutSpace> cuts, HardwareSpace hardware);

  const std::string& model() const { return model_; }
  const AcceleratorDesign& baseline() const { return baseline_; }
  int word_bits() const { return word_bits_; }
  const std::vector<LayerSpace>& layers() const { return layers_; }
  const std::vector<CutSpace>& cuts() const { return cuts_; }
  const HardwareSpace& hardware() const { return hardware_; }

  // Layer dimensions (pattern, quant, expansion per layer), then one per cut
  // node, then lane split and tiling.
  const std::vector<Dimension>& dimensions() const { return dims_; }

  // Exact product of choice counts; saturates when it does not fit.
  std::uint64_t cardinality() const { return cardinality_; }
  bool cardinality_exact() const { return exact_; }

  // Mixed radix, first dimension most significant.
  Choices decode(std::uint64_t index) const;
  std::uint64_t encode(const Choices& choices) const;

  Choices identity() const { return Choices(dims_.size(), 0); }
  // Uniform over the whole space, one independent draw per dimension.
  Choices sample_uniform(Rng& rng) const;

  CompressionConfig config(const Choices& choices) const;

 private:
  void check(const Choices& choices) const;

  std::string model_;
  AcceleratorDesign baseline_;
  int word_bits_ = 16;
  std::vector<LayerSpace> layers_;
  std::vector<CutSpace> cuts_;
  HardwareSpace hardware_;
  std::vector<Dimension> dims_;
  std::uint64_t cardinality_ = 1;
  bool exact_ = true;
};

JointSpace build_space(const NetworkArch& net, const AcceleratorDesign& design, const NetworkAnalysis& analysis,
                       const FpgaSpec& fpga, const SpaceCaps& caps = {});

// Per-layer table for reports.
nlohmann::json space_json(const JointSpace& space);

}  // namespace hotsearch
