#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hotsearch/perfmodel.hpp"

namespace hotsearch {

using LayerModel = std::function<LatencyBreakdown(const LayerDims&, const AcceleratorDesign&, const DataWidths&,
                                                  const LayerEffects&)>;

// The library's layer_latency, or a deliberately broken copy for checking
// that the battery notices. Known mutants: "latency-tail" (tail term off by one).
LayerModel layer_model(const std::optional<std::string>& mutant = std::nullopt);
std::vector<std::string> mutant_names();

struct OracleSuite {
  std::string name;
  int passed = 0;
  int total = 0;
  std::vector<std::string> failures;  // first few only

  bool ok() const { return passed == total; }
};

struct VerifyOptions {
  std::uint64_t seed = 1;
  int layers = 200;
  int conv_triples = 50;
  int search_seeds = 4;
  std::optional<std::string> mutant;
};

struct VerifyReport {
  std::vector<OracleSuite> suites;

  bool ok() const;
};

VerifyReport run_verification(const VerifyOptions& options = {});
nlohmann::json to_json(const VerifyReport& report);

}  // namespace hotsearch
