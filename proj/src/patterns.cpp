#include <algorithm>
#include <limits>
#include <map>
#include <numeric>

#include "hotsearch/compress.hpp"

namespace hotsearch {

namespace {

void check_filter(const FloatTensor& weights, int k) {
  if (weights.rank() != 4 || weights.dim(2) != static_cast<std::size_t>(k) ||
      weights.dim(3) != static_cast<std::size_t>(k))
    throw ValidationError("pattern: weights must be [M][N][" + std::to_string(k) + "][" + std::to_string(k) + "]");
}

// Kept energy of every kernel under every candidate, [kernel][candidate].
std::vector<std::vector<double>> kept_energy_table(const FloatTensor& weights, const std::vector<PatternMask>& masks) {
  const std::size_t kk = weights.dim(2) * weights.dim(3);
  const std::size_t kernels = weights.dim(0) * weights.dim(1);
  const auto data = weights.data();
  std::vector<std::vector<double>> table(kernels, std::vector<double>(masks.size()));
  for (std::size_t i = 0; i < kernels; ++i) {
    const float* w = data.data() + i * kk;
    double total = 0.0;
    for (std::size_t p = 0; p < kk; ++p) total += static_cast<double>(w[p]) * w[p];
    for (std::size_t c = 0; c < masks.size(); ++c) {
      double pruned = 0.0;
      for (int z : masks[c].zeros) pruned += static_cast<double>(w[z]) * w[z];
      table[i][c] = total - pruned;
    }
  }
  return table;
}

int majority(const std::map<int, int>& counts) {
  int best = -1, best_count = -1;
  for (const auto& [id, count] : counts)
    if (count > best_count) {
      best = id;
      best_count = count;
    }
  return best;
}

}  // namespace

bool PatternMask::keeps(int position) const { return !std::binary_search(zeros.begin(), zeros.end(), position); }

nlohmann::json to_json(const PatternLibrary& library) {
  auto out = nlohmann::json::array();
  for (const auto& mask : library.masks) {
    auto zeros = nlohmann::json::array();
    for (int z : mask.zeros) zeros.push_back({z / mask.k, z % mask.k});
    out.push_back(zeros);
  }
  return out;
}

PatternLibrary library_from_json(const nlohmann::json& doc, int k) {
  if (!doc.is_array()) throw ParseError("pattern library: expected a list of masks");
  PatternLibrary lib;
  lib.k = k;
  for (const auto& entry : doc) {
    PatternMask mask;
    mask.k = k;
    for (const auto& pos : entry) {
      if (!pos.is_array() || pos.size() != 2) throw ParseError("pattern library: positions are [row, col] pairs");
      const int r = pos[0].get<int>(), c = pos[1].get<int>();
      if (r < 0 || r >= k || c < 0 || c >= k) throw ParseError("pattern library: position outside the kernel");
      mask.zeros.push_back(r * k + c);
    }
    std::sort(mask.zeros.begin(), mask.zeros.end());
    if (std::adjacent_find(mask.zeros.begin(), mask.zeros.end()) != mask.zeros.end())
      throw ParseError("pattern library: repeated position");
    if (mask.pat_c() >= k * k) throw ParseError("pattern library: a mask must keep at least one weight");
    if (!lib.masks.empty() && mask.pat_c() != lib.pat_c)
      throw ParseError("pattern library: masks must share one category");
    lib.pat_c = mask.pat_c();
    lib.masks.push_back(std::move(mask));
  }
  return lib;
}

std::uint64_t binomial(int n, int r) {
  if (r < 0 || r > n) return 0;
  r = std::min(r, n - r);
  std::uint64_t out = 1;
  for (int i = 1; i <= r; ++i) out = out * static_cast<std::uint64_t>(n - r + i) / static_cast<std::uint64_t>(i);
  return out;
}

std::uint64_t pattern_count(int k, int pat_c) {
  if (k < 1 || pat_c < 0 || pat_c >= k * k)
    throw ValidationError("pattern category must satisfy 0 <= pat_c < k*k");
  return binomial(k * k, pat_c);
}

std::vector<PatternMask> enumerate_patterns(int k, int pat_c) {
  pattern_count(k, pat_c);
  std::vector<PatternMask> out;
  std::vector<int> combo(static_cast<std::size_t>(pat_c));
  std::iota(combo.begin(), combo.end(), 0);
  const int n = k * k;
  while (true) {
    out.push_back({k, combo});
    int i = pat_c - 1;
    while (i >= 0 && combo[i] == n - pat_c + i) --i;
    if (i < 0) break;
    ++combo[i];
    for (int j = i + 1; j < pat_c; ++j) combo[j] = combo[j - 1] + 1;
  }
  return out;
}

std::vector<int> assign_patterns(const FloatTensor& weights, const PatternLibrary& library) {
  if (library.masks.empty()) throw ValidationError("assign_patterns: empty library");
  check_filter(weights, library.k);
  const auto table = kept_energy_table(weights, library.masks);
  std::vector<int> out(table.size());
  for (std::size_t i = 0; i < table.size(); ++i)
    out[i] = static_cast<int>(std::max_element(table[i].begin(), table[i].end()) - table[i].begin());
  return out;
}

PatternLibrary select_library(const FloatTensor& weights, int k, int pat_c, int pat_n) {
  check_filter(weights, k);
  const auto candidates = enumerate_patterns(k, pat_c);
  if (pat_n < 1 || static_cast<std::size_t>(pat_n) > candidates.size())
    throw ValidationError("select_library: pat_n must be in [1, " + std::to_string(candidates.size()) + "]");
  const auto table = kept_energy_table(weights, candidates);

  std::vector<double> best(table.size(), -std::numeric_limits<double>::infinity());
  std::vector<bool> taken(candidates.size(), false);
  std::vector<std::size_t> chosen;
  for (int step = 0; step < pat_n; ++step) {
    std::size_t pick = 0;
    double pick_total = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (taken[c]) continue;
      double total = 0.0;
      for (std::size_t i = 0; i < table.size(); ++i) total += std::max(best[i], table[i][c]);
      if (total > pick_total) {
        pick = c;
        pick_total = total;
      }
    }
    taken[pick] = true;
    chosen.push_back(pick);
    for (std::size_t i = 0; i < table.size(); ++i) best[i] = std::max(best[i], table[i][pick]);
  }
  std::sort(chosen.begin(), chosen.end());

  PatternLibrary lib;
  lib.k = k;
  lib.pat_c = pat_c;
  for (std::size_t c : chosen) lib.masks.push_back(candidates[c]);
  return lib;
}

TileHarmonization harmonize_tiles(std::span<const int> assignments, std::size_t m, std::size_t n, int tn) {
  if (tn < 1) throw ValidationError("harmonize_tiles: tn must be positive");
  if (assignments.size() != m * n) throw ValidationError("harmonize_tiles: assignment count must be M*N");

  std::vector<int> channel_mask(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::map<int, int> counts;
    for (std::size_t i = 0; i < m; ++i) ++counts[assignments[i * n + j]];
    channel_mask[j] = majority(counts);
  }

  TileHarmonization out;
  out.tn = tn;
  out.permutation.resize(n);
  std::iota(out.permutation.begin(), out.permutation.end(), 0);
  std::stable_sort(out.permutation.begin(), out.permutation.end(),
                   [&](int a, int b) { return channel_mask[a] < channel_mask[b]; });

  const std::size_t tiles = (n + tn - 1) / tn;
  out.tile_masks.resize(m * tiles);
  out.kernel_masks.resize(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t t = 0; t < tiles; ++t) {
      const std::size_t lo = t * tn, hi = std::min(n, lo + tn);
      std::map<int, int> counts;
      for (std::size_t j = lo; j < hi; ++j) ++counts[assignments[i * n + out.permutation[j]]];
      const int mask = majority(counts);
      out.tile_masks[i * tiles + t] = mask;
      for (std::size_t j = lo; j < hi; ++j) {
        if (assignments[i * n + out.permutation[j]] != mask) ++out.forced;
        out.kernel_masks[i * n + j] = mask;
      }
    }
  return out;
}

FloatTensor apply_pattern(const FloatTensor& weights, const PatternLibrary& library, std::span<const int> kernel_masks) {
  check_filter(weights, library.k);
  const std::size_t kk = static_cast<std::size_t>(library.k) * library.k;
  const std::size_t kernels = weights.dim(0) * weights.dim(1);
  if (kernel_masks.size() != kernels) throw ValidationError("apply_pattern: one mask index per kernel required");
  FloatTensor out = weights;
  auto data = out.data();
  for (std::size_t i = 0; i < kernels; ++i) {
    const int id = kernel_masks[i];
    if (id < 0 || static_cast<std::size_t>(id) >= library.size())
      throw ValidationError("apply_pattern: mask index out of range");
    for (int z : library.masks[id].zeros) data[i * kk + z] = 0.0f;
  }
  return out;
}

double kept_energy_fraction(const FloatTensor& original, const FloatTensor& pruned) {
  if (original.shape() != pruned.shape()) throw ValidationError("kept_energy_fraction: shape mismatch");
  double all = 0.0, kept = 0.0;
  const auto a = original.data();
  const auto b = pruned.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    all += static_cast<double>(a[i]) * a[i];
    kept += static_cast<double>(b[i]) * b[i];
  }
  return all == 0.0 ? 1.0 : kept / all;
}

}  // namespace hotsearch
