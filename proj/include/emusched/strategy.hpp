#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "emusched/errors.hpp"

namespace emusched::strategy {

struct UnknownCore : Error {
  using Error::Error;
};
struct CountOverflow : Error {
  using Error::Error;
};
struct SpaceTooLarge : Error {
  using Error::Error;
};

enum class CoreType { kSmall, kBig };

struct CoreTopology {
  std::vector<int> small_cores;
  std::vector<int> big_cores;

  int small_count() const { return static_cast<int>(small_cores.size()); }
  int big_count() const { return static_cast<int>(big_cores.size()); }
  std::vector<int> all_cores() const;
  std::optional<CoreType> type_of(int core) const;
};

// One emulator-binding assignment: per VM, the core subset its emulator
// threads may run on. Index = VM.
struct Strategy {
  std::vector<std::set<int>> per_vm;
};

// Canonical form of a Strategy under core relabeling within each type.
// Each core carries the bitmask of VMs whose subset contains it (bit i =
// VM i); the signature counts cores per (type, mask), including mask 0 for
// unassigned cores, so counts per type sum to n and m.
struct CanonicalSignature {
  std::map<std::uint32_t, int> small;
  std::map<std::uint32_t, int> big;

  auto operator<=>(const CanonicalSignature&) const = default;

  // "S:{1}=2;S:{1,2}=2;B:{}=4": entries with non-zero counts, small cores
  // first, masks ascending, VM indices 1-based. Empty signature renders "-".
  std::string to_string() const;
};

// Two strategies canonicalize identically iff one is the other with small
// core ids permuted among themselves and big core ids permuted among
// themselves. VM indices are never permuted (VMs are distinguishable).
CanonicalSignature canonicalize(const Strategy& s, const CoreTopology& topo);

// Number of fundamentally distinct strategies for n small cores, m big
// cores, x VMs: C(2^x+n-1, n) * C(2^x+m-1, m).
std::uint64_t strategy_count_formula(int n, int m, int x);

inline constexpr std::uint64_t kDefaultLabelingCap = 1ull << 26;

// All distinct signatures whose per-VM subset sizes are in `allowed_sizes`
// (any size when absent). Iterates per-type count tables directly, so the
// cost is the signature count, but the guard follows the raw labeling
// space: throws SpaceTooLarge when (2^x)^(n+m) exceeds `labeling_cap`.
std::set<CanonicalSignature> enumerate_strategies(
    int n, int m, int x, const std::optional<std::set<int>>& allowed_sizes = {},
    std::uint64_t labeling_cap = kDefaultLabelingCap);

// Brute-force cross-check: enumerates every raw labeling (each core gets a
// VM subset) and canonicalizes it. Same guard and filter semantics.
std::set<CanonicalSignature> enumerate_strategies_exhaustive(
    int n, int m, int x, const std::optional<std::set<int>>& allowed_sizes = {},
    std::uint64_t labeling_cap = kDefaultLabelingCap);

// The co-location default: every VM's emulator subset is every core the
// vCPU threads use, i.e. all n+m cores.
Strategy baseline_strategy(const CoreTopology& topo, int vm_count);

}  // namespace emusched::strategy
