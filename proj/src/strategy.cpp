#include "emusched/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

namespace emusched::strategy {

std::vector<int> CoreTopology::all_cores() const {
  std::vector<int> out = small_cores;
  out.insert(out.end(), big_cores.begin(), big_cores.end());
  return out;
}

std::optional<CoreType> CoreTopology::type_of(int core) const {
  if (std::find(small_cores.begin(), small_cores.end(), core) != small_cores.end()) {
    return CoreType::kSmall;
  }
  if (std::find(big_cores.begin(), big_cores.end(), core) != big_cores.end()) {
    return CoreType::kBig;
  }
  return std::nullopt;
}

namespace {

void render_entries(std::ostringstream& out, char tag,
                    const std::map<std::uint32_t, int>& entries, bool& first) {
  for (const auto& [mask, count] : entries) {
    if (count == 0) continue;
    if (!first) out << ';';
    first = false;
    out << tag << ":{";
    bool inner_first = true;
    for (int i = 0; i < 32; ++i) {
      if (mask & (1u << i)) {
        if (!inner_first) out << ',';
        inner_first = false;
        out << (i + 1);
      }
    }
    out << "}=" << count;
  }
}

}  // namespace

std::string CanonicalSignature::to_string() const {
  std::ostringstream out;
  bool first = true;
  render_entries(out, 'S', small, first);
  render_entries(out, 'B', big, first);
  std::string s = out.str();
  return s.empty() ? "-" : s;
}

CanonicalSignature canonicalize(const Strategy& s, const CoreTopology& topo) {
  // Per core, the set of VMs binding it; counting those per type erases the
  // identity of individual cores within a type.
  std::map<int, std::uint32_t> mask_by_core;
  for (int core : topo.small_cores) mask_by_core[core] = 0;
  for (int core : topo.big_cores) mask_by_core[core] = 0;

  for (std::size_t vm = 0; vm < s.per_vm.size(); ++vm) {
    for (int core : s.per_vm[vm]) {
      auto it = mask_by_core.find(core);
      if (it == mask_by_core.end()) {
        throw UnknownCore("strategy references core " + std::to_string(core) +
                          " absent from the topology");
      }
      it->second |= (1u << vm);
    }
  }

  CanonicalSignature sig;
  for (int core : topo.small_cores) sig.small[mask_by_core[core]] += 1;
  for (int core : topo.big_cores) sig.big[mask_by_core[core]] += 1;
  return sig;
}

namespace {

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_mul_overflow(a, b, &r)) {
    throw CountOverflow("strategy count exceeds 64 bits");
  }
  return r;
}

// C(n, k) with overflow detection.
std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 acc = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    acc = acc * (n - k + i) / i;  // exact: product of i consecutive ints / i!
    if (acc > UINT64_MAX) throw CountOverflow("binomial exceeds 64 bits");
  }
  return static_cast<std::uint64_t>(acc);
}

// Multiset coefficient: ways to distribute `count` identical cores over
// 2^x subset labels = C(2^x + count - 1, count).
std::uint64_t multiset_coefficient(int x, int count) {
  std::uint64_t labels = 1ull << x;
  return binomial(labels + static_cast<std::uint64_t>(count) - 1,
                  static_cast<std::uint64_t>(count));
}

void check_labeling_cap(int n, int m, int x, std::uint64_t cap) {
  long double space = std::pow(static_cast<long double>(1ull << x),
                               static_cast<long double>(n + m));
  if (space > static_cast<long double>(cap)) {
    throw SpaceTooLarge("strategy space has more than " + std::to_string(cap) +
                        " raw labelings");
  }
}

// Enumerates every count table over 2^x masks summing to `total`.
void for_each_count_table(int num_masks, int total,
                          std::map<std::uint32_t, int>& current, int next_mask,
                          int remaining,
                          const std::function<void(const std::map<std::uint32_t, int>&)>& fn) {
  if (next_mask == num_masks - 1) {
    if (remaining > 0) current[static_cast<std::uint32_t>(next_mask)] = remaining;
    fn(current);
    current.erase(static_cast<std::uint32_t>(next_mask));
    return;
  }
  for (int take = 0; take <= remaining; ++take) {
    if (take > 0) current[static_cast<std::uint32_t>(next_mask)] = take;
    for_each_count_table(num_masks, total, current, next_mask + 1,
                         remaining - take, fn);
    current.erase(static_cast<std::uint32_t>(next_mask));
  }
}

std::vector<int> subset_sizes_of(const CanonicalSignature& sig, int x) {
  std::vector<int> sizes(x, 0);
  auto add = [&](const std::map<std::uint32_t, int>& entries) {
    for (const auto& [mask, count] : entries) {
      for (int i = 0; i < x; ++i) {
        if (mask & (1u << i)) sizes[i] += count;
      }
    }
  };
  add(sig.small);
  add(sig.big);
  return sizes;
}

bool sizes_allowed(const std::vector<int>& sizes,
                   const std::optional<std::set<int>>& allowed) {
  if (!allowed) return true;
  for (int s : sizes) {
    if (!allowed->count(s)) return false;
  }
  return true;
}

}  // namespace

std::uint64_t strategy_count_formula(int n, int m, int x) {
  if (n < 0 || m < 0 || x < 1) {
    throw Error("strategy_count_formula requires n,m >= 0 and x >= 1");
  }
  if (x >= 31) throw CountOverflow("2^x exceeds the supported mask width");
  return checked_mul(multiset_coefficient(x, n), multiset_coefficient(x, m));
}

std::set<CanonicalSignature> enumerate_strategies(
    int n, int m, int x, const std::optional<std::set<int>>& allowed_sizes,
    std::uint64_t labeling_cap) {
  if (n < 0 || m < 0 || x < 1 || x >= 31) {
    throw Error("enumerate_strategies requires n,m >= 0 and 1 <= x <= 30");
  }
  check_labeling_cap(n, m, x, labeling_cap);

  int num_masks = 1 << x;
  std::set<CanonicalSignature> out;

  std::map<std::uint32_t, int> small_table;
  std::map<std::uint32_t, int> big_table;
  for_each_count_table(num_masks, n, small_table, 0, n, [&](const auto& small) {
    for_each_count_table(num_masks, m, big_table, 0, m, [&](const auto& big) {
      CanonicalSignature sig;
      sig.small = small;
      sig.big = big;
      if (sizes_allowed(subset_sizes_of(sig, x), allowed_sizes)) {
        out.insert(std::move(sig));
      }
    });
  });
  return out;
}

std::set<CanonicalSignature> enumerate_strategies_exhaustive(
    int n, int m, int x, const std::optional<std::set<int>>& allowed_sizes,
    std::uint64_t labeling_cap) {
  if (n < 0 || m < 0 || x < 1 || x >= 31) {
    throw Error("enumerate_strategies_exhaustive requires n,m >= 0 and 1 <= x <= 30");
  }
  check_labeling_cap(n, m, x, labeling_cap);

  CoreTopology topo;
  for (int i = 0; i < n; ++i) topo.small_cores.push_back(i);
  for (int i = 0; i < m; ++i) topo.big_cores.push_back(n + i);

  int cores = n + m;
  std::uint64_t num_masks = 1ull << x;
  std::set<CanonicalSignature> out;
  std::vector<std::uint32_t> labeling(cores, 0);

  std::function<void(int)> recurse = [&](int core_idx) {
    if (core_idx == cores) {
      Strategy s;
      s.per_vm.assign(x, {});
      for (int c = 0; c < cores; ++c) {
        for (int vm = 0; vm < x; ++vm) {
          if (labeling[c] & (1u << vm)) s.per_vm[vm].insert(c);
        }
      }
      bool ok = true;
      if (allowed_sizes) {
        for (const auto& subset : s.per_vm) {
          if (!allowed_sizes->count(static_cast<int>(subset.size()))) {
            ok = false;
            break;
          }
        }
      }
      if (ok) out.insert(canonicalize(s, topo));
      return;
    }
    for (std::uint64_t mask = 0; mask < num_masks; ++mask) {
      labeling[core_idx] = static_cast<std::uint32_t>(mask);
      recurse(core_idx + 1);
    }
  };
  if (cores == 0) {
    Strategy s;
    s.per_vm.assign(x, {});
    bool ok = !allowed_sizes || allowed_sizes->count(0);
    if (ok) out.insert(canonicalize(s, topo));
  } else {
    recurse(0);
  }
  return out;
}

Strategy baseline_strategy(const CoreTopology& topo, int vm_count) {
  Strategy s;
  auto all = topo.all_cores();
  std::set<int> everything(all.begin(), all.end());
  s.per_vm.assign(std::max(vm_count, 0), everything);
  return s;
}

}  // namespace emusched::strategy
