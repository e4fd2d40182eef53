#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "emusched/errors.hpp"
#include "emusched/metrics.hpp"
#include "emusched/ring_buffer.hpp"
#include "emusched/strategy.hpp"

namespace emusched::control {

struct DegenerateDenominator : Error {
  using Error::Error;
};
struct EmptySet : Error {
  using Error::Error;
};
struct KOutOfRange : Error {
  using Error::Error;
};
struct InvalidConfig : Error {
  using Error::Error;
};

struct ControllerConfig {
  // Significance slope threshold (ns/s per core). When unset, each VM's
  // search derives it from the measured all-cores delay:
  // l1 = l1_auto_fraction * v2 / (n - 1), clamped above 1.
  std::optional<double> l1;
  double l1_auto_fraction = 0.15;

  int measure_window = 3;  // ticks held per probe
  int oscillation_limit = 3;
  int tick_period_s = 1;

  double delay_threshold = metrics::kDelayRateThreshold;
  double util_threshold = metrics::kUtilThreshold;
  double delay_floor = metrics::kDelayRateFloor;
  double util_floor = metrics::kUtilFloor;
  std::size_t stability_window = 30;  // baseline samples kept per metric

  void validate() const;
};

// The significance criterion: the delay increase from v2 (all n small
// cores) to v1 (n1 cores), per core removed, exceeds l1.
bool significant_increase(double v1, double v2, int n, int n1, double l1);

// Incremental binary search for the knee of a decreasing delay curve:
// the smallest k in [1, n] where the increase over v2 stops being
// significant. k = n is by definition not significant (v1 == v2 there).
// Probe order: first k = n (establishes v2), then midpoints.
class BinarySearchPlanner {
 public:
  BinarySearchPlanner(int total_small_cores, std::optional<double> explicit_l1,
                      double l1_auto_fraction);

  // Next core count to bind and measure; nullopt once the search is done.
  std::optional<int> next_probe() const;

  // Reports the measured emulator delay rate for the pending probe.
  void feed(double delay_rate);

  bool done() const { return done_; }
  int result() const;
  int probes_used() const { return probes_; }
  bool non_monotone_observed() const { return non_monotone_; }
  double v2() const { return v2_; }
  double effective_l1() const { return l1_; }

 private:
  void finish(int k);

  int n_;
  int lo_ = 1;
  int hi_;
  bool have_v2_ = false;
  double v2_ = 0.0;
  std::optional<double> explicit_l1_;
  double l1_auto_fraction_;
  double l1_ = 0.0;
  std::optional<int> pending_;
  int probes_ = 0;
  bool done_ = false;
  int result_ = 0;
  bool non_monotone_ = false;
  std::map<int, double> observed_;
};

struct SearchOutcome {
  int k_star = 0;
  int probes = 0;  // including the v2 measurement
  bool non_monotone = false;
};

// Drives a planner against a probe oracle (bind k cores, wait, measure).
SearchOutcome plan_binary_search(const std::function<double(int)>& delay_at, int n,
                                 std::optional<double> l1,
                                 double l1_auto_fraction = 0.15);

// Downscaling order: the VM with the highest emulator CPU utilization
// goes first; ties break toward the smallest vm id.
std::string select_next_vm(const std::map<std::string, double>& emu_util_by_vm);

// The k small cores with the lowest current utilization; ties break toward
// the smallest core id. Cores missing from `util` count as idle.
std::set<int> choose_cores(int k, const std::vector<int>& small_cores,
                           const std::map<int, double>& util);

// The only actuation the controller performs: constrain one VM's emulator
// threads to a core set (always within the small cores).
struct Action {
  std::string vm_id;
  std::set<int> cores;

  bool operator==(const Action&) const = default;
};

struct ControllerInput {
  std::uint64_t timestamp_ns = 0;
  std::vector<std::string> vms;
  std::map<std::string, metrics::VmMetrics> vm_metrics;
  std::map<int, double> per_core_util;
  double system_cpu_util = 0.0;
  double disparity = 0.0;
  bool metrics_valid = false;  // false until two snapshots exist
};

enum class StateKind { kInitial, kDownscaling, kStable, kOscillation };

const char* state_name(StateKind s);

// The scheduling FSM. One tick consumes one snapshot's metrics and emits
// the bindings to apply before the next tick.
class Controller {
 public:
  using Logger = std::function<void(const std::string&)>;

  Controller(ControllerConfig cfg, strategy::CoreTopology topo,
             Logger logger = {});

  std::vector<Action> tick(const ControllerInput& input);

  StateKind state() const { return state_; }
  // Final core count per VM from the last completed search.
  const std::map<std::string, int>& converged_cores() const { return k_star_; }

 private:
  struct ActiveSearch {
    std::string vm_id;
    BinarySearchPlanner planner;
    int bound_k = 0;
    int ticks_left = 0;
    std::vector<double> samples;
  };

  std::vector<Action> tick_initial(const ControllerInput& input);
  std::vector<Action> tick_downscaling(const ControllerInput& input);
  std::vector<Action> tick_stable(const ControllerInput& input);
  std::vector<Action> tick_oscillation(const ControllerInput& input);
  // Rebinds and restarts downscaling for VMs whose anomaly streak hit the
  // oscillation limit.
  std::vector<Action> tick_oscillation_trigger(const ControllerInput& input);

  // Evaluates the monitored metrics against their baseline windows.
  // Returns the anomalous metric keys.
  std::vector<std::string> check_metrics(const ControllerInput& input) const;
  void absorb_metrics(const ControllerInput& input);
  void enter_stable();
  std::set<int> all_small() const;
  Action start_probe(ActiveSearch& search, int k, const ControllerInput& input);
  void log(const std::string& msg) const;

  ControllerConfig cfg_;
  strategy::CoreTopology topo_;
  Logger logger_;

  StateKind state_ = StateKind::kInitial;
  std::set<std::string> pending_;  // VMs awaiting a downscaling search
  std::optional<ActiveSearch> active_;
  std::map<std::string, int> k_star_;
  std::map<std::string, RingBuffer<double>> windows_;
  std::map<std::string, int> anomaly_counts_;
};

}  // namespace emusched::control
