#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "emusched/actuator.hpp"
#include "emusched/controller.hpp"
#include "emusched/errors.hpp"
#include "emusched/metrics.hpp"
#include "emusched/strategy.hpp"
#include "emusched/telemetry.hpp"

namespace emusched::sim {

struct UnaffinedThread : Error {
  using Error::Error;
};
struct ScenarioParseError : Error {
  using Error::Error;
};

struct SimCore {
  int id = 0;
  strategy::CoreType type = strategy::CoreType::kSmall;
  double capacity = 1.0;  // demand units served per second
};

// Piecewise-constant demand: the value at or after each start time applies
// until the next phase begins.
struct DemandStep {
  double start_s = 0.0;
  double demand = 0.0;  // CPU-seconds requested per second, in [0,1]
};

struct SimThread {
  int tid = 0;
  telemetry::ThreadClass cls = telemetry::ThreadClass::kEmulator;
  std::vector<DemandStep> schedule;  // sorted by start_s

  double demand_at(double t) const;
};

struct SimVm {
  std::string vm_id;
  int pid = 0;
  std::vector<SimThread> threads;
  std::set<int> vcpu_affinity;
  std::set<int> emu_affinity;  // initial placement; the baseline keeps it
};

enum class Placement { kEqualSpread, kGreedyLeastLoaded };

struct ModelParams {
  double alpha = 1.0;          // weight of the vCPU delay rate in the proxy
  double beta = 1.0;           // weight of the emulator delay rate
  double base_ns = 1e6;        // proxy floor (1 ms)
  Placement placement = Placement::kEqualSpread;
  double jitter = 0.0;         // per-tick multiplicative demand noise
  double duration_s = 120.0;
  std::uint64_t seed = 0;
};

struct Scenario {
  int version = 1;
  std::vector<SimCore> cores;
  std::vector<SimVm> vms;
  ModelParams model;

  strategy::CoreTopology topology() const;
  void validate() const;
};

Scenario parse_scenario_text(const std::string& text, const std::string& origin);
Scenario parse_scenario_file(const std::filesystem::path& path);
std::string render_scenario(const Scenario& scenario);

// Deterministic fluid model of co-scheduled threads. Each tick, every
// thread spreads its demand over its allowed cores; over-subscribed cores
// serve proportional shares and the shortfall accrues as run delay.
class SimHost {
 public:
  explicit SimHost(Scenario scenario);

  // Advances one tick and returns the snapshot after it.
  telemetry::TelemetrySnapshot step(double dt_s = 1.0);

  // Snapshot of the current counters without advancing time. Utilization
  // reflects the last completed tick (empty before the first).
  telemetry::TelemetrySnapshot snapshot() const;

  void set_affinity(const std::vector<int>& tids, const std::set<int>& cores);
  const std::set<int>& affinity_of(int tid) const;

  double now_s() const { return now_s_; }
  const Scenario& scenario() const { return scenario_; }
  std::vector<int> emulator_tids(const std::string& vm_id) const;

  // Materializes the current counters as a proc-style tree
  // (<dir>/<pid>/task/<tid>/{schedstat,comm}, <dir>/<pid>/cmdline,
  // <dir>/stat) so the real collector can run against the simulator.
  void render_procfs(const std::filesystem::path& dir) const;

 private:
  Scenario scenario_;
  std::map<int, std::set<int>> affinity_;
  std::map<int, telemetry::RawSchedstat> counters_;
  std::map<int, double> last_util_;
  std::map<int, std::uint64_t> idle_jiffies_;
  std::map<int, std::uint64_t> busy_jiffies_;
  double now_s_ = 0.0;
  std::uint64_t ticks_ = 0;
  std::mt19937_64 rng_;
};

// Actuates controller decisions straight into the simulator's affinity
// table.
class SimBackend final : public actuate::ActuatorBackend {
 public:
  explicit SimBackend(SimHost& host) : host_(host) {}

  actuate::ApplyReport apply(const actuate::BindingRequest& request) override;
  std::set<int> verify(const std::string& vm_id) override;

 private:
  SimHost& host_;
  std::map<std::string, std::set<int>> effective_;
};

struct TickRecord {
  std::uint64_t timestamp_ns = 0;
  control::StateKind state = control::StateKind::kInitial;
  std::map<std::string, metrics::VmMetrics> vm_metrics;
  std::map<std::string, double> latency_proxy_ns;
  std::vector<control::Action> actions;
  std::map<int, double> per_core_util;
  double system_cpu_util = 0.0;
  double disparity = 0.0;
};

struct RunTrace {
  std::vector<TickRecord> ticks;
  std::vector<telemetry::TelemetrySnapshot> snapshots;  // one per tick
  std::map<std::string, std::vector<telemetry::ThreadInfo>> vm_threads;
  std::optional<int> converged_tick;  // first tick spent in STABLE
};

// Runs the closed loop (or an uncontrolled baseline when controller is
// null) for the scenario's duration at 1-second ticks.
RunTrace run(const Scenario& scenario, control::Controller* controller);

// Steady-state emulator delay rate of `vm_id` with its emulators bound to
// the k least-loaded small cores, for each k. Constant-phase scenarios
// reach steady state after one tick; a settle margin is kept anyway.
std::map<int, double> emulator_delay_curve(const Scenario& scenario,
                                           const std::string& vm_id,
                                           const std::vector<int>& k_values,
                                           int settle_ticks = 10);

// Two co-located VMs on 4 small + 4 big cores: "hiratio" carries heavy
// emulator demand, "loratio" light; vCPUs ride the big cores so the
// co-located baseline saturates them while the small cores contend only
// among emulators. Parameters are derived deterministically from the seed.
Scenario make_colocated_scenario(std::uint64_t seed);

// Single-VM scenario with a workload ramp: vCPU demand saturates while
// emulator demand keeps growing, so the measured emulator ratio climbs.
Scenario make_ramp_scenario();

// Heavy emulator contention on the small cores at every k; used for the
// delay-curve shape checks.
Scenario make_curve_scenario();

}  // namespace emusched::sim
