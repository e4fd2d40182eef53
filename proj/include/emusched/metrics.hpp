#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emusched/errors.hpp"
#include "emusched/ring_buffer.hpp"
#include "emusched/telemetry.hpp"

namespace emusched::metrics {

struct NegativeDelta : Error {
  using Error::Error;
};
struct ZeroWindow : Error {
  using Error::Error;
};
struct OutOfRange : Error {
  using Error::Error;
};
struct EmptyWindow : Error {
  using Error::Error;
};

// Emulator share of a VM's CPU time over one sampling window:
// emu / (emu + vcpu). An idle VM (both deltas zero) reports 0.
double emulator_ratio(double emu_cputime_delta_ns, double vcpu_cputime_delta_ns);

// Run-queue wait accrued per second of wall time (ns/s).
double run_delay_rate(double delay_delta_ns, double wall_delta_ns);

// Max minus min per-core utilization; 0 for fewer than two cores.
double utilization_disparity(const std::map<int, double>& per_core_util);

enum class Stability { kNormal, kAnomalous };

struct StabilityVerdict {
  Stability flag = Stability::kNormal;
  double magnitude = 0.0;  // relative change against the window mean
};

// Flags the current value when it deviates from the window mean by more than
// `threshold`, relatively. `abs_floor` guards the division when the mean is
// near zero.
StabilityVerdict stability_check(const RingBuffer<double>& window, double current,
                                 double threshold, double abs_floor);

// Default thresholds and floors for the monitored metric families.
inline constexpr double kDelayRateThreshold = 0.3;
inline constexpr double kUtilThreshold = 0.15;
inline constexpr double kDelayRateFloor = 1000.0;  // ns/s
inline constexpr double kUtilFloor = 0.01;

struct VmMetrics {
  double emulator_ratio = 0.0;
  double emu_run_delay_rate = 0.0;   // ns/s
  double vcpu_run_delay_rate = 0.0;  // ns/s
  double emu_cpu_util = 0.0;         // CPU-seconds per wall second
  double vcpu_cpu_util = 0.0;
};

struct SystemMetrics {
  std::uint64_t timestamp_ns = 0;
  std::map<std::string, VmMetrics> per_vm;
  std::map<int, double> per_core_util;
  double system_cpu_util = 0.0;  // mean over reported cores
  double disparity = 0.0;
};

struct EngineWarnings {
  std::vector<int> counter_resets;  // tids whose cumulative counters decreased
  std::vector<int> threads_gone;    // tids present before, absent now
};

// Turns successive snapshots into per-VM metrics. Owns the per-thread delta
// baselines; a decreasing cumulative counter resets that thread's baseline
// and skips one delta.
class MetricsEngine {
 public:
  // Returns nothing until two snapshots have been seen.
  std::optional<SystemMetrics> update(
      const std::vector<const telemetry::VmRecord*>& vms,
      const telemetry::TelemetrySnapshot& snap, EngineWarnings* warnings = nullptr);

  void reset();

 private:
  std::optional<std::uint64_t> prev_ts_;
  std::map<int, telemetry::RawSchedstat> prev_;
};

}  // namespace emusched::metrics
