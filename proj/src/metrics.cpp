#include "emusched/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace emusched::metrics {

double emulator_ratio(double emu_cputime_delta_ns, double vcpu_cputime_delta_ns) {
  if (emu_cputime_delta_ns < 0 || vcpu_cputime_delta_ns < 0) {
    throw NegativeDelta("emulator_ratio requires non-negative cputime deltas");
  }
  double total = emu_cputime_delta_ns + vcpu_cputime_delta_ns;
  if (total == 0) return 0.0;
  return emu_cputime_delta_ns / total;
}

double run_delay_rate(double delay_delta_ns, double wall_delta_ns) {
  if (wall_delta_ns <= 0) {
    throw ZeroWindow("run_delay_rate requires a positive wall-time window");
  }
  if (delay_delta_ns < 0) {
    throw NegativeDelta("run_delay_rate requires a non-negative delay delta");
  }
  return delay_delta_ns * (1e9 / wall_delta_ns);
}

double utilization_disparity(const std::map<int, double>& per_core_util) {
  if (per_core_util.size() < 2) return 0.0;
  double lo = 1.0;
  double hi = 0.0;
  for (const auto& [core, util] : per_core_util) {
    if (util < 0.0 || util > 1.0) {
      throw OutOfRange("core " + std::to_string(core) +
                       " utilization outside [0,1]: " + std::to_string(util));
    }
    lo = std::min(lo, util);
    hi = std::max(hi, util);
  }
  return hi - lo;
}

StabilityVerdict stability_check(const RingBuffer<double>& window, double current,
                                 double threshold, double abs_floor) {
  if (window.empty()) {
    throw EmptyWindow("stability_check needs a non-empty window");
  }
  double sum = 0.0;
  for (double v : window) sum += v;
  double mean = sum / static_cast<double>(window.size());
  double denom = std::max(std::abs(mean), abs_floor);
  double magnitude = std::abs(current - mean) / denom;
  StabilityVerdict verdict;
  verdict.magnitude = magnitude;
  verdict.flag = magnitude > threshold ? Stability::kAnomalous : Stability::kNormal;
  return verdict;
}

void MetricsEngine::reset() {
  prev_ts_.reset();
  prev_.clear();
}

std::optional<SystemMetrics> MetricsEngine::update(
    const std::vector<const telemetry::VmRecord*>& vms,
    const telemetry::TelemetrySnapshot& snap, EngineWarnings* warnings) {
  using telemetry::RawSchedstat;
  using telemetry::ThreadClass;

  bool primed = prev_ts_.has_value();
  std::optional<SystemMetrics> out;

  if (primed) {
    SystemMetrics sys;
    sys.timestamp_ns = snap.timestamp_ns;
    sys.per_core_util = snap.per_core_util;
    double wall = static_cast<double>(snap.timestamp_ns - *prev_ts_);
    if (wall <= 0) {
      throw ZeroWindow("snapshot timestamps must be strictly increasing");
    }

    for (const auto* vm : vms) {
      double emu_cpu = 0.0, vcpu_cpu = 0.0;
      double emu_delay = 0.0, vcpu_delay = 0.0;
      for (const auto& t : vm->threads) {
        auto cur = snap.per_thread.find(t.tid);
        if (cur == snap.per_thread.end()) continue;
        auto prev = prev_.find(t.tid);
        if (prev == prev_.end()) continue;  // new thread: no baseline yet
        const RawSchedstat& c = cur->second;
        const RawSchedstat& p = prev->second;
        if (c.cpu_time_ns < p.cpu_time_ns || c.run_delay_ns < p.run_delay_ns) {
          // Counter reset (thread id reuse); skip this delta, re-baseline.
          if (warnings) warnings->counter_resets.push_back(t.tid);
          continue;
        }
        double cpu_d = static_cast<double>(c.cpu_time_ns - p.cpu_time_ns);
        double delay_d = static_cast<double>(c.run_delay_ns - p.run_delay_ns);
        if (t.cls == ThreadClass::kVcpu) {
          vcpu_cpu += cpu_d;
          vcpu_delay += delay_d;
        } else {
          emu_cpu += cpu_d;
          emu_delay += delay_d;
        }
      }
      VmMetrics m;
      m.emulator_ratio = emulator_ratio(emu_cpu, vcpu_cpu);
      m.emu_run_delay_rate = run_delay_rate(emu_delay, wall);
      m.vcpu_run_delay_rate = run_delay_rate(vcpu_delay, wall);
      m.emu_cpu_util = emu_cpu / wall;
      m.vcpu_cpu_util = vcpu_cpu / wall;
      sys.per_vm[vm->vm_id] = m;
    }

    if (!snap.per_core_util.empty()) {
      double sum = 0.0;
      for (const auto& [core, util] : snap.per_core_util) sum += util;
      sys.system_cpu_util = sum / static_cast<double>(snap.per_core_util.size());
      sys.disparity = utilization_disparity(snap.per_core_util);
    }
    out = std::move(sys);
  }

  if (warnings && primed) {
    for (const auto& [tid, stat] : prev_) {
      if (!snap.per_thread.count(tid)) warnings->threads_gone.push_back(tid);
    }
  }
  prev_ts_ = snap.timestamp_ns;
  prev_ = snap.per_thread;
  return out;
}

}  // namespace emusched::metrics
