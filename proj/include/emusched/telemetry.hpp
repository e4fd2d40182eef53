#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "emusched/errors.hpp"
#include "emusched/ring_buffer.hpp"

namespace emusched::telemetry {

struct MalformedSchedstat : Error {
  using Error::Error;
};
struct InvalidPattern : Error {
  using Error::Error;
};
struct SourceUnavailable : Error {
  using Error::Error;
};

// Cumulative scheduler counters of one thread, as exposed by
// /proc/<pid>/task/<tid>/schedstat: on-CPU time, run-queue wait time,
// and the number of timeslices run.
struct RawSchedstat {
  std::uint64_t cpu_time_ns = 0;
  std::uint64_t run_delay_ns = 0;
  std::uint64_t timeslices = 0;

  bool operator==(const RawSchedstat&) const = default;
};

// Parses one schedstat line ("<cpu_time> <run_delay> <timeslices>").
RawSchedstat parse_schedstat(std::string_view line);

// Canonical single-space rendering; parse(format(s)) == s.
std::string format_schedstat(const RawSchedstat& s);

enum class ThreadClass { kVcpu, kEmulator };

const char* thread_class_name(ThreadClass cls);
std::optional<ThreadClass> thread_class_from_name(std::string_view name);

// QEMU names vCPU threads "CPU <n>/KVM"; everything else in the process is
// an emulator thread.
inline constexpr const char* kDefaultVcpuPattern = "CPU [0-9]+/KVM";

class ThreadClassifier {
 public:
  // Throws InvalidPattern if the expression does not compile.
  explicit ThreadClassifier(const std::string& vcpu_pattern = kDefaultVcpuPattern);

  // Full-match against the vCPU pattern decides the class.
  ThreadClass classify(const std::string& name) const;

 private:
  std::regex vcpu_re_;
};

struct ThreadInfo {
  int tid = 0;
  std::string name;
  ThreadClass cls = ThreadClass::kEmulator;
};

struct ClassSample {
  std::uint64_t timestamp_ns = 0;
  RawSchedstat stat;  // summed over the live threads of one class
};

struct VmRecord {
  std::string vm_id;
  int pid = 0;
  std::vector<ThreadInfo> threads;
  RingBuffer<ClassSample> vcpu_history;
  RingBuffer<ClassSample> emulator_history;

  VmRecord(std::string id, int pid_, std::size_t ring_capacity)
      : vm_id(std::move(id)),
        pid(pid_),
        vcpu_history(ring_capacity),
        emulator_history(ring_capacity) {}

  std::vector<int> tids(ThreadClass cls) const;
};

// One atomic collection pass: every reading comes from the same sweep.
struct TelemetrySnapshot {
  std::uint64_t timestamp_ns = 0;
  std::map<int, RawSchedstat> per_thread;  // tid -> counters
  std::map<int, double> per_core_util;     // core id -> [0,1]
};

// Sums the snapshot's readings per thread class and appends one sample to
// each of the VM's ring buffers. Threads missing from the snapshot are
// skipped (they vanished during the pass).
void append_history(VmRecord& vm, const TelemetrySnapshot& snap);

struct DiscoveryConfig {
  std::string marker = "qemu";          // substring matched against cmdline
  std::map<int, std::string> allow;     // pid -> vm name ("" = use the pid)
  std::string vcpu_pattern = kDefaultVcpuPattern;
  std::size_t ring_capacity = 120;
};

struct CollectWarnings {
  std::vector<int> threads_gone;  // tids that vanished during the pass
};

// Reads VM processes and scheduling counters from a proc-style directory
// tree. The root defaults to /proc and can point at a fixture directory.
class Collector {
 public:
  Collector(std::filesystem::path procroot, DiscoveryConfig cfg,
            std::function<std::uint64_t()> clock = {});

  // Scans for VM processes and (re)builds thread sets. Existing VmRecords
  // keep their ring-buffer history; vanished VMs are dropped.
  // Returns the ids of the VMs currently present.
  std::vector<std::string> discover();

  // One collection pass over all known VM threads plus the per-core
  // utilization derived from successive /proc/stat readings. Appends
  // per-class aggregates to each VM's history.
  TelemetrySnapshot snapshot(CollectWarnings* warnings = nullptr);

  const std::map<std::string, VmRecord>& vms() const { return vms_; }
  VmRecord* find_vm(const std::string& vm_id);

  const std::filesystem::path& procroot() const { return procroot_; }

 private:
  struct CoreJiffies {
    std::uint64_t idle = 0;   // idle + iowait
    std::uint64_t total = 0;  // all columns through steal
  };

  std::map<int, CoreJiffies> read_core_jiffies() const;

  std::filesystem::path procroot_;
  DiscoveryConfig cfg_;
  ThreadClassifier classifier_;
  std::function<std::uint64_t()> clock_;
  std::map<std::string, VmRecord> vms_;
  std::map<int, CoreJiffies> prev_jiffies_;
  bool have_jiffies_ = false;
};

}  // namespace emusched::telemetry
