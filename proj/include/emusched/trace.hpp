#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "emusched/controller.hpp"
#include "emusched/errors.hpp"
#include "emusched/telemetry.hpp"

namespace emusched::trace {

struct SchemaMismatch : Error {
  using Error::Error;
};

// Audit log of controller decisions:
// timestamp,state,vm_id,action,cpulist
// One row per BIND; state transitions without a BIND log a NO_OP row.
class DecisionLog {
 public:
  explicit DecisionLog(std::ostream& out);

  void bind(std::uint64_t timestamp_ns, control::StateKind state,
            const std::string& vm_id, const std::set<int>& cores);
  void no_op(std::uint64_t timestamp_ns, control::StateKind state);

 private:
  std::ostream& out_;
};

// Replayable snapshot stream. Row kinds:
//   thread: timestamp_ns,thread,vm_id,tid,class,cpu_time_ns,run_delay_ns,timeslices,,
//   core:   timestamp_ns,core,,,,,,,core_id,util
struct SnapshotTraceWriter {
  explicit SnapshotTraceWriter(std::ostream& out);

  void write(const telemetry::TelemetrySnapshot& snap,
             const std::map<std::string, std::vector<telemetry::ThreadInfo>>&
                 vm_threads);

 private:
  std::ostream& out_;
};

struct ReplayData {
  std::vector<telemetry::TelemetrySnapshot> snapshots;
  std::map<std::string, std::vector<telemetry::ThreadInfo>> vm_threads;
};

ReplayData read_snapshot_trace(const std::filesystem::path& path);

}  // namespace emusched::trace
