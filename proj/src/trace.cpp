#include "emusched/trace.hpp"

#include <fstream>
#include <sstream>

#include "emusched/actuator.hpp"

namespace emusched::trace {

DecisionLog::DecisionLog(std::ostream& out) : out_(out) {
  out_ << "timestamp,state,vm_id,action,cpulist\n";
}

void DecisionLog::bind(std::uint64_t timestamp_ns, control::StateKind state,
                       const std::string& vm_id, const std::set<int>& cores) {
  out_ << timestamp_ns << ',' << control::state_name(state) << ',' << vm_id
       << ",BIND," << actuate::format_cpulist(cores) << '\n';
}

void DecisionLog::no_op(std::uint64_t timestamp_ns, control::StateKind state) {
  out_ << timestamp_ns << ',' << control::state_name(state) << ",,NO_OP,\n";
}

namespace {
constexpr const char* kSnapshotHeader =
    "timestamp_ns,row,vm_id,tid,class,cpu_time_ns,run_delay_ns,timeslices,core,util";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

SnapshotTraceWriter::SnapshotTraceWriter(std::ostream& out) : out_(out) {
  out_ << kSnapshotHeader << '\n';
}

void SnapshotTraceWriter::write(
    const telemetry::TelemetrySnapshot& snap,
    const std::map<std::string, std::vector<telemetry::ThreadInfo>>& vm_threads) {
  for (const auto& [vm_id, threads] : vm_threads) {
    for (const auto& t : threads) {
      auto it = snap.per_thread.find(t.tid);
      if (it == snap.per_thread.end()) continue;
      out_ << snap.timestamp_ns << ",thread," << vm_id << ',' << t.tid << ','
           << telemetry::thread_class_name(t.cls) << ','
           << it->second.cpu_time_ns << ',' << it->second.run_delay_ns << ','
           << it->second.timeslices << ",,\n";
    }
  }
  out_.precision(17);
  for (const auto& [core, util] : snap.per_core_util) {
    out_ << snap.timestamp_ns << ",core,,,,,,," << core << ',' << util << '\n';
  }
}

ReplayData read_snapshot_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaMismatch("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) ||
      (line != kSnapshotHeader && line != std::string(kSnapshotHeader) + "\r")) {
    throw SchemaMismatch(path.string() + ": bad or missing header row");
  }

  ReplayData data;
  std::map<std::string, std::map<int, telemetry::ThreadInfo>> threads_by_vm;
  telemetry::TelemetrySnapshot current;
  bool have_current = false;
  int row_no = 1;

  auto flush = [&] {
    if (have_current) data.snapshots.push_back(current);
    current = telemetry::TelemetrySnapshot{};
    have_current = false;
  };

  auto fail = [&](const std::string& msg) {
    throw SchemaMismatch(path.string() + ": row " + std::to_string(row_no) +
                         ": " + msg);
  };

  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto fields = split_csv(line);
    if (fields.size() != 10) {
      fail("expected 10 columns, got " + std::to_string(fields.size()));
    }
    std::uint64_t ts = 0;
    try {
      ts = std::stoull(fields[0]);
    } catch (...) {
      fail("timestamp is not an integer");
    }
    if (!have_current || ts != current.timestamp_ns) {
      if (have_current && ts < current.timestamp_ns) {
        fail("timestamps must be non-decreasing");
      }
      flush();
      current.timestamp_ns = ts;
      have_current = true;
    }
    const std::string& kind = fields[1];
    try {
      if (kind == "thread") {
        const std::string& vm_id = fields[2];
        if (vm_id.empty()) fail("thread row without vm_id");
        int tid = std::stoi(fields[3]);
        auto cls = telemetry::thread_class_from_name(fields[4]);
        if (!cls) fail("unknown thread class '" + fields[4] + "'");
        telemetry::RawSchedstat stat;
        stat.cpu_time_ns = std::stoull(fields[5]);
        stat.run_delay_ns = std::stoull(fields[6]);
        stat.timeslices = std::stoull(fields[7]);
        current.per_thread[tid] = stat;
        threads_by_vm[vm_id].insert({tid, telemetry::ThreadInfo{tid, "", *cls}});
      } else if (kind == "core") {
        int core = std::stoi(fields[8]);
        double util = std::stod(fields[9]);
        current.per_core_util[core] = util;
      } else {
        fail("unknown row kind '" + kind + "'");
      }
    } catch (const SchemaMismatch&) {
      throw;
    } catch (...) {
      fail("malformed numeric field");
    }
  }
  flush();

  for (const auto& [vm_id, by_tid] : threads_by_vm) {
    auto& list = data.vm_threads[vm_id];
    for (const auto& [tid, info] : by_tid) list.push_back(info);
  }
  return data;
}

}  // namespace emusched::trace
