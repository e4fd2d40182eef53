#include "emusched/telemetry.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <sstream>

namespace emusched::telemetry {

namespace fs = std::filesystem;

RawSchedstat parse_schedstat(std::string_view line) {
  std::uint64_t fields[3];
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) {
      ++pos;
    }
    std::size_t start = pos;
    std::uint64_t value = 0;
    while (pos < line.size() && std::isdigit(static_cast<unsigned char>(line[pos]))) {
      std::uint64_t digit = static_cast<std::uint64_t>(line[pos] - '0');
      if (value > (UINT64_MAX - digit) / 10) {
        throw MalformedSchedstat("schedstat field out of range: " + std::string(line));
      }
      value = value * 10 + digit;
      ++pos;
    }
    if (pos == start) {
      throw MalformedSchedstat("schedstat line needs three integer fields: " +
                               std::string(line));
    }
    if (pos < line.size() && !std::isspace(static_cast<unsigned char>(line[pos]))) {
      throw MalformedSchedstat("non-numeric schedstat field: " + std::string(line));
    }
    fields[i] = value;
  }
  return RawSchedstat{fields[0], fields[1], fields[2]};
}

std::string format_schedstat(const RawSchedstat& s) {
  return std::to_string(s.cpu_time_ns) + " " + std::to_string(s.run_delay_ns) +
         " " + std::to_string(s.timeslices);
}

const char* thread_class_name(ThreadClass cls) {
  return cls == ThreadClass::kVcpu ? "VCPU" : "EMULATOR";
}

std::optional<ThreadClass> thread_class_from_name(std::string_view name) {
  if (name == "VCPU") return ThreadClass::kVcpu;
  if (name == "EMULATOR") return ThreadClass::kEmulator;
  return std::nullopt;
}

ThreadClassifier::ThreadClassifier(const std::string& vcpu_pattern) {
  try {
    vcpu_re_ = std::regex(vcpu_pattern, std::regex::ECMAScript);
  } catch (const std::regex_error& e) {
    throw InvalidPattern("invalid vcpu pattern '" + vcpu_pattern + "': " + e.what());
  }
}

ThreadClass ThreadClassifier::classify(const std::string& name) const {
  return std::regex_match(name, vcpu_re_) ? ThreadClass::kVcpu
                                          : ThreadClass::kEmulator;
}

std::vector<int> VmRecord::tids(ThreadClass cls) const {
  std::vector<int> out;
  for (const auto& t : threads) {
    if (t.cls == cls) out.push_back(t.tid);
  }
  return out;
}

void append_history(VmRecord& vm, const TelemetrySnapshot& snap) {
  RawSchedstat vcpu_sum;
  RawSchedstat emu_sum;
  for (const auto& t : vm.threads) {
    auto it = snap.per_thread.find(t.tid);
    if (it == snap.per_thread.end()) continue;
    RawSchedstat& sum = t.cls == ThreadClass::kVcpu ? vcpu_sum : emu_sum;
    sum.cpu_time_ns += it->second.cpu_time_ns;
    sum.run_delay_ns += it->second.run_delay_ns;
    sum.timeslices += it->second.timeslices;
  }
  vm.vcpu_history.push(ClassSample{snap.timestamp_ns, vcpu_sum});
  vm.emulator_history.push(ClassSample{snap.timestamp_ns, emu_sum});
}

namespace {

std::uint64_t steady_now_ns() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(
          std::chrono::steady_clock::now().time_since_epoch())
          .count());
}

std::optional<std::string> read_first_line(const fs::path& p) {
  std::ifstream in(p);
  if (!in) return std::nullopt;
  std::string line;
  std::getline(in, line);
  return line;
}

// cmdline is NUL-separated; flatten to spaces for substring matching.
std::optional<std::string> read_cmdline(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  std::string raw((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  std::replace(raw.begin(), raw.end(), '\0', ' ');
  return raw;
}

std::optional<int> parse_int_dir(const std::string& name) {
  if (name.empty()) return std::nullopt;
  for (char c : name) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
  }
  try {
    return std::stoi(name);
  } catch (...) {
    return std::nullopt;
  }
}

}  // namespace

Collector::Collector(fs::path procroot, DiscoveryConfig cfg,
                     std::function<std::uint64_t()> clock)
    : procroot_(std::move(procroot)),
      cfg_(std::move(cfg)),
      classifier_(cfg_.vcpu_pattern),
      clock_(clock ? std::move(clock) : steady_now_ns) {}

VmRecord* Collector::find_vm(const std::string& vm_id) {
  auto it = vms_.find(vm_id);
  return it == vms_.end() ? nullptr : &it->second;
}

std::vector<std::string> Collector::discover() {
  std::error_code ec;
  fs::directory_iterator dir(procroot_, ec);
  if (ec) {
    throw SourceUnavailable("cannot read procroot " + procroot_.string() + ": " +
                            ec.message());
  }

  std::map<std::string, VmRecord> next;
  for (const auto& entry : dir) {
    auto pid = parse_int_dir(entry.path().filename().string());
    if (!pid) continue;

    bool matched = false;
    std::string vm_id = std::to_string(*pid);
    if (auto it = cfg_.allow.find(*pid); it != cfg_.allow.end()) {
      matched = true;
      if (!it->second.empty()) vm_id = it->second;
    } else if (!cfg_.marker.empty()) {
      auto cmdline = read_cmdline(entry.path() / "cmdline");
      matched = cmdline && cmdline->find(cfg_.marker) != std::string::npos;
    }
    if (!matched) continue;

    VmRecord rec = [&] {
      if (auto* existing = find_vm(vm_id); existing && existing->pid == *pid) {
        return std::move(*existing);  // keep accumulated history
      }
      return VmRecord(vm_id, *pid, cfg_.ring_capacity);
    }();
    rec.threads.clear();

    std::error_code tec;
    fs::directory_iterator tasks(entry.path() / "task", tec);
    if (tec) continue;  // process exited mid-scan
    for (const auto& task : tasks) {
      auto tid = parse_int_dir(task.path().filename().string());
      if (!tid) continue;
      auto name = read_first_line(task.path() / "comm");
      if (!name) continue;  // thread vanished between listing and read
      rec.threads.push_back(
          ThreadInfo{*tid, *name, classifier_.classify(*name)});
    }
    std::sort(rec.threads.begin(), rec.threads.end(),
              [](const ThreadInfo& a, const ThreadInfo& b) { return a.tid < b.tid; });
    next.emplace(vm_id, std::move(rec));
  }

  vms_ = std::move(next);
  std::vector<std::string> ids;
  for (const auto& [id, rec] : vms_) ids.push_back(id);
  return ids;
}

std::map<int, Collector::CoreJiffies> Collector::read_core_jiffies() const {
  std::ifstream in(procroot_ / "stat");
  if (!in) {
    throw SourceUnavailable("cannot read " + (procroot_ / "stat").string());
  }
  std::map<int, CoreJiffies> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("cpu", 0) != 0 || line.size() < 4 ||
        !std::isdigit(static_cast<unsigned char>(line[3]))) {
      continue;  // skip the aggregate "cpu" line and non-cpu rows
    }
    std::istringstream iss(line);
    std::string label;
    iss >> label;
    int core = std::stoi(label.substr(3));
    // user nice system idle iowait irq softirq steal
    std::uint64_t col[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    int got = 0;
    for (int i = 0; i < 8 && (iss >> col[i]); ++i) ++got;
    if (got < 4) continue;
    CoreJiffies j;
    j.idle = col[3] + col[4];  // idle + iowait both count as idle
    j.total = 0;
    for (int i = 0; i < 8; ++i) j.total += col[i];
    out[core] = j;
  }
  return out;
}

TelemetrySnapshot Collector::snapshot(CollectWarnings* warnings) {
  TelemetrySnapshot snap;
  snap.timestamp_ns = clock_();

  for (auto& [id, vm] : vms_) {
    for (const auto& t : vm.threads) {
      fs::path p = procroot_ / std::to_string(vm.pid) / "task" /
                   std::to_string(t.tid) / "schedstat";
      auto line = read_first_line(p);
      if (!line) {
        if (warnings) warnings->threads_gone.push_back(t.tid);
        continue;
      }
      snap.per_thread[t.tid] = parse_schedstat(*line);
    }
  }

  auto jiffies = read_core_jiffies();
  if (have_jiffies_) {
    for (const auto& [core, cur] : jiffies) {
      auto prev = prev_jiffies_.find(core);
      if (prev == prev_jiffies_.end()) continue;
      if (cur.total <= prev->second.total) continue;  // no progress or reset
      double idle_delta =
          cur.idle >= prev->second.idle
              ? static_cast<double>(cur.idle - prev->second.idle)
              : 0.0;
      double total_delta = static_cast<double>(cur.total - prev->second.total);
      double util = 1.0 - idle_delta / total_delta;
      snap.per_core_util[core] = std::clamp(util, 0.0, 1.0);
    }
  }
  prev_jiffies_ = std::move(jiffies);
  have_jiffies_ = true;

  for (auto& [id, vm] : vms_) {
    append_history(vm, snap);
  }
  return snap;
}

}  // namespace emusched::telemetry
