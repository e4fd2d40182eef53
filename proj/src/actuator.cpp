#include "emusched/actuator.hpp"

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#ifdef __linux__
#include <sched.h>
#endif

namespace emusched::actuate {

namespace fs = std::filesystem;

std::string format_cpulist(const std::set<int>& cores) {
  if (cores.empty()) throw EmptyCpuset("cannot format an empty cpuset");
  std::ostringstream out;
  auto it = cores.begin();
  while (it != cores.end()) {
    int start = *it;
    int end = start;
    auto next = std::next(it);
    while (next != cores.end() && *next == end + 1) {
      end = *next;
      ++next;
    }
    if (out.tellp() > 0) out << ',';
    if (start == end) {
      out << start;
    } else {
      out << start << '-' << end;
    }
    it = next;
  }
  return out.str();
}

std::set<int> parse_cpulist(std::string_view text) {
  std::set<int> out;
  std::size_t pos = 0;
  auto read_int = [&]() -> int {
    std::size_t start = pos;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
      ++pos;
    }
    if (pos == start) {
      throw MalformedCpulist("expected a core id in cpulist: " + std::string(text));
    }
    return std::stoi(std::string(text.substr(start, pos - start)));
  };
  while (pos < text.size() &&
         std::isspace(static_cast<unsigned char>(text[pos]))) {
    ++pos;
  }
  if (pos >= text.size()) {
    throw MalformedCpulist("empty cpulist");
  }
  while (pos < text.size()) {
    int start = read_int();
    int end = start;
    if (pos < text.size() && text[pos] == '-') {
      ++pos;
      end = read_int();
      if (end < start) {
        throw MalformedCpulist("descending range in cpulist: " + std::string(text));
      }
    }
    for (int c = start; c <= end; ++c) out.insert(c);
    if (pos < text.size()) {
      if (text[pos] == ',') {
        ++pos;
      } else if (std::isspace(static_cast<unsigned char>(text[pos]))) {
        break;  // trailing newline/whitespace
      } else {
        throw MalformedCpulist("unexpected character in cpulist: " +
                               std::string(text));
      }
    }
  }
  return out;
}

CgroupBackend::CgroupBackend(fs::path cgroup_root, std::string path_template)
    : root_(std::move(cgroup_root)), template_(std::move(path_template)) {}

fs::path CgroupBackend::cpuset_path(const std::string& vm_id) const {
  if (!template_.empty()) {
    std::string p = template_;
    auto replace_all = [&p](const std::string& what, const std::string& with) {
      std::size_t at = 0;
      while ((at = p.find(what, at)) != std::string::npos) {
        p.replace(at, what.size(), with);
        at += with.size();
      }
    };
    replace_all("{root}", root_.string());
    replace_all("{vm}", vm_id);
    return fs::path(p);
  }
  if (fs::exists(root_ / "cgroup.controllers")) {
    return root_ / vm_id / "emulator" / "cpuset.cpus";  // unified hierarchy
  }
  if (fs::exists(root_ / "cpuset")) {
    return root_ / "cpuset" / vm_id / "emulator" / "cpuset.cpus";  // legacy
  }
  return root_ / vm_id / "emulator" / "cpuset.cpus";
}

ApplyReport CgroupBackend::apply(const BindingRequest& request) {
  if (request.cores.empty()) throw EmptyCpuset("binding request with no cores");
  fs::path path = cpuset_path(request.vm_id);
  std::error_code ec;
  if (!fs::exists(path.parent_path(), ec)) {
    throw BackendUnavailable("cgroup directory missing: " +
                             path.parent_path().string());
  }
  std::ofstream out(path);
  if (!out) {
    if (errno == EACCES || errno == EPERM) {
      throw PermissionDenied("cannot write " + path.string());
    }
    throw BackendUnavailable("cannot open " + path.string());
  }
  out << format_cpulist(request.cores) << '\n';
  out.flush();
  if (!out) throw BackendUnavailable("write failed for " + path.string());
  return {};
}

std::set<int> CgroupBackend::verify(const std::string& vm_id) {
  fs::path path = cpuset_path(vm_id);
  std::ifstream in(path);
  if (!in) throw BackendUnavailable("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  return parse_cpulist(line);
}

ApplyReport ThreadAffinityBackend::apply(const BindingRequest& request) {
  if (request.cores.empty()) throw EmptyCpuset("binding request with no cores");
  ApplyReport report;
#ifdef __linux__
  cpu_set_t mask;
  CPU_ZERO(&mask);
  for (int core : request.cores) CPU_SET(core, &mask);
  std::vector<int> bound;
  for (int tid : request.tids) {
    if (sched_setaffinity(tid, sizeof(mask), &mask) == 0) {
      bound.push_back(tid);
      continue;
    }
    if (errno == ESRCH) {
      report.vanished_tids.push_back(tid);
    } else if (errno == EPERM || errno == EACCES) {
      throw PermissionDenied("sched_setaffinity on tid " + std::to_string(tid));
    } else {
      throw BackendUnavailable("sched_setaffinity failed for tid " +
                               std::to_string(tid) + ": " + std::strerror(errno));
    }
  }
  tids_by_vm_[request.vm_id] = bound;
#else
  (void)request;
  throw BackendUnavailable("thread affinity backend requires Linux");
#endif
  return report;
}

std::set<int> ThreadAffinityBackend::verify(const std::string& vm_id) {
#ifdef __linux__
  auto it = tids_by_vm_.find(vm_id);
  if (it == tids_by_vm_.end() || it->second.empty()) {
    throw BackendUnavailable("no bound threads recorded for VM " + vm_id);
  }
  cpu_set_t mask;
  CPU_ZERO(&mask);
  if (sched_getaffinity(it->second.front(), sizeof(mask), &mask) != 0) {
    throw BackendUnavailable("sched_getaffinity failed for tid " +
                             std::to_string(it->second.front()));
  }
  std::set<int> out;
  for (int c = 0; c < CPU_SETSIZE; ++c) {
    if (CPU_ISSET(c, &mask)) out.insert(c);
  }
  return out;
#else
  (void)vm_id;
  throw BackendUnavailable("thread affinity backend requires Linux");
#endif
}

ApplyReport RecordingBackend::apply(const BindingRequest& request) {
  if (request.cores.empty()) throw EmptyCpuset("binding request with no cores");
  applied_.push_back(request);
  effective_[request.vm_id] = request.cores;
  return {};
}

std::set<int> RecordingBackend::verify(const std::string& vm_id) {
  auto it = effective_.find(vm_id);
  if (it == effective_.end()) {
    throw BackendUnavailable("no binding recorded for VM " + vm_id);
  }
  return it->second;
}

}  // namespace emusched::actuate
