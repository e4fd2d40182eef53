#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "emusched/errors.hpp"

namespace emusched::actuate {

struct EmptyCpuset : Error {
  using Error::Error;
};
struct MalformedCpulist : Error {
  using Error::Error;
};
struct PermissionDenied : Error {
  using Error::Error;
};
struct BackendUnavailable : Error {
  using Error::Error;
};

// Kernel cpulist syntax: ascending, maximal ranges, comma separated
// ("0-2,5"). Throws EmptyCpuset on an empty set.
std::string format_cpulist(const std::set<int>& cores);
std::set<int> parse_cpulist(std::string_view text);

struct BindingRequest {
  std::string vm_id;
  std::vector<int> tids;  // the VM's emulator threads
  std::set<int> cores;
};

struct ApplyReport {
  std::vector<int> vanished_tids;  // bound everything else
};

// A channel that constrains threads to cores. apply is idempotent; after a
// successful apply, verify(vm_id) returns exactly the requested set.
class ActuatorBackend {
 public:
  virtual ~ActuatorBackend() = default;
  virtual ApplyReport apply(const BindingRequest& request) = 0;
  virtual std::set<int> verify(const std::string& vm_id) = 0;
};

// Writes the cpulist into the per-VM emulator cpuset file. The path
// template understands {root} and {vm}; when empty, the backend probes for
// a unified hierarchy (cgroup.controllers present) and falls back to the
// legacy cpuset controller directory.
class CgroupBackend final : public ActuatorBackend {
 public:
  explicit CgroupBackend(std::filesystem::path cgroup_root,
                         std::string path_template = "");

  ApplyReport apply(const BindingRequest& request) override;
  std::set<int> verify(const std::string& vm_id) override;

  std::filesystem::path cpuset_path(const std::string& vm_id) const;

 private:
  std::filesystem::path root_;
  std::string template_;
};

// Sets per-thread scheduling affinity directly; for hosts without a
// per-VM cgroup layout.
class ThreadAffinityBackend final : public ActuatorBackend {
 public:
  ApplyReport apply(const BindingRequest& request) override;
  std::set<int> verify(const std::string& vm_id) override;

 private:
  std::map<std::string, std::vector<int>> tids_by_vm_;
};

// Records requests without touching the system; backs --dry-run and replay.
class RecordingBackend final : public ActuatorBackend {
 public:
  ApplyReport apply(const BindingRequest& request) override;
  std::set<int> verify(const std::string& vm_id) override;

  const std::vector<BindingRequest>& applied() const { return applied_; }

 private:
  std::vector<BindingRequest> applied_;
  std::map<std::string, std::set<int>> effective_;
};

}  // namespace emusched::actuate
