#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>

namespace emusched::cli {

struct DaemonOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> procroot;
  std::optional<std::filesystem::path> cgroup_root;
  std::optional<std::filesystem::path> out;  // decision log (default stdout)
  bool dry_run = false;
  int max_ticks = -1;  // -1 runs until a stop signal
  int verbosity = 0;
};

struct SimulateOptions {
  std::filesystem::path scenario;
  std::optional<std::filesystem::path> config;
  std::filesystem::path out_dir;
  int verbosity = 0;
};

struct EnumerateOptions {
  int small = 0;
  int big = 0;
  int vms = 1;
  std::optional<std::set<int>> sizes;
  bool verbose = false;
};

struct ReplayOptions {
  std::filesystem::path trace;
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> out;  // decision log (default stdout)
  std::optional<std::string> small;          // cpulist overrides
  std::optional<std::string> big;
};

struct ReportOptions {
  std::filesystem::path input;
  std::optional<std::filesystem::path> out;
};

int cmd_daemon(const DaemonOptions& opts);
int cmd_simulate(const SimulateOptions& opts);
int cmd_enumerate(const EnumerateOptions& opts);
int cmd_replay(const ReplayOptions& opts);
int cmd_report(const ReportOptions& opts);

}  // namespace emusched::cli
