#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "emusched/controller.hpp"
#include "emusched/errors.hpp"
#include "emusched/strategy.hpp"
#include "emusched/telemetry.hpp"

namespace emusched::config {

struct ConfigError : Error {
  using Error::Error;
};

enum class BackendKind { kCgroup, kAffinity, kNone };

struct AppConfig {
  strategy::CoreTopology topology;
  telemetry::DiscoveryConfig discovery;
  std::filesystem::path procroot = "/proc";
  control::ControllerConfig controller;
  BackendKind backend = BackendKind::kCgroup;
  std::filesystem::path cgroup_root = "/sys/fs/cgroup";
  std::string cgroup_path_template;

  void validate() const;
};

// Line-oriented "key = value" file with [section] headers and '#' comments.
// Sections: [topology], [telemetry], [controller], [actuator].
AppConfig parse_config_text(const std::string& text, const std::string& origin);
AppConfig load_config(const std::filesystem::path& path);

}  // namespace emusched::config
