#include "emusched/config.hpp"

#include <fstream>
#include <sstream>

#include "emusched/actuator.hpp"

namespace emusched::config {

void AppConfig::validate() const {
  controller.validate();
  if (topology.small_cores.empty()) {
    throw ConfigError("[topology] must list at least one small core");
  }
  for (int c : topology.small_cores) {
    if (topology.type_of(c) != strategy::CoreType::kSmall) {
      throw ConfigError("core " + std::to_string(c) + " listed as small and big");
    }
  }
}

namespace {

std::string trim(const std::string& s) {
  auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
  throw ConfigError(origin + ":" + std::to_string(line) + ": " + msg);
}

double to_double(const std::string& origin, int line, const std::string& v) {
  try {
    return std::stod(v);
  } catch (...) {
    fail(origin, line, "expected a number, got '" + v + "'");
  }
}

int to_int(const std::string& origin, int line, const std::string& v) {
  try {
    return std::stoi(v);
  } catch (...) {
    fail(origin, line, "expected an integer, got '" + v + "'");
  }
}

}  // namespace

AppConfig parse_config_text(const std::string& text, const std::string& origin) {
  AppConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;

  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(origin, line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "topology" && section != "telemetry" &&
          section != "controller" && section != "actuator") {
        fail(origin, line_no, "unknown section [" + section + "]");
      }
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) fail(origin, line_no, "expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(origin, line_no, "empty key");

    if (section == "topology") {
      try {
        if (key == "small") {
          auto cores = actuate::parse_cpulist(value);
          cfg.topology.small_cores.assign(cores.begin(), cores.end());
        } else if (key == "big") {
          auto cores = actuate::parse_cpulist(value);
          cfg.topology.big_cores.assign(cores.begin(), cores.end());
        } else {
          fail(origin, line_no, "unknown [topology] key '" + key + "'");
        }
      } catch (const actuate::MalformedCpulist& e) {
        fail(origin, line_no, e.what());
      }
    } else if (section == "telemetry") {
      if (key == "procroot") {
        cfg.procroot = value;
      } else if (key == "marker") {
        cfg.discovery.marker = value;
      } else if (key == "vcpu_pattern") {
        cfg.discovery.vcpu_pattern = value;
      } else if (key == "ring_capacity") {
        int cap = to_int(origin, line_no, value);
        if (cap < 1) fail(origin, line_no, "ring_capacity must be >= 1");
        cfg.discovery.ring_capacity = static_cast<std::size_t>(cap);
      } else if (key == "allow") {
        // "pid" or "pid:name"; repeatable.
        auto colon = value.find(':');
        std::string pid_s = colon == std::string::npos ? value : value.substr(0, colon);
        std::string name = colon == std::string::npos ? "" : value.substr(colon + 1);
        cfg.discovery.allow[to_int(origin, line_no, pid_s)] = trim(name);
      } else {
        fail(origin, line_no, "unknown [telemetry] key '" + key + "'");
      }
    } else if (section == "controller") {
      auto& c = cfg.controller;
      if (key == "l1") {
        if (value == "auto") {
          c.l1.reset();
        } else {
          c.l1 = to_double(origin, line_no, value);
        }
      } else if (key == "l1_auto_fraction") {
        c.l1_auto_fraction = to_double(origin, line_no, value);
      } else if (key == "measure_window") {
        c.measure_window = to_int(origin, line_no, value);
      } else if (key == "oscillation_limit") {
        c.oscillation_limit = to_int(origin, line_no, value);
      } else if (key == "tick_period") {
        c.tick_period_s = to_int(origin, line_no, value);
      } else if (key == "delay_threshold") {
        c.delay_threshold = to_double(origin, line_no, value);
      } else if (key == "util_threshold") {
        c.util_threshold = to_double(origin, line_no, value);
      } else if (key == "delay_floor") {
        c.delay_floor = to_double(origin, line_no, value);
      } else if (key == "util_floor") {
        c.util_floor = to_double(origin, line_no, value);
      } else if (key == "stability_window") {
        int w = to_int(origin, line_no, value);
        if (w < 1) fail(origin, line_no, "stability_window must be >= 1");
        c.stability_window = static_cast<std::size_t>(w);
      } else {
        fail(origin, line_no, "unknown [controller] key '" + key + "'");
      }
    } else if (section == "actuator") {
      if (key == "backend") {
        if (value == "cgroup") {
          cfg.backend = BackendKind::kCgroup;
        } else if (value == "affinity") {
          cfg.backend = BackendKind::kAffinity;
        } else if (value == "none") {
          cfg.backend = BackendKind::kNone;
        } else {
          fail(origin, line_no, "backend must be cgroup, affinity, or none");
        }
      } else if (key == "cgroup_root") {
        cfg.cgroup_root = value;
      } else if (key == "cgroup_path_template") {
        cfg.cgroup_path_template = value;
      } else {
        fail(origin, line_no, "unknown [actuator] key '" + key + "'");
      }
    } else {
      fail(origin, line_no, "'" + key + "' outside any section");
    }
  }
  return cfg;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

}  // namespace emusched::config
