#include <cmath>
#include <fstream>
#include <sstream>

#include "emusched/actuator.hpp"
#include "emusched/simkvm.hpp"

namespace emusched::sim {

namespace {

struct Cursor {
  const std::string& origin;
  int line_no = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ScenarioParseError(origin + ":" + std::to_string(line_no) + ": " + msg);
  }
};

std::string trim(const std::string& s) {
  auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

double parse_double(const Cursor& cur, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) cur.fail("trailing characters after number '" + v + "'");
    return d;
  } catch (const ScenarioParseError&) {
    throw;
  } catch (...) {
    cur.fail("expected a number, got '" + v + "'");
  }
}

int parse_int(const Cursor& cur, const std::string& v) {
  try {
    std::size_t used = 0;
    int i = std::stoi(v, &used);
    if (used != v.size()) cur.fail("trailing characters after integer '" + v + "'");
    return i;
  } catch (const ScenarioParseError&) {
    throw;
  } catch (...) {
    cur.fail("expected an integer, got '" + v + "'");
  }
}

std::set<int> parse_cores(const Cursor& cur, const std::string& v) {
  try {
    return actuate::parse_cpulist(v);
  } catch (const actuate::MalformedCpulist& e) {
    cur.fail(e.what());
  }
}

// Per-VM text fields collected before threads are materialized.
struct VmBuilder {
  std::string id;
  int pid = 0;
  int vcpus = 0;
  int emulators = 1;
  double vcpu_demand = 0.0;
  double emu_demand = 0.0;
  std::set<int> vcpu_affinity;
  std::optional<std::set<int>> emu_affinity;
};

struct PhaseChange {
  double at_s = 0.0;
  std::string vm_id;
  telemetry::ThreadClass cls = telemetry::ThreadClass::kVcpu;
  double demand = 0.0;
};

}  // namespace

Scenario parse_scenario_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  Cursor cur{origin, 0};

  Scenario scn;
  bool version_seen = false;
  enum class Section { kNone, kCores, kVm, kPhase, kModel };
  Section section = Section::kNone;

  std::set<int> small_cores, big_cores;
  double small_capacity = 1.0, big_capacity = 2.0;
  std::vector<VmBuilder> vm_builders;
  std::vector<PhaseChange> phases;
  double phase_time = 0.0;

  std::string raw;
  while (std::getline(in, raw)) {
    ++cur.line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;

    if (!version_seen) {
      std::istringstream v(line);
      std::string word;
      int num = 0;
      if (!(v >> word >> num) || word != "version") {
        cur.fail("scenario must start with 'version 1'");
      }
      if (num != 1) cur.fail("unsupported scenario version " + std::to_string(num));
      version_seen = true;
      continue;
    }

    if (line.front() == '[') {
      if (line.back() != ']') cur.fail("unterminated section header");
      std::string header = trim(line.substr(1, line.size() - 2));
      if (header == "cores") {
        section = Section::kCores;
      } else if (header.rfind("vm ", 0) == 0) {
        section = Section::kVm;
        VmBuilder b;
        b.id = trim(header.substr(3));
        if (b.id.empty()) cur.fail("[vm] needs an id");
        b.pid = 100 + static_cast<int>(vm_builders.size()) + 1;
        vm_builders.push_back(std::move(b));
      } else if (header.rfind("phase ", 0) == 0) {
        section = Section::kPhase;
        phase_time = parse_double(cur, trim(header.substr(6)));
        if (phase_time < 0) cur.fail("phase time must be non-negative");
      } else if (header == "model") {
        section = Section::kModel;
      } else {
        cur.fail("unknown section [" + header + "]");
      }
      continue;
    }

    auto eq = line.find('=');
    if (eq == std::string::npos) cur.fail("expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) cur.fail("expected 'key = value'");

    switch (section) {
      case Section::kNone:
        cur.fail("'" + key + "' outside any section");
        break;
      case Section::kCores:
        if (key == "small") {
          small_cores = parse_cores(cur, value);
        } else if (key == "big") {
          big_cores = parse_cores(cur, value);
        } else if (key == "small_capacity") {
          small_capacity = parse_double(cur, value);
        } else if (key == "big_capacity") {
          big_capacity = parse_double(cur, value);
        } else {
          cur.fail("unknown [cores] key '" + key + "'");
        }
        break;
      case Section::kVm: {
        VmBuilder& b = vm_builders.back();
        if (key == "pid") {
          b.pid = parse_int(cur, value);
        } else if (key == "vcpus") {
          b.vcpus = parse_int(cur, value);
        } else if (key == "emulators") {
          b.emulators = parse_int(cur, value);
        } else if (key == "vcpu_demand") {
          b.vcpu_demand = parse_double(cur, value);
        } else if (key == "emu_demand") {
          b.emu_demand = parse_double(cur, value);
        } else if (key == "vcpu_affinity") {
          b.vcpu_affinity = parse_cores(cur, value);
        } else if (key == "emu_affinity") {
          b.emu_affinity = parse_cores(cur, value);
        } else {
          cur.fail("unknown [vm] key '" + key + "'");
        }
        break;
      }
      case Section::kPhase: {
        auto dot = key.find('.');
        if (dot == std::string::npos) {
          cur.fail("phase key must be '<vm>.vcpu_demand' or '<vm>.emu_demand'");
        }
        PhaseChange change;
        change.at_s = phase_time;
        change.vm_id = key.substr(0, dot);
        std::string field = key.substr(dot + 1);
        if (field == "vcpu_demand") {
          change.cls = telemetry::ThreadClass::kVcpu;
        } else if (field == "emu_demand") {
          change.cls = telemetry::ThreadClass::kEmulator;
        } else {
          cur.fail("unknown phase field '" + field + "'");
        }
        change.demand = parse_double(cur, value);
        phases.push_back(std::move(change));
        break;
      }
      case Section::kModel:
        if (key == "alpha") {
          scn.model.alpha = parse_double(cur, value);
        } else if (key == "beta") {
          scn.model.beta = parse_double(cur, value);
        } else if (key == "base_ns") {
          scn.model.base_ns = parse_double(cur, value);
        } else if (key == "jitter") {
          scn.model.jitter = parse_double(cur, value);
        } else if (key == "duration") {
          scn.model.duration_s = parse_double(cur, value);
        } else if (key == "seed") {
          scn.model.seed = static_cast<std::uint64_t>(parse_double(cur, value));
        } else if (key == "placement") {
          if (value == "equal_spread") {
            scn.model.placement = Placement::kEqualSpread;
          } else if (value == "greedy") {
            scn.model.placement = Placement::kGreedyLeastLoaded;
          } else {
            cur.fail("placement must be 'equal_spread' or 'greedy'");
          }
        } else {
          cur.fail("unknown [model] key '" + key + "'");
        }
        break;
    }
  }

  if (!version_seen) {
    cur.line_no = 1;
    cur.fail("empty scenario: missing 'version 1'");
  }

  for (int c : small_cores) {
    scn.cores.push_back(SimCore{c, strategy::CoreType::kSmall, small_capacity});
  }
  for (int c : big_cores) {
    if (small_cores.count(c)) {
      cur.fail("core " + std::to_string(c) + " listed as both small and big");
    }
    scn.cores.push_back(SimCore{c, strategy::CoreType::kBig, big_capacity});
  }

  std::set<std::string> vm_ids;
  for (const auto& b : vm_builders) vm_ids.insert(b.id);
  for (const auto& change : phases) {
    if (!vm_ids.count(change.vm_id)) {
      throw ScenarioParseError(origin + ": phase names unknown vm '" +
                               change.vm_id + "'");
    }
  }

  for (const auto& b : vm_builders) {
    SimVm vm;
    vm.vm_id = b.id;
    vm.pid = b.pid;
    vm.vcpu_affinity = b.vcpu_affinity;
    vm.emu_affinity = b.emu_affinity.value_or(b.vcpu_affinity);
    int tid = b.pid * 100;
    auto schedule_for = [&](telemetry::ThreadClass cls, double initial) {
      std::vector<DemandStep> steps = {{0.0, initial}};
      for (const auto& change : phases) {
        if (change.vm_id == b.id && change.cls == cls) {
          steps.push_back({change.at_s, change.demand});
        }
      }
      std::stable_sort(steps.begin(), steps.end(),
                       [](const DemandStep& a, const DemandStep& c) {
                         return a.start_s < c.start_s;
                       });
      return steps;
    };
    auto vcpu_schedule = schedule_for(telemetry::ThreadClass::kVcpu, b.vcpu_demand);
    auto emu_schedule =
        schedule_for(telemetry::ThreadClass::kEmulator, b.emu_demand);
    for (int i = 0; i < b.vcpus; ++i) {
      vm.threads.push_back(
          SimThread{tid++, telemetry::ThreadClass::kVcpu, vcpu_schedule});
    }
    for (int i = 0; i < b.emulators; ++i) {
      vm.threads.push_back(
          SimThread{tid++, telemetry::ThreadClass::kEmulator, emu_schedule});
    }
    scn.vms.push_back(std::move(vm));
  }

  try {
    scn.validate();
  } catch (const ScenarioParseError& e) {
    throw ScenarioParseError(origin + ": " + e.what());
  }
  return scn;
}

Scenario parse_scenario_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioParseError("cannot open scenario file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario_text(buf.str(), path.string());
}

std::string render_scenario(const Scenario& scn) {
  std::ostringstream out;
  out.precision(17);  // demands must survive the round trip exactly
  out << "version " << scn.version << "\n\n[cores]\n";
  std::set<int> small, big;
  double small_cap = 1.0, big_cap = 2.0;
  for (const auto& core : scn.cores) {
    if (core.type == strategy::CoreType::kSmall) {
      small.insert(core.id);
      small_cap = core.capacity;
    } else {
      big.insert(core.id);
      big_cap = core.capacity;
    }
  }
  if (!small.empty()) out << "small = " << actuate::format_cpulist(small) << "\n";
  if (!big.empty()) out << "big = " << actuate::format_cpulist(big) << "\n";
  out << "small_capacity = " << small_cap << "\n";
  out << "big_capacity = " << big_cap << "\n";

  struct Change {
    double at;
    std::string key;
    double demand;
  };
  std::vector<Change> changes;

  for (const auto& vm : scn.vms) {
    out << "\n[vm " << vm.vm_id << "]\npid = " << vm.pid << "\n";
    int vcpus = 0, emulators = 0;
    double vcpu_demand = 0.0, emu_demand = 0.0;
    const SimThread* vcpu_proto = nullptr;
    const SimThread* emu_proto = nullptr;
    for (const auto& t : vm.threads) {
      if (t.cls == telemetry::ThreadClass::kVcpu) {
        ++vcpus;
        vcpu_proto = &t;
      } else {
        ++emulators;
        emu_proto = &t;
      }
    }
    auto initial = [](const SimThread* t) {
      return t && !t->schedule.empty() ? t->schedule.front().demand : 0.0;
    };
    vcpu_demand = initial(vcpu_proto);
    emu_demand = initial(emu_proto);
    out << "vcpus = " << vcpus << "\n";
    out << "vcpu_demand = " << vcpu_demand << "\n";
    out << "emulators = " << emulators << "\n";
    out << "emu_demand = " << emu_demand << "\n";
    out << "vcpu_affinity = " << actuate::format_cpulist(vm.vcpu_affinity) << "\n";
    out << "emu_affinity = " << actuate::format_cpulist(vm.emu_affinity) << "\n";
    auto collect = [&](const SimThread* t, const std::string& field) {
      if (!t) return;
      for (std::size_t i = 1; i < t->schedule.size(); ++i) {
        changes.push_back(Change{t->schedule[i].start_s,
                                 vm.vm_id + "." + field, t->schedule[i].demand});
      }
    };
    collect(vcpu_proto, "vcpu_demand");
    collect(emu_proto, "emu_demand");
  }

  std::stable_sort(changes.begin(), changes.end(),
                   [](const Change& a, const Change& b) { return a.at < b.at; });
  double open_phase = -1.0;
  for (const auto& c : changes) {
    if (c.at != open_phase) {
      out << "\n[phase " << c.at << "]\n";
      open_phase = c.at;
    }
    out << c.key << " = " << c.demand << "\n";
  }

  out << "\n[model]\n";
  out << "alpha = " << scn.model.alpha << "\n";
  out << "beta = " << scn.model.beta << "\n";
  out << "base_ns = " << scn.model.base_ns << "\n";
  out << "placement = "
      << (scn.model.placement == Placement::kEqualSpread ? "equal_spread"
                                                         : "greedy")
      << "\n";
  out << "jitter = " << scn.model.jitter << "\n";
  out << "duration = " << scn.model.duration_s << "\n";
  out << "seed = " << scn.model.seed << "\n";
  return out.str();
}

}  // namespace emusched::sim
