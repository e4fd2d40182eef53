#include "emusched/simkvm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace emusched::sim {

namespace fs = std::filesystem;
using telemetry::RawSchedstat;
using telemetry::TelemetrySnapshot;
using telemetry::ThreadClass;

double SimThread::demand_at(double t) const {
  double demand = 0.0;
  for (const auto& step : schedule) {
    if (step.start_s > t) break;
    demand = step.demand;
  }
  return demand;
}

strategy::CoreTopology Scenario::topology() const {
  strategy::CoreTopology topo;
  for (const auto& core : cores) {
    if (core.type == strategy::CoreType::kSmall) {
      topo.small_cores.push_back(core.id);
    } else {
      topo.big_cores.push_back(core.id);
    }
  }
  return topo;
}

void Scenario::validate() const {
  if (version != 1) throw ScenarioParseError("unsupported scenario version");
  if (model.duration_s <= 0) throw ScenarioParseError("duration must be positive");
  if (model.alpha < 0 || model.beta < 0 || model.base_ns < 0) {
    throw ScenarioParseError("latency proxy coefficients must be non-negative");
  }
  if (model.jitter < 0 || model.jitter >= 1) {
    throw ScenarioParseError("jitter must be in [0, 1)");
  }
  if (cores.empty()) throw ScenarioParseError("scenario defines no cores");
  std::set<int> core_ids;
  for (const auto& core : cores) {
    if (core.capacity <= 0) throw ScenarioParseError("core capacity must be positive");
    if (!core_ids.insert(core.id).second) {
      throw ScenarioParseError("duplicate core id " + std::to_string(core.id));
    }
  }
  std::set<std::string> vm_ids;
  std::set<int> pids, tids;
  for (const auto& vm : vms) {
    if (!vm_ids.insert(vm.vm_id).second) {
      throw ScenarioParseError("duplicate vm id " + vm.vm_id);
    }
    if (!pids.insert(vm.pid).second) {
      throw ScenarioParseError("duplicate pid " + std::to_string(vm.pid));
    }
    auto check_affinity = [&](const std::set<int>& aff, const char* what) {
      if (aff.empty()) {
        throw ScenarioParseError(vm.vm_id + ": empty " + what + " affinity");
      }
      for (int c : aff) {
        if (!core_ids.count(c)) {
          throw ScenarioParseError(vm.vm_id + ": " + what + " affinity names core " +
                                   std::to_string(c) + " not in [cores]");
        }
      }
    };
    check_affinity(vm.vcpu_affinity, "vcpu");
    check_affinity(vm.emu_affinity, "emulator");
    for (const auto& t : vm.threads) {
      if (!tids.insert(t.tid).second) {
        throw ScenarioParseError("duplicate tid " + std::to_string(t.tid));
      }
      for (const auto& step : t.schedule) {
        if (step.demand < 0.0 || step.demand > 1.0) {
          throw ScenarioParseError(vm.vm_id + ": thread demand outside [0,1]");
        }
      }
    }
  }
}

namespace {

std::string thread_name(const SimVm& vm, int index_in_class, ThreadClass cls) {
  if (cls == ThreadClass::kVcpu) {
    return "CPU " + std::to_string(index_in_class) + "/KVM";
  }
  (void)vm;
  return "qemu-emu-" + std::to_string(index_in_class);
}

std::vector<telemetry::ThreadInfo> thread_infos(const SimVm& vm) {
  std::vector<telemetry::ThreadInfo> out;
  int vcpu_idx = 0, emu_idx = 0;
  for (const auto& t : vm.threads) {
    int idx = t.cls == ThreadClass::kVcpu ? vcpu_idx++ : emu_idx++;
    out.push_back(telemetry::ThreadInfo{t.tid, thread_name(vm, idx, t.cls), t.cls});
  }
  return out;
}

}  // namespace

SimHost::SimHost(Scenario scenario)
    : scenario_(std::move(scenario)), rng_(scenario_.model.seed) {
  scenario_.validate();
  for (const auto& vm : scenario_.vms) {
    for (const auto& t : vm.threads) {
      affinity_[t.tid] =
          t.cls == ThreadClass::kVcpu ? vm.vcpu_affinity : vm.emu_affinity;
      counters_[t.tid] = RawSchedstat{};
    }
  }
}

void SimHost::set_affinity(const std::vector<int>& tids, const std::set<int>& cores) {
  if (cores.empty()) throw UnaffinedThread("affinity update with no cores");
  for (int tid : tids) {
    auto it = affinity_.find(tid);
    if (it == affinity_.end()) {
      throw UnaffinedThread("unknown tid " + std::to_string(tid));
    }
    it->second = cores;
  }
}

const std::set<int>& SimHost::affinity_of(int tid) const {
  auto it = affinity_.find(tid);
  if (it == affinity_.end()) {
    throw UnaffinedThread("unknown tid " + std::to_string(tid));
  }
  return it->second;
}

std::vector<int> SimHost::emulator_tids(const std::string& vm_id) const {
  for (const auto& vm : scenario_.vms) {
    if (vm.vm_id != vm_id) continue;
    std::vector<int> out;
    for (const auto& t : vm.threads) {
      if (t.cls == ThreadClass::kEmulator) out.push_back(t.tid);
    }
    return out;
  }
  return {};
}

TelemetrySnapshot SimHost::step(double dt_s) {
  std::map<int, double> capacity;
  for (const auto& core : scenario_.cores) capacity[core.id] = core.capacity;

  // Effective demand this tick, with optional seeded noise.
  std::map<int, double> demand;
  for (const auto& vm : scenario_.vms) {
    for (const auto& t : vm.threads) {
      double d = t.demand_at(now_s_);
      if (scenario_.model.jitter > 0.0) {
        std::uniform_real_distribution<double> noise(-scenario_.model.jitter,
                                                     scenario_.model.jitter);
        d = std::clamp(d * (1.0 + noise(rng_)), 0.0, 1.0);
      }
      demand[t.tid] = d;
    }
  }

  // Spread demand over allowed cores.
  std::map<int, double> core_load;
  std::map<int, std::map<int, double>> contribution;  // tid -> core -> demand
  for (const auto& [tid, aff] : affinity_) {
    if (aff.empty()) throw UnaffinedThread("tid " + std::to_string(tid));
    double d = demand[tid];
    if (d <= 0.0) continue;
    if (scenario_.model.placement == Placement::kEqualSpread) {
      double share = d / static_cast<double>(aff.size());
      for (int core : aff) {
        contribution[tid][core] = share;
        core_load[core] += share;
      }
    } else {
      // Greedy: the whole demand lands on the least-loaded allowed core.
      int best = *aff.begin();
      for (int core : aff) {
        if (core_load[core] < core_load[best]) best = core;
      }
      contribution[tid][best] = d;
      core_load[best] += d;
    }
  }

  // Over-subscribed cores serve proportional shares.
  std::map<int, double> factor;
  for (const auto& core : scenario_.cores) {
    double load = core_load.count(core.id) ? core_load[core.id] : 0.0;
    factor[core.id] = load > core.capacity ? core.capacity / load : 1.0;
    last_util_[core.id] = core.capacity > 0
                              ? std::min(load, core.capacity) / core.capacity
                              : 0.0;
    std::uint64_t busy_inc = static_cast<std::uint64_t>(
        std::llround(last_util_[core.id] * 100.0 * dt_s));
    std::uint64_t total_inc =
        static_cast<std::uint64_t>(std::llround(100.0 * dt_s));
    busy_jiffies_[core.id] += busy_inc;
    idle_jiffies_[core.id] += total_inc - std::min(busy_inc, total_inc);
  }

  for (const auto& [tid, per_core] : contribution) {
    double requested = demand[tid];
    double achieved = 0.0;
    for (const auto& [core, share] : per_core) {
      achieved += share * factor[core];
    }
    achieved = std::min(achieved, requested);
    RawSchedstat& c = counters_[tid];
    c.cpu_time_ns += static_cast<std::uint64_t>(std::llround(achieved * dt_s * 1e9));
    double delay_frac = requested > 0.0 ? (requested - achieved) / requested : 0.0;
    c.run_delay_ns +=
        static_cast<std::uint64_t>(std::llround(delay_frac * dt_s * 1e9));
    c.timeslices += 1;
  }

  now_s_ += dt_s;
  ++ticks_;
  return snapshot();
}

TelemetrySnapshot SimHost::snapshot() const {
  TelemetrySnapshot snap;
  snap.timestamp_ns = static_cast<std::uint64_t>(std::llround(now_s_ * 1e9));
  snap.per_thread = counters_;
  if (ticks_ > 0) snap.per_core_util = last_util_;
  return snap;
}

void SimHost::render_procfs(const fs::path& dir) const {
  fs::create_directories(dir);
  for (const auto& vm : scenario_.vms) {
    fs::path pid_dir = dir / std::to_string(vm.pid);
    fs::create_directories(pid_dir / "task");
    {
      std::ofstream cmdline(pid_dir / "cmdline", std::ios::binary);
      std::string args = "qemu-system-sim";
      args.push_back('\0');
      args += "-name";
      args.push_back('\0');
      args += "guest=" + vm.vm_id;
      args.push_back('\0');
      cmdline << args;
    }
    auto infos = thread_infos(vm);
    for (const auto& info : infos) {
      fs::path task_dir = pid_dir / "task" / std::to_string(info.tid);
      fs::create_directories(task_dir);
      std::ofstream comm(task_dir / "comm");
      comm << info.name << '\n';
      std::ofstream sched(task_dir / "schedstat");
      auto it = counters_.find(info.tid);
      sched << telemetry::format_schedstat(it == counters_.end() ? RawSchedstat{}
                                                                 : it->second)
            << '\n';
    }
  }
  std::ofstream stat(dir / "stat");
  std::uint64_t busy_all = 0, idle_all = 0;
  for (const auto& core : scenario_.cores) {
    auto b = busy_jiffies_.find(core.id);
    auto i = idle_jiffies_.find(core.id);
    busy_all += b == busy_jiffies_.end() ? 0 : b->second;
    idle_all += i == idle_jiffies_.end() ? 0 : i->second;
  }
  stat << "cpu  " << busy_all << " 0 0 " << idle_all << " 0 0 0 0\n";
  for (const auto& core : scenario_.cores) {
    auto b = busy_jiffies_.find(core.id);
    auto i = idle_jiffies_.find(core.id);
    stat << "cpu" << core.id << ' ' << (b == busy_jiffies_.end() ? 0 : b->second)
         << " 0 0 " << (i == idle_jiffies_.end() ? 0 : i->second)
         << " 0 0 0 0\n";
  }
}

actuate::ApplyReport SimBackend::apply(const actuate::BindingRequest& request) {
  if (request.cores.empty()) {
    throw actuate::EmptyCpuset("binding request with no cores");
  }
  actuate::ApplyReport report;
  std::vector<int> known;
  for (int tid : request.tids) {
    try {
      host_.affinity_of(tid);
      known.push_back(tid);
    } catch (const UnaffinedThread&) {
      report.vanished_tids.push_back(tid);
    }
  }
  if (!known.empty()) host_.set_affinity(known, request.cores);
  effective_[request.vm_id] = request.cores;
  return report;
}

std::set<int> SimBackend::verify(const std::string& vm_id) {
  auto tids = host_.emulator_tids(vm_id);
  if (!tids.empty()) return host_.affinity_of(tids.front());
  auto it = effective_.find(vm_id);
  if (it == effective_.end()) {
    throw actuate::BackendUnavailable("no binding recorded for VM " + vm_id);
  }
  return it->second;
}

RunTrace run(const Scenario& scenario, control::Controller* controller) {
  SimHost host(scenario);
  SimBackend backend(host);
  metrics::MetricsEngine engine;
  RunTrace trace;

  std::vector<telemetry::VmRecord> records;
  for (const auto& vm : scenario.vms) {
    telemetry::VmRecord rec(vm.vm_id, vm.pid, 120);
    rec.threads = thread_infos(vm);
    trace.vm_threads[vm.vm_id] = rec.threads;
    records.push_back(std::move(rec));
  }
  std::vector<const telemetry::VmRecord*> record_ptrs;
  for (const auto& r : records) record_ptrs.push_back(&r);

  engine.update(record_ptrs, host.snapshot());  // prime the delta baseline

  std::vector<std::string> vm_ids;
  for (const auto& vm : scenario.vms) vm_ids.push_back(vm.vm_id);

  int ticks = static_cast<int>(std::llround(scenario.model.duration_s));
  for (int tick = 1; tick <= ticks; ++tick) {
    TelemetrySnapshot snap = host.step(1.0);
    for (auto& rec : records) telemetry::append_history(rec, snap);

    auto sys = engine.update(record_ptrs, snap);

    control::ControllerInput input;
    input.timestamp_ns = snap.timestamp_ns;
    input.vms = vm_ids;
    input.per_core_util = snap.per_core_util;
    if (sys) {
      input.vm_metrics = sys->per_vm;
      input.system_cpu_util = sys->system_cpu_util;
      input.disparity = sys->disparity;
      input.metrics_valid = true;
    }

    TickRecord rec;
    rec.timestamp_ns = snap.timestamp_ns;
    rec.per_core_util = snap.per_core_util;
    if (sys) {
      rec.vm_metrics = sys->per_vm;
      rec.system_cpu_util = sys->system_cpu_util;
      rec.disparity = sys->disparity;
      for (const auto& [vm, m] : sys->per_vm) {
        rec.latency_proxy_ns[vm] = scenario.model.base_ns +
                                   scenario.model.alpha * m.vcpu_run_delay_rate +
                                   scenario.model.beta * m.emu_run_delay_rate;
      }
    }

    if (controller) {
      rec.actions = controller->tick(input);
      for (const auto& action : rec.actions) {
        actuate::BindingRequest req;
        req.vm_id = action.vm_id;
        req.tids = host.emulator_tids(action.vm_id);
        req.cores = action.cores;
        backend.apply(req);
      }
      rec.state = controller->state();
      if (!trace.converged_tick && rec.state == control::StateKind::kStable) {
        trace.converged_tick = tick;
      }
    }

    trace.snapshots.push_back(std::move(snap));
    trace.ticks.push_back(std::move(rec));
  }
  return trace;
}

std::map<int, double> emulator_delay_curve(const Scenario& scenario,
                                           const std::string& vm_id,
                                           const std::vector<int>& k_values,
                                           int settle_ticks) {
  std::map<int, double> out;
  auto topo = scenario.topology();
  for (int k : k_values) {
    SimHost host(scenario);
    auto tids = host.emulator_tids(vm_id);
    if (tids.empty()) throw Error("no emulator threads in VM " + vm_id);

    TelemetrySnapshot warm = host.step(1.0);  // measure utils as placed
    auto cores = control::choose_cores(k, topo.small_cores, warm.per_core_util);
    host.set_affinity(tids, cores);

    TelemetrySnapshot before;
    TelemetrySnapshot after = warm;
    for (int i = 0; i < std::max(settle_ticks, 2); ++i) {
      before = after;
      after = host.step(1.0);
    }
    double delay_delta = 0.0;
    for (int tid : tids) {
      delay_delta += static_cast<double>(after.per_thread.at(tid).run_delay_ns -
                                         before.per_thread.at(tid).run_delay_ns);
    }
    double wall = static_cast<double>(after.timestamp_ns - before.timestamp_ns);
    out[k] = metrics::run_delay_rate(delay_delta, wall);
  }
  return out;
}

namespace {

SimVm make_vm(const std::string& id, int pid, int vcpus, double vcpu_demand,
              int emulators, double emu_demand, std::set<int> vcpu_aff,
              std::set<int> emu_aff) {
  SimVm vm;
  vm.vm_id = id;
  vm.pid = pid;
  vm.vcpu_affinity = std::move(vcpu_aff);
  vm.emu_affinity = std::move(emu_aff);
  int tid = pid * 100;
  for (int i = 0; i < vcpus; ++i) {
    vm.threads.push_back(
        SimThread{tid++, ThreadClass::kVcpu, {{0.0, vcpu_demand}}});
  }
  for (int i = 0; i < emulators; ++i) {
    vm.threads.push_back(
        SimThread{tid++, ThreadClass::kEmulator, {{0.0, emu_demand}}});
  }
  return vm;
}

std::vector<SimCore> default_cores() {
  std::vector<SimCore> cores;
  for (int i = 0; i < 4; ++i) {
    cores.push_back(SimCore{i, strategy::CoreType::kSmall, 1.0});
  }
  for (int i = 4; i < 8; ++i) {
    cores.push_back(SimCore{i, strategy::CoreType::kBig, 2.0});
  }
  return cores;
}

}  // namespace

Scenario make_colocated_scenario(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  Scenario scn;
  scn.cores = default_cores();
  std::set<int> big = {4, 5, 6, 7};

  // vCPUs ride the big cores; the co-located baseline puts the emulators
  // there too and pushes the big cores past capacity.
  scn.vms.push_back(make_vm("hiratio", 101, 4, uniform(0.85, 0.99), 2,
                            uniform(0.65, 0.95), big, big));
  scn.vms.push_back(make_vm("loratio", 102, 4, uniform(0.85, 0.99), 1,
                            uniform(0.10, 0.30), big, big));

  scn.model.duration_s = 120.0;
  scn.model.seed = seed;
  return scn;
}

Scenario make_ramp_scenario() {
  Scenario scn;
  scn.cores = default_cores();
  std::set<int> big = {4, 5, 6, 7};
  std::set<int> small = {0, 1, 2, 3};

  SimVm vm = make_vm("ramp", 201, 4, 0.5, 2, 0.1, big, small);
  for (auto& t : vm.threads) {
    if (t.cls == ThreadClass::kVcpu) {
      t.schedule = {{0.0, 0.5}, {30.0, 0.8}, {60.0, 1.0}, {90.0, 1.0}};
    } else {
      t.schedule = {{0.0, 0.1}, {30.0, 0.2}, {60.0, 0.35}, {90.0, 0.5}};
    }
  }
  scn.vms.push_back(std::move(vm));
  scn.model.duration_s = 120.0;
  return scn;
}

Scenario make_curve_scenario() {
  Scenario scn;
  scn.cores = default_cores();
  std::set<int> big = {4, 5, 6, 7};
  std::set<int> small = {0, 1, 2, 3};

  scn.vms.push_back(make_vm("heavy", 301, 4, 0.9, 4, 1.0, big, small));
  scn.vms.push_back(make_vm("light", 302, 4, 0.9, 1, 1.0, big, small));
  scn.model.duration_s = 60.0;
  return scn;
}

}  // namespace emusched::sim
