#include "emusched/cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <thread>

#include "emusched/actuator.hpp"
#include "emusched/config.hpp"
#include "emusched/controller.hpp"
#include "emusched/metrics.hpp"
#include "emusched/report.hpp"
#include "emusched/simkvm.hpp"
#include "emusched/strategy.hpp"
#include "emusched/telemetry.hpp"
#include "emusched/trace.hpp"

namespace emusched::cli {

namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};

void handle_stop(int) { g_stop.store(true); }

// Writes the tick's decisions: one row per BIND, or a NO_OP row when the
// state changed with nothing to apply.
void log_tick(trace::DecisionLog& log, std::uint64_t ts,
              control::StateKind prev_state, control::StateKind new_state,
              const std::vector<control::Action>& actions) {
  for (const auto& action : actions) {
    log.bind(ts, new_state, action.vm_id, action.cores);
  }
  if (actions.empty() && new_state != prev_state) {
    log.no_op(ts, new_state);
  }
}

std::unique_ptr<std::ofstream> open_out(const std::optional<fs::path>& path,
                                        std::ostream*& stream) {
  if (!path) {
    stream = &std::cout;
    return nullptr;
  }
  auto file = std::make_unique<std::ofstream>(*path);
  if (!*file) throw Error("cannot write " + path->string());
  stream = file.get();
  return file;
}

struct VmSeries {
  std::vector<report::SeriesPoint> proxy;
};

void write_metrics_csv(const fs::path& path, const sim::RunTrace& trace) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "time_s,vm_id,emulator_ratio,emu_delay_rate,vcpu_delay_rate,"
         "emu_cpu_util,vcpu_cpu_util,proxy_ns,state,sys_util,disparity\n";
  out.precision(12);
  for (const auto& tick : trace.ticks) {
    double t = static_cast<double>(tick.timestamp_ns) / 1e9;
    for (const auto& [vm, m] : tick.vm_metrics) {
      auto proxy = tick.latency_proxy_ns.find(vm);
      out << t << ',' << vm << ',' << m.emulator_ratio << ','
          << m.emu_run_delay_rate << ',' << m.vcpu_run_delay_rate << ','
          << m.emu_cpu_util << ',' << m.vcpu_cpu_util << ','
          << (proxy == tick.latency_proxy_ns.end() ? 0.0 : proxy->second) << ','
          << control::state_name(tick.state) << ',' << tick.system_cpu_util
          << ',' << tick.disparity << '\n';
    }
  }
}

void write_snapshot_csv(const fs::path& path, const sim::RunTrace& trace) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  trace::SnapshotTraceWriter writer(out);
  for (const auto& snap : trace.snapshots) {
    writer.write(snap, trace.vm_threads);
  }
}

void write_decisions_csv(const fs::path& path, const sim::RunTrace& trace) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  trace::DecisionLog log(out);
  control::StateKind prev = control::StateKind::kInitial;
  for (const auto& tick : trace.ticks) {
    log_tick(log, tick.timestamp_ns, prev, tick.state, tick.actions);
    prev = tick.state;
  }
}

std::map<std::string, VmSeries> proxy_series(const sim::RunTrace& trace) {
  std::map<std::string, VmSeries> out;
  for (const auto& tick : trace.ticks) {
    double t = static_cast<double>(tick.timestamp_ns) / 1e9;
    for (const auto& [vm, proxy] : tick.latency_proxy_ns) {
      out[vm].proxy.push_back({t, proxy});
    }
  }
  return out;
}

}  // namespace

int cmd_daemon(const DaemonOptions& opts) {
  config::AppConfig cfg = config::load_config(opts.config);
  if (opts.procroot) cfg.procroot = *opts.procroot;
  if (opts.cgroup_root) cfg.cgroup_root = *opts.cgroup_root;
  cfg.validate();

  if (!fs::exists(cfg.procroot / "stat")) {
    std::cerr << "emusched: procroot " << cfg.procroot.string()
              << " is not readable (missing stat)\n";
    return 2;
  }

  std::unique_ptr<actuate::ActuatorBackend> backend;
  if (opts.dry_run || cfg.backend == config::BackendKind::kNone) {
    backend = std::make_unique<actuate::RecordingBackend>();
  } else if (cfg.backend == config::BackendKind::kCgroup) {
    backend = std::make_unique<actuate::CgroupBackend>(cfg.cgroup_root,
                                                       cfg.cgroup_path_template);
  } else {
    backend = std::make_unique<actuate::ThreadAffinityBackend>();
  }

  telemetry::Collector collector(cfg.procroot, cfg.discovery);
  metrics::MetricsEngine engine;
  auto logger = [&](const std::string& msg) {
    if (opts.verbosity > 0) std::cerr << "emusched: " << msg << '\n';
  };
  control::Controller controller(cfg.controller, cfg.topology, logger);

  std::ostream* log_stream = nullptr;
  auto log_file = open_out(opts.out, log_stream);
  trace::DecisionLog decision_log(*log_stream);

  std::signal(SIGINT, handle_stop);
  std::signal(SIGTERM, handle_stop);
  g_stop.store(false);

  std::set<int> topo_cores;
  for (int c : cfg.topology.small_cores) topo_cores.insert(c);
  for (int c : cfg.topology.big_cores) topo_cores.insert(c);

  std::map<std::string, std::set<int>> retry;
  control::StateKind prev_state = controller.state();

  for (int tick = 0; opts.max_ticks < 0 || tick < opts.max_ticks; ++tick) {
    if (g_stop.load()) break;
    if (tick > 0) {
      for (int slept = 0; slept < cfg.controller.tick_period_s * 10; ++slept) {
        if (g_stop.load()) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
      }
      if (g_stop.load()) break;
    }

    auto vm_ids = collector.discover();
    telemetry::CollectWarnings warnings;
    telemetry::TelemetrySnapshot snap;
    try {
      snap = collector.snapshot(&warnings);
    } catch (const telemetry::SourceUnavailable& e) {
      std::cerr << "emusched: " << e.what() << '\n';
      return 2;
    }
    for (int tid : warnings.threads_gone) {
      logger("thread " + std::to_string(tid) + " vanished during collection");
    }

    // Utilization scoped to the managed cores.
    for (auto it = snap.per_core_util.begin(); it != snap.per_core_util.end();) {
      it = topo_cores.count(it->first) ? std::next(it)
                                       : snap.per_core_util.erase(it);
    }

    std::vector<const telemetry::VmRecord*> records;
    for (const auto& [id, rec] : collector.vms()) records.push_back(&rec);
    metrics::EngineWarnings ew;
    auto sys = engine.update(records, snap, &ew);
    for (int tid : ew.counter_resets) {
      logger("counter reset on tid " + std::to_string(tid) + ", delta skipped");
    }

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

    auto actions = controller.tick(input);
    // Re-issue bindings that failed on a previous tick, then the new ones.
    std::map<std::string, std::set<int>> to_apply = retry;
    retry.clear();
    for (const auto& action : actions) to_apply[action.vm_id] = action.cores;
    for (const auto& [vm_id, cores] : to_apply) {
      auto* rec = collector.find_vm(vm_id);
      if (!rec) continue;
      actuate::BindingRequest req;
      req.vm_id = vm_id;
      req.tids = rec->tids(telemetry::ThreadClass::kEmulator);
      req.cores = cores;
      if (req.tids.empty()) {
        logger("VM " + vm_id + " has no emulator threads to bind");
        continue;
      }
      try {
        auto report = backend->apply(req);
        for (int tid : report.vanished_tids) {
          logger("tid " + std::to_string(tid) + " vanished while binding " + vm_id);
        }
        // Partial failure must not go unnoticed: read the effective set back.
        if (backend->verify(vm_id) != cores) {
          logger("verify mismatch for " + vm_id + ", will re-apply");
          retry[vm_id] = cores;
        }
      } catch (const Error& e) {
        logger(std::string("actuation failed, will retry: ") + e.what());
        retry[vm_id] = cores;
      }
    }
    log_tick(decision_log, snap.timestamp_ns, prev_state, controller.state(),
             actions);
    prev_state = controller.state();
    log_stream->flush();
  }

  // Final state flush on shutdown.
  auto now = std::chrono::duration_cast<std::chrono::nanoseconds>(
                 std::chrono::steady_clock::now().time_since_epoch())
                 .count();
  decision_log.no_op(static_cast<std::uint64_t>(now), controller.state());
  log_stream->flush();
  return 0;
}

int cmd_simulate(const SimulateOptions& opts) {
  sim::Scenario scenario = sim::parse_scenario_file(opts.scenario);
  control::ControllerConfig ctl_cfg;
  if (opts.config) {
    ctl_cfg = config::load_config(*opts.config).controller;
  }

  fs::create_directories(opts.out_dir);

  auto logger = [&](const std::string& msg) {
    if (opts.verbosity > 0) std::cerr << "emusched: " << msg << '\n';
  };
  control::Controller controller(ctl_cfg, scenario.topology(), logger);
  sim::RunTrace controlled = sim::run(scenario, &controller);
  sim::RunTrace baseline = sim::run(scenario, nullptr);

  write_snapshot_csv(opts.out_dir / "controller_snapshots.csv", controlled);
  write_snapshot_csv(opts.out_dir / "baseline_snapshots.csv", baseline);
  write_metrics_csv(opts.out_dir / "controller_metrics.csv", controlled);
  write_metrics_csv(opts.out_dir / "baseline_metrics.csv", baseline);
  write_decisions_csv(opts.out_dir / "controller_decisions.csv", controlled);

  auto controlled_series = proxy_series(controlled);
  auto baseline_series = proxy_series(baseline);
  for (const auto& [vm, series] : controlled_series) {
    report::write_series_csv(opts.out_dir / ("proxy_" + vm + "_controller.csv"),
                             series.proxy);
  }
  for (const auto& [vm, series] : baseline_series) {
    report::write_series_csv(opts.out_dir / ("proxy_" + vm + "_baseline.csv"),
                             series.proxy);
  }

  std::ofstream summary(opts.out_dir / "summary.csv");
  if (!summary) throw Error("cannot write summary.csv");
  summary << "vm_id,controller_p95_ns,baseline_p95_ns,improvement_pct\n";
  summary.precision(12);
  for (const auto& [vm, series] : controlled_series) {
    auto ctl = report::summarize(series.proxy);
    auto base = report::summarize(baseline_series.at(vm).proxy);
    double improvement = base.p95 > 0 ? (base.p95 - ctl.p95) / base.p95 * 100.0 : 0.0;
    summary << vm << ',' << ctl.p95 << ',' << base.p95 << ',' << improvement
            << '\n';
  }

  if (controlled.converged_tick) {
    std::cout << "converged at tick " << *controlled.converged_tick << '\n';
  } else {
    std::cout << "controller did not reach the stable state\n";
  }
  std::cout << "wrote " << opts.out_dir.string() << "/summary.csv\n";
  return 0;
}

int cmd_enumerate(const EnumerateOptions& opts) {
  auto signatures =
      strategy::enumerate_strategies(opts.small, opts.big, opts.vms, opts.sizes);
  std::cout << signatures.size() << '\n';
  if (opts.verbose) {
    std::vector<std::string> lines;
    lines.reserve(signatures.size());
    for (const auto& sig : signatures) lines.push_back(sig.to_string());
    std::sort(lines.begin(), lines.end());
    for (const auto& line : lines) std::cout << line << '\n';
  }
  return 0;
}

int cmd_replay(const ReplayOptions& opts) {
  trace::ReplayData data = trace::read_snapshot_trace(opts.trace);

  config::AppConfig cfg;
  if (opts.config) cfg = config::load_config(*opts.config);
  if (opts.small) {
    auto cores = actuate::parse_cpulist(*opts.small);
    cfg.topology.small_cores.assign(cores.begin(), cores.end());
  }
  if (opts.big) {
    auto cores = actuate::parse_cpulist(*opts.big);
    cfg.topology.big_cores.assign(cores.begin(), cores.end());
  }
  if (cfg.topology.small_cores.empty()) {
    throw config::ConfigError("replay needs a topology (--small or --config)");
  }

  std::vector<telemetry::VmRecord> records;
  std::vector<std::string> vm_ids;
  for (const auto& [vm_id, threads] : data.vm_threads) {
    telemetry::VmRecord rec(vm_id, 0, cfg.discovery.ring_capacity);
    rec.threads = threads;
    records.push_back(std::move(rec));
    vm_ids.push_back(vm_id);
  }
  std::vector<const telemetry::VmRecord*> record_ptrs;
  for (const auto& r : records) record_ptrs.push_back(&r);

  metrics::MetricsEngine engine;
  control::Controller controller(cfg.controller, cfg.topology);
  actuate::RecordingBackend backend;

  std::ostream* log_stream = nullptr;
  auto log_file = open_out(opts.out, log_stream);
  trace::DecisionLog log(*log_stream);
  control::StateKind prev_state = controller.state();

  for (const auto& snap : data.snapshots) {
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
    auto actions = controller.tick(input);
    for (const auto& action : actions) {
      actuate::BindingRequest req;
      req.vm_id = action.vm_id;
      for (const auto& rec : records) {
        if (rec.vm_id == action.vm_id) {
          req.tids = rec.tids(telemetry::ThreadClass::kEmulator);
        }
      }
      req.cores = action.cores;
      backend.apply(req);
    }
    log_tick(log, snap.timestamp_ns, prev_state, controller.state(), actions);
    prev_state = controller.state();
  }
  log_stream->flush();
  return 0;
}

int cmd_report(const ReportOptions& opts) {
  auto series = report::read_series_csv(opts.input);
  auto stats = report::summarize(series);
  std::cout << "samples_retained=" << stats.retained << " p95=" << stats.p95
            << " mean=" << stats.mean << " max=" << stats.max
            << " peaks=" << stats.peaks << '\n';
  if (opts.out) {
    std::ofstream out(*opts.out);
    if (!out) throw Error("cannot write " + opts.out->string());
    out << "samples_retained,p95,mean,max,peaks\n";
    out.precision(12);
    out << stats.retained << ',' << stats.p95 << ',' << stats.mean << ','
        << stats.max << ',' << stats.peaks << '\n';
  }
  return 0;
}

}  // namespace emusched::cli
