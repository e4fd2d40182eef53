#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "emusched/cli.hpp"
#include "emusched/errors.hpp"

namespace {

std::set<int> parse_sizes(const std::string& sizes_csv) {
  std::set<int> out;
  std::string token;
  std::istringstream in(sizes_csv);
  while (std::getline(in, token, ',')) {
    if (!token.empty()) out.insert(std::stoi(token));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"emusched: adaptive emulator-thread CPU affinity controller"};
  app.require_subcommand(1);

  emusched::cli::DaemonOptions daemon_opts;
  std::string daemon_config, daemon_procroot, daemon_cgroup_root, daemon_out;
  auto* daemon = app.add_subcommand("daemon", "run the live control loop");
  daemon->add_option("--config", daemon_config, "config file")->required();
  daemon->add_option("--procroot", daemon_procroot, "proc filesystem root");
  daemon->add_option("--cgroup-root", daemon_cgroup_root, "cgroup filesystem root");
  daemon->add_option("--out", daemon_out, "decision log path (default stdout)");
  daemon->add_flag("--dry-run", daemon_opts.dry_run,
                   "log decisions without touching the system");
  daemon->add_option("--ticks", daemon_opts.max_ticks,
                     "stop after this many ticks (for testing)");
  daemon->add_flag("--verbose", daemon_opts.verbosity, "log progress to stderr");

  emusched::cli::SimulateOptions sim_opts;
  std::string sim_scenario, sim_config, sim_out;
  auto* simulate = app.add_subcommand("simulate", "run a scenario closed-loop");
  simulate->add_option("--scenario", sim_scenario, "scenario file")->required();
  simulate->add_option("--config", sim_config, "config file (controller settings)");
  simulate->add_option("--out", sim_out, "output directory")->required();
  simulate->add_flag("--verbose", sim_opts.verbosity, "log progress to stderr");

  emusched::cli::EnumerateOptions enum_opts;
  std::string enum_sizes;
  auto* enumerate =
      app.add_subcommand("enumerate", "count distinct emulator binding strategies");
  enumerate->add_option("--small", enum_opts.small, "number of small cores")
      ->required();
  enumerate->add_option("--big", enum_opts.big, "number of big cores")->required();
  enumerate->add_option("--vms", enum_opts.vms, "number of VMs")->required();
  enumerate->add_option("--sizes", enum_sizes,
                        "allowed per-VM subset sizes, e.g. 1,2,4,8");
  enumerate->add_flag("--verbose", enum_opts.verbose,
                      "list the canonical signatures");

  emusched::cli::ReplayOptions replay_opts;
  std::string replay_trace, replay_config, replay_out, replay_small, replay_big;
  auto* replay = app.add_subcommand("replay", "re-run a recorded snapshot trace");
  replay->add_option("trace", replay_trace, "snapshot CSV")->required();
  replay->add_option("--config", replay_config, "config file");
  replay->add_option("--small", replay_small, "small core cpulist, e.g. 0-3");
  replay->add_option("--big", replay_big, "big core cpulist");
  replay->add_option("--out", replay_out, "decision log path (default stdout)");

  emusched::cli::ReportOptions report_opts;
  std::string report_in, report_out;
  auto* report = app.add_subcommand("report", "trimmed P95 report for a series");
  report->add_option("input", report_in, "time_s,value CSV")->required();
  report->add_option("--out", report_out, "stats CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (daemon->parsed()) {
      daemon_opts.config = daemon_config;
      if (!daemon_procroot.empty()) daemon_opts.procroot = daemon_procroot;
      if (!daemon_cgroup_root.empty()) daemon_opts.cgroup_root = daemon_cgroup_root;
      if (!daemon_out.empty()) daemon_opts.out = daemon_out;
      return emusched::cli::cmd_daemon(daemon_opts);
    }
    if (simulate->parsed()) {
      sim_opts.scenario = sim_scenario;
      if (!sim_config.empty()) sim_opts.config = sim_config;
      sim_opts.out_dir = sim_out;
      return emusched::cli::cmd_simulate(sim_opts);
    }
    if (enumerate->parsed()) {
      if (!enum_sizes.empty()) enum_opts.sizes = parse_sizes(enum_sizes);
      return emusched::cli::cmd_enumerate(enum_opts);
    }
    if (replay->parsed()) {
      replay_opts.trace = replay_trace;
      if (!replay_config.empty()) replay_opts.config = replay_config;
      if (!replay_out.empty()) replay_opts.out = replay_out;
      if (!replay_small.empty()) replay_opts.small = replay_small;
      if (!replay_big.empty()) replay_opts.big = replay_big;
      return emusched::cli::cmd_replay(replay_opts);
    }
    if (report->parsed()) {
      report_opts.input = report_in;
      if (!report_out.empty()) report_opts.out = report_out;
      return emusched::cli::cmd_report(report_opts);
    }
  } catch (const emusched::Error& e) {
    std::cerr << "emusched: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "emusched: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
