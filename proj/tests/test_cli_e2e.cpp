#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "emusched/cli.hpp"
#include "emusched/telemetry.hpp"
#include "emusched/trace.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args) {
  static int invocation = 0;
  testutil::TempDir tmp("cli_io_" + std::to_string(invocation++));
  fs::path out = tmp.path() / "stdout";
  fs::path err = tmp.path() / "stderr";
  std::string cmd = std::string(EMUSCHED_BIN) + " " + args + " >" + out.string() +
                    " 2>" + err.string();
  int rc = std::system(cmd.c_str());
  CliResult result;
  result.exit_code = WEXITSTATUS(rc);
  result.out = testutil::read_file(out);
  result.err = testutil::read_file(err);
  return result;
}

int count_lines(const std::string& text, const std::string& needle) {
  int count = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find(needle) != std::string::npos) ++count;
  }
  return count;
}

}  // namespace

TEST_CASE("enumerate prints the strategy-space cardinality") {
  CHECK(run_cli("enumerate --small 4 --big 4 --vms 2 --sizes 1,2,4,8").out ==
        "220\n");
  CHECK(run_cli("enumerate --small 4 --big 4 --vms 2").out == "1225\n");
  CHECK(run_cli("enumerate --small 1 --big 0 --vms 1").out == "2\n");

  auto verbose = run_cli("enumerate --small 1 --big 1 --vms 1 --sizes 1,2 --verbose");
  CHECK(verbose.exit_code == 0);
  CHECK(verbose.out.substr(0, 2) == "3\n");
  CHECK(verbose.out.find("S:{1}=1;B:{1}=1") != std::string::npos);
}

TEST_CASE("report applies the trimmed nearest-rank protocol end to end") {
  testutil::TempDir tmp("report");
  fs::path csv = tmp.path() / "series.csv";
  std::ofstream out(csv);
  out << "time_s,value\n";
  for (int t = 0; t < 120; ++t) {
    double value = (t >= 10 && t <= 109) ? (t - 9) : 5000.0;
    out << t << ',' << value << '\n';
  }
  out.close();

  auto result = run_cli("report " + csv.string());
  CHECK(result.exit_code == 0);
  CHECK(result.out.find("samples_retained=100") != std::string::npos);
  CHECK(result.out.find("p95=95") != std::string::npos);

  auto missing = run_cli("report /nonexistent.csv");
  CHECK(missing.exit_code != 0);
}

TEST_CASE("simulate produces traces, proxies, and a summary") {
  testutil::TempDir tmp("simulate");
  fs::path out_dir = tmp.path() / "out";
  std::string scn = std::string(EMUSCHED_SCENARIOS) + "/colocated.scn";

  auto result = run_cli("simulate --scenario " + scn + " --out " + out_dir.string());
  REQUIRE(result.exit_code == 0);
  CHECK(result.out.find("converged at tick") != std::string::npos);

  auto metrics = testutil::read_file(out_dir / "controller_metrics.csv");
  CHECK(count_lines(metrics, ",hiratio,") == 120);  // one row per tick per VM
  CHECK(count_lines(metrics, ",loratio,") == 120);

  auto summary = testutil::read_file(out_dir / "summary.csv");
  REQUIRE(count_lines(summary, "hiratio") == 1);
  REQUIRE(count_lines(summary, "loratio") == 1);
  std::istringstream sum(summary);
  std::string line;
  std::getline(sum, line);  // header
  while (std::getline(sum, line)) {
    std::istringstream row(line);
    std::string vm, ctl_s, base_s;
    std::getline(row, vm, ',');
    std::getline(row, ctl_s, ',');
    std::getline(row, base_s, ',');
    CHECK(std::stod(ctl_s) <= std::stod(base_s));
  }

  // The per-VM proxy series feeds the report command directly.
  auto rep = run_cli("report " + (out_dir / "proxy_hiratio_controller.csv").string());
  CHECK(rep.exit_code == 0);
  CHECK(rep.out.find("samples_retained=100") != std::string::npos);

  auto bad = run_cli("simulate --scenario /nonexistent.scn --out " +
                     (tmp.path() / "x").string());
  CHECK(bad.exit_code != 0);
}

namespace {

// Synthesizes a constant-rate snapshot trace; per-VM emulator delay spikes
// can be injected over a tick range.
void write_synthetic_trace(const fs::path& path, int ticks, int spike_vm2_from,
                           int spike_vm2_to) {
  using emusched::telemetry::TelemetrySnapshot;
  using emusched::telemetry::ThreadInfo;
  std::map<std::string, std::vector<ThreadInfo>> vm_threads;
  vm_threads["vm1"] = {
      {110, "CPU 0/KVM", emusched::telemetry::ThreadClass::kVcpu},
      {111, "worker", emusched::telemetry::ThreadClass::kEmulator}};
  vm_threads["vm2"] = {
      {210, "CPU 0/KVM", emusched::telemetry::ThreadClass::kVcpu},
      {211, "worker", emusched::telemetry::ThreadClass::kEmulator}};

  std::ofstream out(path);
  emusched::trace::SnapshotTraceWriter writer(out);
  std::uint64_t vm2_emu_delay = 0;
  for (int tick = 0; tick <= ticks; ++tick) {
    std::uint64_t ts = static_cast<std::uint64_t>(tick) * 1'000'000'000ull;
    bool spiking = tick >= spike_vm2_from && tick <= spike_vm2_to;
    vm2_emu_delay += spiking ? 10'000'000ull : 1'000'000ull;

    TelemetrySnapshot snap;
    snap.timestamp_ns = ts;
    auto t64 = static_cast<std::uint64_t>(tick);
    snap.per_thread[110] = {t64 * 500'000'000, t64 * 1'000'000, t64};
    snap.per_thread[111] = {t64 * 100'000'000, t64 * 1'000'000, t64};
    snap.per_thread[210] = {t64 * 500'000'000, t64 * 1'000'000, t64};
    snap.per_thread[211] = {t64 * 100'000'000, vm2_emu_delay, t64};
    for (int core = 0; core < 8; ++core) snap.per_core_util[core] = 0.5;
    writer.write(snap, vm_threads);
  }
}

}  // namespace

TEST_CASE("replay is deterministic and quiesces on a stable trace") {
  testutil::TempDir tmp("replay");
  fs::path trace_csv = tmp.path() / "trace.csv";
  write_synthetic_trace(trace_csv, 100, -1, -1);

  emusched::cli::ReplayOptions opts;
  opts.trace = trace_csv;
  opts.small = "0-3";
  opts.big = "4-7";
  opts.out = tmp.path() / "log1.csv";
  REQUIRE(emusched::cli::cmd_replay(opts) == 0);
  opts.out = tmp.path() / "log2.csv";
  REQUIRE(emusched::cli::cmd_replay(opts) == 0);

  auto log1 = testutil::read_file(tmp.path() / "log1.csv");
  auto log2 = testutil::read_file(tmp.path() / "log2.csv");
  CHECK(log1 == log2);
  CHECK_FALSE(log1.empty());

  // Quiescence: no BIND rows in the second half of the run.
  std::istringstream in(log1);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find(",BIND,") == std::string::npos) continue;
    auto ts = std::stoull(line.substr(0, line.find(',')));
    CHECK(ts <= 50'000'000'000ull);
  }
}

TEST_CASE("replaying an injected anomaly rebind-downscales the implicated VM once") {
  testutil::TempDir tmp("replay_anomaly");
  fs::path trace_csv = tmp.path() / "trace.csv";
  write_synthetic_trace(trace_csv, 100, 60, 62);  // 3 anomalous ticks

  emusched::cli::ReplayOptions opts;
  opts.trace = trace_csv;
  opts.small = "0-3";
  opts.big = "4-7";
  opts.out = tmp.path() / "log.csv";
  REQUIRE(emusched::cli::cmd_replay(opts) == 0);

  auto log = testutil::read_file(*opts.out);
  std::istringstream in(log);
  std::string line;
  int rebinds_after_spike = 0;
  unsigned long long last_bind_ts = 0;
  while (std::getline(in, line)) {
    if (line.find(",BIND,") == std::string::npos) continue;
    auto ts = std::stoull(line.substr(0, line.find(',')));
    if (ts >= 60'000'000'000ull) {
      CHECK(line.find(",vm2,") != std::string::npos);  // vm1 is left alone
      if (line.find(",BIND,0-3") != std::string::npos &&
          line.find("DOWNSCALING") != std::string::npos) {
        ++rebinds_after_spike;
      }
      last_bind_ts = std::max(last_bind_ts, ts);
    }
  }
  CHECK(rebinds_after_spike >= 1);
  CHECK(last_bind_ts < 90'000'000'000ull);  // quiet again well before the end
}

TEST_CASE("daemon dry-runs against a fixture procroot") {
  testutil::TempDir tmp("daemon");
  fs::path procroot = tmp.path() / "proc";
  fs::path task = procroot / "300" / "task";
  testutil::write_file(procroot / "300" / "cmdline",
                       std::string("qemu-system\0-name\0g", 19));
  testutil::write_file(task / "300" / "comm", "CPU 0/KVM\n");
  testutil::write_file(task / "300" / "schedstat", "1000 10 1\n");
  testutil::write_file(task / "301" / "comm", "worker\n");
  testutil::write_file(task / "301" / "schedstat", "2000 20 1\n");
  testutil::write_file(procroot / "stat",
                       "cpu  8 0 0 8 0 0 0 0\n"
                       "cpu0 1 0 0 1 0 0 0 0\ncpu1 1 0 0 1 0 0 0 0\n"
                       "cpu2 1 0 0 1 0 0 0 0\ncpu3 1 0 0 1 0 0 0 0\n"
                       "cpu4 1 0 0 1 0 0 0 0\ncpu5 1 0 0 1 0 0 0 0\n"
                       "cpu6 1 0 0 1 0 0 0 0\ncpu7 1 0 0 1 0 0 0 0\n");

  fs::path config = tmp.path() / "emusched.conf";
  testutil::write_file(config,
                       "[topology]\nsmall = 0-3\nbig = 4-7\n"
                       "[telemetry]\nmarker = qemu\n");

  fs::path log = tmp.path() / "decisions.csv";
  auto result = run_cli("daemon --config " + config.string() + " --procroot " +
                        procroot.string() + " --dry-run --ticks 2 --out " +
                        log.string());
  CHECK(result.exit_code == 0);

  auto log_text = testutil::read_file(log);
  CHECK(log_text.find("timestamp,state,vm_id,action,cpulist") == 0);
  CHECK(log_text.find(",300,BIND,0-3") != std::string::npos);  // initial bind
  // No cgroup files were touched anywhere under the temp dir.
  CHECK_FALSE(fs::exists(tmp.path() / "300"));

  auto bad = run_cli("daemon --config " + config.string() +
                     " --procroot /nonexistent_procroot --dry-run --ticks 1");
  CHECK(bad.exit_code == 2);
  CHECK(bad.err.find("/nonexistent_procroot") != std::string::npos);
}

TEST_CASE("daemon shuts down cleanly on SIGTERM and flushes the log") {
  testutil::TempDir tmp("daemon_term");
  fs::path procroot = tmp.path() / "proc";
  testutil::write_file(procroot / "stat", "cpu0 1 0 0 1 0 0 0 0\n");
  fs::path config = tmp.path() / "emusched.conf";
  testutil::write_file(config, "[topology]\nsmall = 0-3\nbig = 4-7\n");
  fs::path log = tmp.path() / "decisions.csv";

  std::string script = std::string(EMUSCHED_BIN) + " daemon --config " +
                       config.string() + " --procroot " + procroot.string() +
                       " --dry-run --out " + log.string() +
                       " & pid=$!; sleep 2; kill -TERM $pid; wait $pid";
  int rc = std::system(("sh -c '" + script + "'").c_str());
  CHECK(WEXITSTATUS(rc) == 0);

  auto log_text = testutil::read_file(log);
  CHECK(log_text.find("timestamp,state,vm_id,action,cpulist") == 0);
  CHECK(log_text.find("NO_OP") != std::string::npos);  // final state flush
}
