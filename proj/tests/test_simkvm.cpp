#include <doctest.h>

#include <random>
#include <sstream>

#include "emusched/controller.hpp"
#include "emusched/simkvm.hpp"
#include "emusched/telemetry.hpp"
#include "test_util.hpp"

using namespace emusched;
using namespace emusched::sim;
using telemetry::RawSchedstat;
using telemetry::ThreadClass;

namespace {

Scenario one_core_two_threads() {
  Scenario scn;
  scn.cores = {SimCore{0, strategy::CoreType::kSmall, 1.0}};
  SimVm vm;
  vm.vm_id = "vm1";
  vm.pid = 10;
  vm.vcpu_affinity = {0};
  vm.emu_affinity = {0};
  vm.threads = {
      SimThread{1000, ThreadClass::kVcpu, {{0.0, 1.0}}},
      SimThread{1001, ThreadClass::kEmulator, {{0.0, 1.0}}},
  };
  scn.vms.push_back(vm);
  scn.model.duration_s = 10;
  return scn;
}

}  // namespace

TEST_CASE("two saturating threads on one core split it evenly") {
  SimHost host(one_core_two_threads());
  auto snap = host.step(1.0);
  // Each requests 1.0, achieves 0.5, and waits the other half second.
  CHECK(snap.per_thread.at(1000).cpu_time_ns == 500'000'000);
  CHECK(snap.per_thread.at(1000).run_delay_ns == 500'000'000);
  CHECK(snap.per_thread.at(1001).cpu_time_ns == 500'000'000);
  CHECK(snap.per_thread.at(1001).run_delay_ns == 500'000'000);
  CHECK(snap.per_core_util.at(0) == doctest::Approx(1.0));
}

TEST_CASE("an uncontended thread accrues no run delay") {
  Scenario scn;
  scn.cores = {SimCore{0, strategy::CoreType::kSmall, 1.0},
               SimCore{1, strategy::CoreType::kSmall, 1.0}};
  SimVm vm;
  vm.vm_id = "vm1";
  vm.pid = 10;
  vm.vcpu_affinity = {0, 1};
  vm.emu_affinity = {0, 1};
  vm.threads = {SimThread{1000, ThreadClass::kEmulator, {{0.0, 0.6}}}};
  scn.vms.push_back(vm);

  SimHost host(scn);
  auto snap = host.step(1.0);
  CHECK(snap.per_thread.at(1000).cpu_time_ns == 600'000'000);
  CHECK(snap.per_thread.at(1000).run_delay_ns == 0);
  CHECK(snap.per_core_util.at(0) == doctest::Approx(0.3));
}

TEST_CASE("an idle thread accrues no delay regardless of contention") {
  auto scn = one_core_two_threads();
  scn.vms[0].threads.push_back(
      SimThread{1002, ThreadClass::kEmulator, {{0.0, 0.0}}});
  SimHost host(scn);
  auto snap = host.step(1.0);
  CHECK(snap.per_thread.at(1002).run_delay_ns == 0);
  CHECK(snap.per_thread.at(1002).cpu_time_ns == 0);
}

TEST_CASE("per-core service conserves capacity") {
  std::mt19937 rng(41);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Scenario scn;
    double cap = 0.5 + unit(rng);
    scn.cores = {SimCore{0, strategy::CoreType::kSmall, cap}};
    SimVm vm;
    vm.vm_id = "vm1";
    vm.pid = 10;
    vm.vcpu_affinity = {0};
    vm.emu_affinity = {0};
    int threads = 1 + static_cast<int>(rng() % 6);
    double total_demand = 0.0;
    for (int i = 0; i < threads; ++i) {
      double d = unit(rng);
      total_demand += d;
      vm.threads.push_back(SimThread{1000 + i, ThreadClass::kEmulator, {{0.0, d}}});
    }
    scn.vms.push_back(vm);

    SimHost host(scn);
    auto snap = host.step(1.0);
    double served = 0.0;
    for (const auto& [tid, stat] : snap.per_thread) {
      served += static_cast<double>(stat.cpu_time_ns) / 1e9;
    }
    // Σ achieved = min(Σ demand, capacity); equality under saturation.
    CHECK(served == doctest::Approx(std::min(total_demand, cap)).epsilon(1e-6));
  }
}

TEST_CASE("growing the allowed set under uniform background never adds delay") {
  std::mt19937 rng(43);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 60; ++trial) {
    double fg_demand = 0.2 + 0.8 * unit(rng);
    double bg_demand = unit(rng);
    int bg_threads = 1 + static_cast<int>(rng() % 4);

    auto delay_with_cores = [&](int k) {
      Scenario scn;
      for (int c = 0; c < 4; ++c) {
        scn.cores.push_back(SimCore{c, strategy::CoreType::kSmall, 1.0});
      }
      SimVm vm;
      vm.vm_id = "vm1";
      vm.pid = 10;
      vm.vcpu_affinity = {0, 1, 2, 3};
      vm.emu_affinity = {0, 1, 2, 3};
      std::set<int> allowed;
      for (int c = 0; c < k; ++c) allowed.insert(c);
      vm.threads.push_back(SimThread{999, ThreadClass::kEmulator, {{0.0, fg_demand}}});
      // Background spread uniformly over all cores.
      for (int i = 0; i < bg_threads; ++i) {
        vm.threads.push_back(
            SimThread{1000 + i, ThreadClass::kVcpu, {{0.0, bg_demand}}});
      }
      scn.vms.push_back(vm);
      SimHost host(scn);
      host.set_affinity({999}, allowed);
      auto snap = host.step(1.0);
      return snap.per_thread.at(999).run_delay_ns;
    };

    std::uint64_t prev = delay_with_cores(1);
    for (int k = 2; k <= 4; ++k) {
      std::uint64_t cur = delay_with_cores(k);
      CHECK(cur <= prev + 1);  // one ns of rounding slack
      prev = cur;
    }
  }
}

TEST_CASE("emulator demand on a saturated core raises vCPU delay") {
  auto delay_of_vcpu = [](double emu_demand) {
    Scenario scn;
    scn.cores = {SimCore{0, strategy::CoreType::kSmall, 1.0}};
    SimVm vm;
    vm.vm_id = "vm1";
    vm.pid = 10;
    vm.vcpu_affinity = {0};
    vm.emu_affinity = {0};
    vm.threads = {SimThread{1000, ThreadClass::kVcpu, {{0.0, 0.8}}}};
    if (emu_demand > 0) {
      vm.threads.push_back(
          SimThread{1001, ThreadClass::kEmulator, {{0.0, emu_demand}}});
    }
    scn.vms.push_back(vm);
    SimHost host(scn);
    return host.step(1.0).per_thread.at(1000).run_delay_ns;
  };

  CHECK(delay_of_vcpu(0.0) == 0);
  auto with_some = delay_of_vcpu(0.5);
  auto with_more = delay_of_vcpu(0.9);
  CHECK(with_some > 0);
  CHECK(with_more > with_some);
}

TEST_CASE("greedy placement packs whole demands onto the least loaded core") {
  Scenario scn;
  scn.cores = {SimCore{0, strategy::CoreType::kSmall, 1.0},
               SimCore{1, strategy::CoreType::kSmall, 1.0}};
  scn.model.placement = Placement::kGreedyLeastLoaded;
  SimVm vm;
  vm.vm_id = "vm1";
  vm.pid = 10;
  vm.vcpu_affinity = {0, 1};
  vm.emu_affinity = {0, 1};
  vm.threads = {SimThread{1000, ThreadClass::kEmulator, {{0.0, 0.6}}},
                SimThread{1001, ThreadClass::kEmulator, {{0.0, 0.6}}}};
  scn.vms.push_back(vm);

  SimHost host(scn);
  auto snap = host.step(1.0);
  // Each lands alone on its own core; no oversubscription anywhere.
  CHECK(snap.per_thread.at(1000).run_delay_ns == 0);
  CHECK(snap.per_thread.at(1001).run_delay_ns == 0);
  CHECK(snap.per_core_util.at(0) == doctest::Approx(0.6));
  CHECK(snap.per_core_util.at(1) == doctest::Approx(0.6));
}

TEST_CASE("sim backend applies, verifies, and reports vanished tids") {
  auto scn = make_colocated_scenario(2);
  SimHost host(scn);
  SimBackend backend(host);

  auto tids = host.emulator_tids("hiratio");
  REQUIRE_FALSE(tids.empty());
  actuate::BindingRequest req{"hiratio", tids, {0, 2}};
  auto report = backend.apply(req);
  CHECK(report.vanished_tids.empty());
  CHECK(backend.verify("hiratio") == std::set<int>{0, 2});
  CHECK(host.affinity_of(tids.front()) == std::set<int>{0, 2});

  req.tids.push_back(999999);  // no such thread in the scenario
  auto second = backend.apply(req);
  REQUIRE(second.vanished_tids.size() == 1);
  CHECK(second.vanished_tids[0] == 999999);
  CHECK(backend.verify("hiratio") == std::set<int>{0, 2});
}

TEST_CASE("rendered procfs parses back through the real collector") {
  auto scn = make_colocated_scenario(5);
  SimHost host(scn);
  for (int i = 0; i < 3; ++i) host.step(1.0);

  testutil::TempDir tmp("procfs");
  host.render_procfs(tmp.path());

  telemetry::Collector collector(tmp.path(), telemetry::DiscoveryConfig{});
  auto ids = collector.discover();
  REQUIRE(ids.size() == 2);

  auto expected = host.snapshot();
  auto got = collector.snapshot();
  for (const auto& [tid, stat] : expected.per_thread) {
    REQUIRE(got.per_thread.count(tid) == 1);
    CHECK(got.per_thread.at(tid) == stat);
  }

  // Thread classes survive the round trip via the comm names.
  for (const auto& vm : scn.vms) {
    const auto& rec = collector.vms().at(std::to_string(vm.pid));
    int vcpus = 0, emus = 0;
    for (const auto& t : vm.threads) {
      (t.cls == ThreadClass::kVcpu ? vcpus : emus) += 1;
    }
    CHECK(rec.tids(ThreadClass::kVcpu).size() == static_cast<size_t>(vcpus));
    CHECK(rec.tids(ThreadClass::kEmulator).size() == static_cast<size_t>(emus));
  }

  // Utilization derived from the rendered jiffies tracks the model's.
  host.step(1.0);
  host.render_procfs(tmp.path());
  auto second = collector.snapshot();
  auto model_utils = host.snapshot().per_core_util;
  for (const auto& [core, util] : second.per_core_util) {
    CHECK(util == doctest::Approx(model_utils.at(core)).epsilon(0.015));
  }
}

TEST_CASE("runs are deterministic for a fixed scenario and seed") {
  auto scn = make_colocated_scenario(9);
  scn.model.jitter = 0.05;

  auto run_once = [&] {
    control::ControllerConfig cfg;
    control::Controller ctl(cfg, scn.topology());
    return sim::run(scn, &ctl);
  };
  auto a = run_once();
  auto b = run_once();

  REQUIRE(a.ticks.size() == b.ticks.size());
  for (std::size_t i = 0; i < a.ticks.size(); ++i) {
    CHECK(a.ticks[i].actions == b.ticks[i].actions);
    CHECK(a.ticks[i].latency_proxy_ns == b.ticks[i].latency_proxy_ns);
    CHECK(a.snapshots[i].per_thread == b.snapshots[i].per_thread);
  }
  CHECK(a.converged_tick == b.converged_tick);
}

TEST_CASE("a static uncontrolled run settles into constant per-tick metrics") {
  auto scn = make_colocated_scenario(3);
  scn.model.duration_s = 20;
  auto trace = sim::run(scn, nullptr);
  REQUIRE(trace.ticks.size() == 20);
  const auto& reference = trace.ticks[2].vm_metrics;
  for (std::size_t i = 3; i < trace.ticks.size(); ++i) {
    for (const auto& [vm, m] : trace.ticks[i].vm_metrics) {
      CHECK(m.emu_run_delay_rate ==
            doctest::Approx(reference.at(vm).emu_run_delay_rate).epsilon(1e-6));
      CHECK(m.vcpu_run_delay_rate ==
            doctest::Approx(reference.at(vm).vcpu_run_delay_rate).epsilon(1e-6));
    }
  }
}

TEST_CASE("closed loop converges within the probe budget on the reference scenario") {
  auto scn = make_colocated_scenario(1);
  control::ControllerConfig cfg;
  control::Controller ctl(cfg, scn.topology());
  auto trace = sim::run(scn, &ctl);

  REQUIRE(trace.converged_tick.has_value());
  CHECK(*trace.converged_tick <= 60);

  int binds_after_initial = 0;
  bool initial_seen = false;
  for (const auto& tick : trace.ticks) {
    if (!initial_seen && !tick.actions.empty()) {
      initial_seen = true;  // the x initial binds
      continue;
    }
    if (initial_seen && tick.state != control::StateKind::kStable) {
      binds_after_initial += static_cast<int>(tick.actions.size());
    }
  }
  CHECK(binds_after_initial <= 2 * (2 + 2));  // x * (ceil(log2 4) + 2)
}

TEST_CASE("emulator delay curve falls with k at a slowing rate") {
  auto curve = emulator_delay_curve(make_curve_scenario(), "heavy", {1, 2, 3, 4});
  REQUIRE(curve.size() == 4);
  CHECK(curve.at(1) > curve.at(2));
  CHECK(curve.at(2) > curve.at(3));
  CHECK(curve.at(3) > curve.at(4));
  double d12 = curve.at(1) - curve.at(2);
  double d23 = curve.at(2) - curve.at(3);
  double d34 = curve.at(3) - curve.at(4);
  CHECK(d12 >= d23);
  CHECK(d23 >= d34);
}

TEST_CASE("an uncontended scenario yields an all-zero delay curve") {
  Scenario scn;
  for (int c = 0; c < 4; ++c) {
    scn.cores.push_back(SimCore{c, strategy::CoreType::kSmall, 1.0});
  }
  SimVm vm;
  vm.vm_id = "vm1";
  vm.pid = 10;
  vm.vcpu_affinity = {0, 1, 2, 3};
  vm.emu_affinity = {0, 1, 2, 3};
  vm.threads = {SimThread{1000, ThreadClass::kEmulator, {{0.0, 0.3}}}};
  scn.vms.push_back(vm);

  auto curve = emulator_delay_curve(scn, "vm1", {1, 2, 3, 4});
  for (const auto& [k, rate] : curve) CHECK(rate == 0.0);
  // Light load: the step from n-1 to n cores clears the slope threshold.
  CHECK_FALSE(
      control::significant_increase(curve.at(3), curve.at(4), 4, 3, 2.0));
}

TEST_CASE("ramping demand raises the measured emulator ratio monotonically") {
  auto trace = sim::run(make_ramp_scenario(), nullptr);
  std::vector<double> ratios;
  for (const auto& tick : trace.ticks) {
    ratios.push_back(tick.vm_metrics.at("ramp").emulator_ratio);
  }
  REQUIRE(ratios.size() == 120);
  for (std::size_t i = 1; i < ratios.size(); ++i) {
    CHECK(ratios[i] >= ratios[i - 1] - 1e-9);
  }
  CHECK(ratios.back() > ratios.front());
}

TEST_CASE("scenario text round-trips through render and parse") {
  auto scn = make_colocated_scenario(11);
  auto text = render_scenario(scn);
  auto parsed = parse_scenario_text(text, "render");

  REQUIRE(parsed.vms.size() == scn.vms.size());
  for (std::size_t i = 0; i < scn.vms.size(); ++i) {
    CHECK(parsed.vms[i].vm_id == scn.vms[i].vm_id);
    CHECK(parsed.vms[i].vcpu_affinity == scn.vms[i].vcpu_affinity);
    CHECK(parsed.vms[i].emu_affinity == scn.vms[i].emu_affinity);
    REQUIRE(parsed.vms[i].threads.size() == scn.vms[i].threads.size());
  }
  // Same model, same dynamics: identical uncontrolled runs.
  auto a = sim::run(scn, nullptr);
  auto b = sim::run(parsed, nullptr);
  REQUIRE(a.snapshots.size() == b.snapshots.size());
  CHECK(a.snapshots.back().per_thread == b.snapshots.back().per_thread);
}

TEST_CASE("scenario parse errors carry line numbers") {
  auto expect_error = [](const std::string& text, const std::string& needle) {
    try {
      parse_scenario_text(text, "scn");
      FAIL_CHECK("expected ScenarioParseError for: " << needle);
    } catch (const ScenarioParseError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };

  expect_error("bogus\n", "scn:1");
  expect_error("version 2\n", "version");
  expect_error("version 1\n[cores]\nsmall = 0-3\n[model]\nalpha == 1\n",
               "scn:5");
  expect_error("version 1\n[cores]\nsmall = 0-3\n[model]\nwiggle = 1\n",
               "unknown [model] key");
  expect_error("version 1\n[cores]\nsmall = 0-1\n[phase 5]\nghost.emu_demand = 1\n",
               "unknown vm");
  expect_error(
      "version 1\n[cores]\nsmall = 0-1\n[vm a]\nvcpus = 1\nvcpu_demand = 2.0\n"
      "vcpu_affinity = 0\n",
      "outside [0,1]");
}

TEST_CASE("phase schedules change demand at the stated times") {
  std::string text =
      "version 1\n"
      "[cores]\n"
      "small = 0\n"
      "[vm a]\n"
      "vcpus = 0\n"
      "emulators = 1\n"
      "emu_demand = 0.2\n"
      "vcpu_affinity = 0\n"
      "emu_affinity = 0\n"
      "[phase 5]\n"
      "a.emu_demand = 0.8\n"
      "[model]\n"
      "duration = 10\n";
  auto scn = parse_scenario_text(text, "inline");
  SimHost host(scn);
  telemetry::TelemetrySnapshot prev = host.snapshot();
  std::vector<double> cpu_per_tick;
  for (int i = 0; i < 8; ++i) {
    auto snap = host.step(1.0);
    int tid = scn.vms[0].threads[0].tid;
    cpu_per_tick.push_back(
        static_cast<double>(snap.per_thread.at(tid).cpu_time_ns -
                            prev.per_thread.at(tid).cpu_time_ns) /
        1e9);
    prev = snap;
  }
  for (int i = 0; i < 5; ++i) CHECK(cpu_per_tick[i] == doctest::Approx(0.2));
  for (int i = 5; i < 8; ++i) CHECK(cpu_per_tick[i] == doctest::Approx(0.8));
}
