#include <doctest.h>

#include <random>

#ifdef __linux__
#include <sched.h>
#include <unistd.h>
#include <sys/syscall.h>
#endif

#include "emusched/actuator.hpp"
#include "test_util.hpp"

using namespace emusched::actuate;
namespace fs = std::filesystem;

TEST_CASE("format_cpulist folds maximal ranges") {
  CHECK(format_cpulist({0, 1, 2, 5}) == "0-2,5");
  CHECK(format_cpulist({7}) == "7");
  CHECK(format_cpulist({0, 2, 4}) == "0,2,4");
  CHECK(format_cpulist({3, 4, 5, 6}) == "3-6");
  CHECK_THROWS_AS(format_cpulist({}), EmptyCpuset);
}

TEST_CASE("parse_cpulist understands ranges and singletons") {
  CHECK(parse_cpulist("0-2,5") == std::set<int>{0, 1, 2, 5});
  CHECK(parse_cpulist("7") == std::set<int>{7});
  CHECK(parse_cpulist("0-3\n") == std::set<int>{0, 1, 2, 3});
  CHECK_THROWS_AS(parse_cpulist(""), MalformedCpulist);
  CHECK_THROWS_AS(parse_cpulist("a-b"), MalformedCpulist);
  CHECK_THROWS_AS(parse_cpulist("5-2"), MalformedCpulist);
}

TEST_CASE("cpulist round-trips arbitrary sets") {
  std::mt19937 rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    std::set<int> cores;
    int count = 1 + rng() % 12;
    for (int i = 0; i < count; ++i) cores.insert(static_cast<int>(rng() % 64));
    CHECK(parse_cpulist(format_cpulist(cores)) == cores);
  }
}

TEST_CASE("cgroup backend writes the cpuset file bit-exactly") {
  testutil::TempDir tmp("cgroup");
  fs::create_directories(tmp.path() / "vm1" / "emulator");

  CgroupBackend backend(tmp.path());
  BindingRequest req{"vm1", {100, 101}, {0, 1, 2, 3}};
  backend.apply(req);

  CHECK(testutil::read_file(tmp.path() / "vm1" / "emulator" / "cpuset.cpus") ==
        "0-3\n");
  CHECK(backend.verify("vm1") == std::set<int>{0, 1, 2, 3});

  // Idempotent: a second apply leaves identical state.
  backend.apply(req);
  CHECK(testutil::read_file(tmp.path() / "vm1" / "emulator" / "cpuset.cpus") ==
        "0-3\n");
  CHECK(backend.verify("vm1") == std::set<int>{0, 1, 2, 3});
}

TEST_CASE("cgroup backend honors a path template") {
  testutil::TempDir tmp("cgroup_tmpl");
  fs::create_directories(tmp.path() / "machine" / "web.scope");
  CgroupBackend backend(tmp.path(), "{root}/machine/{vm}.scope/cpuset.cpus");
  backend.apply(BindingRequest{"web", {1}, {2, 3}});
  CHECK(testutil::read_file(tmp.path() / "machine" / "web.scope" /
                            "cpuset.cpus") == "2-3\n");
  CHECK(backend.verify("web") == std::set<int>{2, 3});
}

TEST_CASE("cgroup backend prefers the unified hierarchy and falls back to legacy") {
  testutil::TempDir unified("cgroup_v2");
  testutil::write_file(unified.path() / "cgroup.controllers", "cpuset\n");
  CgroupBackend v2(unified.path());
  CHECK(v2.cpuset_path("vm1") ==
        unified.path() / "vm1" / "emulator" / "cpuset.cpus");

  testutil::TempDir legacy("cgroup_v1");
  fs::create_directories(legacy.path() / "cpuset");
  CgroupBackend v1(legacy.path());
  CHECK(v1.cpuset_path("vm1") ==
        legacy.path() / "cpuset" / "vm1" / "emulator" / "cpuset.cpus");
}

TEST_CASE("cgroup backend reports unusable layouts") {
  testutil::TempDir tmp("cgroup_missing");
  CgroupBackend backend(tmp.path());
  CHECK_THROWS_AS(backend.apply(BindingRequest{"vm1", {1}, {0}}),
                  BackendUnavailable);
  CHECK_THROWS_AS(backend.verify("vm1"), BackendUnavailable);
  CHECK_THROWS_AS(backend.apply(BindingRequest{"vm1", {1}, {}}), EmptyCpuset);
}

TEST_CASE("recording backend is idempotent and verifiable") {
  RecordingBackend backend;
  BindingRequest req{"vm1", {5, 6}, {0, 2}};
  backend.apply(req);
  backend.apply(req);
  CHECK(backend.applied().size() == 2);
  CHECK(backend.verify("vm1") == std::set<int>{0, 2});
  CHECK_THROWS_AS(backend.verify("other"), BackendUnavailable);
}

#ifdef __linux__
TEST_CASE("thread affinity backend binds the calling thread") {
  int tid = static_cast<int>(::syscall(SYS_gettid));
  cpu_set_t original;
  CPU_ZERO(&original);
  REQUIRE(sched_getaffinity(0, sizeof(original), &original) == 0);

  ThreadAffinityBackend backend;
  try {
    auto report = backend.apply(BindingRequest{"self", {tid}, {0}});
    CHECK(report.vanished_tids.empty());
    CHECK(backend.verify("self") == std::set<int>{0});
  } catch (const PermissionDenied&) {
    MESSAGE("sched_setaffinity not permitted in this sandbox; skipping");
  }
  sched_setaffinity(0, sizeof(original), &original);  // restore
}

TEST_CASE("thread affinity backend reports vanished tids and binds the rest") {
  int tid = static_cast<int>(::syscall(SYS_gettid));
  cpu_set_t original;
  CPU_ZERO(&original);
  REQUIRE(sched_getaffinity(0, sizeof(original), &original) == 0);

  ThreadAffinityBackend backend;
  try {
    // tid 0x7ffffff0 cannot exist: pid_max tops out well below it.
    auto report = backend.apply(BindingRequest{"self", {0x7ffffff0, tid}, {0}});
    REQUIRE(report.vanished_tids.size() == 1);
    CHECK(report.vanished_tids[0] == 0x7ffffff0);
    CHECK(backend.verify("self") == std::set<int>{0});
  } catch (const PermissionDenied&) {
    MESSAGE("sched_setaffinity not permitted in this sandbox; skipping");
  }
  sched_setaffinity(0, sizeof(original), &original);
}
#endif
