#include "emusched/controller.hpp"

#include <algorithm>
#include <cmath>

namespace emusched::control {

namespace {

// Keeps the auto-derived slope threshold above the required lower bound.
constexpr double kL1LowerBound = 1.0 + 1e-9;

std::string emu_delay_key(const std::string& vm) { return "emu_delay/" + vm; }
std::string vcpu_util_key(const std::string& vm) { return "vcpu_util/" + vm; }
constexpr const char* kSysUtilKey = "sys_util";

// vm id the key implicates, or nullopt for system-wide metrics.
std::optional<std::string> key_vm(const std::string& key) {
  auto slash = key.find('/');
  if (slash == std::string::npos) return std::nullopt;
  return key.substr(slash + 1);
}

double window_mean(const std::vector<double>& samples) {
  // The first sample of a probe window covers the affinity migration
  // transient; drop it when there is anything else to average.
  std::size_t start = samples.size() > 1 ? 1 : 0;
  double sum = 0.0;
  for (std::size_t i = start; i < samples.size(); ++i) sum += samples[i];
  return sum / static_cast<double>(samples.size() - start);
}

}  // namespace

void ControllerConfig::validate() const {
  if (l1 && *l1 <= 1.0) {
    throw InvalidConfig("l1 must exceed 1 (ns/s per core)");
  }
  if (l1_auto_fraction <= 0.0) {
    throw InvalidConfig("l1_auto_fraction must be positive");
  }
  if (measure_window < 1) throw InvalidConfig("measure_window must be >= 1");
  if (oscillation_limit < 1) throw InvalidConfig("oscillation_limit must be >= 1");
  if (tick_period_s < 1) throw InvalidConfig("tick_period must be >= 1 s");
  if (stability_window < 1) throw InvalidConfig("stability_window must be >= 1");
  if (delay_threshold <= 0 || util_threshold <= 0) {
    throw InvalidConfig("stability thresholds must be positive");
  }
}

bool significant_increase(double v1, double v2, int n, int n1, double l1) {
  if (n1 == n) {
    throw DegenerateDenominator("significant_increase undefined at n1 == n");
  }
  if (n1 < 1 || n1 > n) {
    throw KOutOfRange("probed core count outside [1, n]");
  }
  return (v1 - v2) / static_cast<double>(n - n1) > l1;
}

BinarySearchPlanner::BinarySearchPlanner(int total_small_cores,
                                         std::optional<double> explicit_l1,
                                         double l1_auto_fraction)
    : n_(total_small_cores),
      hi_(total_small_cores),
      explicit_l1_(explicit_l1),
      l1_auto_fraction_(l1_auto_fraction) {
  if (n_ < 1) throw KOutOfRange("need at least one small core to search");
  pending_ = n_;  // the v2 reference measurement
}

std::optional<int> BinarySearchPlanner::next_probe() const {
  return done_ ? std::nullopt : pending_;
}

void BinarySearchPlanner::finish(int k) {
  done_ = true;
  result_ = k;
  pending_.reset();
  // The split assumes delay falls as cores grow; flag observations that
  // contradict it. The binary search already resolved toward the larger k.
  double prev = -1.0;
  for (auto it = observed_.rbegin(); it != observed_.rend(); ++it) {
    if (prev >= 0.0 && it->second < prev - 1e-12) {
      non_monotone_ = true;
      break;
    }
    prev = it->second;
  }
}

void BinarySearchPlanner::feed(double delay_rate) {
  if (done_ || !pending_) {
    throw Error("feed called with no pending probe");
  }
  ++probes_;
  int k = *pending_;
  observed_[k] = delay_rate;

  if (!have_v2_) {
    have_v2_ = true;
    v2_ = delay_rate;
    if (explicit_l1_) {
      l1_ = *explicit_l1_;
    } else if (n_ > 1) {
      l1_ = std::max(l1_auto_fraction_ * v2_ / static_cast<double>(n_ - 1),
                     kL1LowerBound);
    } else {
      l1_ = kL1LowerBound;
    }
    if (lo_ >= hi_) {
      finish(lo_);
      return;
    }
    pending_ = (lo_ + hi_) / 2;
    return;
  }

  bool significant = significant_increase(delay_rate, v2_, n_, k, l1_);
  if (significant) {
    lo_ = k + 1;
  } else {
    hi_ = k;
  }
  if (lo_ >= hi_) {
    finish(hi_);
    return;
  }
  pending_ = (lo_ + hi_) / 2;
}

int BinarySearchPlanner::result() const {
  if (!done_) throw Error("binary search still in progress");
  return result_;
}

SearchOutcome plan_binary_search(const std::function<double(int)>& delay_at, int n,
                                 std::optional<double> l1, double l1_auto_fraction) {
  BinarySearchPlanner planner(n, l1, l1_auto_fraction);
  while (auto k = planner.next_probe()) {
    planner.feed(delay_at(*k));
  }
  return SearchOutcome{planner.result(), planner.probes_used(),
                       planner.non_monotone_observed()};
}

std::string select_next_vm(const std::map<std::string, double>& emu_util_by_vm) {
  if (emu_util_by_vm.empty()) {
    throw EmptySet("select_next_vm over an empty VM set");
  }
  auto best = emu_util_by_vm.begin();
  for (auto it = std::next(best); it != emu_util_by_vm.end(); ++it) {
    if (it->second > best->second) best = it;  // ties keep the smaller id
  }
  return best->first;
}

std::set<int> choose_cores(int k, const std::vector<int>& small_cores,
                           const std::map<int, double>& util) {
  int n = static_cast<int>(small_cores.size());
  if (k < 1 || k > n) {
    throw KOutOfRange("requested " + std::to_string(k) + " of " +
                      std::to_string(n) + " small cores");
  }
  std::vector<int> order = small_cores;
  auto util_of = [&](int core) {
    auto it = util.find(core);
    return it == util.end() ? 0.0 : it->second;
  };
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    double ua = util_of(a), ub = util_of(b);
    if (ua != ub) return ua < ub;
    return a < b;
  });
  return std::set<int>(order.begin(), order.begin() + k);
}

const char* state_name(StateKind s) {
  switch (s) {
    case StateKind::kInitial: return "INITIAL";
    case StateKind::kDownscaling: return "DOWNSCALING";
    case StateKind::kStable: return "STABLE";
    case StateKind::kOscillation: return "OSCILLATION";
  }
  return "?";
}

Controller::Controller(ControllerConfig cfg, strategy::CoreTopology topo,
                       Logger logger)
    : cfg_(std::move(cfg)), topo_(std::move(topo)), logger_(std::move(logger)) {
  cfg_.validate();
  if (topo_.small_cores.empty()) {
    throw InvalidConfig("controller needs at least one small core");
  }
}

void Controller::log(const std::string& msg) const {
  if (logger_) logger_(msg);
}

std::set<int> Controller::all_small() const {
  return std::set<int>(topo_.small_cores.begin(), topo_.small_cores.end());
}

std::vector<Action> Controller::tick(const ControllerInput& input) {
  switch (state_) {
    case StateKind::kInitial: return tick_initial(input);
    case StateKind::kDownscaling: return tick_downscaling(input);
    case StateKind::kStable: return tick_stable(input);
    case StateKind::kOscillation: return tick_oscillation(input);
  }
  return {};
}

std::vector<Action> Controller::tick_initial(const ControllerInput& input) {
  if (input.vms.empty()) return {};  // nothing to manage yet
  std::vector<std::string> vms = input.vms;
  std::sort(vms.begin(), vms.end());
  std::vector<Action> actions;
  for (const auto& vm : vms) {
    actions.push_back(Action{vm, all_small()});
    pending_.insert(vm);
  }
  state_ = StateKind::kDownscaling;
  log("initial: bound " + std::to_string(vms.size()) +
      " VMs to all small cores, entering downscaling");
  return actions;
}

Action Controller::start_probe(ActiveSearch& search, int k,
                               const ControllerInput& input) {
  search.bound_k = k;
  search.ticks_left = cfg_.measure_window;
  search.samples.clear();
  return Action{search.vm_id, choose_cores(k, topo_.small_cores, input.per_core_util)};
}

std::vector<Action> Controller::tick_downscaling(const ControllerInput& input) {
  int n = static_cast<int>(topo_.small_cores.size());

  if (active_) {
    // A probed VM that disappeared aborts its search.
    if (std::find(input.vms.begin(), input.vms.end(), active_->vm_id) ==
        input.vms.end()) {
      log("downscaling: VM " + active_->vm_id + " vanished mid-search");
      active_.reset();
      return {};
    }
    auto m = input.vm_metrics.find(active_->vm_id);
    if (!input.metrics_valid || m == input.vm_metrics.end()) {
      return {};  // metrics not ready; hold the probe
    }
    active_->samples.push_back(m->second.emu_run_delay_rate);
    if (--active_->ticks_left > 0) return {};

    active_->planner.feed(window_mean(active_->samples));
    if (!active_->planner.done()) {
      return {start_probe(*active_, *active_->planner.next_probe(), input)};
    }
    int k_star = active_->planner.result();
    if (active_->planner.non_monotone_observed()) {
      log("downscaling: non-monotone probe results for " + active_->vm_id +
          ", keeping k=" + std::to_string(k_star));
    }
    k_star_[active_->vm_id] = k_star;
    Action final_bind{active_->vm_id,
                      choose_cores(k_star, topo_.small_cores, input.per_core_util)};
    log("downscaling: " + active_->vm_id + " settled at " +
        std::to_string(k_star) + " cores after " +
        std::to_string(active_->planner.probes_used()) + " probes");
    active_.reset();
    return {final_bind};
  }

  // Drop queued VMs that no longer exist.
  for (auto it = pending_.begin(); it != pending_.end();) {
    if (std::find(input.vms.begin(), input.vms.end(), *it) == input.vms.end()) {
      log("downscaling: dropping vanished VM " + *it);
      it = pending_.erase(it);
    } else {
      ++it;
    }
  }

  if (pending_.empty()) {
    enter_stable();
    log("downscaling complete, entering stable");
    return {};
  }

  if (!input.metrics_valid) return {};
  std::map<std::string, double> emu_util;
  for (const auto& vm : pending_) {
    auto m = input.vm_metrics.find(vm);
    if (m != input.vm_metrics.end()) emu_util[vm] = m->second.emu_cpu_util;
  }
  if (emu_util.empty()) return {};  // no usable metrics yet

  std::string vm = select_next_vm(emu_util);
  pending_.erase(vm);
  active_.emplace(ActiveSearch{
      vm, BinarySearchPlanner(n, cfg_.l1, cfg_.l1_auto_fraction), 0, 0, {}});
  // First probe re-establishes the all-cores reference delay v2.
  return {start_probe(*active_, *active_->planner.next_probe(), input)};
}

std::vector<std::string> Controller::check_metrics(
    const ControllerInput& input) const {
  std::vector<std::string> anomalous;
  auto check = [&](const std::string& key, double current, double threshold,
                   double floor) {
    auto it = windows_.find(key);
    if (it == windows_.end() || it->second.empty()) return;
    auto verdict = metrics::stability_check(it->second, current, threshold, floor);
    if (verdict.flag == metrics::Stability::kAnomalous) {
      anomalous.push_back(key);
    }
  };
  for (const auto& [vm, m] : input.vm_metrics) {
    check(emu_delay_key(vm), m.emu_run_delay_rate, cfg_.delay_threshold,
          cfg_.delay_floor);
    check(vcpu_util_key(vm), m.vcpu_cpu_util, cfg_.util_threshold, cfg_.util_floor);
  }
  check(kSysUtilKey, input.system_cpu_util, cfg_.util_threshold, cfg_.util_floor);
  return anomalous;
}

void Controller::absorb_metrics(const ControllerInput& input) {
  auto push = [&](const std::string& key, double value) {
    auto it = windows_.find(key);
    if (it == windows_.end()) {
      it = windows_.emplace(key, RingBuffer<double>(cfg_.stability_window)).first;
    }
    it->second.push(value);
  };
  for (const auto& [vm, m] : input.vm_metrics) {
    push(emu_delay_key(vm), m.emu_run_delay_rate);
    push(vcpu_util_key(vm), m.vcpu_cpu_util);
  }
  push(kSysUtilKey, input.system_cpu_util);
}

void Controller::enter_stable() {
  windows_.clear();
  anomaly_counts_.clear();
  state_ = StateKind::kStable;
}

std::vector<Action> Controller::tick_stable(const ControllerInput& input) {
  if (!input.metrics_valid) return {};
  auto anomalies = check_metrics(input);
  if (anomalies.empty()) {
    absorb_metrics(input);
    return {};
  }
  // Anomalous samples stay out of the baseline windows.
  state_ = StateKind::kOscillation;
  anomaly_counts_.clear();
  for (const auto& key : anomalies) anomaly_counts_[key] = 1;
  log("stable: anomaly on " + anomalies.front() + ", entering oscillation");
  return tick_oscillation_trigger(input);
}

std::vector<Action> Controller::tick_oscillation(const ControllerInput& input) {
  if (!input.metrics_valid) return {};
  auto anomalies = check_metrics(input);
  if (anomalies.empty()) {
    anomaly_counts_.clear();
    state_ = StateKind::kStable;
    absorb_metrics(input);
    log("oscillation: metrics settled, back to stable");
    return {};
  }
  std::set<std::string> anomalous_now(anomalies.begin(), anomalies.end());
  for (auto it = anomaly_counts_.begin(); it != anomaly_counts_.end();) {
    if (!anomalous_now.count(it->first)) {
      it = anomaly_counts_.erase(it);  // streak broken
    } else {
      ++it;
    }
  }
  for (const auto& key : anomalous_now) {
    auto [it, inserted] = anomaly_counts_.emplace(key, 1);
    if (!inserted) it->second += 1;
  }
  return tick_oscillation_trigger(input);
}

std::vector<Action> Controller::tick_oscillation_trigger(
    const ControllerInput& input) {
  std::set<std::string> implicated;
  for (const auto& [key, count] : anomaly_counts_) {
    if (count < cfg_.oscillation_limit) continue;
    if (auto vm = key_vm(key)) {
      implicated.insert(*vm);
    } else {
      implicated.insert(input.vms.begin(), input.vms.end());
    }
  }
  if (implicated.empty()) return {};

  std::vector<Action> actions;
  for (const auto& vm : implicated) {
    actions.push_back(Action{vm, all_small()});
  }
  pending_ = implicated;
  active_.reset();
  anomaly_counts_.clear();
  windows_.clear();
  state_ = StateKind::kDownscaling;
  log("oscillation: persistent anomaly, rebinding " +
      std::to_string(implicated.size()) + " VM(s) and downscaling again");
  return actions;
}

}  // namespace emusched::control
