#pragma once

#include <cmath>
#include <cstdio>
#include <future>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "costmodel.hpp"
#include "domain.hpp"
#include "planner.hpp"
#include "sharding.hpp"
#include "trace.hpp"

namespace stragplan {

enum class ReplanBaseline { previous_iteration, last_plan };

struct SimConfig {
  double threshold = 0.05;
  int probe_period = 10;
  double planning_seconds = 0;  // planning latency; lands after ceil(planning/step) iterations, at least one
  double sync_seconds = 0;      // optional additive per-iteration constant
  ReplanBaseline baseline = ReplanBaseline::previous_iteration;
  std::uint64_t seed = 0;
  bool record_rates = false;
  PlannerOptions planner;
  MigrationOptions migration;
};

struct IterationRecord {
  int iteration = 0;
  double seconds = 0;
  int plan_id = 0;
  std::string event;  // ';'-separated tokens
  bool operator==(const IterationRecord&) const = default;
};

struct ReplanRecord {
  int trigger_iteration = 0;
  int land_iteration = 0;
  int plan_id = 0;  // plan active after landing
  bool changed = false;
  bool failed = false;
  bool operator==(const ReplanRecord&) const = default;
};

struct MigrationRecord {
  int iteration = 0;
  double seconds = 0;
  int from_plan = 0;
  int to_plan = 0;
  bool checkpoint = false;
  bool operator==(const MigrationRecord&) const = default;
};

struct SimTimeline {
  std::vector<IterationRecord> rows;  // step rows and migration rows, in time order
  std::vector<ReplanRecord> replans;
  std::vector<MigrationRecord> migrations;
  std::vector<ParallelizationPlan> plans;  // by plan id
  std::vector<std::map<GpuId, double>> measured;  // per iteration, when recorded

  std::vector<IterationRecord> steps() const {
    std::vector<IterationRecord> out;
    for (const auto& r : rows)
      if (r.event.rfind("migration", 0) != 0) out.push_back(r);
    return out;
  }
};

namespace detail {

inline std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline void add_token(std::string& ev, const std::string& tok) {
  if (!ev.empty()) ev += ';';
  ev += tok;
}

}  // namespace detail

// Ground truth plus uniform relative noise; standby GPUs only on probe iterations.
inline std::map<GpuId, double> measure_rates(const std::map<GpuId, double>& truth, const std::set<GpuId>& standby,
                                             bool probe, double noise, std::mt19937_64& rng) {
  std::map<GpuId, double> out;
  std::uniform_real_distribution<double> u(-noise, noise);
  for (const auto& [g, x] : truth) {
    if (standby.count(g) && !probe) continue;
    double r = x;
    if (noise > 0 && !is_failed(x)) r = std::max(1.0, x * (1.0 + u(rng)));
    out[g] = r;
  }
  return out;
}

inline SimTimeline simulate(const TaskSpec& task, const ClusterState& initial, const StragglerTrace& trace,
                            const SimConfig& cfg, std::optional<ParallelizationPlan> initial_plan = std::nullopt) {
  trace.validate(initial);
  SimTimeline tl;
  std::mt19937_64 rng(cfg.seed);

  ClusterState truth = initial;
  for (auto g : initial.gpus()) truth.rates[g] = initial.rate(g);
  truth.standby.clear();

  auto to_cluster = [&](const std::map<GpuId, double>& rates, const std::set<GpuId>& standby) {
    ClusterState c = initial;
    c.rates = rates;
    c.standby = standby;
    return c;
  };

  ParallelizationPlan cur = initial_plan ? *initial_plan : plan(initial, task, cfg.planner).plan;
  int cur_id = 0;
  tl.plans.push_back(cur);
  std::map<GpuId, double> last_known = truth.rates;
  std::map<GpuId, double> plan_basis = truth.rates;

  struct Pending {
    std::future<PlanReport> result;
    int trigger = 0;
    int land = 0;
    std::map<GpuId, double> basis;
  };
  std::optional<Pending> pending;
  bool dirty = false;
  std::string carry;  // tokens for the next step row
  detail::add_token(carry, "est=" + detail::fmt_num(cur.estimated_step_seconds));

  // Rates the planner sees: a GPU keeps its previous basis unless it moved past the threshold,
  // so measurement noise does not fragment the grouping of normal GPUs.
  auto planning_view = [&] {
    std::map<GpuId, double> v = last_known;
    for (auto& [g, x] : v) {
      auto b = plan_basis.find(g);
      if (b == plan_basis.end() || is_failed(x) || is_failed(b->second)) continue;
      if (std::abs(x - b->second) <= cfg.threshold * b->second * (1 + 1e-9)) x = b->second;
    }
    return v;
  };

  auto start_planning = [&](int it, double step) {
    Pending p;
    p.trigger = it;
    int lag = step > 0 ? static_cast<int>(std::ceil(cfg.planning_seconds / step)) : 1;
    p.land = it + std::max(1, lag);
    p.basis = planning_view();
    auto cluster = to_cluster(p.basis, cur.removed);
    PlannerOptions po = cfg.planner;
    p.result = std::async(std::launch::async, [cluster, &task, po] { return plan(cluster, task, po); });
    pending = std::move(p);
  };

  auto switch_to = [&](ParallelizationPlan next, int it, const std::set<GpuId>& failed) {
    double mig = 0;
    bool ckpt = false;
    try {
      auto sch = compile_migration(cur, next, task.state_mib_per_layer(), failed, cfg.migration);
      mig = sch.seconds;
      ckpt = sch.needs_checkpoint;
    } catch (const InfeasibleError&) {
      ckpt = true;
    }
    int next_id = static_cast<int>(tl.plans.size());
    tl.plans.push_back(next);
    tl.migrations.push_back({it, mig, cur_id, next_id, ckpt});
    tl.rows.push_back({it, mig, next_id, ckpt ? "migration;checkpoint" : "migration"});
    cur = std::move(next);
    cur_id = next_id;
    detail::add_token(carry, "est=" + detail::fmt_num(cur.estimated_step_seconds));
  };

  const int n_iter = trace.length();
  std::size_t ev = 0, sit = 0;
  for (int it = 0; it < n_iter; ++it) {
    std::string event;
    std::swap(event, carry);
    for (; ev < trace.events.size() && trace.events[ev].iteration <= it; ++ev)
      truth.rates[trace.events[ev].gpu] = trace.events[ev].rate;
    for (; sit < trace.situations.size() && trace.situations[sit].iteration <= it; ++sit) {
      std::vector<double> str;
      for (const auto& [g, x] : truth.rates)
        if (x != 1.0) str.push_back(x);
      detail::add_token(event, "situation=" + trace.situations[sit].tag);
      detail::add_token(event, "ropt=" + detail::fmt_num(theoretic_optimum_ratio(truth.gpu_count(), str)));
    }

    // A failed in-use GPU stalls the step: re-plan synchronously and restore from checkpoint.
    std::set<GpuId> failed;
    for (const auto& [g, x] : truth.rates)
      if (is_failed(x)) failed.insert(g);
    bool stalled = false;
    for (auto g : cur.in_use()) stalled = stalled || failed.count(g) > 0;
    if (stalled) {
      if (pending) {
        pending->result.wait();
        pending.reset();
      }
      for (auto g : failed) last_known[g] = kFailed;
      detail::add_token(event, "failure");
      try {
        auto view = planning_view();
        auto rep = plan(to_cluster(view, cur.removed), task, cfg.planner);
        tl.replans.push_back({it, it, static_cast<int>(tl.plans.size()), true, false});
        plan_basis = view;
        std::string keep;
        std::swap(keep, carry);
        switch_to(std::move(rep.plan), it, failed);
        detail::add_token(event, carry);
        carry = keep;
      } catch (const std::exception&) {
        tl.replans.push_back({it, it, cur_id, false, true});
        detail::add_token(event, "warning=planning-failed");
      }
    }

    double step = exact_step_time(cur, truth, task) + cfg.sync_seconds;
    const std::size_t row = tl.rows.size();
    tl.rows.push_back({it, step, cur_id, event});

    bool probe = cfg.probe_period > 0 && it % cfg.probe_period == 0;
    auto meas = measure_rates(truth.rates, cur.removed, probe, trace.noise, rng);
    for (auto g : failed) meas[g] = kFailed;  // timeouts are visible immediately
    const auto& base = cfg.baseline == ReplanBaseline::previous_iteration ? last_known : plan_basis;
    bool trigger = replan_needed(base, meas, cfg.threshold);
    for (const auto& [g, x] : meas) last_known[g] = x;
    if (cfg.record_rates) tl.measured.push_back(meas);

    if (pending && pending->land == it) {
      try {
        auto rep = pending->result.get();
        bool changed = !rep.plan.same_layout(cur);
        tl.replans.push_back({pending->trigger, it, changed ? static_cast<int>(tl.plans.size()) : cur_id, changed, false});
        plan_basis = pending->basis;
        detail::add_token(tl.rows[row].event, "replan_done");
        if (changed) switch_to(std::move(rep.plan), it, failed);
      } catch (const std::exception&) {
        tl.replans.push_back({pending->trigger, it, cur_id, false, true});
        detail::add_token(tl.rows[row].event, "warning=planning-failed");
      }
      pending.reset();
      trigger = trigger || dirty;
      dirty = false;
    }
    if (trigger) {
      if (pending) {
        dirty = true;
      } else {
        start_planning(it, step);
        detail::add_token(tl.rows[row].event, "replan_start");
      }
    }
  }
  if (pending) pending->result.wait();
  return tl;
}

inline std::string timeline_csv(const SimTimeline& tl) {
  std::string s = "iteration,seconds,plan_id,event\n";
  for (const auto& r : tl.rows)
    s += std::to_string(r.iteration) + "," + detail::fmt_num(r.seconds) + "," + std::to_string(r.plan_id) + "," +
         r.event + "\n";
  return s;
}

}  // namespace stragplan
