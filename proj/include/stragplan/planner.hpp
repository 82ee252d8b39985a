#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <future>
#include <map>
#include <string>
#include <vector>

#include "assignment.hpp"
#include "costmodel.hpp"
#include "domain.hpp"
#include "grouping.hpp"
#include "orchestration.hpp"

namespace stragplan {

struct PlannerOptions {
  int b_cap = 16;
  std::vector<int> dp_candidates;  // empty: task.dp_degree only
  std::size_t division_candidates = 4096;
  double division_budget_seconds = 20;
  bool uniform_fallback = true;
  bool parallel = true;
  bool explain = false;
};

struct CandidateReport {
  std::string source;  // "tp<k>" or "uniform"
  int tp_limit = 0;
  int dp = 0;
  int groups = 0;
  int division_rank = -1;
  double division_objective = kFailed;
  double estimate = kFailed;
  double exact = kFailed;
  bool feasible = false;
};

struct PlanReport {
  ParallelizationPlan plan;
  std::vector<CandidateReport> candidates;
  double wall_seconds = 0;
  bool budget_exhausted = false;
  std::vector<std::string> explain;
};

// Per-stage time under the given cluster's rates (live y).
inline std::vector<std::vector<double>> stage_times(const ParallelizationPlan& plan, const ClusterState& cluster,
                                                    const TaskSpec& task) {
  const double tau = task.coefficients.tau_at(plan.micro_batch_size);
  std::vector<std::vector<double>> out;
  for (const auto& p : plan.pipelines) {
    std::vector<double> t;
    for (const auto& s : p.stages) {
      std::vector<double> r;
      for (auto g : s.group.members) r.push_back(cluster.rate(g));
      t.push_back(stage_time(group_rate(r, s.group.size(), task.coefficients), s.layers, tau));
    }
    out.push_back(std::move(t));
  }
  return out;
}

inline double exact_step_time(const ParallelizationPlan& plan, const ClusterState& cluster, const TaskSpec& task) {
  auto t = stage_times(plan, cluster, task);
  double mx = 0;
  for (std::size_t i = 0; i < t.size(); ++i)
    mx = std::max(mx, pipeline_time_exact(plan.pipelines[i].micro_batches, t[i]));
  return mx;
}

// T-hat of a fixed plan under the given rates.
inline double estimated_step_time(const ParallelizationPlan& plan, const ClusterState& cluster,
                                  const TaskSpec& task) {
  const double tau = task.coefficients.tau_at(plan.micro_batch_size);
  double mx = 0;
  for (const auto& p : plan.pipelines) {
    double o = 0;
    for (const auto& s : p.stages) {
      std::vector<double> r;
      for (auto g : s.group.members) r.push_back(cluster.rate(g));
      o = std::max(o, weighted_load(group_rate(r, s.group.size(), task.coefficients), s.layers));
    }
    mx = std::max(mx, weighted_load(o, p.micro_batches));
  }
  return mx * tau;
}

// Structural and memory invariants; returns the first violation or an empty string.
inline std::string check_plan(const ParallelizationPlan& plan, const TaskSpec& task) {
  long long total = 0;
  std::set<GpuId> seen;
  for (std::size_t i = 0; i < plan.pipelines.size(); ++i) {
    const auto& p = plan.pipelines[i];
    if (p.stages.empty()) return "pipeline " + std::to_string(i) + " has no stages";
    int layers = 0;
    std::vector<TpGroup> groups;
    for (const auto& s : p.stages) {
      layers += s.layers;
      groups.push_back(s.group);
      for (auto g : s.group.members)
        if (!seen.insert(g).second) return "GPU " + to_string(g) + " used twice";
      for (auto g : s.group.members)
        if (g.node != s.group.node()) return "group spans nodes";
    }
    if (layers != task.L) return "pipeline " + std::to_string(i) + " holds " + std::to_string(layers) + " layers";
    auto mb = stage_bounds(groups, plan.micro_batch_size, task.coefficients);
    for (std::size_t j = 0; j < mb.size(); ++j)
      if (!mb[j].fits(p.stages[j].layers))
        return "memory overflow at pipeline " + std::to_string(i) + " stage " + std::to_string(j);
    total += static_cast<long long>(p.micro_batches) * plan.micro_batch_size;
  }
  if (total != task.B) return "micro-batches cover " + std::to_string(total) + " samples";
  for (auto g : plan.removed)
    if (seen.count(g)) return "removed GPU " + to_string(g) + " is in use";
  return {};
}

// Drops idle pipelines and compacts zero-layer stages when the shorter pipeline still fits.
inline ParallelizationPlan build_plan(const LowerSolution& s, const ClusterState& cluster, const TaskSpec& task) {
  ParallelizationPlan plan;
  plan.micro_batch_size = s.b;
  plan.estimated_step_seconds = s.estimate;
  for (std::size_t i = 0; i < s.stages.size(); ++i) {
    if (s.m[i] == 0) continue;
    Pipeline p;
    p.micro_batches = s.m[i];
    std::vector<TpGroup> kept;
    std::vector<int> kept_layers;
    for (std::size_t j = 0; j < s.stages[i].size(); ++j)
      if (s.layers[i][j] > 0) kept.push_back(s.stages[i][j]), kept_layers.push_back(s.layers[i][j]);
    bool compact = kept.size() < s.stages[i].size();
    if (compact) {
      auto mb = stage_bounds(kept, s.b, task.coefficients);
      for (std::size_t j = 0; j < kept.size(); ++j) compact = compact && mb[j].fits(kept_layers[j]);
    }
    if (compact) {
      for (std::size_t j = 0; j < kept.size(); ++j) p.stages.push_back({kept[j], kept_layers[j]});
    } else {
      for (std::size_t j = 0; j < s.stages[i].size(); ++j) p.stages.push_back({s.stages[i][j], s.layers[i][j]});
    }
    plan.pipelines.push_back(std::move(p));
  }
  std::set<GpuId> used;
  for (auto g : plan.in_use()) used.insert(g);
  for (auto g : cluster.gpus())
    if (!used.count(g)) plan.removed.insert(g);
  return plan;
}

namespace detail {

struct Built {
  bool feasible = false;
  ParallelizationPlan plan;
  double exact = kFailed;
  CandidateReport report;
  bool budget_exhausted = false;
  std::vector<std::string> log;
};

inline bool better(const Built& a, const Built& b) {
  if (!a.feasible) return false;
  if (!b.feasible) return true;
  double ea = a.plan.estimated_step_seconds, eb = b.plan.estimated_step_seconds;
  double tol = 1e-12 * std::max(std::abs(ea), std::abs(eb));
  if (std::abs(ea - eb) > tol) return ea < eb;
  return a.exact < b.exact * (1 - 1e-12);
}

inline Built solve_structures(const std::vector<std::vector<TpGroup>>& pipelines, const ClusterState& cluster,
                              const TaskSpec& task, const PlannerOptions& opt, bool reorder) {
  Built out;
  LowerOptions lo;
  lo.b_cap = opt.b_cap;
  lo.min_micro_batches = 1;  // model-state sharding assumes the full DP degree
  if (reorder) lo.order = mixed_order_fn(task);
  auto s = solve_lower(pipelines, task, lo);
  if (!s.feasible) return out;
  out.feasible = true;
  out.plan = build_plan(s, cluster, task);
  out.exact = exact_step_time(out.plan, cluster, task);
  return out;
}

inline int smallest_usable_b(const TaskSpec& task, int b_cap) {
  for (int b : task.micro_batch_sizes)
    if (b <= b_cap && task.B % b == 0) return b;
  return 0;
}

inline Built plan_candidate(const ClusterState& cluster, const TaskSpec& task, int dp, int tp_limit,
                            const PlannerOptions& opt) {
  Built best;
  best.report.source = "tp" + std::to_string(tp_limit);
  best.report.tp_limit = tp_limit;
  best.report.dp = dp;
  auto grouping = group_cluster(cluster, tp_limit, task, opt.explain ? &best.log : nullptr);
  best.report.groups = static_cast<int>(grouping.groups.size());
  if (static_cast<int>(grouping.groups.size()) < dp) return best;
  // Division is solved once, at the smallest usable micro-batch size.
  int b0 = smallest_usable_b(task, opt.b_cap);
  if (b0 == 0) return best;
  DivideOptions dopt{opt.division_candidates, opt.division_budget_seconds};
  auto divisions = divide_ranked(grouping.groups, dp, task.B / b0, task.coefficients.tau_at(b0), dopt);
  for (std::size_t r = 0; r < divisions.size(); ++r) {
    const auto& d = divisions[r];
    best.budget_exhausted = best.budget_exhausted || d.budget_exhausted;
    auto b = solve_structures(d.pipelines, cluster, task, opt, true);
    if (opt.explain) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "tp%d division #%zu: objective %.6g, h=%d.., T-hat %.6g", tp_limit, r,
                    d.objective, d.h.empty() ? 0 : d.h[0], b.feasible ? b.plan.estimated_step_seconds : kFailed);
      best.log.push_back(buf);
    }
    if (better(b, best)) {
      b.report = best.report;
      b.report.division_rank = static_cast<int>(r);
      b.report.division_objective = d.objective;
      b.log = std::move(best.log);
      b.budget_exhausted = best.budget_exhausted;
      best = std::move(b);
    }
  }
  best.report.feasible = best.feasible;
  if (best.feasible) {
    best.plan.tp_limit = tp_limit;
    best.report.estimate = best.plan.estimated_step_seconds;
    best.report.exact = best.exact;
  }
  return best;
}

inline ClusterState normalized(const ClusterState& c) {
  ClusterState n = c;
  n.rates.clear();
  n.standby.clear();
  return n;
}

}  // namespace detail

inline PlanReport plan(const ClusterState& cluster, const TaskSpec& task, const PlannerOptions& opt = {}) {
  auto t0 = std::chrono::steady_clock::now();
  cluster.validate();
  task.validate_against(cluster);
  int node_max = 0;
  for (const auto& n : cluster.nodes) node_max = std::max(node_max, n.gpu_count);
  std::vector<int> dps = opt.dp_candidates.empty() ? std::vector<int>{task.dp_degree} : opt.dp_candidates;
  std::vector<int> limits;
  for (int t : task.tp_degrees)
    if (t <= node_max) limits.push_back(t);
  std::sort(limits.begin(), limits.end());

  std::vector<std::pair<int, int>> jobs;
  for (int dp : dps)
    for (int t : limits) jobs.emplace_back(dp, t);
  std::vector<detail::Built> built(jobs.size());
  if (opt.parallel && jobs.size() > 1) {
    std::vector<std::future<detail::Built>> fut;
    for (auto [dp, t] : jobs)
      fut.push_back(std::async(std::launch::async, [&, dp, t] { return detail::plan_candidate(cluster, task, dp, t, opt); }));
    for (std::size_t i = 0; i < fut.size(); ++i) built[i] = fut[i].get();
  } else {
    for (std::size_t i = 0; i < jobs.size(); ++i)
      built[i] = detail::plan_candidate(cluster, task, jobs[i].first, jobs[i].second, opt);
  }

  bool abnormal = !cluster.rates.empty() &&
                  std::any_of(cluster.rates.begin(), cluster.rates.end(), [](const auto& kv) { return kv.second != 1.0; });
  if (opt.uniform_fallback && abnormal) {
    PlannerOptions sub = opt;
    sub.uniform_fallback = false;
    sub.explain = false;
    detail::Built fb;
    fb.report.source = "uniform";
    try {
      auto base = plan(detail::normalized(cluster), task, sub).plan;
      std::vector<std::vector<TpGroup>> pipes;
      for (const auto& p : base.pipelines) {
        std::vector<TpGroup> st;
        for (const auto& s : p.stages) st.push_back(make_group(s.group.members, cluster, task.coefficients));
        pipes.push_back(std::move(st));
      }
      auto b = detail::solve_structures(pipes, cluster, task, opt, false);
      b.report = fb.report;
      b.report.tp_limit = base.tp_limit;
      b.report.dp = static_cast<int>(base.pipelines.size());
      b.report.feasible = b.feasible;
      if (b.feasible) {
        b.plan.tp_limit = base.tp_limit;
        b.report.estimate = b.plan.estimated_step_seconds;
        b.report.exact = b.exact;
      }
      fb = std::move(b);
    } catch (const InfeasibleError&) {
    }
    built.push_back(std::move(fb));
  }

  PlanReport rep;
  std::size_t pick = built.size();
  for (std::size_t i = 0; i < built.size(); ++i) {
    rep.candidates.push_back(built[i].report);
    rep.budget_exhausted = rep.budget_exhausted || built[i].budget_exhausted;
    if (opt.explain)
      for (auto& l : built[i].log) rep.explain.push_back(l);
    if (pick == built.size() ? built[i].feasible : detail::better(built[i], built[pick])) pick = i;
  }
  if (pick == built.size()) {
    std::string why = "no feasible plan:";
    for (const auto& c : rep.candidates)
      why += " " + c.source + "(dp " + std::to_string(c.dp) + ", " + std::to_string(c.groups) + " groups)";
    throw InfeasibleError(why);
  }
  rep.plan = std::move(built[pick].plan);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// Re-plan when any GPU's rate moved by more than `threshold` relative to the baseline.
inline bool replan_needed(const std::map<GpuId, double>& prev, const std::map<GpuId, double>& next,
                          double threshold = 0.05) {
  for (const auto& [g, x] : next) {
    auto it = prev.find(g);
    if (it == prev.end()) continue;
    double p = it->second;
    if (is_failed(p) || is_failed(x)) {
      if (is_failed(p) != is_failed(x)) return true;
      continue;
    }
    // Relative slack keeps a change of exactly `threshold` below the trigger despite rounding.
    if (std::abs(x - p) > threshold * p * (1 + 1e-9)) return true;
  }
  return false;
}

}  // namespace stragplan
