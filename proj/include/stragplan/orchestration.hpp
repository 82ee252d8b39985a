#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <vector>

#include "assignment.hpp"
#include "domain.hpp"
#include "solver.hpp"

namespace stragplan {

// Most common group rate; among equally common rates the smallest.
inline double modal_rate(const std::vector<TpGroup>& groups) {
  require(!groups.empty(), "modal_rate: no groups");
  std::map<double, int> count;
  for (const auto& g : groups) ++count[g.rate];
  double best = count.begin()->first;
  int n = 0;
  for (const auto& [y, c] : count)
    if (c > n) best = y, n = c;
  return best;
}

struct PipelineDivision {
  std::vector<std::vector<TpGroup>> pipelines;
  double fast_rate = 1.0;  // y-hat
  std::vector<int> h;
  std::vector<int> slow_pipeline;  // q as the pipeline index of each slow group
  std::vector<int> m;              // provisional
  double objective = kFailed;
  bool budget_exhausted = false;
};

struct DivideOptions {
  std::size_t keep = 1;  // how many ranked divisions to return
  double time_budget_seconds = 0;
};

inline std::vector<PipelineDivision> divide_ranked(const std::vector<TpGroup>& groups, int dp,
                                                   int micro_batch_total, double tau,
                                                   const DivideOptions& opt = {}) {
  if (static_cast<int>(groups.size()) < dp || groups.empty()) return {};
  const double yhat = modal_rate(groups);
  std::vector<const TpGroup*> fast, slow;
  for (const auto& g : groups) (g.rate == yhat ? fast : slow).push_back(&g);

  DivisionProblem p;
  p.fast_count = static_cast<int>(fast.size());
  for (auto* g : slow) p.slow_rates.push_back(g->rate);
  p.fast_rate = yhat;
  p.dp = dp;
  p.micro_batch_total = micro_batch_total;
  p.tau = tau;
  p.time_budget_seconds = opt.time_budget_seconds;

  std::vector<PipelineDivision> out;
  for (auto& r : solve_division_ranked(p, opt.keep)) {
    PipelineDivision d;
    d.fast_rate = yhat;
    d.pipelines.resize(static_cast<std::size_t>(dp));
    std::size_t next = 0;
    for (int i = 0; i < dp; ++i)
      for (int t = 0; t < r.h[static_cast<std::size_t>(i)]; ++t) d.pipelines[static_cast<std::size_t>(i)].push_back(*fast[next++]);
    for (std::size_t k = 0; k < slow.size(); ++k)
      d.pipelines[static_cast<std::size_t>(r.slow_pipeline[k])].push_back(*slow[k]);
    d.h = r.h;
    d.slow_pipeline = r.slow_pipeline;
    d.m = r.m;
    d.objective = r.objective;
    d.budget_exhausted = r.budget_exhausted;
    out.push_back(std::move(d));
  }
  return out;
}

inline PipelineDivision divide(const std::vector<TpGroup>& groups, int dp, int micro_batch_total, double tau,
                               double time_budget_seconds = 0) {
  if (static_cast<int>(groups.size()) < dp)
    throw InfeasibleError("divide: fewer groups than pipelines");
  auto r = divide_ranked(groups, dp, micro_batch_total, tau, {1, time_budget_seconds});
  if (r.empty()) throw InfeasibleError("divide: no feasible division");
  return r.front();
}

// Descending group rate, stable; the fastest group becomes the last stage.
inline std::vector<TpGroup> order_equal(std::vector<TpGroup> groups) {
  std::stable_sort(groups.begin(), groups.end(),
                   [](const TpGroup& a, const TpGroup& b) { return a.rate > b.rate; });
  return groups;
}

struct OrderedPipeline {
  std::vector<TpGroup> stages;
  LayerAssignment layers;
};

// Bundles equal-size groups, orders each bundle descending, and tries every bundle order.
inline OrderedPipeline order_mixed(const std::vector<TpGroup>& groups, const TaskSpec& task, int b) {
  require(!groups.empty(), "order_mixed: empty pipeline");
  std::map<int, std::vector<TpGroup>> by_size;
  for (const auto& g : groups) by_size[g.size()].push_back(g);
  std::vector<std::vector<TpGroup>> bundles;
  for (auto& [s, v] : by_size) bundles.push_back(order_equal(v));

  std::vector<std::size_t> perm(bundles.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  OrderedPipeline best;
  bool first = true;
  do {
    std::vector<TpGroup> st;
    for (auto k : perm) st.insert(st.end(), bundles[k].begin(), bundles[k].end());
    std::vector<double> ys;
    for (const auto& g : st) ys.push_back(g.rate);
    auto la = assign_layers(ys, task.L, stage_bounds(st, b, task.coefficients));
    bool better = first || (la.feasible && (!best.layers.feasible || la.objective < best.layers.objective));
    if (better) {
      best.stages = std::move(st);
      best.layers = std::move(la);
    }
    first = false;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline OrderFn mixed_order_fn(const TaskSpec& task) {
  return [&task](const std::vector<TpGroup>& groups, int b) {
    auto r = order_mixed(groups, task, b);
    return std::make_pair(std::move(r.stages), std::move(r.layers));
  };
}

}  // namespace stragplan
