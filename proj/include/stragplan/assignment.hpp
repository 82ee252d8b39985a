#pragma once

#include <functional>
#include <vector>

#include "costmodel.hpp"
#include "domain.hpp"
#include "solver.hpp"

namespace stragplan {

inline std::vector<MemoryBound> stage_bounds(const std::vector<TpGroup>& stages, int b,
                                             const ProfiledCoefficients& c) {
  std::vector<MemoryBound> out;
  const int pp = static_cast<int>(stages.size());
  for (int j = 0; j < pp; ++j) {
    const auto& g = stages[static_cast<std::size_t>(j)];
    out.push_back(memory_bound(b, j + 1, pp, g.size(), g.capacity_mib, c));
  }
  return out;
}

struct LayerAssignment {
  bool feasible = false;
  std::vector<int> layers;
  double objective = kFailed;  // o = max_j y_j * l_j
};

inline LayerAssignment assign_layers(const std::vector<double>& rates, int L,
                                     const std::vector<MemoryBound>& bounds) {
  require(!rates.empty() && rates.size() == bounds.size(), "assign_layers: size mismatch");
  MinimaxProblem p;
  p.weights = rates;
  p.total = L;
  for (const auto& mb : bounds) {
    int u = mb.max_layers(L);
    if (u < 0) return {};
    p.upper.push_back(u);
  }
  auto r = solve_minimax_ilp(p);
  LayerAssignment a;
  if (!r.feasible) return a;
  a.feasible = true;
  a.layers = std::move(r.load);
  a.objective = r.objective;
  return a;
}

struct DataAssignment {
  bool feasible = false;
  std::vector<int> micro_batches;
  double objective = kFailed;  // max_i o_i * m_i, without tau
};

inline DataAssignment assign_data(const std::vector<double>& o, int micro_batch_total, int min_per_pipeline = 0) {
  MinimaxProblem p;
  p.weights = o;
  p.total = micro_batch_total;
  p.lower = min_per_pipeline;
  auto r = solve_minimax_ilp(p);
  DataAssignment d;
  if (!r.feasible) return d;
  d.feasible = true;
  d.micro_batches = std::move(r.load);
  d.objective = r.objective;
  return d;
}

struct LowerSolution {
  bool feasible = false;
  int b = 0;
  std::vector<std::vector<TpGroup>> stages;  // ordered, per pipeline
  std::vector<std::vector<int>> layers;      // empty for layer-infeasible pipelines
  std::vector<double> o;
  std::vector<int> m;
  double estimate = kFailed;  // T-hat = max_i o_i m_i tau(b)
};

// Receives one pipeline's groups and b; returns the stage order and its layer split.
using OrderFn = std::function<std::pair<std::vector<TpGroup>, LayerAssignment>(const std::vector<TpGroup>&, int)>;

struct LowerOptions {
  int b_cap = 16;
  OrderFn order;                   // empty keeps the given order
  int min_micro_batches = 0;       // per pipeline; 1 keeps every pipeline busy
};

inline LowerSolution solve_lower_at(const std::vector<std::vector<TpGroup>>& pipelines, const TaskSpec& task,
                                    int b, const OrderFn& order = {}, int min_micro_batches = 0) {
  const auto& c = task.coefficients;
  LowerSolution s;
  s.b = b;
  bool any = false;
  for (const auto& p : pipelines) {
    std::vector<TpGroup> st;
    LayerAssignment la;
    if (order) {
      std::tie(st, la) = order(p, b);
    } else {
      st = p;
      std::vector<double> ys;
      for (const auto& g : st) ys.push_back(g.rate);
      la = assign_layers(ys, task.L, stage_bounds(st, b, c));
    }
    any = any || la.feasible;
    s.stages.push_back(std::move(st));
    s.layers.push_back(la.feasible ? la.layers : std::vector<int>{});
    s.o.push_back(la.feasible ? la.objective : kFailed);
  }
  if (!any) return s;
  auto d = assign_data(s.o, task.B / b, min_micro_batches);
  if (!d.feasible) return s;
  s.m = d.micro_batches;
  s.estimate = d.objective * c.tau_at(b);
  s.feasible = true;
  return s;
}

// Enumerates b ascending; stops once every pipeline is layer-infeasible. Ties keep the smaller b.
inline LowerSolution solve_lower(const std::vector<std::vector<TpGroup>>& pipelines, const TaskSpec& task,
                                 const LowerOptions& opt = {}) {
  require(!pipelines.empty(), "solve_lower: no pipelines");
  for (const auto& p : pipelines) require(!p.empty(), "solve_lower: empty pipeline");
  LowerSolution best;
  for (int b : task.micro_batch_sizes) {
    if (b > opt.b_cap) break;
    if (task.B % b != 0) continue;
    auto s = solve_lower_at(pipelines, task, b, opt.order, opt.min_micro_batches);
    bool any = false;
    for (double o : s.o) any = any || !is_failed(o);
    if (!any) break;
    if (s.feasible && (!best.feasible || s.estimate < best.estimate)) best = std::move(s);
  }
  return best;
}

}  // namespace stragplan
