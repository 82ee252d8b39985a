#pragma once

// Builders shared by the unit and acceptance suites.

#include <algorithm>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "stragplan/stragplan.hpp"

namespace fixture {

using namespace stragplan;

// Linear zeta, memory effectively unbounded unless coefficients are set afterwards.
inline TaskSpec make_task(int L, int B, int dp, std::vector<int> micro = {1}, std::vector<int> tp = {1, 2, 4, 8}) {
  TaskSpec t;
  t.L = L;
  t.B = B;
  t.dp_degree = dp;
  t.micro_batch_sizes = micro;
  t.tp_degrees = tp;
  for (int n : tp) t.coefficients.zeta[n] = 1.0 / n;
  double tau = 0.1;
  for (int b : micro) t.coefficients.tau[b] = tau * b;
  t.coefficients.gap_mib = 0;
  return t;
}

inline TpGroup group(double y, int size = 1, int node = 0, int first_local = 0, double cap = 81920) {
  TpGroup g;
  for (int k = 0; k < size; ++k) g.members.push_back({node, first_local + k});
  g.rate = y;
  g.capacity_mib = cap;
  return g;
}

// A valid plan over `nodes` x `per_node` GPUs: dp pipelines, power-of-two node-local groups, L layers each.
inline ParallelizationPlan random_plan(std::mt19937_64& rng, int nodes, int per_node, int dp, int L) {
  ParallelizationPlan p;
  std::vector<int> cursor(static_cast<std::size_t>(nodes), 0);
  std::uniform_int_distribution<int> pick_node(0, nodes - 1);
  const int sizes[] = {1, 2, 4, 8};
  auto take = [&](int want) -> TpGroup {
    for (int attempt = 0; attempt < 64; ++attempt) {
      int n = pick_node(rng);
      int& c = cursor[static_cast<std::size_t>(n)];
      int aligned = (c + want - 1) / want * want;
      if (aligned + want <= per_node) {
        TpGroup g;
        for (int k = 0; k < want; ++k) g.members.push_back({n, aligned + k});
        g.rate = 1.0;
        g.capacity_mib = 81920;
        c = aligned + want;
        return g;
      }
    }
    return {};
  };
  for (int i = 0; i < dp; ++i) {
    Pipeline pl;
    std::uniform_int_distribution<int> stages(1, std::min(L, 4));
    int pp = stages(rng);
    int left = L;
    for (int j = 0; j < pp; ++j) {
      int want = sizes[std::uniform_int_distribution<int>(0, 3)(rng)];
      want = std::min(want, per_node);
      TpGroup g;
      while (want >= 1 && (g = take(want)).members.empty()) want /= 2;
      if (g.members.empty()) break;
      int l = j + 1 == pp ? left : std::uniform_int_distribution<int>(0, left)(rng);
      left -= l;
      pl.stages.push_back({g, l});
    }
    if (pl.stages.empty()) return random_plan(rng, nodes, per_node, dp, L);
    pl.stages.back().layers += left;
    pl.micro_batches = 1;
    p.pipelines.push_back(std::move(pl));
  }
  return p;
}

// Objective of the best plan over every grouping, division, stage order and assignment of a
// single-node cluster; memory is checked with the library's bound. Groups may stay unused.
inline double plan_bruteforce(const std::vector<double>& rates, const TaskSpec& task, double cap_mib,
                              int min_micro_batches = 1) {
  const auto& c = task.coefficients;
  const std::size_t n = rates.size();
  double best = kFailed;
  for (std::size_t parts = 1; parts <= n; ++parts) {
    oracle::set_partitions(n, parts, [&](const std::vector<std::vector<std::size_t>>& blocks) {
      std::vector<int> sizes;
      std::vector<double> ys;
      for (const auto& b : blocks) {
        int s = static_cast<int>(b.size());
        if (std::find(task.tp_degrees.begin(), task.tp_degrees.end(), s) == task.tp_degrees.end()) return;
        std::vector<double> r;
        for (auto i : b) r.push_back(rates[i]);
        sizes.push_back(s);
        ys.push_back(group_rate(r, s, c));
      }
      const int dp = task.dp_degree;
      std::vector<int> where(blocks.size(), -1);  // -1 unused, else pipeline
      std::function<void(std::size_t)> place = [&](std::size_t g) {
        if (g == blocks.size()) {
          std::vector<std::vector<std::size_t>> pipes(static_cast<std::size_t>(dp));
          for (std::size_t k = 0; k < blocks.size(); ++k)
            if (where[k] >= 0) pipes[static_cast<std::size_t>(where[k])].push_back(k);
          for (const auto& p : pipes)
            if (p.empty()) return;
          for (int b : task.micro_batch_sizes) {
            if (task.B % b != 0) continue;
            // Best layer objective per pipeline over all stage orders.
            std::vector<double> o;
            for (auto p : pipes) {
              double ob = kFailed;
              std::sort(p.begin(), p.end());
              do {
                std::vector<oracle::StageSpec> st;
                const int pp = static_cast<int>(p.size());
                for (int j = 0; j < pp; ++j) {
                  auto k = p[static_cast<std::size_t>(j)];
                  st.push_back({ys[k], memory_bound(b, j + 1, pp, sizes[k], cap_mib, c)});
                }
                ob = std::min(ob, oracle::layer_min(st, task.L));
              } while (std::next_permutation(p.begin(), p.end()));
              o.push_back(ob);
            }
            const int M = task.B / b;
            double mbest = kFailed;
            oracle::compositions(M, dp, [&](const std::vector<int>& m) {
              double v = 0;
              for (std::size_t i = 0; i < m.size(); ++i) {
                if (m[i] < min_micro_batches) return;
                if (m[i] > 0 && std::isinf(o[i])) return;
                v = std::max(v, oracle::load(o[i], m[i]));
              }
              mbest = std::min(mbest, v);
            });
            best = std::min(best, mbest * c.tau_at(b));
          }
          return;
        }
        for (int w = -1; w < dp; ++w) {
          where[g] = w;
          place(g + 1);
        }
      };
      place(0);
    });
  }
  return best;
}

}  // namespace fixture
