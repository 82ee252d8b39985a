#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "domain.hpp"

namespace stragplan {

// minimize max_k weights[k] * load[k]  s.t.  sum load = total, 0 <= load[k] <= upper[k].
// An infinite weight forbids the bucket. Empty `upper` means unbounded; `lower` is a common floor.
struct MinimaxProblem {
  std::vector<double> weights;
  std::vector<int> upper;
  int total = 0;
  int lower = 0;
};

struct MinimaxResult {
  bool feasible = false;
  std::vector<int> load;
  double objective = kFailed;
};

inline double weighted_load(double w, int x) { return x == 0 ? 0.0 : w * x; }

namespace detail {

inline int bucket_cap(double w, int ub, double t) {
  if (ub <= 0) return 0;
  if (is_failed(w)) return 0;
  double raw = std::floor(t / w);
  int x = raw >= ub ? ub : static_cast<int>(std::max(0.0, raw));
  while (x < ub && weighted_load(w, x + 1) <= t) ++x;
  while (x > 0 && weighted_load(w, x) > t) --x;
  return x;
}

}  // namespace detail

inline MinimaxResult solve_minimax_ilp(const MinimaxProblem& p) {
  const std::size_t n = p.weights.size();
  require(p.upper.empty() || p.upper.size() == n, "solve_minimax_ilp: bounds size mismatch");
  require(p.total >= 0 && p.lower >= 0, "solve_minimax_ilp: negative total");
  std::vector<int> ub(n);
  long long room = 0;
  const int lo_bound = p.lower;
  for (std::size_t k = 0; k < n; ++k) {
    require(is_failed(p.weights[k]) || p.weights[k] > 0, "solve_minimax_ilp: weights must be positive");
    int u = p.upper.empty() ? p.total : std::min(p.upper[k], p.total);
    ub[k] = is_failed(p.weights[k]) ? 0 : std::max(0, u);
    if (ub[k] < lo_bound) return {};
    room += ub[k];
  }
  MinimaxResult r;
  if (room < p.total || static_cast<long long>(lo_bound) * static_cast<long long>(n) > p.total) return r;

  // Every attainable objective is some w_k * v; find the smallest feasible one.
  std::vector<double> cand{0.0};
  for (std::size_t k = 0; k < n; ++k)
    for (int v = 1; v <= ub[k]; ++v) cand.push_back(weighted_load(p.weights[k], v));
  double floor_obj = 0;
  for (std::size_t k = 0; k < n; ++k) floor_obj = std::max(floor_obj, weighted_load(p.weights[k], lo_bound));
  cand.erase(std::remove_if(cand.begin(), cand.end(), [&](double c) { return c < floor_obj; }), cand.end());
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());

  auto capacity = [&](double t) {
    long long s = 0;
    for (std::size_t k = 0; k < n; ++k) s += detail::bucket_cap(p.weights[k], ub[k], t);
    return s;
  };
  std::size_t lo = 0, hi = cand.size() - 1;
  while (lo < hi) {
    std::size_t mid = (lo + hi) / 2;
    if (capacity(cand[mid]) >= p.total) hi = mid;
    else lo = mid + 1;
  }
  const double t = cand[lo];

  // Lexicographically smallest load vector among the optima.
  std::vector<int> cap(n);
  for (std::size_t k = 0; k < n; ++k) cap[k] = detail::bucket_cap(p.weights[k], ub[k], t);
  std::vector<long long> suffix(n + 1, 0);
  for (std::size_t k = n; k-- > 0;) suffix[k] = suffix[k + 1] + cap[k];
  r.load.assign(n, 0);
  long long rem = p.total;
  for (std::size_t k = 0; k < n; ++k) {
    long long x = std::max<long long>(lo_bound, rem - suffix[k + 1]);
    r.load[k] = static_cast<int>(x);
    rem -= x;
  }
  r.objective = 0;
  for (std::size_t k = 0; k < n; ++k) r.objective = std::max(r.objective, weighted_load(p.weights[k], r.load[k]));
  r.feasible = true;
  return r;
}

// Relaxed throughput of a pipeline: h fast groups plus the listed slow groups.
// Summation order is canonical (ascending reciprocal) so equal multisets give equal doubles.
inline double division_capacity(int fast_count, double fast_rate, std::vector<double> slow_rates) {
  std::vector<double> inv;
  inv.reserve(slow_rates.size());
  for (double y : slow_rates) inv.push_back(is_failed(y) ? 0.0 : 1.0 / y);
  std::sort(inv.begin(), inv.end());
  double c = fast_count == 0 ? 0.0 : fast_count / fast_rate;
  for (double v : inv) c += v;
  return c;
}

struct DivisionProblem {
  int fast_count = 0;
  std::vector<double> slow_rates;
  double fast_rate = 1.0;
  int dp = 1;
  int micro_batch_total = 1;
  double tau = 1.0;
  double time_budget_seconds = 0;  // 0 disables the budget
};

struct DivisionResult {
  bool feasible = false;
  std::vector<int> h;              // fast groups per pipeline
  std::vector<int> slow_pipeline;  // pipeline index of each slow group
  std::vector<int> m;
  double objective = kFailed;  // seconds
  double spread = 0;           // max - min pipeline capacity, the tie-break among equal objectives
  bool budget_exhausted = false;

  int q(int pipeline, int slow) const {
    return slow_pipeline[static_cast<std::size_t>(slow)] == pipeline ? 1 : 0;
  }
};

namespace detail {

struct DivisionSearch {
  const DivisionProblem& p;
  std::size_t keep;
  std::vector<double> class_rate;              // class 0 is the fast cohort
  std::vector<std::vector<int>> class_members;  // slow indices per class (empty for fast)
  std::vector<std::vector<int>> counts;         // [class][pipeline]
  std::vector<DivisionResult> best;
  std::chrono::steady_clock::time_point start;
  long long leaves = 0;
  bool stopped = false;

  DivisionSearch(const DivisionProblem& prob, std::size_t k) : p(prob), keep(k) {
    class_rate.push_back(p.fast_rate);
    class_members.emplace_back();
    for (int s = 0; s < static_cast<int>(p.slow_rates.size()); ++s) {
      double y = p.slow_rates[static_cast<std::size_t>(s)];
      std::size_t c = 1;
      while (c < class_rate.size() && !(class_rate[c] == y)) ++c;
      if (c == class_rate.size()) {
        class_rate.push_back(y);
        class_members.emplace_back();
      }
      class_members[c].push_back(s);
    }
    counts.assign(class_rate.size(), std::vector<int>(static_cast<std::size_t>(p.dp), 0));
    start = std::chrono::steady_clock::now();
  }

  int class_size(std::size_t c) const {
    return c == 0 ? p.fast_count : static_cast<int>(class_members[c].size());
  }

  void leaf() {
    ++leaves;
    if (p.time_budget_seconds > 0 && (leaves & 255) == 0) {
      double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (el > p.time_budget_seconds) stopped = true;
    }
    const auto dp = static_cast<std::size_t>(p.dp);
    DivisionResult r;
    r.h.assign(dp, 0);
    r.slow_pipeline.assign(p.slow_rates.size(), -1);
    std::vector<std::vector<double>> slow_in(dp);
    for (std::size_t i = 0; i < dp; ++i) r.h[i] = counts[0][i];
    for (std::size_t c = 1; c < class_rate.size(); ++c) {
      std::size_t next = 0;
      for (std::size_t i = 0; i < dp; ++i)
        for (int t = 0; t < counts[c][i]; ++t) {
          int s = class_members[c][next++];
          r.slow_pipeline[static_cast<std::size_t>(s)] = static_cast<int>(i);
          slow_in[i].push_back(class_rate[c]);
        }
    }
    MinimaxProblem mp;
    mp.total = p.micro_batch_total;
    double cmin = kFailed, cmax = 0;
    for (std::size_t i = 0; i < dp; ++i) {
      if (r.h[i] == 0 && slow_in[i].empty()) return;  // empty pipeline
      double cap = division_capacity(r.h[i], p.fast_rate, slow_in[i]);
      cmin = std::min(cmin, cap);
      cmax = std::max(cmax, cap);
      mp.weights.push_back(cap > 0 ? 1.0 / cap : kFailed);
    }
    r.spread = cmax - cmin;
    auto sol = solve_minimax_ilp(mp);
    if (!sol.feasible) return;
    r.m = sol.load;
    r.objective = sol.objective * p.tau;
    r.feasible = true;
    auto pos = std::upper_bound(best.begin(), best.end(), r, [](const DivisionResult& a, const DivisionResult& b) {
      return a.objective != b.objective ? a.objective < b.objective : a.spread < b.spread;
    });
    if (best.size() < keep || pos != best.end()) {
      best.insert(pos, std::move(r));
      if (best.size() > keep) best.pop_back();
    }
  }

  // Distribute class c over pipelines; tied[i] means pipelines i and i+1 are identical so far.
  void spread(std::size_t c, std::size_t i, int left, std::vector<char>& tied) {
    if (stopped) return;
    const auto dp = static_cast<std::size_t>(p.dp);
    if (i + 1 == dp) {
      if (i > 0 && tied[i - 1] && left > counts[c][i - 1]) return;
      counts[c][i] = left;
      std::vector<char> next(tied);
      for (std::size_t k = 0; k + 1 < dp; ++k) next[k] = tied[k] && counts[c][k] == counts[c][k + 1];
      walk(c + 1, next);
      counts[c][i] = 0;
      return;
    }
    int hi = left;
    if (i > 0 && tied[i - 1]) hi = std::min(hi, counts[c][i - 1]);
    for (int v = hi; v >= 0; --v) {
      counts[c][i] = v;
      spread(c, i + 1, left - v, tied);
    }
    counts[c][i] = 0;
  }

  void walk(std::size_t c, std::vector<char>& tied) {
    if (stopped) return;
    if (c == class_rate.size()) {
      leaf();
      return;
    }
    spread(c, 0, class_size(c), tied);
  }

  void run() {
    std::vector<char> tied(static_cast<std::size_t>(std::max(0, p.dp - 1)), 1);
    walk(0, tied);
  }
};

}  // namespace detail

// The best `keep` divisions by objective, then by capacity spread, then enumeration order.
inline std::vector<DivisionResult> solve_division_ranked(const DivisionProblem& p, std::size_t keep) {
  require(p.dp >= 1, "solve_division: dp must be >= 1");
  require(p.fast_count >= 0 && p.micro_batch_total >= 0, "solve_division: negative counts");
  require(p.fast_count == 0 || p.fast_rate > 0, "solve_division: fast rate must be positive");
  if (p.fast_count + static_cast<int>(p.slow_rates.size()) < p.dp) return {};
  detail::DivisionSearch s(p, std::max<std::size_t>(keep, 1));
  s.run();
  if (s.stopped)
    for (auto& r : s.best) r.budget_exhausted = true;
  return s.best;
}

inline DivisionResult solve_division_minlp(const DivisionProblem& p) {
  auto all = solve_division_ranked(p, 1);
  if (all.empty()) return {};
  return all.front();
}

}  // namespace stragplan
