#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "costmodel.hpp"
#include "domain.hpp"

namespace stragplan {

using IndexGroups = std::vector<std::vector<std::size_t>>;

// Indices of `rates` ordered by descending rate, ties by index.
inline std::vector<std::size_t> descending_order(const std::vector<double>& rates) {
  std::vector<std::size_t> idx(rates.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return rates[a] > rates[b]; });
  return idx;
}

inline IndexGroups even_partition(const std::vector<double>& rates, int k) {
  require(k >= 1 && rates.size() % static_cast<std::size_t>(k) == 0, "even_partition: k must divide n");
  auto order = descending_order(rates);
  IndexGroups out;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(k))
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(i) + k);
  return out;
}

// (sum 1/y_b) / (sum 1/y_a): below 1 means grouping a is faster under the relaxation.
inline double relaxed_ratio(const std::vector<double>& a, const std::vector<double>& b) {
  require(!a.empty() && !b.empty(), "relaxed_ratio: empty grouping");
  auto throughput = [](const std::vector<double>& ys) {
    double s = 0;
    for (double y : ys) s += is_failed(y) ? 0.0 : 1.0 / y;
    return s;
  };
  return throughput(b) / throughput(a);
}

// Consecutive-block groupings of a descending-sorted sequence, one per distinct block order.
// Each candidate lists its groups by ascending size (ties by position); candidates are ordered
// lexicographically by those groups' start positions.
inline std::vector<IndexGroups> enumerate_splits(const std::vector<double>& sorted_rates_desc,
                                                 std::vector<int> target_sizes) {
  int total = std::accumulate(target_sizes.begin(), target_sizes.end(), 0);
  require(total == static_cast<int>(sorted_rates_desc.size()), "enumerate_splits: size mismatch");
  for (int s : target_sizes) require(s >= 1, "enumerate_splits: sizes must be positive");
  std::sort(target_sizes.begin(), target_sizes.end());
  std::vector<std::pair<std::vector<std::size_t>, IndexGroups>> keyed;
  do {
    IndexGroups groups;
    std::size_t pos = 0;
    for (int s : target_sizes) {
      std::vector<std::size_t> g(static_cast<std::size_t>(s));
      std::iota(g.begin(), g.end(), pos);
      pos += static_cast<std::size_t>(s);
      groups.push_back(std::move(g));
    }
    std::stable_sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) {
      return a.size() != b.size() ? a.size() < b.size() : a.front() < b.front();
    });
    std::vector<std::size_t> key;
    for (const auto& g : groups) key.push_back(g.front());
    keyed.emplace_back(std::move(key), std::move(groups));
  } while (std::next_permutation(target_sizes.begin(), target_sizes.end()));
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<IndexGroups> out;
  for (auto& [k, g] : keyed) out.push_back(std::move(g));
  return out;
}

// Binary decomposition, largest part first: 7 -> {4,2,1}.
inline std::vector<int> dyadic_parts(int n) {
  std::vector<int> out;
  for (int p = 1 << 30; p >= 1; p >>= 1)
    if (n & p) out.push_back(p);
  return out;
}

namespace detail {

inline double group_rate_of(const std::vector<double>& rates, const std::vector<std::size_t>& g,
                            const ProfiledCoefficients& c) {
  std::vector<double> r;
  for (auto i : g) r.push_back(rates[i]);
  return group_rate(r, static_cast<int>(g.size()), c);
}

inline std::vector<double> group_rates_of(const std::vector<double>& rates, const IndexGroups& groups,
                                          const ProfiledCoefficients& c) {
  std::vector<double> ys;
  for (const auto& g : groups) ys.push_back(group_rate_of(rates, g, c));
  return ys;
}

inline double throughput(const std::vector<double>& ys) {
  double s = 0;
  for (double y : ys) s += is_failed(y) ? 0.0 : 1.0 / y;
  return s;
}

inline bool allowed(const std::vector<int>& sizes, int s) {
  return std::find(sizes.begin(), sizes.end(), s) != sizes.end();
}

inline std::string describe(const std::vector<double>& rates, const IndexGroups& groups) {
  std::string s;
  for (const auto& g : groups) {
    s += "{";
    for (std::size_t i = 0; i < g.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s%g", i ? "," : "", rates[g[i]]);
      s += buf;
    }
    s += "}";
  }
  return s;
}

}  // namespace detail

struct NodeGrouping {
  IndexGroups groups;                // indices into the node's rate vector
  std::vector<std::size_t> excluded;  // failed GPUs and GPUs no allowed size can hold
};

// Even partition at tp_limit, then straggler isolation scored by relaxed_ratio.
// Adopted splits are never revisited.
inline NodeGrouping group_node(const std::vector<double>& node_rates, int tp_limit,
                               const ProfiledCoefficients& coeffs, const std::vector<int>& allowed_sizes,
                               std::vector<std::string>* log = nullptr) {
  constexpr double kEps = 1e-9;
  NodeGrouping out;
  std::vector<std::size_t> alive;
  for (auto i : descending_order(node_rates)) {
    if (is_failed(node_rates[i])) out.excluded.push_back(i);
    else alive.push_back(i);
  }
  int n = static_cast<int>(alive.size());
  if (n == 0) return out;

  std::vector<int> sizes(static_cast<std::size_t>(n / tp_limit), tp_limit);
  for (int p : dyadic_parts(n % tp_limit)) sizes.push_back(p);
  // Parts no allowed size can hold go to standby, slowest GPUs first.
  std::size_t drop = 0;
  std::vector<int> kept;
  for (int s : sizes) {
    if (detail::allowed(allowed_sizes, s)) kept.push_back(s);
    else drop += static_cast<std::size_t>(s);
  }
  for (std::size_t i = 0; i < drop; ++i) out.excluded.push_back(alive[i]);
  alive.erase(alive.begin(), alive.begin() + static_cast<std::ptrdiff_t>(drop));
  if (alive.empty()) return out;

  std::vector<double> sorted;
  for (auto i : alive) sorted.push_back(node_rates[i]);

  // Incumbent over sorted positions.
  IndexGroups inc;
  {
    double best = 0;
    for (auto& cand : enumerate_splits(sorted, kept)) {
      double thr = detail::throughput(detail::group_rates_of(sorted, cand, coeffs));
      if (inc.empty() || thr > best * (1 + kEps)) {
        best = thr;
        inc = cand;
      }
    }
  }
  if (log) log->push_back("initial " + detail::describe(sorted, inc));

  for (std::size_t pos = 0; pos < sorted.size(); ++pos) {
    if (!(sorted[pos] > 1.0)) break;
    auto gi = std::find_if(inc.begin(), inc.end(), [&](const auto& g) {
      return std::find(g.begin(), g.end(), pos) != g.end();
    });
    if (gi->size() == 1) continue;
    std::vector<std::size_t> rest;
    for (auto p : *gi)
      if (p != pos) rest.push_back(p);
    auto parts = dyadic_parts(static_cast<int>(rest.size()));
    bool ok = detail::allowed(allowed_sizes, 1);
    for (int s : parts) ok = ok && detail::allowed(allowed_sizes, s);
    if (!ok) continue;
    std::vector<double> rest_rates;
    for (auto p : rest) rest_rates.push_back(sorted[p]);

    auto base_ys = detail::group_rates_of(sorted, inc, coeffs);
    double best_ratio = 1.0 - kEps;
    IndexGroups best;
    for (const auto& cand : enumerate_splits(rest_rates, parts)) {
      IndexGroups var;
      for (auto it = inc.begin(); it != inc.end(); ++it) {
        if (it != gi) {
          var.push_back(*it);
          continue;
        }
        var.push_back({pos});
        for (const auto& g : cand) {
          std::vector<std::size_t> mapped;
          for (auto k : g) mapped.push_back(rest[k]);
          var.push_back(std::move(mapped));
        }
      }
      double ratio = relaxed_ratio(detail::group_rates_of(sorted, var, coeffs), base_ys);
      if (log) {
        char buf[64];
        std::snprintf(buf, sizeof buf, " ratio %.6f", ratio);
        log->push_back("  isolate " + std::to_string(sorted[pos]) + " -> " + detail::describe(sorted, var) + buf);
      }
      if (ratio < best_ratio) {
        best_ratio = ratio;
        best = std::move(var);
      }
    }
    if (!best.empty()) {
      inc = std::move(best);
      if (log) log->push_back("  adopted " + detail::describe(sorted, inc));
    }
  }

  for (const auto& g : inc) {
    std::vector<std::size_t> mapped;
    for (auto p : g) mapped.push_back(alive[p]);
    out.groups.push_back(std::move(mapped));
  }
  return out;
}

struct GroupingResult {
  std::vector<TpGroup> groups;
  int tp_limit = 0;
  std::vector<GpuId> excluded;
};

inline GroupingResult group_cluster(const ClusterState& cluster, int tp_limit, const TaskSpec& task,
                                    std::vector<std::string>* log = nullptr) {
  GroupingResult res;
  res.tp_limit = tp_limit;
  std::vector<int> sizes;
  for (int t : task.tp_degrees)
    if (t <= tp_limit) sizes.push_back(t);
  for (int node = 0; node < static_cast<int>(cluster.nodes.size()); ++node) {
    auto ids = cluster.node_gpus(node);
    std::vector<double> rates;
    for (auto g : ids) rates.push_back(cluster.rate(g));
    std::vector<std::string> node_log;
    auto ng = group_node(rates, tp_limit, task.coefficients, sizes, log ? &node_log : nullptr);
    if (log)
      for (auto& line : node_log) log->push_back("node " + std::to_string(node) + ": " + line);
    for (auto i : ng.excluded) res.excluded.push_back(ids[i]);
    for (const auto& g : ng.groups) {
      std::vector<GpuId> members;
      for (auto i : g) members.push_back(ids[i]);
      res.groups.push_back(make_group(std::move(members), cluster, task.coefficients));
    }
  }
  return res;
}

}  // namespace stragplan
