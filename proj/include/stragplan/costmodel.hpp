#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "domain.hpp"

namespace stragplan {

inline double rho(int n, const ProfiledCoefficients& c) { return c.rho(n); }

inline double group_rate(const std::vector<double>& member_rates, int group_size,
                         const ProfiledCoefficients& c) {
  require(group_size >= 1 && static_cast<int>(member_rates.size()) == group_size,
          "group_rate: size mismatch");
  double r = c.rho(group_size);
  double mx = *std::max_element(member_rates.begin(), member_rates.end());
  if (is_failed(mx)) return kFailed;
  return r * mx;
}

// Builds a group from cluster state; members are reordered by descending rate.
inline TpGroup make_group(std::vector<GpuId> members, const ClusterState& cluster,
                          const ProfiledCoefficients& c) {
  require(!members.empty(), "make_group: empty group");
  std::stable_sort(members.begin(), members.end(),
                   [&](GpuId a, GpuId b) { return cluster.rate(a) > cluster.rate(b); });
  std::vector<double> rates;
  double cap = kFailed;
  for (auto g : members) {
    require(g.node == members.front().node, "make_group: members span nodes");
    rates.push_back(cluster.rate(g));
    cap = std::min(cap, cluster.capacity(g));
  }
  TpGroup grp;
  grp.members = std::move(members);
  grp.rate = group_rate(rates, grp.size(), c);
  grp.capacity_mib = cap;
  return grp;
}

// t = y * l * tau; an empty stage costs nothing even when y is infinite.
inline double stage_time(double y, int layers, double tau) {
  if (layers == 0) return 0.0;
  return y * layers * tau;
}

inline double pipeline_time_exact(int m, const std::vector<double>& t) {
  require(!t.empty(), "pipeline_time_exact: no stages");
  if (m == 0) return 0.0;
  double mx = *std::max_element(t.begin(), t.end());
  double sum = std::accumulate(t.begin(), t.end(), 0.0);
  return (m - 1) * mx + sum;
}

inline double pipeline_time_approx(int m, const std::vector<double>& t) {
  require(!t.empty(), "pipeline_time_approx: no stages");
  if (m == 0) return 0.0;
  return m * *std::max_element(t.begin(), t.end());
}

struct MemoryBound {
  double mu = 0;
  double nu = 0;
  double cap = 0;

  bool fits(int layers) const { return layers * mu + nu <= cap; }

  // Largest layer count that fits, at most `limit`; -1 when even an empty stage overflows.
  int max_layers(int limit) const {
    if (!fits(0)) return -1;
    if (mu <= 0) return limit;
    double raw = std::floor((cap - nu) / mu);
    int l = raw >= limit ? limit : static_cast<int>(std::max(0.0, raw));
    while (l < limit && fits(l + 1)) ++l;
    while (l > 0 && !fits(l)) --l;
    return l;
  }
};

// j is 1-based. A single-stage pipeline carries both head and tail terms.
inline MemoryBound memory_bound(int b, int j, int pp, int k, double min_member_capacity,
                                const ProfiledCoefficients& c) {
  require(pp >= 1 && j >= 1 && j <= pp && k >= 1, "memory_bound: bad stage index");
  const auto& h = c.head_tail;
  MemoryBound m;
  if (j == pp) {
    m.mu = b * c.a_fb + c.s;
    m.nu = b * h.a_fb_tail + h.s_tail;
    if (pp == 1) m.nu += b * h.a_fb_head + h.s_head;
  } else {
    m.mu = b * (c.a_f * (pp - j) + c.a_fb) + c.s;
    if (j == 1) m.nu = b * (h.a_f_head * (pp - 1) + h.a_fb_head) + h.s_head;
  }
  m.cap = std::max(0.0, k * (min_member_capacity - c.gap_mib));
  return m;
}

inline double theoretic_optimum_ratio(int total_gpus, const std::vector<double>& straggler_rates) {
  require(static_cast<int>(straggler_rates.size()) <= total_gpus, "theoretic_optimum_ratio: n > N");
  double denom = total_gpus - static_cast<double>(straggler_rates.size());
  for (double x : straggler_rates) denom += is_failed(x) ? 0.0 : 1.0 / x;
  return total_gpus / denom;
}

struct TimingSample {
  int group_size = 1;
  int b = 1;
  double seconds = 0;  // per layer per micro-batch on normal GPUs
};

// "group_size,b,seconds" rows; a leading header line is skipped.
inline std::vector<TimingSample> parse_timing_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<TimingSample> out;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("group_size", 0) == 0)) continue;
    TimingSample t;
    char c1 = 0, c2 = 0;
    std::istringstream ls(line);
    if (!(ls >> t.group_size >> c1 >> t.b >> c2 >> t.seconds) || c1 != ',' || c2 != ',')
      throw ConfigError("timing line " + std::to_string(lineno) + ": expected group_size,b,seconds");
    if (t.group_size < 1 || t.b < 1 || !(t.seconds > 0))
      throw ConfigError("timing line " + std::to_string(lineno) + ": values must be positive");
    out.push_back(t);
  }
  return out;
}

// Fits zeta and tau so that seconds(n, b) ~ rho_n * tau(b). Repeated samples are averaged.
// tau(b) is the slowest group size at b, which is where rho = 1; zeta_n is the mean of
// seconds(n, b) / tau(b) over b. Needs every (group_size, b) pair so the anchor is the same.
inline std::pair<std::map<int, double>, std::map<int, double>> fit_coefficients(
    const std::vector<TimingSample>& samples) {
  if (samples.empty()) throw ConfigError("calibrate: no samples");
  std::map<std::pair<int, int>, std::pair<double, int>> acc;
  std::map<int, bool> sizes, bs;
  for (const auto& t : samples) {
    auto& a = acc[{t.group_size, t.b}];
    a.first += t.seconds;
    ++a.second;
    sizes[t.group_size] = bs[t.b] = true;
  }
  auto mean = [&](int n, int b) {
    auto it = acc.find({n, b});
    if (it == acc.end())
      throw ConfigError("calibrate: missing sample for group_size " + std::to_string(n) + ", b " + std::to_string(b));
    return it->second.first / it->second.second;
  };
  std::map<int, double> tau, zeta;
  for (const auto& [b, _] : bs) {
    double t = 0;
    for (const auto& [n, __] : sizes) t = std::max(t, mean(n, b));
    tau[b] = t;
  }
  for (const auto& [n, _] : sizes) {
    double z = 0;
    for (const auto& [b, t] : tau) z += mean(n, b) / t;
    zeta[n] = z / static_cast<double>(tau.size());
  }
  return {zeta, tau};
}

}  // namespace stragplan
