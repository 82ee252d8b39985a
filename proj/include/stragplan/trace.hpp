#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "domain.hpp"

namespace stragplan {

struct TraceEvent {
  int iteration = 0;
  GpuId gpu;
  double rate = 1.0;
  bool operator==(const TraceEvent&) const = default;
};

struct SituationMark {
  int iteration = 0;
  std::string tag;
  bool operator==(const SituationMark&) const = default;
};

struct StragglerTrace {
  std::vector<TraceEvent> events;        // nondecreasing iteration
  std::vector<SituationMark> situations;  // optional labels for reporting
  double noise = 0;                       // relative measurement noise amplitude
  int iterations = 0;                     // run length; 0 means one past the last event

  bool operator==(const StragglerTrace&) const = default;

  int length() const {
    if (iterations > 0) return iterations;
    int last = 0;
    for (const auto& e : events) last = std::max(last, e.iteration + 1);
    for (const auto& s : situations) last = std::max(last, s.iteration + 1);
    return last;
  }

  void validate(const ClusterState& cluster) const {
    for (std::size_t i = 0; i < events.size(); ++i) {
      const auto& e = events[i];
      if (i > 0 && e.iteration < events[i - 1].iteration)
        throw ConfigError("trace.events: iterations must be nondecreasing");
      if (!cluster.contains(e.gpu)) throw ConfigError("trace.events: unknown GPU " + to_string(e.gpu));
      if (std::isnan(e.rate) || (!is_failed(e.rate) && e.rate < 1.0))
        throw ConfigError("trace.events: rate below 1");
    }
    if (noise < 0 || noise >= 1) throw ConfigError("trace.noise must be in [0, 1)");
  }
};

struct TraceSpec {
  std::vector<std::string> situations{"normal", "S1", "S2", "S3", "S4", "S5", "S6", "normal"};
  int dwell = 50;
  std::map<int, double> levels{{1, 2.62}, {2, 3.8}, {3, 5.42}};
  bool random_placement = false;
  std::uint64_t seed = 0;
  double noise = 0;
};

// Straggler (gpu, level) pairs for one situation; nodes are taken from `node_order`.
inline std::vector<std::pair<GpuId, int>> situation_stragglers(const std::string& tag, const ClusterState& cluster,
                                                               const std::vector<int>& node_order,
                                                               const std::vector<int>& local_pick) {
  auto need = [&](std::size_t n) {
    if (node_order.size() < n) throw ConfigError("situation " + tag + " needs " + std::to_string(n) + " nodes");
  };
  auto at = [&](std::size_t k) { return GpuId{node_order[k], local_pick[k]}; };
  auto whole = [&](std::size_t k, int level) {
    std::vector<std::pair<GpuId, int>> v;
    for (auto g : cluster.node_gpus(node_order[k])) v.emplace_back(g, level);
    return v;
  };
  if (tag == "normal") return {};
  if (tag == "S1") return need(1), std::vector<std::pair<GpuId, int>>{{at(0), 1}};
  if (tag == "S2") return need(1), std::vector<std::pair<GpuId, int>>{{at(0), 3}};
  if (tag == "S3") return need(2), std::vector<std::pair<GpuId, int>>{{at(0), 1}, {at(1), 3}};
  if (tag == "S4") return need(3), std::vector<std::pair<GpuId, int>>{{at(0), 3}, {at(1), 2}, {at(2), 1}};
  if (tag == "S5") {
    need(2);
    auto v = whole(0, 1);
    v.emplace_back(at(1), 2);
    return v;
  }
  if (tag == "S6") return need(1), whole(0, 1);
  throw ConfigError("unknown situation tag '" + tag + "'");
}

inline StragglerTrace gen_trace(const ClusterState& cluster, const TraceSpec& spec) {
  if (spec.dwell < 1) throw ConfigError("dwell must be >= 1");
  std::vector<int> nodes(cluster.nodes.size());
  std::iota(nodes.begin(), nodes.end(), 0);
  std::vector<int> pick(nodes.size(), 0);
  if (spec.random_placement) {
    std::mt19937_64 rng(spec.seed);
    std::shuffle(nodes.begin(), nodes.end(), rng);
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      std::uniform_int_distribution<int> d(0, cluster.nodes[static_cast<std::size_t>(nodes[k])].gpu_count - 1);
      pick[k] = d(rng);
    }
  }
  StragglerTrace tr;
  tr.noise = spec.noise;
  std::map<GpuId, double> current;
  for (std::size_t s = 0; s < spec.situations.size(); ++s) {
    const int it = static_cast<int>(s) * spec.dwell;
    std::map<GpuId, double> target;
    for (auto [g, level] : situation_stragglers(spec.situations[s], cluster, nodes, pick)) {
      auto lv = spec.levels.find(level);
      if (lv == spec.levels.end()) throw ConfigError("no rate for straggler level " + std::to_string(level));
      target[g] = lv->second;
    }
    std::map<GpuId, double> changes;
    for (const auto& [g, x] : current)
      if (!target.count(g)) changes[g] = 1.0;
    for (const auto& [g, x] : target)
      if (!current.count(g) || current[g] != x) changes[g] = x;
    for (const auto& [g, x] : changes) tr.events.push_back({it, g, x});
    tr.situations.push_back({it, spec.situations[s]});
    current = std::move(target);
  }
  tr.iterations = static_cast<int>(spec.situations.size()) * spec.dwell;
  return tr;
}

}  // namespace stragplan
