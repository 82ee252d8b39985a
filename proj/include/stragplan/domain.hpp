#pragma once

#include <cmath>
#include <compare>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace stragplan {

// Failed GPUs carry +inf; NaN never appears so max/ordering stay total.
inline constexpr double kFailed = std::numeric_limits<double>::infinity();
inline bool is_failed(double x) { return std::isinf(x); }

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PreconditionError : std::logic_error {
  using std::logic_error::logic_error;
};
struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw PreconditionError(what);
}

struct GpuId {
  int node = 0;
  int local = 0;
  auto operator<=>(const GpuId&) const = default;
};

inline std::string to_string(GpuId g) {
  return std::to_string(g.node) + ":" + std::to_string(g.local);
}

struct NodeRecord {
  int gpu_count = 8;
  bool operator==(const NodeRecord&) const = default;
};

struct ClusterState {
  std::vector<NodeRecord> nodes;
  std::map<GpuId, double> rates;  // absent entries are normal (1.0)
  std::set<GpuId> standby;
  std::map<GpuId, double> memory_capacity;  // MiB; absent entries use the default
  double default_capacity_mib = 81920.0;

  bool operator==(const ClusterState&) const = default;

  static ClusterState uniform(int node_count, int gpus_per_node = 8,
                              double capacity_mib = 81920.0) {
    ClusterState c;
    c.nodes.assign(static_cast<std::size_t>(node_count), NodeRecord{gpus_per_node});
    c.default_capacity_mib = capacity_mib;
    return c;
  }

  bool contains(GpuId g) const {
    return g.node >= 0 && g.node < static_cast<int>(nodes.size()) && g.local >= 0 &&
           g.local < nodes[static_cast<std::size_t>(g.node)].gpu_count;
  }

  std::vector<GpuId> gpus() const {
    std::vector<GpuId> out;
    for (int n = 0; n < static_cast<int>(nodes.size()); ++n)
      for (int g = 0; g < nodes[static_cast<std::size_t>(n)].gpu_count; ++g) out.push_back({n, g});
    return out;
  }

  std::vector<GpuId> node_gpus(int node) const {
    std::vector<GpuId> out;
    for (int g = 0; g < nodes.at(static_cast<std::size_t>(node)).gpu_count; ++g)
      out.push_back({node, g});
    return out;
  }

  int gpu_count() const {
    int n = 0;
    for (const auto& r : nodes) n += r.gpu_count;
    return n;
  }

  double rate(GpuId g) const {
    auto it = rates.find(g);
    return it == rates.end() ? 1.0 : it->second;
  }

  double capacity(GpuId g) const {
    auto it = memory_capacity.find(g);
    return it == memory_capacity.end() ? default_capacity_mib : it->second;
  }

  // Flat index in node-major order (x_0, x_1, ... in tables).
  int global_index(GpuId g) const {
    int idx = 0;
    for (int n = 0; n < g.node; ++n) idx += nodes[static_cast<std::size_t>(n)].gpu_count;
    return idx + g.local;
  }

  GpuId from_global(int idx) const {
    for (int n = 0; n < static_cast<int>(nodes.size()); ++n) {
      int c = nodes[static_cast<std::size_t>(n)].gpu_count;
      if (idx < c) return {n, idx};
      idx -= c;
    }
    throw PreconditionError("global GPU index out of range");
  }

  void validate() const {
    if (nodes.empty()) throw ConfigError("cluster: no nodes");
    for (const auto& n : nodes)
      if (n.gpu_count < 1) throw ConfigError("cluster: node with no GPUs");
    for (const auto& [g, x] : rates) {
      if (!contains(g)) throw ConfigError("cluster.rates: unknown GPU " + to_string(g));
      if (std::isnan(x) || (!is_failed(x) && x < 1.0))
        throw ConfigError("cluster.rates: rate below 1 for GPU " + to_string(g));
    }
    for (const auto& g : standby)
      if (!contains(g)) throw ConfigError("cluster.standby: unknown GPU " + to_string(g));
    for (const auto& [g, c] : memory_capacity) {
      if (!contains(g)) throw ConfigError("cluster.memory_capacity: unknown GPU " + to_string(g));
      if (!(c >= 0)) throw ConfigError("cluster.memory_capacity: negative capacity");
    }
  }
};

struct HeadTail {
  double a_f_head = 0;   // extra forward activation on the first stage
  double a_fb_head = 0;  // extra fwd+bwd activation on the first stage
  double s_head = 0;     // extra model states on the first stage
  double a_fb_tail = 0;  // extra fwd+bwd activation on the last stage
  double s_tail = 0;     // extra model states on the last stage
  bool operator==(const HeadTail&) const = default;
};

struct ProfiledCoefficients {
  std::map<int, double> tau;   // micro-batch size -> seconds per layer (fwd+bwd) at y = 1
  std::map<int, double> zeta;  // group size -> unit-workload seconds
  double a_f = 0;
  double a_fb = 0;
  double s = 0;
  HeadTail head_tail;
  double gap_mib = 4096;

  bool operator==(const ProfiledCoefficients&) const = default;

  double tau_at(int b) const {
    auto it = tau.find(b);
    if (it == tau.end()) throw ConfigError("no tau entry for micro-batch size " + std::to_string(b));
    return it->second;
  }

  // Normalized over the zeta entries, which are restricted to the task's TP degrees.
  double rho(int n) const {
    auto it = zeta.find(n);
    if (it == zeta.end()) throw ConfigError("no zeta entry for group size " + std::to_string(n));
    double mx = 0;
    for (const auto& [k, v] : zeta) mx = std::max(mx, v);
    return it->second / mx;
  }
};

struct TaskSpec {
  int L = 1;
  int B = 1;
  std::vector<int> micro_batch_sizes{1};
  int dp_degree = 1;
  std::vector<int> tp_degrees{1, 2, 4, 8};
  ProfiledCoefficients coefficients;
  double layer_state_mib = 0;  // optimizer-state MiB per layer; 0 means use coefficients.s

  bool operator==(const TaskSpec&) const = default;

  double state_mib_per_layer() const { return layer_state_mib > 0 ? layer_state_mib : coefficients.s; }

  void validate() const {
    if (L < 1) throw ConfigError("task.L must be >= 1");
    if (B < 1) throw ConfigError("task.B must be >= 1");
    if (dp_degree < 1) throw ConfigError("task.dp_degree must be >= 1");
    if (micro_batch_sizes.empty()) throw ConfigError("task.micro_batch_sizes is empty");
    for (std::size_t i = 0; i < micro_batch_sizes.size(); ++i) {
      if (micro_batch_sizes[i] < 1) throw ConfigError("task.micro_batch_sizes must be positive");
      if (i > 0 && micro_batch_sizes[i] <= micro_batch_sizes[i - 1])
        throw ConfigError("task.micro_batch_sizes must be strictly ascending");
    }
    if (tp_degrees.empty()) throw ConfigError("task.tp_degrees is empty");
    for (int t : tp_degrees) {
      if (t != 1 && t != 2 && t != 4 && t != 8) throw ConfigError("task.tp_degrees must be in {1,2,4,8}");
      if (!coefficients.zeta.count(t))
        throw ConfigError("task.coefficients.zeta lacks group size " + std::to_string(t));
    }
    for (const auto& [n, z] : coefficients.zeta)
      if (!(z > 0)) throw ConfigError("task.coefficients.zeta must be positive");
    double prev = 0;
    for (const auto& [b, t] : coefficients.tau) {
      if (!(t > 0)) throw ConfigError("task.coefficients.tau must be positive");
      if (t < prev) throw ConfigError("task.coefficients.tau must be nondecreasing in b");
      prev = t;
    }
    const auto& c = coefficients;
    const auto& h = c.head_tail;
    for (double v : {c.a_f, c.a_fb, c.s, h.a_f_head, h.a_fb_head, h.s_head, h.a_fb_tail, h.s_tail, c.gap_mib})
      if (!(v >= 0)) throw ConfigError("task.coefficients: memory coefficients must be >= 0");
  }

  void validate_against(const ClusterState& cluster) const {
    validate();
    for (const auto& n : cluster.nodes)
      for (int t : tp_degrees)
        if (n.gpu_count % t != 0 && t <= n.gpu_count)
          throw ConfigError("task.tp_degrees: degree " + std::to_string(t) +
                            " does not divide a node's GPU count");
  }
};

struct TpGroup {
  std::vector<GpuId> members;  // one node, descending member rate
  double rate = 1.0;           // y
  double capacity_mib = 0;     // min member capacity

  int size() const { return static_cast<int>(members.size()); }
  int node() const { return members.empty() ? -1 : members.front().node; }
  bool operator==(const TpGroup&) const = default;
};

struct Stage {
  TpGroup group;
  int layers = 0;
  bool operator==(const Stage&) const = default;
};

struct Pipeline {
  std::vector<Stage> stages;
  int micro_batches = 0;
  bool operator==(const Pipeline&) const = default;
};

struct ParallelizationPlan {
  std::vector<Pipeline> pipelines;
  int micro_batch_size = 1;
  std::set<GpuId> removed;
  double estimated_step_seconds = 0;  // T-hat at planning time
  int tp_limit = 0;

  bool operator==(const ParallelizationPlan&) const = default;

  // Same assignment of work, ignoring the planning-time estimate.
  bool same_layout(const ParallelizationPlan& o) const {
    if (micro_batch_size != o.micro_batch_size || removed != o.removed ||
        pipelines.size() != o.pipelines.size())
      return false;
    for (std::size_t i = 0; i < pipelines.size(); ++i) {
      const auto& a = pipelines[i];
      const auto& b = o.pipelines[i];
      if (a.micro_batches != b.micro_batches || a.stages.size() != b.stages.size()) return false;
      for (std::size_t j = 0; j < a.stages.size(); ++j)
        if (a.stages[j].layers != b.stages[j].layers ||
            a.stages[j].group.members != b.stages[j].group.members)
          return false;
    }
    return true;
  }

  std::vector<GpuId> in_use() const {
    std::vector<GpuId> out;
    for (const auto& p : pipelines)
      for (const auto& s : p.stages) out.insert(out.end(), s.group.members.begin(), s.group.members.end());
    return out;
  }
};

}  // namespace stragplan
