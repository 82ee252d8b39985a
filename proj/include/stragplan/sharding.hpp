#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <tuple>
#include <vector>

#include "domain.hpp"

namespace stragplan {

struct LayerShards {
  int tp_max = 0;
  int slice_count = 0;              // DP x TP_max
  std::vector<GpuId> owner;         // slice -> GPU
  std::map<GpuId, int> slices_per_gpu;

  // GPUs holding more than one slice issue one reduce-scatter/all-gather per slice.
  std::vector<GpuId> multi_slice_gpus() const {
    std::vector<GpuId> out;
    for (const auto& [g, n] : slices_per_gpu)
      if (n > 1) out.push_back(g);
    return out;
  }

  bool operator==(const LayerShards&) const = default;
};

struct ShardLayout {
  std::vector<LayerShards> layers;
  bool operator==(const ShardLayout&) const = default;
};

// The stage of pipeline p that holds layer `layer`.
inline const Stage& stage_of_layer(const Pipeline& p, int layer) {
  int acc = 0;
  for (const auto& s : p.stages) {
    acc += s.layers;
    if (layer < acc) return s;
  }
  throw PreconditionError("stage_of_layer: layer outside pipeline");
}

inline ShardLayout shard_layout(const ParallelizationPlan& plan) {
  require(!plan.pipelines.empty(), "shard_layout: empty plan");
  int L = 0;
  for (const auto& s : plan.pipelines.front().stages) L += s.layers;
  ShardLayout out;
  for (int l = 0; l < L; ++l) {
    LayerShards ls;
    std::vector<const Stage*> holders;
    for (const auto& p : plan.pipelines) {
      holders.push_back(&stage_of_layer(p, l));
      ls.tp_max = std::max(ls.tp_max, holders.back()->group.size());
    }
    ls.slice_count = static_cast<int>(plan.pipelines.size()) * ls.tp_max;
    for (const auto* st : holders) {
      int k = st->group.size();
      require(ls.tp_max % k == 0, "shard_layout: TP degree does not divide TP_max");
      int per = ls.tp_max / k;
      for (auto g : st->group.members) {
        for (int r = 0; r < per; ++r) ls.owner.push_back(g);
        ls.slices_per_gpu[g] += per;
      }
    }
    out.layers.push_back(std::move(ls));
  }
  return out;
}

struct MigrationOptions {
  int pack_size = 4;
  double intra_node_gbps = 400;
  double inter_node_gbps = 200;
  double checkpoint_gbps = 10;
  bool allow_checkpoint = true;
};

// A contiguous fragment run [begin, end) of one layer on a grid of `fragments` per layer.
struct SlicePiece {
  int layer = 0;
  int begin = 0;
  int end = 0;
  int fragments = 1;
  bool operator==(const SlicePiece&) const = default;
};

struct FusedTransfer {
  GpuId src;
  GpuId dst;
  bool from_checkpoint = false;  // src failed; restore from the checkpoint instead
  std::vector<SlicePiece> pieces;
  double mib = 0;
  bool operator==(const FusedTransfer&) const = default;
};

struct MigrationBatch {
  int first_layer = 0;
  int last_layer = 0;  // inclusive
  std::vector<FusedTransfer> transfers;
  double seconds = 0;
  bool operator==(const MigrationBatch&) const = default;
};

struct CollectiveCall {
  int batch = 0;
  GpuId peer;
  bool send = false;
  bool operator==(const CollectiveCall&) const = default;
};

struct MigrationSchedule {
  std::vector<MigrationBatch> batches;
  std::vector<int> fragments;  // grid size per layer
  std::map<GpuId, std::vector<CollectiveCall>> calls;
  double seconds = 0;
  bool needs_checkpoint = false;

  bool empty() const { return batches.empty(); }
  double total_mib() const {
    double s = 0;
    for (const auto& b : batches)
      for (const auto& t : b.transfers) s += t.mib;
    return s;
  }
  bool operator==(const MigrationSchedule&) const = default;
};

// Slice ownership refined onto a grid of `fragments` per layer (a multiple of slice_count).
inline std::vector<GpuId> fragment_owners(const LayerShards& ls, int fragments) {
  require(fragments % ls.slice_count == 0, "fragment_owners: grid does not refine the slices");
  std::vector<GpuId> out(static_cast<std::size_t>(fragments));
  int per = fragments / ls.slice_count;
  for (int f = 0; f < fragments; ++f) out[static_cast<std::size_t>(f)] = ls.owner[static_cast<std::size_t>(f / per)];
  return out;
}

inline MigrationSchedule compile_migration(const ShardLayout& old_layout, const ShardLayout& new_layout,
                                           double layer_state_mib, const std::set<GpuId>& failed = {},
                                           const MigrationOptions& opt = {}) {
  require(old_layout.layers.size() == new_layout.layers.size(), "compile_migration: layer counts differ");
  require(opt.pack_size >= 1, "compile_migration: pack size must be >= 1");
  MigrationSchedule sch;
  const int L = static_cast<int>(old_layout.layers.size());
  using Key = std::tuple<GpuId, GpuId, bool>;
  for (int first = 0; first < L; first += opt.pack_size) {
    int last = std::min(L, first + opt.pack_size) - 1;
    std::map<Key, FusedTransfer> fused;
    for (int l = first; l <= last; ++l) {
      const auto& a = old_layout.layers[static_cast<std::size_t>(l)];
      const auto& b = new_layout.layers[static_cast<std::size_t>(l)];
      int grid = std::lcm(a.slice_count, b.slice_count);
      sch.fragments.push_back(grid);
      auto src = fragment_owners(a, grid);
      auto dst = fragment_owners(b, grid);
      for (int f = 0; f < grid;) {
        auto s = src[static_cast<std::size_t>(f)], d = dst[static_cast<std::size_t>(f)];
        int e = f + 1;
        while (e < grid && src[static_cast<std::size_t>(e)] == s && dst[static_cast<std::size_t>(e)] == d) ++e;
        if (s != d) {
          bool ckpt = failed.count(s) > 0;
          if (ckpt && !opt.allow_checkpoint)
            throw InfeasibleError("compile_migration: slices of failed GPU " + to_string(s) +
                                  " need a checkpoint restore");
          auto& t = fused[{s, d, ckpt}];
          t.src = s;
          t.dst = d;
          t.from_checkpoint = ckpt;
          t.pieces.push_back({l, f, e, grid});
          t.mib += layer_state_mib * (e - f) / grid;
          sch.needs_checkpoint = sch.needs_checkpoint || ckpt;
        }
        f = e;
      }
    }
    if (fused.empty()) continue;
    MigrationBatch batch;
    batch.first_layer = first;
    batch.last_layer = last;
    for (auto& [k, t] : fused) {
      double gbps = t.from_checkpoint ? opt.checkpoint_gbps
                    : t.src.node == t.dst.node ? opt.intra_node_gbps
                                               : opt.inter_node_gbps;
      batch.seconds = std::max(batch.seconds, t.mib * 1048576.0 / (gbps * 1e9));
      batch.transfers.push_back(std::move(t));
    }
    int bi = static_cast<int>(sch.batches.size());
    for (const auto& t : batch.transfers) {
      if (!t.from_checkpoint) sch.calls[t.src].push_back({bi, t.dst, true});
      sch.calls[t.dst].push_back({bi, t.src, false});
    }
    sch.seconds += batch.seconds;
    sch.batches.push_back(std::move(batch));
  }
  return sch;
}

inline MigrationSchedule compile_migration(const ParallelizationPlan& old_plan, const ParallelizationPlan& new_plan,
                                           double layer_state_mib, const std::set<GpuId>& failed = {},
                                           const MigrationOptions& opt = {}) {
  return compile_migration(shard_layout(old_plan), shard_layout(new_plan), layer_state_mib, failed, opt);
}

// Replays the schedule on the old ownership; returns per-layer fragment owners.
inline std::vector<std::vector<GpuId>> apply_migration(const ShardLayout& old_layout, const MigrationSchedule& sch) {
  std::vector<std::vector<GpuId>> own;
  for (std::size_t l = 0; l < old_layout.layers.size(); ++l)
    own.push_back(fragment_owners(old_layout.layers[l], sch.fragments.at(l)));
  for (const auto& b : sch.batches)
    for (const auto& t : b.transfers) {
      require(!(t.src == t.dst), "apply_migration: self transfer");
      for (const auto& p : t.pieces)
        for (int f = p.begin; f < p.end; ++f) {
          auto& o = own[static_cast<std::size_t>(p.layer)][static_cast<std::size_t>(f)];
          require(o == t.src, "apply_migration: source does not own the fragment");
          o = t.dst;
        }
    }
  return own;
}

}  // namespace stragplan
