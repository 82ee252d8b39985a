#include <cstdio>
#include <fstream>
#include <random>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "stragplan/stragplan.hpp"
#include "support/oracles.hpp"

using namespace stragplan;

namespace {

// "x0", "x1~x4": flat GPU indices, collapsed into runs.
std::string members_label(const TpGroup& g, const ClusterState& c) {
  std::vector<int> idx;
  for (auto m : g.members) idx.push_back(c.global_index(m));
  std::sort(idx.begin(), idx.end());
  std::string s;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && idx[j + 1] == idx[j] + 1) ++j;
    if (!s.empty()) s += ",";
    s += "x" + std::to_string(idx[i]);
    if (j > i) s += (j == i + 1 ? ",x" : "~x") + std::to_string(idx[j]);
    i = j + 1;
  }
  return s;
}

void print_plan(const ParallelizationPlan& p, const ClusterState& c, std::ostream& os) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "b=%d  tp_limit=%d  T-hat=%.6g s\n", p.micro_batch_size, p.tp_limit,
                p.estimated_step_seconds);
  os << buf;
  for (std::size_t i = 0; i < p.pipelines.size(); ++i) {
    const auto& pl = p.pipelines[i];
    os << "pipeline " << i + 1 << ": m=" << pl.micro_batches << " (" << pl.stages.size() << " stages)\n";
    for (std::size_t j = 0; j < pl.stages.size(); ++j) {
      const auto& s = pl.stages[j];
      std::snprintf(buf, sizeof buf, "  l_%zu,%zu=%-3d tp=%d y=%-8.4g %s\n", i + 1, j + 1, s.layers, s.group.size(),
                    s.group.rate, members_label(s.group, c).c_str());
      os << buf;
    }
  }
  if (!p.removed.empty()) {
    os << "removed:";
    for (auto g : p.removed) os << " x" << c.global_index(g);
    os << "\n";
  }
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") std::cout << text;
  else write_text_file(out, text);
}

std::map<int, double> parse_levels(const std::string& s) {
  std::map<int, double> m;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("--levels: expected level=rate pairs");
    try {
      m[std::stoi(item.substr(0, eq))] = std::stod(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError("--levels: malformed pair '" + item + "'");
    }
  }
  return m;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> v;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) v.push_back(item);
  return v;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct OracleTally {
  int instances = 0;
  int mismatches = 0;
};

// Random small instances of each solver against exhaustive enumeration; exact equality.
std::map<std::string, OracleTally> oracle_check(int instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> y(1.0, 4.0);
  std::uniform_int_distribution<int> small(1, 3);
  std::map<std::string, OracleTally> out;

  for (int t = 0; t < instances; ++t) {
    MinimaxProblem p;
    int n = small(rng) + 1;
    for (int k = 0; k < n; ++k) {
      p.weights.push_back(std::round(y(rng) * 4) / 4);
      p.upper.push_back(std::uniform_int_distribution<int>(0, 6)(rng));
    }
    p.total = std::uniform_int_distribution<int>(0, 10)(rng);
    auto r = solve_minimax_ilp(p);
    double want = oracle::minimax(p.weights, p.upper, p.total);
    auto& tally = out["minimax"];
    ++tally.instances;
    tally.mismatches += r.feasible ? r.objective != want : !std::isinf(want);
  }

  for (int t = 0; t < instances; ++t) {
    int dp = small(rng), L = std::uniform_int_distribution<int>(1, 6)(rng);
    TaskSpec task;
    task.L = L;
    task.B = std::uniform_int_distribution<int>(dp, 8)(rng);
    task.dp_degree = dp;
    task.micro_batch_sizes = {1};
    task.tp_degrees = {1};
    task.coefficients.zeta = {{1, 1.0}};
    task.coefficients.tau = {{1, 1.0}};
    task.coefficients.a_f = 2;
    task.coefficients.a_fb = 3;
    task.coefficients.s = 1;
    task.coefficients.gap_mib = 0;
    std::vector<std::vector<TpGroup>> pipes(static_cast<std::size_t>(dp));
    std::vector<std::vector<oracle::StageSpec>> specs(static_cast<std::size_t>(dp));
    for (int i = 0; i < dp; ++i) {
      int pp = small(rng);
      for (int j = 0; j < pp; ++j) {
        TpGroup g;
        g.members = {{i, j}};
        g.rate = y(rng);
        g.capacity_mib = std::uniform_int_distribution<int>(4, 40)(rng);
        pipes[static_cast<std::size_t>(i)].push_back(g);
        specs[static_cast<std::size_t>(i)].push_back(
            {g.rate, memory_bound(1, j + 1, pp, 1, g.capacity_mib, task.coefficients)});
      }
    }
    auto s = solve_lower(pipes, task);
    double want = oracle::lower_joint(specs, task.L, task.B);
    auto& tally = out["lower-level"];
    ++tally.instances;
    tally.mismatches += s.feasible ? s.estimate != want : !std::isinf(want);
  }

  const double levels[] = {1.31, 2.0, 2.62, 3.8, 5.42};
  for (int t = 0; t < instances; ++t) {
    int dp = small(rng);
    int slow = std::uniform_int_distribution<int>(0, 3)(rng);
    int fast = std::max(dp - slow, std::uniform_int_distribution<int>(0, 8 - slow)(rng));
    std::vector<double> sr;
    for (int k = 0; k < slow; ++k) sr.push_back(levels[std::uniform_int_distribution<int>(0, 4)(rng)]);
    std::vector<double> all(static_cast<std::size_t>(fast), 1.0);
    all.insert(all.end(), sr.begin(), sr.end());
    int M = std::uniform_int_distribution<int>(dp, 8)(rng);
    auto r = solve_division_minlp({fast, sr, 1.0, dp, M, 0.5});
    double want = oracle::division(all, 1.0, dp, M, 0.5);
    auto& tally = out["division"];
    ++tally.instances;
    tally.mismatches += r.feasible ? r.objective != want : !std::isinf(want);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Straggler-resilient hybrid-parallel training planner and simulator"};
  app.require_subcommand(1);

  std::string task_path, cluster_path, trace_path, out, plan_path, old_path, new_path, timeline_path;
  std::uint64_t seed = 0;
  double threshold = 0.05;
  int pack_size = 4;
  std::optional<double> gap_mib;
  std::optional<int> dp;
  std::vector<int> dp_range;
  bool explain = false;
  int b_cap = 16;
  std::size_t divisions = PlannerOptions{}.division_candidates;

  auto load_task = [&] {
    auto t = load_file(task_path, [](const json& j) { return task_from_json(j); });
    if (gap_mib) t.coefficients.gap_mib = *gap_mib;
    if (dp) t.dp_degree = *dp;
    return t;
  };
  auto load_cluster = [&] { return load_file(cluster_path, [](const json& j) { return cluster_from_json(j); }); };
  auto planner_opts = [&] {
    PlannerOptions po;
    po.b_cap = b_cap;
    po.division_candidates = divisions;
    po.dp_candidates = dp_range;
    po.explain = explain;
    return po;
  };

  // plan
  auto* cp = app.add_subcommand("plan", "Compute a parallelization plan");
  cp->add_option("--cluster", cluster_path, "Cluster JSON")->required();
  cp->add_option("--task", task_path, "Task JSON")->required();
  cp->add_option("--out,-o", out, "Plan JSON output");
  cp->add_option("--dp", dp, "Override the task's DP degree");
  cp->add_option("--dp-range", dp_range, "Try several DP degrees and keep the best")->delimiter(',');
  cp->add_option("--gap-mib", gap_mib, "Memory gap per GPU in MiB (default 4096)");
  cp->add_option("--b-cap", b_cap, "Largest micro-batch size to try")->capture_default_str();
  cp->add_option("--divisions", divisions, "Ranked pipeline divisions evaluated per TP limit")->capture_default_str();
  cp->add_flag("--explain", explain, "Print the search trace");

  // simulate
  SimConfig sim;
  std::string baseline = "previous";
  double intra = 400, inter = 200, ckpt = 10;
  auto* cs = app.add_subcommand("simulate", "Simulate training under a straggler trace");
  cs->add_option("--cluster", cluster_path, "Cluster JSON")->required();
  cs->add_option("--task", task_path, "Task JSON")->required();
  cs->add_option("--trace", trace_path, "Trace JSON")->required();
  cs->add_option("--plan", plan_path, "Initial plan JSON (default: plan the initial cluster)");
  cs->add_option("--out,-o", out, "Timeline CSV output");
  cs->add_option("--seed", seed, "Measurement noise seed")->capture_default_str();
  cs->add_option("--threshold", threshold, "Relative rate change that triggers re-planning")->capture_default_str();
  cs->add_option("--probe-period", sim.probe_period, "Standby probe period in iterations")->capture_default_str();
  cs->add_option("--planning-seconds", sim.planning_seconds, "Simulated planning latency")->capture_default_str();
  cs->add_option("--sync-seconds", sim.sync_seconds, "Additive per-iteration constant")->capture_default_str();
  cs->add_option("--baseline", baseline, "Trigger baseline: previous | plan")
      ->check(CLI::IsMember({"previous", "plan"}))
      ->capture_default_str();
  cs->add_option("--pack-size", pack_size, "Layers per migration batch")->capture_default_str();
  cs->add_option("--intra-gbps", intra, "Intra-node bandwidth GB/s")->capture_default_str();
  cs->add_option("--inter-gbps", inter, "Inter-node bandwidth GB/s")->capture_default_str();
  cs->add_option("--checkpoint-gbps", ckpt, "Checkpoint restore bandwidth GB/s")->capture_default_str();
  cs->add_option("--dp", dp, "Override the task's DP degree");
  cs->add_option("--dp-range", dp_range, "Try several DP degrees when planning")->delimiter(',');
  cs->add_option("--gap-mib", gap_mib, "Memory gap per GPU in MiB (default 4096)");

  // migrate
  std::string failed_list;
  double layer_mib = 0;
  auto* cm = app.add_subcommand("migrate", "Compile the migration schedule between two plans");
  cm->add_option("--old", old_path, "Old plan JSON")->required();
  cm->add_option("--new", new_path, "New plan JSON")->required();
  cm->add_option("--task", task_path, "Task JSON (per-layer state size)");
  cm->add_option("--layer-mib", layer_mib, "Per-layer optimizer state in MiB (overrides --task)");
  cm->add_option("--failed", failed_list, "Comma-separated failed GPUs as node:gpu");
  cm->add_option("--pack-size", pack_size, "Layers per migration batch")->capture_default_str();
  cm->add_option("--intra-gbps", intra, "Intra-node bandwidth GB/s")->capture_default_str();
  cm->add_option("--inter-gbps", inter, "Inter-node bandwidth GB/s")->capture_default_str();
  cm->add_option("--checkpoint-gbps", ckpt, "Checkpoint restore bandwidth GB/s")->capture_default_str();
  cm->add_option("--out,-o", out, "Schedule JSON output");

  // report
  auto* cr = app.add_subcommand("report", "Summarize a timeline per straggler situation");
  cr->add_option("timeline", timeline_path, "Timeline CSV")->required();
  cr->add_option("--out,-o", out, "Summary CSV output");

  // gen-trace
  TraceSpec ts;
  std::string situations = "normal,S1,S2,S3,S4,S5,S6,normal", levels;
  auto* cg = app.add_subcommand("gen-trace", "Generate a straggler trace from situation tags");
  cg->add_option("--cluster", cluster_path, "Cluster JSON")->required();
  cg->add_option("--situations", situations, "Comma-separated tags: normal, S1..S6")->capture_default_str();
  cg->add_option("--dwell", ts.dwell, "Iterations per situation")->capture_default_str();
  cg->add_option("--levels", levels, "Level rates, e.g. 1=2.62,2=3.8,3=5.42");
  cg->add_flag("--random-placement", ts.random_placement, "Shuffle straggler nodes and GPUs with the seed");
  cg->add_option("--noise", ts.noise, "Relative measurement noise amplitude")->capture_default_str();
  cg->add_option("--seed", seed, "Placement seed")->capture_default_str();
  cg->add_option("--out,-o", out, "Trace JSON output");

  // calibrate
  std::string timings_path;
  auto* cc = app.add_subcommand("calibrate", "Fit zeta and tau from per-layer timings");
  cc->add_option("timings", timings_path, "CSV of group_size,b,seconds")->required();
  cc->add_option("--task", task_path, "Task JSON to update with the fit");
  cc->add_option("--out,-o", out, "JSON output");

  // oracle-check
  int instances = 500;
  auto* co = app.add_subcommand("oracle-check", "Compare the solvers with exhaustive enumeration");
  co->add_option("--instances", instances, "Random instances per solver")->capture_default_str();
  co->add_option("--seed", seed, "Instance seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cp->parsed()) {
      auto cluster = load_cluster();
      auto task = load_task();
      auto rep = plan(cluster, task, planner_opts());
      for (const auto& l : rep.explain) std::cerr << l << "\n";
      if (explain) {
        for (const auto& c : rep.candidates) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "candidate %-7s dp=%d groups=%d division#%d T-hat=%.6g exact=%.6g\n",
                        c.source.c_str(), c.dp, c.groups, c.division_rank, c.estimate, c.exact);
          std::cerr << buf;
        }
      }
      print_plan(rep.plan, cluster, out.empty() ? std::cerr : std::cout);
      if (!out.empty()) write_text_file(out, to_json(rep.plan).dump(2) + "\n");
      else std::cout << to_json(rep.plan).dump(2) << "\n";
    } else if (cs->parsed()) {
      auto cluster = load_cluster();
      auto task = load_task();
      auto trace = load_file(trace_path, [](const json& j) { return trace_from_json(j); });
      sim.threshold = threshold;
      sim.seed = seed;
      sim.baseline = baseline == "plan" ? ReplanBaseline::last_plan : ReplanBaseline::previous_iteration;
      sim.planner = planner_opts();
      sim.migration.pack_size = pack_size;
      sim.migration.intra_node_gbps = intra;
      sim.migration.inter_node_gbps = inter;
      sim.migration.checkpoint_gbps = ckpt;
      std::optional<ParallelizationPlan> init;
      if (!plan_path.empty()) init = load_file(plan_path, [](const json& j) { return plan_from_json(j); });
      auto tl = simulate(task, cluster, trace, sim, init);
      emit(out, timeline_csv(tl));
    } else if (cm->parsed()) {
      auto a = load_file(old_path, [](const json& j) { return plan_from_json(j); });
      auto b = load_file(new_path, [](const json& j) { return plan_from_json(j); });
      double mib = layer_mib;
      if (mib <= 0) {
        if (task_path.empty()) throw ConfigError("migrate: pass --task or --layer-mib");
        mib = load_task().state_mib_per_layer();
      }
      std::set<GpuId> failed;
      for (const auto& s : split_list(failed_list)) {
        auto colon = s.find(':');
        if (colon == std::string::npos) throw ConfigError("--failed: expected node:gpu, got '" + s + "'");
        failed.insert({std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))});
      }
      MigrationOptions mo;
      mo.pack_size = pack_size;
      mo.intra_node_gbps = intra;
      mo.inter_node_gbps = inter;
      mo.checkpoint_gbps = ckpt;
      auto sch = compile_migration(a, b, mib, failed, mo);
      emit(out, to_json(sch).dump(2) + "\n");
    } else if (cr->parsed()) {
      auto rows = summarize(parse_timeline_csv(read_text(timeline_path)));
      std::string text = "situation,first_iteration,steady_iterations,mean_seconds,estimate_seconds,r_actual,r_est,r_opt\n";
      for (const auto& r : rows) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%d,%d,%.6f,%.6f,%.4f,%.4f,%.4f\n", r.tag.c_str(), r.first_iteration,
                      r.steady_iterations, r.mean_seconds, r.estimate_seconds, r.r_actual, r.r_est, r.r_opt);
        text += buf;
      }
      emit(out, text);
    } else if (cg->parsed()) {
      auto cluster = load_cluster();
      ts.situations = split_list(situations);
      ts.seed = seed;
      if (!levels.empty())
        for (auto [k, v] : parse_levels(levels)) ts.levels[k] = v;
      emit(out, to_json(gen_trace(cluster, ts)).dump(2) + "\n");
    } else if (cc->parsed()) {
      auto [zeta, tau] = fit_coefficients(parse_timing_csv(read_text(timings_path)));
      if (task_path.empty()) {
        json j{{"zeta", json::object()}, {"tau", json::object()}};
        for (auto [n, z] : zeta) j["zeta"][std::to_string(n)] = z;
        for (auto [b, t] : tau) j["tau"][std::to_string(b)] = t;
        emit(out, j.dump(2) + "\n");
      } else {
        auto task = load_task();
        task.coefficients.zeta = zeta;
        task.coefficients.tau = tau;
        task.tp_degrees.clear();
        for (auto [n, z] : zeta) task.tp_degrees.push_back(n);
        task.micro_batch_sizes.clear();
        for (auto [b, t] : tau) task.micro_batch_sizes.push_back(b);
        task.validate();
        emit(out, to_json(task).dump(2) + "\n");
      }
    } else if (co->parsed()) {
      int bad = 0;
      for (const auto& [name, t] : oracle_check(instances, seed)) {
        std::cout << name << ": " << t.mismatches << " mismatches in " << t.instances << " instances\n";
        bad += t.mismatches;
      }
      return bad == 0 ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
