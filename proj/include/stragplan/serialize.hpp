#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "domain.hpp"
#include "planner.hpp"
#include "sharding.hpp"
#include "trace.hpp"

namespace stragplan {

using json = nlohmann::json;

namespace detail {

// JSON has no infinity; the failure sentinel is written as the string "inf".
inline json num(double v) { return is_failed(v) ? json("inf") : json(v); }

inline double to_num(const json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string() && (j.get<std::string>() == "inf" || j.get<std::string>() == "failed")) return kFailed;
  throw ConfigError(where + ": expected a number");
}

inline const json& field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(where + "." + key + ": missing");
  return *it;
}

template <class T>
T as(const json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": wrong type");
  }
}

inline json gpu_json(GpuId g) { return json{{"node", g.node}, {"gpu", g.local}}; }

inline GpuId gpu_from(const json& j, const std::string& where) {
  return {as<int>(field(j, "node", where), where + ".node"), as<int>(field(j, "gpu", where), where + ".gpu")};
}

inline json num_map(const std::map<int, double>& m) {
  json o = json::object();
  for (const auto& [k, v] : m) o[std::to_string(k)] = v;
  return o;
}

inline std::map<int, double> num_map_from(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object keyed by integer");
  std::map<int, double> m;
  for (auto it = j.begin(); it != j.end(); ++it) {
    try {
      m[std::stoi(it.key())] = to_num(it.value(), where + "." + it.key());
    } catch (const std::invalid_argument&) {
      throw ConfigError(where + ": key '" + it.key() + "' is not an integer");
    }
  }
  return m;
}

inline json group_json(const TpGroup& g) {
  json members = json::array();
  for (auto m : g.members) members.push_back(gpu_json(m));
  return json{{"gpus", members}, {"rate", num(g.rate)}, {"capacity_mib", g.capacity_mib}};
}

inline TpGroup group_from(const json& j, const std::string& where) {
  TpGroup g;
  const auto& gs = field(j, "gpus", where);
  for (std::size_t i = 0; i < gs.size(); ++i) g.members.push_back(gpu_from(gs[i], where + ".gpus[" + std::to_string(i) + "]"));
  g.rate = to_num(field(j, "rate", where), where + ".rate");
  g.capacity_mib = to_num(field(j, "capacity_mib", where), where + ".capacity_mib");
  if (g.members.empty()) throw ConfigError(where + ".gpus: empty group");
  return g;
}

}  // namespace detail

inline json to_json(const ClusterState& c) {
  json nodes = json::array();
  for (const auto& n : c.nodes) nodes.push_back(json{{"gpus", n.gpu_count}});
  json rates = json::array();
  for (const auto& [g, x] : c.rates) {
    auto e = detail::gpu_json(g);
    e["rate"] = detail::num(x);
    rates.push_back(e);
  }
  json standby = json::array();
  for (auto g : c.standby) standby.push_back(detail::gpu_json(g));
  json over = json::array();
  for (const auto& [g, m] : c.memory_capacity) {
    auto e = detail::gpu_json(g);
    e["mib"] = m;
    over.push_back(e);
  }
  return json{{"nodes", nodes},
              {"rates", rates},
              {"standby", standby},
              {"memory_capacity", json{{"default_mib", c.default_capacity_mib}, {"overrides", over}}}};
}

inline ClusterState cluster_from_json(const json& j) {
  const std::string w = "cluster";
  ClusterState c;
  const auto& nodes = detail::field(j, "nodes", w);
  if (nodes.is_number_integer()) {
    c.nodes.assign(static_cast<std::size_t>(nodes.get<int>()), NodeRecord{});
  } else {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      std::string wi = w + ".nodes[" + std::to_string(i) + "]";
      NodeRecord n;
      if (nodes[i].contains("gpus")) n.gpu_count = detail::as<int>(nodes[i]["gpus"], wi + ".gpus");
      c.nodes.push_back(n);
    }
  }
  if (j.contains("rates"))
    for (std::size_t i = 0; i < j["rates"].size(); ++i) {
      std::string wi = w + ".rates[" + std::to_string(i) + "]";
      const auto& e = j["rates"][i];
      c.rates[detail::gpu_from(e, wi)] = detail::to_num(detail::field(e, "rate", wi), wi + ".rate");
    }
  if (j.contains("standby"))
    for (std::size_t i = 0; i < j["standby"].size(); ++i)
      c.standby.insert(detail::gpu_from(j["standby"][i], w + ".standby[" + std::to_string(i) + "]"));
  if (j.contains("memory_capacity")) {
    const auto& m = j["memory_capacity"];
    std::string wm = w + ".memory_capacity";
    if (m.contains("default_mib")) c.default_capacity_mib = detail::to_num(m["default_mib"], wm + ".default_mib");
    if (m.contains("overrides"))
      for (std::size_t i = 0; i < m["overrides"].size(); ++i) {
        std::string wi = wm + ".overrides[" + std::to_string(i) + "]";
        const auto& e = m["overrides"][i];
        c.memory_capacity[detail::gpu_from(e, wi)] = detail::to_num(detail::field(e, "mib", wi), wi + ".mib");
      }
  }
  c.validate();
  return c;
}

inline json to_json(const TaskSpec& t) {
  const auto& c = t.coefficients;
  const auto& h = c.head_tail;
  json coeffs{{"tau", detail::num_map(c.tau)},
              {"zeta", detail::num_map(c.zeta)},
              {"a_f", c.a_f},
              {"a_fb", c.a_fb},
              {"s", c.s},
              {"head_tail",
               json{{"a_f_head", h.a_f_head}, {"a_fb_head", h.a_fb_head}, {"s_head", h.s_head},
                    {"a_fb_tail", h.a_fb_tail}, {"s_tail", h.s_tail}}},
              {"gap_mib", c.gap_mib}};
  return json{{"L", t.L},
              {"B", t.B},
              {"micro_batch_sizes", t.micro_batch_sizes},
              {"dp_degree", t.dp_degree},
              {"tp_degrees", t.tp_degrees},
              {"layer_state_mib", t.layer_state_mib},
              {"coefficients", coeffs}};
}

inline TaskSpec task_from_json(const json& j) {
  const std::string w = "task";
  using detail::as;
  using detail::field;
  TaskSpec t;
  t.L = as<int>(field(j, "L", w), w + ".L");
  t.B = as<int>(field(j, "B", w), w + ".B");
  t.micro_batch_sizes = as<std::vector<int>>(field(j, "micro_batch_sizes", w), w + ".micro_batch_sizes");
  t.dp_degree = as<int>(field(j, "dp_degree", w), w + ".dp_degree");
  if (j.contains("tp_degrees")) t.tp_degrees = as<std::vector<int>>(j["tp_degrees"], w + ".tp_degrees");
  if (j.contains("layer_state_mib")) t.layer_state_mib = as<double>(j["layer_state_mib"], w + ".layer_state_mib");
  const std::string wc = w + ".coefficients";
  const auto& c = field(j, "coefficients", w);
  auto& pc = t.coefficients;
  pc.tau = detail::num_map_from(field(c, "tau", wc), wc + ".tau");
  pc.zeta = detail::num_map_from(field(c, "zeta", wc), wc + ".zeta");
  // The rho normalization ranges over the task's candidate TP degrees only.
  for (auto it = pc.zeta.begin(); it != pc.zeta.end();)
    it = std::find(t.tp_degrees.begin(), t.tp_degrees.end(), it->first) == t.tp_degrees.end() ? pc.zeta.erase(it)
                                                                                                : std::next(it);
  auto opt = [](const json& o, const char* k, double& dst, const std::string& where) {
    if (o.contains(k)) dst = as<double>(o[k], where + "." + k);
  };
  opt(c, "a_f", pc.a_f, wc);
  opt(c, "a_fb", pc.a_fb, wc);
  opt(c, "s", pc.s, wc);
  opt(c, "gap_mib", pc.gap_mib, wc);
  if (c.contains("head_tail")) {
    const auto& h = c["head_tail"];
    const std::string wh = wc + ".head_tail";
    opt(h, "a_f_head", pc.head_tail.a_f_head, wh);
    opt(h, "a_fb_head", pc.head_tail.a_fb_head, wh);
    opt(h, "s_head", pc.head_tail.s_head, wh);
    opt(h, "a_fb_tail", pc.head_tail.a_fb_tail, wh);
    opt(h, "s_tail", pc.head_tail.s_tail, wh);
  }
  t.validate();
  for (int b : t.micro_batch_sizes)
    if (!pc.tau.count(b)) throw ConfigError(wc + ".tau: no entry for micro-batch size " + std::to_string(b));
  return t;
}

inline json to_json(const ParallelizationPlan& p) {
  json pipes = json::array();
  for (const auto& pl : p.pipelines) {
    json stages = json::array();
    for (const auto& s : pl.stages) {
      auto g = detail::group_json(s.group);
      g["layers"] = s.layers;
      stages.push_back(g);
    }
    pipes.push_back(json{{"micro_batches", pl.micro_batches}, {"stages", stages}});
  }
  json removed = json::array();
  for (auto g : p.removed) removed.push_back(detail::gpu_json(g));
  return json{{"micro_batch_size", p.micro_batch_size},
              {"tp_limit", p.tp_limit},
              {"estimated_step_seconds", detail::num(p.estimated_step_seconds)},
              {"pipelines", pipes},
              {"removed", removed}};
}

inline ParallelizationPlan plan_from_json(const json& j) {
  const std::string w = "plan";
  using detail::as;
  using detail::field;
  ParallelizationPlan p;
  p.micro_batch_size = as<int>(field(j, "micro_batch_size", w), w + ".micro_batch_size");
  if (j.contains("tp_limit")) p.tp_limit = as<int>(j["tp_limit"], w + ".tp_limit");
  if (j.contains("estimated_step_seconds"))
    p.estimated_step_seconds = detail::to_num(j["estimated_step_seconds"], w + ".estimated_step_seconds");
  const auto& pipes = field(j, "pipelines", w);
  for (std::size_t i = 0; i < pipes.size(); ++i) {
    std::string wi = w + ".pipelines[" + std::to_string(i) + "]";
    Pipeline pl;
    pl.micro_batches = as<int>(field(pipes[i], "micro_batches", wi), wi + ".micro_batches");
    const auto& st = field(pipes[i], "stages", wi);
    for (std::size_t k = 0; k < st.size(); ++k) {
      std::string wk = wi + ".stages[" + std::to_string(k) + "]";
      Stage s;
      s.group = detail::group_from(st[k], wk);
      s.layers = as<int>(field(st[k], "layers", wk), wk + ".layers");
      pl.stages.push_back(std::move(s));
    }
    p.pipelines.push_back(std::move(pl));
  }
  if (j.contains("removed"))
    for (std::size_t i = 0; i < j["removed"].size(); ++i)
      p.removed.insert(detail::gpu_from(j["removed"][i], w + ".removed[" + std::to_string(i) + "]"));
  return p;
}

inline json to_json(const StragglerTrace& t) {
  json ev = json::array();
  for (const auto& e : t.events) {
    auto o = detail::gpu_json(e.gpu);
    o["iteration"] = e.iteration;
    o["rate"] = detail::num(e.rate);
    ev.push_back(o);
  }
  json sit = json::array();
  for (const auto& s : t.situations) sit.push_back(json{{"iteration", s.iteration}, {"tag", s.tag}});
  return json{{"noise", t.noise}, {"iterations", t.iterations}, {"events", ev}, {"situations", sit}};
}

inline StragglerTrace trace_from_json(const json& j) {
  const std::string w = "trace";
  using detail::as;
  using detail::field;
  StragglerTrace t;
  if (j.contains("noise")) t.noise = as<double>(j["noise"], w + ".noise");
  if (j.contains("iterations")) t.iterations = as<int>(j["iterations"], w + ".iterations");
  const auto& ev = field(j, "events", w);
  for (std::size_t i = 0; i < ev.size(); ++i) {
    std::string wi = w + ".events[" + std::to_string(i) + "]";
    TraceEvent e;
    e.iteration = as<int>(field(ev[i], "iteration", wi), wi + ".iteration");
    e.gpu = detail::gpu_from(ev[i], wi);
    e.rate = detail::to_num(field(ev[i], "rate", wi), wi + ".rate");
    t.events.push_back(e);
  }
  if (j.contains("situations"))
    for (std::size_t i = 0; i < j["situations"].size(); ++i) {
      std::string wi = w + ".situations[" + std::to_string(i) + "]";
      const auto& s = j["situations"][i];
      t.situations.push_back({as<int>(field(s, "iteration", wi), wi + ".iteration"),
                              as<std::string>(field(s, "tag", wi), wi + ".tag")});
    }
  return t;
}

inline json to_json(const MigrationSchedule& s) {
  json batches = json::array();
  for (const auto& b : s.batches) {
    json ts = json::array();
    for (const auto& t : b.transfers) {
      json pieces = json::array();
      for (const auto& p : t.pieces) pieces.push_back(json::array({p.layer, p.begin, p.end, p.fragments}));
      ts.push_back(json{{"src", detail::gpu_json(t.src)},
                        {"dst", detail::gpu_json(t.dst)},
                        {"checkpoint", t.from_checkpoint},
                        {"mib", t.mib},
                        {"pieces", pieces}});
    }
    batches.push_back(json{{"first_layer", b.first_layer}, {"last_layer", b.last_layer}, {"seconds", b.seconds}, {"transfers", ts}});
  }
  json calls = json::array();
  for (const auto& [g, cs] : s.calls) {
    json list = json::array();
    for (const auto& c : cs)
      list.push_back(json{{"batch", c.batch}, {"peer", detail::gpu_json(c.peer)}, {"op", c.send ? "send" : "recv"}});
    auto o = detail::gpu_json(g);
    o["calls"] = list;
    calls.push_back(o);
  }
  return json{{"seconds", s.seconds},
              {"total_mib", s.total_mib()},
              {"needs_checkpoint", s.needs_checkpoint},
              {"fragments", s.fragments},
              {"batches", batches},
              {"calls", calls}};
}

inline MigrationSchedule schedule_from_json(const json& j) {
  const std::string w = "schedule";
  using detail::as;
  using detail::field;
  MigrationSchedule s;
  s.seconds = as<double>(field(j, "seconds", w), w + ".seconds");
  s.needs_checkpoint = as<bool>(field(j, "needs_checkpoint", w), w + ".needs_checkpoint");
  s.fragments = as<std::vector<int>>(field(j, "fragments", w), w + ".fragments");
  const auto& bs = field(j, "batches", w);
  for (std::size_t i = 0; i < bs.size(); ++i) {
    std::string wi = w + ".batches[" + std::to_string(i) + "]";
    MigrationBatch b;
    b.first_layer = as<int>(field(bs[i], "first_layer", wi), wi + ".first_layer");
    b.last_layer = as<int>(field(bs[i], "last_layer", wi), wi + ".last_layer");
    b.seconds = as<double>(field(bs[i], "seconds", wi), wi + ".seconds");
    const auto& ts = field(bs[i], "transfers", wi);
    for (std::size_t k = 0; k < ts.size(); ++k) {
      std::string wk = wi + ".transfers[" + std::to_string(k) + "]";
      FusedTransfer t;
      t.src = detail::gpu_from(field(ts[k], "src", wk), wk + ".src");
      t.dst = detail::gpu_from(field(ts[k], "dst", wk), wk + ".dst");
      t.from_checkpoint = as<bool>(field(ts[k], "checkpoint", wk), wk + ".checkpoint");
      t.mib = as<double>(field(ts[k], "mib", wk), wk + ".mib");
      for (const auto& p : field(ts[k], "pieces", wk)) {
        auto v = as<std::vector<int>>(p, wk + ".pieces");
        if (v.size() != 4) throw ConfigError(wk + ".pieces: expected [layer, begin, end, fragments]");
        t.pieces.push_back({v[0], v[1], v[2], v[3]});
      }
      b.transfers.push_back(std::move(t));
    }
    s.batches.push_back(std::move(b));
  }
  if (j.contains("calls"))
    for (const auto& e : j["calls"]) {
      auto g = detail::gpu_from(e, w + ".calls");
      for (const auto& c : field(e, "calls", w + ".calls"))
        s.calls[g].push_back({as<int>(field(c, "batch", w + ".calls"), w + ".calls.batch"),
                              detail::gpu_from(field(c, "peer", w + ".calls"), w + ".calls.peer"),
                              as<std::string>(field(c, "op", w + ".calls"), w + ".calls.op") == "send"});
    }
  return s;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(path + ": cannot write");
  out << text;
}

// Loads a file and tags any schema error with its path.
template <class F>
auto load_file(const std::string& path, F&& parse) {
  auto j = read_json_file(path);
  try {
    return parse(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace stragplan
