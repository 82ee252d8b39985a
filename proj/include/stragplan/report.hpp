#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "domain.hpp"

namespace stragplan {

struct TimelineRow {
  int iteration = 0;
  double seconds = 0;
  int plan_id = 0;
  std::vector<std::string> tokens;

  bool is_migration() const { return !tokens.empty() && tokens.front() == "migration"; }

  // Value of the first `key=` token, or empty.
  std::string value(const std::string& key) const {
    for (const auto& t : tokens)
      if (t.size() > key.size() && t.compare(0, key.size(), key) == 0 && t[key.size()] == '=')
        return t.substr(key.size() + 1);
    return {};
  }
  bool has(const std::string& tok) const {
    for (const auto& t : tokens)
      if (t == tok) return true;
    return false;
  }
};

inline std::vector<TimelineRow> parse_timeline_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<TimelineRow> rows;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("iteration", 0) == 0)) continue;
    std::vector<std::string> cols;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cols.push_back(cell);
    if (line.back() == ',') cols.emplace_back();
    if (cols.size() != 4) throw ConfigError("timeline line " + std::to_string(lineno) + ": expected 4 columns");
    TimelineRow r;
    try {
      r.iteration = std::stoi(cols[0]);
      r.seconds = std::stod(cols[1]);
      r.plan_id = std::stoi(cols[2]);
    } catch (const std::exception&) {
      throw ConfigError("timeline line " + std::to_string(lineno) + ": malformed number");
    }
    std::istringstream es(cols[3]);
    std::string tok;
    while (std::getline(es, tok, ';'))
      if (!tok.empty()) r.tokens.push_back(tok);
    rows.push_back(std::move(r));
  }
  return rows;
}

struct SituationSummary {
  std::string tag;
  int first_iteration = 0;
  int steady_iterations = 0;
  double mean_seconds = 0;      // steady-state mean of simulated step time
  double estimate_seconds = 0;  // T-hat of the plan in force at the end of the situation
  double r_actual = 0;
  double r_est = 0;
  double r_opt = 0;
};

// Splits a timeline at situation marks. Steady state is every step after the last plan
// switch inside the situation; ratios are against the first situation tagged "normal".
inline std::vector<SituationSummary> summarize(const std::vector<TimelineRow>& rows) {
  std::vector<SituationSummary> out;
  std::vector<std::vector<const TimelineRow*>> seg;
  double est = 0;
  std::vector<double> seg_est;
  for (const auto& r : rows) {
    auto tag = r.value("situation");
    if (!tag.empty()) {
      SituationSummary s;
      s.tag = tag;
      s.first_iteration = r.iteration;
      auto ro = r.value("ropt");
      s.r_opt = ro.empty() ? 0 : std::stod(ro);
      out.push_back(s);
      seg.emplace_back();
      seg_est.push_back(est);
    }
    auto e = r.value("est");
    if (!e.empty()) est = std::stod(e);
    if (!seg.empty()) {
      seg.back().push_back(&r);
      seg_est.back() = est;
    }
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::size_t from = 0;
    for (std::size_t i = 0; i < seg[k].size(); ++i)
      if (seg[k][i]->is_migration()) from = i + 1;
    double sum = 0;
    int n = 0;
    for (std::size_t i = from; i < seg[k].size(); ++i) {
      if (seg[k][i]->is_migration()) continue;
      sum += seg[k][i]->seconds;
      ++n;
    }
    out[k].steady_iterations = n;
    out[k].mean_seconds = n ? sum / n : 0;
    out[k].estimate_seconds = seg_est[k];
  }
  const SituationSummary* normal = nullptr;
  for (const auto& s : out)
    if (s.tag == "normal" && !normal) normal = &s;
  if (normal && normal->mean_seconds > 0 && normal->estimate_seconds > 0) {
    double nm = normal->mean_seconds, ne = normal->estimate_seconds;
    for (auto& s : out) {
      s.r_actual = s.mean_seconds / nm;
      s.r_est = s.estimate_seconds / ne;
    }
  }
  return out;
}

}  // namespace stragplan
