// Set-based scoring: event-mention and identification micro P/R/F1 with
// per-type breakdowns, plus mean/stdev summaries across seeds.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "edet/core.hpp"
#include "edet/util.hpp"

namespace edet {

/// Micro counts and derived metrics. Degenerate 0/0 precision or recall is
/// reported as 0 with the flag set.
struct Prf {
  long tp = 0, fp = 0, fn = 0;
  double precision = 0, recall = 0, f1 = 0;
  bool degenerate = false;

  void finalize() {
    degenerate = (tp + fp == 0) || (tp + fn == 0);
    precision = (tp + fp) > 0 ? double(tp) / double(tp + fp) : 0.0;
    recall = (tp + fn) > 0 ? double(tp) / double(tp + fn) : 0.0;
    f1 = (precision + recall) > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
};

struct ScoreReport {
  Prf overall;
  std::map<std::string, Prf> per_type;
};

namespace detail {

template <typename Key>
using KeyCounts = std::map<Key, long>;

/// One-to-one matching on identical keys: tp = sum over keys of
/// min(pred count, gold count). Duplicate identical predictions beyond the
/// gold count become false positives.
template <typename Key>
void tally(const KeyCounts<Key>& pred, const KeyCounts<Key>& gold,
           const std::function<std::string(const Key&)>& type_of, ScoreReport& report) {
  long pred_total = 0, gold_total = 0;
  for (const auto& [key, c] : pred) {
    pred_total += c;
    report.per_type[type_of(key)];  // ensure entry exists
  }
  for (const auto& [key, c] : gold) {
    gold_total += c;
    report.per_type[type_of(key)];
  }
  std::map<std::string, long> tp_by_type, pred_by_type, gold_by_type;
  for (const auto& [key, c] : pred) pred_by_type[type_of(key)] += c;
  for (const auto& [key, c] : gold) gold_by_type[type_of(key)] += c;
  long tp = 0;
  for (const auto& [key, pc] : pred) {
    auto it = gold.find(key);
    if (it == gold.end()) continue;
    const long m = std::min(pc, it->second);
    tp += m;
    tp_by_type[type_of(key)] += m;
  }
  report.overall.tp += tp;
  report.overall.fp += pred_total - tp;
  report.overall.fn += gold_total - tp;
  for (auto& [type, prf] : report.per_type) {
    prf.tp += tp_by_type[type];
    prf.fp += pred_by_type[type] - tp_by_type[type];
    prf.fn += gold_by_type[type] - tp_by_type[type];
  }
}

inline void check_alignment(const std::set<std::string>& pred_ids,
                            const std::set<std::string>& gold_ids) {
  std::vector<std::string> orphans;
  for (const auto& id : pred_ids)
    if (!gold_ids.count(id)) orphans.push_back("pred-only:" + id);
  for (const auto& id : gold_ids)
    if (!pred_ids.count(id)) orphans.push_back("gold-only:" + id);
  if (!orphans.empty()) {
    std::string msg = "sentence id mismatch between prediction and gold:";
    for (const auto& o : orphans) msg += " " + o;
    throw ValidationError(msg);
  }
}

}  // namespace detail

/// Event-mention scoring: a prediction is correct iff an unmatched gold
/// mention in the same sentence has the identical (type, start, end).
inline ScoreReport score_mentions(const std::vector<AnnotatedSentence>& pred,
                                  const std::vector<AnnotatedSentence>& gold) {
  std::map<std::string, const AnnotatedSentence*> pred_by_id, gold_by_id;
  std::set<std::string> pids, gids;
  for (const auto& s : pred) {
    pred_by_id[s.sentence.id] = &s;
    pids.insert(s.sentence.id);
  }
  for (const auto& s : gold) {
    gold_by_id[s.sentence.id] = &s;
    gids.insert(s.sentence.id);
  }
  detail::check_alignment(pids, gids);

  ScoreReport report;
  using Key = std::tuple<std::string, int, int>;  // type, start, end
  const std::function<std::string(const Key&)> type_of = [](const Key& k) {
    return std::get<0>(k);
  };
  for (const auto& id : gids) {
    detail::KeyCounts<Key> pc, gc;
    for (const auto& m : pred_by_id.at(id)->mentions)
      pc[{m.event_type, m.trigger_start, m.trigger_end}] += 1;
    for (const auto& m : gold_by_id.at(id)->mentions)
      gc[{m.event_type, m.trigger_start, m.trigger_end}] += 1;
    detail::tally(pc, gc, type_of, report);
  }
  report.overall.finalize();
  for (auto& [_, prf] : report.per_type) prf.finalize();
  return report;
}

/// Identification scoring: micro P/R/F1 over (sentence, type) pairs.
inline ScoreReport score_identification(const std::map<std::string, std::set<std::string>>& pred,
                                        const std::map<std::string, std::set<std::string>>& gold) {
  std::set<std::string> pids, gids;
  for (const auto& [id, _] : pred) pids.insert(id);
  for (const auto& [id, _] : gold) gids.insert(id);
  detail::check_alignment(pids, gids);

  ScoreReport report;
  const std::function<std::string(const std::string&)> type_of = [](const std::string& t) {
    return t;
  };
  for (const auto& id : gids) {
    detail::KeyCounts<std::string> pc, gc;
    for (const auto& t : pred.at(id)) pc[t] = 1;
    for (const auto& t : gold.at(id)) gc[t] = 1;
    detail::tally(pc, gc, type_of, report);
  }
  report.overall.finalize();
  for (auto& [_, prf] : report.per_type) prf.finalize();
  return report;
}

inline std::map<std::string, std::set<std::string>> type_sets_of(
    const std::vector<AnnotatedSentence>& sentences) {
  std::map<std::string, std::set<std::string>> out;
  for (const auto& s : sentences) out[s.sentence.id] = gold_type_set(s);
  return out;
}

// ---------------------------------------------------------------------------
// Cross-seed summaries

struct MetricSummary {
  double mean = 0, stdev = 0;
};

struct RunSummary {
  MetricSummary precision, recall, f1;
  int runs = 0;
};

inline MetricSummary summarize_metric(const std::vector<double>& xs) {
  MetricSummary s;
  double sum = 0;
  for (double x : xs) sum += x;
  s.mean = sum / double(xs.size());
  double sq = 0;
  for (double x : xs) sq += (x - s.mean) * (x - s.mean);
  s.stdev = std::sqrt(sq / double(xs.size() - 1));  // sample stdev
  return s;
}

/// Mean and sample standard deviation per metric over >= 2 reports.
inline RunSummary summarize_runs(const std::vector<ScoreReport>& reports) {
  if (reports.size() < 2)
    throw ValidationError("summarize_runs: need at least 2 reports, got " +
                          std::to_string(reports.size()));
  std::vector<double> ps, rs, fs;
  for (const auto& r : reports) {
    ps.push_back(r.overall.precision);
    rs.push_back(r.overall.recall);
    fs.push_back(r.overall.f1);
  }
  RunSummary s;
  s.precision = summarize_metric(ps);
  s.recall = summarize_metric(rs);
  s.f1 = summarize_metric(fs);
  s.runs = int(reports.size());
  return s;
}

// ---------------------------------------------------------------------------
// Rendering

inline nlohmann::ordered_json report_to_json(const ScoreReport& r) {
  auto prf_json = [](const Prf& p) {
    nlohmann::ordered_json j;
    j["precision"] = p.precision;
    j["recall"] = p.recall;
    j["f1"] = p.f1;
    j["tp"] = p.tp;
    j["fp"] = p.fp;
    j["fn"] = p.fn;
    if (p.degenerate) j["degenerate"] = true;
    return j;
  };
  nlohmann::ordered_json j;
  j["overall"] = prf_json(r.overall);
  j["per_type"] = nlohmann::ordered_json::object();
  for (const auto& [type, prf] : r.per_type) j["per_type"][type] = prf_json(prf);
  return j;
}

inline std::string render_report(const ScoreReport& r, const std::string& title) {
  std::ostringstream os;
  os << title << "\n";
  auto row = [&os](const std::string& name, const Prf& p) {
    os << "  " << std::left << std::setw(24) << name << std::right << std::fixed
       << std::setprecision(4) << "P " << std::setw(7) << p.precision << "  R " << std::setw(7)
       << p.recall << "  F1 " << std::setw(7) << p.f1 << "  (tp " << p.tp << " fp " << p.fp
       << " fn " << p.fn << ")" << (p.degenerate ? "  [degenerate]" : "") << "\n";
  };
  row("micro", r.overall);
  for (const auto& [type, prf] : r.per_type) row(type, prf);
  return os.str();
}

}  // namespace edet
