#pragma once

// Entity-level precision / recall / F1 with strict (type, start, end) matching
// and micro-averaged totals.

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emrkg/corpus.hpp"
#include "emrkg/error.hpp"

namespace emrkg {

struct MatchCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  MatchCounts& operator+=(const MatchCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const MatchCounts&) const = default;
};

struct EvalCounts {
  std::vector<std::pair<std::string, MatchCounts>> per_type;  // schema order, then first seen
  MatchCounts overall;

  MatchCounts& at(const std::string& type) {
    for (auto& [t, c] : per_type) {
      if (t == type) return c;
    }
    per_type.emplace_back(type, MatchCounts{});
    return per_type.back().second;
  }
};

struct Scores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool undefined = false;  // a 0/0 occurred and was reported as 0
  MatchCounts counts;
};

struct EvalReport {
  std::vector<std::pair<std::string, Scores>> per_type;
  Scores micro;
};

/// Gold and predicted must be parallel: same sentence count and lengths.
inline EvalCounts count_matches(const std::vector<BioSentence>& gold,
                                const std::vector<BioSentence>& predicted,
                                const EntitySchema* schema = nullptr) {
  if (gold.size() != predicted.size()) {
    throw Error(Errc::LengthMismatch, "metrics",
                std::to_string(gold.size()) + " gold vs " + std::to_string(predicted.size()) +
                    " predicted sentences");
  }
  EvalCounts counts;
  if (schema != nullptr) {
    for (const auto& t : schema->types()) counts.at(t);
  }
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].chars.size() != predicted[i].chars.size()) {
      throw Error(Errc::LengthMismatch, "metrics", "sentence " + std::to_string(i) + " lengths differ");
    }
    const auto g = from_bio(gold[i]);
    const auto p = from_bio(predicted[i]);
    const std::set<TypedSpan> gs(g.begin(), g.end());
    const std::set<TypedSpan> ps(p.begin(), p.end());
    for (const auto& s : ps) {
      if (gs.count(s)) {
        counts.at(s.type).tp++;
      } else {
        counts.at(s.type).fp++;
      }
    }
    for (const auto& s : gs) {
      if (!ps.count(s)) counts.at(s.type).fn++;
    }
  }
  for (const auto& [t, c] : counts.per_type) counts.overall += c;
  return counts;
}

inline Scores score(const MatchCounts& c) {
  Scores s;
  s.counts = c;
  const auto tp = static_cast<double>(c.tp);
  if (c.tp + c.fp > 0) {
    s.precision = tp / static_cast<double>(c.tp + c.fp);
  } else {
    s.undefined = true;
  }
  if (c.tp + c.fn > 0) {
    s.recall = tp / static_cast<double>(c.tp + c.fn);
  } else {
    s.undefined = true;
  }
  if (s.precision + s.recall > 0) {
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  } else {
    s.undefined = true;
  }
  return s;
}

inline EvalReport precision_recall_f1(const EvalCounts& counts) {
  EvalReport report;
  for (const auto& [t, c] : counts.per_type) report.per_type.emplace_back(t, score(c));
  report.micro = score(counts.overall);
  return report;
}

/// "92.49%" with two decimals; exact integers print bare, as in "100%".
inline std::string format_percent(double ratio) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", ratio * 100.0);
  std::string s(buf);
  if (s.size() > 3 && s.compare(s.size() - 3, 3, ".00") == 0) s.resize(s.size() - 3);
  return s + "%";
}

inline constexpr std::string_view kMicroRowName = "Micro-average";

/// Aligned text table, one row per type plus a micro-average row.
inline std::string report_table(const EvalReport& report) {
  std::vector<std::vector<std::string>> rows{{"Entity Type", "Precision", "Recall", "F1"}};
  for (const auto& [t, s] : report.per_type) {
    rows.push_back({t, format_percent(s.precision), format_percent(s.recall), format_percent(s.f1)});
  }
  if (!report.per_type.empty()) {
    const auto& m = report.micro;
    rows.push_back({std::string(kMicroRowName), format_percent(m.precision),
                    format_percent(m.recall), format_percent(m.f1)});
  }
  std::size_t widths[4] = {0, 0, 0, 0};
  for (const auto& r : rows) {
    for (int c = 0; c < 4; ++c) widths[c] = std::max(widths[c], r[c].size());
  }
  std::ostringstream out;
  for (const auto& r : rows) {
    out << std::left << std::setw(static_cast<int>(widths[0])) << r[0];
    for (int c = 1; c < 4; ++c) out << "  " << std::right << std::setw(static_cast<int>(widths[c])) << r[c];
    out << '\n';
  }
  return out.str();
}

inline nlohmann::ordered_json report_json(const EvalReport& report) {
  const auto row = [](const Scores& s) {
    return nlohmann::ordered_json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1},
                                  {"tp", s.counts.tp},       {"fp", s.counts.fp},   {"fn", s.counts.fn},
                                  {"undefined", s.undefined}};
  };
  nlohmann::ordered_json j;
  j["per_type"] = nlohmann::ordered_json::object();
  for (const auto& [t, s] : report.per_type) j["per_type"][t] = row(s);
  j["micro"] = row(report.micro);
  return j;
}

}  // namespace emrkg
