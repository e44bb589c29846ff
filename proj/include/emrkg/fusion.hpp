#pragma once

// Entity normalization by TF-IDF cosine similarity over character n-grams of
// names, and fusion of matched EMR nodes into their knowledge-base nodes.
//
//   tf(t, d)  = count(t in d) / |d|
//   idf(t)    = log(|D| / |{d : t in d}|)          Standard (default)
//             = log(|D| / (1 + |{d : t in d}|)) + 1  Smoothed
//   w(t, d)   = tf(t, d) * idf(t), rows L2-normalized
//
// A term seen in no document (only possible for queries) gets
// log(|D| / 1) under Standard and log(|D|) + 1 under Smoothed. When every
// idf is zero the index switches to uniform weights (idf = 1 for all terms).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "emrkg/error.hpp"
#include "emrkg/graph.hpp"
#include "emrkg/text.hpp"

namespace emrkg {

enum class IdfMode { Standard, Smoothed };

struct TfIdfOptions {
  std::vector<std::size_t> ngram_orders{1, 2};
  IdfMode idf_mode = IdfMode::Standard;
};

inline constexpr double kDefaultAlignThreshold = 0.8;

/// Character n-grams of the normalized name, grouped by order as listed.
inline std::vector<std::u32string> name_terms(std::string_view name, const std::vector<std::size_t>& orders = {1, 2}) {
  const auto text = normalize_name(utf8::decode(name));
  std::vector<std::u32string> out;
  for (auto n : orders) {
    if (n == 0) throw Error(Errc::ConfigError, "fusion", "n-gram order must be positive");
    for (std::size_t i = 0; i + n <= text.size(); ++i) out.push_back(text.substr(i, n));
  }
  return out;
}

inline double term_frequency(const std::u32string& term, const std::vector<std::u32string>& doc) {
  if (doc.empty()) throw Error(Errc::EmptyDocument, "fusion", "document has no terms");
  const auto c = std::count(doc.begin(), doc.end(), term);
  return static_cast<double>(c) / static_cast<double>(doc.size());
}

inline double inverse_document_frequency(std::size_t num_docs, std::size_t docs_with_term,
                                         IdfMode mode = IdfMode::Standard) {
  if (num_docs == 0) throw Error(Errc::EmptyCatalog, "fusion", "idf over an empty corpus");
  const auto d = static_cast<double>(num_docs);
  const auto t = static_cast<double>(docs_with_term);
  if (mode == IdfMode::Smoothed) return std::log(d / (1.0 + t)) + 1.0;
  return std::log(d / std::max(t, 1.0));
}

inline double inverse_document_frequency(const std::u32string& term, const std::vector<std::vector<std::u32string>>& corpus,
                                         IdfMode mode = IdfMode::Standard) {
  std::size_t df = 0;
  for (const auto& doc : corpus) df += std::find(doc.begin(), doc.end(), term) != doc.end() ? 1 : 0;
  return inverse_document_frequency(corpus.size(), df, mode);
}

/// Sorted by column index.
using SparseVector = std::vector<std::pair<std::size_t, double>>;

struct TfIdfIndex {
  TfIdfOptions options;
  std::map<std::u32string, std::size_t> vocabulary;  // term -> column, columns in term order
  std::vector<double> idf;                           // per column, as used for weighting
  std::vector<std::string> names;                    // row -> canonical (normalized) name
  std::vector<SparseVector> doc_vectors;             // unit length unless zero_rows[row]
  std::vector<bool> zero_rows;
  bool uniform_fallback = false;

  double unseen_idf() const {
    if (uniform_fallback) return 1.0;
    return inverse_document_frequency(names.size(), 0, options.idf_mode);
  }

  /// Query weights for known terms plus the squared norm of everything,
  /// unseen terms included.
  std::pair<SparseVector, double> vectorize(std::string_view query) const {
    const auto terms = name_terms(query, options.ngram_orders);
    std::map<std::u32string, std::size_t> counts;
    for (const auto& t : terms) counts[t]++;
    SparseVector v;
    double norm_sq = 0.0;
    for (const auto& [term, c] : counts) {
      const double tf = static_cast<double>(c) / static_cast<double>(terms.size());
      const auto it = vocabulary.find(term);
      const double w = tf * (it == vocabulary.end() ? unseen_idf() : idf[it->second]);
      norm_sq += w * w;
      if (it != vocabulary.end() && w != 0.0) v.emplace_back(it->second, w);
    }
    std::sort(v.begin(), v.end());
    return {v, norm_sq};
  }
};

inline TfIdfIndex build_index(const std::vector<std::string>& kb_names, TfIdfOptions options = {}) {
  if (kb_names.empty()) throw Error(Errc::EmptyCatalog, "fusion", "no names to index");
  TfIdfIndex index;
  index.options = std::move(options);
  std::vector<std::vector<std::u32string>> docs;
  for (const auto& n : kb_names) {
    index.names.push_back(normalize_name(n));
    docs.push_back(name_terms(n, index.options.ngram_orders));
    if (docs.back().empty()) throw Error(Errc::EmptyDocument, "fusion", "name '" + n + "' has no terms");
  }
  std::map<std::u32string, std::size_t> df;
  for (const auto& d : docs) {
    for (const auto& t : std::set<std::u32string>(d.begin(), d.end())) df[t]++;
  }
  std::size_t col = 0;
  for (const auto& [term, count] : df) {
    index.vocabulary.emplace(term, col++);
    index.idf.push_back(inverse_document_frequency(docs.size(), count, index.options.idf_mode));
  }
  index.uniform_fallback = std::all_of(index.idf.begin(), index.idf.end(), [](double v) { return v == 0.0; });
  if (index.uniform_fallback) std::fill(index.idf.begin(), index.idf.end(), 1.0);

  for (const auto& d : docs) {
    std::map<std::size_t, std::size_t> counts;
    for (const auto& t : d) counts[index.vocabulary.at(t)]++;
    SparseVector v;
    double norm_sq = 0.0;
    for (const auto& [c, n] : counts) {
      const double w = static_cast<double>(n) / static_cast<double>(d.size()) * index.idf[c];
      if (w == 0.0) continue;
      v.emplace_back(c, w);
      norm_sq += w * w;
    }
    const bool zero = norm_sq == 0.0;
    if (!zero) {
      const double norm = std::sqrt(norm_sq);
      for (auto& [c, w] : v) w /= norm;
    }
    index.doc_vectors.push_back(std::move(v));
    index.zero_rows.push_back(zero);
  }
  return index;
}

inline double dot(const SparseVector& a, const SparseVector& b) {
  double s = 0.0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i].first == b[j].first) {
      s += a[i++].second * b[j++].second;
    } else if (a[i].first < b[j].first) {
      ++i;
    } else {
      ++j;
    }
  }
  return s;
}

namespace detail {

inline double row_similarity(const TfIdfIndex& index, const std::string& norm_query, const SparseVector& q,
                             double q_norm_sq, std::size_t row) {
  if (norm_query == index.names.at(row)) return 1.0;
  if (index.zero_rows[row] || q_norm_sq == 0.0) return 0.0;
  return std::clamp(dot(q, index.doc_vectors[row]) / std::sqrt(q_norm_sq), 0.0, 1.0);
}

}  // namespace detail

/// Cosine between a query and one indexed row. Identical normalized strings
/// score exactly 1; zero vectors score 0.
inline double similarity(const TfIdfIndex& index, std::string_view query, std::size_t row) {
  const auto [q, norm_sq] = index.vectorize(query);
  return detail::row_similarity(index, normalize_name(query), q, norm_sq, row);
}

struct Alignment {
  std::string source;
  std::optional<std::string> target;
  double similarity = 0.0;
  double threshold = kDefaultAlignThreshold;

  bool operator==(const Alignment&) const = default;
};

/// Best-scoring row; accepted iff similarity >= threshold. Ties go to the
/// lexicographically smallest name.
inline Alignment align(std::string_view query, const TfIdfIndex& index, double threshold = kDefaultAlignThreshold) {
  Alignment a{normalize_name(query), std::nullopt, 0.0, threshold};
  const auto [q, norm_sq] = index.vectorize(query);
  std::optional<std::size_t> best;
  for (std::size_t r = 0; r < index.names.size(); ++r) {
    const double s = detail::row_similarity(index, a.source, q, norm_sq, r);
    if (!best || s > a.similarity || (s == a.similarity && index.names[r] < index.names[*best])) {
      best = r;
      a.similarity = s;
    }
  }
  if (best && a.similarity >= threshold) a.target = index.names[*best];
  return a;
}

/// Tab-separated: source, target (empty if none), similarity to 6 places.
inline std::string alignment_report(const std::vector<Alignment>& alignments) {
  std::string out = "source\ttarget\tsimilarity\n";
  char buf[32];
  for (const auto& a : alignments) {
    std::snprintf(buf, sizeof buf, "%.6f", a.similarity);
    out += a.source + "\t" + a.target.value_or("") + "\t" + buf + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fusion

/// EMR-only nodes of `label`: extracted from records and absent from the KB.
inline std::vector<std::string> emr_only_names(const KnowledgeGraph& g, std::string_view label = "Disease") {
  std::vector<std::string> out;
  for (const auto& [id, n] : g.nodes()) {
    if (n.label != label) continue;
    const auto it = n.attributes.find(std::string(kSourceAttr));
    if (it != n.attributes.end() && it->second == "emr") out.push_back(n.name);
  }
  return out;
}

/// Index over the KB-sourced names of one label.
inline TfIdfIndex build_label_index(const KnowledgeGraph& g, std::string_view label = "Disease", TfIdfOptions options = {}) {
  std::vector<std::string> names;
  for (const auto& [id, n] : g.nodes()) {
    if (n.label != label) continue;
    const auto it = n.attributes.find(std::string(kSourceAttr));
    if (it != n.attributes.end() && it->second.find("kb") != std::string::npos) names.push_back(n.name);
  }
  return build_index(names, std::move(options));
}

struct FusionReport {
  std::vector<std::pair<std::string, std::string>> replaced;  // (source id, target id)
  std::vector<std::string> unmatched;                        // source names
  std::size_t triples_repointed = 0;
};

/// Re-points every triple of each matched node onto its target, records the
/// original surface in the target's aliases, then drops the matched node.
/// Sources already gone are skipped, so applying the same alignments again
/// changes nothing.
inline FusionReport fuse(KnowledgeGraph& g, const std::vector<Alignment>& alignments, std::string_view label = "Disease") {
  FusionReport report;
  for (const auto& a : alignments) {
    if (!a.target) {
      report.unmatched.push_back(a.source);
      continue;
    }
    const auto target = KnowledgeGraph::node_id(label, *a.target);
    if (!g.contains(target)) {
      throw Error(Errc::DanglingAlignment, "fusion", "target '" + target + "' not in graph");
    }
    const auto source = KnowledgeGraph::node_id(label, a.source);
    if (source == target || !g.contains(source)) continue;
    report.triples_repointed += g.repoint(source, target);
    add_to_set_attribute(g, target, kAliasesAttr, a.source);
    add_to_set_attribute(g, target, kSourceAttr, "emr");
    g.remove_node(source);
    report.replaced.emplace_back(source, target);
  }
  return report;
}

}  // namespace emrkg
