#pragma once

// Disease knowledge base loaded from a line-delimited JSON file.
//
// Line 1 is a header: {"format": "emrkg-kb", "schema_version": 1}
// Every further non-blank line is one disease record:
//   {"name": "...", "description": "...", "prevention": "...", "cure_time": "...",
//    "cause": "...", "treatments": ["..."],
//    "relations": {"RecommendedFood": ["..."], "Complication": ["..."]}}
// `relations` may also be an array of [type, target] pairs. Scalar fields are
// optional. Names are normalized (trimmed, full-width folded).

#include <algorithm>
#include <array>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "emrkg/error.hpp"
#include "emrkg/text.hpp"

namespace emrkg {

inline constexpr int kKbSchemaVersion = 1;
inline constexpr std::string_view kKbFormat = "emrkg-kb";

/// The six entity types a KB contributes, in catalog order.
inline constexpr std::array<std::string_view, 6> kKbEntityTypes = {"Disease", "Food", "Department",
                                                                   "Drug", "Examination", "Symptom"};

struct RelationSignature {
  std::string relation;
  std::string head_label;
  std::string tail_label;
};

/// The eight KB relation types; heads are always diseases.
inline const std::vector<RelationSignature>& kb_relation_schema() {
  static const std::vector<RelationSignature> schema = {
      {"RecommendedFood", "Disease", "Food"},
      {"AvoidFood", "Disease", "Food"},
      {"BelongsToDepartment", "Disease", "Department"},
      {"CommonDrug", "Disease", "Drug"},
      {"DiagnosticCheck", "Disease", "Examination"},
      {"HasSymptom", "Disease", "Symptom"},
      {"Complication", "Disease", "Disease"},
      {"RelatedDepartment", "Disease", "Department"},
  };
  return schema;
}

inline const RelationSignature* find_kb_relation(std::string_view relation) {
  for (const auto& s : kb_relation_schema()) {
    if (s.relation == relation) return &s;
  }
  return nullptr;
}

struct DiseaseEntry {
  std::string name;
  std::string description;
  std::string prevention;
  std::string cure_time;
  std::string cause;
  std::vector<std::string> treatments;
  std::vector<std::pair<std::string, std::string>> relations;  // (type, target)

  bool operator==(const DiseaseEntry&) const = default;
};

struct KbTriple {
  std::string head;
  std::string relation;
  std::string tail;
  std::string head_label;
  std::string tail_label;

  auto operator<=>(const KbTriple&) const = default;
};

struct KnowledgeBase {
  std::vector<DiseaseEntry> entries;
  std::map<std::string, std::set<std::string>> catalogs;  // one per KB entity type

  const std::set<std::string>& catalog(const std::string& type) const {
    const auto it = catalogs.find(type);
    if (it == catalogs.end()) throw Error(Errc::InvalidArgument, "kb", "no catalog for type '" + type + "'");
    return it->second;
  }

  bool operator==(const KnowledgeBase&) const = default;
};

namespace detail {

inline std::string kb_string(const nlohmann::json& rec, const char* key, std::size_t line) {
  const auto it = rec.find(key);
  if (it == rec.end() || it->is_null()) return {};
  if (!it->is_string()) {
    throw Error(Errc::ParseError, "kb", "line " + std::to_string(line) + ": field '" + key + "' must be a string");
  }
  return it->get<std::string>();
}

inline std::string kb_name(const nlohmann::json& v, std::size_t line, const char* what) {
  if (!v.is_string()) {
    throw Error(Errc::ParseError, "kb", "line " + std::to_string(line) + ": " + what + " must be a string");
  }
  auto n = normalize_name(v.get<std::string>());
  if (n.empty()) throw Error(Errc::ParseError, "kb", "line " + std::to_string(line) + ": empty " + what);
  return n;
}

inline void kb_add_relation(DiseaseEntry& e, const std::string& type, const nlohmann::json& target,
                            std::size_t line) {
  if (find_kb_relation(type) == nullptr) {
    throw Error(Errc::UnknownRelationType, "kb", "line " + std::to_string(line) + ": '" + type + "'");
  }
  std::pair<std::string, std::string> rel{type, kb_name(target, line, "relation target")};
  if (std::find(e.relations.begin(), e.relations.end(), rel) == e.relations.end()) {
    e.relations.push_back(std::move(rel));
  }
}

inline DiseaseEntry parse_kb_record(const nlohmann::json& rec, std::size_t line) {
  if (!rec.is_object()) throw Error(Errc::ParseError, "kb", "line " + std::to_string(line) + ": expected an object");
  const auto name_it = rec.find("name");
  if (name_it == rec.end()) throw Error(Errc::ParseError, "kb", "line " + std::to_string(line) + ": missing name");
  DiseaseEntry e;
  e.name = kb_name(*name_it, line, "name");
  e.description = kb_string(rec, "description", line);
  e.prevention = kb_string(rec, "prevention", line);
  e.cure_time = kb_string(rec, "cure_time", line);
  e.cause = kb_string(rec, "cause", line);
  if (const auto t = rec.find("treatments"); t != rec.end() && !t->is_null()) {
    if (!t->is_array()) throw Error(Errc::ParseError, "kb", "line " + std::to_string(line) + ": treatments must be a list");
    for (const auto& x : *t) e.treatments.push_back(kb_name(x, line, "treatment"));
  }
  if (const auto r = rec.find("relations"); r != rec.end() && !r->is_null()) {
    if (r->is_object()) {
      for (const auto& [type, targets] : r->items()) {
        if (!targets.is_array()) {
          throw Error(Errc::ParseError, "kb", "line " + std::to_string(line) + ": targets of '" + type + "' must be a list");
        }
        for (const auto& t : targets) kb_add_relation(e, type, t, line);
      }
    } else if (r->is_array()) {
      for (const auto& pair : *r) {
        if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string()) {
          throw Error(Errc::ParseError, "kb", "line " + std::to_string(line) + ": relation must be [type, target]");
        }
        kb_add_relation(e, pair[0].get<std::string>(), pair[1], line);
      }
    } else {
      throw Error(Errc::ParseError, "kb", "line " + std::to_string(line) + ": relations must be an object or list");
    }
  }
  return e;
}

/// Later scalars win when present; lists are unioned in first-seen order.
inline void merge_entry(DiseaseEntry& into, const DiseaseEntry& from) {
  for (auto [dst, src] : {std::pair{&into.description, &from.description}, std::pair{&into.prevention, &from.prevention},
                          std::pair{&into.cure_time, &from.cure_time}, std::pair{&into.cause, &from.cause}}) {
    if (!src->empty()) *dst = *src;
  }
  for (const auto& t : from.treatments) {
    if (std::find(into.treatments.begin(), into.treatments.end(), t) == into.treatments.end()) {
      into.treatments.push_back(t);
    }
  }
  for (const auto& r : from.relations) {
    if (std::find(into.relations.begin(), into.relations.end(), r) == into.relations.end()) {
      into.relations.push_back(r);
    }
  }
}

}  // namespace detail

/// Fills the six catalogs from entry names and relation targets.
inline std::map<std::string, std::set<std::string>> build_catalogs(const std::vector<DiseaseEntry>& entries) {
  std::map<std::string, std::set<std::string>> catalogs;
  for (auto t : kKbEntityTypes) catalogs[std::string(t)];
  for (const auto& e : entries) {
    catalogs["Disease"].insert(e.name);
    for (const auto& [type, target] : e.relations) {
      catalogs[find_kb_relation(type)->tail_label].insert(target);
    }
  }
  return catalogs;
}

inline KnowledgeBase parse_kb(std::string_view content, Diagnostics* diag = nullptr) {
  KnowledgeBase kb;
  std::map<std::string, std::size_t> by_name;
  bool header_seen = false;
  std::size_t line_no = 0;
  for (auto line : split(content, '\n')) {
    ++line_no;
    line = strip_cr(line);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(Errc::ParseError, "kb", "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!header_seen) {
      if (!rec.is_object() || rec.value("format", std::string{}) != kKbFormat) {
        throw Error(Errc::ParseError, "kb", "line " + std::to_string(line_no) + ": missing emrkg-kb header");
      }
      if (rec.value("schema_version", -1) != kKbSchemaVersion) {
        throw Error(Errc::SchemaVersionMismatch, "kb",
                    "schema_version " + rec.value("schema_version", nlohmann::json()).dump() + ", expected " +
                        std::to_string(kKbSchemaVersion));
      }
      header_seen = true;
      continue;
    }
    auto entry = detail::parse_kb_record(rec, line_no);
    if (const auto it = by_name.find(entry.name); it != by_name.end()) {
      warn(diag, "kb: line " + std::to_string(line_no) + ": duplicate disease '" + entry.name + "' merged");
      detail::merge_entry(kb.entries[it->second], entry);
    } else {
      by_name.emplace(entry.name, kb.entries.size());
      kb.entries.push_back(std::move(entry));
    }
  }
  if (kb.entries.empty()) warn(diag, "kb: knowledge base is empty");
  kb.catalogs = build_catalogs(kb.entries);
  return kb;
}

inline KnowledgeBase load_kb(const std::string& path, Diagnostics* diag = nullptr) {
  return parse_kb(read_file(path), diag);
}

/// One triple per relation instance, in entry then relation order.
inline std::vector<KbTriple> kb_to_triples(const std::vector<DiseaseEntry>& entries) {
  std::vector<KbTriple> out;
  for (const auto& e : entries) {
    for (const auto& [type, target] : e.relations) {
      const auto* sig = find_kb_relation(type);
      if (sig == nullptr) throw Error(Errc::UnknownRelationType, "kb", "'" + type + "'");
      out.push_back({e.name, type, target, sig->head_label, sig->tail_label});
    }
  }
  return out;
}

inline std::string write_kb(const std::vector<DiseaseEntry>& entries) {
  std::string out = nlohmann::ordered_json{{"format", kKbFormat}, {"schema_version", kKbSchemaVersion}}.dump() + "\n";
  for (const auto& e : entries) {
    nlohmann::ordered_json rec{{"name", e.name}};
    if (!e.description.empty()) rec["description"] = e.description;
    if (!e.prevention.empty()) rec["prevention"] = e.prevention;
    if (!e.cure_time.empty()) rec["cure_time"] = e.cure_time;
    if (!e.cause.empty()) rec["cause"] = e.cause;
    if (!e.treatments.empty()) rec["treatments"] = e.treatments;
    nlohmann::ordered_json rels = nlohmann::ordered_json::object();
    for (const auto& [type, target] : e.relations) rels[type].push_back(target);
    if (!rels.empty()) rec["relations"] = rels;
    out += rec.dump() + "\n";
  }
  return out;
}

}  // namespace emrkg
