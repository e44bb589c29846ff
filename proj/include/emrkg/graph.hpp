#pragma once

// Typed property graph kept in memory. Node identity is (label, normalized
// name) and the node id is the string "Label:name". Triples are a set, so
// inserting one twice is a no-op. Everything iterates in sorted order, which
// makes exports byte-deterministic.

#include <algorithm>
#include <cctype>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "emrkg/corpus.hpp"
#include "emrkg/error.hpp"
#include "emrkg/kb.hpp"
#include "emrkg/text.hpp"

namespace emrkg {

inline constexpr std::string_view kPatientLabel = "Patient";
inline constexpr int kGraphSchemaVersion = 1;
inline constexpr std::string_view kGraphFormat = "emrkg-graph";

/// Patient-to-entity relation for an NER type. Unknown types get "Has<Type>".
inline std::string emr_relation(std::string_view ner_type) {
  static const std::map<std::string, std::string, std::less<>> names = {
      {"Disease", "HasDisease"},     {"Symptom", "HasSymptom"}, {"Operation", "Underwent"},
      {"Treatment", "ReceivedTreatment"}, {"Condition", "HasCondition"}, {"Check", "HasCheck"},
      {"BodyCheck", "HasBodyCheck"},
  };
  const auto it = names.find(ner_type);
  return it != names.end() ? it->second : "Has" + std::string(ner_type);
}

class GraphSchema {
 public:
  /// Patient + the NER types + the six KB types; KB relations plus one
  /// patient relation per NER type.
  static GraphSchema standard(const EntitySchema& ner = {}) {
    GraphSchema s;
    s.labels_.insert(std::string(kPatientLabel));
    for (const auto& t : ner.types()) {
      s.labels_.insert(t);
      s.allow(emr_relation(t), std::string(kPatientLabel), t);
    }
    for (auto t : kKbEntityTypes) s.labels_.insert(std::string(t));
    for (const auto& sig : kb_relation_schema()) s.allow(sig.relation, sig.head_label, sig.tail_label);
    s.allow("BelongsToDepartment", "Department", "Department");
    return s;
  }

  void add_label(std::string label) { labels_.insert(std::move(label)); }

  void allow(const std::string& relation, const std::string& head_label, const std::string& tail_label) {
    signatures_[relation].insert({head_label, tail_label});
  }

  bool has_label(std::string_view label) const { return labels_.count(std::string(label)) > 0; }

  bool allows(const std::string& relation, const std::string& head_label, const std::string& tail_label) const {
    const auto it = signatures_.find(relation);
    return it != signatures_.end() && it->second.count({head_label, tail_label}) > 0;
  }

  const std::set<std::string>& labels() const noexcept { return labels_; }
  const std::map<std::string, std::set<std::pair<std::string, std::string>>>& signatures() const noexcept {
    return signatures_;
  }

  bool operator==(const GraphSchema&) const = default;

 private:
  std::set<std::string> labels_;
  std::map<std::string, std::set<std::pair<std::string, std::string>>> signatures_;
};

struct Node {
  std::string id;
  std::string label;
  std::string name;
  std::map<std::string, std::string> attributes;

  bool operator==(const Node&) const = default;
};

struct Triple {
  std::string head;
  std::string relation;
  std::string tail;

  auto operator<=>(const Triple&) const = default;
};

class KnowledgeGraph {
 public:
  explicit KnowledgeGraph(GraphSchema schema = GraphSchema::standard()) : schema_(std::move(schema)) {}

  static std::string node_id(std::string_view label, std::string_view name) {
    return std::string(label) + ":" + normalize_name(name);
  }

  /// Inserts, or merges attributes into the existing (label, name) node.
  /// Incoming attribute values overwrite existing ones key by key.
  std::string upsert_node(const std::string& label, const std::string& name,
                          const std::map<std::string, std::string>& attributes = {}) {
    if (!schema_.has_label(label)) throw Error(Errc::LabelUnknown, "graph", "label '" + label + "' not in schema");
    const auto norm = normalize_name(name);
    if (norm.empty()) throw Error(Errc::InvalidArgument, "graph", "empty node name");
    auto id = node_id(label, norm);
    auto [it, inserted] = nodes_.try_emplace(id, Node{id, label, norm, {}});
    for (const auto& [k, v] : attributes) it->second.attributes[k] = v;
    return id;
  }

  void set_attribute(const std::string& id, const std::string& key, const std::string& value) {
    node_ref(id).attributes[key] = value;
  }

  /// Returns false when the triple was already present.
  bool add_triple(const std::string& head, const std::string& relation, const std::string& tail) {
    const auto& h = node_ref(head);
    const auto& t = node_ref(tail);
    if (!schema_.allows(relation, h.label, t.label)) {
      throw Error(Errc::RelationTypeMismatch, "graph",
                  relation + " does not connect " + h.label + " to " + t.label);
    }
    Triple tr{head, relation, tail};
    if (!triples_.insert(tr).second) return false;
    by_head_[head].insert(tr);
    by_tail_[tail].insert(tr);
    return true;
  }

  bool remove_triple(const Triple& t) {
    if (triples_.erase(t) == 0) return false;
    erase_index(by_head_, t.head, t);
    erase_index(by_tail_, t.tail, t);
    return true;
  }

  /// Removes a node together with every incident triple.
  void remove_node(const std::string& id) {
    node_ref(id);
    for (const auto& t : incident(id)) remove_triple(t);
    nodes_.erase(id);
  }

  /// Moves every triple incident to `from` onto `to`. Re-pointed triples that
  /// coincide with existing ones collapse. Returns the number moved.
  std::size_t repoint(const std::string& from, const std::string& to) {
    node_ref(from);
    node_ref(to);
    if (from == to) return 0;
    const auto moved = incident(from);
    for (const auto& t : moved) {
      remove_triple(t);
      add_triple(t.head == from ? to : t.head, t.relation, t.tail == from ? to : t.tail);
    }
    return moved.size();
  }

  std::vector<Triple> incident(const std::string& id) const {
    std::set<Triple> out;
    if (auto it = by_head_.find(id); it != by_head_.end()) out.insert(it->second.begin(), it->second.end());
    if (auto it = by_tail_.find(id); it != by_tail_.end()) out.insert(it->second.begin(), it->second.end());
    return {out.begin(), out.end()};
  }

  std::vector<Triple> outgoing(const std::string& id) const {
    const auto it = by_head_.find(id);
    if (it == by_head_.end()) return {};
    return {it->second.begin(), it->second.end()};
  }

  const Node* find(const std::string& id) const {
    const auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : &it->second;
  }
  const Node* find(std::string_view label, std::string_view name) const { return find(node_id(label, name)); }
  bool contains(const std::string& id) const { return nodes_.count(id) > 0; }

  const std::map<std::string, Node>& nodes() const noexcept { return nodes_; }
  const std::set<Triple>& triples() const noexcept { return triples_; }
  const GraphSchema& schema() const noexcept { return schema_; }
  GraphSchema& schema() noexcept { return schema_; }

  /// Tails of (head_label, head_name) --relation--> *, sorted by name then id.
  std::vector<Node> pattern_query(std::string_view head_label, std::string_view head_name,
                                  std::string_view relation) const {
    std::vector<Node> out;
    const auto it = by_head_.find(node_id(head_label, head_name));
    if (it == by_head_.end()) return out;
    for (const auto& t : it->second) {
      if (t.relation == relation) out.push_back(nodes_.at(t.tail));
    }
    sort_by_name(out);
    return out;
  }

  /// Follows a relation chain from one node; returns the distinct end nodes.
  std::vector<Node> chain_query(std::string_view head_label, std::string_view head_name,
                                const std::vector<std::string>& relations) const {
    std::set<std::string> frontier;
    if (contains(node_id(head_label, head_name))) frontier.insert(node_id(head_label, head_name));
    for (const auto& rel : relations) {
      std::set<std::string> next;
      for (const auto& id : frontier) {
        for (const auto& t : outgoing(id)) {
          if (t.relation == rel) next.insert(t.tail);
        }
      }
      frontier = std::move(next);
    }
    std::vector<Node> out;
    for (const auto& id : frontier) out.push_back(nodes_.at(id));
    sort_by_name(out);
    return out;
  }

  /// Throws DanglingEndpoint if any triple or index entry is inconsistent.
  void check_integrity() const {
    std::size_t indexed_head = 0;
    std::size_t indexed_tail = 0;
    for (const auto& t : triples_) {
      if (!contains(t.head) || !contains(t.tail)) {
        throw Error(Errc::DanglingEndpoint, "graph", "triple " + t.head + " -" + t.relation + "-> " + t.tail);
      }
      if (!by_head_.count(t.head) || !by_head_.at(t.head).count(t) || !by_tail_.count(t.tail) ||
          !by_tail_.at(t.tail).count(t)) {
        throw Error(Errc::DanglingEndpoint, "graph", "index missing triple " + t.head + " -> " + t.tail);
      }
    }
    for (const auto& [id, set] : by_head_) indexed_head += set.size();
    for (const auto& [id, set] : by_tail_) indexed_tail += set.size();
    if (indexed_head != triples_.size() || indexed_tail != triples_.size()) {
      throw Error(Errc::DanglingEndpoint, "graph", "index holds stale triples");
    }
    for (const auto& [id, n] : nodes_) {
      if (id != node_id(n.label, n.name)) throw Error(Errc::DanglingEndpoint, "graph", "node key mismatch " + id);
    }
  }

  bool operator==(const KnowledgeGraph& o) const { return nodes_ == o.nodes_ && triples_ == o.triples_; }

 private:
  Node& node_ref(const std::string& id) {
    const auto it = nodes_.find(id);
    if (it == nodes_.end()) throw Error(Errc::DanglingEndpoint, "graph", "no node '" + id + "'");
    return it->second;
  }
  const Node& node_ref(const std::string& id) const {
    const auto it = nodes_.find(id);
    if (it == nodes_.end()) throw Error(Errc::DanglingEndpoint, "graph", "no node '" + id + "'");
    return it->second;
  }

  static void erase_index(std::map<std::string, std::set<Triple>>& index, const std::string& key, const Triple& t) {
    const auto it = index.find(key);
    if (it == index.end()) return;
    it->second.erase(t);
    if (it->second.empty()) index.erase(it);
  }

  static void sort_by_name(std::vector<Node>& nodes) {
    std::sort(nodes.begin(), nodes.end(),
              [](const Node& a, const Node& b) { return std::tie(a.name, a.id) < std::tie(b.name, b.id); });
  }

  GraphSchema schema_;
  std::map<std::string, Node> nodes_;
  std::set<Triple> triples_;
  std::map<std::string, std::set<Triple>> by_head_;
  std::map<std::string, std::set<Triple>> by_tail_;
};

// ---------------------------------------------------------------------------
// Population

inline constexpr std::string_view kSourceAttr = "source";
inline constexpr std::string_view kAliasesAttr = "aliases";

/// Adds `token` to a '|'-joined sorted set attribute.
inline void add_to_set_attribute(KnowledgeGraph& g, const std::string& id, std::string_view key, const std::string& token) {
  const auto* node = g.find(id);
  std::set<std::string> values;
  if (const auto it = node->attributes.find(std::string(key)); it != node->attributes.end() && !it->second.empty()) {
    for (auto& v : split(it->second, '|')) values.insert(std::move(v));
  }
  values.insert(token);
  std::string joined;
  for (const auto& v : values) joined += (joined.empty() ? "" : "|") + v;
  g.set_attribute(id, std::string(key), joined);
}

/// Disease nodes carry the scalar KB fields; treatments are '|'-joined.
inline void add_kb(KnowledgeGraph& g, const KnowledgeBase& kb) {
  for (const auto& [type, names] : kb.catalogs) {
    for (const auto& n : names) add_to_set_attribute(g, g.upsert_node(type, n), kSourceAttr, "kb");
  }
  for (const auto& e : kb.entries) {
    std::map<std::string, std::string> attrs;
    if (!e.description.empty()) attrs["description"] = e.description;
    if (!e.prevention.empty()) attrs["prevention"] = e.prevention;
    if (!e.cure_time.empty()) attrs["cure_time"] = e.cure_time;
    if (!e.cause.empty()) attrs["cause"] = e.cause;
    if (!e.treatments.empty()) {
      std::string joined;
      for (const auto& t : e.treatments) joined += (joined.empty() ? "" : "|") + t;
      attrs["treatments"] = joined;
    }
    g.upsert_node("Disease", e.name, attrs);
  }
  for (const auto& t : kb_to_triples(kb.entries)) {
    g.add_triple(KnowledgeGraph::node_id(t.head_label, t.head), t.relation,
                 KnowledgeGraph::node_id(t.tail_label, t.tail));
  }
}

/// One patient and the entities extracted from their record, as (type, surface).
inline std::string add_patient_record(KnowledgeGraph& g, const std::string& patient_id,
                                      const std::map<std::string, std::string>& attributes,
                                      const std::vector<std::pair<std::string, std::string>>& entities) {
  const auto pid = g.upsert_node(std::string(kPatientLabel), patient_id, attributes);
  add_to_set_attribute(g, pid, kSourceAttr, "emr");
  for (const auto& [type, surface] : entities) {
    if (normalize_name(surface).empty()) continue;
    const auto eid = g.upsert_node(type, surface);
    add_to_set_attribute(g, eid, kSourceAttr, "emr");
    g.add_triple(pid, emr_relation(type), eid);
  }
  return pid;
}

struct PatientMeta {
  std::string patient_id;
  std::map<std::string, std::string> attributes;  // nation, age, sex, admission_time, ...
};

/// A record's sidecar JSON object. `patient_id` names the node; every other
/// key becomes an attribute (non-string values keep their JSON text).
inline PatientMeta parse_patient_meta(std::string_view content, const std::string& fallback_id) {
  PatientMeta meta{fallback_id, {}};
  if (content.find_first_not_of(" \t\r\n") == std::string_view::npos) return meta;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(content);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::ParseError, "graph", "patient metadata at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!j.is_object()) throw Error(Errc::ParseError, "graph", "patient metadata must be an object");
  for (const auto& [k, v] : j.items()) {
    const auto value = v.is_string() ? v.get<std::string>() : v.dump();
    if (k == "patient_id") {
      meta.patient_id = value;
    } else {
      meta.attributes[k] = value;
    }
  }
  return meta;
}

/// (type, surface) pairs of a document's spans, in span order.
inline std::vector<std::pair<std::string, std::string>> document_entities(const AnnotatedDocument& doc) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : doc.spans) out.emplace_back(s.label, utf8::encode(s.surface));
  return out;
}

// ---------------------------------------------------------------------------
// Export

/// "RecommendedFood" -> "RECOMMENDED_FOOD".
inline std::string upper_snake(std::string_view name) {
  std::string out;
  for (std::size_t i = 0; i < name.size(); ++i) {
    const char c = name[i];
    if (std::isupper(static_cast<unsigned char>(c)) && i > 0) out += '_';
    out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return out;
}

inline std::string cypher_string(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\'': out += "\\'"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  return out + "'";
}

namespace detail {

inline std::vector<const Node*> nodes_by_label_name(const KnowledgeGraph& g) {
  std::vector<const Node*> out;
  for (const auto& [id, n] : g.nodes()) out.push_back(&n);
  std::sort(out.begin(), out.end(), [](const Node* a, const Node* b) {
    return std::tie(a->label, a->name) < std::tie(b->label, b->name);
  });
  return out;
}

}  // namespace detail

/// One statement per line: a CREATE per node, then a MATCH ... CREATE per
/// triple. Returns the statement count.
inline std::size_t export_cypher(const KnowledgeGraph& g, std::ostream& out) {
  std::size_t count = 0;
  for (const auto* n : detail::nodes_by_label_name(g)) {
    out << "CREATE (:" << n->label << " {id: " << cypher_string(n->id) << ", name: " << cypher_string(n->name);
    for (const auto& [k, v] : n->attributes) out << ", `" << k << "`: " << cypher_string(v);
    out << "});\n";
    ++count;
  }
  for (const auto& t : g.triples()) {
    const auto& h = g.nodes().at(t.head);
    const auto& tl = g.nodes().at(t.tail);
    out << "MATCH (a:" << h.label << " {id: " << cypher_string(t.head) << "}), (b:" << tl.label
        << " {id: " << cypher_string(t.tail) << "}) CREATE (a)-[:" << upper_snake(t.relation) << "]->(b);\n";
    ++count;
  }
  return count;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// nodes.csv: id,label,name,attributes (attributes as a JSON object).
inline void export_nodes_csv(const KnowledgeGraph& g, std::ostream& out) {
  out << "id,label,name,attributes\n";
  for (const auto* n : detail::nodes_by_label_name(g)) {
    out << csv_field(n->id) << ',' << csv_field(n->label) << ',' << csv_field(n->name) << ','
        << csv_field(nlohmann::json(n->attributes).dump()) << '\n';
  }
}

/// rels.csv: head,relation,tail.
inline void export_rels_csv(const KnowledgeGraph& g, std::ostream& out) {
  out << "head,relation,tail\n";
  for (const auto& t : g.triples()) {
    out << csv_field(t.head) << ',' << csv_field(t.relation) << ',' << csv_field(t.tail) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Persistence: one JSON document carrying the schema, nodes and triples.

inline std::string save_graph(const KnowledgeGraph& g) {
  nlohmann::ordered_json doc;
  doc["format"] = kGraphFormat;
  doc["schema_version"] = kGraphSchemaVersion;
  nlohmann::ordered_json relations = nlohmann::ordered_json::object();
  for (const auto& [rel, sigs] : g.schema().signatures()) {
    for (const auto& [h, t] : sigs) relations[rel].push_back({h, t});
  }
  doc["schema"] = {{"labels", g.schema().labels()}, {"relations", relations}};
  doc["nodes"] = nlohmann::ordered_json::array();
  for (const auto& [id, n] : g.nodes()) {
    doc["nodes"].push_back({{"label", n.label}, {"name", n.name}, {"attributes", n.attributes}});
  }
  doc["triples"] = nlohmann::ordered_json::array();
  for (const auto& t : g.triples()) doc["triples"].push_back({t.head, t.relation, t.tail});
  return doc.dump(1) + "\n";
}

inline KnowledgeGraph load_graph(std::string_view content) {
  if (content.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw Error(Errc::SchemaVersionMismatch, "graph", "empty graph file has no schema_version");
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(content);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::IoError, "graph", "malformed graph file at byte " + std::to_string(e.byte));
  }
  if (!doc.is_object() || doc.value("format", std::string{}) != kGraphFormat ||
      doc.value("schema_version", -1) != kGraphSchemaVersion) {
    throw Error(Errc::SchemaVersionMismatch, "graph", "expected " + std::string(kGraphFormat) +
                                                           " schema_version " + std::to_string(kGraphSchemaVersion));
  }
  try {
    GraphSchema schema;
    for (const auto& l : doc.at("schema").at("labels")) schema.add_label(l.get<std::string>());
    for (const auto& [rel, sigs] : doc.at("schema").at("relations").items()) {
      for (const auto& s : sigs) schema.allow(rel, s.at(0).get<std::string>(), s.at(1).get<std::string>());
    }
    KnowledgeGraph g(std::move(schema));
    for (const auto& n : doc.at("nodes")) {
      g.upsert_node(n.at("label").get<std::string>(), n.at("name").get<std::string>(),
                    n.at("attributes").get<std::map<std::string, std::string>>());
    }
    for (const auto& t : doc.at("triples")) {
      g.add_triple(t.at(0).get<std::string>(), t.at(1).get<std::string>(), t.at(2).get<std::string>());
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::IoError, "graph", std::string("malformed graph file: ") + e.what());
  }
}

inline void save_graph_file(const std::string& path, const KnowledgeGraph& g) { write_file(path, save_graph(g)); }
inline KnowledgeGraph load_graph_file(const std::string& path) { return load_graph(read_file(path)); }

}  // namespace emrkg
