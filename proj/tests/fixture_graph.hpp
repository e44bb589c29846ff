#pragma once

// The bundled KB merged with the gold-annotated EMR corpus.

#include <filesystem>
#include <string>

#include "emrkg/corpus.hpp"
#include "emrkg/graph.hpp"
#include "emrkg/kb.hpp"

namespace emrkg::testing {

inline std::string fixture(const std::string& rel) { return std::string(EMRKG_FIXTURES_DIR) + "/" + rel; }

inline KnowledgeGraph fixture_graph() {
  Diagnostics diag;
  KnowledgeGraph g;
  add_kb(g, load_kb(fixture("kb_small.jsonl"), &diag));
  ValidationReport report;
  for (const auto& doc : load_corpus_dir(fixture("corpus_small"), EntitySchema{}, report)) {
    const auto meta_path = fixture("corpus_small/" + doc.doc_id + ".meta");
    const auto meta = parse_patient_meta(read_file(meta_path), doc.doc_id);
    add_patient_record(g, meta.patient_id, meta.attributes, document_entities(doc));
  }
  return g;
}

}  // namespace emrkg::testing
