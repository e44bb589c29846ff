#pragma once

// Generators shared by the unit and acceptance suites.

#include <string>
#include <vector>

#include "emrkg/corpus.hpp"
#include "emrkg/rng.hpp"
#include "emrkg/text.hpp"

namespace emrkg::testing {

inline const std::u32string& char_pool() {
  static const std::u32string pool = U"患者腹痛呕吐肝癌胆囊切除术左上腹隐痛发热乏力黄疸行检查治疗手术吸烟史原发性细胞 ab12";
  return pool;
}

struct RandomDoc {
  std::string txt;
  std::string ann;
  std::vector<EntitySpan> spans;  // in file order
};

/// Random text with non-overlapping spans; sentence punctuation and line
/// breaks appear only outside spans. Entities are at most `max_entity` long.
inline RandomDoc random_document(Rng& rng, const EntitySchema& schema, std::size_t max_entity = 8) {
  const std::size_t len = rng.index(160);
  std::u32string text;
  std::vector<EntitySpan> spans;
  std::size_t next_id = 1;
  while (text.size() < len) {
    const double u = rng.uniform01();
    if (u < 0.25) {
      const std::size_t n = 1 + rng.index(max_entity);
      const std::size_t start = text.size();
      for (std::size_t k = 0; k < n; ++k) text.push_back(char_pool()[rng.index(char_pool().size())]);
      const auto& type = schema.types()[rng.index(schema.size())];
      spans.push_back({"T" + std::to_string(next_id++), type, start, start + n,
                       text.substr(start, n)});
    } else if (u < 0.32) {
      static const std::u32string punct = U"。！？；\n，";
      text.push_back(punct[rng.index(punct.size())]);
    } else {
      text.push_back(char_pool()[rng.index(char_pool().size())]);
    }
  }
  // shuffle listing order so the parser has to sort
  rng.shuffle(spans);
  RandomDoc doc;
  doc.txt = utf8::encode(text);
  for (const auto& s : spans) {
    doc.ann += s.id + "\t" + s.label + " " + std::to_string(s.start) + " " +
               std::to_string(s.end) + "\t" + utf8::encode(s.surface) + "\n";
  }
  doc.spans = std::move(spans);
  return doc;
}

/// Random well-formed BIO sentence of length [1, max_len].
inline BioSentence random_bio(Rng& rng, const EntitySchema& schema, std::size_t max_len = 30) {
  BioSentence s;
  const std::size_t len = 1 + rng.index(max_len);
  while (s.chars.size() < len) {
    if (rng.uniform01() < 0.3) {
      const std::size_t n = std::min<std::size_t>(1 + rng.index(6), len - s.chars.size());
      const auto& type = schema.types()[rng.index(schema.size())];
      for (std::size_t k = 0; k < n; ++k) {
        s.chars.push_back(char_pool()[rng.index(char_pool().size())]);
        s.tags.push_back((k == 0 ? "B-" : "I-") + type);
      }
    } else {
      s.chars.push_back(char_pool()[rng.index(char_pool().size())]);
      s.tags.push_back("O");
    }
  }
  return s;
}

}  // namespace emrkg::testing
