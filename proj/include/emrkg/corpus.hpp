#pragma once

// Standoff (brat .ann) parsing, sentence segmentation, BIO conversion and
// dataset splitting. Everything here works on code-point offsets with an
// exclusive end, the brat convention.

#include <algorithm>
#include <charconv>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "emrkg/error.hpp"
#include "emrkg/rng.hpp"
#include "emrkg/text.hpp"

namespace emrkg {

/// Ordered set of entity type names. The order fixes tag indices.
class EntitySchema {
 public:
  EntitySchema()
      : EntitySchema({"Disease", "BodyCheck", "Symptom", "Condition", "Check", "Treatment",
                      "Operation"}) {}

  explicit EntitySchema(std::vector<std::string> types) : types_(std::move(types)) {
    if (types_.empty()) throw Error(Errc::ConfigError, "corpus", "entity schema is empty");
    std::set<std::string> seen;
    for (const auto& t : types_) {
      if (t.empty() || t.find_first_of(" \t\n-") != std::string::npos) {
        throw Error(Errc::ConfigError, "corpus", "invalid entity type name '" + t + "'");
      }
      if (!seen.insert(lower(t)).second) {
        throw Error(Errc::ConfigError, "corpus", "duplicate entity type '" + t + "'");
      }
    }
  }

  const std::vector<std::string>& types() const noexcept { return types_; }
  std::size_t size() const noexcept { return types_.size(); }

  /// Schema spelling of `label`, matched ASCII-case-insensitively.
  std::optional<std::string> canonical(std::string_view label) const {
    const auto key = lower(label);
    for (const auto& t : types_) {
      if (lower(t) == key) return t;
    }
    return std::nullopt;
  }

  bool contains(std::string_view label) const {
    return std::find(types_.begin(), types_.end(), label) != types_.end();
  }

  std::size_t index_of(std::string_view label) const {
    const auto it = std::find(types_.begin(), types_.end(), label);
    if (it == types_.end()) {
      throw Error(Errc::UnknownLabel, "corpus", "label '" + std::string(label) + "' not in schema");
    }
    return static_cast<std::size_t>(it - types_.begin());
  }

  bool operator==(const EntitySchema&) const = default;

 private:
  static std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
  }

  std::vector<std::string> types_;
};

/// (type, start, end) with an exclusive end.
struct TypedSpan {
  std::string type;
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const noexcept { return end - start; }
  auto operator<=>(const TypedSpan&) const = default;
};

struct EntitySpan {
  std::string id;
  std::string label;
  std::size_t start = 0;
  std::size_t end = 0;
  std::u32string surface;

  bool operator==(const EntitySpan&) const = default;
};

struct AnnotatedDocument {
  std::string doc_id;
  std::u32string text;
  std::vector<EntitySpan> spans;  // sorted by start, pairwise disjoint
};

struct RejectedSpan {
  std::string doc_id;
  EntitySpan span;
  std::string reason;
};

struct ValidationReport {
  std::vector<RejectedSpan> rejected;
};

struct BioSentence {
  std::u32string chars;
  std::vector<std::string> tags;

  bool operator==(const BioSentence&) const = default;
};

struct Segment {
  std::u32string text;
  std::vector<TypedSpan> spans;  // segment-local
  std::size_t offset = 0;        // position of text[0] in the source document
};

struct DatasetSplit {
  std::vector<BioSentence> train;
  std::vector<BioSentence> validation;
  std::vector<BioSentence> test;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::optional<std::size_t> parse_offset(std::string_view s) {
  std::size_t value = 0;
  if (s.empty()) return std::nullopt;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return value;
}

inline bool is_sentence_final(char32_t c) {
  return c == U'。' || c == U'！' || c == U'？' || c == U'；';
}

inline bool is_line_break(char32_t c) { return c == U'\n' || c == U'\r'; }

}  // namespace detail

/// Parses brat standoff text-bound annotations against their source text.
/// Lines for other brat record kinds (relations, events, attributes,
/// normalizations, notes) are skipped. A span overlapping an earlier-listed
/// span is dropped and recorded in `report`.
inline AnnotatedDocument parse_ann(std::string_view ann_content, std::string_view txt_content,
                                   const EntitySchema& schema, ValidationReport& report,
                                   std::string doc_id = {}) {
  AnnotatedDocument doc;
  doc.doc_id = std::move(doc_id);
  doc.text = utf8::decode(txt_content);

  std::set<std::string> ids;
  std::vector<EntitySpan> accepted;
  std::size_t line_no = 0;
  for (const auto& raw : split(ann_content, '\n')) {
    ++line_no;
    const auto line = strip_cr(raw);
    if (line.empty()) continue;
    const auto where = [&] { return doc.doc_id + ".ann line " + std::to_string(line_no); };

    const char kind = line.front();
    if (kind == 'R' || kind == 'E' || kind == 'A' || kind == 'M' || kind == 'N' || kind == '#') {
      continue;
    }
    if (kind != 'T') {
      throw Error(Errc::MalformedLine, "corpus", where() + ": unrecognised record '" +
                                                     std::string(line) + "'");
    }
    const auto fields = split(line, '\t');
    if (fields.size() != 3) {
      throw Error(Errc::MalformedLine, "corpus",
                  where() + ": expected 3 tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    const auto middle = split(fields[1], ' ');
    if (middle.size() != 3) {
      throw Error(Errc::MalformedLine, "corpus",
                  where() + ": expected '<label> <start> <end>' (discontinuous spans unsupported)");
    }
    const auto start = detail::parse_offset(middle[1]);
    const auto end = detail::parse_offset(middle[2]);
    if (!start || !end) {
      throw Error(Errc::MalformedLine, "corpus", where() + ": bad offsets '" + fields[1] + "'");
    }
    if (*start >= *end) {
      throw Error(Errc::MalformedLine, "corpus", where() + ": empty or inverted span");
    }
    if (fields[0].size() < 2 || !ids.insert(fields[0]).second) {
      throw Error(Errc::MalformedLine, "corpus", where() + ": bad or duplicate id '" + fields[0] + "'");
    }
    if (*end > doc.text.size()) {
      throw Error(Errc::OffsetOutOfBounds, "corpus",
                  where() + ": end " + std::to_string(*end) + " exceeds text length " +
                      std::to_string(doc.text.size()));
    }
    const auto label = schema.canonical(middle[0]);
    if (!label) {
      throw Error(Errc::UnknownLabel, "corpus", where() + ": label '" + middle[0] + "'");
    }
    EntitySpan span{fields[0], *label, *start, *end, doc.text.substr(*start, *end - *start)};
    // brat writes line breaks inside a span as spaces
    std::u32string expected = span.surface;
    for (auto& c : expected) {
      if (detail::is_line_break(c)) c = U' ';
    }
    if (utf8::decode(fields[2]) != expected) {
      throw Error(Errc::SurfaceMismatch, "corpus",
                  where() + ": surface '" + fields[2] + "' != text slice '" +
                      utf8::encode(span.surface) + "'");
    }

    const auto clash = std::find_if(accepted.begin(), accepted.end(), [&](const EntitySpan& s) {
      return span.start < s.end && s.start < span.end;
    });
    if (clash != accepted.end()) {
      warn(nullptr, doc.doc_id + ": span " + span.id + " overlaps " + clash->id + ", dropped");
      report.rejected.push_back({doc.doc_id, span, "overlaps " + clash->id});
      continue;
    }
    accepted.push_back(std::move(span));
  }
  std::stable_sort(accepted.begin(), accepted.end(),
                   [](const EntitySpan& a, const EntitySpan& b) { return a.start < b.start; });
  doc.spans = std::move(accepted);
  return doc;
}

inline AnnotatedDocument parse_ann(std::string_view ann_content, std::string_view txt_content,
                                   const EntitySchema& schema, std::string doc_id = {}) {
  ValidationReport report;
  return parse_ann(ann_content, txt_content, schema, report, std::move(doc_id));
}

/// Splits at 。！？； (kept with the preceding sentence) and at line breaks
/// (dropped), then hard-wraps pieces longer than `max_len`. A cut never falls
/// inside an entity; the wrap point moves left to the entity's start.
inline std::vector<Segment> segment(const AnnotatedDocument& doc, std::size_t max_len = 50) {
  if (max_len < 2) throw Error(Errc::InvalidArgument, "corpus", "max_len must be >= 2");
  const auto& text = doc.text;
  const std::size_t n = text.size();

  // cut_ok[k]: a boundary between k-1 and k separates no entity.
  std::vector<bool> cut_ok(n + 1, true);
  for (const auto& s : doc.spans) {
    for (std::size_t k = s.start + 1; k < s.end; ++k) cut_ok[k] = false;
    for (std::size_t k = s.start; k < s.end; ++k) {
      if (detail::is_line_break(text[k])) {
        throw Error(Errc::UnsplittableEntity, "corpus",
                    doc.doc_id + ": entity " + s.id + " spans a line break");
      }
    }
  }

  // Sentence pieces as [begin, end) ranges.
  std::vector<std::pair<std::size_t, std::size_t>> pieces;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (detail::is_line_break(text[i])) {
      if (i > begin) pieces.emplace_back(begin, i);
      begin = i + 1;
    } else if (detail::is_sentence_final(text[i]) && cut_ok[i + 1]) {
      pieces.emplace_back(begin, i + 1);
      begin = i + 1;
    }
  }
  if (begin < n) pieces.emplace_back(begin, n);

  std::vector<std::pair<std::size_t, std::size_t>> wrapped;
  for (auto [b, e] : pieces) {
    while (e - b > max_len) {
      std::size_t cut = b + max_len;
      while (cut > b && !cut_ok[cut]) --cut;
      if (cut == b) {
        throw Error(Errc::UnsplittableEntity, "corpus",
                    doc.doc_id + ": entity at offset " + std::to_string(b) + " longer than " +
                        std::to_string(max_len));
      }
      wrapped.emplace_back(b, cut);
      b = cut;
    }
    wrapped.emplace_back(b, e);
  }

  std::vector<Segment> out;
  auto span_it = doc.spans.begin();
  for (auto [b, e] : wrapped) {
    Segment seg;
    seg.offset = b;
    seg.text = text.substr(b, e - b);
    while (span_it != doc.spans.end() && span_it->start < b) ++span_it;
    for (auto it = span_it; it != doc.spans.end() && it->start < e; ++it) {
      seg.spans.push_back({it->label, it->start - b, it->end - b});
    }
    const bool blank = std::all_of(seg.text.begin(), seg.text.end(), is_space);
    if (blank && seg.spans.empty()) continue;
    out.push_back(std::move(seg));
  }
  return out;
}

inline BioSentence to_bio(const Segment& seg) {
  BioSentence sentence;
  sentence.chars = seg.text;
  sentence.tags.assign(seg.text.size(), "O");
  std::vector<bool> taken(seg.text.size(), false);
  for (const auto& s : seg.spans) {
    if (s.start >= s.end || s.end > seg.text.size()) {
      throw Error(Errc::OffsetOutOfBounds, "corpus", "segment span out of range");
    }
    for (std::size_t k = s.start; k < s.end; ++k) {
      if (taken[k]) {
        throw Error(Errc::OverlapAfterValidation, "corpus",
                    "overlapping spans at segment position " + std::to_string(k));
      }
      taken[k] = true;
      sentence.tags[k] = (k == s.start ? "B-" : "I-") + s.type;
    }
  }
  return sentence;
}

inline std::vector<BioSentence> to_bio(const std::vector<Segment>& segments) {
  std::vector<BioSentence> out;
  out.reserve(segments.size());
  for (const auto& seg : segments) out.push_back(to_bio(seg));
  return out;
}

/// Entity spans encoded by a well-formed BIO tag sequence.
inline std::vector<TypedSpan> from_bio(const BioSentence& sentence) {
  if (sentence.chars.size() != sentence.tags.size()) {
    throw Error(Errc::MalformedBio, "corpus",
                "chars/tags length mismatch " + std::to_string(sentence.chars.size()) + " vs " +
                    std::to_string(sentence.tags.size()));
  }
  std::vector<TypedSpan> spans;
  std::optional<TypedSpan> open;
  for (std::size_t i = 0; i < sentence.tags.size(); ++i) {
    const std::string& tag = sentence.tags[i];
    if (tag == "O") {
      if (open) spans.push_back(*std::exchange(open, std::nullopt));
      continue;
    }
    if (tag.size() < 3 || tag[1] != '-' || (tag[0] != 'B' && tag[0] != 'I')) {
      throw Error(Errc::MalformedBio, "corpus", "bad tag '" + tag + "' at " + std::to_string(i));
    }
    std::string type = tag.substr(2);
    if (tag[0] == 'B') {
      if (open) spans.push_back(*open);
      open = TypedSpan{std::move(type), i, i + 1};
    } else {
      if (!open || open->type != type) {
        throw Error(Errc::MalformedBio, "corpus",
                    "'" + tag + "' at " + std::to_string(i) + " does not continue an entity");
      }
      open->end = i + 1;
    }
  }
  if (open) spans.push_back(*open);
  return spans;
}

inline bool is_well_formed(const BioSentence& sentence) {
  try {
    from_bio(sentence);
    return true;
  } catch (const Error&) {
    return false;
  }
}

/// 8:1:1 split after a seeded shuffle. Validation and test each get
/// round-half-up(n/10) sentences; the remainder goes to train.
inline DatasetSplit split_dataset(const std::vector<BioSentence>& sentences, std::uint64_t seed) {
  const std::size_t n = sentences.size();
  if (n < 10) {
    throw Error(Errc::TooFewSentences, "corpus",
                "need at least 10 sentences to split, got " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  const std::size_t tenth = (n + 5) / 10;
  const std::size_t n_train = n - 2 * tenth;
  DatasetSplit split;
  split.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    auto& bucket = i < n_train ? split.train : (i < n_train + tenth ? split.validation : split.test);
    bucket.push_back(sentences[order[i]]);
  }
  return split;
}

// ---------------------------------------------------------------------------
// File formats

/// One `<char>\t<tag>` line per character, a blank line between sentences.
/// The mask code point is written as "[MASK]".
inline void write_bio(std::ostream& out, const std::vector<BioSentence>& sentences) {
  bool first = true;
  for (const auto& s : sentences) {
    if (!first) out << '\n';
    first = false;
    for (std::size_t i = 0; i < s.chars.size(); ++i) {
      out << utf8::to_display(std::u32string_view(&s.chars[i], 1)) << '\t' << s.tags[i] << '\n';
    }
  }
}

inline std::vector<BioSentence> read_bio(std::istream& in) {
  std::vector<BioSentence> out;
  BioSentence current;
  std::string raw;
  std::size_t line_no = 0;
  const auto flush = [&] {
    if (!current.chars.empty()) out.push_back(std::move(current));
    current = {};
  };
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = strip_cr(raw);
    if (line.empty()) {
      flush();
      continue;
    }
    const auto tab = line.rfind('\t');
    if (tab == std::string_view::npos || tab == 0) {
      throw Error(Errc::MalformedBio, "corpus", "BIO line " + std::to_string(line_no) + " lacks '<char>\\t<tag>'");
    }
    const auto token = line.substr(0, tab);
    char32_t ch = 0;
    if (token == kMaskToken) {
      ch = kMaskChar;
    } else {
      const auto cps = utf8::decode(token);
      if (cps.size() != 1) {
        throw Error(Errc::MalformedBio, "corpus",
                    "BIO line " + std::to_string(line_no) + " token is not one character");
      }
      ch = cps[0];
    }
    current.chars.push_back(ch);
    current.tags.emplace_back(line.substr(tab + 1));
  }
  flush();
  return out;
}

inline std::vector<BioSentence> read_bio_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "corpus", "cannot open " + path);
  return read_bio(in);
}

inline void write_bio_file(const std::string& path, const std::vector<BioSentence>& sentences) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "corpus", "cannot write " + path);
  write_bio(out, sentences);
}

/// Loads every `<name>.txt` with a sibling `<name>.ann`, sorted by name.
inline std::vector<AnnotatedDocument> load_corpus_dir(const std::string& dir,
                                                      const EntitySchema& schema,
                                                      ValidationReport& report) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error(Errc::IoError, "corpus", "not a directory: " + dir);
  std::vector<fs::path> txts;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") txts.push_back(entry.path());
  }
  std::sort(txts.begin(), txts.end());
  std::vector<AnnotatedDocument> docs;
  for (const auto& txt : txts) {
    auto ann = txt;
    ann.replace_extension(".ann");
    if (!fs::exists(ann)) continue;
    docs.push_back(parse_ann(read_file(ann.string()), read_file(txt.string()), schema, report,
                             txt.stem().string()));
  }
  return docs;
}

}  // namespace emrkg
