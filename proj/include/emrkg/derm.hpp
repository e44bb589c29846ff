#pragma once

// Dynamic Entity Replacement and Masking: per-epoch stochastic augmentation
// of BIO sentences. Each application touches at most one entity.

#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "emrkg/corpus.hpp"
#include "emrkg/error.hpp"
#include "emrkg/rng.hpp"
#include "emrkg/text.hpp"

namespace emrkg {

struct EntityDictionary {
  std::map<std::string, std::set<std::u32string>> by_type;

  void add(const std::string& type, std::u32string surface) {
    if (!surface.empty()) by_type[type].insert(std::move(surface));
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [type, surfaces] : by_type) n += surfaces.size();
    return n;
  }

  bool empty() const { return size() == 0; }
};

struct DermConfig {
  double p_replace = 0.30;
  double p_mask = 0.30;
  double p_noop = 0.40;
  std::size_t short_threshold = 5;
  double mask_fraction = 0.20;
  char32_t mask_symbol = kMaskChar;

  void validate() const {
    const auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!in_unit(p_replace) || !in_unit(p_mask) || !in_unit(p_noop)) {
      throw Error(Errc::ConfigError, "derm", "probabilities must lie in [0, 1]");
    }
    if (std::abs(p_replace + p_mask + p_noop - 1.0) > 1e-9) {
      throw Error(Errc::ConfigError, "derm", "p_replace + p_mask + p_noop must equal 1");
    }
    if (short_threshold < 1) throw Error(Errc::ConfigError, "derm", "short_threshold must be >= 1");
    if (!(mask_fraction > 0.0 && mask_fraction <= 1.0)) {
      throw Error(Errc::ConfigError, "derm", "mask_fraction must lie in (0, 1]");
    }
  }
};

enum class DermAction { Replace, Mask, Noop };

inline std::string_view derm_action_name(DermAction a) {
  switch (a) {
    case DermAction::Replace: return "Replace";
    case DermAction::Mask: return "Mask";
    case DermAction::Noop: return "Noop";
  }
  return "Noop";
}

struct DermOutcome {
  BioSentence sentence;
  DermAction action = DermAction::Noop;
  std::optional<TypedSpan> affected_span;
};

/// Dictionary of annotated surfaces per type, merged with optional KB names.
inline EntityDictionary build_dictionary(
    const std::vector<AnnotatedDocument>& docs, const EntitySchema& schema,
    const std::map<std::string, std::vector<std::u32string>>* kb_names = nullptr,
    Diagnostics* diag = nullptr) {
  EntityDictionary dict;
  for (const auto& doc : docs) {
    for (const auto& span : doc.spans) dict.add(span.label, span.surface);
  }
  if (kb_names != nullptr) {
    for (const auto& [type, names] : *kb_names) {
      if (!schema.contains(type)) {
        throw Error(Errc::UnknownLabel, "derm", "dictionary type '" + type + "' not in schema");
      }
      for (const auto& name : names) dict.add(type, name);
    }
  }
  if (dict.empty()) warn(diag, "derm: entity dictionary is empty; augmentation will be a no-op");
  return dict;
}

/// Number of characters to mask in an entity of `entity_length` characters:
/// one for short entities, otherwise max(1, round-half-up(fraction * length)).
inline std::size_t mask_count(std::size_t entity_length, const DermConfig& config) {
  if (entity_length < 1) throw Error(Errc::InvalidArgument, "derm", "entity_length must be >= 1");
  if (entity_length <= config.short_threshold) return 1;
  const auto scaled = std::floor(config.mask_fraction * static_cast<double>(entity_length) + 0.5);
  const auto n = static_cast<std::size_t>(scaled);
  return std::clamp<std::size_t>(n, 1, entity_length);
}

/// Swaps the entity at `span` for `surface`; tags become B then an I-run.
inline BioSentence replace_entity(const BioSentence& sentence, const TypedSpan& span,
                                  const std::u32string& surface) {
  BioSentence out;
  out.chars = sentence.chars.substr(0, span.start) + surface + sentence.chars.substr(span.end);
  out.tags.assign(sentence.tags.begin(), sentence.tags.begin() + static_cast<long>(span.start));
  for (std::size_t k = 0; k < surface.size(); ++k) {
    out.tags.push_back((k == 0 ? "B-" : "I-") + span.type);
  }
  out.tags.insert(out.tags.end(), sentence.tags.begin() + static_cast<long>(span.end),
                  sentence.tags.end());
  return out;
}

/// Masks the given sentence positions; tags are untouched.
inline BioSentence mask_positions(const BioSentence& sentence, const std::vector<std::size_t>& positions,
                                  char32_t mask_symbol = kMaskChar) {
  BioSentence out = sentence;
  for (auto p : positions) out.chars.at(p) = mask_symbol;
  return out;
}

inline DermOutcome derm_transform(const BioSentence& sentence, const EntityDictionary& dict,
                                  const DermConfig& config, Rng& rng) {
  // The action draw always happens first so the stream layout does not
  // depend on the sentence contents.
  const double u = rng.uniform01();
  DermAction action = DermAction::Noop;
  if (u < config.p_replace) {
    action = DermAction::Replace;
  } else if (u < config.p_replace + config.p_mask) {
    action = DermAction::Mask;
  }
  DermOutcome noop{sentence, DermAction::Noop, std::nullopt};
  if (action == DermAction::Noop) return noop;

  const auto spans = from_bio(sentence);
  if (spans.empty()) return noop;
  const TypedSpan& target = spans[rng.index(spans.size())];

  if (action == DermAction::Replace) {
    const auto it = dict.by_type.find(target.type);
    if (it == dict.by_type.end()) return noop;
    const auto original = sentence.chars.substr(target.start, target.length());
    std::vector<const std::u32string*> candidates;
    for (const auto& s : it->second) {
      if (s != original) candidates.push_back(&s);
    }
    if (candidates.empty()) return noop;
    const auto& surface = *candidates[rng.index(candidates.size())];
    return {replace_entity(sentence, target, surface), DermAction::Replace,
            TypedSpan{target.type, target.start, target.start + surface.size()}};
  }

  const auto k = mask_count(target.length(), config);
  auto picks = rng.sample_without_replacement(target.length(), k);
  for (auto& p : picks) p += target.start;
  return {mask_positions(sentence, picks, config.mask_symbol), DermAction::Mask, target};
}

/// One augmentation pass over pristine sentences. Sentence i draws from
/// Rng(derive_seed(base_seed, i)), so results do not depend on evaluation order.
inline std::vector<DermOutcome> augment_epoch(const std::vector<BioSentence>& sentences,
                                              const EntityDictionary& dict, const DermConfig& config,
                                              std::uint64_t base_seed) {
  config.validate();
  std::vector<DermOutcome> out;
  out.reserve(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    Rng rng(derive_seed(base_seed, static_cast<std::uint64_t>(i)));
    out.push_back(derm_transform(sentences[i], dict, config, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// File formats

/// `type\tsurface` per line.
inline EntityDictionary read_dictionary(std::istream& in, const EntitySchema& schema) {
  EntityDictionary dict;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = strip_cr(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos || tab + 1 >= line.size()) {
      throw Error(Errc::MalformedLine, "derm",
                  "dictionary line " + std::to_string(line_no) + ": expected 'type\\tsurface'");
    }
    const auto type = schema.canonical(line.substr(0, tab));
    if (!type) {
      throw Error(Errc::UnknownLabel, "derm",
                  "dictionary line " + std::to_string(line_no) + ": unknown type '" +
                      std::string(line.substr(0, tab)) + "'");
    }
    dict.add(*type, utf8::decode(line.substr(tab + 1)));
  }
  return dict;
}

inline void write_dictionary(std::ostream& out, const EntityDictionary& dict) {
  for (const auto& [type, surfaces] : dict.by_type) {
    for (const auto& s : surfaces) out << type << '\t' << utf8::encode(s) << '\n';
  }
}

/// Provenance sidecar: one line per sentence, `action[\ttype\tstart\tend]`.
inline void write_provenance(std::ostream& out, const std::vector<DermOutcome>& outcomes) {
  for (const auto& o : outcomes) {
    out << derm_action_name(o.action);
    if (o.affected_span) {
      out << '\t' << o.affected_span->type << '\t' << o.affected_span->start << '\t'
          << o.affected_span->end;
    }
    out << '\n';
  }
}

}  // namespace emrkg
