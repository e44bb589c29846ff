#pragma once

// Stage runner behind the command-line tool. Each stage reads its external
// inputs from the configured paths and its intermediate inputs from the
// output directory, and writes results back there. `run_pipeline` is the
// stages in order, so it produces exactly what the subcommands would.
//
// Seed derivation (base = config seed):
//   split       derive_seed(base, "split")
//   train       derive_seed(base, "train"), then "init", "epoch-e", "derm-e"
//   augment     the training stream for one epoch, "derm-e" under the train seed

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emrkg/corpus.hpp"
#include "emrkg/derm.hpp"
#include "emrkg/digest.hpp"
#include "emrkg/error.hpp"
#include "emrkg/fusion.hpp"
#include "emrkg/graph.hpp"
#include "emrkg/kb.hpp"
#include "emrkg/metrics.hpp"
#include "emrkg/rng.hpp"
#include "emrkg/tagger.hpp"
#include "emrkg/text.hpp"

namespace emrkg {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr int kConfigSchemaVersion = 1;

enum class GraphEntities { Gold, Predicted };

struct PipelineConfig {
  std::optional<std::uint64_t> seed;
  std::string corpus_dir;
  std::string kb_file;
  std::string output_dir;
  std::string model_file;  // empty: <output_dir>/model.bin
  EntitySchema schema;
  std::size_t segment_max_len = 50;
  TrainConfig train;  // derm settings live here; train.seed is derived per run
  double fusion_threshold = kDefaultAlignThreshold;
  std::string fusion_label = "Disease";
  TfIdfOptions tfidf;
  GraphEntities graph_entities = GraphEntities::Predicted;

  std::uint64_t base_seed() const {
    if (!seed) throw Error(Errc::ConfigError, "cli", "seed is mandatory");
    return *seed;
  }

  std::string model_path() const {
    return model_file.empty() ? (std::filesystem::path(output_dir) / "model.bin").string() : model_file;
  }

  /// Checks values and that the named external inputs exist.
  void validate(bool need_corpus, bool need_kb) const {
    base_seed();
    if (output_dir.empty()) throw Error(Errc::ConfigError, "cli", "paths.output_dir is required");
    if (need_corpus && !std::filesystem::is_directory(corpus_dir)) {
      throw Error(Errc::ConfigError, "cli", "paths.corpus_dir is not a directory: '" + corpus_dir + "'");
    }
    if (need_kb && !std::filesystem::is_regular_file(kb_file)) {
      throw Error(Errc::ConfigError, "cli", "paths.kb_file is not a file: '" + kb_file + "'");
    }
    if (segment_max_len < 2) throw Error(Errc::ConfigError, "cli", "segment_max_len must be >= 2");
    if (!(fusion_threshold >= 0.0 && fusion_threshold <= 1.0)) {
      throw Error(Errc::ConfigError, "cli", "fusion.threshold must lie in [0, 1]");
    }
    if (tfidf.ngram_orders.empty()) throw Error(Errc::ConfigError, "cli", "fusion.ngram_orders is empty");
    for (auto n : tfidf.ngram_orders) {
      if (n == 0) throw Error(Errc::ConfigError, "cli", "fusion.ngram_orders entries must be >= 1");
    }
    train.validate();
    train.derm.validate();
  }

  /// Canonical form. Everything that can change an output is here; the
  /// output directory is not, since it only decides where files land.
  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["schema_version"] = kConfigSchemaVersion;
    j["seed"] = seed ? nlohmann::ordered_json(*seed) : nlohmann::ordered_json();
    j["paths"] = {{"corpus_dir", corpus_dir}, {"kb_file", kb_file}, {"model_file", model_file}};
    j["schema"] = schema.types();
    j["segment_max_len"] = segment_max_len;
    const auto& d = train.derm;
    j["derm"] = {{"enabled", train.derm_enabled}, {"p_replace", d.p_replace},     {"p_mask", d.p_mask},
                 {"p_noop", d.p_noop},            {"short_threshold", d.short_threshold},
                 {"mask_fraction", d.mask_fraction}};
    j["train"] = {{"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"learning_rate", train.learning_rate},
                  {"hidden", train.hidden},
                  {"d_emb", train.d_emb},
                  {"optimizer", train.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
                  {"momentum", train.momentum},
                  {"gradient_clip", train.gradient_clip ? nlohmann::ordered_json(*train.gradient_clip)
                                                        : nlohmann::ordered_json()},
                  {"adam_beta1", train.adam_beta1},
                  {"adam_beta2", train.adam_beta2},
                  {"adam_epsilon", train.adam_epsilon}};
    j["fusion"] = {{"threshold", fusion_threshold},
                   {"label", fusion_label},
                   {"ngram_orders", tfidf.ngram_orders},
                   {"idf", tfidf.idf_mode == IdfMode::Smoothed ? "smoothed" : "standard"}};
    j["graph_entities"] = graph_entities == GraphEntities::Gold ? "gold" : "predicted";
    return j;
  }
};

namespace detail {

using json = nlohmann::json;

[[noreturn]] inline void config_error(const std::string& msg) { throw Error(Errc::ConfigError, "cli", msg); }

inline void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) config_error(where + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      config_error("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
    }
  }
}

template <typename T>
void read_opt(const json& obj, const char* key, T& into, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return;
  try {
    into = it->get<T>();
  } catch (const json::exception&) {
    config_error(where + "." + key + " has the wrong type");
  }
}

inline std::size_t read_count(const json& obj, const char* key, std::size_t fallback, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_number_unsigned()) config_error(where + "." + key + " must be a non-negative integer");
  return it->get<std::size_t>();
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return p;
  const std::filesystem::path path(p);
  return (path.is_absolute() ? path : std::filesystem::absolute(base / path)).lexically_normal().string();
}

}  // namespace detail

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  detail::config_error("optimizer must be 'sgd' or 'adam', got '" + std::string(s) + "'");
}

inline GraphEntities parse_graph_entities(std::string_view s) {
  if (s == "gold") return GraphEntities::Gold;
  if (s == "predicted") return GraphEntities::Predicted;
  detail::config_error("graph_entities must be 'gold' or 'predicted', got '" + std::string(s) + "'");
}

/// Relative paths resolve against `base_dir` (the config file's directory).
inline PipelineConfig parse_pipeline_config(std::string_view content, const std::filesystem::path& base_dir) {
  using detail::json;
  json j;
  try {
    j = json::parse(content);
  } catch (const json::parse_error& e) {
    detail::config_error("config is not valid JSON at byte " + std::to_string(e.byte));
  }
  detail::check_keys(j, "", {"schema_version", "seed", "paths", "schema", "segment_max_len", "derm", "train",
                             "fusion", "graph_entities"});
  if (j.contains("schema_version") && j["schema_version"] != kConfigSchemaVersion) {
    detail::config_error("unsupported config schema_version " + j["schema_version"].dump());
  }
  PipelineConfig c;
  if (j.contains("seed") && !j["seed"].is_null()) {
    if (!j["seed"].is_number_unsigned()) detail::config_error("seed must be a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    detail::check_keys(p, "paths", {"corpus_dir", "kb_file", "output_dir", "model_file"});
    detail::read_opt(p, "corpus_dir", c.corpus_dir, "paths");
    detail::read_opt(p, "kb_file", c.kb_file, "paths");
    detail::read_opt(p, "output_dir", c.output_dir, "paths");
    detail::read_opt(p, "model_file", c.model_file, "paths");
    c.corpus_dir = detail::resolve(base_dir, c.corpus_dir);
    c.kb_file = detail::resolve(base_dir, c.kb_file);
    c.output_dir = detail::resolve(base_dir, c.output_dir);
    c.model_file = detail::resolve(base_dir, c.model_file);
  }
  if (j.contains("schema")) {
    std::vector<std::string> types;
    detail::read_opt(j, "schema", types, "config");
    c.schema = EntitySchema(types);
  }
  c.segment_max_len = detail::read_count(j, "segment_max_len", c.segment_max_len, "config");
  if (j.contains("derm")) {
    const auto& d = j["derm"];
    detail::check_keys(d, "derm", {"enabled", "p_replace", "p_mask", "p_noop", "short_threshold", "mask_fraction"});
    detail::read_opt(d, "enabled", c.train.derm_enabled, "derm");
    detail::read_opt(d, "p_replace", c.train.derm.p_replace, "derm");
    detail::read_opt(d, "p_mask", c.train.derm.p_mask, "derm");
    detail::read_opt(d, "p_noop", c.train.derm.p_noop, "derm");
    c.train.derm.short_threshold = detail::read_count(d, "short_threshold", c.train.derm.short_threshold, "derm");
    detail::read_opt(d, "mask_fraction", c.train.derm.mask_fraction, "derm");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::check_keys(t, "train", {"epochs", "batch_size", "learning_rate", "hidden", "d_emb", "optimizer",
                                    "momentum", "gradient_clip", "adam_beta1", "adam_beta2", "adam_epsilon"});
    c.train.epochs = detail::read_count(t, "epochs", c.train.epochs, "train");
    c.train.batch_size = detail::read_count(t, "batch_size", c.train.batch_size, "train");
    c.train.hidden = detail::read_count(t, "hidden", c.train.hidden, "train");
    c.train.d_emb = detail::read_count(t, "d_emb", c.train.d_emb, "train");
    detail::read_opt(t, "learning_rate", c.train.learning_rate, "train");
    detail::read_opt(t, "momentum", c.train.momentum, "train");
    detail::read_opt(t, "adam_beta1", c.train.adam_beta1, "train");
    detail::read_opt(t, "adam_beta2", c.train.adam_beta2, "train");
    detail::read_opt(t, "adam_epsilon", c.train.adam_epsilon, "train");
    if (t.contains("gradient_clip") && !t["gradient_clip"].is_null()) {
      double clip = 0.0;
      detail::read_opt(t, "gradient_clip", clip, "train");
      c.train.gradient_clip = clip;
    }
    if (t.contains("optimizer")) {
      std::string opt;
      detail::read_opt(t, "optimizer", opt, "train");
      c.train.optimizer = parse_optimizer(opt);
    }
  }
  if (j.contains("fusion")) {
    const auto& f = j["fusion"];
    detail::check_keys(f, "fusion", {"threshold", "label", "ngram_orders", "idf"});
    detail::read_opt(f, "threshold", c.fusion_threshold, "fusion");
    detail::read_opt(f, "label", c.fusion_label, "fusion");
    detail::read_opt(f, "ngram_orders", c.tfidf.ngram_orders, "fusion");
    if (f.contains("idf")) {
      std::string mode;
      detail::read_opt(f, "idf", mode, "fusion");
      if (mode == "standard") {
        c.tfidf.idf_mode = IdfMode::Standard;
      } else if (mode == "smoothed") {
        c.tfidf.idf_mode = IdfMode::Smoothed;
      } else {
        detail::config_error("fusion.idf must be 'standard' or 'smoothed'");
      }
    }
  }
  if (j.contains("graph_entities")) {
    std::string ge;
    detail::read_opt(j, "graph_entities", ge, "config");
    c.graph_entities = parse_graph_entities(ge);
  }
  return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::string content;
  try {
    content = read_file(path);
  } catch (const Error&) {
    detail::config_error("cannot read config file '" + path + "'");
  }
  return parse_pipeline_config(content, std::filesystem::absolute(path).parent_path());
}

// ---------------------------------------------------------------------------
// Run bookkeeping

/// Files a run read and wrote, plus where progress messages go.
struct RunRecord {
  std::set<std::string> inputs;
  std::set<std::string> outputs;
  std::function<void(const std::string&)> log = [](const std::string&) {};

  std::string read(const std::string& path) {
    auto content = read_file(path);
    inputs.insert(path);
    return content;
  }
};

/// Output-dir relative file layout.
namespace layout {
inline constexpr const char* kAllBio = "bio/all.bio";
inline constexpr const char* kRejected = "bio/rejected.tsv";
inline constexpr const char* kTrainBio = "bio/train.bio";
inline constexpr const char* kValidationBio = "bio/validation.bio";
inline constexpr const char* kTestBio = "bio/test.bio";
inline constexpr const char* kDictionary = "dictionary.tsv";
inline constexpr const char* kTrainLog = "train_log.jsonl";
inline constexpr const char* kPredictions = "eval/predictions.bio";
inline constexpr const char* kReportTxt = "eval/report.txt";
inline constexpr const char* kReportJson = "eval/report.json";
inline constexpr const char* kKbGraph = "graph/kb_graph.json";
inline constexpr const char* kEmrGraph = "graph/emr_graph.json";
inline constexpr const char* kAlignments = "graph/alignments.tsv";
inline constexpr const char* kFusedGraph = "graph/fused_graph.json";
inline constexpr const char* kFusionReport = "graph/fusion_report.json";
inline constexpr const char* kCypher = "export/graph.cypher";
inline constexpr const char* kNodesCsv = "export/nodes.csv";
inline constexpr const char* kRelsCsv = "export/rels.csv";
inline constexpr const char* kManifest = "manifest.json";
}  // namespace layout

namespace detail {

inline std::string out_path(const PipelineConfig& c, const char* rel) {
  return (std::filesystem::path(c.output_dir) / rel).string();
}

inline void emit(RunRecord& rec, const std::string& path, std::string_view content) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  write_file(path, content);
  rec.outputs.insert(path);
}

inline std::string bio_text(const std::vector<BioSentence>& sentences) {
  std::ostringstream out;
  write_bio(out, sentences);
  return out.str();
}

inline std::vector<BioSentence> read_bio_input(RunRecord& rec, const std::string& path) {
  std::istringstream in(rec.read(path));
  return read_bio(in);
}

/// KB catalogs that share a meaning with an NER type.
inline const std::map<std::string, std::string>& kb_to_ner_types() {
  static const std::map<std::string, std::string> m = {
      {"Disease", "Disease"}, {"Symptom", "Symptom"}, {"Examination", "Check"}};
  return m;
}

/// Paths under the output directory print as `$OUT/...`, so manifests from
/// different output directories compare equal.
inline std::string display_path(const PipelineConfig& c, const std::string& path) {
  const auto rel = std::filesystem::path(path).lexically_relative(c.output_dir);
  if (!rel.empty() && *rel.begin() != "..") return "$OUT/" + rel.generic_string();
  return path;
}

}  // namespace detail

/// Dictionary over the training sentences plus the KB names whose catalog
/// maps onto a schema type.
inline EntityDictionary dictionary_from_training(const std::vector<BioSentence>& train, const EntitySchema& schema,
                                                 const KnowledgeBase* kb) {
  EntityDictionary dict;
  for (const auto& s : train) {
    for (const auto& span : from_bio(s)) dict.add(span.type, s.chars.substr(span.start, span.length()));
  }
  if (kb != nullptr) {
    for (const auto& [kb_type, ner_type] : detail::kb_to_ner_types()) {
      if (!schema.contains(ner_type)) continue;
      for (const auto& name : kb->catalog(kb_type)) dict.add(ner_type, utf8::decode(name));
    }
  }
  return dict;
}

/// Tags each segment of `doc` and returns the (type, surface) mentions.
inline std::vector<std::pair<std::string, std::string>> predicted_entities(const TaggerModel& model,
                                                                           const AnnotatedDocument& doc,
                                                                           std::size_t max_len) {
  std::vector<std::u32string> texts;
  for (auto& seg : segment(doc, max_len)) {
    if (!seg.text.empty()) texts.push_back(std::move(seg.text));
  }
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : predict(model, texts)) {
    for (const auto& span : from_bio(s)) {
      out.emplace_back(span.type, utf8::encode(std::u32string_view(s.chars).substr(span.start, span.length())));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stages

inline void stage_convert(const PipelineConfig& c, RunRecord& rec) {
  c.validate(true, false);
  namespace fs = std::filesystem;
  ValidationReport report;
  const auto docs = load_corpus_dir(c.corpus_dir, c.schema, report);
  for (const auto& entry : fs::directory_iterator(c.corpus_dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".txt" || ext == ".ann")) rec.inputs.insert(entry.path().string());
  }
  if (docs.empty()) throw Error(Errc::IoError, "corpus", "no .txt/.ann pairs in " + c.corpus_dir);
  std::vector<BioSentence> all;
  for (const auto& doc : docs) {
    for (const auto& seg : segment(doc, c.segment_max_len)) {
      if (!seg.text.empty()) all.push_back(to_bio(seg));
    }
  }
  std::string rejected = "doc_id\tlabel\tstart\tend\tsurface\treason\n";
  for (const auto& r : report.rejected) {
    rejected += r.doc_id + "\t" + r.span.label + "\t" + std::to_string(r.span.start) + "\t" +
                std::to_string(r.span.end) + "\t" + utf8::encode(r.span.surface) + "\t" + r.reason + "\n";
  }
  detail::emit(rec, detail::out_path(c, layout::kAllBio), detail::bio_text(all));
  detail::emit(rec, detail::out_path(c, layout::kRejected), rejected);
  rec.log("convert: " + std::to_string(docs.size()) + " documents, " + std::to_string(all.size()) +
          " sentences, " + std::to_string(report.rejected.size()) + " rejected spans");
}

inline void stage_split(const PipelineConfig& c, RunRecord& rec) {
  c.validate(false, true);
  const auto all = detail::read_bio_input(rec, detail::out_path(c, layout::kAllBio));
  const auto split = split_dataset(all, derive_seed(c.base_seed(), "split"));
  Diagnostics diag;
  const auto kb = parse_kb(rec.read(c.kb_file), &diag);
  for (const auto& w : diag.warnings) rec.log("warning: " + w);
  const auto dict = dictionary_from_training(split.train, c.schema, &kb);
  std::ostringstream dict_text;
  write_dictionary(dict_text, dict);
  detail::emit(rec, detail::out_path(c, layout::kTrainBio), detail::bio_text(split.train));
  detail::emit(rec, detail::out_path(c, layout::kValidationBio), detail::bio_text(split.validation));
  detail::emit(rec, detail::out_path(c, layout::kTestBio), detail::bio_text(split.test));
  detail::emit(rec, detail::out_path(c, layout::kDictionary), dict_text.str());
  rec.log("split: train " + std::to_string(split.train.size()) + ", validation " +
          std::to_string(split.validation.size()) + ", test " + std::to_string(split.test.size()) +
          "; dictionary " + std::to_string(dict.size()) + " surfaces");
}

inline TrainConfig effective_train_config(const PipelineConfig& c) {
  auto t = c.train;
  t.seed = derive_seed(c.base_seed(), "train");
  return t;
}

inline EntityDictionary read_dictionary_input(const PipelineConfig& c, RunRecord& rec) {
  std::istringstream in(rec.read(detail::out_path(c, layout::kDictionary)));
  return read_dictionary(in, c.schema);
}

/// Writes the augmented training set exactly as epoch `epoch` of training draws it.
inline void stage_augment(const PipelineConfig& c, RunRecord& rec, std::size_t epoch = 1) {
  c.validate(false, false);
  if (epoch == 0) throw Error(Errc::ConfigError, "cli", "epoch must be >= 1");
  const auto train = detail::read_bio_input(rec, detail::out_path(c, layout::kTrainBio));
  const auto dict = read_dictionary_input(c, rec);
  const auto t = effective_train_config(c);
  const auto outcomes = augment_epoch(train, dict, t.derm, derive_seed(t.seed, "derm-" + std::to_string(epoch)));
  std::vector<BioSentence> sentences;
  std::map<DermAction, std::size_t> counts;
  for (const auto& o : outcomes) {
    sentences.push_back(o.sentence);
    ++counts[o.action];
  }
  std::ostringstream prov;
  write_provenance(prov, outcomes);
  const auto stem = "augment/epoch_" + std::to_string(epoch);
  detail::emit(rec, detail::out_path(c, (stem + ".bio").c_str()), detail::bio_text(sentences));
  detail::emit(rec, detail::out_path(c, (stem + ".provenance.tsv").c_str()), prov.str());
  rec.log("augment: epoch " + std::to_string(epoch) + ": replace " + std::to_string(counts[DermAction::Replace]) +
          ", mask " + std::to_string(counts[DermAction::Mask]) + ", noop " + std::to_string(counts[DermAction::Noop]));
}

inline void stage_train(const PipelineConfig& c, RunRecord& rec) {
  c.validate(false, false);
  DatasetSplit split;
  split.train = detail::read_bio_input(rec, detail::out_path(c, layout::kTrainBio));
  split.validation = detail::read_bio_input(rec, detail::out_path(c, layout::kValidationBio));
  split.test = detail::read_bio_input(rec, detail::out_path(c, layout::kTestBio));
  const auto dict = read_dictionary_input(c, rec);
  const auto result = train(split, dict, effective_train_config(c), c.schema, [&](const EpochRecord& r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "train: epoch %zu loss %.4f val P %.4f R %.4f F1 %.4f", r.epoch, r.loss,
                  r.precision, r.recall, r.f1);
    rec.log(buf);
  });
  std::ostringstream model_bytes;
  save_model(model_bytes, result.model);
  std::ostringstream log;
  write_train_log(log, result.log);
  detail::emit(rec, c.model_path(), model_bytes.str());
  detail::emit(rec, detail::out_path(c, layout::kTrainLog), log.str());
  rec.log("train: kept epoch " + std::to_string(result.best_epoch) + ", " +
          std::to_string(result.model.num_parameters()) + " parameters");
}

inline TaggerModel read_model_input(const PipelineConfig& c, RunRecord& rec) {
  std::istringstream in(rec.read(c.model_path()));
  return load_model(in);
}

inline EvalReport stage_evaluate(const PipelineConfig& c, RunRecord& rec) {
  c.validate(false, false);
  const auto model = read_model_input(c, rec);
  const auto gold = detail::read_bio_input(rec, detail::out_path(c, layout::kTestBio));
  const auto predicted = predict(model, gold);
  const auto report = precision_recall_f1(count_matches(gold, predicted));
  detail::emit(rec, detail::out_path(c, layout::kPredictions), detail::bio_text(predicted));
  detail::emit(rec, detail::out_path(c, layout::kReportTxt), report_table(report));
  detail::emit(rec, detail::out_path(c, layout::kReportJson), report_json(report).dump(2) + "\n");
  rec.log("evaluate: test micro F1 " + format_percent(report.micro.f1));
  return report;
}

/// Tags `input` (BIO, or plain text with one sentence per line) into `output`.
inline void stage_tag(const PipelineConfig& c, RunRecord& rec, const std::string& input, const std::string& output) {
  c.validate(false, false);
  const auto model = read_model_input(c, rec);
  const auto content = rec.read(input);
  std::vector<BioSentence> tagged;
  if (std::filesystem::path(input).extension() == ".bio") {
    std::istringstream in(content);
    tagged = predict(model, read_bio(in));
  } else {
    std::vector<std::u32string> lines;
    for (const auto& line : split(content, '\n')) {
      const auto text = utf8::decode(strip_cr(line));
      if (!text.empty()) lines.push_back(text);
    }
    tagged = predict(model, lines);
  }
  detail::emit(rec, output, detail::bio_text(tagged));
  rec.log("tag: " + std::to_string(tagged.size()) + " sentences");
}

inline void stage_kb_load(const PipelineConfig& c, RunRecord& rec) {
  c.validate(false, true);
  Diagnostics diag;
  const auto kb = parse_kb(rec.read(c.kb_file), &diag);
  for (const auto& w : diag.warnings) rec.log("warning: " + w);
  KnowledgeGraph g(GraphSchema::standard(c.schema));
  add_kb(g, kb);
  detail::emit(rec, detail::out_path(c, layout::kKbGraph), save_graph(g));
  rec.log("kb-load: " + std::to_string(kb.entries.size()) + " diseases, " + std::to_string(g.nodes().size()) +
          " nodes, " + std::to_string(g.triples().size()) + " triples");
}

/// Adds one patient per record to the KB graph, then aligns the EMR-only
/// nodes of the fusion label against the KB names.
inline void stage_align(const PipelineConfig& c, RunRecord& rec) {
  c.validate(true, false);
  auto g = load_graph(rec.read(detail::out_path(c, layout::kKbGraph)));
  std::optional<TaggerModel> model;
  if (c.graph_entities == GraphEntities::Predicted) model = read_model_input(c, rec);
  ValidationReport report;
  const auto docs = load_corpus_dir(c.corpus_dir, c.schema, report);
  for (const auto& doc : docs) {
    const auto base = (std::filesystem::path(c.corpus_dir) / doc.doc_id).string();
    rec.inputs.insert(base + ".txt");
    rec.inputs.insert(base + ".ann");
    PatientMeta meta{doc.doc_id, {}};
    if (std::filesystem::exists(base + ".meta")) meta = parse_patient_meta(rec.read(base + ".meta"), doc.doc_id);
    const auto entities =
        model ? predicted_entities(*model, doc, c.segment_max_len) : document_entities(doc);
    add_patient_record(g, meta.patient_id, meta.attributes, entities);
  }
  const auto index = build_label_index(g, c.fusion_label, c.tfidf);
  std::vector<Alignment> alignments;
  for (const auto& name : emr_only_names(g, c.fusion_label)) alignments.push_back(align(name, index, c.fusion_threshold));
  std::size_t matched = 0;
  for (const auto& a : alignments) matched += a.target ? 1 : 0;
  detail::emit(rec, detail::out_path(c, layout::kEmrGraph), save_graph(g));
  detail::emit(rec, detail::out_path(c, layout::kAlignments), alignment_report(alignments));
  rec.log("align: " + std::to_string(docs.size()) + " patients; " + std::to_string(matched) + " of " +
          std::to_string(alignments.size()) + " EMR-only " + c.fusion_label + " names matched");
}

/// Inverse of alignment_report, up to the printed similarity precision.
inline std::vector<Alignment> parse_alignment_report(std::string_view content, double threshold) {
  std::vector<Alignment> out;
  std::size_t line_no = 0;
  for (const auto& raw : split(content, '\n')) {
    ++line_no;
    const auto line = strip_cr(raw);
    if (line_no == 1 || line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 3) {
      throw Error(Errc::MalformedLine, "fusion", "alignment line " + std::to_string(line_no) + ": expected 3 fields");
    }
    Alignment a{fields[0], std::nullopt, 0.0, threshold};
    if (!fields[1].empty()) a.target = fields[1];
    try {
      a.similarity = std::stod(fields[2]);
    } catch (const std::exception&) {
      throw Error(Errc::MalformedLine, "fusion", "alignment line " + std::to_string(line_no) + ": bad similarity");
    }
    out.push_back(std::move(a));
  }
  return out;
}

inline FusionReport stage_fuse(const PipelineConfig& c, RunRecord& rec) {
  c.validate(false, false);
  auto g = load_graph(rec.read(detail::out_path(c, layout::kEmrGraph)));
  const auto alignments = parse_alignment_report(rec.read(detail::out_path(c, layout::kAlignments)), c.fusion_threshold);
  const auto report = fuse(g, alignments, c.fusion_label);
  g.check_integrity();
  nlohmann::ordered_json j;
  j["label"] = c.fusion_label;
  j["replaced"] = nlohmann::ordered_json::array();
  for (const auto& [from, to] : report.replaced) j["replaced"].push_back({{"source", from}, {"target", to}});
  j["unmatched"] = report.unmatched;
  j["triples_repointed"] = report.triples_repointed;
  j["nodes"] = g.nodes().size();
  j["triples"] = g.triples().size();
  detail::emit(rec, detail::out_path(c, layout::kFusedGraph), save_graph(g));
  detail::emit(rec, detail::out_path(c, layout::kFusionReport), j.dump(2) + "\n");
  rec.log("fuse: replaced " + std::to_string(report.replaced.size()) + ", unmatched " +
          std::to_string(report.unmatched.size()) + ", re-pointed " + std::to_string(report.triples_repointed) +
          " triples");
  return report;
}

inline void stage_export(const PipelineConfig& c, RunRecord& rec) {
  c.validate(false, false);
  const auto g = load_graph(rec.read(detail::out_path(c, layout::kFusedGraph)));
  std::ostringstream cypher, nodes, rels;
  const auto statements = export_cypher(g, cypher);
  export_nodes_csv(g, nodes);
  export_rels_csv(g, rels);
  detail::emit(rec, detail::out_path(c, layout::kCypher), cypher.str());
  detail::emit(rec, detail::out_path(c, layout::kNodesCsv), nodes.str());
  detail::emit(rec, detail::out_path(c, layout::kRelsCsv), rels.str());
  rec.log("export: " + std::to_string(statements) + " Cypher statements");
}

/// Every stage in order.
inline void run_pipeline(const PipelineConfig& c, RunRecord& rec) {
  c.validate(true, true);
  stage_convert(c, rec);
  stage_split(c, rec);
  stage_augment(c, rec, 1);
  stage_train(c, rec);
  stage_evaluate(c, rec);
  stage_kb_load(c, rec);
  stage_align(c, rec);
  stage_fuse(c, rec);
  stage_export(c, rec);
}

/// Tails reached from (label, name) by following `relations` in order.
inline std::vector<Node> run_query(const KnowledgeGraph& g, const std::string& label, const std::string& name,
                                   const std::vector<std::string>& relations) {
  if (relations.empty()) throw Error(Errc::InvalidArgument, "cli", "query needs at least one relation");
  if (relations.size() == 1) return g.pattern_query(label, name, relations.front());
  return g.chain_query(label, name, relations);
}

// ---------------------------------------------------------------------------
// Manifest

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Everything needed to rerun: canonical config, its hash, the seed, digests
/// of every file read and written. `created_at` is the only field that
/// differs between identical runs. Files inside the output directory are
/// listed relative to it as `$OUT/...`.
inline nlohmann::ordered_json build_manifest(const PipelineConfig& c, const std::string& command,
                                             const RunRecord& rec, const std::string& config_file) {
  const auto config = c.to_json();
  nlohmann::ordered_json m;
  m["format"] = "emrkg-manifest";
  m["schema_version"] = 1;
  m["tool"] = "emrkg";
  m["tool_version"] = std::string(kToolVersion);
  m["command"] = command;
  m["seed"] = c.base_seed();
  m["seeds"] = {{"split", derive_seed(c.base_seed(), "split")}, {"train", derive_seed(c.base_seed(), "train")}};
  m["config_file"] = config_file;
  m["config_sha256"] = sha256_hex(config.dump());
  m["config"] = config;
  m["versions"] = {{"model_format", kModelVersion},
                   {"graph_schema", 1},
                   {"kb_schema", 1},
                   {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                   {"compiler", __VERSION__}};
  const auto digests = [&](const std::set<std::string>& paths) {
    std::map<std::string, std::string> sorted;
    for (const auto& p : paths) sorted[detail::display_path(c, p)] = sha256_file(p);
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& [p, h] : sorted) arr.push_back({{"path", p}, {"sha256", h}});
    return arr;
  };
  std::set<std::string> inputs;
  for (const auto& p : rec.inputs) {
    if (!rec.outputs.count(p)) inputs.insert(p);
  }
  m["inputs"] = digests(inputs);
  m["outputs"] = digests(rec.outputs);
  m["created_at"] = utc_timestamp();
  return m;
}

inline void write_manifest(const PipelineConfig& c, const std::string& command, const RunRecord& rec,
                           const std::string& config_file) {
  const auto path = detail::out_path(c, layout::kManifest);
  std::filesystem::create_directories(c.output_dir);
  write_file(path, build_manifest(c, command, rec, config_file).dump(2) + "\n");
}

}  // namespace emrkg
