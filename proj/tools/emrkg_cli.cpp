// emrkg: command-line front end. One subcommand per pipeline stage plus
// `pipeline` (all stages) and `query`.
//
// Exit codes: 0 success, 1 usage, 2 config, 3 data error, 4 internal.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "emrkg/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kInternal = 4 };

// Flags shared by every stage subcommand. Flags win over the config file.
struct Overrides {
  std::string config;
  std::uint64_t seed = 0;
  std::string corpus, kb, out, model, graph_entities;
  std::size_t epochs = 0;
  double threshold = 0.0;
  bool derm = false;
  bool no_derm = false;
  bool quiet = false;
};

void add_overrides(CLI::App* sub, Overrides& o) {
  sub->add_option("-c,--config", o.config, "Pipeline config file (JSON)");
  sub->add_option("--seed", o.seed, "Base seed for every random choice");
  sub->add_option("--corpus", o.corpus, "Directory of .txt/.ann/.meta records");
  sub->add_option("--kb", o.kb, "Knowledge base file (JSONL)");
  sub->add_option("-o,--out", o.out, "Output directory");
  sub->add_option("--model", o.model, "Model file (default <out>/model.bin)");
  sub->add_option("--epochs", o.epochs, "Training epochs");
  sub->add_option("--threshold", o.threshold, "Alignment similarity threshold");
  sub->add_option("--graph-entities", o.graph_entities, "Patient entities for the graph: gold or predicted");
  auto* derm = sub->add_flag("--derm", o.derm, "Enable entity replacement and masking");
  sub->add_flag("--no-derm", o.no_derm, "Disable entity replacement and masking")->excludes(derm);
  sub->add_flag("-q,--quiet", o.quiet, "Only log errors");
}

emrkg::PipelineConfig resolve_config(const CLI::App& sub, const Overrides& o) {
  const auto given = [&](const char* flag) { return sub.get_option(flag)->count() > 0; };
  using emrkg::detail::resolve;
  emrkg::PipelineConfig c;
  if (!o.config.empty()) c = emrkg::load_pipeline_config(o.config);
  const auto cwd = std::filesystem::current_path();
  if (given("--seed")) c.seed = o.seed;
  if (!o.corpus.empty()) c.corpus_dir = resolve(cwd, o.corpus);
  if (!o.kb.empty()) c.kb_file = resolve(cwd, o.kb);
  if (!o.out.empty()) c.output_dir = resolve(cwd, o.out);
  if (!o.model.empty()) c.model_file = resolve(cwd, o.model);
  if (given("--epochs")) c.train.epochs = o.epochs;
  if (given("--threshold")) c.fusion_threshold = o.threshold;
  if (!o.graph_entities.empty()) c.graph_entities = emrkg::parse_graph_entities(o.graph_entities);
  if (o.derm) c.train.derm_enabled = true;
  if (o.no_derm) c.train.derm_enabled = false;
  return c;
}

std::string config_label(const Overrides& o) {
  return o.config.empty() ? std::string() : std::filesystem::absolute(o.config).lexically_normal().string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Build a medical knowledge graph from annotated EMRs and a disease knowledge base."};
  app.name("emrkg");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(emrkg::kToolVersion));

  Overrides o;
  std::size_t augment_epoch = 1;
  std::string tag_input, tag_output;
  std::string q_graph, q_label = "Disease", q_name, q_output;
  std::vector<std::string> q_relations;

  struct Stage {
    const char* name;
    const char* help;
  };
  const std::vector<Stage> stages = {
      {"convert", "Standoff annotations to BIO sentences"},
      {"split", "8:1:1 train/validation/test split and entity dictionary"},
      {"augment", "Write one epoch of augmented training data"},
      {"train", "Train the BiLSTM-CRF tagger"},
      {"tag", "Tag sentences with a trained model"},
      {"evaluate", "Score the model on the test split"},
      {"kb-load", "Load the knowledge base into a graph"},
      {"align", "Add patient records and align their entities to KB names"},
      {"fuse", "Merge aligned nodes into their KB counterparts"},
      {"export", "Write Cypher and CSV exports of the fused graph"},
      {"pipeline", "Run every stage in order"},
  };
  for (const auto& s : stages) {
    auto* sub = app.add_subcommand(s.name, s.help);
    add_overrides(sub, o);
    if (std::string_view(s.name) == "augment") sub->add_option("--epoch", augment_epoch, "Epoch to reproduce");
    if (std::string_view(s.name) == "tag") {
      sub->add_option("-i,--input", tag_input, "Input: .bio file, or plain text with one sentence per line")
          ->required();
      sub->add_option("--output", tag_output, "Output BIO file (default <out>/tag/<input stem>.bio)");
    }
  }

  auto* query = app.add_subcommand("query", "Follow relations from a node of a saved graph");
  query->add_option("-c,--config", o.config, "Pipeline config; the graph defaults to its fused graph");
  query->add_option("-o,--out", o.out, "Output directory holding graph/fused_graph.json");
  query->add_option("-g,--graph", q_graph, "Graph file (JSON)");
  query->add_option("--label", q_label, "Label of the start node")->capture_default_str();
  query->add_option("--name", q_name, "Name of the start node")->required();
  query->add_option("--relation", q_relations, "Relation to follow; repeat to chain")->required();
  query->add_option("--output", q_output, "Also write results to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
      std::cerr << "emrkg: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
      return kUsage;
    }
    const int code = app.exit(e);
    if (code == 0) return kOk;
    if (dynamic_cast<const CLI::ExtrasError*>(&e) != nullptr || dynamic_cast<const CLI::RequiredError*>(&e) != nullptr) {
      std::cerr << '\n' << app.help();
    }
    return kUsage;
  }

  auto* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  try {
    if (command == "query") {
      std::string path = q_graph;
      if (path.empty()) {
        std::string out = o.out;
        if (out.empty() && !o.config.empty()) out = emrkg::load_pipeline_config(o.config).output_dir;
        if (out.empty()) {
          std::cerr << "emrkg: query needs --graph, --out or --config\n";
          return kUsage;
        }
        path = (std::filesystem::path(out) / emrkg::layout::kFusedGraph).string();
      }
      const auto g = emrkg::load_graph_file(path);
      std::string text;
      for (const auto& n : emrkg::run_query(g, q_label, q_name, q_relations)) text += n.name + "\n";
      std::cout << text;
      if (!q_output.empty()) emrkg::write_file(q_output, text);
      return kOk;
    }

    const auto config = resolve_config(*sub, o);
    emrkg::RunRecord rec;
    if (!o.quiet) rec.log = [](const std::string& m) { std::cerr << "emrkg: " << m << '\n'; };
    if (command == "convert") emrkg::stage_convert(config, rec);
    else if (command == "split") emrkg::stage_split(config, rec);
    else if (command == "augment") emrkg::stage_augment(config, rec, augment_epoch);
    else if (command == "train") emrkg::stage_train(config, rec);
    else if (command == "evaluate") emrkg::stage_evaluate(config, rec);
    else if (command == "kb-load") emrkg::stage_kb_load(config, rec);
    else if (command == "align") emrkg::stage_align(config, rec);
    else if (command == "fuse") emrkg::stage_fuse(config, rec);
    else if (command == "export") emrkg::stage_export(config, rec);
    else if (command == "pipeline") emrkg::run_pipeline(config, rec);
    else if (command == "tag") {
      config.validate(false, false);
      const auto input = emrkg::detail::resolve(std::filesystem::current_path(), tag_input);
      const auto output = tag_output.empty()
                              ? (std::filesystem::path(config.output_dir) / "tag" /
                                 (std::filesystem::path(input).stem().string() + ".bio")).string()
                              : emrkg::detail::resolve(std::filesystem::current_path(), tag_output);
      emrkg::stage_tag(config, rec, input, output);
    }
    emrkg::write_manifest(config, command, rec, config_label(o));
    rec.log("wrote " + std::to_string(rec.outputs.size()) + " files and the manifest under " + config.output_dir);
    return kOk;
  } catch (const emrkg::Error& e) {
    std::cerr << "emrkg: error: " << e.what() << '\n';
    return e.code() == emrkg::Errc::ConfigError ? kConfig : kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "emrkg: error: io: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "emrkg: internal error: " << e.what() << '\n';
    return kInternal;
  }
}
