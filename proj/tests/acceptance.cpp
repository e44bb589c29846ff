// Acceptance suite: one PASS/FAIL line per criterion, each with its runtime
// limit. Pass criterion numbers as arguments to run a subset.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "crf_oracle.hpp"
#include "emrkg/corpus.hpp"
#include "emrkg/crf.hpp"
#include "emrkg/derm.hpp"
#include "emrkg/fusion.hpp"
#include "emrkg/graph.hpp"
#include "emrkg/kb.hpp"
#include "emrkg/metrics.hpp"
#include "emrkg/tagger.hpp"
#include "fixture_graph.hpp"
#include "test_support.hpp"
#include "tfidf_oracle.hpp"

namespace {

using namespace emrkg;
namespace fs = std::filesystem;

/// Collects failed expectations; keeps the first few messages.
struct Checks {
  std::size_t total = 0;
  std::size_t failed = 0;
  std::vector<std::string> messages;

  bool expect(bool ok, const std::string& what) {
    ++total;
    if (!ok) {
      ++failed;
      if (messages.size() < 4) messages.push_back(what);
    }
    return ok;
  }
};

struct Criterion {
  int id;
  std::string title;
  double limit_seconds;
  std::function<std::string(Checks&)> run;  // returns a short summary
};

std::u32string U(std::string_view s) { return utf8::decode(s); }

std::vector<BioSentence> read_fixture_bio(const std::string& rel) { return read_bio_file(testing::fixture(rel)); }

// ---------------------------------------------------------------------------
// 2. Standoff and BIO

std::string criterion_standoff(Checks& c) {
  const EntitySchema schema;
  Rng rng(2);
  std::size_t spans = 0;
  for (int iter = 0; iter < 1000; ++iter) {
    const auto rd = testing::random_document(rng, schema);
    const auto doc = parse_ann(rd.ann, rd.txt, schema);
    c.expect(doc.spans.size() == rd.spans.size(), "span count, doc " + std::to_string(iter));
    std::multiset<std::tuple<std::string, std::size_t, std::size_t>> want, got;
    for (const auto& s : rd.spans) want.insert({s.label, s.start, s.end});
    for (const auto& seg : segment(doc, 50)) {
      const auto bio = to_bio(seg);
      c.expect(is_well_formed(bio), "well-formed BIO, doc " + std::to_string(iter));
      const auto back = from_bio(bio);
      c.expect(back == seg.spans, "from_bio(to_bio(x)) == x, doc " + std::to_string(iter));
      for (const auto& s : back) got.insert({s.type, seg.offset + s.start, seg.offset + s.end});
    }
    c.expect(got == want, "document spans survive segment + BIO, doc " + std::to_string(iter));
    spans += want.size();
  }

  std::string text;
  for (int i = 0; i < 280; ++i) text += "文";
  text += "右侧肩背部隐痛不适两周。";
  const std::string surface = "右侧肩背部隐痛不适两周";
  const auto ok = parse_ann("T1\tdisease 280 291\t" + surface + "\n", text, schema);
  c.expect(ok.spans.size() == 1 && ok.spans[0].label == "Disease" && ok.spans[0].start == 280 &&
               ok.spans[0].end == 291 && ok.spans[0].surface == U(surface),
           "brat example line accepted");

  const std::vector<std::string> malformed = {
      "T1\tdisease 280 291",                    // no surface field
      "T1\tdisease 280\t" + surface,            // one offset
      "T1\tdisease 280 291 300\t" + surface,    // three offsets
      "T1\tdisease x280 291\t" + surface,       // non-numeric
      "T1\tdisease -280 291\t" + surface,       // negative
      "T1\tdisease 291 280\t" + surface,        // inverted
      "T1\tdisease 280 280\t",                  // empty
      "T1\tdisease 280 285;286 291\t" + surface,  // discontinuous
      "T1\tdisease 280 292\t" + surface,        // surface mismatch
      "T1\tdisease 280 400\t" + surface,        // beyond the text
      "T1\tdiagnosis 280 291\t" + surface,      // unknown label
      "X1\tdisease 280 291\t" + surface,        // unknown record kind
      "T\tdisease 280 291\t" + surface,         // id without number
      "T1 disease 280 291 " + surface,          // spaces instead of tabs
      "T1\tdisease 280 291\t" + surface + "\nT1\tdisease 0 1\t文",  // duplicate id
  };
  std::size_t rejected = 0;
  for (const auto& m : malformed) {
    bool threw = false;
    try {
      parse_ann(m + "\n", text, schema);
    } catch (const Error&) {
      threw = true;
    }
    rejected += threw;
    c.expect(threw, "malformed variant rejected: " + m.substr(0, 40));
  }
  return "1000 documents, " + std::to_string(spans) + " spans; " + std::to_string(rejected) + "/" +
         std::to_string(malformed.size()) + " malformed variants rejected";
}

// ---------------------------------------------------------------------------
// 3. DERM action distribution and mask count

std::string criterion_derm(Checks& c) {
  const auto sentences = read_fixture_bio("synth50.bio");
  EntityDictionary dict;
  for (const auto& s : sentences) {
    c.expect(!from_bio(s).empty(), "fixture sentence carries an entity");
    for (const auto& sp : from_bio(s)) dict.add(sp.type, s.chars.substr(sp.start, sp.length()));
  }
  std::vector<BioSentence> batch;
  while (batch.size() < 10000) batch.push_back(sentences[batch.size() % sentences.size()]);
  const DermConfig config;
  double counts[3] = {0, 0, 0};
  for (const auto& o : augment_epoch(batch, dict, config, 3)) counts[static_cast<int>(o.action)] += 1;
  const double replace = 100.0 * counts[0] / 10000.0;
  const double mask = 100.0 * counts[1] / 10000.0;
  const double noop = 100.0 * counts[2] / 10000.0;
  c.expect(std::abs(replace - 30.0) <= 1.5, "replace frequency " + std::to_string(replace));
  c.expect(std::abs(mask - 30.0) <= 1.5, "mask frequency " + std::to_string(mask));
  c.expect(std::abs(noop - 40.0) <= 1.5, "noop frequency " + std::to_string(noop));

  for (std::size_t len = 1; len <= 5; ++len) c.expect(mask_count(len, config) == 1, "mask_count(" + std::to_string(len) + ")");
  for (std::size_t len = 6; len <= 200; ++len) {
    const auto want = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(len) + 0.5)));
    c.expect(mask_count(len, config) == want, "mask_count(" + std::to_string(len) + ")");
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "replace %.2f%%, mask %.2f%%, noop %.2f%% over 10000", replace, mask, noop);
  return buf;
}

// ---------------------------------------------------------------------------
// 4. CRF against path enumeration

std::string criterion_crf(Checks& c) {
  Rng rng(4);
  double worst = 0.0;
  for (int iter = 0; iter < 200; ++iter) {
    const auto n = 1 + rng.index(6);
    const auto k = 1 + rng.index(4);
    const auto e = testing::random_matrix(rng, n, k, 3.0);
    const auto tr = testing::random_matrix(rng, k + 2, k + 2, 2.0);
    const auto ref = testing::enumerate_paths(e, tr);
    std::vector<int> gold(n);
    for (auto& g : gold) g = static_cast<int>(rng.index(k));
    const double z = crf_log_partition(e, tr);
    const double nll = crf_nll(e, tr, gold);
    const double ref_nll = ref.log_partition - testing::enumerate_path_score(e, tr, gold);
    worst = std::max({worst, std::abs(z - ref.log_partition), std::abs(nll - ref_nll)});
    c.expect(std::abs(z - ref.log_partition) <= 1e-10, "log-partition, instance " + std::to_string(iter));
    c.expect(std::abs(nll - ref_nll) <= 1e-10, "NLL, instance " + std::to_string(iter));
    c.expect(crf_viterbi(e, tr) == ref.argmax, "Viterbi argmax, instance " + std::to_string(iter));
  }
  char buf[80];
  std::snprintf(buf, sizeof buf, "200 instances, max abs error %.2e", worst);
  return buf;
}

// ---------------------------------------------------------------------------
// 5. Gradient check

std::string criterion_gradients(Checks& c) {
  const std::vector<BioSentence> data = {
      {U("肝癌伴腹痛"), {"B-Disease", "I-Disease", "O", "B-Symptom", "I-Symptom"}},
      {U("行CT检查"), {"O", "B-Check", "I-Check", "O", "O"}},
      {U("胃炎"), {"B-Disease", "I-Disease"}},
  };
  auto m = TaggerModel::init(Vocabulary::build(data), EntitySchema{}, 8, 8, 5);
  Rng rng(6);
  for (auto& v : m.params.transitions.data()) v = rng.uniform(-0.5, 0.5);
  for (auto& v : m.params.proj_b.data()) v = rng.uniform(-0.5, 0.5);
  const auto total = [&] {
    double s = 0.0;
    for (const auto& x : data) s += sentence_loss(m, x);
    return s;
  };
  auto grads = m.params.zeros_like();
  for (const auto& s : data) sentence_loss(m, s, &grads);

  const auto mask = m.tags.constraint_mask();
  std::vector<std::pair<std::string, Matrix*>> groups;
  m.params.for_each([&](std::string_view name, Matrix& mat) { groups.emplace_back(std::string(name), &mat); });
  std::vector<const Matrix*> analytic;
  grads.for_each([&](std::string_view, const Matrix& mat) { analytic.push_back(&mat); });
  const double eps = 1e-4;
  double worst = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& w = groups[g].second->data();
    const auto& a = analytic[g]->data();
    double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (groups[g].first == "transitions" && mask.data()[i] != 0.0) continue;  // fixed at -inf
      const double keep = w[i];
      w[i] = keep + eps;
      const double up = total();
      w[i] = keep - eps;
      const double down = total();
      w[i] = keep;
      const double num = (up - down) / (2 * eps);
      diff_sq += (a[i] - num) * (a[i] - num);
      a_sq += a[i] * a[i];
      n_sq += num * num;
    }
    const double denom = std::max(std::sqrt(a_sq), std::sqrt(n_sq));
    const double rel = denom > 0.0 ? std::sqrt(diff_sq) / denom : 0.0;
    worst = std::max(worst, rel);
    c.expect(denom > 0.0, groups[g].first + " has a non-zero gradient");
    c.expect(rel < 1e-4, groups[g].first + " relative error " + std::to_string(rel));
  }
  char buf[80];
  std::snprintf(buf, sizeof buf, "%zu groups, worst relative error %.2e", groups.size(), worst);
  return buf;
}

// ---------------------------------------------------------------------------
// 6. Memorization

std::string criterion_memorize(Checks& c) {
  DatasetSplit split;
  split.train = read_fixture_bio("synth50.bio");  // empty validation: the train set is scored
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 5;
  cfg.hidden = 32;
  cfg.d_emb = 16;
  cfg.optimizer = OptimizerKind::Adam;
  cfg.learning_rate = 1e-2;
  cfg.seed = 6;
  std::size_t first = 0;
  const auto result = train(split, EntityDictionary{}, cfg, EntitySchema{}, [&](const EpochRecord& r) {
    if (first == 0 && r.f1 >= 0.99) first = r.epoch;
  });
  const double f1 = evaluate(result.model, split.train).f1;
  c.expect(f1 >= 0.99, "train F1 " + std::to_string(f1));
  c.expect(first != 0, "F1 >= 0.99 reached within 200 epochs");
  char buf[96];
  std::snprintf(buf, sizeof buf, "train F1 %.4f, first reached 0.99 at epoch %zu", f1, first);
  return buf;
}

// ---------------------------------------------------------------------------
// 7. DERM benefit on held-out surfaces

std::string criterion_derm_benefit(Checks& c) {
  DatasetSplit split;
  split.train = read_fixture_bio("noisy/train.bio");
  split.validation = read_fixture_bio("noisy/val.bio");
  std::ifstream dict_in(testing::fixture("noisy/dictionary.tsv"));
  const auto dict = read_dictionary(dict_in, EntitySchema{});
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 8;
  cfg.hidden = 32;
  cfg.d_emb = 16;
  cfg.optimizer = OptimizerKind::Adam;
  cfg.learning_rate = 1e-2;
  std::size_t wins = 0;
  double sum = 0.0;
  double arm_sum[2] = {0.0, 0.0};
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    cfg.seed = seed;
    double f1[2];
    for (int arm = 0; arm < 2; ++arm) {
      cfg.derm_enabled = arm == 1;
      // validation F1 after the last epoch; no selection on the reported set
      f1[arm] = train(split, dict, cfg).log.back().f1;
    }
    arm_sum[0] += f1[0];
    arm_sum[1] += f1[1];
    wins += f1[1] >= f1[0];
    sum += f1[1] - f1[0];
    char buf[40];
    std::snprintf(buf, sizeof buf, "%s%+.3f", per_seed.empty() ? "" : " ", f1[1] - f1[0]);
    per_seed += buf;
  }
  c.expect(wins >= 7, "DERM >= no-DERM in " + std::to_string(wins) + " of 10 seeds");
  c.expect(sum / 10.0 > 0.0, "mean improvement " + std::to_string(sum / 10.0));
  char buf[160];
  std::snprintf(buf, sizeof buf, "DERM >= baseline in %zu/10 seeds, mean F1 %.4f vs %.4f (gain %+.4f); gains:", wins,
                arm_sum[1] / 10.0, arm_sum[0] / 10.0, sum / 10.0);
  return std::string(buf) + " " + per_seed;
}

// ---------------------------------------------------------------------------
// 8. TF-IDF

std::string criterion_tfidf(Checks& c) {
  Diagnostics diag;
  const auto kb = load_kb(testing::fixture("kb_small.jsonl"), &diag);
  const auto& catalog = kb.catalog("Disease");
  const std::vector<std::string> names(catalog.begin(), catalog.end());
  const auto index = build_index(names);
  const testing::Oracle oracle(names);

  std::set<std::string> queries(names.begin(), names.end());
  ValidationReport report;
  for (const auto& doc : load_corpus_dir(testing::fixture("corpus_small"), EntitySchema{}, report)) {
    for (const auto& s : doc.spans) {
      if (s.label == "Disease") queries.insert(utf8::encode(s.surface));
    }
  }
  double worst = 0.0;
  for (const auto& q : queries) {
    for (std::size_t r = 0; r < names.size(); ++r) {
      const double got = similarity(index, q, r);
      c.expect(index.names[r] == oracle.names[r], "row order");
      const double want = oracle.cosine(q, r);
      worst = std::max(worst, std::abs(got - want));
      c.expect(std::abs(got - want) <= 1e-12, "similarity(" + q + ", " + names[r] + ")");
    }
    const auto a = align(q, index, 0.0);
    const auto [best_name, best_sim] = oracle.best(q);
    c.expect(a.target == best_name, "align(" + q + ") is the exhaustive argmax");
    c.expect(std::abs(a.similarity - best_sim) <= 1e-12, "align(" + q + ") similarity");
  }
  // per-term weights against the formulas
  for (std::size_t r = 0; r < names.size(); ++r) {
    const auto terms = name_terms(names[r]);
    for (const auto& t : terms) {
      const double tf = term_frequency(t, terms);
      const double want_tf = static_cast<double>(std::count(terms.begin(), terms.end(), t)) / terms.size();
      c.expect(std::abs(tf - want_tf) <= 1e-12, "term frequency");
      const double idf = index.idf[index.vocabulary.at(t)];
      c.expect(std::abs(idf - oracle.idf(t)) <= 1e-12, "inverse document frequency");
    }
  }
  const std::vector<std::vector<std::u32string>> shared = {{U"肝", U"癌"}, {U"肝", U"炎"}, {U"肝"}};
  c.expect(inverse_document_frequency(U"肝", shared) == 0.0, "IDF of a term in every document is 0");
  const auto liver = build_index({"肝癌", "肝硬化", "肝性脑病"});
  c.expect(!liver.uniform_fallback && liver.idf[liver.vocabulary.at(U"肝")] == 0.0, "index IDF of a shared term is 0");

  // threshold boundary: >= accepts
  const auto near = align("原发肝细胞癌", index, 0.8);
  c.expect(near.target == std::optional<std::string>("原发性肝细胞癌") && near.similarity >= 0.8,
           "原发肝细胞癌 aligns at 0.8");
  const double s = near.similarity;
  c.expect(align("原发肝细胞癌", index, s).target.has_value(), "threshold equal to similarity accepts");
  c.expect(!align("原发肝细胞癌", index, std::nextafter(s, 2.0)).target.has_value(),
           "threshold just above similarity rejects");
  const auto far = align("乙肝", index, 0.8);
  c.expect(!far.target && far.similarity < 0.8, "乙肝 stays unmatched at 0.8");
  const auto exact = align("肝癌", index, 1.0);
  c.expect(exact.target == std::optional<std::string>("肝癌") && exact.similarity == 1.0, "exact name accepts at 1.0");
  char buf[96];
  std::snprintf(buf, sizeof buf, "%zu queries x %zu names, max deviation %.2e", queries.size(), names.size(), worst);
  return buf;
}

// ---------------------------------------------------------------------------
// 9. Fusion

std::size_t patient_triples(const KnowledgeGraph& g) {
  std::size_t n = 0;
  for (const auto& t : g.triples()) n += g.find(t.head)->label == "Patient";
  return n;
}

std::string criterion_fusion(Checks& c) {
  auto g = testing::fixture_graph();
  const auto before = patient_triples(g);
  const auto index = build_label_index(g);
  std::vector<Alignment> alignments;
  for (const auto& n : emr_only_names(g)) alignments.push_back(align(n, index, 0.8));
  const auto report = fuse(g, alignments);
  std::size_t matched = 0;
  for (const auto& a : alignments) {
    if (a.target) {
      ++matched;
      c.expect(!g.contains(KnowledgeGraph::node_id("Disease", a.source)), a.source + " replaced");
      const auto* t = g.find(KnowledgeGraph::node_id("Disease", *a.target));
      c.expect(t != nullptr && t->attributes.count("aliases") && t->attributes.at("aliases").find(a.source) != std::string::npos,
               *a.target + " records alias " + a.source);
    } else {
      c.expect(g.contains(KnowledgeGraph::node_id("Disease", a.source)), a.source + " retained");
    }
  }
  c.expect(matched == report.replaced.size() && matched >= 1, "every matched node replaced");
  c.expect(patient_triples(g) == before, "patient-incident triple count preserved");
  std::set<std::string> unmatched(report.unmatched.begin(), report.unmatched.end());
  c.expect(unmatched == std::set<std::string>{"乙肝", "胆结石", "脂肪肝", "高血压"}, "unmatched set");
  g.check_integrity();
  auto again = g;
  fuse(again, alignments);
  c.expect(again == g, "fuse is idempotent");
  return std::to_string(matched) + " replaced, " + std::to_string(unmatched.size()) + " retained, " +
         std::to_string(before) + " patient triples preserved";
}

// ---------------------------------------------------------------------------
// 10. Queries

std::vector<std::string> names_of(const std::vector<Node>& nodes) {
  std::vector<std::string> out;
  for (const auto& n : nodes) out.push_back(n.name);
  return out;
}

std::string criterion_queries(Checks& c) {
  const auto g = testing::fixture_graph();
  c.expect(names_of(g.pattern_query("Disease", "肝癌", "RecommendedFood")) == std::vector<std::string>{"鲫鱼", "鸡蛋"},
           "recommended food for 肝癌");
  c.expect(names_of(g.chain_query("Patient", "2490513_2", {"HasDisease", "Complication"})) ==
               std::vector<std::string>{"上消化道出血", "肝性脑病", "腹水"},
           "patient 2490513_2 disease complications");

  GraphSchema schema;
  for (const auto* l : {"A", "B", "C"}) schema.add_label(l);
  for (const auto* r : {"r1", "r2", "r3"}) {
    for (const auto* h : {"A", "B", "C"}) {
      for (const auto* t : {"A", "B", "C"}) schema.allow(r, h, t);
    }
  }
  Rng rng(10);
  std::size_t queries = 0;
  for (int iter = 0; iter < 1000; ++iter) {
    KnowledgeGraph rg(schema);
    std::vector<std::string> ids;
    const auto n = 1 + rng.index(12);
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back(rg.upsert_node(std::string(1, static_cast<char>('A' + rng.index(3))), "n" + std::to_string(rng.index(8))));
    }
    const auto m = rng.index(30);
    for (std::size_t i = 0; i < m; ++i) {
      rg.add_triple(ids[rng.index(ids.size())], "r" + std::to_string(1 + rng.index(3)), ids[rng.index(ids.size())]);
    }
    for (const auto* l : {"A", "B", "C"}) {
      for (int k = 0; k < 8; ++k) {
        const auto name = "n" + std::to_string(k);
        for (const auto* r : {"r1", "r2", "r3"}) {
          std::vector<std::pair<std::string, std::string>> scan;
          for (const auto& t : rg.triples()) {
            if (t.head == std::string(l) + ":" + name && t.relation == r) scan.emplace_back(rg.find(t.tail)->name, t.tail);
          }
          std::sort(scan.begin(), scan.end());
          std::vector<std::pair<std::string, std::string>> got;
          for (const auto& node : rg.pattern_query(l, name, r)) got.emplace_back(node.name, node.id);
          c.expect(got == scan, "pattern_query equals scan, graph " + std::to_string(iter));
          ++queries;
        }
      }
    }
  }
  return "fixture answers exact; " + std::to_string(queries) + " random queries match the scan";
}

// ---------------------------------------------------------------------------
// 11. Metrics

std::string criterion_metrics(Checks& c) {
  const auto s0 = score({0, 0, 0});
  c.expect(s0.precision == 0.0 && s0.recall == 0.0 && s0.f1 == 0.0 && s0.undefined, "0/0 everywhere gives 0, flagged");
  const auto s1 = score({0, 3, 0});
  c.expect(s1.precision == 0.0 && s1.recall == 0.0 && s1.f1 == 0.0, "no gold, only false positives");
  const auto s2 = score({0, 0, 4});
  c.expect(s2.precision == 0.0 && s2.recall == 0.0 && s2.f1 == 0.0, "no predictions");
  const auto s3 = score({3, 1, 0});
  c.expect(s3.precision == 0.75 && s3.recall == 1.0 && std::abs(s3.f1 - 6.0 / 7.0) < 1e-15, "3/1/0 arithmetic");

  Rng rng(11);
  for (int i = 0; i < 10000; ++i) {
    const MatchCounts m{rng.index(50), rng.index(50), rng.index(50)};
    const auto s = score(m);
    const auto tp = static_cast<double>(m.tp);
    if (m.tp == 0) {
      c.expect(s.f1 == 0.0, "F1 is 0 without true positives");
      continue;
    }
    const double p = tp / (tp + static_cast<double>(m.fp));
    const double r = tp / (tp + static_cast<double>(m.fn));
    c.expect(std::abs(s.precision - p) < 1e-15 && std::abs(s.recall - r) < 1e-15, "precision and recall");
    c.expect(std::abs(s.f1 - 2 * p * r / (p + r)) < 1e-12, "F1 is the harmonic mean");
    c.expect(std::min(p, r) - 1e-12 <= s.f1 && s.f1 <= std::max(p, r) + 1e-12, "min(P,R) <= F1 <= max(P,R)");
    c.expect(s.f1 <= (p + r) / 2 + 1e-12, "F1 <= arithmetic mean");
    c.expect(s.f1 >= 0.0 && s.f1 <= 1.0, "F1 in [0, 1]");
  }
  return "degenerate cases plus 10000 random count triples";
}

// ---------------------------------------------------------------------------
// 12. End to end through the CLI binary

int run_cli(const std::string& args) {
  const std::string cmd = std::string(EMRKG_CLI) + " " + args;
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::map<std::string, std::string> output_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    auto content = read_file(e.path().string());
    if (e.path().filename() == "manifest.json") {
      std::string kept;
      for (const auto& line : split(content, '\n')) {
        if (line.find("\"created_at\"") == std::string::npos) kept += line + "\n";
      }
      content = kept;
    }
    out[fs::relative(e.path(), root).generic_string()] = content;
  }
  return out;
}

std::string criterion_end_to_end(Checks& c) {
  const auto base = fs::temp_directory_path() / "emrkg_acceptance";
  fs::remove_all(base);
  const auto cfg = testing::fixture("pipeline.json");
  const int a = run_cli("pipeline -q -c " + cfg + " -o " + (base / "run1").string());
  const int b = run_cli("pipeline -q -c " + cfg + " -o " + (base / "run2").string());
  c.expect(a == 0, "first run exit " + std::to_string(a));
  c.expect(b == 0, "second run exit " + std::to_string(b));
  if (a != 0 || b != 0) return "pipeline failed";
  const auto t1 = output_tree(base / "run1");
  const auto t2 = output_tree(base / "run2");
  for (const char* f : {"bio/train.bio", "model.bin", "eval/report.txt", "graph/fused_graph.json", "export/graph.cypher",
                        "export/nodes.csv", "export/rels.csv", "manifest.json"}) {
    c.expect(t1.count(f) == 1, std::string("output ") + f);
  }
  std::size_t differing = 0;
  for (const auto& [path, content] : t1) {
    const auto it = t2.find(path);
    const bool same = it != t2.end() && it->second == content;
    differing += !same;
    c.expect(same, "identical " + path);
  }
  c.expect(t1.size() == t2.size(), "same file set");
  return std::to_string(t1.size()) + " files compared, " + std::to_string(differing) + " differ";
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {2, "standoff/BIO round trip and parse_ann validation", 10, criterion_standoff},
      {3, "DERM action distribution and mask count", 30, criterion_derm},
      {4, "CRF equals exhaustive enumeration", 60, criterion_crf},
      {5, "gradient check against finite differences", 120, criterion_gradients},
      {6, "memorization of the 50-sentence corpus", 600, criterion_memorize},
      {7, "DERM benefit on held-out surfaces", 1800, criterion_derm_benefit},
      {8, "TF-IDF weights, argmax and threshold", 10, criterion_tfidf},
      {9, "fusion on the fixture graph", 5, criterion_fusion},
      {10, "query semantics", 30, criterion_queries},
      {11, "precision, recall and F1", 5, criterion_metrics},
      {12, "end-to-end pipeline determinism", 900, criterion_end_to_end},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& crit : criteria) {
    if (!only.empty() && !only.count(crit.id)) continue;
    Checks checks;
    std::string summary;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      summary = crit.run(checks);
    } catch (const std::exception& e) {
      checks.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= crit.limit_seconds;
    const bool pass = checks.failed == 0 && in_time;
    failures += !pass;
    std::printf("%s criterion %d: %s [%.2f s, limit %.0f s] %s\n", pass ? "PASS" : "FAIL", crit.id, crit.title.c_str(),
                secs, crit.limit_seconds, summary.c_str());
    if (!in_time) std::printf("    exceeded the runtime limit\n");
    for (const auto& m : checks.messages) std::printf("    failed: %s\n", m.c_str());
    if (checks.failed > checks.messages.size()) {
      std::printf("    ... %zu failed checks of %zu\n", checks.failed, checks.total);
    }
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
