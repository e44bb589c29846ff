#pragma once

// Character-embedding + BiLSTM + linear-chain CRF sequence tagger with
// hand-written backpropagation. Sentences are processed one at a time; a
// batch only controls how many sentence gradients are averaged per update.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "emrkg/corpus.hpp"
#include "emrkg/crf.hpp"
#include "emrkg/derm.hpp"
#include "emrkg/error.hpp"
#include "emrkg/metrics.hpp"
#include "emrkg/rng.hpp"

namespace emrkg {

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kMask = 2;
  static constexpr int kReserved = 3;

  Vocabulary() = default;

  /// Characters of `sentences` plus every dictionary surface, in code point order.
  static Vocabulary build(const std::vector<BioSentence>& sentences,
                          const EntityDictionary* dict = nullptr) {
    std::set<char32_t> chars;
    for (const auto& s : sentences) chars.insert(s.chars.begin(), s.chars.end());
    if (dict != nullptr) {
      for (const auto& [type, surfaces] : dict->by_type) {
        for (const auto& surface : surfaces) chars.insert(surface.begin(), surface.end());
      }
    }
    Vocabulary v;
    for (char32_t c : chars) v.add(c);
    return v;
  }

  void add(char32_t c) {
    if (c == kMaskChar || index_.count(c)) return;
    index_.emplace(c, static_cast<int>(chars_.size()) + kReserved);
    chars_.push_back(c);
  }

  int id(char32_t c) const {
    if (c == kMaskChar) return kMask;
    const auto it = index_.find(c);
    return it == index_.end() ? kUnk : it->second;
  }

  std::vector<int> ids(std::u32string_view text) const {
    std::vector<int> out;
    out.reserve(text.size());
    for (char32_t c : text) out.push_back(id(c));
    return out;
  }

  std::size_t size() const noexcept { return chars_.size() + kReserved; }
  const std::vector<char32_t>& chars() const noexcept { return chars_; }

  bool operator==(const Vocabulary& o) const { return chars_ == o.chars_; }

 private:
  std::map<char32_t, int> index_;
  std::vector<char32_t> chars_;
};

/// O, then B-t / I-t per schema type in schema order; START and STOP are the
/// two virtual states after the real tags.
class TagSet {
 public:
  explicit TagSet(EntitySchema schema = {}) : schema_(std::move(schema)) {
    names_.push_back("O");
    for (const auto& t : schema_.types()) {
      names_.push_back("B-" + t);
      names_.push_back("I-" + t);
    }
  }

  std::size_t size() const noexcept { return names_.size(); }
  std::size_t start() const noexcept { return names_.size(); }
  std::size_t stop() const noexcept { return names_.size() + 1; }
  const std::string& name(int index) const { return names_.at(static_cast<std::size_t>(index)); }
  const EntitySchema& schema() const noexcept { return schema_; }

  int index(std::string_view tag) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == tag) return static_cast<int>(i);
    }
    throw Error(Errc::InvalidGoldTag, "tagger", "tag '" + std::string(tag) + "' not in tag set");
  }

  std::vector<int> indices(const std::vector<std::string>& tags) const {
    std::vector<int> out;
    out.reserve(tags.size());
    for (const auto& t : tags) out.push_back(index(t));
    return out;
  }

  /// 0 where a transition is allowed, -inf where it would break BIO:
  /// I-t may only follow B-t or I-t, nothing enters START, nothing leaves STOP.
  Matrix constraint_mask() const {
    const auto k = size();
    Matrix m(k + 2, k + 2, 0.0);
    for (std::size_t j = 0; j < k + 2; ++j) {
      m(j, start()) = kNegInf;
      m(stop(), j) = kNegInf;
    }
    m(start(), stop()) = kNegInf;
    for (std::size_t t = 0; t < schema_.size(); ++t) {
      const std::size_t b = 1 + 2 * t;
      const std::size_t i = b + 1;
      for (std::size_t from = 0; from < k + 2; ++from) {
        if (from != b && from != i) m(from, i) = kNegInf;
      }
    }
    return m;
  }

 private:
  EntitySchema schema_;
  std::vector<std::string> names_;
};

struct LstmParams {
  Matrix w;  // 4h x d_in, gate rows ordered input, forget, cell, output
  Matrix u;  // 4h x h
  Matrix b;  // 1 x 4h
};

struct TaggerParams {
  Matrix embedding;    // |vocab| x d_emb
  LstmParams forward;  // left to right
  LstmParams backward; // right to left
  Matrix proj_w;       // |tags| x 2h
  Matrix proj_b;       // 1 x |tags|
  Matrix transitions;  // (|tags| + 2)^2, finite; BIO mask applied on top

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("embedding", self.embedding);
    f("forward.w", self.forward.w);
    f("forward.u", self.forward.u);
    f("forward.b", self.forward.b);
    f("backward.w", self.backward.w);
    f("backward.u", self.backward.u);
    f("backward.b", self.backward.b);
    f("proj.w", self.proj_w);
    f("proj.b", self.proj_b);
    f("transitions", self.transitions);
  }
  template <typename F>
  void for_each(F&& f) {
    visit(*this, std::forward<F>(f));
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, std::forward<F>(f));
  }

  /// Same shapes, all zeros.
  TaggerParams zeros_like() const {
    TaggerParams z = *this;
    z.for_each([](std::string_view, Matrix& m) { std::fill(m.data().begin(), m.data().end(), 0.0); });
    return z;
  }

  bool operator==(const TaggerParams& o) const {
    bool same = true;
    std::vector<const Matrix*> mine;
    for_each([&](std::string_view, const Matrix& m) { mine.push_back(&m); });
    std::size_t i = 0;
    o.for_each([&](std::string_view, const Matrix& m) { same = same && *mine[i++] == m; });
    return same;
  }
};

struct TaggerModel {
  Vocabulary vocab;
  TagSet tags;
  std::size_t d_emb = 0;
  std::size_t hidden = 0;
  TaggerParams params;

  /// Fresh model with seeded uniform initialisation. The transition matrix
  /// starts at zero and LSTM forget-gate biases at one.
  static TaggerModel init(Vocabulary vocab, const EntitySchema& schema, std::size_t d_emb,
                          std::size_t hidden, std::uint64_t seed) {
    if (d_emb == 0 || hidden == 0) throw Error(Errc::ConfigError, "tagger", "sizes must be positive");
    TaggerModel m;
    m.vocab = std::move(vocab);
    m.tags = TagSet(schema);
    m.d_emb = d_emb;
    m.hidden = hidden;
    const auto v = m.vocab.size();
    const auto k = m.tags.size();
    Rng rng(seed);
    const auto fill = [&rng](Matrix& mat, double scale) {
      for (auto& x : mat.data()) x = rng.uniform(-scale, scale);
    };
    auto& p = m.params;
    p.embedding = Matrix(v, d_emb);
    fill(p.embedding, std::sqrt(3.0 / static_cast<double>(d_emb)));
    std::fill(p.embedding.row(Vocabulary::kPad), p.embedding.row(Vocabulary::kPad) + d_emb, 0.0);
    const double lstm_scale = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (auto* lstm : {&p.forward, &p.backward}) {
      lstm->w = Matrix(4 * hidden, d_emb);
      lstm->u = Matrix(4 * hidden, hidden);
      lstm->b = Matrix(1, 4 * hidden);
      fill(lstm->w, lstm_scale);
      fill(lstm->u, lstm_scale);
      for (std::size_t r = hidden; r < 2 * hidden; ++r) lstm->b(0, r) = 1.0;
    }
    p.proj_w = Matrix(k, 2 * hidden);
    fill(p.proj_w, 1.0 / std::sqrt(static_cast<double>(2 * hidden)));
    p.proj_b = Matrix(1, k);
    p.transitions = Matrix(k + 2, k + 2);
    return m;
  }

  Matrix effective_transitions() const {
    Matrix t = params.transitions;
    const auto mask = tags.constraint_mask();
    for (std::size_t i = 0; i < t.data().size(); ++i) t.data()[i] += mask.data()[i];
    return t;
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    params.for_each([&](std::string_view, const Matrix& m) { n += m.data().size(); });
    return n;
  }
};

// ---------------------------------------------------------------------------
// Forward pass

struct LstmCache {
  // Indexed by sentence position, n x h each.
  Matrix i, f, g, o, c, tanh_c, h;
};

struct EncodeCache {
  std::vector<int> ids;
  LstmCache forward;
  LstmCache backward;
  Matrix emissions;  // n x |tags|
};

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double z = std::exp(x);
  return z / (1.0 + z);
}

inline void lstm_forward(const LstmParams& p, const Matrix& embedding, const std::vector<int>& ids,
                         bool reverse, LstmCache& cache) {
  const auto n = ids.size();
  const auto h = p.u.cols();
  const auto d = p.w.cols();
  for (auto* m : {&cache.i, &cache.f, &cache.g, &cache.o, &cache.c, &cache.tanh_c, &cache.h}) {
    *m = Matrix(n, h);
  }
  std::vector<double> z(4 * h);
  std::vector<double> zero(h, 0.0);
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t pos = reverse ? n - 1 - step : step;
    const double* x = embedding.row(static_cast<std::size_t>(ids[pos]));
    const double* h_prev = step == 0 ? zero.data() : cache.h.row(reverse ? pos + 1 : pos - 1);
    const double* c_prev = step == 0 ? zero.data() : cache.c.row(reverse ? pos + 1 : pos - 1);
    for (std::size_t r = 0; r < 4 * h; ++r) {
      double acc = p.b(0, r);
      const double* wr = p.w.row(r);
      for (std::size_t k = 0; k < d; ++k) acc += wr[k] * x[k];
      const double* ur = p.u.row(r);
      for (std::size_t k = 0; k < h; ++k) acc += ur[k] * h_prev[k];
      z[r] = acc;
    }
    for (std::size_t k = 0; k < h; ++k) {
      const double ig = sigmoid(z[k]);
      const double fg = sigmoid(z[h + k]);
      const double gg = std::tanh(z[2 * h + k]);
      const double og = sigmoid(z[3 * h + k]);
      const double c = fg * c_prev[k] + ig * gg;
      const double tc = std::tanh(c);
      cache.i(pos, k) = ig;
      cache.f(pos, k) = fg;
      cache.g(pos, k) = gg;
      cache.o(pos, k) = og;
      cache.c(pos, k) = c;
      cache.tanh_c(pos, k) = tc;
      cache.h(pos, k) = og * tc;
    }
  }
}

/// Accumulates parameter and embedding gradients given dL/dh at every position.
inline void lstm_backward(const LstmParams& p, LstmParams& grad, Matrix& d_embedding,
                          const Matrix& embedding, const std::vector<int>& ids, bool reverse,
                          const LstmCache& cache, const Matrix& dh_out) {
  const auto n = ids.size();
  const auto h = p.u.cols();
  const auto d = p.w.cols();
  std::vector<double> dh_next(h, 0.0);
  std::vector<double> dc_next(h, 0.0);
  std::vector<double> dz(4 * h);
  std::vector<double> zero(h, 0.0);
  for (std::size_t step = n; step-- > 0;) {
    const std::size_t pos = reverse ? n - 1 - step : step;
    const bool first = step == 0;
    const std::size_t prev = reverse ? pos + 1 : pos - 1;
    const double* h_prev = first ? zero.data() : cache.h.row(prev);
    const double* c_prev = first ? zero.data() : cache.c.row(prev);
    for (std::size_t k = 0; k < h; ++k) {
      const double dh = dh_out(pos, k) + dh_next[k];
      const double o = cache.o(pos, k);
      const double tc = cache.tanh_c(pos, k);
      const double dc = dh * o * (1.0 - tc * tc) + dc_next[k];
      const double i = cache.i(pos, k);
      const double f = cache.f(pos, k);
      const double g = cache.g(pos, k);
      dz[k] = dc * g * i * (1.0 - i);
      dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
      dz[2 * h + k] = dc * i * (1.0 - g * g);
      dz[3 * h + k] = dh * tc * o * (1.0 - o);
      dc_next[k] = dc * f;
    }
    const auto id = static_cast<std::size_t>(ids[pos]);
    const double* x = embedding.row(id);
    double* dx = d_embedding.row(id);
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    for (std::size_t r = 0; r < 4 * h; ++r) {
      const double g = dz[r];
      if (g == 0.0) continue;
      grad.b(0, r) += g;
      double* gw = grad.w.row(r);
      const double* wr = p.w.row(r);
      for (std::size_t k = 0; k < d; ++k) {
        gw[k] += g * x[k];
        dx[k] += g * wr[k];
      }
      double* gu = grad.u.row(r);
      const double* ur = p.u.row(r);
      for (std::size_t k = 0; k < h; ++k) {
        gu[k] += g * h_prev[k];
        dh_next[k] += g * ur[k];
      }
    }
  }
}

}  // namespace detail

inline EncodeCache encode_with_cache(const TaggerModel& model, std::vector<int> ids) {
  if (ids.empty()) throw Error(Errc::EmptySentence, "tagger", "cannot encode an empty sentence");
  EncodeCache cache;
  cache.ids = std::move(ids);
  const auto& p = model.params;
  detail::lstm_forward(p.forward, p.embedding, cache.ids, false, cache.forward);
  detail::lstm_forward(p.backward, p.embedding, cache.ids, true, cache.backward);
  const auto n = cache.ids.size();
  const auto h = model.hidden;
  const auto k = model.tags.size();
  cache.emissions = Matrix(n, k);
  for (std::size_t t = 0; t < n; ++t) {
    const double* hf = cache.forward.h.row(t);
    const double* hb = cache.backward.h.row(t);
    for (std::size_t j = 0; j < k; ++j) {
      const double* wj = p.proj_w.row(j);
      double acc = p.proj_b(0, j);
      for (std::size_t r = 0; r < h; ++r) acc += wj[r] * hf[r] + wj[h + r] * hb[r];
      cache.emissions(t, j) = acc;
    }
  }
  return cache;
}

/// Emission scores (length x |tags|) for a character sequence.
inline Matrix encode(const TaggerModel& model, std::u32string_view chars) {
  return encode_with_cache(model, model.vocab.ids(chars)).emissions;
}

/// Backpropagates dL/d(emissions) and dL/d(transitions) into `grads`.
inline void backward(const TaggerModel& model, const EncodeCache& cache, const Matrix& d_emissions,
                     const Matrix& d_transitions, TaggerParams& grads) {
  const auto& p = model.params;
  const auto n = cache.ids.size();
  const auto h = model.hidden;
  const auto k = model.tags.size();
  const auto mask = model.tags.constraint_mask();
  for (std::size_t i = 0; i < d_transitions.data().size(); ++i) {
    if (mask.data()[i] == 0.0) grads.transitions.data()[i] += d_transitions.data()[i];
  }
  Matrix dh_f(n, h);
  Matrix dh_b(n, h);
  for (std::size_t t = 0; t < n; ++t) {
    const double* hf = cache.forward.h.row(t);
    const double* hb = cache.backward.h.row(t);
    for (std::size_t j = 0; j < k; ++j) {
      const double g = d_emissions(t, j);
      if (g == 0.0) continue;
      grads.proj_b(0, j) += g;
      double* gw = grads.proj_w.row(j);
      const double* wj = p.proj_w.row(j);
      for (std::size_t r = 0; r < h; ++r) {
        gw[r] += g * hf[r];
        gw[h + r] += g * hb[r];
        dh_f(t, r) += g * wj[r];
        dh_b(t, r) += g * wj[h + r];
      }
    }
  }
  detail::lstm_backward(p.forward, grads.forward, grads.embedding, p.embedding, cache.ids, false,
                        cache.forward, dh_f);
  detail::lstm_backward(p.backward, grads.backward, grads.embedding, p.embedding, cache.ids, true,
                        cache.backward, dh_b);
}

/// CRF negative log-likelihood of one gold-tagged sentence; gradients are
/// accumulated into `grads` when it is non-null.
inline double sentence_loss(const TaggerModel& model, const BioSentence& sentence,
                            TaggerParams* grads = nullptr) {
  const auto gold = model.tags.indices(sentence.tags);
  auto cache = encode_with_cache(model, model.vocab.ids(sentence.chars));
  const auto transitions = model.effective_transitions();
  if (grads == nullptr) return crf_nll(cache.emissions, transitions, gold);
  Matrix d_e(cache.emissions.rows(), cache.emissions.cols());
  Matrix d_t(transitions.rows(), transitions.cols());
  const double nll = crf_nll_backward(cache.emissions, transitions, gold, d_e, d_t);
  backward(model, cache, d_e, d_t, *grads);
  return nll;
}

/// Constrained Viterbi decoding; the output is always well-formed BIO.
inline std::vector<BioSentence> predict(const TaggerModel& model, const std::vector<BioSentence>& sentences) {
  std::vector<BioSentence> out;
  out.reserve(sentences.size());
  const auto transitions = model.effective_transitions();
  for (const auto& s : sentences) {
    if (s.chars.empty()) throw Error(Errc::EmptySentence, "tagger", "cannot tag an empty sentence");
    const auto path = crf_viterbi(encode(model, s.chars), transitions);
    BioSentence tagged{s.chars, {}};
    tagged.tags.reserve(path.size());
    for (int t : path) tagged.tags.push_back(model.tags.name(t));
    out.push_back(std::move(tagged));
  }
  return out;
}

inline std::vector<BioSentence> predict(const TaggerModel& model, const std::vector<std::u32string>& texts) {
  std::vector<BioSentence> input;
  input.reserve(texts.size());
  for (const auto& t : texts) input.push_back({t, std::vector<std::string>(t.size(), "O")});
  return predict(model, input);
}

// ---------------------------------------------------------------------------
// Training

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  std::size_t batch_size = 40;
  std::size_t epochs = 20;
  double learning_rate = 1e-2;
  std::size_t hidden = 128;
  std::size_t d_emb = 32;
  std::uint64_t seed = 0;
  bool derm_enabled = false;
  DermConfig derm;
  std::optional<double> gradient_clip;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double momentum = 0.0;  // SGD only
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const {
    if (batch_size == 0 || epochs == 0 || hidden == 0 || d_emb == 0) {
      throw Error(Errc::ConfigError, "tagger", "batch_size, epochs, hidden and d_emb must be positive");
    }
    if (!(learning_rate > 0.0)) throw Error(Errc::ConfigError, "tagger", "learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw Error(Errc::ConfigError, "tagger", "momentum must lie in [0, 1)");
    if (gradient_clip && !(*gradient_clip > 0.0)) {
      throw Error(Errc::ConfigError, "tagger", "gradient_clip must be > 0");
    }
    if (derm_enabled) derm.validate();
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean per-sentence NLL over the training pass
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct TrainResult {
  TaggerModel model;  // parameters from the best validation-F1 epoch
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
};

namespace detail {

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const TaggerParams& shape)
      : cfg_(cfg), first_(shape.zeros_like()), second_(shape.zeros_like()) {}

  void step(TaggerParams& params, const TaggerParams& grads) {
    ++t_;
    std::vector<Matrix*> p;
    std::vector<const Matrix*> g;
    std::vector<Matrix*> m1;
    std::vector<Matrix*> m2;
    params.for_each([&](std::string_view, Matrix& m) { p.push_back(&m); });
    grads.for_each([&](std::string_view, const Matrix& m) { g.push_back(&m); });
    first_.for_each([&](std::string_view, Matrix& m) { m1.push_back(&m); });
    second_.for_each([&](std::string_view, Matrix& m) { m2.push_back(&m); });
    const double lr = cfg_.learning_rate;
    const double b1 = cfg_.adam_beta1;
    const double b2 = cfg_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < p.size(); ++k) {
      auto& w = p[k]->data();
      const auto& d = g[k]->data();
      auto& v1 = m1[k]->data();
      auto& v2 = m2[k]->data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (cfg_.optimizer == OptimizerKind::Adam) {
          v1[i] = b1 * v1[i] + (1.0 - b1) * d[i];
          v2[i] = b2 * v2[i] + (1.0 - b2) * d[i] * d[i];
          w[i] -= lr * (v1[i] / c1) / (std::sqrt(v2[i] / c2) + cfg_.adam_epsilon);
        } else if (cfg_.momentum > 0.0) {
          v1[i] = cfg_.momentum * v1[i] + d[i];
          w[i] -= lr * v1[i];
        } else {
          w[i] -= lr * d[i];
        }
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  TaggerParams first_;
  TaggerParams second_;
  std::size_t t_ = 0;
};

inline void scale_and_clip(TaggerParams& grads, double scale, const std::optional<double>& clip) {
  double norm_sq = 0.0;
  grads.for_each([&](std::string_view, Matrix& m) {
    for (auto& v : m.data()) {
      v *= scale;
      norm_sq += v * v;
    }
  });
  if (clip && norm_sq > (*clip) * (*clip)) {
    const double f = *clip / std::sqrt(norm_sq);
    grads.for_each([&](std::string_view, Matrix& m) {
      for (auto& v : m.data()) v *= f;
    });
  }
}

}  // namespace detail

inline Scores evaluate(const TaggerModel& model, const std::vector<BioSentence>& gold) {
  return precision_recall_f1(count_matches(gold, predict(model, gold))).micro;
}

/// Trains from scratch. Every random choice derives from `config.seed`:
/// init uses derive_seed(seed, "init"), epoch e shuffles with
/// derive_seed(seed, "epoch-e") and augments with derive_seed(seed, "derm-e").
/// When the validation set is empty the training set is scored instead.
inline TrainResult train(const DatasetSplit& split, const EntityDictionary& dict,
                         const TrainConfig& config, const EntitySchema& schema = {},
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  config.validate();
  if (split.train.empty()) throw Error(Errc::EmptyTrainSet, "tagger", "training set is empty");
  for (const auto& s : split.train) {
    if (!is_well_formed(s)) throw Error(Errc::MalformedBio, "tagger", "training sentence is not well-formed BIO");
  }
  auto model = TaggerModel::init(Vocabulary::build(split.train, &dict), schema, config.d_emb,
                                 config.hidden, derive_seed(config.seed, "init"));
  const auto& scored = split.validation.empty() ? split.train : split.validation;

  TrainResult result{model, {}, 0};
  double best_f1 = -1.0;
  detail::Optimizer optimizer(config, model.params);
  TaggerParams grads = model.params.zeros_like();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto tag = std::to_string(epoch);
    std::vector<BioSentence> batch_source;
    if (config.derm_enabled) {
      for (auto& o : augment_epoch(split.train, dict, config.derm, derive_seed(config.seed, "derm-" + tag))) {
        batch_source.push_back(std::move(o.sentence));
      }
    } else {
      batch_source = split.train;
    }
    std::vector<std::size_t> order(batch_source.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng(derive_seed(config.seed, "epoch-" + tag)).shuffle(order);

    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t e = std::min(order.size(), b + config.batch_size);
      for (std::size_t i = b; i < e; ++i) {
        const double nll = sentence_loss(model, batch_source[order[i]], &grads);
        if (!std::isfinite(nll)) {
          throw Error(Errc::DivergedLoss, "tagger",
                      "non-finite loss at epoch " + tag + ", sentence " + std::to_string(order[i]));
        }
        total += nll;
      }
      detail::scale_and_clip(grads, 1.0 / static_cast<double>(e - b), config.gradient_clip);
      optimizer.step(model.params, grads);
      grads.for_each([](std::string_view, Matrix& m) { std::fill(m.data().begin(), m.data().end(), 0.0); });
    }

    const auto s = evaluate(model, scored);
    EpochRecord rec{epoch, total / static_cast<double>(order.size()), s.precision, s.recall, s.f1};
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (s.f1 > best_f1) {
      best_f1 = s.f1;
      result.best_epoch = epoch;
      result.model.params = model.params;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization: little-endian binary, doubles stored bit-exactly.

inline constexpr char kModelMagic[8] = {'E', 'M', 'R', 'K', 'G', 'T', 'M', '\0'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "model files are little-endian");
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

inline void put_string(std::ostream& out, std::string_view s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  if (!in) throw Error(Errc::IoError, "tagger", "truncated model file at byte " + std::to_string(in.gcount()));
  return value;
}

inline std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  if (n > (1u << 20)) throw Error(Errc::IoError, "tagger", "implausible string length in model file");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw Error(Errc::IoError, "tagger", "truncated model file");
  return s;
}

}  // namespace detail

inline void save_model(std::ostream& out, const TaggerModel& model) {
  out.write(kModelMagic, sizeof kModelMagic);
  detail::put(out, kModelVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.vocab.chars().size()));
  for (char32_t c : model.vocab.chars()) detail::put<std::uint32_t>(out, c);
  const auto& types = model.tags.schema().types();
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(types.size()));
  for (const auto& t : types) detail::put_string(out, t);
  detail::put<std::uint64_t>(out, model.d_emb);
  detail::put<std::uint64_t>(out, model.hidden);
  model.params.for_each([&](std::string_view name, const Matrix& m) {
    detail::put_string(out, name);
    detail::put<std::uint64_t>(out, m.rows());
    detail::put<std::uint64_t>(out, m.cols());
    out.write(reinterpret_cast<const char*>(m.data().data()),
              static_cast<std::streamsize>(m.data().size() * sizeof(double)));
  });
  if (!out) throw Error(Errc::IoError, "tagger", "failed writing model");
}

inline TaggerModel load_model(std::istream& in) {
  char magic[sizeof kModelMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kModelMagic, sizeof magic) != 0) {
    throw Error(Errc::SchemaVersionMismatch, "tagger", "not a tagger model file");
  }
  const auto version = detail::get<std::uint32_t>(in);
  if (version != kModelVersion) {
    throw Error(Errc::SchemaVersionMismatch, "tagger", "model version " + std::to_string(version) +
                                                           ", expected " + std::to_string(kModelVersion));
  }
  Vocabulary vocab;
  const auto nv = detail::get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < nv; ++i) vocab.add(detail::get<std::uint32_t>(in));
  std::vector<std::string> types(detail::get<std::uint32_t>(in));
  for (auto& t : types) t = detail::get_string(in);
  const auto d_emb = detail::get<std::uint64_t>(in);
  const auto hidden = detail::get<std::uint64_t>(in);
  auto model = TaggerModel::init(std::move(vocab), EntitySchema(types), d_emb, hidden, 0);
  model.params.for_each([&](std::string_view name, Matrix& m) {
    const auto stored = detail::get_string(in);
    const auto rows = detail::get<std::uint64_t>(in);
    const auto cols = detail::get<std::uint64_t>(in);
    if (stored != name || rows != m.rows() || cols != m.cols()) {
      throw Error(Errc::IoError, "tagger", "tensor '" + stored + "' does not match expected '" +
                                               std::string(name) + "' shape");
    }
    in.read(reinterpret_cast<char*>(m.data().data()),
            static_cast<std::streamsize>(m.data().size() * sizeof(double)));
    if (!in) throw Error(Errc::IoError, "tagger", "truncated tensor '" + stored + "'");
  });
  return model;
}

inline void save_model_file(const std::string& path, const TaggerModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "tagger", "cannot write " + path);
  save_model(out, model);
}

inline TaggerModel load_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "tagger", "cannot open " + path);
  return load_model(in);
}

inline void write_train_log(std::ostream& out, const std::vector<EpochRecord>& log) {
  for (const auto& r : log) {
    nlohmann::ordered_json j{{"epoch", r.epoch},       {"loss", r.loss}, {"precision", r.precision},
                             {"recall", r.recall},     {"f1", r.f1}};
    out << j.dump() << '\n';
  }
}

}  // namespace emrkg
