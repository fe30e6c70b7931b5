#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tdg/corpus.hpp"
#include "tdg/error.hpp"
#include "tdg/graph.hpp"
#include "tdg/loss.hpp"
#include "tdg/random.hpp"

namespace tdg {

enum class Variant : std::uint8_t { baseline, dp_feature, dp_distill };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::dp_feature: return "dp_feature";
    case Variant::dp_distill: return "dp_distill";
  }
  return "?";
}

inline std::optional<Variant> parse_variant(std::string_view s) {
  if (s == "baseline") return Variant::baseline;
  if (s == "dp_feature") return Variant::dp_feature;
  if (s == "dp_distill") return Variant::dp_distill;
  return std::nullopt;
}

enum class LossKind : std::uint8_t { ranking, dp };

// ---------------------------------------------------------------------------
// Vocabulary

// Lowercased token inventory. Reserved entries occupy the first indices:
// UNK, the child/candidate role markers, then one marker per content type.
class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::size_t kChildMark = 1;
  static constexpr std::size_t kCandidateMark = 2;
  static constexpr std::size_t kContentMarkBase = 3;
  static constexpr std::size_t kNumReserved = kContentMarkBase + kNumContentTypes;

  static std::vector<std::string> reserved_tokens() {
    std::vector<std::string> r = {"<unk>", "$", "@"};
    for (auto name : kContentTypeNames) r.push_back("#" + std::string(name) + "#");
    return r;
  }

  Vocabulary() : Vocabulary(reserved_tokens()) {}

  // Token list in index order; must start with the reserved tokens.
  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    const auto reserved = reserved_tokens();
    if (tokens_.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), tokens_.begin())) {
      throw Error("vocabulary does not start with the reserved tokens");
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], i).second) throw Error("duplicate vocabulary entry '" + tokens_[i] + "'");
    }
  }

  std::size_t lookup(std::string_view token) const {
    auto it = index_.find(lowercase(token));
    return it == index_.end() ? kUnk : it->second;
  }

  static std::size_t content_mark(ContentType t) { return kContentMarkBase + static_cast<std::size_t>(t); }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline Vocabulary build_vocabulary(const Corpus& corpus) {
  if (corpus.empty()) throw Error("build_vocabulary: empty corpus");
  std::set<std::string> seen;
  for (const Document& doc : corpus) {
    for (const Sentence& s : doc.sentences) {
      for (const std::string& t : s.tokens) seen.insert(lowercase(t));
    }
  }
  std::vector<std::string> tokens = Vocabulary::reserved_tokens();
  const std::set<std::string> reserved(tokens.begin(), tokens.end());
  for (const std::string& t : seen) {
    if (!reserved.count(t)) tokens.push_back(t);
  }
  return Vocabulary(std::move(tokens));
}

// ---------------------------------------------------------------------------
// Parameters

struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::size_t size() const { return data.size(); }

  bool operator==(const Tensor&) const = default;
};

struct Hyperparameters {
  std::size_t embedding_dim = 32;
  std::size_t hidden_dim = 64;

  static constexpr std::size_t kScalarFeatures = 10;
  std::size_t feature_dim() const { return 5 * embedding_dim + kScalarFeatures; }

  bool operator==(const Hyperparameters&) const = default;
};

// Every trainable tensor. Also used as the gradient container.
struct Parameters {
  Tensor embedding;    // [vocab, d]
  Tensor meta;         // [3, d], one row per meta node
  Tensor pair_hidden;  // W1 [h, f]
  Tensor pair_bias;    // b1 [h, 1]
  Tensor pair_output;  // w2 [h, 1]
  Tensor pair_offset;  // b2 [1, 1]
  Tensor dp_weight;    // Wd [9, d]
  Tensor dp_bias;      // bd [9, 1]

  static constexpr std::size_t kNumTensors = 8;
  static constexpr std::array<std::string_view, kNumTensors> kNames = {
      "embedding", "meta", "pair_hidden", "pair_bias", "pair_output", "pair_offset", "dp_weight", "dp_bias"};

  static Parameters zeros(std::size_t vocab_size, const Hyperparameters& hp) {
    const std::size_t d = hp.embedding_dim, h = hp.hidden_dim;
    return {Tensor(vocab_size, d), Tensor(kNumMetaNodes, d), Tensor(h, hp.feature_dim()), Tensor(h, 1),
            Tensor(h, 1),          Tensor(1, 1),             Tensor(kNumContentTypes, d), Tensor(kNumContentTypes, 1)};
  }

  std::array<Tensor*, kNumTensors> tensors() {
    return {&embedding, &meta, &pair_hidden, &pair_bias, &pair_output, &pair_offset, &dp_weight, &dp_bias};
  }
  std::array<const Tensor*, kNumTensors> tensors() const {
    return {&embedding, &meta, &pair_hidden, &pair_bias, &pair_output, &pair_offset, &dp_weight, &dp_bias};
  }

  bool all_finite() const {
    for (const Tensor* t : tensors()) {
      for (double x : t->data) {
        if (!std::isfinite(x)) return false;
      }
    }
    return true;
  }

  bool operator==(const Parameters&) const = default;
};

struct RankingModel {
  Vocabulary vocab;
  Hyperparameters hyper;
  Parameters params;

  bool operator==(const RankingModel&) const = default;
};

// Weights uniform in [-scale, scale], biases zero.
inline RankingModel init_model(Vocabulary vocab, const Hyperparameters& hyper, Rng& rng, double scale = 0.05) {
  RankingModel model{std::move(vocab), hyper, {}};
  model.params = Parameters::zeros(model.vocab.size(), hyper);
  for (Tensor* t : {&model.params.embedding, &model.params.meta, &model.params.pair_hidden,
                    &model.params.pair_output, &model.params.dp_weight}) {
    for (double& x : t->data) x = rng.uniform(-scale, scale);
  }
  return model;
}

inline RankingModel zero_model(Vocabulary vocab, const Hyperparameters& hyper) {
  RankingModel model{std::move(vocab), hyper, {}};
  model.params = Parameters::zeros(model.vocab.size(), hyper);
  return model;
}

// ---------------------------------------------------------------------------
// Encoding

enum class Role : std::uint8_t { child, candidate };

// Token indices of one document resolved against a vocabulary, plus the
// discourse labels when the variant needs them.
struct EncodedDocument {
  const Document* doc = nullptr;
  std::vector<std::vector<std::size_t>> sentence_tokens;
  std::vector<std::vector<std::size_t>> mention_tokens;
  std::vector<ContentType> labels;  // empty when no labels were supplied
};

inline EncodedDocument encode_document(const Vocabulary& vocab, const Document& doc, const DpLabelMap* labels) {
  EncodedDocument enc;
  enc.doc = &doc;
  for (const Sentence& s : doc.sentences) {
    std::vector<std::size_t> ids;
    ids.reserve(s.tokens.size());
    for (const std::string& t : s.tokens) ids.push_back(vocab.lookup(t));
    enc.sentence_tokens.push_back(std::move(ids));
  }
  for (const Mention& m : doc.mentions) {
    const auto& ids = enc.sentence_tokens[m.sentence];
    enc.mention_tokens.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(m.start),
                                    ids.begin() + static_cast<std::ptrdiff_t>(m.end));
  }
  if (labels) enc.labels = labels->document_labels(doc);
  return enc;
}

namespace detail {

inline void require_labels(Variant variant, const DpLabelMap* labels, std::string_view op) {
  if (variant == Variant::dp_feature && !labels) {
    throw Error(std::string(op) + ": the dp_feature variant needs discourse labels");
  }
}

inline void add_mean(const Tensor& embedding, std::span<const std::size_t> ids, std::span<double> out,
                     std::optional<std::size_t> extra = std::nullopt) {
  const double scale = 1.0 / static_cast<double>(ids.size() + (extra ? 1 : 0));
  for (std::size_t id : ids) {
    auto row = embedding.row(id);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += scale * row[k];
  }
  if (extra) {
    auto row = embedding.row(*extra);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += scale * row[k];
  }
}

// Scatters the gradient of a mean back onto its token rows.
inline void scatter_mean(Tensor& grad, std::span<const std::size_t> ids, std::span<const double> g,
                         std::optional<std::size_t> extra = std::nullopt) {
  const double scale = 1.0 / static_cast<double>(ids.size() + (extra ? 1 : 0));
  for (std::size_t id : ids) {
    auto row = grad.row(id);
    for (std::size_t k = 0; k < g.size(); ++k) row[k] += scale * g[k];
  }
  if (extra) {
    auto row = grad.row(*extra);
    for (std::size_t k = 0; k < g.size(); ++k) row[k] += scale * g[k];
  }
}

inline std::size_t distance_bucket(std::size_t distance) {
  if (distance <= 2) return distance;
  return distance <= 5 ? 3 : 4;
}

// Representations shared by all pairs of one document under one variant.
struct DocumentReprs {
  Tensor mention_mean;   // [mentions, d] mean token embedding of each mention
  Tensor child_repr;     // mention_mean + child marker
  Tensor cand_repr;      // mention_mean + candidate marker
  Tensor sentence_repr;  // [sentences, d] pair-feature sentence repr (marker-augmented for dp_feature)
};

inline DocumentReprs compute_reprs(const RankingModel& model, const EncodedDocument& enc, Variant variant) {
  const std::size_t d = model.hyper.embedding_dim;
  const Tensor& E = model.params.embedding;
  const Document& doc = *enc.doc;
  DocumentReprs r{Tensor(doc.mentions.size(), d), Tensor(doc.mentions.size(), d), Tensor(doc.mentions.size(), d),
                  Tensor(doc.sentences.size(), d)};
  for (std::size_t m = 0; m < doc.mentions.size(); ++m) {
    add_mean(E, enc.mention_tokens[m], r.mention_mean.row(m));
    auto mean = r.mention_mean.row(m);
    auto child_mark = E.row(Vocabulary::kChildMark);
    auto cand_mark = E.row(Vocabulary::kCandidateMark);
    for (std::size_t k = 0; k < d; ++k) {
      r.child_repr(m, k) = mean[k] + child_mark[k];
      r.cand_repr(m, k) = mean[k] + cand_mark[k];
    }
  }
  for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
    std::optional<std::size_t> marker;
    if (variant == Variant::dp_feature) marker = Vocabulary::content_mark(enc.labels.at(s));
    add_mean(E, enc.sentence_tokens[s], r.sentence_repr.row(s), marker);
  }
  return r;
}

// Writes PairFeatures of (child, candidate) into x (length f).
inline void fill_pair_features(const RankingModel& model, const Document& doc, const DocumentReprs& r,
                               std::size_t child, NodeRef cand, std::span<double> x) {
  const std::size_t d = model.hyper.embedding_dim;
  std::fill(x.begin(), x.end(), 0.0);
  auto child_repr = r.child_repr.row(child);
  const std::size_t child_sentence = doc.mentions[child].sentence;
  std::span<const double> cand_repr;
  if (cand.is_meta()) {
    cand_repr = model.params.meta.row(static_cast<std::size_t>(cand.meta_id()));
  } else {
    cand_repr = r.cand_repr.row(cand.mention_index());
  }
  std::copy(child_repr.begin(), child_repr.end(), x.begin());
  auto child_sent = r.sentence_repr.row(child_sentence);
  std::copy(child_sent.begin(), child_sent.end(), x.begin() + static_cast<std::ptrdiff_t>(d));
  std::copy(cand_repr.begin(), cand_repr.end(), x.begin() + static_cast<std::ptrdiff_t>(2 * d));
  for (std::size_t k = 0; k < d; ++k) x[4 * d + k] = child_repr[k] * cand_repr[k];
  double* scalars = x.data() + 5 * d;
  if (cand.is_meta()) {
    scalars[7 + static_cast<std::size_t>(cand.meta_id())] = 1.0;
    return;
  }
  const std::size_t cm = cand.mention_index();
  const std::size_t cand_sentence = doc.mentions[cm].sentence;
  auto cand_sent = r.sentence_repr.row(cand_sentence);
  std::copy(cand_sent.begin(), cand_sent.end(), x.begin() + static_cast<std::ptrdiff_t>(3 * d));
  const std::size_t dist =
      child_sentence > cand_sentence ? child_sentence - cand_sentence : cand_sentence - child_sentence;
  scalars[distance_bucket(dist)] = 1.0;
  scalars[5] = child < cm ? 1.0 : 0.0;
  scalars[6] = child_sentence == cand_sentence ? 1.0 : 0.0;
}

// Hidden pre-activations z = W1 x + b1 and the score w2 . relu(z) + b2.
inline double score_pair(const Parameters& p, std::span<const double> x, std::span<double> z) {
  const std::size_t h = p.pair_hidden.rows, f = p.pair_hidden.cols;
  double s = p.pair_offset.data[0];
  for (std::size_t j = 0; j < h; ++j) {
    const double* w = p.pair_hidden.data.data() + j * f;
    double acc = p.pair_bias.data[j];
    for (std::size_t k = 0; k < f; ++k) acc += w[k] * x[k];
    z[j] = acc;
    if (acc > 0.0) s += p.pair_output.data[j] * acc;
  }
  return s;
}

// Scores of every slot of a document, in canonical slot order. Each entry
// keeps candidates in canonical candidate order (not yet sorted by score).
struct SlotScores {
  SlotKey key;
  std::vector<NodeRef> candidates;
  std::vector<double> scores;
};

inline std::vector<SlotScores> score_all_slots(const RankingModel& model, const EncodedDocument& enc,
                                               const DocumentReprs& reprs) {
  const Document& doc = *enc.doc;
  std::vector<double> x(model.hyper.feature_dim()), z(model.hyper.hidden_dim);
  std::vector<SlotScores> out;
  for (const SlotKey& key : slot_instances(doc)) {
    SlotScores ss{key, candidate_set(doc, key.child, key.slot), {}};
    for (NodeRef c : ss.candidates) {
      fill_pair_features(model, doc, reprs, key.child, c, x);
      ss.scores.push_back(score_pair(model.params, x, z));
    }
    out.push_back(std::move(ss));
  }
  return out;
}

inline ScoredCandidates to_scored(const SlotScores& ss) {
  ScoredCandidates sc{ss.key.child, ss.key.slot, {}};
  for (std::size_t i = 0; i < ss.candidates.size(); ++i) sc.candidates.push_back({ss.candidates[i], ss.scores[i]});
  sort_canonical(sc);
  return sc;
}

}  // namespace detail

// Mean token embedding of the mention plus its role marker embedding.
inline std::vector<double> mention_repr(const RankingModel& model, const Document& doc, std::size_t mention,
                                        Role role) {
  const std::size_t d = model.hyper.embedding_dim;
  const Mention& m = doc.mentions.at(mention);
  std::vector<std::size_t> ids;
  for (std::size_t t = m.start; t < m.end; ++t) ids.push_back(model.vocab.lookup(doc.sentences[m.sentence].tokens[t]));
  std::vector<double> out(d, 0.0);
  detail::add_mean(model.params.embedding, ids, out);
  auto mark = model.params.embedding.row(role == Role::child ? Vocabulary::kChildMark : Vocabulary::kCandidateMark);
  for (std::size_t k = 0; k < d; ++k) out[k] += mark[k];
  return out;
}

// Sentence representation used in pair features. For dp_feature the
// content-type marker joins the averaged token set.
inline std::vector<double> sentence_repr(const RankingModel& model, const Document& doc, std::size_t sentence,
                                         Variant variant, const DpLabelMap* labels) {
  detail::require_labels(variant, labels, "sentence_repr");
  std::vector<std::size_t> ids;
  for (const auto& t : doc.sentences.at(sentence).tokens) ids.push_back(model.vocab.lookup(t));
  std::optional<std::size_t> marker;
  if (variant == Variant::dp_feature) marker = Vocabulary::content_mark(labels->at(doc.id, sentence));
  std::vector<double> out(model.hyper.embedding_dim, 0.0);
  detail::add_mean(model.params.embedding, ids, out, marker);
  return out;
}

inline std::vector<double> pair_features(const RankingModel& model, const Document& doc, std::size_t child,
                                         NodeRef candidate, Variant variant, const DpLabelMap* labels) {
  detail::require_labels(variant, labels, "pair_features");
  const EncodedDocument enc = encode_document(model.vocab, doc, variant == Variant::dp_feature ? labels : nullptr);
  const detail::DocumentReprs reprs = detail::compute_reprs(model, enc, variant);
  std::vector<double> x(model.hyper.feature_dim());
  detail::fill_pair_features(model, doc, reprs, child, candidate, x);
  return x;
}

inline ScoredCandidates score_candidates(const RankingModel& model, const Document& doc, std::size_t child,
                                         Slot slot, Variant variant, const DpLabelMap* labels) {
  detail::require_labels(variant, labels, "score_candidates");
  const EncodedDocument enc = encode_document(model.vocab, doc, variant == Variant::dp_feature ? labels : nullptr);
  const detail::DocumentReprs reprs = detail::compute_reprs(model, enc, variant);
  detail::SlotScores ss{{child, slot}, candidate_set(doc, child, slot), {}};
  std::vector<double> x(model.hyper.feature_dim()), z(model.hyper.hidden_dim);
  for (NodeRef c : ss.candidates) {
    detail::fill_pair_features(model, doc, reprs, child, c, x);
    ss.scores.push_back(detail::score_pair(model.params, x, z));
  }
  return detail::to_scored(ss);
}

// ScoredCandidates for every slot of `doc`, in canonical slot order.
inline std::vector<ScoredCandidates> score_document(const RankingModel& model, const Document& doc, Variant variant,
                                                    const DpLabelMap* labels) {
  detail::require_labels(variant, labels, "score_document");
  const EncodedDocument enc = encode_document(model.vocab, doc, variant == Variant::dp_feature ? labels : nullptr);
  const detail::DocumentReprs reprs = detail::compute_reprs(model, enc, variant);
  std::vector<ScoredCandidates> out;
  for (const auto& ss : detail::score_all_slots(model, enc, reprs)) out.push_back(detail::to_scored(ss));
  return out;
}

inline TemporalDependencyGraph predict_graph(const RankingModel& model, const Document& doc, Variant variant,
                                             const DpLabelMap* labels, DecodeOrder order = DecodeOrder::score) {
  const auto scores = score_document(model, doc, variant, labels);
  return greedy_decode(doc, scores, order);
}

// Content-type logits Wd . mean(sentence tokens) + bd.
inline std::array<double, kNumContentTypes> dp_logits(const RankingModel& model, const Document& doc,
                                                      std::size_t sentence) {
  const std::size_t d = model.hyper.embedding_dim;
  std::vector<std::size_t> ids;
  for (const auto& t : doc.sentences.at(sentence).tokens) ids.push_back(model.vocab.lookup(t));
  std::vector<double> mean(d, 0.0);
  detail::add_mean(model.params.embedding, ids, mean);
  std::array<double, kNumContentTypes> logits{};
  for (std::size_t c = 0; c < kNumContentTypes; ++c) {
    double acc = model.params.dp_bias.data[c];
    for (std::size_t k = 0; k < d; ++k) acc += model.params.dp_weight(c, k) * mean[k];
    logits[c] = acc;
  }
  return logits;
}

// ---------------------------------------------------------------------------
// Loss and gradients

namespace detail {

// Sums the loss over the batch and, when `grads` is set, accumulates
// unnormalized gradients. Returns {summed loss, number of averaged items}.
inline std::pair<double, std::size_t> ranking_pass(const RankingModel& model, const EncodedDocument& enc,
                                                   Variant variant, Parameters* grads, double grad_scale) {
  const Document& doc = *enc.doc;
  const Parameters& p = model.params;
  const std::size_t d = model.hyper.embedding_dim, h = model.hyper.hidden_dim, f = model.hyper.feature_dim();
  const DocumentReprs reprs = compute_reprs(model, enc, variant);
  const GoldParents gold = gold_parents(doc);

  Tensor d_child(doc.mentions.size(), d), d_cand(doc.mentions.size(), d), d_sent(doc.sentences.size(), d);
  std::vector<double> x(f), z(h), dz(h), dx(f), slot_grad;
  std::vector<std::vector<double>> features;
  std::vector<std::vector<double>> hidden;

  double total = 0.0;
  std::size_t count = 0;
  for (const SlotKey& key : slot_instances(doc)) {
    const std::vector<NodeRef> cands = candidate_set(doc, key.child, key.slot);
    const auto& g = gold.at(key.child, key.slot);
    if (!g) throw Error("document '" + doc.id + "' lacks a gold parent for mention '" + doc.mentions[key.child].id + "'");
    auto target_it = std::find(cands.begin(), cands.end(), *g);
    if (target_it == cands.end()) throw Error("ranking loss: gold parent is not a candidate");
    const std::size_t target = static_cast<std::size_t>(target_it - cands.begin());

    std::vector<double> scores(cands.size());
    features.resize(cands.size());
    hidden.resize(cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i) {
      features[i].resize(f);
      hidden[i].resize(h);
      fill_pair_features(model, doc, reprs, key.child, cands[i], features[i]);
      scores[i] = score_pair(p, features[i], hidden[i]);
    }
    slot_grad.assign(cands.size(), 0.0);
    total += softmax_cross_entropy(scores, target, grads ? std::span<double>(slot_grad) : std::span<double>());
    ++count;
    if (!grads) continue;

    for (std::size_t i = 0; i < cands.size(); ++i) {
      const double gs = slot_grad[i] * grad_scale;
      if (gs == 0.0) continue;
      const auto& xi = features[i];
      const auto& zi = hidden[i];
      grads->pair_offset.data[0] += gs;
      for (std::size_t j = 0; j < h; ++j) {
        if (zi[j] > 0.0) {
          grads->pair_output.data[j] += gs * zi[j];
          dz[j] = gs * p.pair_output.data[j];
        } else {
          dz[j] = 0.0;
        }
      }
      std::fill(dx.begin(), dx.end(), 0.0);
      for (std::size_t j = 0; j < h; ++j) {
        if (dz[j] == 0.0) continue;
        grads->pair_bias.data[j] += dz[j];
        double* gw = grads->pair_hidden.data.data() + j * f;
        const double* w = p.pair_hidden.data.data() + j * f;
        for (std::size_t k = 0; k < f; ++k) {
          gw[k] += dz[j] * xi[k];
          dx[k] += dz[j] * w[k];
        }
      }
      // Route dx back to the representations it was assembled from.
      const NodeRef cand = cands[i];
      auto child_repr = reprs.child_repr.row(key.child);
      std::span<const double> cand_repr =
          cand.is_meta() ? p.meta.row(static_cast<std::size_t>(cand.meta_id())) : reprs.cand_repr.row(cand.mention_index());
      auto dc = d_child.row(key.child);
      auto ds_child = d_sent.row(doc.mentions[key.child].sentence);
      std::span<double> dcand = cand.is_meta() ? grads->meta.row(static_cast<std::size_t>(cand.meta_id()))
                                               : d_cand.row(cand.mention_index());
      for (std::size_t k = 0; k < d; ++k) {
        dc[k] += dx[k] + dx[4 * d + k] * cand_repr[k];
        ds_child[k] += dx[d + k];
        dcand[k] += dx[2 * d + k] + dx[4 * d + k] * child_repr[k];
      }
      if (!cand.is_meta()) {
        auto ds_cand = d_sent.row(doc.mentions[cand.mention_index()].sentence);
        for (std::size_t k = 0; k < d; ++k) ds_cand[k] += dx[3 * d + k];
      }
    }
  }

  if (grads) {
    Tensor& gE = grads->embedding;
    for (std::size_t m = 0; m < doc.mentions.size(); ++m) {
      auto dc = d_child.row(m);
      auto dk = d_cand.row(m);
      auto child_mark = gE.row(Vocabulary::kChildMark);
      for (std::size_t k = 0; k < d; ++k) child_mark[k] += dc[k];
      auto cand_mark = gE.row(Vocabulary::kCandidateMark);
      for (std::size_t k = 0; k < d; ++k) cand_mark[k] += dk[k];
      std::vector<double> both(d);
      for (std::size_t k = 0; k < d; ++k) both[k] = dc[k] + dk[k];
      scatter_mean(gE, enc.mention_tokens[m], both);
    }
    for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
      std::optional<std::size_t> marker;
      if (variant == Variant::dp_feature) marker = Vocabulary::content_mark(enc.labels.at(s));
      scatter_mean(gE, enc.sentence_tokens[s], d_sent.row(s), marker);
    }
  }
  return {total, count};
}

inline std::pair<double, std::size_t> dp_pass(const RankingModel& model, const EncodedDocument& enc,
                                              Parameters* grads, double grad_scale) {
  const Document& doc = *enc.doc;
  const Parameters& p = model.params;
  const std::size_t d = model.hyper.embedding_dim;
  std::vector<double> mean(d), logits(kNumContentTypes), g(kNumContentTypes), dmean(d);
  double total = 0.0;
  for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
    std::fill(mean.begin(), mean.end(), 0.0);
    add_mean(p.embedding, enc.sentence_tokens[s], mean);
    for (std::size_t c = 0; c < kNumContentTypes; ++c) {
      double acc = p.dp_bias.data[c];
      for (std::size_t k = 0; k < d; ++k) acc += p.dp_weight(c, k) * mean[k];
      logits[c] = acc;
    }
    const auto target = static_cast<std::size_t>(enc.labels.at(s));
    total += softmax_cross_entropy(logits, target, grads ? std::span<double>(g) : std::span<double>());
    if (!grads) continue;
    std::fill(dmean.begin(), dmean.end(), 0.0);
    for (std::size_t c = 0; c < kNumContentTypes; ++c) {
      const double gc = g[c] * grad_scale;
      grads->dp_bias.data[c] += gc;
      for (std::size_t k = 0; k < d; ++k) {
        grads->dp_weight(c, k) += gc * mean[k];
        dmean[k] += gc * p.dp_weight(c, k);
      }
    }
    scatter_mean(grads->embedding, enc.sentence_tokens[s], dmean);
  }
  return {total, doc.sentences.size()};
}

inline double batch_objective(const RankingModel& model, std::span<const EncodedDocument> batch, LossKind kind,
                              Variant variant, Parameters* grads) {
  std::size_t n = 0;
  for (const EncodedDocument& enc : batch) {
    n += kind == LossKind::ranking ? slot_instances(*enc.doc).size() : enc.doc->sentences.size();
  }
  if (n == 0) return 0.0;
  const double scale = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (const EncodedDocument& enc : batch) {
    total += kind == LossKind::ranking ? ranking_pass(model, enc, variant, grads, scale).first
                                       : dp_pass(model, enc, grads, scale).first;
  }
  return total * scale;
}

}  // namespace detail

struct LossAndGradients {
  double loss = 0.0;
  Parameters gradients;
};

inline std::vector<EncodedDocument> encode_batch(const RankingModel& model, std::span<const Document> batch,
                                                 LossKind kind, Variant variant, const DpLabelMap* labels) {
  const bool need_labels = kind == LossKind::dp || variant == Variant::dp_feature;
  if (need_labels && !labels) throw Error("compute_gradients: discourse labels required for this loss/variant");
  std::vector<EncodedDocument> encoded;
  encoded.reserve(batch.size());
  for (const Document& doc : batch) encoded.push_back(encode_document(model.vocab, doc, need_labels ? labels : nullptr));
  return encoded;
}

// Mean loss over slot instances (ranking) or sentences (dp) and its
// analytic gradient with respect to every tensor.
inline LossAndGradients compute_gradients(const RankingModel& model, std::span<const Document> batch, LossKind kind,
                                          Variant variant, const DpLabelMap* labels) {
  const auto encoded = encode_batch(model, batch, kind, variant, labels);
  LossAndGradients out{0.0, Parameters::zeros(model.vocab.size(), model.hyper)};
  out.loss = detail::batch_objective(model, encoded, kind, variant, &out.gradients);
  if (!std::isfinite(out.loss)) throw DivergenceError("non-finite loss");
  return out;
}

inline double compute_loss(const RankingModel& model, std::span<const Document> batch, LossKind kind, Variant variant,
                           const DpLabelMap* labels) {
  const auto encoded = encode_batch(model, batch, kind, variant, labels);
  return detail::batch_objective(model, encoded, kind, variant, nullptr);
}

namespace detail {

// Sign of every hidden pre-activation over all (slot, candidate) pairs.
inline std::vector<bool> relu_pattern(const RankingModel& model, std::span<const EncodedDocument> batch, Variant variant) {
  std::vector<bool> pattern;
  std::vector<double> x(model.hyper.feature_dim()), z(model.hyper.hidden_dim);
  for (const EncodedDocument& enc : batch) {
    const Document& doc = *enc.doc;
    const DocumentReprs reprs = compute_reprs(model, enc, variant);
    for (const SlotKey& key : slot_instances(doc)) {
      for (NodeRef c : candidate_set(doc, key.child, key.slot)) {
        fill_pair_features(model, doc, reprs, key.child, c, x);
        score_pair(model.params, x, z);
        for (double v : z) pattern.push_back(v > 0.0);
      }
    }
  }
  return pattern;
}

}  // namespace detail

// Largest relative disagreement |a - n| / max(1, |a|, |n|) between analytic
// and central-difference gradients over sampled coordinates of each tensor.
// Embedding rows touched by the batch are sampled in addition to uniform
// coordinates, since most vocabulary rows have zero gradient.
//
// The ranking loss is piecewise smooth (relu). A coordinate whose stencil
// [theta - h, theta + h] flips any hidden unit has no derivative estimate
// there, so it is replaced by another sampled coordinate.
inline double finite_difference_check(const RankingModel& model, std::span<const Document> batch, LossKind kind,
                                      Variant variant, const DpLabelMap* labels, double step = 1e-5,
                                      std::uint64_t sample_seed = 0, std::size_t coords_per_tensor = 50) {
  const LossAndGradients analytic = compute_gradients(model, batch, kind, variant, labels);
  RankingModel probe = model;
  Rng rng(sample_seed);

  std::vector<std::size_t> active_rows = {Vocabulary::kChildMark, Vocabulary::kCandidateMark};
  for (const Document& doc : batch) {
    for (const auto& s : doc.sentences) {
      for (const auto& t : s.tokens) active_rows.push_back(model.vocab.lookup(t));
    }
    if (variant == Variant::dp_feature && labels) {
      for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
        active_rows.push_back(Vocabulary::content_mark(labels->at(doc.id, s)));
      }
    }
  }

  const bool piecewise = kind == LossKind::ranking;
  const auto encoded = encode_batch(model, batch, kind, variant, labels);
  const std::vector<bool> base_pattern = piecewise ? detail::relu_pattern(model, encoded, variant) : std::vector<bool>{};
  auto smooth_at = [&](const RankingModel& m) { return !piecewise || detail::relu_pattern(m, encoded, variant) == base_pattern; };

  double worst = 0.0;
  auto probe_tensors = probe.params.tensors();
  auto grad_tensors = analytic.gradients.tensors();
  for (std::size_t t = 0; t < Parameters::kNumTensors; ++t) {
    Tensor& tensor = *probe_tensors[t];
    const bool exhaustive = tensor.size() <= coords_per_tensor;
    auto draw = [&](bool active) {
      if (active) return active_rows[rng.below(active_rows.size())] * tensor.cols + rng.below(tensor.cols);
      return rng.below(tensor.size());
    };
    std::vector<std::pair<std::size_t, bool>> coords;  // (index, drawn from active rows)
    if (exhaustive) {
      for (std::size_t i = 0; i < tensor.size(); ++i) coords.push_back({i, false});
    } else {
      for (std::size_t i = 0; i < coords_per_tensor; ++i) coords.push_back({draw(false), false});
    }
    if (t == 0) {
      for (std::size_t i = 0; i < coords_per_tensor; ++i) coords.push_back({draw(true), true});
    }
    std::size_t redraws = 0;
    for (std::size_t c = 0; c < coords.size(); ++c) {
      const std::size_t idx = coords[c].first;
      const double saved = tensor.data[idx];
      tensor.data[idx] = saved + step;
      const double plus = compute_loss(probe, batch, kind, variant, labels);
      bool smooth = smooth_at(probe);
      tensor.data[idx] = saved - step;
      const double minus = compute_loss(probe, batch, kind, variant, labels);
      smooth = smooth && smooth_at(probe);
      tensor.data[idx] = saved;
      if (!smooth) {
        const bool can_redraw = !(exhaustive && !coords[c].second) && redraws < 10 * coords_per_tensor;
        if (can_redraw) {
          ++redraws;
          coords.push_back({draw(coords[c].second), coords[c].second});
        }
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = grad_tensors[t]->data[idx];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  RankingModel model;
  Json training_config;  // echo of the configuration that produced the model
  std::uint64_t seed = 0;
};

inline constexpr int kCheckpointFormatVersion = 1;

inline Json checkpoint_to_json(const Checkpoint& ck) {
  Json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["hyperparameters"] = {{"embedding_dim", ck.model.hyper.embedding_dim},
                          {"hidden_dim", ck.model.hyper.hidden_dim},
                          {"feature_dim", ck.model.hyper.feature_dim()}};
  j["vocabulary"] = ck.model.vocab.tokens();
  Json params;
  auto tensors = ck.model.params.tensors();
  for (std::size_t t = 0; t < Parameters::kNumTensors; ++t) {
    params[std::string(Parameters::kNames[t])] = {{"shape", {tensors[t]->rows, tensors[t]->cols}},
                                                  {"data", tensors[t]->data}};
  }
  j["parameters"] = std::move(params);
  j["training_config"] = ck.training_config;
  j["seed"] = ck.seed;
  return j;
}

inline Checkpoint checkpoint_from_json(const Json& j) {
  if (j.at("format_version").get<int>() != kCheckpointFormatVersion) throw Error("unsupported checkpoint format version");
  Checkpoint ck;
  ck.model.hyper.embedding_dim = j.at("hyperparameters").at("embedding_dim").get<std::size_t>();
  ck.model.hyper.hidden_dim = j.at("hyperparameters").at("hidden_dim").get<std::size_t>();
  ck.model.vocab = Vocabulary(j.at("vocabulary").get<std::vector<std::string>>());
  ck.model.params = Parameters::zeros(ck.model.vocab.size(), ck.model.hyper);
  auto tensors = ck.model.params.tensors();
  for (std::size_t t = 0; t < Parameters::kNumTensors; ++t) {
    const Json& entry = j.at("parameters").at(std::string(Parameters::kNames[t]));
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[0] != tensors[t]->rows || shape[1] != tensors[t]->cols) {
      throw Error("checkpoint tensor '" + std::string(Parameters::kNames[t]) + "' has the wrong shape");
    }
    tensors[t]->data = entry.at("data").get<std::vector<double>>();
    if (tensors[t]->data.size() != tensors[t]->rows * tensors[t]->cols) {
      throw Error("checkpoint tensor '" + std::string(Parameters::kNames[t]) + "' has the wrong length");
    }
  }
  if (!ck.model.params.all_finite()) throw Error("checkpoint contains non-finite parameters");
  ck.training_config = j.at("training_config");
  ck.seed = j.at("seed").get<std::uint64_t>();
  return ck;
}

}  // namespace tdg
