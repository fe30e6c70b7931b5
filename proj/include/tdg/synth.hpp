#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tdg/corpus.hpp"
#include "tdg/error.hpp"
#include "tdg/random.hpp"

namespace tdg {

using Range = std::pair<std::size_t, std::size_t>;
using PerType = std::array<double, kNumContentTypes>;

// Generator settings. Parent-class probabilities are indexed by the child
// sentence's content type; whatever a row leaves over goes to the remaining
// class (other timex for timexes, cross-sentence timex for events).
struct SynthConfig {
  std::size_t documents = 20;
  std::string id_prefix = "doc";
  Range sentences{4, 8};
  Range timexes_per_sentence{0, 1};
  Range events_per_sentence{1, 1};
  Range noise_tokens{4, 8};
  std::size_t noise_vocabulary = 200;
  std::size_t event_vocabulary = 100;
  PerType content_type_weights{0.16, 0.06, 0.12, 0.22, 0.12, 0.02, 0.14, 0.10, 0.06};

  // Each sentence carries one cue token drawn from `cue_variants` tokens
  // reserved for its content type.
  std::size_t cue_variants = 1;

  // Timex parent classes: DCT, ROOT, remainder nearest preceding timex.
  PerType timex_dct{0.865, 0.889, 0.819, 0.798, 0.309, 1.0, 0.888, 0.884, 0.667};
  PerType timex_root{0.085, 0.044, 0.090, 0.146, 0.661, 0.0, 0.088, 0.109, 0.250};

  // Event reference timex classes: DCT, same-sentence timex, remainder cross-sentence timex.
  PerType event_dct{0.584, 0.601, 0.543, 0.636, 0.344, 0.735, 0.808, 0.756, 0.690};
  PerType event_intra{0.304, 0.175, 0.287, 0.171, 0.523, 0.060, 0.071, 0.158, 0.200};

  // Event reference event classes: NO_EVENT, same-sentence event, remainder cross-sentence event.
  double event_ref_none = 0.3;
  double event_ref_intra = 0.1;

  // Probability that a cross-sentence parent comes from a sentence of the
  // child's content type or a C2 sentence (the nearest such); otherwise the
  // nearest parent from any other sentence.
  double cross_compatible = 0.7;

  // Probability that a mention's span carries a token naming its parent
  // class (stand-in for tense and anchoring morphology); otherwise a neutral
  // token takes its place.
  double class_cue = 1.0;

  void validate() const {
    auto range_ok = [](const Range& r) { return r.first <= r.second; };
    if (documents == 0) throw Error("synth config: documents must be positive");
    if (!range_ok(sentences) || sentences.first == 0) throw Error("synth config: sentences range must be >= 1");
    if (!range_ok(timexes_per_sentence) || !range_ok(events_per_sentence) || !range_ok(noise_tokens)) {
      throw Error("synth config: inverted range");
    }
    if (noise_vocabulary == 0 || event_vocabulary == 0 || cue_variants == 0) {
      throw Error("synth config: vocabulary sizes must be positive");
    }
    double total = 0.0;
    for (double w : content_type_weights) {
      if (w < 0.0) throw Error("synth config: negative content type weight");
      total += w;
    }
    if (total <= 0.0) throw Error("synth config: content type weights sum to zero");
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    for (std::size_t t = 0; t < kNumContentTypes; ++t) {
      if (!prob(timex_dct[t]) || !prob(timex_root[t]) || timex_dct[t] + timex_root[t] > 1.0 + 1e-9 ||
          !prob(event_dct[t]) || !prob(event_intra[t]) || event_dct[t] + event_intra[t] > 1.0 + 1e-9) {
        throw Error("synth config: parent class probabilities out of range");
      }
    }
    if (!prob(event_ref_none) || !prob(event_ref_intra) || event_ref_none + event_ref_intra > 1.0 + 1e-9 ||
        !prob(cross_compatible) || !prob(class_cue)) {
      throw Error("synth config: probability out of range");
    }
  }
};

namespace detail {

inline Json range_json(const Range& r) { return Json::array({r.first, r.second}); }
inline Json per_type_json(const PerType& p) {
  Json j;
  for (std::size_t t = 0; t < kNumContentTypes; ++t) j[std::string(kContentTypeNames[t])] = p[t];
  return j;
}
inline Range range_from(const Json& j) {
  auto v = j.get<std::vector<std::size_t>>();
  if (v.size() != 2) throw Error("synth config: ranges are [min, max]");
  return {v[0], v[1]};
}
inline PerType per_type_from(const Json& j, PerType base) {
  if (j.is_array()) {
    auto v = j.get<std::vector<double>>();
    if (v.size() != kNumContentTypes) throw Error("synth config: per-type arrays need 9 entries");
    std::copy(v.begin(), v.end(), base.begin());
    return base;
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto t = parse_content_type(it.key());
    if (!t) throw Error("synth config: unknown content type '" + it.key() + "'");
    base[static_cast<std::size_t>(*t)] = it.value().get<double>();
  }
  return base;
}

}  // namespace detail

inline Json synth_config_to_json(const SynthConfig& c) {
  Json j;
  j["documents"] = c.documents;
  j["id_prefix"] = c.id_prefix;
  j["sentences"] = detail::range_json(c.sentences);
  j["timexes_per_sentence"] = detail::range_json(c.timexes_per_sentence);
  j["events_per_sentence"] = detail::range_json(c.events_per_sentence);
  j["noise_tokens"] = detail::range_json(c.noise_tokens);
  j["noise_vocabulary"] = c.noise_vocabulary;
  j["event_vocabulary"] = c.event_vocabulary;
  j["content_type_weights"] = detail::per_type_json(c.content_type_weights);
  j["cue_variants"] = c.cue_variants;
  j["timex_dct"] = detail::per_type_json(c.timex_dct);
  j["timex_root"] = detail::per_type_json(c.timex_root);
  j["event_dct"] = detail::per_type_json(c.event_dct);
  j["event_intra"] = detail::per_type_json(c.event_intra);
  j["event_ref_none"] = c.event_ref_none;
  j["event_ref_intra"] = c.event_ref_intra;
  j["cross_compatible"] = c.cross_compatible;
  j["class_cue"] = c.class_cue;
  return j;
}

// Overlays keys present in `j` onto `base`. Unknown keys are rejected.
inline SynthConfig synth_config_from_json(const Json& j, SynthConfig base = {}) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const Json& v = it.value();
    if (k == "documents") base.documents = v.get<std::size_t>();
    else if (k == "id_prefix") base.id_prefix = v.get<std::string>();
    else if (k == "sentences") base.sentences = detail::range_from(v);
    else if (k == "timexes_per_sentence") base.timexes_per_sentence = detail::range_from(v);
    else if (k == "events_per_sentence") base.events_per_sentence = detail::range_from(v);
    else if (k == "noise_tokens") base.noise_tokens = detail::range_from(v);
    else if (k == "noise_vocabulary") base.noise_vocabulary = v.get<std::size_t>();
    else if (k == "event_vocabulary") base.event_vocabulary = v.get<std::size_t>();
    else if (k == "content_type_weights") base.content_type_weights = detail::per_type_from(v, base.content_type_weights);
    else if (k == "cue_variants") base.cue_variants = v.get<std::size_t>();
    else if (k == "timex_dct") base.timex_dct = detail::per_type_from(v, base.timex_dct);
    else if (k == "timex_root") base.timex_root = detail::per_type_from(v, base.timex_root);
    else if (k == "event_dct") base.event_dct = detail::per_type_from(v, base.event_dct);
    else if (k == "event_intra") base.event_intra = detail::per_type_from(v, base.event_intra);
    else if (k == "event_ref_none") base.event_ref_none = v.get<double>();
    else if (k == "event_ref_intra") base.event_ref_intra = v.get<double>();
    else if (k == "cross_compatible") base.cross_compatible = v.get<double>();
    else if (k == "class_cue") base.class_cue = v.get<double>();
    else throw Error("synth config: unknown key '" + k + "'");
  }
  return base;
}

struct SyntheticData {
  Corpus corpus;
  DpLabelMap labels;
};

namespace detail {

inline std::string cue_token(ContentType t, std::size_t variant) {
  return "cue_" + lowercase(to_string(t)) + "_" + std::to_string(variant);
}

inline bool compatible(ContentType child, ContentType parent) {
  return parent == child || parent == ContentType::C2;
}

struct Draft {
  MentionKind kind;
  std::size_t sentence;
  std::size_t order;  // position in document order
  std::string head;
  std::string timex_class;  // class cue for timex_ref
  std::string event_class;  // class cue for event_ref (events only)
  NodeRef timex_parent;
  NodeRef event_parent;
};

// Nearest mention of `kind` in a sentence other than the child's,
// restricted by `want_compatible` (compatible vs incompatible sentences),
// optionally preceding only. Ties on distance prefer the earlier sentence,
// then the first mention of the sentence.
inline std::optional<std::size_t> nearest_cross(const std::vector<Draft>& drafts, const std::vector<ContentType>& types,
                                                std::size_t child, MentionKind kind,
                                                std::optional<bool> want_compatible, bool preceding_only) {
  const std::size_t cs = drafts[child].sentence;
  std::optional<std::size_t> best;
  std::size_t best_dist = 0;
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    const Draft& d = drafts[i];
    if (d.kind != kind || d.sentence == cs) continue;
    if (preceding_only && d.sentence > cs) continue;
    if (want_compatible && compatible(types[cs], types[d.sentence]) != *want_compatible) continue;
    const std::size_t dist = d.sentence > cs ? d.sentence - cs : cs - d.sentence;
    const bool better = !best || dist < best_dist ||
                        (dist == best_dist && d.sentence < drafts[*best].sentence);
    if (better) {
      best = i;
      best_dist = dist;
    }
  }
  return best;
}

// Cross-sentence parent: compatible sentence with probability
// `p_compatible`, else incompatible; falls back to the other group, then none.
inline std::optional<std::size_t> pick_cross(Rng& rng, const std::vector<Draft>& drafts,
                                             const std::vector<ContentType>& types, std::size_t child,
                                             MentionKind kind, double p_compatible, bool preceding_only) {
  const bool want = rng.bernoulli(p_compatible);
  if (auto p = nearest_cross(drafts, types, child, kind, want, preceding_only)) return p;
  return nearest_cross(drafts, types, child, kind, !want, preceding_only);
}

}  // namespace detail

// Deterministic given (config, seed). Every document passes
// validate_document: mention parents precede their child in document order
// wherever a cycle could otherwise form.
inline SyntheticData generate_synthetic_corpus(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  SyntheticData out;
  for (std::size_t di = 0; di < config.documents; ++di) {
    Document doc;
    doc.id = config.id_prefix + "_" + std::to_string(di);
    const std::size_t month = rng.between(1, 12), day = rng.between(1, 28);
    doc.dct = "2020-" + std::string(month < 10 ? "0" : "") + std::to_string(month) + "-" +
              std::string(day < 10 ? "0" : "") + std::to_string(day);
    const std::size_t num_sentences = rng.between(config.sentences.first, config.sentences.second);
    std::vector<ContentType> types;
    for (std::size_t s = 0; s < num_sentences; ++s) types.push_back(content_type_at(rng.categorical(config.content_type_weights)));

    // Mentions in document order: per sentence, timexes then events.
    std::vector<detail::Draft> drafts;
    for (std::size_t s = 0; s < num_sentences; ++s) {
      const std::size_t nt = rng.between(config.timexes_per_sentence.first, config.timexes_per_sentence.second);
      const std::size_t ne = rng.between(config.events_per_sentence.first, config.events_per_sentence.second);
      for (std::size_t i = 0; i < nt + ne; ++i) {
        detail::Draft d{i < nt ? MentionKind::timex : MentionKind::event, s, drafts.size(), {}, {}, {}, {}, {}};
        d.head = d.kind == MentionKind::timex ? "time_" + std::to_string(rng.below(config.event_vocabulary))
                                              : "ev_" + std::to_string(rng.below(config.event_vocabulary));
        drafts.push_back(std::move(d));
      }
    }

    // Parents.
    for (std::size_t i = 0; i < drafts.size(); ++i) {
      detail::Draft& d = drafts[i];
      const auto t = static_cast<std::size_t>(types[d.sentence]);
      if (d.kind == MentionKind::timex) {
        const std::array<double, 3> w{config.timex_dct[t], config.timex_root[t],
                                      std::max(0.0, 1.0 - config.timex_dct[t] - config.timex_root[t])};
        std::size_t cls = rng.categorical(w);
        d.timex_parent = NodeRef::meta(cls == 1 ? MetaNode::ROOT : MetaNode::DCT);
        if (cls == 2) {
          std::optional<std::size_t> prev;
          for (std::size_t j = i; j-- > 0;) {
            if (drafts[j].kind == MentionKind::timex) {
              prev = j;
              break;
            }
          }
          if (prev) {
            d.timex_parent = NodeRef::mention(*prev);
          } else {
            cls = 0;
          }
        }
        d.timex_class = cls == 0 ? "tcls_dct" : cls == 1 ? "tcls_root" : "tcls_prev";
        continue;
      }

      // Reference timex: DCT, same-sentence timex, or cross-sentence timex.
      const std::array<double, 3> w{config.event_dct[t], config.event_intra[t],
                                    std::max(0.0, 1.0 - config.event_dct[t] - config.event_intra[t])};
      std::size_t cls = rng.categorical(w);
      d.timex_parent = NodeRef::meta(MetaNode::DCT);
      if (cls == 1) {
        std::optional<std::size_t> local;
        for (std::size_t j = 0; j < drafts.size(); ++j) {
          if (drafts[j].kind == MentionKind::timex && drafts[j].sentence == d.sentence) {
            local = j;
            break;
          }
        }
        if (local) {
          d.timex_parent = NodeRef::mention(*local);
        } else {
          cls = 2;
        }
      }
      if (cls == 2) {
        auto p = detail::pick_cross(rng, drafts, types, i, MentionKind::timex, config.cross_compatible, false);
        if (p) {
          d.timex_parent = NodeRef::mention(*p);
        } else {
          cls = 0;
        }
      }
      d.timex_class = cls == 0 ? "ecls_dct" : cls == 1 ? "ecls_local" : "ecls_far";

      // Reference event: NO_EVENT, preceding same-sentence event, or preceding cross-sentence event.
      const std::array<double, 3> we{config.event_ref_none, config.event_ref_intra,
                                     std::max(0.0, 1.0 - config.event_ref_none - config.event_ref_intra)};
      std::size_t ecls = rng.categorical(we);
      d.event_parent = NodeRef::meta(MetaNode::NO_EVENT);
      if (ecls == 1) {
        std::optional<std::size_t> prev;
        for (std::size_t j = i; j-- > 0;) {
          if (drafts[j].sentence != d.sentence) break;
          if (drafts[j].kind == MentionKind::event) {
            prev = j;
            break;
          }
        }
        if (prev) {
          d.event_parent = NodeRef::mention(*prev);
        } else {
          ecls = 2;
        }
      }
      if (ecls == 2) {
        auto p = detail::pick_cross(rng, drafts, types, i, MentionKind::event, config.cross_compatible, true);
        if (p) {
          d.event_parent = NodeRef::mention(*p);
        } else {
          ecls = 0;
        }
      }
      d.event_class = ecls == 0 ? "rcls_none" : ecls == 1 ? "rcls_local" : "rcls_far";
    }

    // Surface tokens. A class cue is replaced by a neutral token with
    // probability 1 - class_cue.
    auto cue_or_neutral = [&](const std::string& cue, const char* neutral) {
      return rng.bernoulli(config.class_cue) ? cue : std::string(neutral);
    };
    std::size_t next = 0;
    std::vector<std::size_t> id_counter(2, 0);
    for (std::size_t s = 0; s < num_sentences; ++s) {
      Sentence sentence{s, {}};
      sentence.tokens.push_back(detail::cue_token(types[s], rng.below(config.cue_variants)));
      const std::size_t noise = rng.between(config.noise_tokens.first, config.noise_tokens.second);
      for (std::size_t k = 0; k < noise; ++k) sentence.tokens.push_back("w" + std::to_string(rng.below(config.noise_vocabulary)));
      while (next < drafts.size() && drafts[next].sentence == s) {
        const detail::Draft& d = drafts[next];
        Mention m;
        m.kind = d.kind;
        m.sentence = s;
        m.id = (d.kind == MentionKind::timex ? "t" : "e") + std::to_string(++id_counter[d.kind == MentionKind::timex]);
        m.start = sentence.tokens.size();
        sentence.tokens.push_back(cue_or_neutral(d.timex_class, d.kind == MentionKind::timex ? "tcls_x" : "ecls_x"));
        if (d.kind == MentionKind::event) sentence.tokens.push_back(cue_or_neutral(d.event_class, "rcls_x"));
        sentence.tokens.push_back(d.head);
        m.end = sentence.tokens.size();
        sentence.tokens.push_back("w" + std::to_string(rng.below(config.noise_vocabulary)));
        doc.mentions.push_back(std::move(m));
        ++next;
      }
      doc.sentences.push_back(std::move(sentence));
      out.labels.set(doc.id, s, types[s]);
    }
    for (std::size_t i = 0; i < drafts.size(); ++i) {
      const detail::Draft& d = drafts[i];
      doc.gold_edges.push_back({i, Slot::timex_ref, d.timex_parent,
                                d.timex_parent.is_meta() ? std::optional<Relation>(Relation::depend_on)
                                                         : std::optional<Relation>(Relation::overlap)});
      if (d.kind == MentionKind::event) doc.gold_edges.push_back({i, Slot::event_ref, d.event_parent, std::nullopt});
    }
    if (auto v = validate_document(doc); !v.empty()) {
      throw ValidationError("generated document '" + doc.id + "' is invalid", std::move(v));
    }
    out.corpus.push_back(std::move(doc));
  }
  return out;
}

}  // namespace tdg
