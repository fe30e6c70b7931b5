#pragma once

// Fixtures and independent oracles shared by the unit tests and the
// acceptance runner. Nothing here calls the code paths it is used to check.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "tdg/tdg.hpp"

namespace tdg::oracle {

inline std::filesystem::path data_dir() { return TDG_TEST_DATA_DIR; }

// ---------------------------------------------------------------------------
// Random documents

struct RandomDocOptions {
  std::size_t max_mentions = 10;
  std::size_t min_mentions = 1;
  std::size_t max_sentences = 4;
  bool gold = true;  // attach a random acyclic gold graph
};

// Mentions occupy one token each; sentence s holds the mentions assigned to
// it plus a leading filler token. Gold mention parents always precede the
// child, so the gold graph is acyclic.
inline Document random_document(Rng& rng, const RandomDocOptions& opt, const std::string& id = "r") {
  Document doc;
  doc.id = id;
  doc.dct = "2021-01-01";
  const std::size_t n = rng.between(opt.min_mentions, opt.max_mentions);
  const std::size_t ns = rng.between(1, opt.max_sentences);
  std::vector<std::size_t> sent(n);
  for (auto& s : sent) s = rng.below(ns);
  std::sort(sent.begin(), sent.end());
  for (std::size_t s = 0; s < ns; ++s) doc.sentences.push_back({s, {"filler"}});
  std::size_t timexes = 0, events = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Mention m;
    m.kind = rng.bernoulli(0.5) ? MentionKind::event : MentionKind::timex;
    m.id = (m.kind == MentionKind::event ? "e" + std::to_string(++events) : "t" + std::to_string(++timexes));
    m.sentence = sent[i];
    auto& tokens = doc.sentences[m.sentence].tokens;
    m.start = tokens.size();
    tokens.push_back(m.kind == MentionKind::event ? "happened" : "yesterday");
    m.end = tokens.size();
    doc.mentions.push_back(m);
  }
  if (!opt.gold) return doc;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<NodeRef> timex_opts = {NodeRef::meta(MetaNode::DCT)};
    if (doc.mentions[i].kind == MentionKind::timex) timex_opts.push_back(NodeRef::meta(MetaNode::ROOT));
    std::vector<NodeRef> event_opts = {NodeRef::meta(MetaNode::NO_EVENT)};
    for (std::size_t j = 0; j < i; ++j) {
      (doc.mentions[j].kind == MentionKind::timex ? timex_opts : event_opts).push_back(NodeRef::mention(j));
    }
    doc.gold_edges.push_back({i, Slot::timex_ref, timex_opts[rng.below(timex_opts.size())], std::nullopt});
    if (doc.mentions[i].kind == MentionKind::event) {
      doc.gold_edges.push_back({i, Slot::event_ref, event_opts[rng.below(event_opts.size())], std::nullopt});
    }
  }
  return doc;
}

// Legal parents of a slot, listed directly from the definition.
inline std::vector<NodeRef> legal_parents(const Document& doc, std::size_t child, Slot slot) {
  std::vector<NodeRef> out;
  const bool timex_child = doc.mentions[child].kind == MentionKind::timex;
  if (slot == Slot::timex_ref) {
    out.push_back(NodeRef::meta(MetaNode::DCT));
    if (timex_child) out.push_back(NodeRef::meta(MetaNode::ROOT));
  } else {
    out.push_back(NodeRef::meta(MetaNode::NO_EVENT));
  }
  const MentionKind want = slot == Slot::timex_ref ? MentionKind::timex : MentionKind::event;
  for (std::size_t j = 0; j < doc.mentions.size(); ++j) {
    if (j != child && doc.mentions[j].kind == want) out.push_back(NodeRef::mention(j));
  }
  return out;
}

inline std::vector<std::pair<std::size_t, Slot>> slots_of(const Document& doc) {
  std::vector<std::pair<std::size_t, Slot>> out;
  for (std::size_t i = 0; i < doc.mentions.size(); ++i) {
    out.emplace_back(i, Slot::timex_ref);
    if (doc.mentions[i].kind == MentionKind::event) out.emplace_back(i, Slot::event_ref);
  }
  return out;
}

// Random scores; `levels` > 0 quantizes them so ties are common.
inline std::vector<ScoredCandidates> random_scores(Rng& rng, const Document& doc, std::size_t levels = 0) {
  std::vector<ScoredCandidates> out;
  for (auto [child, slot] : slots_of(doc)) {
    ScoredCandidates sc{child, slot, {}};
    for (NodeRef p : legal_parents(doc, child, slot)) {
      const double s = levels ? static_cast<double>(rng.below(levels)) : rng.uniform(-3.0, 3.0);
      sc.candidates.push_back({p, s});
    }
    out.push_back(std::move(sc));
  }
  return out;
}

// A random legal (possibly cyclic) prediction.
inline TemporalDependencyGraph random_prediction(Rng& rng, const Document& doc) {
  TemporalDependencyGraph g(doc.mentions.size());
  for (auto [child, slot] : slots_of(doc)) {
    auto opts = legal_parents(doc, child, slot);
    g.at(child, slot) = opts[rng.below(opts.size())];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Brute-force graph oracles

// Transitive closure over mention-to-mention edges (Floyd-Warshall).
inline std::vector<std::vector<bool>> closure(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<std::vector<bool>> r(n, std::vector<bool>(n, false));
  for (auto [a, b] : edges) r[a][b] = true;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (r[i][k] && r[k][j]) r[i][j] = true;
  return r;
}

inline std::vector<std::pair<std::size_t, std::size_t>> mention_edges(const TemporalDependencyGraph& g) {
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t i = 0; i < g.timex_ref.size(); ++i) {
    for (const auto* v : {&g.timex_ref, &g.event_ref}) {
      const auto& p = (*v)[i];
      if (p && !p->is_meta()) e.emplace_back(i, p->mention_index());
    }
  }
  return e;
}

inline bool has_cycle(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  auto r = closure(n, edges);
  for (std::size_t i = 0; i < n; ++i)
    if (r[i][i]) return true;
  return false;
}

inline bool creates_cycle_bruteforce(const TemporalDependencyGraph& g, std::size_t child, NodeRef parent) {
  if (parent.is_meta()) return false;
  auto edges = mention_edges(g);
  edges.emplace_back(child, parent.mention_index());
  return has_cycle(g.timex_ref.size(), edges);
}

// Reference single-pass decoder written from the rule statement: slots in
// order of descending best score (ties: child document order, timex_ref
// first), each taking its best candidate (ties: meta DCT, ROOT, NO_EVENT,
// then mentions in document order) that keeps the mention graph acyclic.
inline TemporalDependencyGraph reference_decode(const Document& doc, const std::vector<ScoredCandidates>& scores) {
  auto rank_key = [](NodeRef n) {
    if (n.is_meta(MetaNode::DCT)) return std::size_t{0};
    if (n.is_meta(MetaNode::ROOT)) return std::size_t{1};
    if (n.is_meta(MetaNode::NO_EVENT)) return std::size_t{2};
    return 3 + n.mention_index();
  };
  struct Turn {
    double best;
    std::size_t child;
    int slot;
    std::vector<Candidate> cands;
  };
  std::vector<Turn> turns;
  for (const auto& sc : scores) {
    Turn t{-1e300, sc.child, sc.slot == Slot::timex_ref ? 0 : 1, sc.candidates};
    for (const auto& c : sc.candidates) t.best = std::max(t.best, c.score);
    std::sort(t.cands.begin(), t.cands.end(), [&](const Candidate& a, const Candidate& b) {
      return std::make_tuple(-a.score, rank_key(a.node)) < std::make_tuple(-b.score, rank_key(b.node));
    });
    turns.push_back(std::move(t));
  }
  std::sort(turns.begin(), turns.end(), [](const Turn& a, const Turn& b) {
    return std::make_tuple(-a.best, a.child, a.slot) < std::make_tuple(-b.best, b.child, b.slot);
  });
  TemporalDependencyGraph g(doc.mentions.size());
  for (const Turn& t : turns) {
    for (const auto& c : t.cands) {
      if (!creates_cycle_bruteforce(g, t.child, c.node)) {
        g.at(t.child, t.slot == 0 ? Slot::timex_ref : Slot::event_ref) = c.node;
        break;
      }
    }
  }
  return g;
}

// Replays a decode in score order and checks that each slot received the
// best candidate feasible at its turn. Returns an empty string on success.
inline std::string check_feasible_at_turn(const Document& doc, const std::vector<ScoredCandidates>& scores,
                                          const TemporalDependencyGraph& out) {
  std::vector<const ScoredCandidates*> order;
  for (const auto& sc : scores) order.push_back(&sc);
  auto top = [](const ScoredCandidates* sc) {
    double b = -1e300;
    for (const auto& c : sc->candidates) b = std::max(b, c.score);
    return b;
  };
  std::stable_sort(order.begin(), order.end(), [&](const ScoredCandidates* a, const ScoredCandidates* b) {
    if (top(a) != top(b)) return top(a) > top(b);
    return std::make_pair(a->child, a->slot) < std::make_pair(b->child, b->slot);
  });
  TemporalDependencyGraph partial(doc.mentions.size());
  for (const auto* sc : order) {
    const auto& chosen = out.at(sc->child, sc->slot);
    if (!chosen) return "slot left empty";
    if (creates_cycle_bruteforce(partial, sc->child, *chosen)) return "chosen parent infeasible at its turn";
    double chosen_score = 0.0;
    for (const auto& c : sc->candidates)
      if (c.node == *chosen) chosen_score = c.score;
    for (const auto& c : sc->candidates) {
      const bool better = c.score > chosen_score ||
                          (c.score == chosen_score && c.node.canonical_index() < chosen->canonical_index());
      if (better && !creates_cycle_bruteforce(partial, sc->child, c.node)) {
        return "a better feasible candidate was skipped";
      }
    }
    partial.at(sc->child, sc->slot) = *chosen;
  }
  return {};
}

// ---------------------------------------------------------------------------
// Brute-force metric counter

struct BruteCounts {
  std::size_t total = 0, correct = 0;
  std::array<std::size_t, 3> gold{}, predicted{}, hit{};
};

// Category index: 0 intra, 1 cross, 2 no parent.
inline std::size_t brute_category(const Document& doc, std::size_t child, NodeRef parent) {
  if (parent.is_meta()) return 2;
  return doc.mentions[parent.mention_index()].sentence == doc.mentions[child].sentence ? 0 : 1;
}

inline BruteCounts brute_count(const std::vector<TemporalDependencyGraph>& pred, const Corpus& gold) {
  BruteCounts c;
  for (std::size_t d = 0; d < gold.size(); ++d) {
    const Document& doc = gold[d];
    std::map<std::pair<std::size_t, Slot>, NodeRef> g;
    for (const auto& e : doc.gold_edges) g[{e.child, e.slot}] = e.parent;
    for (auto [child, slot] : slots_of(doc)) {
      const NodeRef gp = g.at({child, slot});
      const NodeRef pp = *pred[d].at(child, slot);
      ++c.total;
      ++c.gold[brute_category(doc, child, gp)];
      ++c.predicted[brute_category(doc, child, pp)];
      if (gp == pp) {
        ++c.correct;
        ++c.hit[brute_category(doc, child, gp)];
      }
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Analyzer fixture: three documents whose tables are counted by hand in the
// tests.

inline Corpus analyzer_fixture_corpus() { return parse_corpus(data_dir() / "analyzer_fixture.jsonl"); }

inline DpLabelMap analyzer_fixture_labels(const Corpus& corpus) {
  return load_dp_labels(data_dir() / "analyzer_fixture.dp.tsv", corpus);
}

}  // namespace tdg::oracle
