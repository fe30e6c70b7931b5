#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "tdg/corpus.hpp"

namespace tdg {

// One ranking problem: a child mention paired with one reference type.
struct SlotKey {
  std::size_t child = 0;
  Slot slot = Slot::timex_ref;

  // Canonical slot order: document order of the child, timex_ref first.
  auto operator<=>(const SlotKey&) const = default;
};

// All slot instances of a document in canonical order.
inline std::vector<SlotKey> slot_instances(const Document& doc) {
  std::vector<SlotKey> slots;
  for (std::size_t i = 0; i < doc.mentions.size(); ++i) {
    slots.push_back({i, Slot::timex_ref});
    if (doc.mentions[i].kind == MentionKind::event) slots.push_back({i, Slot::event_ref});
  }
  return slots;
}

// Legal parents of (child, slot) in canonical order: meta nodes first, then
// mentions in document order, excluding the child itself.
inline std::vector<NodeRef> candidate_set(const Document& doc, std::size_t child, Slot slot) {
  if (child >= doc.mentions.size()) throw Error("candidate_set: no mention #" + std::to_string(child));
  const MentionKind kind = doc.mentions[child].kind;
  if (!slot_applies(kind, slot)) {
    throw Error("candidate_set: timex '" + doc.mentions[child].id + "' has no event_ref slot");
  }
  std::vector<NodeRef> out;
  MentionKind want = MentionKind::timex;
  if (slot == Slot::timex_ref) {
    out.push_back(NodeRef::meta(MetaNode::DCT));
    if (kind == MentionKind::timex) out.push_back(NodeRef::meta(MetaNode::ROOT));
  } else {
    out.push_back(NodeRef::meta(MetaNode::NO_EVENT));
    want = MentionKind::event;
  }
  for (std::size_t i = 0; i < doc.mentions.size(); ++i) {
    if (i != child && doc.mentions[i].kind == want) out.push_back(NodeRef::mention(i));
  }
  return out;
}

inline std::vector<NodeRef> candidate_set(const Document& doc, std::string_view child, Slot slot) {
  auto index = find_mention(doc, child);
  if (!index) throw Error("candidate_set: unknown mention '" + std::string(child) + "'");
  return candidate_set(doc, *index, slot);
}

// Parent assignment per slot. Meta nodes are sinks, so only mention parents
// contribute edges to the cycle structure.
struct TemporalDependencyGraph {
  std::vector<std::optional<NodeRef>> timex_ref;
  std::vector<std::optional<NodeRef>> event_ref;

  TemporalDependencyGraph() = default;
  explicit TemporalDependencyGraph(std::size_t num_mentions)
      : timex_ref(num_mentions), event_ref(num_mentions) {}

  std::optional<NodeRef>& at(std::size_t child, Slot slot) {
    return slot == Slot::timex_ref ? timex_ref[child] : event_ref[child];
  }
  const std::optional<NodeRef>& at(std::size_t child, Slot slot) const {
    return slot == Slot::timex_ref ? timex_ref[child] : event_ref[child];
  }

  bool operator==(const TemporalDependencyGraph&) const = default;
};

inline TemporalDependencyGraph gold_graph(const Document& doc) {
  GoldParents g = gold_parents(doc);
  TemporalDependencyGraph graph;
  graph.timex_ref = std::move(g.timex_ref);
  graph.event_ref = std::move(g.event_ref);
  return graph;
}

// True iff adding child -> parent closes a directed cycle, i.e. the child is
// already reachable from the parent.
inline bool would_create_cycle(const TemporalDependencyGraph& graph, NodeRef child, NodeRef parent) {
  if (parent.is_meta() || child.is_meta()) return false;
  const std::size_t target = child.mention_index();
  const std::size_t n = graph.timex_ref.size();
  std::vector<bool> seen(n, false);
  std::vector<std::size_t> stack{parent.mention_index()};
  while (!stack.empty()) {
    std::size_t node = stack.back();
    stack.pop_back();
    if (node == target) return true;
    if (node >= n || seen[node]) continue;
    seen[node] = true;
    for (const auto* edges : {&graph.timex_ref, &graph.event_ref}) {
      const auto& p = (*edges)[node];
      if (p && !p->is_meta()) stack.push_back(p->mention_index());
    }
  }
  return false;
}

struct Candidate {
  NodeRef node;
  double score = 0.0;

  bool operator==(const Candidate&) const = default;
};

// Scores for one slot, kept in canonical order: descending score, ties by
// ascending canonical candidate index.
struct ScoredCandidates {
  std::size_t child = 0;
  Slot slot = Slot::timex_ref;
  std::vector<Candidate> candidates;

  SlotKey key() const { return {child, slot}; }
  const Candidate& top() const { return candidates.front(); }

  bool operator==(const ScoredCandidates&) const = default;
};

inline bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.node.canonical_index() < b.node.canonical_index();
}

inline void sort_canonical(ScoredCandidates& scored) {
  std::sort(scored.candidates.begin(), scored.candidates.end(), ranks_before);
}

enum class DecodeOrder : std::uint8_t {
  score,     // one pass, slots by descending top-candidate score
  document,  // one pass, slots in canonical document order
  rescan,    // repeatedly take the best feasible (slot, candidate) pair overall
};

inline std::string_view to_string(DecodeOrder o) {
  switch (o) {
    case DecodeOrder::score: return "score";
    case DecodeOrder::document: return "document";
    case DecodeOrder::rescan: return "rescan";
  }
  return "?";
}

inline std::optional<DecodeOrder> parse_decode_order(std::string_view s) {
  if (s == "score") return DecodeOrder::score;
  if (s == "document") return DecodeOrder::document;
  if (s == "rescan") return DecodeOrder::rescan;
  return std::nullopt;
}

namespace detail {

// Indexes scores by slot and checks they are total, unique, finite, and
// match the candidate sets exactly.
inline std::map<SlotKey, const ScoredCandidates*> index_scores(const Document& doc,
                                                               std::span<const ScoredCandidates> scores) {
  std::map<SlotKey, const ScoredCandidates*> index;
  for (const ScoredCandidates& sc : scores) {
    if (sc.child >= doc.mentions.size()) throw Error("greedy_decode: scores for unknown mention index");
    if (!index.emplace(sc.key(), &sc).second) {
      throw Error("greedy_decode: duplicate scores for slot (" + doc.mentions[sc.child].id + ", " +
                  std::string(to_string(sc.slot)) + ")");
    }
  }
  for (const SlotKey& key : slot_instances(doc)) {
    auto it = index.find(key);
    if (it == index.end()) {
      throw Error("greedy_decode: missing scores for slot (" + doc.mentions[key.child].id + ", " +
                  std::string(to_string(key.slot)) + ")");
    }
    std::vector<NodeRef> expected = candidate_set(doc, key.child, key.slot);
    std::vector<NodeRef> got;
    for (const Candidate& c : it->second->candidates) {
      if (!std::isfinite(c.score)) throw Error("greedy_decode: non-finite score");
      got.push_back(c.node);
    }
    std::sort(got.begin(), got.end());
    if (got != expected) {
      throw Error("greedy_decode: candidates for slot (" + doc.mentions[key.child].id + ", " +
                  std::string(to_string(key.slot)) + ") differ from the candidate set");
    }
  }
  if (index.size() != slot_instances(doc).size()) throw Error("greedy_decode: scores for non-existent slots");
  return index;
}

inline std::vector<Candidate> ranked(const ScoredCandidates& sc) {
  std::vector<Candidate> r = sc.candidates;
  std::sort(r.begin(), r.end(), ranks_before);
  return r;
}

}  // namespace detail

// Builds a cycle-free graph from per-slot scores. Slots are visited once in
// the chosen order; each takes its highest-ranked candidate that keeps the
// partial graph acyclic. Meta candidates are always feasible, so every slot
// is filled.
inline TemporalDependencyGraph greedy_decode(const Document& doc, std::span<const ScoredCandidates> scores,
                                             DecodeOrder order = DecodeOrder::score) {
  auto index = detail::index_scores(doc, scores);
  TemporalDependencyGraph graph(doc.mentions.size());

  std::vector<std::pair<SlotKey, std::vector<Candidate>>> slots;
  for (const auto& [key, sc] : index) slots.emplace_back(key, detail::ranked(*sc));

  if (order == DecodeOrder::rescan) {
    std::vector<bool> done(slots.size(), false);
    for (std::size_t step = 0; step < slots.size(); ++step) {
      std::optional<std::size_t> best_slot;
      Candidate best;
      for (std::size_t s = 0; s < slots.size(); ++s) {
        if (done[s]) continue;
        const NodeRef child = NodeRef::mention(slots[s].first.child);
        for (const Candidate& c : slots[s].second) {
          if (would_create_cycle(graph, child, c.node)) continue;
          // Slots are in canonical order, so strict improvement keeps ties canonical.
          if (!best_slot || c.score > best.score) {
            best_slot = s;
            best = c;
          }
          break;
        }
      }
      done[*best_slot] = true;
      graph.at(slots[*best_slot].first.child, slots[*best_slot].first.slot) = best.node;
    }
    return graph;
  }

  if (order == DecodeOrder::score) {
    std::stable_sort(slots.begin(), slots.end(), [](const auto& a, const auto& b) {
      return a.second.front().score > b.second.front().score;
    });
  }
  for (const auto& [key, ranked] : slots) {
    const NodeRef child = NodeRef::mention(key.child);
    for (const Candidate& c : ranked) {
      if (!would_create_cycle(graph, child, c.node)) {
        graph.at(key.child, key.slot) = c.node;
        break;
      }
    }
  }
  return graph;
}

// Lists broken graph invariants against `doc`; empty iff valid.
inline std::vector<std::string> validate_graph(const Document& doc, const TemporalDependencyGraph& graph) {
  std::vector<std::string> v;
  const std::size_t n = doc.mentions.size();
  if (graph.timex_ref.size() != n || graph.event_ref.size() != n) {
    v.push_back("graph covers " + std::to_string(graph.timex_ref.size()) + " mentions, document has " +
                std::to_string(n));
    return v;
  }
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Mention& m = doc.mentions[i];
    for (Slot slot : {Slot::timex_ref, Slot::event_ref}) {
      const auto& parent = graph.at(i, slot);
      if (!slot_applies(m.kind, slot)) {
        if (parent) v.push_back("timex '" + m.id + "' has an event_ref parent");
        continue;
      }
      if (!parent) {
        v.push_back(std::string(to_string(m.kind)) + " '" + m.id + "' has no " + std::string(to_string(slot)) +
                    " parent");
        continue;
      }
      if (!parent->is_meta() && parent->mention_index() == i) {
        v.push_back(std::string(to_string(m.kind)) + " '" + m.id + "' is its own " +
                    std::string(to_string(slot)) + " parent");
        continue;
      }
      if (!legal_parent(doc, i, slot, *parent)) {
        v.push_back(std::string(to_string(m.kind)) + " '" + m.id + "' has illegal " +
                    std::string(to_string(slot)) + " parent " + node_name(doc, *parent));
        continue;
      }
      if (!parent->is_meta()) out[i].push_back(parent->mention_index());
    }
  }
  for (const auto& cycle : detail::find_cycles(n, out)) v.push_back("cycle " + detail::render_cycle(doc, cycle));
  return v;
}

// Predicted graphs share the gold edge schema, without labels.
inline Json graph_to_json(const Document& doc, const TemporalDependencyGraph& graph) {
  Json j;
  j["id"] = doc.id;
  j["edges"] = Json::array();
  for (const SlotKey& key : slot_instances(doc)) {
    const auto& parent = graph.at(key.child, key.slot);
    if (parent) j["edges"].push_back(edge_to_json(doc, key.child, key.slot, *parent, std::nullopt));
  }
  return j;
}

inline std::string serialize_predictions(const Corpus& corpus, std::span<const TemporalDependencyGraph> graphs) {
  std::string text;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    text += graph_to_json(corpus[i], graphs[i]).dump();
    text += '\n';
  }
  return text;
}

// Reads predicted graphs back, aligned to `corpus` by document id.
inline std::vector<TemporalDependencyGraph> parse_predictions(std::string_view text, const Corpus& corpus,
                                                              std::string_view source = "<predictions>") {
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_id.emplace(corpus[i].id, i);
  std::vector<TemporalDependencyGraph> graphs(corpus.size());
  std::vector<bool> seen(corpus.size(), false);
  std::size_t line_no = 0;
  for (const std::string& line : split(text, '\n')) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = std::string(source) + ":" + std::to_string(line_no) + ": ";
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw Error(where + "malformed prediction: " + e.what());
    }
    const auto id = j.at("id").get<std::string>();
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(where + "prediction for unknown document '" + id + "'");
    if (seen[it->second]) throw Error(where + "duplicate prediction for document '" + id + "'");
    seen[it->second] = true;
    const Document& doc = corpus[it->second];
    TemporalDependencyGraph graph(doc.mentions.size());
    for (const auto& e : j.at("edges")) {
      auto child = find_mention(doc, e.at("child").get<std::string>());
      if (!child) throw Error(where + "unknown child mention");
      const auto slot_name = e.at("slot").get<std::string>();
      Slot slot = slot_name == "event_ref" ? Slot::event_ref : Slot::timex_ref;
      if (slot_name != "event_ref" && slot_name != "timex_ref") throw Error(where + "unknown slot " + slot_name);
      const auto parent_name = e.at("parent").get<std::string>();
      NodeRef parent;
      if (auto meta = parse_meta_node(parent_name)) {
        parent = NodeRef::meta(*meta);
      } else if (auto p = find_mention(doc, parent_name)) {
        parent = NodeRef::mention(*p);
      } else {
        throw Error(where + "unknown parent '" + parent_name + "'");
      }
      graph.at(*child, slot) = parent;
    }
    graphs[it->second] = std::move(graph);
  }
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!seen[i]) throw Error(std::string(source) + ": no prediction for document '" + corpus[i].id + "'");
  }
  return graphs;
}

}  // namespace tdg
