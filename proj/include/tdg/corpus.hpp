#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tdg/error.hpp"
#include "tdg/io.hpp"

namespace tdg {

using Json = nlohmann::ordered_json;

// Sentence-level discourse content types, plus NA for unlabelled sentences.
enum class ContentType : std::uint8_t { M1, M2, C1, C2, D1, D2, D3, D4, NA };

inline constexpr std::size_t kNumContentTypes = 9;
inline constexpr std::array<std::string_view, kNumContentTypes> kContentTypeNames = {
    "M1", "M2", "C1", "C2", "D1", "D2", "D3", "D4", "NA"};

inline std::string_view to_string(ContentType t) {
  return kContentTypeNames[static_cast<std::size_t>(t)];
}

inline std::optional<ContentType> parse_content_type(std::string_view s) {
  for (std::size_t i = 0; i < kNumContentTypes; ++i) {
    if (kContentTypeNames[i] == s) return static_cast<ContentType>(i);
  }
  return std::nullopt;
}

inline ContentType content_type_at(std::size_t i) { return static_cast<ContentType>(i); }

enum class MentionKind : std::uint8_t { event, timex };
enum class Slot : std::uint8_t { timex_ref, event_ref };
enum class MetaNode : std::uint8_t { DCT, ROOT, NO_EVENT };
enum class Relation : std::uint8_t { before, after, overlap, included, depend_on };

inline constexpr std::size_t kNumMetaNodes = 3;

inline std::string_view to_string(MentionKind k) { return k == MentionKind::event ? "event" : "timex"; }
inline std::string_view to_string(Slot s) { return s == Slot::timex_ref ? "timex_ref" : "event_ref"; }

inline std::string_view to_string(MetaNode m) {
  switch (m) {
    case MetaNode::DCT: return "DCT";
    case MetaNode::ROOT: return "ROOT";
    case MetaNode::NO_EVENT: return "NO_EVENT";
  }
  return "?";
}

inline std::string_view to_string(Relation r) {
  switch (r) {
    case Relation::before: return "before";
    case Relation::after: return "after";
    case Relation::overlap: return "overlap";
    case Relation::included: return "included";
    case Relation::depend_on: return "depend_on";
  }
  return "?";
}

inline std::optional<MetaNode> parse_meta_node(std::string_view s) {
  if (s == "DCT") return MetaNode::DCT;
  if (s == "ROOT") return MetaNode::ROOT;
  if (s == "NO_EVENT") return MetaNode::NO_EVENT;
  return std::nullopt;
}

inline std::optional<Relation> parse_relation(std::string_view s) {
  for (auto r : {Relation::before, Relation::after, Relation::overlap, Relation::included,
                 Relation::depend_on}) {
    if (to_string(r) == s) return r;
  }
  return std::nullopt;
}

// A graph node: one of the three meta nodes or a mention, addressed by its
// index in Document::mentions. The packed code doubles as the canonical
// candidate order (meta nodes DCT, ROOT, NO_EVENT first, then mentions in
// document order).
class NodeRef {
 public:
  constexpr NodeRef() = default;

  static constexpr NodeRef meta(MetaNode m) { return NodeRef(static_cast<std::uint32_t>(m)); }
  static constexpr NodeRef mention(std::size_t index) {
    return NodeRef(static_cast<std::uint32_t>(kNumMetaNodes + index));
  }

  constexpr bool is_meta() const { return code_ < kNumMetaNodes; }
  constexpr bool is_meta(MetaNode m) const { return code_ == static_cast<std::uint32_t>(m); }
  constexpr MetaNode meta_id() const { return static_cast<MetaNode>(code_); }
  constexpr std::size_t mention_index() const { return code_ - kNumMetaNodes; }
  constexpr std::uint32_t canonical_index() const { return code_; }

  constexpr auto operator<=>(const NodeRef&) const = default;

 private:
  explicit constexpr NodeRef(std::uint32_t code) : code_(code) {}
  std::uint32_t code_ = 0;
};

struct Sentence {
  std::size_t index = 0;
  std::vector<std::string> tokens;

  bool operator==(const Sentence&) const = default;
};

struct Mention {
  std::string id;
  MentionKind kind = MentionKind::event;
  std::size_t sentence = 0;
  std::size_t start = 0;  // token range [start, end) within the sentence
  std::size_t end = 0;

  bool operator==(const Mention&) const = default;
};

struct GoldEdge {
  std::size_t child = 0;  // index into Document::mentions
  Slot slot = Slot::timex_ref;
  NodeRef parent;
  std::optional<Relation> label;

  bool operator==(const GoldEdge&) const = default;
};

struct Document {
  std::string id;
  std::string dct;
  std::vector<Sentence> sentences;
  std::vector<Mention> mentions;
  std::vector<GoldEdge> gold_edges;

  bool operator==(const Document&) const = default;
};

using Corpus = std::vector<Document>;

inline std::string node_name(const Document& doc, NodeRef node) {
  if (node.is_meta()) return std::string(to_string(node.meta_id()));
  if (node.mention_index() < doc.mentions.size()) return doc.mentions[node.mention_index()].id;
  return "<mention #" + std::to_string(node.mention_index()) + ">";
}

inline std::optional<std::size_t> find_mention(const Document& doc, std::string_view id) {
  for (std::size_t i = 0; i < doc.mentions.size(); ++i) {
    if (doc.mentions[i].id == id) return i;
  }
  return std::nullopt;
}

// Whether `slot` exists for a mention of `kind`: timexes only carry a
// reference timex, events carry both.
inline bool slot_applies(MentionKind kind, Slot slot) {
  return slot == Slot::timex_ref || kind == MentionKind::event;
}

// Whether `parent` may fill `slot` of `child`, ignoring acyclicity.
inline bool legal_parent(const Document& doc, std::size_t child, Slot slot, NodeRef parent) {
  const Mention& c = doc.mentions[child];
  if (!slot_applies(c.kind, slot)) return false;
  if (parent.is_meta()) {
    switch (parent.meta_id()) {
      case MetaNode::DCT: return slot == Slot::timex_ref;
      case MetaNode::ROOT: return slot == Slot::timex_ref && c.kind == MentionKind::timex;
      case MetaNode::NO_EVENT: return slot == Slot::event_ref;
    }
    return false;
  }
  if (parent.mention_index() >= doc.mentions.size() || parent.mention_index() == child) return false;
  const MentionKind want = slot == Slot::timex_ref ? MentionKind::timex : MentionKind::event;
  return doc.mentions[parent.mention_index()].kind == want;
}

namespace detail {

// Finds directed cycles among mention nodes. Every back edge found by the
// depth-first search yields one cycle, rendered as "a -> b -> a".
inline std::vector<std::vector<std::size_t>> find_cycles(
    std::size_t num_nodes, const std::vector<std::vector<std::size_t>>& out) {
  enum Color : std::uint8_t { kWhite, kGray, kBlack };
  std::vector<Color> color(num_nodes, kWhite);
  std::vector<std::vector<std::size_t>> cycles;
  for (std::size_t root = 0; root < num_nodes; ++root) {
    if (color[root] != kWhite) continue;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{root, 0}};
    color[root] = kGray;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < out[node].size()) {
        std::size_t succ = out[node][next++];
        if (color[succ] == kWhite) {
          color[succ] = kGray;
          stack.emplace_back(succ, 0);
        } else if (color[succ] == kGray) {
          std::vector<std::size_t> cycle;
          bool on = false;
          for (const auto& frame : stack) {
            if (frame.first == succ) on = true;
            if (on) cycle.push_back(frame.first);
          }
          cycle.push_back(succ);
          cycles.push_back(std::move(cycle));
        }
      } else {
        color[node] = kBlack;
        stack.pop_back();
      }
    }
  }
  return cycles;
}

inline std::string render_cycle(const Document& doc, const std::vector<std::size_t>& cycle) {
  std::string text;
  for (std::size_t i = 0; i < cycle.size(); ++i) {
    if (i) text += " -> ";
    text += doc.mentions[cycle[i]].id;
  }
  return text;
}

}  // namespace detail

// Lists every broken document invariant; empty iff the document is valid.
inline std::vector<std::string> validate_document(const Document& doc) {
  std::vector<std::string> v;
  const std::string where = "document '" + doc.id + "': ";
  if (doc.id.empty()) v.push_back("document with empty id");
  static const std::regex kIsoDate(R"(^\d{4}-\d{2}-\d{2}([T ].*)?$)");
  if (!std::regex_match(doc.dct, kIsoDate)) v.push_back(where + "dct '" + doc.dct + "' is not an ISO-8601 date");

  for (std::size_t i = 0; i < doc.sentences.size(); ++i) {
    const Sentence& s = doc.sentences[i];
    if (s.index != i) {
      v.push_back(where + "sentence at position " + std::to_string(i) + " has index " +
                  std::to_string(s.index));
    }
    if (s.tokens.empty()) v.push_back(where + "sentence " + std::to_string(i) + " has no tokens");
  }

  std::set<std::string> seen;
  for (const Mention& m : doc.mentions) {
    if (!seen.insert(m.id).second) v.push_back(where + "duplicate mention id '" + m.id + "'");
    if (m.sentence >= doc.sentences.size()) {
      v.push_back(where + "mention '" + m.id + "' refers to missing sentence " + std::to_string(m.sentence));
    } else if (m.start >= m.end || m.end > doc.sentences[m.sentence].tokens.size()) {
      v.push_back(where + "mention '" + m.id + "' has span [" + std::to_string(m.start) + ", " +
                  std::to_string(m.end) + ") outside sentence " + std::to_string(m.sentence));
    }
  }

  const std::size_t n = doc.mentions.size();
  std::vector<int> timex_refs(n, 0), event_refs(n, 0);
  std::vector<std::vector<std::size_t>> out(n);
  for (const GoldEdge& e : doc.gold_edges) {
    if (e.child >= n) {
      v.push_back(where + "edge with unknown child index " + std::to_string(e.child));
      continue;
    }
    const Mention& c = doc.mentions[e.child];
    const std::string edge = "edge (" + c.id + ", " + std::string(to_string(e.slot)) + ", " +
                             node_name(doc, e.parent) + ")";
    if (!slot_applies(c.kind, e.slot)) {
      v.push_back(where + edge + ": timex '" + c.id + "' cannot have an event_ref");
      continue;
    }
    (e.slot == Slot::timex_ref ? timex_refs : event_refs)[e.child]++;
    if (!e.parent.is_meta() && e.parent.mention_index() == e.child) {
      v.push_back(where + edge + ": self-loop on '" + c.id + "'");
      continue;
    }
    if (!legal_parent(doc, e.child, e.slot, e.parent)) {
      v.push_back(where + edge + ": illegal parent for this slot");
      continue;
    }
    if (!e.parent.is_meta()) out[e.child].push_back(e.parent.mention_index());
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Mention& m = doc.mentions[i];
    if (timex_refs[i] != 1) {
      v.push_back(where + std::string(to_string(m.kind)) + " '" + m.id + "' has " +
                  std::to_string(timex_refs[i]) + " timex_ref edges (expected 1)");
    }
    if (m.kind == MentionKind::event && event_refs[i] > 1) {
      v.push_back(where + "event '" + m.id + "' has " + std::to_string(event_refs[i]) +
                  " event_ref edges (expected at most 1)");
    }
  }
  for (const auto& cycle : detail::find_cycles(n, out)) {
    v.push_back(where + "cycle " + detail::render_cycle(doc, cycle));
  }
  return v;
}

// Adds (e, event_ref, NO_EVENT) for every event lacking an event_ref edge.
inline void normalize_no_event(Document& doc) {
  std::vector<bool> has(doc.mentions.size(), false);
  for (const GoldEdge& e : doc.gold_edges) {
    if (e.slot == Slot::event_ref && e.child < has.size()) has[e.child] = true;
  }
  for (std::size_t i = 0; i < doc.mentions.size(); ++i) {
    if (doc.mentions[i].kind == MentionKind::event && !has[i]) {
      doc.gold_edges.push_back({i, Slot::event_ref, NodeRef::meta(MetaNode::NO_EVENT), std::nullopt});
    }
  }
}

// ---------------------------------------------------------------------------
// JSONL serialization.

struct DecodedDocument {
  Document doc;
  std::vector<std::string> violations;  // unresolvable references found while decoding
};

// Decodes one document object. Schema errors (missing keys, wrong types)
// throw; references that do not resolve are collected as violations.
inline DecodedDocument document_from_json(const Json& j) {
  DecodedDocument out;
  Document& doc = out.doc;
  doc.id = j.at("id").get<std::string>();
  doc.dct = j.at("dct").get<std::string>();
  for (const auto& s : j.at("sentences")) {
    doc.sentences.push_back({s.at("index").get<std::size_t>(), s.at("tokens").get<std::vector<std::string>>()});
  }
  for (const auto& m : j.at("mentions")) {
    Mention mention;
    mention.id = m.at("id").get<std::string>();
    const auto kind = m.at("kind").get<std::string>();
    if (kind == "event") {
      mention.kind = MentionKind::event;
    } else if (kind == "timex") {
      mention.kind = MentionKind::timex;
    } else {
      throw Error("mention '" + mention.id + "' has unknown kind '" + kind + "'");
    }
    mention.sentence = m.at("sentence").get<std::size_t>();
    mention.start = m.at("start").get<std::size_t>();
    mention.end = m.at("end").get<std::size_t>();
    doc.mentions.push_back(std::move(mention));
  }
  // Canonical document order: by position in the text.
  std::stable_sort(doc.mentions.begin(), doc.mentions.end(), [](const Mention& a, const Mention& b) {
    return std::tie(a.sentence, a.start, a.end) < std::tie(b.sentence, b.start, b.end);
  });

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < doc.mentions.size(); ++i) index.emplace(doc.mentions[i].id, i);
  const std::string where = "document '" + doc.id + "': ";
  for (const auto& e : j.at("edges")) {
    const auto child = e.at("child").get<std::string>();
    const auto slot = e.at("slot").get<std::string>();
    const auto parent = e.at("parent").get<std::string>();
    GoldEdge edge;
    auto c = index.find(child);
    if (c == index.end()) {
      out.violations.push_back(where + "edge child '" + child + "' is not a mention");
      continue;
    }
    edge.child = c->second;
    if (slot == "timex_ref") {
      edge.slot = Slot::timex_ref;
    } else if (slot == "event_ref") {
      edge.slot = Slot::event_ref;
    } else {
      out.violations.push_back(where + "edge of '" + child + "' has unknown slot '" + slot + "'");
      continue;
    }
    if (auto meta = parse_meta_node(parent)) {
      edge.parent = NodeRef::meta(*meta);
    } else if (auto p = index.find(parent); p != index.end()) {
      edge.parent = NodeRef::mention(p->second);
    } else {
      out.violations.push_back(where + "edge parent '" + parent + "' of '" + child + "' is not a mention or meta node");
      continue;
    }
    if (e.contains("label") && !e.at("label").is_null()) {
      const auto label = e.at("label").get<std::string>();
      edge.label = parse_relation(label);
      if (!edge.label) {
        out.violations.push_back(where + "edge of '" + child + "' has unknown label '" + label + "'");
        continue;
      }
    }
    doc.gold_edges.push_back(edge);
  }
  return out;
}

inline Json edge_to_json(const Document& doc, std::size_t child, Slot slot, NodeRef parent,
                         std::optional<Relation> label) {
  Json e;
  e["child"] = doc.mentions[child].id;
  e["slot"] = to_string(slot);
  e["parent"] = node_name(doc, parent);
  if (label) e["label"] = to_string(*label);
  return e;
}

inline Json document_to_json(const Document& doc) {
  Json j;
  j["id"] = doc.id;
  j["dct"] = doc.dct;
  j["sentences"] = Json::array();
  for (const Sentence& s : doc.sentences) j["sentences"].push_back({{"index", s.index}, {"tokens", s.tokens}});
  j["mentions"] = Json::array();
  for (const Mention& m : doc.mentions) {
    j["mentions"].push_back({{"id", m.id},
                             {"kind", to_string(m.kind)},
                             {"sentence", m.sentence},
                             {"start", m.start},
                             {"end", m.end}});
  }
  j["edges"] = Json::array();
  for (const GoldEdge& e : doc.gold_edges) j["edges"].push_back(edge_to_json(doc, e.child, e.slot, e.parent, e.label));
  return j;
}

inline std::string serialize_corpus(const Corpus& corpus) {
  std::string text;
  for (const Document& doc : corpus) {
    text += document_to_json(doc).dump();
    text += '\n';
  }
  return text;
}

inline void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  write_file_atomic(path, serialize_corpus(corpus));
}

struct DecodedCorpus {
  Corpus documents;
  std::vector<std::string> violations;
};

// Decodes JSONL text without aborting on invariant violations; malformed
// lines and duplicate ids still throw.
inline DecodedCorpus decode_corpus(std::string_view text, std::string_view source = "<input>") {
  auto reject = [](std::string message) { throw ValidationError(message, {message}); };
  DecodedCorpus out;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  for (const std::string& line : split(text, '\n')) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    DecodedDocument decoded;
    try {
      decoded = document_from_json(Json::parse(line));
    } catch (const Json::exception& e) {
      reject(std::string(source) + ":" + std::to_string(line_no) + ": malformed document: " + e.what());
    } catch (const Error& e) {
      reject(std::string(source) + ":" + std::to_string(line_no) + ": malformed document: " + e.what());
    }
    if (!ids.insert(decoded.doc.id).second) {
      reject(std::string(source) + ":" + std::to_string(line_no) + ": duplicate document id '" + decoded.doc.id + "'");
    }
    normalize_no_event(decoded.doc);
    for (auto& v : decoded.violations) out.violations.push_back(std::move(v));
    for (auto& v : validate_document(decoded.doc)) out.violations.push_back(std::move(v));
    out.documents.push_back(std::move(decoded.doc));
  }
  return out;
}

// Loads and validates a JSONL corpus; any violation aborts with the full list.
inline Corpus parse_corpus_text(std::string_view text, std::string_view source = "<input>") {
  DecodedCorpus decoded = decode_corpus(text, source);
  if (!decoded.violations.empty()) {
    std::string message = std::string(source) + ": " + std::to_string(decoded.violations.size()) +
                          " invariant violation(s); first: " + decoded.violations.front();
    throw ValidationError(message, std::move(decoded.violations));
  }
  return std::move(decoded.documents);
}

inline Corpus parse_corpus(const std::filesystem::path& path) {
  return parse_corpus_text(read_file(path), path.string());
}

// Gold parent per (mention, slot).
struct GoldParents {
  std::vector<std::optional<NodeRef>> timex_ref;
  std::vector<std::optional<NodeRef>> event_ref;

  const std::optional<NodeRef>& at(std::size_t child, Slot slot) const {
    return slot == Slot::timex_ref ? timex_ref[child] : event_ref[child];
  }
};

inline GoldParents gold_parents(const Document& doc) {
  GoldParents g{std::vector<std::optional<NodeRef>>(doc.mentions.size()),
                std::vector<std::optional<NodeRef>>(doc.mentions.size())};
  for (const GoldEdge& e : doc.gold_edges) {
    (e.slot == Slot::timex_ref ? g.timex_ref : g.event_ref)[e.child] = e.parent;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Discourse labels.

// Content type per (document id, sentence index).
class DpLabelMap {
 public:
  void set(const std::string& doc_id, std::size_t sentence, ContentType type) {
    entries_[{doc_id, sentence}] = type;
  }

  bool contains(const std::string& doc_id, std::size_t sentence) const {
    return entries_.count({doc_id, sentence}) > 0;
  }

  ContentType at(const std::string& doc_id, std::size_t sentence) const {
    auto it = entries_.find({doc_id, sentence});
    if (it == entries_.end()) {
      throw CoverageError("no discourse label for (" + doc_id + ", " + std::to_string(sentence) + ")");
    }
    return it->second;
  }

  // Labels of every sentence of `doc`, in sentence order.
  std::vector<ContentType> document_labels(const Document& doc) const {
    std::vector<ContentType> labels;
    labels.reserve(doc.sentences.size());
    for (std::size_t s = 0; s < doc.sentences.size(); ++s) labels.push_back(at(doc.id, s));
    return labels;
  }

  // Throws CoverageError naming the first unlabelled sentence.
  void require_coverage(const Corpus& corpus) const {
    for (const Document& doc : corpus) {
      for (std::size_t s = 0; s < doc.sentences.size(); ++s) at(doc.id, s);
    }
  }

  std::size_t size() const { return entries_.size(); }

  bool operator==(const DpLabelMap&) const = default;

 private:
  std::map<std::pair<std::string, std::size_t>, ContentType> entries_;
};

// Parses `doc_id<TAB>sentence_index<TAB>tag` lines from one or more files.
// Lines may not mention documents outside `corpus`; with `require_total` the
// result must also cover every sentence of it. Format errors throw
// ValidationError, coverage gaps CoverageError.
inline DpLabelMap load_dp_labels(std::span<const std::filesystem::path> paths, const Corpus& corpus,
                                 bool require_total = true) {
  auto reject = [](std::string message) { throw ValidationError(message, {message}); };
  std::map<std::string, std::size_t> sentence_counts;
  for (const Document& doc : corpus) sentence_counts[doc.id] = doc.sentences.size();

  DpLabelMap labels;
  for (const auto& path : paths) {
    std::size_t line_no = 0;
    for (std::string line : split(read_file(path), '\n')) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
      auto fields = split(line, '\t');
      if (fields.size() != 3) reject(where + "expected 3 tab-separated fields");
      auto count = sentence_counts.find(fields[0]);
      if (count == sentence_counts.end()) reject(where + "unknown document id '" + fields[0] + "'");
      std::size_t sentence = 0;
      try {
        std::size_t used = 0;
        long long parsed = std::stoll(fields[1], &used);
        if (used != fields[1].size() || parsed < 0) throw std::invalid_argument("index");
        sentence = static_cast<std::size_t>(parsed);
      } catch (const std::exception&) {
        reject(where + "bad sentence index '" + fields[1] + "'");
      }
      if (sentence >= count->second) {
        reject(where + "sentence " + fields[1] + " out of range for document '" + fields[0] + "'");
      }
      auto type = parse_content_type(fields[2]);
      if (!type) reject(where + "unknown content type '" + fields[2] + "'");
      if (labels.contains(fields[0], sentence)) {
        reject(where + "duplicate label for (" + fields[0] + ", " + fields[1] + ")");
      }
      labels.set(fields[0], sentence, *type);
    }
  }
  for (const Document& doc : corpus) {
    for (std::size_t s = 0; require_total && s < doc.sentences.size(); ++s) {
      if (!labels.contains(doc.id, s)) {
        throw CoverageError("missing discourse label for (" + doc.id + ", " + std::to_string(s) + ")");
      }
    }
  }
  return labels;
}

inline DpLabelMap load_dp_labels(const std::filesystem::path& path, const Corpus& corpus, bool require_total = true) {
  return load_dp_labels(std::span<const std::filesystem::path>(&path, 1), corpus, require_total);
}

inline std::string serialize_dp_labels(const DpLabelMap& labels, const Corpus& corpus) {
  std::string text;
  for (const Document& doc : corpus) {
    for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
      text += doc.id + '\t' + std::to_string(s) + '\t' + std::string(to_string(labels.at(doc.id, s))) + '\n';
    }
  }
  return text;
}

}  // namespace tdg
