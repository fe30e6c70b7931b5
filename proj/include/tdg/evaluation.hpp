#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tdg/corpus.hpp"
#include "tdg/error.hpp"
#include "tdg/graph.hpp"

namespace tdg {

enum class SlotCategory : std::uint8_t { intra_sentence, cross_sentence, no_parent };

inline constexpr std::size_t kNumCategories = 3;
inline constexpr std::array<std::string_view, kNumCategories> kCategoryNames = {"intra_sentence", "cross_sentence",
                                                                               "no_parent"};

inline std::string_view to_string(SlotCategory c) { return kCategoryNames[static_cast<std::size_t>(c)]; }

// no_parent for meta parents, intra_sentence for a parent in the child's
// sentence, cross_sentence otherwise.
inline SlotCategory slot_category(const Document& doc, std::size_t child, NodeRef parent) {
  if (parent.is_meta()) return SlotCategory::no_parent;
  return doc.mentions[parent.mention_index()].sentence == doc.mentions[child].sentence ? SlotCategory::intra_sentence
                                                                                       : SlotCategory::cross_sentence;
}

struct CategoryMetrics {
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::size_t correct = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;  // no slot predicted in this category
  bool recall_undefined = false;     // no gold slot in this category

  bool operator==(const CategoryMetrics&) const = default;
};

struct MetricsReport {
  std::string corpus;
  std::string variant;
  std::optional<std::uint64_t> seed;
  std::size_t total_slots = 0;
  std::size_t total_correct = 0;
  double accuracy = 0.0;
  std::array<CategoryMetrics, kNumCategories> per_category{};

  std::vector<std::string> flags() const {
    std::vector<std::string> out;
    for (std::size_t c = 0; c < kNumCategories; ++c) {
      if (per_category[c].precision_undefined) out.push_back(std::string(kCategoryNames[c]) + ".precision_undefined");
      if (per_category[c].recall_undefined) out.push_back(std::string(kCategoryNames[c]) + ".recall_undefined");
    }
    return out;
  }

  bool operator==(const MetricsReport&) const = default;
};

namespace detail {

inline void require_aligned(std::span<const TemporalDependencyGraph> pred, const Corpus& gold) {
  if (pred.size() != gold.size()) {
    throw Error("evaluation: " + std::to_string(pred.size()) + " predicted graphs for " + std::to_string(gold.size()) +
                " documents");
  }
}

inline const NodeRef& predicted_parent(const Document& doc, const TemporalDependencyGraph& graph, const SlotKey& key) {
  if (graph.timex_ref.size() != doc.mentions.size() || !graph.at(key.child, key.slot)) {
    throw Error("evaluation: no prediction for slot (" + doc.mentions[key.child].id + ", " +
                std::string(to_string(key.slot)) + ") in document '" + doc.id + "'");
  }
  return *graph.at(key.child, key.slot);
}

}  // namespace detail

// Fraction of slots (every timex_ref and event_ref instance) whose predicted
// parent equals the gold parent.
inline double attachment_accuracy(std::span<const TemporalDependencyGraph> pred, const Corpus& gold) {
  detail::require_aligned(pred, gold);
  std::size_t total = 0, correct = 0;
  for (std::size_t d = 0; d < gold.size(); ++d) {
    const GoldParents g = gold_parents(gold[d]);
    for (const SlotKey& key : slot_instances(gold[d])) {
      const NodeRef& p = detail::predicted_parent(gold[d], pred[d], key);
      ++total;
      if (g.at(key.child, key.slot) == p) ++correct;
    }
  }
  if (total == 0) throw Error("attachment_accuracy: corpus has no slots");
  return static_cast<double>(correct) / static_cast<double>(total);
}

// Accuracy plus precision/recall/F1 per slot category. Precision is taken
// over slots predicted in the category, recall over slots whose gold parent
// is in it, and a slot is correct only on an exact parent match.
inline MetricsReport partitioned_prf(std::span<const TemporalDependencyGraph> pred, const Corpus& gold,
                                     std::string corpus_id = {}, std::string variant = {}) {
  detail::require_aligned(pred, gold);
  MetricsReport r;
  r.corpus = std::move(corpus_id);
  r.variant = std::move(variant);
  for (std::size_t d = 0; d < gold.size(); ++d) {
    const Document& doc = gold[d];
    const GoldParents g = gold_parents(doc);
    for (const SlotKey& key : slot_instances(doc)) {
      const NodeRef& p = detail::predicted_parent(doc, pred[d], key);
      const auto& gp = g.at(key.child, key.slot);
      if (!gp) throw Error("evaluation: document '" + doc.id + "' lacks a gold parent");
      const auto gc = static_cast<std::size_t>(slot_category(doc, key.child, *gp));
      const auto pc = static_cast<std::size_t>(slot_category(doc, key.child, p));
      ++r.total_slots;
      ++r.per_category[gc].gold;
      ++r.per_category[pc].predicted;
      if (p == *gp) {
        ++r.total_correct;
        ++r.per_category[gc].correct;
      }
    }
  }
  if (r.total_slots == 0) throw Error("partitioned_prf: corpus has no slots");
  r.accuracy = static_cast<double>(r.total_correct) / static_cast<double>(r.total_slots);
  for (CategoryMetrics& m : r.per_category) {
    m.precision_undefined = m.predicted == 0;
    m.recall_undefined = m.gold == 0;
    m.precision = m.predicted ? static_cast<double>(m.correct) / static_cast<double>(m.predicted) : 0.0;
    m.recall = m.gold ? static_cast<double>(m.correct) / static_cast<double>(m.gold) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  }
  return r;
}

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value

  bool operator==(const Stat&) const = default;
};

inline Stat mean_std(std::span<const double> xs) {
  Stat s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

struct AggregatedCategory {
  Stat precision, recall, f1, gold, predicted, correct;

  bool operator==(const AggregatedCategory&) const = default;
};

struct AggregatedReport {
  std::string corpus;
  std::string variant;
  std::size_t count = 0;
  Stat accuracy;
  std::array<AggregatedCategory, kNumCategories> per_category{};
  std::vector<std::string> flags;  // union of per-seed flags, sorted

  bool operator==(const AggregatedReport&) const = default;
};

// Mean and sample standard deviation of every metric across seeds.
inline AggregatedReport aggregate_seeds(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw Error("aggregate_seeds: no reports");
  AggregatedReport agg;
  agg.corpus = reports.front().corpus;
  agg.variant = reports.front().variant;
  agg.count = reports.size();
  for (const MetricsReport& r : reports) {
    if (r.corpus != agg.corpus) {
      throw Error("aggregate_seeds: reports come from different corpora ('" + agg.corpus + "' vs '" + r.corpus + "')");
    }
  }
  // Sorting each metric's values first makes the sums independent of report order.
  auto stat = [&](auto get) {
    std::vector<double> xs;
    for (const MetricsReport& r : reports) xs.push_back(get(r));
    std::sort(xs.begin(), xs.end());
    return mean_std(xs);
  };
  agg.accuracy = stat([](const MetricsReport& r) { return r.accuracy; });
  for (std::size_t c = 0; c < kNumCategories; ++c) {
    auto& a = agg.per_category[c];
    a.precision = stat([c](const MetricsReport& r) { return r.per_category[c].precision; });
    a.recall = stat([c](const MetricsReport& r) { return r.per_category[c].recall; });
    a.f1 = stat([c](const MetricsReport& r) { return r.per_category[c].f1; });
    a.gold = stat([c](const MetricsReport& r) { return static_cast<double>(r.per_category[c].gold); });
    a.predicted = stat([c](const MetricsReport& r) { return static_cast<double>(r.per_category[c].predicted); });
    a.correct = stat([c](const MetricsReport& r) { return static_cast<double>(r.per_category[c].correct); });
  }
  std::set<std::string> flags;
  for (const MetricsReport& r : reports) {
    for (auto& f : r.flags()) flags.insert(f);
  }
  agg.flags.assign(flags.begin(), flags.end());
  return agg;
}

// Percentage rounded to two decimals, as written to metrics files.
inline double as_percent(double fraction) { return std::round(fraction * 10000.0) / 100.0; }

inline Json metrics_to_json(const MetricsReport& r) {
  Json j;
  j["corpus"] = r.corpus;
  j["variant"] = r.variant;
  if (r.seed) {
    j["seed"] = *r.seed;
  } else {
    j["seed"] = nullptr;
  }
  j["accuracy"] = as_percent(r.accuracy);
  Json cats;
  for (std::size_t c = 0; c < kNumCategories; ++c) {
    const auto& m = r.per_category[c];
    cats[std::string(kCategoryNames[c])] = {{"p", as_percent(m.precision)}, {"r", as_percent(m.recall)},
                                            {"f1", as_percent(m.f1)},       {"gold", m.gold},
                                            {"predicted", m.predicted},     {"correct", m.correct}};
  }
  j["per_category"] = std::move(cats);
  j["flags"] = r.flags();
  return j;
}

inline Json metrics_to_json(const AggregatedReport& a) {
  Json j;
  j["corpus"] = a.corpus;
  j["variant"] = a.variant;
  j["seed"] = "aggregate";
  j["count"] = a.count;
  j["accuracy"] = as_percent(a.accuracy.mean);
  j["accuracy_std"] = as_percent(a.accuracy.std);
  Json cats;
  for (std::size_t c = 0; c < kNumCategories; ++c) {
    const auto& m = a.per_category[c];
    cats[std::string(kCategoryNames[c])] = {
        {"p", as_percent(m.precision.mean)}, {"p_std", as_percent(m.precision.std)},
        {"r", as_percent(m.recall.mean)},    {"r_std", as_percent(m.recall.std)},
        {"f1", as_percent(m.f1.mean)},       {"f1_std", as_percent(m.f1.std)},
        {"gold", m.gold.mean},               {"predicted", m.predicted.mean},
        {"correct", m.correct.mean}};
  }
  j["per_category"] = std::move(cats);
  j["flags"] = a.flags;
  return j;
}

}  // namespace tdg
