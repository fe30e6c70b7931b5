#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "tdg/corpus.hpp"
#include "tdg/error.hpp"

namespace tdg {

// Row-normalized distribution of reference mentions. Rows are the child's
// content type (NA included); cells hold raw counts and are rendered as
// row percentages.
struct DistributionTable {
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::vector<std::size_t>> counts;  // [9][columns]

  DistributionTable() = default;
  DistributionTable(std::string t, std::vector<std::string> cols)
      : title(std::move(t)), columns(std::move(cols)), counts(kNumContentTypes, std::vector<std::size_t>(columns.size(), 0)) {}

  std::size_t row_total(std::size_t row) const {
    std::size_t n = 0;
    for (std::size_t c : counts[row]) n += c;
    return n;
  }

  // Percentage of the row, or nullopt when the row is empty.
  std::optional<double> percent(std::size_t row, std::size_t col) const {
    const std::size_t total = row_total(row);
    if (total == 0) return std::nullopt;
    return 100.0 * static_cast<double>(counts[row][col]) / static_cast<double>(total);
  }

  std::optional<double> percent(ContentType row, std::size_t col) const {
    return percent(static_cast<std::size_t>(row), col);
  }

  bool operator==(const DistributionTable&) const = default;
};

namespace detail {

inline std::string format_cell(std::optional<double> pct) {
  if (!pct) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", *pct);
  return buf;
}

inline ContentType sentence_type(const DpLabelMap& dp, const Document& doc, std::size_t sentence) {
  return dp.at(doc.id, sentence);
}

}  // namespace detail

// Parent class of each timex: DCT, other meta node (ROOT), or another timex.
inline DistributionTable timex_parent_distribution(const Corpus& corpus, const DpLabelMap& dp) {
  DistributionTable t("Timex reference timex by content type", {"DCT", "Meta", "OtherTimex"});
  for (const Document& doc : corpus) {
    for (const GoldEdge& e : doc.gold_edges) {
      if (e.slot != Slot::timex_ref || doc.mentions[e.child].kind != MentionKind::timex) continue;
      const auto row = static_cast<std::size_t>(detail::sentence_type(dp, doc, doc.mentions[e.child].sentence));
      const std::size_t col = e.parent.is_meta(MetaNode::DCT) ? 0 : e.parent.is_meta() ? 1 : 2;
      ++t.counts[row][col];
    }
  }
  return t;
}

// Reference timex of each event: DCT, a timex in the same sentence, or a
// timex in another sentence.
inline DistributionTable event_reftimex_distribution(const Corpus& corpus, const DpLabelMap& dp) {
  DistributionTable t("Event reference timex by content type", {"DCT", "IntraSentenceTimex", "CrossSentenceTimex"});
  for (const Document& doc : corpus) {
    for (const GoldEdge& e : doc.gold_edges) {
      if (e.slot != Slot::timex_ref || doc.mentions[e.child].kind != MentionKind::event) continue;
      const std::size_t child_sentence = doc.mentions[e.child].sentence;
      const auto row = static_cast<std::size_t>(detail::sentence_type(dp, doc, child_sentence));
      std::size_t col = 0;
      if (!e.parent.is_meta()) col = doc.mentions[e.parent.mention_index()].sentence == child_sentence ? 1 : 2;
      ++t.counts[row][col];
    }
  }
  return t;
}

// For events anchored to a timex mention: content type of the timex's sentence.
inline DistributionTable event_reftimex_content_matrix(const Corpus& corpus, const DpLabelMap& dp) {
  DistributionTable t("Event reference timex content type (non-DCT references)",
                      std::vector<std::string>(kContentTypeNames.begin(), kContentTypeNames.end()));
  for (const Document& doc : corpus) {
    for (const GoldEdge& e : doc.gold_edges) {
      if (e.slot != Slot::timex_ref || doc.mentions[e.child].kind != MentionKind::event || e.parent.is_meta()) continue;
      const auto row = static_cast<std::size_t>(detail::sentence_type(dp, doc, doc.mentions[e.child].sentence));
      const auto col = static_cast<std::size_t>(
          detail::sentence_type(dp, doc, doc.mentions[e.parent.mention_index()].sentence));
      ++t.counts[row][col];
    }
  }
  return t;
}

// For event_ref edges whose parent event sits in another sentence: content
// type of the parent's sentence.
inline DistributionTable event_refevent_content_matrix(const Corpus& corpus, const DpLabelMap& dp) {
  DistributionTable t("Cross-sentence event reference event content type",
                      std::vector<std::string>(kContentTypeNames.begin(), kContentTypeNames.end()));
  for (const Document& doc : corpus) {
    for (const GoldEdge& e : doc.gold_edges) {
      if (e.slot != Slot::event_ref || e.parent.is_meta()) continue;
      const std::size_t cs = doc.mentions[e.child].sentence;
      const std::size_t ps = doc.mentions[e.parent.mention_index()].sentence;
      if (cs == ps) continue;
      ++t.counts[static_cast<std::size_t>(detail::sentence_type(dp, doc, cs))]
                [static_cast<std::size_t>(detail::sentence_type(dp, doc, ps))];
    }
  }
  return t;
}

inline std::string render_csv(const DistributionTable& t) {
  std::string out = "content_type";
  for (const auto& c : t.columns) out += "," + c;
  out += ",total\n";
  for (std::size_t r = 0; r < kNumContentTypes; ++r) {
    out += std::string(kContentTypeNames[r]);
    for (std::size_t c = 0; c < t.columns.size(); ++c) out += "," + detail::format_cell(t.percent(r, c));
    out += "," + std::to_string(t.row_total(r)) + "\n";
  }
  return out;
}

// Aligned plain-text rendering, one row per content type.
inline std::string render_text(const DistributionTable& t) {
  std::vector<std::size_t> width(t.columns.size());
  for (std::size_t c = 0; c < t.columns.size(); ++c) width[c] = std::max<std::size_t>(t.columns[c].size(), 5);
  auto pad = [](const std::string& s, std::size_t w) { return std::string(w > s.size() ? w - s.size() : 0, ' ') + s; };
  std::string out = t.title + "\n    ";
  for (std::size_t c = 0; c < t.columns.size(); ++c) out += " " + pad(t.columns[c], width[c]);
  out += "\n";
  for (std::size_t r = 0; r < kNumContentTypes; ++r) {
    out += std::string(kContentTypeNames[r]) + "  ";
    for (std::size_t c = 0; c < t.columns.size(); ++c) out += " " + pad(detail::format_cell(t.percent(r, c)), width[c]);
    out += "\n";
  }
  return out;
}

struct SummaryCheck {
  std::string name;
  bool evaluable = false;  // false when the rows it needs are empty
  bool passed = false;
  std::string detail;
};

// The two headline observations over the timex table: historical timexes
// mostly attach to a meta node, and every other content type mostly
// attaches to the DCT.
inline std::vector<SummaryCheck> summary_checks(const DistributionTable& timex_table) {
  std::vector<SummaryCheck> checks;
  const auto d1 = static_cast<std::size_t>(ContentType::D1);
  SummaryCheck meta{"historical_timex_meta_share_at_least_60", false, false, ""};
  if (auto p = timex_table.percent(d1, 1)) {
    meta.evaluable = true;
    meta.passed = *p >= 60.0;
    meta.detail = "D1 Meta = " + detail::format_cell(p);
  } else {
    meta.detail = "no D1 timexes";
  }
  checks.push_back(meta);

  SummaryCheck dct{"non_historical_dct_share_at_least_66", false, true, ""};
  for (std::size_t r = 0; r < kNumContentTypes; ++r) {
    if (r == d1) continue;
    auto p = timex_table.percent(r, 0);
    if (!p) continue;
    dct.evaluable = true;
    if (*p < 66.0) {
      dct.passed = false;
      dct.detail += std::string(dct.detail.empty() ? "" : "; ") + std::string(kContentTypeNames[r]) +
                    " DCT = " + detail::format_cell(p);
    }
  }
  if (!dct.evaluable) {
    dct.passed = false;
    dct.detail = "no non-D1 timexes";
  } else if (dct.passed) {
    dct.detail = "all non-D1 rows >= 66.0";
  }
  checks.push_back(dct);
  return checks;
}

}  // namespace tdg
