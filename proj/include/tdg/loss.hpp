#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "tdg/corpus.hpp"
#include "tdg/error.hpp"
#include "tdg/graph.hpp"

namespace tdg {

// Softmax cross-entropy of `target` over `logits`, computed via
// log-sum-exp. When `grad` is non-empty it receives (softmax - onehot).
inline double softmax_cross_entropy(std::span<const double> logits, std::size_t target,
                                    std::span<double> grad = {}) {
  double top = logits[0];
  for (double x : logits) top = std::max(top, x);
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - top);
  const double log_z = top + std::log(sum);
  if (!grad.empty()) {
    for (std::size_t i = 0; i < logits.size(); ++i) grad[i] = std::exp(logits[i] - log_z);
    grad[target] -= 1.0;
  }
  // -log p_target, clamped so exact-probability-one cases report 0 rather than -0 or -1e-17.
  return std::max(0.0, log_z - logits[target]);
}

// Listwise ranking loss of one slot: -log softmax(score of the gold parent).
inline double ranking_loss(const ScoredCandidates& scored, NodeRef gold) {
  std::vector<double> scores;
  std::size_t target = scored.candidates.size();
  for (std::size_t i = 0; i < scored.candidates.size(); ++i) {
    scores.push_back(scored.candidates[i].score);
    if (scored.candidates[i].node == gold) target = i;
  }
  if (target == scored.candidates.size()) throw Error("ranking_loss: gold parent is not a candidate");
  return softmax_cross_entropy(scores, target);
}

// Cross-entropy of the content-type logits against the teacher's hard label.
inline double dp_loss(std::span<const double> logits, ContentType teacher) {
  if (logits.size() != kNumContentTypes) throw Error("dp_loss: expected 9 logits");
  return softmax_cross_entropy(logits, static_cast<std::size_t>(teacher));
}

}  // namespace tdg
