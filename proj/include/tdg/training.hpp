#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tdg/corpus.hpp"
#include "tdg/error.hpp"
#include "tdg/evaluation.hpp"
#include "tdg/graph.hpp"
#include "tdg/random.hpp"
#include "tdg/scorer.hpp"

namespace tdg {

enum class UpdateOrder : std::uint8_t { dp_then_rank, rank_then_dp, joint };

inline std::string_view to_string(UpdateOrder o) {
  switch (o) {
    case UpdateOrder::dp_then_rank: return "dp_then_rank";
    case UpdateOrder::rank_then_dp: return "rank_then_dp";
    case UpdateOrder::joint: return "joint";
  }
  return "?";
}

inline std::optional<UpdateOrder> parse_update_order(std::string_view s) {
  if (s == "dp_then_rank") return UpdateOrder::dp_then_rank;
  if (s == "rank_then_dp") return UpdateOrder::rank_then_dp;
  if (s == "joint") return UpdateOrder::joint;
  return std::nullopt;
}

struct TrainConfig {
  Variant variant = Variant::baseline;
  std::size_t max_epochs = 15;
  std::size_t batch_size_docs = 5;
  double peak_lr = 1e-4;
  std::size_t warmup_epochs = 5;
  double weight_decay = 0.01;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  UpdateOrder update_order = UpdateOrder::dp_then_rank;
  DecodeOrder decode_order = DecodeOrder::score;
  Hyperparameters hyper;
  double init_scale = 0.05;

  void validate() const {
    if (max_epochs == 0) throw Error("train config: max_epochs must be positive");
    if (batch_size_docs == 0) throw Error("train config: batch_size_docs must be positive");
    if (!(peak_lr > 0.0)) throw Error("train config: peak_lr must be positive");
    if (weight_decay < 0.0) throw Error("train config: weight_decay must be non-negative");
    if (warmup_epochs > max_epochs) throw Error("train config: warmup_epochs exceeds max_epochs");
    if (hyper.embedding_dim == 0 || hyper.hidden_dim == 0) throw Error("train config: zero model dimension");
    if (!(init_scale > 0.0)) throw Error("train config: init_scale must be positive");
  }
};

inline Json train_config_to_json(const TrainConfig& c) {
  Json j;
  j["variant"] = to_string(c.variant);
  j["max_epochs"] = c.max_epochs;
  j["batch_size_docs"] = c.batch_size_docs;
  j["peak_lr"] = c.peak_lr;
  j["warmup_epochs"] = c.warmup_epochs;
  j["weight_decay"] = c.weight_decay;
  j["seeds"] = c.seeds;
  j["update_order"] = to_string(c.update_order);
  j["decode_order"] = to_string(c.decode_order);
  j["embedding_dim"] = c.hyper.embedding_dim;
  j["hidden_dim"] = c.hyper.hidden_dim;
  j["init_scale"] = c.init_scale;
  return j;
}

// Overlays the keys present in `j` onto `base`.
inline TrainConfig train_config_from_json(const Json& j, TrainConfig base = {}) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const Json& v = it.value();
    if (key == "variant") {
      auto p = parse_variant(v.get<std::string>());
      if (!p) throw Error("train config: unknown variant '" + v.get<std::string>() + "'");
      base.variant = *p;
    } else if (key == "max_epochs") {
      base.max_epochs = v.get<std::size_t>();
    } else if (key == "batch_size_docs") {
      base.batch_size_docs = v.get<std::size_t>();
    } else if (key == "peak_lr") {
      base.peak_lr = v.get<double>();
    } else if (key == "warmup_epochs") {
      base.warmup_epochs = v.get<std::size_t>();
    } else if (key == "weight_decay") {
      base.weight_decay = v.get<double>();
    } else if (key == "seeds") {
      base.seeds = v.get<std::vector<std::uint64_t>>();
    } else if (key == "update_order") {
      auto p = parse_update_order(v.get<std::string>());
      if (!p) throw Error("train config: unknown update_order '" + v.get<std::string>() + "'");
      base.update_order = *p;
    } else if (key == "decode_order") {
      auto p = parse_decode_order(v.get<std::string>());
      if (!p) throw Error("train config: unknown decode_order '" + v.get<std::string>() + "'");
      base.decode_order = *p;
    } else if (key == "embedding_dim") {
      base.hyper.embedding_dim = v.get<std::size_t>();
    } else if (key == "hidden_dim") {
      base.hyper.hidden_dim = v.get<std::size_t>();
    } else if (key == "init_scale") {
      base.init_scale = v.get<double>();
    } else {
      throw Error("train config: unknown key '" + key + "'");
    }
  }
  return base;
}

// Linear warmup to `peak` over `warmup_steps`, then linear decay to zero at
// `total_steps`.
inline double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double peak) {
  if (step <= warmup_steps) {
    return warmup_steps == 0 ? peak : peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (total_steps <= warmup_steps) return peak;
  const std::size_t remaining = step >= total_steps ? 0 : total_steps - step;
  return peak * static_cast<double>(remaining) / static_cast<double>(total_steps - warmup_steps);
}

struct AdamWSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  std::array<std::vector<double>, Parameters::kNumTensors> first;
  std::array<std::vector<double>, Parameters::kNumTensors> second;
  std::uint64_t step = 0;

  static OptimizerState for_parameters(const Parameters& params) {
    OptimizerState s;
    auto tensors = params.tensors();
    for (std::size_t t = 0; t < Parameters::kNumTensors; ++t) {
      s.first[t].assign(tensors[t]->size(), 0.0);
      s.second[t].assign(tensors[t]->size(), 0.0);
    }
    return s;
  }
};

// One AdamW update with bias correction and decoupled weight decay:
// theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta).
inline void adamw_step(Parameters& params, const Parameters& grads, OptimizerState& state, double lr,
                       const AdamWSettings& s = {}) {
  auto ps = params.tensors();
  auto gs = grads.tensors();
  for (std::size_t t = 0; t < Parameters::kNumTensors; ++t) {
    if (ps[t]->size() != gs[t]->size() || state.first[t].size() != ps[t]->size()) {
      throw Error("adamw_step: shape mismatch in tensor '" + std::string(Parameters::kNames[t]) + "'");
    }
    for (double g : gs[t]->data) {
      if (!std::isfinite(g)) throw DivergenceError("adamw_step: non-finite gradient");
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < Parameters::kNumTensors; ++t) {
    auto& theta = ps[t]->data;
    const auto& g = gs[t]->data;
    auto& m = state.first[t];
    auto& v = state.second[t];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= lr * (m_hat / (std::sqrt(v_hat) + s.eps) + s.weight_decay * theta[i]);
    }
  }
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double ranking_loss = 0.0;
  std::optional<double> dp_loss;
  double valid_accuracy = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based; earliest epoch with maximal validation accuracy

  bool operator==(const TrainHistory&) const = default;
};

inline Json history_to_json(const TrainHistory& h) {
  Json j;
  j["epochs"] = Json::array();
  for (const EpochRecord& e : h.epochs) {
    Json r;
    r["epoch"] = e.epoch;
    r["ranking_loss"] = e.ranking_loss;
    if (e.dp_loss) r["dp_loss"] = *e.dp_loss;
    r["valid_accuracy"] = e.valid_accuracy;
    j["epochs"].push_back(std::move(r));
  }
  j["best_epoch"] = h.best_epoch;
  return j;
}

struct TrainResult {
  Checkpoint checkpoint;
  TrainHistory history;
};

// Predicted graphs for every document of `corpus`.
inline std::vector<TemporalDependencyGraph> predict_corpus(const RankingModel& model, const Corpus& corpus,
                                                           Variant variant, const DpLabelMap* labels,
                                                           DecodeOrder order = DecodeOrder::score) {
  std::vector<TemporalDependencyGraph> graphs;
  graphs.reserve(corpus.size());
  for (const Document& doc : corpus) graphs.push_back(predict_graph(model, doc, variant, labels, order));
  return graphs;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains one model. Parameter init, epoch shuffles, and batching all draw
// from a single generator seeded with `seed`. Distillation runs two
// optimizer steps per batch (one per loss) unless the order is joint; the
// learning-rate schedule advances once per optimizer step.
inline TrainResult train(const TrainConfig& config, const Corpus& train_corpus, const Corpus& valid_corpus,
                         const DpLabelMap* labels, std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  config.validate();
  if (train_corpus.empty()) throw Error("train: empty training corpus");
  if (valid_corpus.empty()) throw Error("train: empty validation corpus");
  const Variant variant = config.variant;
  if (variant != Variant::baseline) {
    if (!labels) throw Error("train: variant " + std::string(to_string(variant)) + " needs discourse labels");
    labels->require_coverage(train_corpus);
    if (variant == Variant::dp_feature) labels->require_coverage(valid_corpus);
  }

  Rng rng(seed);
  RankingModel model = init_model(build_vocabulary(train_corpus), config.hyper, rng, config.init_scale);
  OptimizerState state = OptimizerState::for_parameters(model.params);
  const AdamWSettings adam{0.9, 0.999, 1e-8, config.weight_decay};

  const bool distill = variant == Variant::dp_distill;
  const DpLabelMap* feature_labels = variant == Variant::dp_feature ? labels : nullptr;
  std::vector<EncodedDocument> rank_docs, dp_docs;
  for (const Document& doc : train_corpus) {
    rank_docs.push_back(encode_document(model.vocab, doc, feature_labels));
    if (distill) dp_docs.push_back(encode_document(model.vocab, doc, labels));
  }

  const std::size_t n = train_corpus.size();
  const std::size_t batches = (n + config.batch_size_docs - 1) / config.batch_size_docs;
  const std::size_t steps_per_batch = distill && config.update_order != UpdateOrder::joint ? 2 : 1;
  const std::size_t total_steps = config.max_epochs * batches * steps_per_batch;
  const std::size_t warmup_steps = config.warmup_epochs * batches * steps_per_batch;
  std::size_t step = 0;

  auto where = [](std::size_t epoch, std::size_t batch) {
    return "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch);
  };
  auto objective = [&](const std::vector<EncodedDocument>& batch, LossKind kind, Parameters* grads) {
    return detail::batch_objective(model, batch, kind, variant, grads);
  };
  auto optimizer_step = [&](const Parameters& grads) {
    ++step;
    adamw_step(model.params, grads, state, lr_at(step, total_steps, warmup_steps, config.peak_lr), adam);
    for (const Tensor* t : std::as_const(model.params).tensors()) {
      for (double x : t->data) {
        if (!std::isfinite(x)) throw DivergenceError("non-finite parameter after update");
      }
    }
  };

  TrainResult result;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double best_accuracy = -1.0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double rank_sum = 0.0, dp_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<EncodedDocument> rank_batch, dp_batch;
      for (std::size_t i = b * config.batch_size_docs; i < std::min(n, (b + 1) * config.batch_size_docs); ++i) {
        rank_batch.push_back(rank_docs[order[i]]);
        if (distill) dp_batch.push_back(dp_docs[order[i]]);
      }
      auto checked = [&](double loss) {
        if (!std::isfinite(loss)) throw DivergenceError("non-finite loss at " + where(epoch, b + 1));
        return loss;
      };
      Parameters grads = Parameters::zeros(model.vocab.size(), model.hyper);
      try {
        if (!distill) {
          rank_sum += checked(objective(rank_batch, LossKind::ranking, &grads));
          optimizer_step(grads);
        } else if (config.update_order == UpdateOrder::joint) {
          rank_sum += checked(objective(rank_batch, LossKind::ranking, &grads));
          dp_sum += checked(objective(dp_batch, LossKind::dp, &grads));
          optimizer_step(grads);
        } else {
          const bool dp_first = config.update_order == UpdateOrder::dp_then_rank;
          for (int phase = 0; phase < 2; ++phase) {
            const bool dp_phase = (phase == 0) == dp_first;
            Parameters g = Parameters::zeros(model.vocab.size(), model.hyper);
            if (dp_phase) {
              dp_sum += checked(objective(dp_batch, LossKind::dp, &g));
            } else {
              rank_sum += checked(objective(rank_batch, LossKind::ranking, &g));
            }
            optimizer_step(g);
          }
        }
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " (" + where(epoch, b + 1) + ")");
      }
    }

    EpochRecord record;
    record.epoch = epoch;
    record.ranking_loss = rank_sum / static_cast<double>(batches);
    if (distill) record.dp_loss = dp_sum / static_cast<double>(batches);
    const auto graphs = predict_corpus(model, valid_corpus, variant, labels, config.decode_order);
    record.valid_accuracy = attachment_accuracy(graphs, valid_corpus);
    result.history.epochs.push_back(record);
    if (record.valid_accuracy > best_accuracy) {
      best_accuracy = record.valid_accuracy;
      result.history.best_epoch = epoch;
      result.checkpoint.model = model;
    }
    if (on_epoch) on_epoch(record);
  }

  Json echo = train_config_to_json(config);
  echo.erase("seeds");
  result.checkpoint.training_config = std::move(echo);
  result.checkpoint.seed = seed;
  return result;
}

}  // namespace tdg
