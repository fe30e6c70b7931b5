#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support.hpp"

using namespace tdg;

namespace {

ScoredCandidates two(double a, double b) {
  return {0, Slot::timex_ref, {{NodeRef::meta(MetaNode::DCT), a}, {NodeRef::meta(MetaNode::ROOT), b}}};
}

Parameters filled(double value, std::size_t vocab = Vocabulary::kNumReserved) {
  Parameters p = Parameters::zeros(vocab, {2, 2});
  for (Tensor* t : p.tensors()) std::fill(t->data.begin(), t->data.end(), value);
  return p;
}

SyntheticData small_corpus(std::size_t docs, std::uint64_t seed, const char* prefix) {
  SynthConfig cfg;
  cfg.documents = docs;
  cfg.id_prefix = prefix;
  cfg.sentences = {3, 5};
  return generate_synthetic_corpus(cfg, seed);
}

}  // namespace

TEST(RankingLoss, HandValues) {
  ScoredCandidates single{0, Slot::timex_ref, {{NodeRef::meta(MetaNode::DCT), 3.0}}};
  EXPECT_EQ(ranking_loss(single, NodeRef::meta(MetaNode::DCT)), 0.0);
  EXPECT_NEAR(ranking_loss(two(0.5, 0.5), NodeRef::meta(MetaNode::DCT)), std::log(2.0), 1e-12);
  EXPECT_NEAR(ranking_loss(two(1.0, 0.0), NodeRef::meta(MetaNode::DCT)), std::log1p(std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(ranking_loss(two(1.0, 0.0), NodeRef::meta(MetaNode::DCT)), 0.3133, 5e-5);
  EXPECT_THROW(ranking_loss(two(1.0, 0.0), NodeRef::mention(0)), Error);
}

TEST(RankingLoss, GradientSumsToZero) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> logits(2 + rng.below(8));
    for (double& x : logits) x = rng.uniform(-5, 5);
    std::vector<double> g(logits.size());
    const double loss = softmax_cross_entropy(logits, rng.below(logits.size()), g);
    EXPECT_GE(loss, 0.0);
    EXPECT_NEAR(std::accumulate(g.begin(), g.end(), 0.0), 0.0, 1e-12);
  }
}

TEST(DpLoss, HandValues) {
  std::array<double, 9> zeros{};
  EXPECT_NEAR(dp_loss(zeros, ContentType::C1), std::log(9.0), 1e-12);
  std::array<double, 9> peaked{};
  peaked[2] = 10.0;
  // -log(e^10 / (e^10 + 8)) = log(1 + 8 e^-10)
  EXPECT_NEAR(dp_loss(peaked, ContentType::C1), std::log1p(8.0 * std::exp(-10.0)), 1e-12);
  EXPECT_NEAR(dp_loss(peaked, ContentType::C1), 3.6e-4, 1e-5);
}

TEST(DpLoss, NonTeacherPermutationInvariant) {
  std::array<double, 9> logits{0.3, -1.0, 2.0, 0.7, 0.1, -0.4, 1.1, 0.0, 0.5};
  const double base = dp_loss(logits, ContentType::C1);
  std::array<double, 9> perm = logits;
  std::swap(perm[0], perm[8]);
  std::swap(perm[3], perm[5]);
  EXPECT_NEAR(dp_loss(perm, ContentType::C1), base, 1e-15);
}

TEST(Schedule, KneeEndpointAndLinearity) {
  EXPECT_EQ(lr_at(50, 150, 50, 1e-4), 1e-4);
  EXPECT_EQ(lr_at(150, 150, 50, 1e-4), 0.0);
  EXPECT_EQ(lr_at(25, 150, 50, 1e-4), 0.5e-4);
  EXPECT_EQ(lr_at(0, 150, 50, 1e-4), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(100, 150, 50, 1e-4), 0.5e-4);
}

TEST(Schedule, PiecewiseLinearSinglePeak) {
  const std::size_t total = 300, warm = 100;
  std::size_t peaks = 0;
  for (std::size_t s = 0; s <= total; ++s) {
    const double lr = lr_at(s, total, warm, 2.0);
    peaks += lr == 2.0;
    if (s > 0 && s <= warm) {
      EXPECT_GT(lr, lr_at(s - 1, total, warm, 2.0));
    } else if (s > warm) {
      EXPECT_LT(lr, lr_at(s - 1, total, warm, 2.0));
    }
  }
  EXPECT_EQ(peaks, 1u);
}

TEST(AdamW, NullUpdate) {
  Parameters p = filled(0.3), g = filled(0.0);
  OptimizerState s = OptimizerState::for_parameters(p);
  Parameters before = p;
  adamw_step(p, g, s, 0.1, {0.9, 0.999, 1e-8, 0.0});
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.step, 1u);
}

TEST(AdamW, FirstStepValue) {
  // m_hat = 1, v_hat = 1, so theta' = -0.1 * 1 / (1 + 1e-8).
  Parameters p = filled(0.0), g = filled(1.0);
  OptimizerState s = OptimizerState::for_parameters(p);
  adamw_step(p, g, s, 0.1, {0.9, 0.999, 1e-8, 0.0});
  for (const Tensor* t : p.tensors())
    for (double x : t->data) EXPECT_NEAR(x, -0.1 / (1.0 + 1e-8), 1e-9);
}

TEST(AdamW, DecoupledDecayOnly) {
  Parameters p = filled(1.0), g = filled(0.0);
  OptimizerState s = OptimizerState::for_parameters(p);
  adamw_step(p, g, s, 0.1, {0.9, 0.999, 1e-8, 0.01});
  for (const Tensor* t : p.tensors())
    for (double x : t->data) EXPECT_NEAR(x, 0.999, 1e-9);
}

TEST(AdamW, NonFiniteGradientRejected) {
  Parameters p = filled(1.0), g = filled(0.0);
  g.pair_bias.data[0] = std::nan("");
  OptimizerState s = OptimizerState::for_parameters(p);
  EXPECT_THROW(adamw_step(p, g, s, 0.1), DivergenceError);
}

TEST(TrainConfig, JsonOverlayAndValidation) {
  TrainConfig base;
  EXPECT_EQ(base.max_epochs, 15u);
  EXPECT_EQ(base.batch_size_docs, 5u);
  EXPECT_EQ(base.peak_lr, 1e-4);
  EXPECT_EQ(base.warmup_epochs, 5u);
  EXPECT_EQ(base.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
  TrainConfig c = train_config_from_json(Json{{"variant", "dp_distill"}, {"update_order", "joint"}});
  EXPECT_EQ(c.variant, Variant::dp_distill);
  EXPECT_EQ(c.update_order, UpdateOrder::joint);
  EXPECT_EQ(train_config_to_json(train_config_from_json(train_config_to_json(c))), train_config_to_json(c));
  EXPECT_THROW(train_config_from_json(Json{{"bogus", 1}}), Error);
  TrainConfig bad;
  bad.warmup_epochs = 20;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Train, SeparableDocumentLossCollapses) {
  // One document with fully explicit class cues, repeated 10 times.
  SynthConfig cfg;
  cfg.documents = 1;
  cfg.sentences = {3, 3};
  cfg.timexes_per_sentence = {1, 1};
  cfg.events_per_sentence = {1, 1};
  cfg.noise_tokens = {1, 1};
  auto one = generate_synthetic_corpus(cfg, 21);
  Corpus corpus;
  for (int i = 0; i < 10; ++i) {
    Document d = one.corpus[0];
    d.id = "copy" + std::to_string(i);
    corpus.push_back(d);
  }
  TrainConfig tc;
  tc.peak_lr = 1e-2;
  tc.batch_size_docs = 1;
  auto r = train(tc, corpus, corpus, nullptr, 0);
  ASSERT_EQ(r.history.epochs.size(), 15u);
  EXPECT_LT(r.history.epochs.back().ranking_loss, 0.1 * r.history.epochs.front().ranking_loss);
}

TEST(Train, DeterministicAndSelectsBestEpoch) {
  auto tr = small_corpus(12, 1, "tr"), va = small_corpus(4, 2, "va");
  TrainConfig tc;
  tc.max_epochs = 4;
  tc.warmup_epochs = 1;
  tc.peak_lr = 5e-3;
  for (auto variant : {Variant::baseline, Variant::dp_feature, Variant::dp_distill}) {
    tc.variant = variant;
    DpLabelMap labels = tr.labels;
    for (const auto& d : va.corpus)
      for (std::size_t s = 0; s < d.sentences.size(); ++s) labels.set(d.id, s, va.labels.at(d.id, s));
    auto a = train(tc, tr.corpus, va.corpus, &labels, 3);
    auto b = train(tc, tr.corpus, va.corpus, &labels, 3);
    EXPECT_EQ(a.history, b.history);
    EXPECT_EQ(checkpoint_to_json(a.checkpoint).dump(), checkpoint_to_json(b.checkpoint).dump());
    double best = 0.0;
    for (const auto& e : a.history.epochs) best = std::max(best, e.valid_accuracy);
    const auto& chosen = a.history.epochs[a.history.best_epoch - 1];
    EXPECT_EQ(chosen.valid_accuracy, best);
    for (std::size_t i = 0; i + 1 < a.history.best_epoch; ++i) EXPECT_LT(a.history.epochs[i].valid_accuracy, best);
    // The returned model reproduces the recorded validation accuracy.
    auto graphs = predict_corpus(a.checkpoint.model, va.corpus, variant, &labels, tc.decode_order);
    EXPECT_EQ(attachment_accuracy(graphs, va.corpus), best);
    EXPECT_EQ(a.history.epochs.front().dp_loss.has_value(), variant == Variant::dp_distill);
  }
}

TEST(Train, UpdateOrderChangesHistory) {
  auto tr = small_corpus(10, 3, "tr"), va = small_corpus(4, 4, "va");
  TrainConfig tc;
  tc.variant = Variant::dp_distill;
  tc.max_epochs = 3;
  tc.warmup_epochs = 1;
  tc.peak_lr = 5e-3;
  auto a = train(tc, tr.corpus, va.corpus, &tr.labels, 0);
  tc.update_order = UpdateOrder::rank_then_dp;
  auto b = train(tc, tr.corpus, va.corpus, &tr.labels, 0);
  tc.update_order = UpdateOrder::joint;
  auto c = train(tc, tr.corpus, va.corpus, &tr.labels, 0);
  EXPECT_NE(a.history, b.history);
  EXPECT_NE(a.history, c.history);
}

TEST(Train, MissingLabelsRejected) {
  auto tr = small_corpus(4, 5, "tr"), va = small_corpus(2, 6, "va");
  TrainConfig tc;
  tc.variant = Variant::dp_feature;
  EXPECT_THROW(train(tc, tr.corpus, va.corpus, nullptr, 0), Error);
  EXPECT_THROW(train(tc, tr.corpus, va.corpus, &tr.labels, 0), CoverageError);
}

TEST(Train, DivergenceReportsCoordinates) {
  auto tr = small_corpus(4, 7, "tr"), va = small_corpus(2, 8, "va");
  TrainConfig tc;
  tc.peak_lr = 1e300;
  tc.warmup_epochs = 0;
  tc.init_scale = 1.0;
  try {
    train(tc, tr.corpus, va.corpus, nullptr, 0);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos) << e.what();
  }
}
