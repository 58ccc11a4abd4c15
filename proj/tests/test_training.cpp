// Copyright 2026 The vibre Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "vibre/corpus.hpp"
#include "vibre/evaluation.hpp"
#include "vibre/model.hpp"
#include "vibre/training.hpp"

namespace vibre {
namespace {

std::vector<double> grads_of(const std::vector<Tensor>& params) {
  std::vector<double> out;
  for (const auto& p : params) {
    if (p.has_grad()) {
      out.insert(out.end(), p.grad().begin(), p.grad().end());
    } else {
      out.insert(out.end(), p.numel(), 0.0);
    }
  }
  return out;
}

TEST(TotalLossTest, AlphaBalancesTheTwoTerms) {
  // One entity token with mu = 1, sigma = 1 gives vib = 0.5.
  const Tensor mu({2, 1}, {1.0, 0.0});
  const Tensor sigma({2, 1}, {1.0, 1.0});
  const EntityMask mask({1, 0});
  // Two classes with logits chosen so that ce = 2 exactly: -log softmax = 2.
  const double gap = std::log(std::exp(2.0) - 1.0);
  const Tensor logits({1, 2}, {0.0, gap});
  const std::vector<std::size_t> gold{0};
  const LossTerms t = total_loss(logits, gold, mu, sigma, mask, 1);
  EXPECT_NEAR(t.ce, 2.0, 1e-12);
  EXPECT_NEAR(t.vib, 0.5, 1e-12);
  // The 1e-8 guard in the denominator shifts alpha by about 1.6e-7.
  EXPECT_NEAR(t.alpha, 4.0, 1e-6);
  EXPECT_NEAR(t.loss.item(), 4.0, 1e-6);
  EXPECT_NEAR(t.alpha * t.vib, t.ce, 1e-6);
}

TEST(TotalLossTest, ZeroVibKeepsAlphaFiniteAndLossEqualToCe) {
  const Tensor mu({1, 2}, {0.0, 0.0});
  const Tensor sigma({1, 2}, {1.0, 1.0});
  const Tensor logits({1, 3}, {0.3, -0.1, 0.9});
  const std::vector<std::size_t> gold{2};
  const LossTerms t = total_loss(logits, gold, mu, sigma, EntityMask({1}), 1);
  EXPECT_TRUE(std::isfinite(t.alpha));
  EXPECT_NEAR(t.loss.item(), t.ce, 1e-12);
}

TEST(TotalLossTest, WithoutVibTermLossIsCeExactly) {
  const Tensor logits({2, 3}, {0.3, -0.1, 0.9, 1.0, 2.0, 3.0});
  const std::vector<std::size_t> gold{2, 0};
  const LossTerms t = total_loss(logits, gold, Tensor(), Tensor(), EntityMask(), 2);
  EXPECT_EQ(t.loss.item(), softmax_cross_entropy(logits, gold).item());
  EXPECT_EQ(t.loss.item(), t.ce);
  EXPECT_EQ(t.alpha, 0.0);
}

TEST(TotalLossTest, AlphaCarriesNoGradient) {
  Rng rng(3);
  Tensor logits = Tensor::zeros({2, 3}, true);
  Tensor mu = Tensor::zeros({4, 2}, true);
  Tensor sigma = Tensor::full({4, 2}, 0.8, true);
  for (auto& v : logits.mutable_data()) v = rng.normal();
  for (auto& v : mu.mutable_data()) v = rng.normal();
  const std::vector<Tensor> params{logits, mu, sigma};
  const std::vector<std::size_t> gold{1, 2};
  const EntityMask mask({1, 1, 0, 1});

  double alpha = 0.0;
  {
    Tape tape;
    const LossTerms t = total_loss(logits, gold, mu, sigma, mask, 2);
    alpha = t.alpha;
    tape.backward(t.loss);
  }
  const auto combined = grads_of(params);
  for (auto p : params) p.zero_grad();
  {
    Tape tape;
    tape.backward(add(softmax_cross_entropy(logits, gold), scale(vib_loss(mu, sigma, mask, 2), alpha)));
  }
  const auto separate = grads_of(params);
  ASSERT_EQ(combined.size(), separate.size());
  for (std::size_t i = 0; i < combined.size(); ++i) EXPECT_NEAR(combined[i], separate[i], 1e-12);
}

TEST(AdamTest, ZeroGradientIsAFixedPoint) {
  Tensor p({3}, {1.0, -2.0, 0.5}, true);
  p.mutable_grad();
  std::vector<Tensor> params{p};
  OptimizerState s = OptimizerState::init(params);
  adam_step(params, s, TrainConfig{});
  EXPECT_EQ(p.value(0), 1.0);
  EXPECT_EQ(p.value(1), -2.0);
  EXPECT_EQ(p.value(2), 0.5);
  EXPECT_EQ(s.step, 1u);
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  Tensor p({1}, {0.0}, true);
  p.mutable_grad()[0] = 1.0;
  std::vector<Tensor> params{p};
  OptimizerState s = OptimizerState::init(params);
  TrainConfig cfg;
  adam_step(params, s, cfg);
  EXPECT_NEAR(p.value(0), -cfg.learning_rate, 1e-10);
  // Second step with the same gradient: m_hat = v_hat = 1 again.
  p.mutable_grad()[0] = 1.0;
  adam_step(params, s, cfg);
  EXPECT_NEAR(p.value(0), -2.0 * cfg.learning_rate, 1e-10);
}

TEST(AdamTest, MatchesHandRolledUpdate) {
  Rng rng(9);
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  Tensor p({4}, {0.1, 0.2, 0.3, 0.4}, true);
  std::vector<Tensor> params{p};
  OptimizerState s = OptimizerState::init(params);
  std::vector<double> ref(p.data().begin(), p.data().end()), m(4, 0.0), v(4, 0.0);
  for (int t = 1; t <= 20; ++t) {
    std::vector<double> g(4);
    for (auto& x : g) x = rng.normal();
    for (std::size_t i = 0; i < 4; ++i) p.mutable_grad()[i] = g[i];
    adam_step(params, s, cfg);
    for (std::size_t i = 0; i < 4; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1.0 - std::pow(0.9, t));
      const double vh = v[i] / (1.0 - std::pow(0.999, t));
      ref[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(p.value(i), ref[i], 1e-12);
    }
  }
}

TEST(TrainConfigTest, ValidationAndStrictJson) {
  TrainConfig c;
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.method = Method::kVib;
  const TrainConfig back = train_config_from_json(train_config_to_json(c));
  EXPECT_EQ(back.method, Method::kVib);
  EXPECT_EQ(back.learning_rate, c.learning_rate);
  auto j = train_config_to_json(c);
  j["lr"] = 0.1;
  EXPECT_THROW(train_config_from_json(j), std::invalid_argument);
}

class TrainingTest : public ::testing::Test {
 protected:
  void SetUp() override {
    lexicon_ = EntityLexicon::generate(4, 30);
    BiasSpec spec = BiasSpec::defaults();
    spec.pool_size = 30;
    corpus_ = generate_corpus(spec, lexicon_, SplitSizes{320, 64, 16, 16});
    vocab_ = Vocabulary::build(corpus_.train);
    model_.d_model = 16;
    model_.n_layers = 1;
    model_.n_heads = 2;
    model_.ffn_width = 32;
    inputs_ = TrainInputs{&vocab_, corpus_.train, corpus_.dev, &lexicon_};
  }
  TrainConfig config(Method method, std::size_t epochs) const {
    TrainConfig c;
    c.method = method;
    c.epochs = epochs;
    c.seed = 7;
    c.learning_rate = 3e-3;
    return c;
  }
  EntityLexicon lexicon_;
  Corpus corpus_;
  Vocabulary vocab_;
  ModelConfig model_;
  TrainInputs inputs_;
};

TEST_F(TrainingTest, ZeroEpochsReturnsInitialState) {
  const TrainConfig c = config(Method::kVanilla, 0);
  const TrainResult r = train(model_, c, inputs_);
  EXPECT_TRUE(r.log.empty());
  const ModelState init = ModelState::init(model_config_for(model_, c), vocab_.size());
  const auto a = init.parameters();
  const auto b = r.model.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].numel(); ++k) EXPECT_EQ(a[i].value(k), b[i].value(k));
}

TEST_F(TrainingTest, VibLogKeepsTermsBalancedAndIsDeterministic) {
  const TrainConfig c = config(Method::kVib, 2);
  const TrainResult a = train(model_, c, inputs_);
  const TrainResult b = train(model_, c, inputs_);
  EXPECT_EQ(a.log, b.log);
  ASSERT_EQ(a.log.size(), 2u * 10u);
  std::size_t dev_rows = 0;
  for (const auto& row : a.log) {
    EXPECT_NEAR(row.alpha * row.vib, row.ce, 1e-6);
    dev_rows += row.dev_micro_f1.has_value();
  }
  EXPECT_EQ(dev_rows, 2u);
  const auto pa = predict(a.model, vocab_, corpus_.dev, Method::kVib);
  const auto pb = predict(b.model, vocab_, corpus_.dev, Method::kVib);
  EXPECT_EQ(pa, pb);
}

TEST_F(TrainingTest, VanillaLossFallsAndFitsTrainingSet) {
  TrainConfig c = config(Method::kVanilla, 15);
  c.patience = 0;
  const TrainResult r = train(model_, c, inputs_);
  std::vector<double> epoch_ce(15, 0.0);
  for (const auto& row : r.log) epoch_ce[row.epoch - 1] += row.ce;
  EXPECT_LT(epoch_ce[1], epoch_ce[0]);
  EXPECT_LT(epoch_ce[2], epoch_ce[1]);
  for (const auto& row : r.log) EXPECT_EQ(row.alpha, 0.0);
  const auto preds = predict(r.model, vocab_, corpus_.train, Method::kVanilla);
  EXPECT_GT(micro_f1(preds), 0.9);
}

TEST_F(TrainingTest, ResumeFromCheckpointMatchesUninterruptedRun) {
  for (Method m : {Method::kVib, Method::kEntitySubstitution}) {
    TrainConfig c = config(m, 3);
    c.patience = 0;
    TrainProgress full = start_training(model_, c, vocab_.size());
    train(full, c, inputs_);

    TrainConfig first = c;
    first.epochs = 1;
    TrainProgress part = start_training(model_, c, vocab_.size());
    train(part, first, inputs_);
    const auto path = std::filesystem::path(::testing::TempDir()) / "vibre_train" / "progress.json";
    save_checkpoint(path, progress_to_checkpoint(part, c, vocab_));
    TrainConfig restored;
    TrainProgress resumed = progress_from_checkpoint(load_checkpoint(path), &restored);
    EXPECT_EQ(restored.method, m);
    train(resumed, c, inputs_);

    EXPECT_EQ(resumed.log, full.log) << method_name(m);
    EXPECT_EQ(resumed.best_dev, full.best_dev);
    const auto a = full.best.parameters();
    const auto b = resumed.best.parameters();
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t k = 0; k < a[i].numel(); ++k) ASSERT_EQ(a[i].value(k), b[i].value(k));
  }
}

TEST_F(TrainingTest, LogCsvHasHeaderAndOneLinePerBatch) {
  const TrainResult r = train(model_, config(Method::kVib, 1), inputs_);
  const auto path = std::filesystem::path(::testing::TempDir()) / "vibre_train" / "log.csv";
  write_log_csv(path, r.log);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kLogHeader);
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, r.log.size());
}

}  // namespace
}  // namespace vibre
