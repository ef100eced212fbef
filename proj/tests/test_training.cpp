// Copyright 2026 The OCMR Authors. All Rights Reserved.
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

#include "toy_world.hpp"

namespace ocmr {
namespace {

using testing_support::make_toy_world;
using testing_support::small_spec;
using testing_support::tiny_model;
using testing_support::toy_batch;
using testing_support::ToyWorld;

const ToyWorld& world() {
  static const ToyWorld w = make_toy_world(small_spec());
  return w;
}

TEST(Losses, UniformLogits) {
  const int V = 37, M = 5;
  nn::Mat<double> logits = nn::Mat<double>::Constant(M, V, 0.3);
  EXPECT_NEAR(answer_loss<double>(logits, {1, 2, 3, 4, 5}), M * std::log(V), 1e-9);
  nn::Mat<double> ent = nn::Mat<double>::Zero(4, 3);
  using L = EntailmentLabel;
  EXPECT_NEAR(entailment_loss<double>(ent, {L::Entailment, L::Neutral, L::Neutral, L::Contradiction}), std::log(3.0),
              1e-12);
}

TEST(Losses, CombinedAndHandComputedEntailment) {
  EXPECT_DOUBLE_EQ(combined_loss(1.0, 2.0, 0.5), 2.0);
  EXPECT_DOUBLE_EQ(combined_loss(1.5, 7.0, 0.0), 1.5);
  nn::Mat<double> logits(4, 3);
  logits << 0, 0, 0,  //
      std::log(2.0), 0, 0,  //
      0, std::log(3.0), 0,  //
      0, 0, std::log(6.0);
  using L = EntailmentLabel;
  // ln 3, ln 2, ln(5/3), ln 8.
  EXPECT_NEAR(entailment_loss<double>(logits, {L::Neutral, L::Entailment, L::Contradiction, L::Entailment}),
              std::log(80.0) / 4, 1e-12);
}

TEST(Losses, ContractErrors) {
  nn::Mat<double> logits = nn::Mat<double>::Zero(2, 5);
  EXPECT_THROW(answer_loss<double>(logits, {}), ContractError);
  EXPECT_THROW(answer_loss<double>(logits, {1}), ContractError);
  EXPECT_THROW(entailment_loss<double>(nn::Mat<double>::Zero(2, 3), {EntailmentLabel::Neutral}), ContractError);
}

TEST(Losses, AnalyticLogitGradients) {
  Rng rng = derive_rng(1, "lg");
  nn::Mat<double> logits(3, 6);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = uniform_real(rng) * 4 - 2;
  const std::vector<int> target{2, 0, 5};
  nn::Mat<double> d;
  answer_loss<double>(logits, target, &d);
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    auto up = logits, down = logits;
    up.data()[i] += 1e-6;
    down.data()[i] -= 1e-6;
    EXPECT_NEAR((answer_loss<double>(up, target) - answer_loss<double>(down, target)) / 2e-6, d.data()[i], 1e-7);
  }
}

struct Entry {
  nn::Param<double>* p;
  Eigen::Index i;
};

TEST(Gradients, FiniteDifferencesAcrossAllThreeGroups) {
  const auto& t = world();
  const auto mc = tiny_model(t.vocab);
  ReaderModel<double> model(mc);
  const auto batch = toy_batch(t, mc, 3, 2);
  const double lambda = 0.9;
  model.zero_grad();
  auto base = batch_forward_backward(model, batch, lambda, true, {}, true);
  ASSERT_GT(base.entail_instances, 0u);

  Rng rng = derive_rng(5, "fd");
  std::map<nn::ParamGroup, std::vector<Entry>> candidates;
  for (auto* p : model.parameters())
    for (Eigen::Index i = 0; i < p->grad.size(); ++i)
      if (std::abs(p->grad.data()[i]) > 1e-5) candidates[p->group].push_back({p, i});
  ASSERT_EQ(candidates.size(), 3u);

  int checked = 0;
  for (auto& [group, list] : candidates) {
    for (int n = 0; n < 10; ++n) {
      const auto e = list[uniform_index(rng, list.size())];
      const double keep = e.p->value.data()[e.i];
      const double h = 1e-5;
      e.p->value.data()[e.i] = keep + h;
      const double up = batch_forward_backward(model, batch, lambda, true, {}, false).l_total;
      e.p->value.data()[e.i] = keep - h;
      const double down = batch_forward_backward(model, batch, lambda, true, {}, false).l_total;
      e.p->value.data()[e.i] = keep;
      const double fd = (up - down) / (2 * h), an = e.p->grad.data()[e.i];
      EXPECT_LE(std::abs(fd - an) / std::max(std::abs(fd), std::abs(an)), 1e-3)
          << e.p->name << "[" << e.i << "] fd " << fd << " analytic " << an;
      ++checked;
    }
  }
  EXPECT_EQ(checked, 30);
}

TEST(Gradients, ZeroLambdaLeavesEntailmentHeadUntouched) {
  const auto& t = world();
  const auto mc = tiny_model(t.vocab);
  ReaderModel<double> model(mc);
  const auto batch = toy_batch(t, mc, 3, 2);
  for (bool use : {true, false}) {
    const double lambda = use ? 0.0 : 0.9;
    model.zero_grad();
    auto loss = batch_forward_backward(model, batch, lambda, use, {}, true);
    EXPECT_EQ(loss.entail_instances, 0u);
    EXPECT_EQ(grad_norm(model, nn::ParamGroup::Entailment), 0.0);
    EXPECT_GT(grad_norm(model, nn::ParamGroup::Encoder), 0.0);
  }
}

TEST(Gradients, EntailmentOnlyOnGoldCandidate) {
  const auto& t = world();
  const auto mc = tiny_model(t.vocab);
  ReaderModel<double> model(mc);
  auto batch = toy_batch(t, mc, 2, 2);
  for (auto& item : batch)
    for (auto& in : item.inputs) in.is_gold = false;
  model.zero_grad();
  auto loss = batch_forward_backward(model, batch, 0.9, true, {}, true);
  EXPECT_EQ(loss.entail_instances, 0u);
  EXPECT_EQ(loss.l_entail, 0.0);
  EXPECT_EQ(grad_norm(model, nn::ParamGroup::Entailment), 0.0);
}

TEST(TrainStep, LoggedTotalIsExactCombination) {
  const auto& t = world();
  const auto mc = tiny_model(t.vocab);
  ReaderModel<float> model(mc);
  TrainingConfig tc;
  AdamW<float> opt(tc);
  const auto batch = toy_batch(t, mc, 4, 3);
  for (int i = 0; i < 3; ++i) {
    auto l = train_step(model, opt, batch, tc, {});
    EXPECT_EQ(l.lambda, 0.9);
    EXPECT_EQ(l.l_total, l.l_answer + 0.9 * l.l_entail);
  }
  EXPECT_EQ(opt.steps(), 3u);
}

TEST(TrainStep, SmallLearningRateDescends) {
  const auto& t = world();
  const auto mc = tiny_model(t.vocab);
  ReaderModel<double> model(mc);
  TrainingConfig tc;
  tc.lr_backbone = 1e-4;
  tc.lr_entailment_decoder = 1e-4;
  tc.weight_decay = 0;
  AdamW<double> opt(tc);
  const auto batch = toy_batch(t, mc, 4, 2);
  const double before = batch_forward_backward(model, batch, tc.lambda, true, {}, false).l_total;
  for (int i = 0; i < 5; ++i) train_step(model, opt, batch, tc, {});
  const double after = batch_forward_backward(model, batch, tc.lambda, true, {}, false).l_total;
  EXPECT_LT(after, before);
}

TEST(TrainStep, NonFiniteLossRaises) {
  const auto& t = world();
  const auto mc = tiny_model(t.vocab);
  ReaderModel<double> model(mc);
  model.answer_decoder().output.b.value(0, 4) = std::numeric_limits<double>::quiet_NaN();
  TrainingConfig tc;
  AdamW<double> opt(tc);
  EXPECT_THROW(train_step(model, opt, toy_batch(t, mc, 1, 2), tc, {}), NumericError);
}

TEST(AdamW, PerGroupLearningRates) {
  TrainingConfig tc;
  AdamW<float> opt(tc);
  EXPECT_EQ(opt.lr_for(nn::ParamGroup::Encoder), 2e-4);
  EXPECT_EQ(opt.lr_for(nn::ParamGroup::Answer), 2e-4);
  EXPECT_EQ(opt.lr_for(nn::ParamGroup::Entailment), 2e-5);
}

TEST(AdamW, FirstStepMovesEachEntryByLearningRate) {
  const auto& t = world();
  ReaderModel<double> model(tiny_model(t.vocab));
  TrainingConfig tc;
  tc.weight_decay = 0;
  tc.eps = 0;
  AdamW<double> opt(tc);
  auto params = model.parameters();
  std::vector<nn::Mat<double>> before;
  for (auto* p : params) {
    p->grad.setConstant(0.37);
    before.push_back(p->value);
  }
  opt.step(model);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double lr = opt.lr_for(params[i]->group);
    EXPECT_NEAR((before[i] - params[i]->value).maxCoeff(), lr, 1e-12) << params[i]->name;
    EXPECT_NEAR((before[i] - params[i]->value).minCoeff(), lr, 1e-12) << params[i]->name;
  }
}

TEST(Ablation, ParseAndEffectiveFusion) {
  auto none = AblationFlags::parse("none");
  EXPECT_TRUE(none.rd_pool && none.entailment_loss && none.shuffle && none.fusion);
  auto s = AblationFlags::parse("s");
  EXPECT_FALSE(s.rd_pool);
  EXPECT_TRUE(s.entailment_loss);
  auto all = AblationFlags::parse("s+a+i+f");
  EXPECT_FALSE(all.rd_pool || all.entailment_loss || all.shuffle || all.fusion);
  EXPECT_THROW(AblationFlags::parse("s+q"), ConfigError);

  auto f = effective_fusion(FusionConfig{}, AblationFlags::parse("f"));
  EXPECT_EQ(f.k, 1u);
  EXPECT_FALSE(f.rd_pool || f.force_gold || f.shuffle);
  auto i = effective_fusion(FusionConfig{}, AblationFlags::parse("i"));
  EXPECT_EQ(i.k, 5u);
  EXPECT_FALSE(i.shuffle);
  EXPECT_TRUE(i.rd_pool);
}

TEST(Train, ZeroStepsReturnsInitialization) {
  const auto& t = world();
  ReaderModel<float> model(tiny_model(t.vocab));
  TrainingConfig tc;
  tc.max_steps = 0;
  auto r = train(model, t.data(), FusionConfig{}, tc);
  EXPECT_TRUE(r.steps.empty());
  auto a = model.parameters(), b = r.model.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value);
}

TEST(Train, DeterministicLossCurves) {
  const auto& t = world();
  TrainingConfig tc;
  tc.max_steps = 6;
  tc.batch_size = 4;
  tc.eval_every = 0;
  auto mc = tiny_model(t.vocab);
  mc.dropout = 0.1;
  auto run = [&] {
    std::vector<double> curve;
    train(ReaderModel<float>(mc), t.data(), FusionConfig{}, tc, 2,
          [&](const StepLog& s) { curve.push_back(s.loss.l_total); });
    return curve;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 6u);
  EXPECT_EQ(a, b);
  tc.seed = 2;
  EXPECT_NE(run(), a);
}

TEST(Train, EpochsWrapAndLogFields) {
  const auto& t = world();
  TrainingConfig tc;
  tc.max_steps = 12;
  tc.batch_size = 8;  // 40 instances: 5 steps per epoch
  tc.eval_every = 0;
  auto r = train(ReaderModel<float>(tiny_model(t.vocab)), t.data(), FusionConfig{}, tc);
  ASSERT_EQ(r.steps.size(), 12u);
  EXPECT_EQ(r.steps[4].epoch, 0u);
  EXPECT_EQ(r.steps[5].epoch, 1u);
  EXPECT_EQ(r.steps.back().epoch, 2u);
  auto j = to_json(r.steps.front());
  for (const char* k : {"step", "epoch", "l_answer", "l_entail", "l_total", "lambda", "lr_backbone",
                        "lr_entailment_decoder"})
    EXPECT_TRUE(j.contains(k)) << k;
}

TEST(TrainingConfig, Validation) {
  TrainingConfig tc;
  tc.batch_size = 0;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = {};
  tc.lambda = -1;
  EXPECT_THROW(tc.validate(), ConfigError);
}

}  // namespace
}  // namespace ocmr
