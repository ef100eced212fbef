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

#include <algorithm>

#include "oracles.hpp"
#include "ocmr/evaluation.hpp"
#include "ocmr/synthetic.hpp"

namespace ocmr {
namespace {

PredictionRecord rec(Decision gold, Decision pred, std::string gold_q = "", std::string pred_q = "",
                     Subset subset = Subset::Seen) {
  PredictionRecord r;
  r.gold_decision = gold;
  if (gold == Decision::Inquire) r.gold_question = gold_q;
  r.predicted.decision = pred;
  r.predicted.text = pred == Decision::Inquire ? pred_q : std::string(decision_name(pred));
  if (pred == Decision::Inquire) r.predicted.follow_up = pred_q;
  r.subset = subset;
  return r;
}

TEST(Bleu, IdenticalAndDisjoint) {
  EXPECT_DOUBLE_EQ(bleu("Are you over 65?", "are you over 65 ?", 4), 1.0);
  EXPECT_DOUBLE_EQ(bleu("a b c", "x y z", 1), 0.0);
  EXPECT_DOUBLE_EQ(bleu("", "x y z", 4), 0.0);
}

TEST(Bleu, SixTokenPairByHand) {
  // c = the cat sat on the mat, r = the cat is on the mat
  // p1 = 5/6, p2 = 3/5 (the cat, on the, the mat), p3 = 1/4 (on the mat), p4 = 1/(3+1) smoothed, bp = 1.
  const double want = std::pow(5.0 / 6 * 3.0 / 5 * 1.0 / 4 * 1.0 / 4, 0.25);
  EXPECT_NEAR(bleu("the cat sat on the mat", "the cat is on the mat", 4), want, 1e-12);
  EXPECT_NEAR(oracle::bleu(text::tokenize("the cat sat on the mat"), text::tokenize("the cat is on the mat"), 4), want, 1e-12);
  EXPECT_NEAR(bleu("the cat sat on the mat", "the cat is on the mat", 1), 5.0 / 6, 1e-12);
}

TEST(Bleu, BrevityPenaltyAndShortCandidates) {
  // One-token candidate with a match: only the unigram order has n-grams.
  EXPECT_NEAR(bleu("a", "a b", 4), std::exp(1.0 - 2.0), 1e-12);
  EXPECT_NEAR(bleu("a b", "a b c d", 1), std::exp(1.0 - 2.0), 1e-12);
}

TEST(Bleu, MatchesBruteForceOracleAndStaysInUnitInterval) {
  Rng rng = derive_rng(21, "bleu");
  for (int i = 0; i < 500; ++i) {
    auto c = oracle::random_tokens(rng, 12), r = oracle::random_tokens(rng, 12, 1);
    for (int n : {1, 4}) {
      const double b = bleu(c, r, n);
      EXPECT_NEAR(b, oracle::bleu(c, r, n), 1e-12);
      EXPECT_GE(b, 0.0);
      EXPECT_LE(b, 1.0 + 1e-12);
    }
    if (!r.empty()) {
      EXPECT_NEAR(bleu(r, r, 4), 1.0, 1e-12);
    }
  }
}

TEST(F1Bleu, PerfectAndDegenerate) {
  std::vector<PredictionRecord> perfect{rec(Decision::Inquire, Decision::Inquire, "are you a farmer?", "Are you a farmer ?"),
                                        rec(Decision::Yes, Decision::Yes)};
  EXPECT_DOUBLE_EQ(f1_bleu(perfect, 1), 1.0);
  EXPECT_DOUBLE_EQ(f1_bleu(perfect, 4), 1.0);
  std::vector<PredictionRecord> no_inquire{rec(Decision::Inquire, Decision::No, "q a"), rec(Decision::Yes, Decision::Yes)};
  EXPECT_EQ(f1_bleu(no_inquire, 4), 0.0);  // M = 0
  std::vector<PredictionRecord> no_gold{rec(Decision::Yes, Decision::Inquire, "", "q a")};
  EXPECT_EQ(f1_bleu(no_gold, 4), 0.0);  // N = 0
}

TEST(F1Bleu, FourRecordMixedFixture) {
  // Two matched Inquire (one exact, one partial), one false Inquire, one missed Inquire.
  std::vector<PredictionRecord> recs{
      rec(Decision::Inquire, Decision::Inquire, "do you live in wales ?", "do you live in wales ?"),
      rec(Decision::Inquire, Decision::Inquire, "are you a farmer ?", "are you a nurse ?"),
      rec(Decision::No, Decision::Inquire, "", "are you over 65 ?"),
      rec(Decision::Inquire, Decision::Yes, "do you have a van ?")};
  // BLEU1 of the partial pair = 4/5. M = 3, N = 3.
  const double p1 = (1.0 + 0.8) / 3, r1 = (1.0 + 0.8) / 3;
  EXPECT_NEAR(f1_bleu(recs, 1), 2 * p1 * r1 / (p1 + r1), 1e-12);
  const double b4 = std::pow(4.0 / 5 * 2.0 / 4 * 1.0 / 3 * 1.0 / 3, 0.25);  // 2-grams: are you, you a; 3-gram: are you a
  const double p4 = (1.0 + b4) / 3;
  EXPECT_NEAR(f1_bleu(recs, 4), p4, 1e-12);
  const auto d = f1_bleu_detail(recs, 4);
  EXPECT_EQ(d.predicted_inquire, 3u);
  EXPECT_EQ(d.gold_inquire, 3u);
}

TEST(F1Bleu, MatchesOracleOnRandomFixtures) {
  Rng rng = derive_rng(5, "f1");
  for (int i = 0; i < 200; ++i) {
    auto recs = oracle::random_records(rng, 10, 12);
    for (int n : {1, 4}) EXPECT_NEAR(f1_bleu(recs, n), oracle::f1_bleu(recs, n), 1e-12);
  }
}

TEST(DecisionMetrics, HandCountedFixture) {
  std::vector<PredictionRecord> recs{rec(Decision::Yes, Decision::Yes), rec(Decision::Yes, Decision::No),
                                     rec(Decision::No, Decision::No), rec(Decision::Inquire, Decision::Inquire, "q", "q")};
  const auto m = decision_metrics(recs);
  EXPECT_DOUBLE_EQ(m.micro, 75.0);
  EXPECT_DOUBLE_EQ(m.classwise.at(Decision::Yes), 50.0);
  EXPECT_DOUBLE_EQ(m.classwise.at(Decision::No), 100.0);
  EXPECT_DOUBLE_EQ(m.classwise.at(Decision::Inquire), 100.0);
  EXPECT_NEAR(m.macro, 83.33, 0.01);
}

TEST(DecisionMetrics, EmptyIsErrorAndAbsentClassesExcluded) {
  EXPECT_THROW(decision_metrics({}), EmptyInputError);
  const auto m = decision_metrics({rec(Decision::Yes, Decision::Yes), rec(Decision::No, Decision::Yes)});
  EXPECT_EQ(m.classwise.size(), 2u);
  EXPECT_DOUBLE_EQ(m.macro, 50.0);
}

TEST(DecisionMetrics, OrderInvarianceAndMacroIdentity) {
  Rng rng = derive_rng(8, "dm");
  for (int i = 0; i < 50; ++i) {
    auto recs = oracle::random_records(rng, 10, 5);
    const auto a = decision_metrics(recs);
    shuffle_in_place(recs, rng);
    const auto b = decision_metrics(recs);
    EXPECT_EQ(a.micro, b.micro);
    double sum = 0;
    for (const auto& [_, v] : b.classwise) sum += v;
    EXPECT_NEAR(b.macro, sum / static_cast<double>(b.classwise.size()), 1e-9);
  }
}

TEST(Report, SubsetCountsPartitionOverall) {
  Rng rng = derive_rng(4, "rep");
  auto recs = oracle::random_records(rng, 10, 5);
  for (std::size_t i = 0; i < recs.size(); ++i) recs[i].subset = i % 3 ? Subset::Seen : Subset::Unseen;
  const auto rep = score_report(recs);
  EXPECT_EQ(rep.overall.correct, rep.per_subset.at(Subset::Seen).correct + rep.per_subset.at(Subset::Unseen).correct);
  EXPECT_EQ(rep.overall.count, rep.per_subset.at(Subset::Seen).count + rep.per_subset.at(Subset::Unseen).count);
}

TEST(PredictSplit, PerfectStubScoresFullMarks) {
  SyntheticSpec spec;
  spec.num_train = 50;
  spec.num_dev = 60;
  auto w = generate(spec);
  TfidfIndex index(w.kb);
  const auto retrieval = retrieve_split(index, w.dev);
  std::map<std::string, std::string> answers;
  for (const auto& i : w.dev.instances) answers[i.utterance_id] = i.gold_answer;
  Predictor stub = [&](const DialogueInstance& inst, const FusionSample&) {
    EXPECT_TRUE(inst.gold_answer.empty());
    EXPECT_TRUE(inst.gold_doc_id.empty());
    GenerationResult g;
    g.text = answers.at(inst.utterance_id);
    auto [d, q] = parse_decision(g.text);
    g.decision = d;
    g.follow_up = q;
    return g;
  };
  const auto rep = score_report(predict_split(w.dev, retrieval, training_gold_ids(w.train), stub));
  EXPECT_EQ(rep.overall.micro_acc, 100.0);
  EXPECT_EQ(rep.overall.macro_acc, 100.0);
  EXPECT_EQ(rep.overall.f1_bleu1, 1.0);
  EXPECT_EQ(rep.overall.f1_bleu4, 1.0);
}

TEST(PredictSplit, MissingRetrievalNamesUtterance) {
  SyntheticSpec spec;
  spec.num_train = 5;
  spec.num_dev = 5;
  auto w = generate(spec);
  Predictor stub = [](const DialogueInstance&, const FusionSample&) { return GenerationResult{}; };
  try {
    predict_split(w.dev, {}, {}, stub);
    FAIL();
  } catch (const ReferentialError& e) {
    EXPECT_NE(std::string(e.what()).find(w.dev.instances[0].utterance_id), std::string::npos);
  }
}

TEST(Table, RendersOneLinePerRun) {
  Rng rng = derive_rng(2, "t");
  const auto j = to_json(score_report(oracle::random_records(rng, 10, 4)));
  const auto t = render_table({{"a", j}, {"b", j}});
  EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 3);
}

}  // namespace
}  // namespace ocmr
