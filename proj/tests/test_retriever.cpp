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

#include "ocmr/retriever.hpp"
#include "ocmr/synthetic.hpp"

namespace ocmr {
namespace {

KnowledgeBase kb_of(const std::vector<std::pair<std::string, std::string>>& docs) {
  KnowledgeBase kb;
  for (const auto& [id, body] : docs) kb.add({id, "", body, {}}, true);
  return kb;
}

TEST(Tfidf, EmptyKbIsError) { EXPECT_THROW(TfidfIndex(KnowledgeBase{}), EmptyInputError); }

TEST(Tfidf, SingleDocAlwaysReturned) {
  TfidfIndex idx(kb_of({{"only", "some rule text"}}));
  EXPECT_EQ(idx.size(), 1u);
  for (const char* q : {"rule", "nothing shared"}) {
    auto r = idx.retrieve({q}, 5);
    ASSERT_EQ(r.ranked.size(), 1u);
    EXPECT_EQ(r.ranked[0].doc_id, "only");
  }
}

TEST(Tfidf, HandComputedDisjointFixture) {
  // Every term has df = 1, so idf is the same constant and cancels in the cosine.
  TfidfIndex idx(kb_of({{"d1", "apple apple banana"}, {"d2", "cherry"}, {"d3", "date egg"}}));
  EXPECT_NEAR(idx.idf("apple"), std::log(4.0 / 2.0) + 1.0, 1e-12);
  auto r = idx.retrieve({"apple"}, 3);
  EXPECT_EQ(r.ranked[0].doc_id, "d1");
  EXPECT_NEAR(r.ranked[0].score, 2.0 / std::sqrt(5.0), 1e-12);
  r = idx.retrieve({"apple cherry"}, 3);
  ASSERT_EQ(r.ranked.size(), 3u);
  EXPECT_EQ(r.ranked[0].doc_id, "d2");
  EXPECT_NEAR(r.ranked[0].score, 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_EQ(r.ranked[1].doc_id, "d1");
  EXPECT_NEAR(r.ranked[1].score, 2.0 / std::sqrt(10.0), 1e-12);
  EXPECT_EQ(r.ranked[2].doc_id, "d3");
  EXPECT_EQ(r.ranked[2].score, 0.0);
}

TEST(Tfidf, FiveDocRankingEqualsExhaustiveCosine) {
  const std::vector<std::pair<std::string, std::string>> docs{
      {"a", "you can get the grant if you farm"}, {"b", "you can get the loan if you live in wales"},
      {"c", "the pension is paid if you are over 65"}, {"d", "grant for farmers in wales"}, {"e", "loan loan loan"}};
  auto kb = kb_of(docs);
  TfidfIndex idx(kb);
  std::map<std::string, int> df;
  std::vector<std::map<std::string, double>> tf(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (auto& t : text::content_tokens(" " + docs[i].second)) tf[i][t] += 1;
    for (auto& [t, _] : tf[i]) ++df[t];
  }
  auto vec = [&](const std::map<std::string, double>& counts) {
    std::map<std::string, double> v;
    double n = 0;
    for (auto& [t, c] : counts) {
      if (!df.count(t)) continue;
      v[t] = c * (std::log(6.0 / (1.0 + df[t])) + 1.0);
      n += v[t] * v[t];
    }
    for (auto& [t, x] : v) x /= std::sqrt(n);
    return v;
  };
  for (const char* q : {"can i get the grant in wales", "loan", "are you over 65 pension", "farm wales loan"}) {
    std::map<std::string, double> qc;
    for (auto& t : text::content_tokens(q)) qc[t] += 1;
    const auto qv = vec(qc);
    std::vector<ScoredDoc> want;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      const auto dv = vec(tf[i]);
      double s = 0;
      for (auto& [t, x] : qv)
        if (dv.count(t)) s += x * dv.at(t);
      want.push_back({docs[i].first, s});
    }
    std::sort(want.begin(), want.end(), [](auto& x, auto& y) { return x.score != y.score ? x.score > y.score : x.doc_id < y.doc_id; });
    const auto got = idx.retrieve({q}, 10);
    ASSERT_EQ(got.ranked.size(), 5u) << q;
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_EQ(got.ranked[i].doc_id, want[i].doc_id) << q;
      EXPECT_NEAR(got.ranked[i].score, want[i].score, 1e-12) << q;
    }
  }
}

TEST(Tfidf, ResultInvariantsAndDeterminism) {
  auto w = generate(SyntheticSpec{});
  TfidfIndex a(w.kb), b(w.kb);
  for (const auto& inst : w.dev.instances) {
    const auto q = Query::from(inst);
    auto ra = a.retrieve(q, 20), rb = b.retrieve(q, 20);
    EXPECT_EQ(ra.ranked, rb.ranked);
    ASSERT_EQ(ra.ranked.size(), 20u);
    std::set<DocId> ids;
    for (std::size_t i = 0; i < ra.ranked.size(); ++i) {
      ids.insert(ra.ranked[i].doc_id);
      if (i) {
        EXPECT_GE(ra.ranked[i - 1].score, ra.ranked[i].score);
      }
    }
    EXPECT_EQ(ids.size(), 20u);
  }
  EXPECT_EQ(a.retrieve({"grant"}, 500).ranked.size(), w.kb.size());
}

TEST(Tfidf, SelfRetrievalTopOneOnSyntheticKb) {
  auto w = generate(SyntheticSpec{});
  TfidfIndex idx(w.kb);
  for (const auto& d : w.kb.documents()) EXPECT_EQ(idx.retrieve({doc_text(d)}, 1).ranked[0].doc_id, d.doc_id);
}

TEST(TopK, TiesBreakByDocId) {
  auto r = top_k({{"b", 1.0}, {"a", 1.0}, {"c", 2.0}}, 3);
  EXPECT_EQ(r.ranked[0].doc_id, "c");
  EXPECT_EQ(r.ranked[1].doc_id, "a");
  EXPECT_EQ(r.ranked[2].doc_id, "b");
  EXPECT_THROW(top_k({}, 0), ContractError);
}

TEST(Query, JoinsQuestionAndScenario) {
  DialogueInstance i;
  i.question = "Can I get it?";
  i.scenario = "I live here.";
  EXPECT_EQ(Query::from(i).text, "Can I get it? I live here.");
  i.question = i.scenario = "";
  EXPECT_THROW(Query::from(i), ContractError);
}

TEST(ContrastiveLoss, UniformAndLimit) {
  EXPECT_NEAR(contrastive_loss(std::vector<double>(8, 0.3)), std::log(8.0), 1e-12);
  EXPECT_NEAR(contrastive_loss({1e4, 0.0, 1.0}), 0.0, 1e-12);
  std::vector<double> g;
  contrastive_loss({0.5, -1.0, 2.0}, &g);
  double sum = 0;
  for (double x : g) sum += x;
  EXPECT_NEAR(sum, 0.0, 1e-12);
  EXPECT_LT(g[0], 0.0);
}

TEST(DualEncoder, TooManyNegativesIsConfigError) {
  SyntheticSpec spec;
  spec.num_rules = 6;
  spec.num_train = 20;
  auto w = generate(spec);
  DualEncoderConfig c;
  c.num_negatives = w.kb.seen_ids().size();
  EXPECT_THROW(train_dual_encoder(w.kb, w.train, c), ConfigError);
}

TEST(DualEncoder, LossDecreasesAndSerializationRoundTrips) {
  SyntheticSpec spec;
  spec.num_train = 300;
  auto w = generate(spec);
  DualEncoderConfig c;
  c.steps = 200;
  DualEncoderTrace trace;
  auto enc = train_dual_encoder(w.kb, w.train, c, &trace);
  ASSERT_EQ(trace.step_loss.size(), 200u);
  auto mean = [&](std::size_t b, std::size_t e) {
    double s = 0;
    for (std::size_t i = b; i < e; ++i) s += trace.step_loss[i];
    return s / static_cast<double>(e - b);
  };
  EXPECT_LT(mean(80, 100), mean(0, 20));
  auto back = DualEncoder::from_json(enc.to_json());
  DenseIndex a(w.kb, enc), b(w.kb, back);
  const auto q = Query::from(w.dev.instances[0]);
  EXPECT_EQ(a.retrieve(q, 5).ranked, b.retrieve(q, 5).ranked);
}

TEST(EvaluateRetrieval, AllHitsAllMissesAndMonotone) {
  auto w = generate(SyntheticSpec{});
  const auto seen_gold = training_gold_ids(w.train);
  RetrievalMap hit, miss;
  for (const auto& inst : w.dev.instances) {
    std::vector<ScoredDoc> ranked{{inst.gold_doc_id, 1.0}}, missed;
    for (const auto& d : w.kb.documents())
      if (d.doc_id != inst.gold_doc_id) {
        ranked.push_back({d.doc_id, 0.0});
        missed.push_back({d.doc_id, 0.0});
      }
    hit[inst.utterance_id] = {ranked, 20};
    miss[inst.utterance_id] = {missed, 20};
  }
  auto t = evaluate_retrieval(hit, w.dev, w.kb, seen_gold);
  for (double a : t.overall.accuracy) EXPECT_EQ(a, 100.0);
  t = evaluate_retrieval(miss, w.dev, w.kb, seen_gold);
  for (double a : t.overall.accuracy) EXPECT_EQ(a, 0.0);

  TfidfIndex idx(w.kb);
  t = evaluate_retrieval(retrieve_split(idx, w.dev), w.dev, w.kb, seen_gold);
  for (const auto* row : {&t.overall, &t.seen, &t.unseen})
    for (std::size_t c = 1; c < 4; ++c) EXPECT_GE(row->accuracy[c], row->accuracy[c - 1]);
  for (std::size_t c = 0; c < 4; ++c) {
    const double weighted = (t.seen.accuracy[c] * static_cast<double>(t.seen.count) +
                             t.unseen.accuracy[c] * static_cast<double>(t.unseen.count)) /
                            static_cast<double>(t.overall.count);
    EXPECT_NEAR(weighted, t.overall.accuracy[c], 1e-9);
  }
  EXPECT_THROW(evaluate_retrieval({}, w.dev, w.kb, seen_gold), ReferentialError);
}

TEST(RetrievalCache, RoundTripAndStaleHash) {
  auto w = generate(SyntheticSpec{});
  TfidfIndex idx(w.kb);
  const auto results = retrieve_split(idx, w.dev);
  const auto text = serialize_retrieval(results, "tfidf", "abc");
  auto back = parse_retrieval(text, "abc");
  ASSERT_EQ(back.size(), results.size());
  for (const auto& [uid, r] : results) EXPECT_EQ(back.at(uid).ranked, r.ranked);
  EXPECT_THROW(parse_retrieval(text, "xyz"), StaleCacheError);
}

}  // namespace
}  // namespace ocmr
