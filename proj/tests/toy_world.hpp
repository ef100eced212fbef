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

#pragma once

// Small synthetic world with everything the reader needs, shared by tests.

#include "ocmr/edu_segmentation.hpp"
#include "ocmr/entailment_supervision.hpp"
#include "ocmr/retriever.hpp"
#include "ocmr/synthetic.hpp"
#include "ocmr/training.hpp"
#include "ocmr/vocabulary.hpp"

namespace ocmr::testing_support {

struct ToyWorld {
  SyntheticWorld world;
  KnowledgeBase kb;  // segmented
  Vocabulary vocab;
  RetrievalMap train_retrieval, dev_retrieval;
  LabelMap labels;

  TrainData data() const { return {kb, world.train, train_retrieval, labels, vocab, &world.dev, &dev_retrieval}; }
};

inline SyntheticSpec small_spec(std::size_t rules = 8, std::size_t train = 40, std::size_t dev = 20) {
  SyntheticSpec s;
  s.num_rules = rules;
  s.vocab_size = rules + 40;
  s.num_train = train;
  s.num_dev = dev;
  s.num_test = dev;
  return s;
}

inline ToyWorld make_toy_world(const SyntheticSpec& spec) {
  ToyWorld t{generate(spec), {}, {}, {}, {}, {}};
  t.kb = segment_kb(t.world.kb);
  t.vocab = Vocabulary::build(t.kb, t.world.train);
  TfidfIndex index(t.kb);
  t.train_retrieval = retrieve_split(index, t.world.train);
  t.dev_retrieval = retrieve_split(index, t.world.dev);
  t.labels = label_split(t.world.train, t.kb);
  return t;
}

inline ModelConfig tiny_model(const Vocabulary& v, std::size_t max_input = 96) {
  ModelConfig c;
  c.vocab_size = v.size();
  c.d_model = 16;
  c.heads = 2;
  c.d_ff = 24;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.entailment_heads = 2;
  c.max_input_len = max_input;
  c.max_target_len = 16;
  c.dropout = 0.0;
  return c;
}

/// A batch of items with k candidates each, gold forced in, unshuffled.
inline std::vector<TrainItem> toy_batch(const ToyWorld& t, const ModelConfig& mc, std::size_t n, std::size_t k,
                                        std::uint64_t seed = 3) {
  std::vector<TrainItem> batch;
  for (std::size_t i = 0; i < n && i < t.world.train.instances.size(); ++i) {
    const auto& inst = t.world.train.instances[i];
    Rng rng = derive_rng(seed, "toy", i);
    auto pool = build_pool(inst, t.train_retrieval.at(inst.utterance_id), t.kb, FusionConfig{}, rng);
    auto sample = sample_step(pool, k, true, false, rng);
    batch.push_back(make_item(inst, sample, t.kb, t.vocab, mc, &t.labels));
  }
  return batch;
}

}  // namespace ocmr::testing_support
