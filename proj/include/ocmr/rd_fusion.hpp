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

// Relevance-diversity candidate pools. Training draws k candidates per step
// from top retrieved rules plus random seen rules, optionally forcing the gold
// rule in and shuffling the order. Inference uses the unshuffled top-k only.

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "ocmr/common.hpp"
#include "ocmr/corpus.hpp"
#include "ocmr/retriever.hpp"

namespace ocmr {

struct FusionConfig {
  std::size_t k = 5;
  std::size_t top_relevant = 20;
  std::size_t num_random = 30;
  bool force_gold = true;
  bool shuffle = true;
  bool rd_pool = true;  // false: pool is the top-k relevant rules only

  void validate() const {
    if (k == 0) throw ConfigError("fusion.k must be >= 1");
    if (top_relevant == 0) throw ConfigError("fusion.top_relevant must be >= 1");
  }
  nlohmann::json to_json() const {
    return {{"k", k},
            {"top_relevant", top_relevant},
            {"num_random", num_random},
            {"force_gold", force_gold},
            {"shuffle", shuffle},
            {"rd_pool", rd_pool}};
  }
};

struct CandidatePool {
  std::string utterance_id;
  std::vector<DocId> relevant_ids;  // retrieval order
  std::vector<DocId> random_ids;
  DocId gold_id;

  /// dedup(relevant ∪ random ∪ {gold}) in that order.
  std::vector<DocId> members() const {
    std::vector<DocId> out;
    std::set<DocId> seen;
    auto add = [&](const DocId& id) {
      if (seen.insert(id).second) out.push_back(id);
    };
    for (const auto& id : relevant_ids) add(id);
    for (const auto& id : random_ids) add(id);
    add(gold_id);
    return out;
  }
};

struct FusionSample {
  std::vector<DocId> candidate_ids;
  std::optional<std::size_t> gold_position;
  bool shuffled = false;
};

/// Counters over sample_step calls; the evaluation path must leave them untouched.
struct FusionStats {
  std::size_t sample_calls = 0;
  std::size_t shuffles = 0;
  std::size_t gold_lookups = 0;
};

inline FusionStats& fusion_stats() {
  thread_local FusionStats stats;
  return stats;
}

/// Builds the training pool. Relevant and random rules come from the seen part
/// of the knowledge base only.
inline CandidatePool build_pool(const DialogueInstance& instance, const RetrievalResult& retrieval,
                                const KnowledgeBase& kb, const FusionConfig& config, Rng& rng) {
  config.validate();
  if (kb.seen_ids().empty()) throw EmptyInputError("build_pool: knowledge base has no seen rules");
  CandidatePool pool;
  pool.utterance_id = instance.utterance_id;
  pool.gold_id = instance.gold_doc_id;
  const std::size_t top = config.rd_pool ? config.top_relevant : config.k;
  std::set<DocId> taken;
  for (const auto& s : retrieval.ranked) {
    if (pool.relevant_ids.size() >= top) break;
    if (!kb.is_seen(s.doc_id) || !taken.insert(s.doc_id).second) continue;
    pool.relevant_ids.push_back(s.doc_id);
  }
  if (config.rd_pool && config.num_random > 0) {
    std::vector<DocId> rest;
    for (const auto& id : kb.seen_ids())
      if (!taken.count(id)) rest.push_back(id);
    const std::size_t n = std::min(config.num_random, rest.size());
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t j = i + uniform_index(rng, rest.size() - i);
      std::swap(rest[i], rest[j]);
      pool.random_ids.push_back(rest[i]);
    }
  }
  return pool;
}

/// Draws one fusion sample of up to k distinct rules from the pool.
inline FusionSample sample_step(const CandidatePool& pool, std::size_t k, bool force_gold, bool shuffle, Rng& rng) {
  auto& stats = fusion_stats();
  ++stats.sample_calls;
  const auto members = pool.members();
  std::vector<DocId> chosen;
  if (k >= members.size()) {
    chosen = members;
  } else {
    std::vector<DocId> rest;
    if (force_gold) {
      ++stats.gold_lookups;
      chosen.push_back(pool.gold_id);
      for (const auto& id : members)
        if (id != pool.gold_id) rest.push_back(id);
    } else {
      rest = members;
    }
    const std::size_t need = k - chosen.size();
    for (std::size_t i = 0; i < need; ++i) {
      std::size_t j = i + uniform_index(rng, rest.size() - i);
      std::swap(rest[i], rest[j]);
      chosen.push_back(rest[i]);
    }
  }

  FusionSample sample;
  if (shuffle) {
    ++stats.shuffles;
    shuffle_in_place(chosen, rng);
    sample.shuffled = true;
  } else {
    // Rank order; an unranked gold goes first, unranked random rules last.
    auto key = [&](const DocId& id) -> long {
      for (std::size_t i = 0; i < pool.relevant_ids.size(); ++i)
        if (pool.relevant_ids[i] == id) return static_cast<long>(i);
      if (id == pool.gold_id) return -1;
      for (std::size_t i = 0; i < pool.random_ids.size(); ++i)
        if (pool.random_ids[i] == id) return static_cast<long>(pool.relevant_ids.size() + i);
      return static_cast<long>(pool.relevant_ids.size() + pool.random_ids.size());
    };
    std::stable_sort(chosen.begin(), chosen.end(), [&](const DocId& a, const DocId& b) { return key(a) < key(b); });
  }
  sample.candidate_ids = std::move(chosen);
  for (std::size_t i = 0; i < sample.candidate_ids.size(); ++i)
    if (sample.candidate_ids[i] == pool.gold_id) sample.gold_position = i;
  return sample;
}

/// Top-k retrieved rules in rank order. Takes no instance, so it cannot see the gold rule.
inline FusionSample inference_candidates(const RetrievalResult& retrieval, std::size_t k = 5) {
  FusionSample sample;
  for (const auto& s : retrieval.ranked) {
    if (sample.candidate_ids.size() >= k) break;
    sample.candidate_ids.push_back(s.doc_id);
  }
  return sample;
}

}  // namespace ocmr
