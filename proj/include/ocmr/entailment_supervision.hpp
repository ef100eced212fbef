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

// Noisy per-EDU entailment labels for the gold rule of an instance. Each
// history turn is matched to the EDU at minimum token edit distance from its
// follow-up question; a "Yes" answer marks that EDU ENTAILMENT, "No" marks it
// CONTRADICTION, and every unmatched EDU stays NEUTRAL.

#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ocmr/common.hpp"
#include "ocmr/corpus.hpp"

namespace ocmr {

enum class EntailmentLabel : int { Entailment = 0, Contradiction = 1, Neutral = 2 };

inline constexpr std::string_view label_name(EntailmentLabel l) {
  switch (l) {
    case EntailmentLabel::Entailment: return "ENTAILMENT";
    case EntailmentLabel::Contradiction: return "CONTRADICTION";
    case EntailmentLabel::Neutral: return "NEUTRAL";
  }
  return "NEUTRAL";
}

inline EntailmentLabel parse_label(std::string_view s) {
  if (s == "ENTAILMENT") return EntailmentLabel::Entailment;
  if (s == "CONTRADICTION") return EntailmentLabel::Contradiction;
  if (s == "NEUTRAL") return EntailmentLabel::Neutral;
  throw ParseError("unknown entailment label: " + std::string(s));
}

struct EntailmentLabelSequence {
  DocId doc_id;
  std::vector<EntailmentLabel> labels;  // one per EDU of doc_id
};

struct LabelerConfig {
  // Turns whose best distance exceeds this are left unmatched. Off by default.
  std::optional<std::size_t> max_distance;

  nlohmann::json to_json() const {
    return {{"granularity", "token"},
            {"max_distance", max_distance ? nlohmann::json(*max_distance) : nlohmann::json(nullptr)}};
  }
};

/// Levenshtein distance between token sequences (unit costs), two-row DP.
template <typename Seq>
std::size_t levenshtein(const Seq& a, const Seq& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

/// Token-level edit distance after lowercasing and stripping punctuation.
inline std::size_t edit_distance(std::string_view a, std::string_view b) {
  return levenshtein(text::content_tokens(a), text::content_tokens(b));
}

/// Heuristic labels for the gold document. Ties go to the lowest EDU index and
/// a later turn overwrites an earlier one mapped to the same EDU.
inline EntailmentLabelSequence label_instance(const DialogueInstance& instance, const RuleDocument& gold_doc,
                                              const LabelerConfig& config = {}) {
  if (gold_doc.edus.empty()) throw ContractError("label_instance: document " + gold_doc.doc_id + " has no EDUs");
  EntailmentLabelSequence seq{gold_doc.doc_id,
                              std::vector<EntailmentLabel>(gold_doc.edus.size(), EntailmentLabel::Neutral)};
  std::vector<std::vector<std::string>> edu_tokens;
  edu_tokens.reserve(gold_doc.edus.size());
  for (const auto& e : gold_doc.edus) edu_tokens.push_back(text::content_tokens(e));

  for (const auto& turn : instance.history) {
    const auto q = text::content_tokens(turn.follow_up_question);
    std::size_t best = 0, best_dist = SIZE_MAX;
    for (std::size_t i = 0; i < edu_tokens.size(); ++i) {
      const auto d = levenshtein(q, edu_tokens[i]);
      if (d < best_dist) {
        best_dist = d;
        best = i;
      }
    }
    if (config.max_distance && best_dist > *config.max_distance) continue;
    seq.labels[best] = turn.follow_up_answer == Decision::No ? EntailmentLabel::Contradiction
                                                             : EntailmentLabel::Entailment;
  }
  return seq;
}

using LabelMap = std::map<std::string, EntailmentLabelSequence>;

inline LabelMap label_split(const DatasetSplit& split, const KnowledgeBase& kb, const LabelerConfig& config = {}) {
  LabelMap out;
  for (const auto& inst : split.instances) {
    const auto* doc = kb.find(inst.gold_doc_id);
    if (!doc) throw ReferentialError("label_split: " + inst.utterance_id + " references missing doc " + inst.gold_doc_id);
    out.emplace(inst.utterance_id, label_instance(inst, *doc, config));
  }
  return out;
}

// Sidecar cache: a header line carrying the config hash, then one record per
// utterance: {"utterance_id", "doc_id", "labels": [...]}.

inline std::string serialize_labels(const LabelMap& labels, const std::string& config_hash) {
  std::string out = nlohmann::json{{"kind", "entailment_labels"}, {"config_hash", config_hash}}.dump() + "\n";
  for (const auto& [uid, seq] : labels) {
    nlohmann::json names = nlohmann::json::array();
    for (auto l : seq.labels) names.push_back(std::string(label_name(l)));
    out += nlohmann::json{{"utterance_id", uid}, {"doc_id", seq.doc_id}, {"labels", names}}.dump() + "\n";
  }
  return out;
}

inline LabelMap parse_labels(std::string_view content, const std::string& expected_hash) {
  std::istringstream in{std::string(content)};
  std::string line;
  if (!std::getline(in, line)) throw ParseError("labels: missing header");
  auto header = nlohmann::json::parse(line);
  if (header.value("kind", "") != "entailment_labels") throw ParseError("labels: bad header");
  if (header.value("config_hash", "") != expected_hash)
    throw StaleCacheError("labels: config hash " + header.value("config_hash", "") + " != " + expected_hash);
  LabelMap out;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line);
    EntailmentLabelSequence seq;
    seq.doc_id = j.at("doc_id").get<std::string>();
    for (const auto& l : j.at("labels")) seq.labels.push_back(parse_label(l.get<std::string>()));
    out.emplace(j.at("utterance_id").get<std::string>(), std::move(seq));
  }
  return out;
}

}  // namespace ocmr
