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

// Decision accuracy (micro, macro, per class) and question-generation
// F1_BLEU, overall and per seen/unseen subset.
//
// BLEU here is sentence-level over text::tokenize tokens (case-folded,
// punctuation split off), uniform weights up to max_n, standard brevity
// penalty. For n >= 2 an order with candidate n-grams but no matches uses
// precision 1 / (count + 1); an order with no candidate n-grams at all
// contributes precision 1. An empty candidate scores 0.

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "ocmr/common.hpp"
#include "ocmr/corpus.hpp"
#include "ocmr/entailment_supervision.hpp"
#include "ocmr/rd_fusion.hpp"
#include "ocmr/reader_model.hpp"
#include "ocmr/retriever.hpp"

namespace ocmr {

inline double bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference, int max_n) {
  if (max_n < 1) throw ContractError("bleu: max_n must be >= 1");
  if (candidate.empty() || reference.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto un = static_cast<std::size_t>(n);
    if (candidate.size() < un) continue;  // precision 1
    std::map<std::vector<std::string>, std::size_t> ref_counts, cand_counts;
    for (std::size_t i = 0; i + un <= reference.size(); ++i)
      ++ref_counts[{reference.begin() + static_cast<long>(i), reference.begin() + static_cast<long>(i + un)}];
    for (std::size_t i = 0; i + un <= candidate.size(); ++i)
      ++cand_counts[{candidate.begin() + static_cast<long>(i), candidate.begin() + static_cast<long>(i + un)}];
    std::size_t matches = 0, total = 0;
    for (const auto& [gram, c] : cand_counts) {
      total += c;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matches += std::min(c, it->second);
    }
    double p;
    if (matches > 0) {
      p = static_cast<double>(matches) / static_cast<double>(total);
    } else if (n == 1) {
      return 0.0;
    } else {
      p = 1.0 / (static_cast<double>(total) + 1.0);
    }
    log_sum += std::log(p) / max_n;
  }
  const double c = static_cast<double>(candidate.size()), r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum);
}

inline double bleu(std::string_view candidate, std::string_view reference, int max_n) {
  return bleu(text::tokenize(candidate), text::tokenize(reference), max_n);
}

struct PredictionRecord {
  std::string utterance_id;
  GenerationResult predicted;
  Decision gold_decision = Decision::Inquire;
  std::optional<std::string> gold_question;  // present iff gold_decision == Inquire
  Subset subset = Subset::Seen;
};

struct F1Bleu {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::size_t predicted_inquire = 0;  // M
  std::size_t gold_inquire = 0;       // N
};

inline F1Bleu f1_bleu_detail(const std::vector<PredictionRecord>& records, int max_n) {
  F1Bleu r;
  double psum = 0.0, rsum = 0.0;
  for (const auto& rec : records) {
    const bool pred_inq = rec.predicted.decision == Decision::Inquire;
    const bool gold_inq = rec.gold_decision == Decision::Inquire;
    double b = 0.0;
    if (pred_inq && gold_inq && rec.gold_question)
      b = bleu(rec.predicted.follow_up.value_or(rec.predicted.text), *rec.gold_question, max_n);
    if (pred_inq) {
      ++r.predicted_inquire;
      psum += b;
    }
    if (gold_inq) {
      ++r.gold_inquire;
      rsum += b;
    }
  }
  if (r.predicted_inquire == 0 || r.gold_inquire == 0) return r;
  r.precision = psum / static_cast<double>(r.predicted_inquire);
  r.recall = rsum / static_cast<double>(r.gold_inquire);
  if (r.precision + r.recall > 0) r.f1 = 2 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

inline double f1_bleu(const std::vector<PredictionRecord>& records, int max_n) {
  return f1_bleu_detail(records, max_n).f1;
}

struct DecisionMetrics {
  double micro = 0.0;  // percent
  double macro = 0.0;  // percent, mean over classes present in gold
  std::map<Decision, double> classwise;  // percent, classes present in gold only
  std::size_t total = 0, correct = 0;
};

inline DecisionMetrics decision_metrics(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw EmptyInputError("decision_metrics: no records");
  std::array<std::size_t, 3> gold{}, hit{};
  DecisionMetrics m;
  for (const auto& r : records) {
    const auto g = decision_index(r.gold_decision);
    ++gold[g];
    if (r.predicted.decision == r.gold_decision) {
      ++hit[g];
      ++m.correct;
    }
  }
  m.total = records.size();
  m.micro = 100.0 * static_cast<double>(m.correct) / static_cast<double>(m.total);
  double sum = 0.0;
  for (auto d : kAllDecisions) {
    const auto i = decision_index(d);
    if (gold[i] == 0) continue;
    m.classwise[d] = 100.0 * static_cast<double>(hit[i]) / static_cast<double>(gold[i]);
    sum += m.classwise[d];
  }
  m.macro = sum / static_cast<double>(m.classwise.size());
  return m;
}

struct SubsetReport {
  std::size_t count = 0;
  std::size_t correct = 0;
  double micro_acc = 0.0, macro_acc = 0.0;
  double f1_bleu1 = 0.0, f1_bleu4 = 0.0;
  std::size_t predicted_inquire = 0, gold_inquire = 0;
  std::map<Decision, double> classwise;
};

struct EvaluationReport {
  SubsetReport overall;
  std::map<Subset, SubsetReport> per_subset;
  nlohmann::json metadata = nlohmann::json::object();
};

inline SubsetReport score_records(const std::vector<PredictionRecord>& records) {
  SubsetReport s;
  s.count = records.size();
  if (records.empty()) return s;
  const auto dm = decision_metrics(records);
  s.correct = dm.correct;
  s.micro_acc = dm.micro;
  s.macro_acc = dm.macro;
  s.classwise = dm.classwise;
  const auto b1 = f1_bleu_detail(records, 1), b4 = f1_bleu_detail(records, 4);
  s.f1_bleu1 = b1.f1;
  s.f1_bleu4 = b4.f1;
  s.predicted_inquire = b1.predicted_inquire;
  s.gold_inquire = b1.gold_inquire;
  return s;
}

inline EvaluationReport score_report(const std::vector<PredictionRecord>& records) {
  EvaluationReport rep;
  rep.overall = score_records(records);
  for (auto subset : {Subset::Seen, Subset::Unseen}) {
    std::vector<PredictionRecord> part;
    for (const auto& r : records)
      if (r.subset == subset) part.push_back(r);
    rep.per_subset[subset] = score_records(part);
  }
  return rep;
}

inline nlohmann::json to_json(const SubsetReport& s) {
  nlohmann::json cw = nlohmann::json::object();
  for (const auto& [d, v] : s.classwise) cw[std::string(decision_name(d))] = v;
  return {{"count", s.count},          {"correct", s.correct},
          {"micro_acc", s.micro_acc},  {"macro_acc", s.macro_acc},
          {"f1_bleu1", s.f1_bleu1},    {"f1_bleu4", s.f1_bleu4},
          {"M_predicted_inquire", s.predicted_inquire}, {"N_gold_inquire", s.gold_inquire},
          {"classwise", cw}};
}

inline nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json subsets = nlohmann::json::object();
  for (const auto& [k, v] : r.per_subset) subsets[std::string(subset_name(k))] = to_json(v);
  return {{"overall", to_json(r.overall)}, {"per_subset", subsets}, {"metadata", r.metadata}};
}

/// Instance with the gold fields removed; this is all a predictor gets to see.
inline DialogueInstance redact(const DialogueInstance& inst) {
  DialogueInstance out = inst;
  out.gold_doc_id.clear();
  out.gold_answer.clear();
  out.evidence.clear();
  return out;
}

using Predictor = std::function<GenerationResult(const DialogueInstance& redacted, const FusionSample& candidates)>;

/// Runs `predict` over the top-k unshuffled candidates of every instance.
inline std::vector<PredictionRecord> predict_split(const DatasetSplit& split, const RetrievalMap& retrieval,
                                                   const std::set<DocId>& seen_gold, const Predictor& predict,
                                                   std::size_t k = 5) {
  std::vector<PredictionRecord> records;
  records.reserve(split.instances.size());
  for (const auto& inst : split.instances) {
    auto it = retrieval.find(inst.utterance_id);
    if (it == retrieval.end()) throw ReferentialError("evaluate: no retrieval entry for " + inst.utterance_id);
    PredictionRecord rec;
    rec.utterance_id = inst.utterance_id;
    rec.predicted = predict(redact(inst), inference_candidates(it->second, k));
    rec.gold_decision = decision_class(inst);
    if (rec.gold_decision == Decision::Inquire) rec.gold_question = inst.gold_answer;
    rec.subset = subset_of(inst, seen_gold);
    records.push_back(std::move(rec));
  }
  return records;
}

/// Predictor backed by a reader model; the model is switched to inference phase.
template <typename S>
Predictor model_predictor(ReaderModel<S>& model, const KnowledgeBase& kb, const Vocabulary& vocab,
                          std::size_t beam_size = 5, std::size_t max_len = 64) {
  model.set_phase(Phase::Inference);
  return [&model, &kb, &vocab, beam_size, max_len](const DialogueInstance& inst, const FusionSample& sample) {
    std::vector<EncodedCandidate<S>> encoded;
    for (const auto& id : sample.candidate_ids)
      encoded.push_back(model.encode(build_input(kb.at(id), inst, vocab, model.config().max_input_len)));
    return model.generate(ReaderModel<S>::fuse(encoded, sample), vocab, beam_size, max_len);
  };
}

template <typename S>
EvaluationReport evaluate(const DatasetSplit& split, const KnowledgeBase& kb, ReaderModel<S>& model,
                          const Vocabulary& vocab, const RetrievalMap& retrieval, const std::set<DocId>& seen_gold,
                          std::size_t k = 5, std::size_t beam_size = 5, std::vector<PredictionRecord>* out = nullptr) {
  const Phase before = model.phase();
  auto records = predict_split(split, retrieval, seen_gold, model_predictor(model, kb, vocab, beam_size), k);
  model.set_phase(before);
  auto rep = score_report(records);
  rep.metadata["seen_membership"] = "gold_doc_id in training gold rules";
  rep.metadata["candidates_k"] = k;
  rep.metadata["beam_size"] = beam_size;
  if (out) *out = std::move(records);
  return rep;
}

struct EntailmentAccuracy {
  std::size_t edus = 0, correct = 0;
  double accuracy() const { return edus ? 100.0 * static_cast<double>(correct) / static_cast<double>(edus) : 0.0; }
};

/// Diagnostic: per-EDU accuracy of the entailment head on the gold rule,
/// against the given reference labels. Runs in analysis phase.
template <typename S>
EntailmentAccuracy entailment_accuracy(ReaderModel<S>& model, const DatasetSplit& split, const KnowledgeBase& kb,
                                       const Vocabulary& vocab, const LabelMap& reference,
                                       std::optional<Subset> only = std::nullopt,
                                       const std::set<DocId>& seen_gold = {}) {
  const Phase before = model.phase();
  model.set_phase(Phase::Analysis);
  EntailmentAccuracy acc;
  for (const auto& inst : split.instances) {
    if (only && subset_of(inst, seen_gold) != *only) continue;
    auto it = reference.find(inst.utterance_id);
    if (it == reference.end()) throw ReferentialError("entailment_accuracy: no labels for " + inst.utterance_id);
    auto input = build_input(kb.at(inst.gold_doc_id), inst, vocab, model.config().max_input_len, true);
    auto logits = model.entailment_forward(model.encode(input)).logits;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index arg;
      logits.row(i).maxCoeff(&arg);
      ++acc.edus;
      if (static_cast<int>(arg) == static_cast<int>(it->second.labels.at(static_cast<std::size_t>(i)))) ++acc.correct;
    }
  }
  model.set_phase(before);
  return acc;
}

/// Plain-text comparison table in the layout of a results table.
inline std::string render_table(const std::vector<std::pair<std::string, nlohmann::json>>& runs) {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%6.1f", v);
    return std::string(buf);
  };
  std::string out = "run                          Micro   Macro  F1_BLEU1 F1_BLEU4 | seen-Micro unseen-Micro\n";
  for (const auto& [name, j] : runs) {
    const auto& o = j.at("overall");
    std::string line = name;
    line.resize(28, ' ');
    line += " " + fmt(o.at("micro_acc").get<double>()) + "  " + fmt(o.at("macro_acc").get<double>()) + "  " +
            fmt(100 * o.at("f1_bleu1").get<double>()) + "   " + fmt(100 * o.at("f1_bleu4").get<double>()) + "  | " +
            fmt(j.at("per_subset").at("seen").at("micro_acc").get<double>()) + "     " +
            fmt(j.at("per_subset").at("unseen").at("micro_acc").get<double>());
    out += line + "\n";
  }
  return out;
}

}  // namespace ocmr
