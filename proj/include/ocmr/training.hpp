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

// Joint training of the answer decoder and the entailment decoder through the
// shared encoder:  L = L_answer + lambda * L_entail.
//
// Per batch, L_answer is the mean over instances of the summed token NLL and
// L_entail is the mean over instances whose sample contains the gold rule of
// the per-EDU cross-entropy mean. Parameters are updated with AdamW, one
// learning rate for the entailment decoder and one for everything else.

#include <cmath>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "json.hpp"
#include "ocmr/common.hpp"
#include "ocmr/corpus.hpp"
#include "ocmr/entailment_supervision.hpp"
#include "ocmr/evaluation.hpp"
#include "ocmr/nn.hpp"
#include "ocmr/rd_fusion.hpp"
#include "ocmr/reader_model.hpp"
#include "ocmr/retriever.hpp"

namespace ocmr {

struct AblationFlags {
  bool rd_pool = true;          // relevance-diversity pool (off: "-w/o s")
  bool entailment_loss = true;  // activated entailment loss (off: "-w/o a")
  bool shuffle = true;          // order shuffling (off: "-w/o i")
  bool fusion = true;           // k-candidate fusion (off: "-w/o f", top-1 only)

  /// Parses the cumulative ablation names "s", "s+a", "s+a+i", "s+a+i+f".
  static AblationFlags parse(std::string_view spec) {
    AblationFlags f;
    if (spec.empty() || spec == "none") return f;
    std::string part;
    std::string s(spec);
    s.push_back('+');
    for (char c : s) {
      if (c != '+') {
        part.push_back(c);
        continue;
      }
      if (part == "s") f.rd_pool = false;
      else if (part == "a") f.entailment_loss = false;
      else if (part == "i") f.shuffle = false;
      else if (part == "f") f.fusion = false;
      else throw ConfigError("unknown ablation '" + part + "' (expected s, a, i, f joined by '+')");
      part.clear();
    }
    return f;
  }
  nlohmann::json to_json() const {
    return {{"rd_pool", rd_pool}, {"entailment_loss", entailment_loss}, {"shuffle", shuffle}, {"fusion", fusion}};
  }
};

struct TrainingConfig {
  double lambda = 0.9;
  double lr_backbone = 2e-4;
  double lr_entailment_decoder = 2e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double grad_clip = 1.0;  // global norm; 0 disables
  std::size_t batch_size = 16;
  std::size_t max_steps = 4000;
  std::size_t eval_every = 250;  // steps between dev evaluations; 0 disables
  std::size_t patience = 3;      // evaluations without improvement before stopping
  std::uint64_t seed = 1;
  AblationFlags ablation;

  void validate() const {
    if (lambda < 0 || lambda > 1) throw ConfigError("training.lambda must be in [0, 1]");
    if (!(lr_backbone > 0) || !(lr_entailment_decoder > 0)) throw ConfigError("training learning rates must be > 0");
    if (batch_size == 0) throw ConfigError("training.batch_size must be positive");
  }
  nlohmann::json to_json() const {
    return {{"lambda", lambda},
            {"lr_backbone", lr_backbone},
            {"lr_entailment_decoder", lr_entailment_decoder},
            {"weight_decay", weight_decay},
            {"beta1", beta1},
            {"beta2", beta2},
            {"eps", eps},
            {"grad_clip", grad_clip},
            {"batch_size", batch_size},
            {"max_steps", max_steps},
            {"eval_every", eval_every},
            {"patience", patience},
            {"seed", seed},
            {"ablation", ablation.to_json()}};
  }
};

/// Fusion settings after applying ablation flags.
inline FusionConfig effective_fusion(FusionConfig f, const AblationFlags& a) {
  if (!a.rd_pool) f.rd_pool = false;
  if (!a.shuffle) f.shuffle = false;
  if (!a.fusion) {
    // Top-1 retrieved rule only, gold not injected.
    f.k = 1;
    f.rd_pool = false;
    f.force_gold = false;
    f.shuffle = false;
  }
  return f;
}

struct LossBreakdown {
  double l_answer = 0.0;
  double l_entail = 0.0;
  double l_total = 0.0;
  double lambda = 0.0;
  std::size_t entail_instances = 0;
};

inline double combined_loss(double l_answer, double l_entail, double lambda) { return l_answer + lambda * l_entail; }

/// Summed token NLL of `target` under logits [T x V]; optionally fills dL/dlogits.
template <typename S>
double answer_loss(const nn::Mat<S>& logits, const std::vector<int>& target, nn::Mat<S>* dlogits = nullptr) {
  if (target.empty()) throw ContractError("answer_loss: empty target");
  if (logits.rows() != static_cast<Eigen::Index>(target.size())) throw ContractError("answer_loss: length mismatch");
  nn::Mat<S> lp = nn::log_softmax_rows<S>(logits);
  double loss = 0.0;
  for (std::size_t t = 0; t < target.size(); ++t) loss -= static_cast<double>(lp(static_cast<Eigen::Index>(t), target[t]));
  if (dlogits) {
    *dlogits = lp.array().exp().matrix();
    for (std::size_t t = 0; t < target.size(); ++t) (*dlogits)(static_cast<Eigen::Index>(t), target[t]) -= S(1);
  }
  return loss;
}

/// Mean over EDUs of the 3-way cross-entropy; optionally fills dL/dlogits.
template <typename S>
double entailment_loss(const nn::Mat<S>& logits, const std::vector<EntailmentLabel>& labels,
                       nn::Mat<S>* dlogits = nullptr) {
  if (logits.rows() != static_cast<Eigen::Index>(labels.size()) || labels.empty())
    throw ContractError("entailment_loss: " + std::to_string(logits.rows()) + " logit rows for " +
                        std::to_string(labels.size()) + " labels");
  nn::Mat<S> lp = nn::log_softmax_rows<S>(logits);
  const double n = static_cast<double>(labels.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    loss -= static_cast<double>(lp(static_cast<Eigen::Index>(i), static_cast<int>(labels[i])));
  if (dlogits) {
    *dlogits = lp.array().exp().matrix();
    for (std::size_t i = 0; i < labels.size(); ++i) (*dlogits)(static_cast<Eigen::Index>(i), static_cast<int>(labels[i])) -= S(1);
    *dlogits /= static_cast<S>(n);
  }
  return loss / n;
}

/// One training example: k encoder inputs in fusion order plus targets.
struct TrainItem {
  std::vector<ContextualizedInput> inputs;
  FusionSample sample;
  std::vector<int> target;                             // answer ids + [EOS]
  std::optional<std::vector<EntailmentLabel>> labels;  // gold rule labels, if supervised
};

inline TrainItem make_item(const DialogueInstance& inst, const FusionSample& sample, const KnowledgeBase& kb,
                           const Vocabulary& vocab, const ModelConfig& mc, const LabelMap* labels) {
  TrainItem item;
  item.sample = sample;
  for (const auto& id : sample.candidate_ids)
    item.inputs.push_back(build_input(kb.at(id), inst, vocab, mc.max_input_len, id == inst.gold_doc_id));
  item.target = target_ids(inst.gold_answer, vocab, mc.max_target_len);
  if (labels) {
    auto it = labels->find(inst.utterance_id);
    if (it != labels->end()) item.labels = it->second.labels;
  }
  return item;
}

/// Forward pass over a batch; with `backward` set, accumulates gradients of
/// l_total into the model (which should be zeroed beforehand).
template <typename S>
LossBreakdown batch_forward_backward(ReaderModel<S>& model, const std::vector<TrainItem>& batch, double lambda,
                                     bool use_entailment, const nn::Context& ctx, bool backward) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  LossBreakdown out;
  out.lambda = lambda;
  const bool entail_on = use_entailment && lambda > 0;
  auto gold_index = [](const TrainItem& item) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < item.inputs.size(); ++i)
      if (item.inputs[i].is_gold) return i;
    return std::nullopt;
  };
  if (entail_on)
    for (const auto& item : batch)
      if (item.labels && gold_index(item)) ++out.entail_instances;

  const S answer_scale = S(1) / static_cast<S>(batch.size());
  const S entail_scale =
      out.entail_instances ? static_cast<S>(lambda) / static_cast<S>(out.entail_instances) : S(0);
  double answer_sum = 0.0, entail_sum = 0.0;

  for (const auto& item : batch) {
    const std::size_t k = item.inputs.size();
    std::vector<typename Encoder<S>::Cache> enc_caches(k);
    std::vector<EncodedCandidate<S>> encoded;
    encoded.reserve(k);
    for (std::size_t i = 0; i < k; ++i) encoded.push_back(model.encode(item.inputs[i], ctx, &enc_caches[i]));
    auto fused = ReaderModel<S>::fuse(encoded, item.sample);

    std::vector<int> dec_in{Vocabulary::kBos};
    dec_in.insert(dec_in.end(), item.target.begin(), item.target.end() - 1);
    typename AnswerDecoder<S>::Cache dec_cache;
    nn::Mat<S> logits = model.answer_decoder().forward(dec_in, fused.rows, ctx, dec_cache);
    nn::Mat<S> dlogits;
    answer_sum += answer_loss<S>(logits, item.target, backward ? &dlogits : nullptr);

    std::optional<std::size_t> g = entail_on && item.labels ? gold_index(item) : std::nullopt;
    nn::Mat<S> d_sentence;
    if (g) {
      const auto& gold = encoded[*g];
      typename EntailmentDecoder<S>::Cache ent_cache;
      auto ent_logits = model.entailment_forward(gold, ctx, &ent_cache).logits;
      const auto n = static_cast<std::size_t>(ent_logits.rows());
      if (item.labels->size() < n) throw ContractError("train_step: fewer labels than EDU markers");
      std::vector<EntailmentLabel> labels(item.labels->begin(), item.labels->begin() + static_cast<long>(n));
      nn::Mat<S> dent;
      entail_sum += entailment_loss<S>(ent_logits, labels, backward ? &dent : nullptr);
      if (backward) {
        dent *= entail_scale;
        d_sentence = model.entailment_decoder().backward(ent_cache, dent);
      }
    }

    if (backward) {
      dlogits *= answer_scale;
      nn::Mat<S> dmem = model.answer_decoder().backward(dec_cache, dlogits, fused.rows.rows());
      for (std::size_t i = 0; i < k; ++i) {
        const auto [b, e] = fused.boundaries[i];
        nn::Mat<S> dw = dmem.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b));
        model.encode_backward(enc_caches[i], encoded[i], std::move(dw), g && *g == i ? &d_sentence : nullptr);
      }
    }
  }
  out.l_answer = answer_sum / static_cast<double>(batch.size());
  out.l_entail = out.entail_instances ? entail_sum / static_cast<double>(out.entail_instances) : 0.0;
  out.l_total = combined_loss(out.l_answer, out.l_entail, lambda);
  return out;
}

/// AdamW with decoupled weight decay and one learning rate per parameter group.
template <typename S>
class AdamW {
 public:
  explicit AdamW(const TrainingConfig& c) : config_(c) {}

  double lr_for(nn::ParamGroup g) const {
    return g == nn::ParamGroup::Entailment ? config_.lr_entailment_decoder : config_.lr_backbone;
  }

  void step(ReaderModel<S>& model) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<S>(config_.beta1), b2 = static_cast<S>(config_.beta2);
    model.visit([&](nn::Param<S>& p) {
      const auto lr = static_cast<S>(lr_for(p.group));
      p.m = b1 * p.m + (S(1) - b1) * p.grad;
      p.v = b2 * p.v + (S(1) - b2) * p.grad.cwiseProduct(p.grad);
      if (p.decay && config_.weight_decay > 0) p.value *= S(1) - lr * static_cast<S>(config_.weight_decay);
      p.value.array() -= lr * (p.m.array() / static_cast<S>(c1)) /
                         ((p.v.array() / static_cast<S>(c2)).sqrt() + static_cast<S>(config_.eps));
    });
  }
  std::size_t steps() const { return t_; }

 private:
  TrainingConfig config_;
  std::size_t t_ = 0;
};

template <typename S>
double grad_norm(ReaderModel<S>& model, std::optional<nn::ParamGroup> group = std::nullopt) {
  double sq = 0.0;
  model.visit([&](nn::Param<S>& p) {
    if (!group || p.group == *group) sq += static_cast<double>(p.grad.squaredNorm());
  });
  return std::sqrt(sq);
}

/// One optimization step: forward both decoders, backpropagate the combined
/// loss through the shared encoder, clip, and apply AdamW.
template <typename S>
LossBreakdown train_step(ReaderModel<S>& model, AdamW<S>& optimizer, const std::vector<TrainItem>& batch,
                         const TrainingConfig& config, const nn::Context& ctx) {
  model.set_phase(Phase::Training);
  model.zero_grad();
  auto loss = batch_forward_backward(model, batch, config.lambda, config.ablation.entailment_loss, ctx, true);
  const double norm = grad_norm(model);
  if (!std::isfinite(loss.l_total) || !std::isfinite(norm))
    throw NumericError("train_step: non-finite loss (answer " + std::to_string(loss.l_answer) + ", entail " +
                       std::to_string(loss.l_entail) + ", grad norm " + std::to_string(norm) + ")");
  if (config.grad_clip > 0 && norm > config.grad_clip) {
    const auto scale = static_cast<S>(config.grad_clip / norm);
    model.visit([&](nn::Param<S>& p) { p.grad *= scale; });
  }
  optimizer.step(model);
  return loss;
}

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossBreakdown loss;
  double lr_backbone = 0.0, lr_entailment = 0.0;
};

struct DevLog {
  std::size_t step = 0;
  double micro_acc = 0.0;
};

struct TrainData {
  const KnowledgeBase& kb;  // segmented
  const DatasetSplit& train;
  const RetrievalMap& train_retrieval;
  const LabelMap& labels;
  const Vocabulary& vocab;
  const DatasetSplit* dev = nullptr;
  const RetrievalMap* dev_retrieval = nullptr;
};

template <typename S>
struct TrainResult {
  ReaderModel<S> model;
  std::vector<StepLog> steps;
  std::vector<DevLog> dev;
  double best_dev_micro = -1.0;
  std::size_t best_step = 0;
  bool early_stopped = false;
};

/// Epochs of train_step with per-epoch pool refresh and per-step sampling.
/// Keeps the parameters with the best dev Micro-Acc when a dev split is given.
template <typename S>
TrainResult<S> train(ReaderModel<S> model, const TrainData& data, const FusionConfig& fusion_config,
                     const TrainingConfig& config, std::size_t beam_size = 5,
                     const std::function<void(const StepLog&)>& on_step = {}) {
  config.validate();
  const FusionConfig fusion = effective_fusion(fusion_config, config.ablation);
  TrainResult<S> result{model, {}, {}, -1.0, 0, false};
  if (config.max_steps == 0 || data.train.instances.empty()) return result;

  const auto seen_gold = training_gold_ids(data.train);
  AdamW<S> optimizer(config);
  std::size_t step = 0, epoch = 0, bad_evals = 0;
  auto evaluate_dev = [&]() {
    if (!data.dev || !data.dev_retrieval || data.dev->instances.empty()) return;
    auto rep = evaluate(*data.dev, data.kb, model, data.vocab, *data.dev_retrieval, seen_gold, fusion.k,
                        beam_size);
    model.set_phase(Phase::Training);
    result.dev.push_back({step, rep.overall.micro_acc});
    spdlog::info("step {} dev micro {:.2f}", step, rep.overall.micro_acc);
    if (rep.overall.micro_acc > result.best_dev_micro) {
      result.best_dev_micro = rep.overall.micro_acc;
      result.best_step = step;
      result.model = model;
      bad_evals = 0;
    } else if (++bad_evals >= config.patience) {
      result.early_stopped = true;
    }
  };

  while (step < config.max_steps && !result.early_stopped) {
    std::vector<CandidatePool> pools;
    pools.reserve(data.train.instances.size());
    for (const auto& inst : data.train.instances) {
      auto it = data.train_retrieval.find(inst.utterance_id);
      if (it == data.train_retrieval.end()) throw ReferentialError("train: no retrieval entry for " + inst.utterance_id);
      Rng rng = derive_rng(config.seed, "pool:" + inst.utterance_id, epoch);
      pools.push_back(build_pool(inst, it->second, data.kb, fusion, rng));
    }
    std::vector<std::size_t> order(data.train.instances.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng order_rng = derive_rng(config.seed, "order", epoch);
    shuffle_in_place(order, order_rng);

    for (std::size_t at = 0; at < order.size() && step < config.max_steps && !result.early_stopped;
         at += config.batch_size) {
      std::vector<TrainItem> batch;
      for (std::size_t j = at; j < std::min(order.size(), at + config.batch_size); ++j) {
        const auto& inst = data.train.instances[order[j]];
        Rng rng = derive_rng(config.seed, "sample:" + inst.utterance_id, epoch, step);
        auto sample = sample_step(pools[order[j]], fusion.k, fusion.force_gold, fusion.shuffle, rng);
        batch.push_back(make_item(inst, sample, data.kb, data.vocab, model.config(), &data.labels));
      }
      Rng drop_rng = derive_rng(config.seed, "dropout", step);
      nn::Context ctx{true, model.config().dropout, &drop_rng};
      StepLog log;
      log.loss = train_step(model, optimizer, batch, config, ctx);
      log.step = ++step;
      log.epoch = epoch;
      log.lr_backbone = config.lr_backbone;
      log.lr_entailment = config.lr_entailment_decoder;
      result.steps.push_back(log);
      if (on_step) on_step(log);
      if (config.eval_every && step % config.eval_every == 0) evaluate_dev();
    }
    ++epoch;
  }
  if (!data.dev || config.eval_every == 0) {
    result.model = model;
    result.best_step = step;
  } else if (result.dev.empty() || result.dev.back().step != step) {
    evaluate_dev();
  }
  return result;
}

inline nlohmann::json to_json(const StepLog& s) {
  return {{"step", s.step},
          {"epoch", s.epoch},
          {"l_answer", s.loss.l_answer},
          {"l_entail", s.loss.l_entail},
          {"l_total", s.loss.l_total},
          {"lambda", s.loss.lambda},
          {"lr_backbone", s.lr_backbone},
          {"lr_entailment_decoder", s.lr_entailment}};
}

}  // namespace ocmr
