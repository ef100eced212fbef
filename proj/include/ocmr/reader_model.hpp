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

// The reader: one shared encoder and two decoders.
//
// Every candidate rule is encoded on its own together with the dialogue
// context. The encoder output at each [EDU] marker is that EDU's
// sentence-level representation; the full output sequence is the word-level
// representation. During training an inter-sentence transformer plus a
// 3-way linear head classifies the gold candidate's EDUs. The answer decoder
// cross-attends over the row-concatenation of all candidates' word-level
// representations and generates "Yes", "No" or a follow-up question.
//
// Input template (markers are dedicated vocabulary items):
//   [EDU] edu_1 [EDU] edu_2 ... [SCN] scenario [USR] question
//   [HIS] q_1 [ANS] a_1 [HIS] q_2 [ANS] a_2 ...

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ocmr/common.hpp"
#include "ocmr/corpus.hpp"
#include "ocmr/nn.hpp"
#include "ocmr/rd_fusion.hpp"
#include "ocmr/vocabulary.hpp"

namespace ocmr {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 128;
  std::size_t heads = 4;
  std::size_t d_ff = 256;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t entailment_layers = 1;
  std::size_t entailment_heads = 8;
  std::size_t max_input_len = 128;
  std::size_t max_target_len = 64;
  double dropout = 0.1;
  std::uint64_t init_seed = 7;

  void validate() const {
    if (vocab_size <= Vocabulary::kNumSpecial) throw ConfigError("model.vocab_size too small");
    if (d_model == 0 || heads == 0 || d_model % heads != 0) throw ConfigError("model.d_model must be divisible by model.heads");
    if (entailment_heads == 0 || d_model % entailment_heads != 0)
      throw ConfigError("model.d_model must be divisible by model.entailment_heads");
    if (max_input_len < 4 || max_target_len < 1) throw ConfigError("model: bad sequence limits");
    if (dropout < 0 || dropout >= 1) throw ConfigError("model.dropout must be in [0, 1)");
  }

  nlohmann::json to_json() const {
    return {{"vocab_size", vocab_size},         {"d_model", d_model},
            {"heads", heads},                   {"d_ff", d_ff},
            {"encoder_layers", encoder_layers}, {"decoder_layers", decoder_layers},
            {"entailment_layers", entailment_layers}, {"entailment_heads", entailment_heads},
            {"max_input_len", max_input_len},   {"max_target_len", max_target_len},
            {"dropout", dropout},               {"init_seed", init_seed}};
  }
  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size");
    c.d_model = j.at("d_model");
    c.heads = j.at("heads");
    c.d_ff = j.at("d_ff");
    c.encoder_layers = j.at("encoder_layers");
    c.decoder_layers = j.at("decoder_layers");
    c.entailment_layers = j.at("entailment_layers");
    c.entailment_heads = j.at("entailment_heads");
    c.max_input_len = j.at("max_input_len");
    c.max_target_len = j.at("max_target_len");
    c.dropout = j.at("dropout");
    c.init_seed = j.at("init_seed");
    return c;
  }
};

// ---------------------------------------------------------------------------
// Input construction

struct ContextualizedInput {
  DocId candidate_id;
  std::vector<int> token_ids;
  std::vector<std::size_t> edu_marker_positions;
  bool is_gold = false;
};

/// Assembles the template for one candidate. When the sequence exceeds
/// max_len, trailing EDU blocks are dropped first (at least one is kept), then
/// the dialogue part is cut from the end.
inline ContextualizedInput build_input(const RuleDocument& candidate, const DialogueInstance& instance,
                                       const Vocabulary& vocab, std::size_t max_len, bool is_gold = false) {
  if (candidate.edus.empty()) throw ContractError("build_input: candidate " + candidate.doc_id + " has no EDUs");
  std::vector<std::vector<int>> blocks;
  for (const auto& e : candidate.edus) {
    std::vector<int> b{Vocabulary::kEdu};
    auto ids = vocab.encode(e);
    b.insert(b.end(), ids.begin(), ids.end());
    blocks.push_back(std::move(b));
  }
  std::vector<int> dialogue{Vocabulary::kScn};
  auto append = [&](std::string_view s) {
    auto ids = vocab.encode(s);
    dialogue.insert(dialogue.end(), ids.begin(), ids.end());
  };
  append(instance.scenario);
  dialogue.push_back(Vocabulary::kUsr);
  append(instance.question);
  for (const auto& t : instance.history) {
    dialogue.push_back(Vocabulary::kHis);
    append(t.follow_up_question);
    dialogue.push_back(Vocabulary::kAns);
    append(t.follow_up_answer == Decision::Yes ? "yes" : "no");
  }

  auto rule_len = [&] {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.size();
    return n;
  };
  while (blocks.size() > 1 && rule_len() + dialogue.size() > max_len) blocks.pop_back();
  if (rule_len() > max_len) blocks.front().resize(max_len);
  if (rule_len() + dialogue.size() > max_len) dialogue.resize(max_len - rule_len());

  ContextualizedInput in;
  in.candidate_id = candidate.doc_id;
  in.is_gold = is_gold;
  for (const auto& b : blocks) {
    in.edu_marker_positions.push_back(in.token_ids.size());
    in.token_ids.insert(in.token_ids.end(), b.begin(), b.end());
  }
  in.token_ids.insert(in.token_ids.end(), dialogue.begin(), dialogue.end());
  return in;
}

/// Decoder target: answer tokens followed by [EOS].
inline std::vector<int> target_ids(std::string_view answer, const Vocabulary& vocab, std::size_t max_len) {
  auto ids = vocab.encode(answer);
  if (ids.size() + 1 > max_len) ids.resize(max_len - 1);
  ids.push_back(Vocabulary::kEos);
  return ids;
}

// ---------------------------------------------------------------------------
// Outputs

template <typename S>
struct EncodedCandidate {
  DocId candidate_id;
  bool is_gold = false;
  std::vector<std::size_t> edu_marker_positions;
  nn::Mat<S> sentence_reps;  // [num_edus x d]
  nn::Mat<S> word_reps;      // [seq_len x d]
};

template <typename S>
struct FusedRepresentation {
  nn::Mat<S> rows;                                           // [(sum of seq_len) x d]
  std::vector<std::pair<std::size_t, std::size_t>> boundaries;  // [begin, end) per candidate
};

template <typename S>
struct EntailmentLogits {
  nn::Mat<S> logits;  // [num_edus x 3]
};

struct GenerationResult {
  std::string text;
  Decision decision = Decision::Inquire;
  std::optional<std::string> follow_up;
  double score = 0.0;  // sum of token log-probabilities, [EOS] included
  std::vector<int> tokens;
  bool fallback = false;  // empty generation replaced by the best decision word
};

/// "yes"/"no" (trimmed, case-folded) are decisions; any other text is a follow-up question.
inline std::pair<Decision, std::optional<std::string>> parse_decision(std::string_view generated) {
  const auto t = text::lower(text::trim(generated));
  if (t == "yes") return {Decision::Yes, std::nullopt};
  if (t == "no") return {Decision::No, std::nullopt};
  return {Decision::Inquire, text::trim(generated)};
}

// ---------------------------------------------------------------------------
// Beam search

struct Hypothesis {
  std::vector<int> tokens;  // without [EOS]
  double score = 0.0;
  bool finished = false;
};

/// Beam search over `step(prefix) -> log-probabilities`. A candidate ending in
/// `eos` is finished; search stops once no live hypothesis can beat the best
/// finished one (scores only decrease) or after max_len tokens.
template <typename StepFn>
Hypothesis beam_search(StepFn&& step, int eos, std::size_t beam_size, std::size_t max_len) {
  if (beam_size == 0) throw ContractError("beam_search: beam_size must be >= 1");
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    struct Cand {
      double score;
      std::size_t parent;
      int token;
    };
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const std::vector<double> lp = step(live[h].tokens);
      for (std::size_t v = 0; v < lp.size(); ++v)
        if (std::isfinite(lp[v])) cands.push_back({live[h].score + lp[v], h, static_cast<int>(v)});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score > b.score; });
    if (cands.size() > beam_size) cands.resize(beam_size);
    std::vector<Hypothesis> next;
    for (const auto& c : cands) {
      Hypothesis h{live[c.parent].tokens, c.score, false};
      if (c.token == eos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        h.tokens.push_back(c.token);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    if (!finished.empty() && !live.empty()) {
      double best_finished = finished.front().score;
      for (const auto& f : finished) best_finished = std::max(best_finished, f.score);
      double best_live = live.front().score;
      for (const auto& l : live) best_live = std::max(best_live, l.score);
      if (best_finished >= best_live) break;
    }
  }
  const auto& pool = finished.empty() ? live : finished;
  if (pool.empty()) return {};
  const Hypothesis* best = &pool.front();
  for (const auto& h : pool)
    if (h.score > best->score) best = &h;
  return *best;
}

// ---------------------------------------------------------------------------
// Model components

template <typename S>
struct Encoder {
  nn::Embedding<S> tokens, positions;
  std::vector<nn::EncoderLayer<S>> layers;
  nn::LayerNorm<S> final_norm;

  struct Cache {
    std::vector<int> ids;
    nn::Dropout<S> drop;
    std::vector<typename nn::EncoderLayer<S>::Cache> layers;
    typename nn::LayerNorm<S>::Cache final_norm;
  };

  void init(const ModelConfig& c, Rng& rng) {
    const auto d = static_cast<Eigen::Index>(c.d_model);
    const double out_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(1, c.encoder_layers)));
    tokens.init("encoder.tokens", nn::ParamGroup::Encoder, static_cast<Eigen::Index>(c.vocab_size), d, rng, 0.5);
    positions.init("encoder.positions", nn::ParamGroup::Encoder, static_cast<Eigen::Index>(c.max_input_len), d, rng, 0.5);
    layers.resize(c.encoder_layers);
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].init("encoder.layer" + std::to_string(i), nn::ParamGroup::Encoder, d, static_cast<int>(c.heads),
                     static_cast<Eigen::Index>(c.d_ff), rng, out_scale);
    final_norm.init("encoder.final_norm", nn::ParamGroup::Encoder, d);
  }

  nn::Mat<S> forward(const std::vector<int>& ids, const nn::Context& ctx, Cache& c) const {
    nn::Mat<S> x = tokens.forward(ids) + positions.prefix(static_cast<Eigen::Index>(ids.size()));
    x = c.drop.forward(x, ctx);
    c.ids = ids;
    c.layers.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) x = layers[i].forward(x, ctx, c.layers[i]);
    return final_norm.forward(x, c.final_norm);
  }
  void backward(const Cache& c, const nn::Mat<S>& dy) {
    nn::Mat<S> dx = final_norm.backward(c.final_norm, dy);
    for (std::size_t i = layers.size(); i-- > 0;) dx = layers[i].backward(c.layers[i], dx);
    dx = c.drop.backward(dx);
    tokens.backward(c.ids, dx);
    positions.backward_prefix(dx);
  }
  template <typename F>
  void visit(F&& f) {
    tokens.visit(f);
    positions.visit(f);
    for (auto& l : layers) l.visit(f);
    final_norm.visit(f);
  }
};

/// Inter-sentence transformer over EDU representations, then a 3-way linear head.
template <typename S>
struct EntailmentDecoder {
  std::vector<nn::PostNormLayer<S>> layers;
  nn::Linear<S> classifier;

  struct Cache {
    std::vector<typename nn::PostNormLayer<S>::Cache> layers;
    nn::Mat<S> head_input;
  };

  void init(const ModelConfig& c, Rng& rng) {
    const auto d = static_cast<Eigen::Index>(c.d_model);
    layers.resize(c.entailment_layers);
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].init("entailment.layer" + std::to_string(i), nn::ParamGroup::Entailment, d,
                     static_cast<int>(c.entailment_heads), static_cast<Eigen::Index>(c.d_ff), rng);
    classifier.init("entailment.classifier", nn::ParamGroup::Entailment, d, 3, rng);
  }
  nn::Mat<S> forward(const nn::Mat<S>& sentence_reps, const nn::Context& ctx, Cache& c) const {
    nn::Mat<S> x = sentence_reps;
    c.layers.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) x = layers[i].forward(x, ctx, c.layers[i]);
    c.head_input = x;
    return classifier.forward(x);
  }
  nn::Mat<S> backward(const Cache& c, const nn::Mat<S>& dlogits) {
    nn::Mat<S> dx = classifier.backward(c.head_input, dlogits);
    for (std::size_t i = layers.size(); i-- > 0;) dx = layers[i].backward(c.layers[i], dx);
    return dx;
  }
  template <typename F>
  void visit(F&& f) {
    for (auto& l : layers) l.visit(f);
    classifier.visit(f);
  }
};

template <typename S>
struct AnswerDecoder {
  nn::Embedding<S> tokens, positions;
  std::vector<nn::DecoderLayer<S>> layers;
  nn::LayerNorm<S> final_norm;
  nn::Linear<S> output;

  struct Cache {
    std::vector<int> ids;
    nn::Dropout<S> drop;
    std::vector<typename nn::DecoderLayer<S>::Cache> layers;
    typename nn::LayerNorm<S>::Cache final_norm;
    nn::Mat<S> hidden;
  };

  /// Cross-attention keys/values of the fused memory, one pair per layer.
  struct Memory {
    std::vector<nn::Mat<S>> keys, values;
  };

  void init(const ModelConfig& c, Rng& rng) {
    const auto d = static_cast<Eigen::Index>(c.d_model);
    const double out_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(1, c.decoder_layers)));
    tokens.init("answer.tokens", nn::ParamGroup::Answer, static_cast<Eigen::Index>(c.vocab_size), d, rng, 0.5);
    positions.init("answer.positions", nn::ParamGroup::Answer, static_cast<Eigen::Index>(c.max_target_len + 1), d, rng,
                   0.5);
    layers.resize(c.decoder_layers);
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].init("answer.layer" + std::to_string(i), nn::ParamGroup::Answer, d, static_cast<int>(c.heads),
                     static_cast<Eigen::Index>(c.d_ff), rng, out_scale);
    final_norm.init("answer.final_norm", nn::ParamGroup::Answer, d);
    output.init("answer.output", nn::ParamGroup::Answer, d, static_cast<Eigen::Index>(c.vocab_size), rng);
  }

  /// Teacher-forced logits [T x V] for decoder inputs `ids` ([BOS] + prefix).
  nn::Mat<S> forward(const std::vector<int>& ids, const nn::Mat<S>& memory, const nn::Context& ctx, Cache& c) const {
    nn::Mat<S> x = tokens.forward(ids) + positions.prefix(static_cast<Eigen::Index>(ids.size()));
    x = c.drop.forward(x, ctx);
    c.ids = ids;
    c.layers.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) x = layers[i].forward(x, memory, ctx, c.layers[i]);
    c.hidden = final_norm.forward(x, c.final_norm);
    return output.forward(c.hidden);
  }

  /// Returns the gradient with respect to the memory rows.
  nn::Mat<S> backward(const Cache& c, const nn::Mat<S>& dlogits, Eigen::Index memory_rows) {
    nn::Mat<S> dx = final_norm.backward(c.final_norm, output.backward(c.hidden, dlogits));
    nn::Mat<S> dmem = nn::Mat<S>::Zero(memory_rows, dx.cols());
    for (std::size_t i = layers.size(); i-- > 0;) {
      auto [d_in, d_mem] = layers[i].backward(c.layers[i], dx);
      dx = std::move(d_in);
      dmem += d_mem;
    }
    dx = c.drop.backward(dx);
    tokens.backward(c.ids, dx);
    positions.backward_prefix(dx);
    return dmem;
  }

  Memory prepare(const nn::Mat<S>& memory) const {
    Memory m;
    for (const auto& l : layers) {
      m.keys.push_back(l.cross_attn.k.forward(memory));
      m.values.push_back(l.cross_attn.v.forward(memory));
    }
    return m;
  }

  /// Log-probabilities of the next token after `ids` ([BOS] + prefix).
  nn::RowVec<S> next_log_probs(const std::vector<int>& ids, const Memory& m) const {
    nn::Mat<S> x = tokens.forward(ids) + positions.prefix(static_cast<Eigen::Index>(ids.size()));
    for (std::size_t i = 0; i < layers.size(); ++i) x = layers[i].forward_cached(x, m.keys[i], m.values[i]);
    typename nn::LayerNorm<S>::Cache ln;
    nn::Mat<S> last = final_norm.forward(nn::Mat<S>(x.bottomRows(1)), ln);
    return nn::log_softmax_rows<S>(output.forward(last)).row(0);
  }

  template <typename F>
  void visit(F&& f) {
    tokens.visit(f);
    positions.visit(f);
    for (auto& l : layers) l.visit(f);
    final_norm.visit(f);
    output.visit(f);
  }
};

enum class Phase { Training, Inference, Analysis };

/// Call counters used to verify which paths touched which heads.
struct ModelProbe {
  std::size_t encode_calls = 0;
  std::size_t entailment_calls = 0;
  std::size_t generate_calls = 0;
};

template <typename S>
class ReaderModel {
 public:
  using Scalar = S;

  explicit ReaderModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    Rng rng = derive_rng(config_.init_seed, "reader-init");
    encoder_.init(config_, rng);
    entailment_.init(config_, rng);
    answer_.init(config_, rng);
  }

  const ModelConfig& config() const { return config_; }
  Encoder<S>& encoder() { return encoder_; }
  EntailmentDecoder<S>& entailment_decoder() { return entailment_; }
  AnswerDecoder<S>& answer_decoder() { return answer_; }
  const Encoder<S>& encoder() const { return encoder_; }
  const EntailmentDecoder<S>& entailment_decoder() const { return entailment_; }
  const AnswerDecoder<S>& answer_decoder() const { return answer_; }

  Phase phase() const { return phase_; }
  void set_phase(Phase p) { phase_ = p; }
  ModelProbe& probe() const { return probe_; }

  /// Visits every parameter once: encoder, entailment decoder, answer decoder.
  template <typename F>
  void visit(F&& f) {
    encoder_.visit(f);
    entailment_.visit(f);
    answer_.visit(f);
  }
  std::vector<nn::Param<S>*> parameters() {
    std::vector<nn::Param<S>*> out;
    visit([&](nn::Param<S>& p) { out.push_back(&p); });
    return out;
  }
  void zero_grad() {
    visit([](nn::Param<S>& p) { p.grad.setZero(); });
  }

  /// Encoder pass. With a cache the call is differentiable via encode_backward.
  EncodedCandidate<S> encode(const ContextualizedInput& input, const nn::Context& ctx = {},
                             typename Encoder<S>::Cache* cache = nullptr) const {
    if (input.token_ids.size() > config_.max_input_len)
      throw ContractError("encode: sequence of " + std::to_string(input.token_ids.size()) +
                          " tokens exceeds max_input_len " + std::to_string(config_.max_input_len));
    if (input.edu_marker_positions.empty()) throw ContractError("encode: input has no EDU markers");
    ++probe_.encode_calls;
    typename Encoder<S>::Cache local;
    auto& c = cache ? *cache : local;
    EncodedCandidate<S> out;
    out.candidate_id = input.candidate_id;
    out.is_gold = input.is_gold;
    out.edu_marker_positions = input.edu_marker_positions;
    out.word_reps = encoder_.forward(input.token_ids, ctx, c);
    out.sentence_reps.resize(static_cast<Eigen::Index>(input.edu_marker_positions.size()), out.word_reps.cols());
    for (std::size_t i = 0; i < input.edu_marker_positions.size(); ++i)
      out.sentence_reps.row(static_cast<Eigen::Index>(i)) =
          out.word_reps.row(static_cast<Eigen::Index>(input.edu_marker_positions[i]));
    return out;
  }

  /// Backward through the encoder given gradients for both representations.
  void encode_backward(const typename Encoder<S>::Cache& cache, const EncodedCandidate<S>& enc,
                       nn::Mat<S> d_word_reps, const nn::Mat<S>* d_sentence_reps) {
    if (d_sentence_reps)
      for (std::size_t i = 0; i < enc.edu_marker_positions.size(); ++i)
        d_word_reps.row(static_cast<Eigen::Index>(enc.edu_marker_positions[i])) +=
            d_sentence_reps->row(static_cast<Eigen::Index>(i));
    encoder_.backward(cache, d_word_reps);
  }

  /// Entailment logits for the gold candidate's EDUs. Not available at inference.
  EntailmentLogits<S> entailment_forward(const EncodedCandidate<S>& gold, const nn::Context& ctx = {},
                                         typename EntailmentDecoder<S>::Cache* cache = nullptr) const {
    if (phase_ == Phase::Inference) throw ContractError("entailment_forward: called on the inference path");
    if (!gold.is_gold) throw ContractError("entailment_forward: candidate " + gold.candidate_id + " is not gold");
    ++probe_.entailment_calls;
    typename EntailmentDecoder<S>::Cache local;
    return {entailment_.forward(gold.sentence_reps, ctx, cache ? *cache : local)};
  }

  /// Row-concatenation of word-level representations in sample order.
  static FusedRepresentation<S> fuse(const std::vector<EncodedCandidate<S>>& encoded, const FusionSample& order) {
    if (encoded.size() != order.candidate_ids.size() || encoded.empty())
      throw ContractError("fuse: candidate count does not match the fusion sample");
    const auto d = encoded.front().word_reps.cols();
    Eigen::Index rows = 0;
    for (std::size_t i = 0; i < encoded.size(); ++i) {
      if (encoded[i].word_reps.cols() != d) throw ContractError("fuse: hidden size mismatch");
      if (encoded[i].candidate_id != order.candidate_ids[i]) throw ContractError("fuse: candidate order mismatch");
      rows += encoded[i].word_reps.rows();
    }
    FusedRepresentation<S> f;
    f.rows.resize(rows, d);
    Eigen::Index at = 0;
    for (const auto& e : encoded) {
      f.rows.middleRows(at, e.word_reps.rows()) = e.word_reps;
      f.boundaries.emplace_back(static_cast<std::size_t>(at), static_cast<std::size_t>(at + e.word_reps.rows()));
      at += e.word_reps.rows();
    }
    return f;
  }

  /// Sum of log p(token) for `target` (which should end in [EOS]) under teacher forcing.
  double sequence_log_prob(const FusedRepresentation<S>& fused, const std::vector<int>& target) const {
    std::vector<int> in{Vocabulary::kBos};
    in.insert(in.end(), target.begin(), target.end() - 1);
    typename AnswerDecoder<S>::Cache c;
    nn::Mat<S> lp = nn::log_softmax_rows<S>(answer_.forward(in, fused.rows, {}, c));
    double total = 0.0;
    for (std::size_t t = 0; t < target.size(); ++t) total += static_cast<double>(lp(static_cast<Eigen::Index>(t), target[t]));
    return total;
  }

  /// Beam search decoding over the fused representation.
  GenerationResult generate(const FusedRepresentation<S>& fused, const Vocabulary& vocab, std::size_t beam_size = 5,
                            std::size_t max_len = 64) const {
    ++probe_.generate_calls;
    max_len = std::min(max_len, config_.max_target_len);
    const auto memory = answer_.prepare(fused.rows);
    auto step = [&](const std::vector<int>& prefix) {
      std::vector<int> in{Vocabulary::kBos};
      in.insert(in.end(), prefix.begin(), prefix.end());
      const auto lp = answer_.next_log_probs(in, memory);
      std::vector<double> out(static_cast<std::size_t>(lp.size()));
      for (Eigen::Index v = 0; v < lp.size(); ++v)
        out[static_cast<std::size_t>(v)] = (Vocabulary::is_special(static_cast<int>(v)) && v != Vocabulary::kEos &&
                                            v != Vocabulary::kUnk)
                                               ? -std::numeric_limits<double>::infinity()
                                               : static_cast<double>(lp(v));
      return out;
    };
    Hypothesis best = beam_search(step, Vocabulary::kEos, beam_size, max_len);
    GenerationResult r;
    r.tokens = best.tokens;
    r.score = best.score;
    r.text = vocab.decode(best.tokens);
    if (text::trim(r.text).empty()) {
      r.fallback = true;
      double best_score = -std::numeric_limits<double>::infinity();
      for (const char* word : {"yes", "no"}) {
        const std::vector<int> seq{vocab.id(word), Vocabulary::kEos};
        const double s = sequence_log_prob(fused, seq);
        if (s > best_score) {
          best_score = s;
          r.text = word == std::string("yes") ? "Yes" : "No";
          r.tokens = {seq.front()};
          r.score = s;
        }
      }
    }
    auto [decision, follow_up] = parse_decision(r.text);
    r.decision = decision;
    r.follow_up = follow_up;
    return r;
  }

 private:
  ModelConfig config_;
  Encoder<S> encoder_;
  EntailmentDecoder<S> entailment_;
  AnswerDecoder<S> answer_;
  Phase phase_ = Phase::Training;
  mutable ModelProbe probe_;
};

// ---------------------------------------------------------------------------
// Checkpoints: a JSON header line followed by little-endian float32 tensors in
// parameter-visit order.

struct CheckpointMeta {
  ModelConfig model;
  nlohmann::json extra;  // config hash, training summary, ...
};

template <typename S>
void save_checkpoint(ReaderModel<S>& model, const Vocabulary& vocab, const nlohmann::json& extra,
                     const std::filesystem::path& path) {
  nlohmann::json params = nlohmann::json::array();
  std::string blob;
  model.visit([&](nn::Param<S>& p) {
    params.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const float f = static_cast<float>(p.value.data()[i]);
      blob.append(reinterpret_cast<const char*>(&f), sizeof f);
    }
  });
  nlohmann::json header{{"format", "ocmr-checkpoint-v1"},
                        {"model", model.config().to_json()},
                        {"vocab", vocab.to_json()},
                        {"params", params},
                        {"extra", extra}};
  atomic_write(path, header.dump() + "\n" + blob);
}

struct LoadedCheckpoint {
  ModelConfig model_config;
  Vocabulary vocab;
  nlohmann::json extra;
};

inline LoadedCheckpoint read_checkpoint_header(const std::filesystem::path& path, std::string* payload = nullptr) {
  const auto content = read_file(path);
  const auto nl = content.find('\n');
  if (nl == std::string::npos) throw ParseError("checkpoint: missing header");
  auto header = nlohmann::json::parse(content.substr(0, nl));
  if (header.value("format", "") != "ocmr-checkpoint-v1") throw ParseError("checkpoint: unknown format");
  if (payload) *payload = content;
  return {ModelConfig::from_json(header.at("model")), Vocabulary::from_json(header.at("vocab")),
          header.value("extra", nlohmann::json::object())};
}

template <typename S>
ReaderModel<S> load_checkpoint(const std::filesystem::path& path, LoadedCheckpoint* info = nullptr) {
  std::string content;
  auto ck = read_checkpoint_header(path, &content);
  const auto nl = content.find('\n');
  auto header = nlohmann::json::parse(content.substr(0, nl));
  ReaderModel<S> model(ck.model_config);
  std::size_t offset = nl + 1;
  std::size_t index = 0;
  const auto& params = header.at("params");
  model.visit([&](nn::Param<S>& p) {
    if (index >= params.size() || params[index].at("name") != p.name ||
        params[index].at("rows").get<Eigen::Index>() != p.value.rows() ||
        params[index].at("cols").get<Eigen::Index>() != p.value.cols())
      throw ParseError("checkpoint: parameter layout mismatch at " + p.name);
    ++index;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      if (offset + sizeof(float) > content.size()) throw ParseError("checkpoint: truncated tensor data");
      float f;
      std::memcpy(&f, content.data() + offset, sizeof f);
      offset += sizeof f;
      p.value.data()[i] = static_cast<S>(f);
    }
  });
  if (index != params.size() || offset != content.size()) throw ParseError("checkpoint: trailing data");
  if (info) *info = std::move(ck);
  return model;
}

}  // namespace ocmr
