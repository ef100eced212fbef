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

// Pipeline configuration: one JSON document with a section per module.
// Unknown keys are rejected with the list of valid keys at that level.

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "ocmr/common.hpp"
#include "ocmr/edu_segmentation.hpp"
#include "ocmr/entailment_supervision.hpp"
#include "ocmr/rd_fusion.hpp"
#include "ocmr/reader_model.hpp"
#include "ocmr/retriever.hpp"
#include "ocmr/synthetic.hpp"
#include "ocmr/training.hpp"

namespace ocmr {

inline constexpr const char* kVersion = "0.1.0";

struct CorpusPaths {
  std::string kb, train, dev, test;
  nlohmann::json to_json() const { return {{"kb", kb}, {"train", train}, {"dev", dev}, {"test", test}}; }
};

struct RetrieverSettings {
  std::string kind = "tfidf";  // tfidf | dense
  std::size_t top_n = 20;      // ranks kept per query
  DualEncoderConfig dual_encoder;
  nlohmann::json to_json() const { return {{"kind", kind}, {"top_n", top_n}, {"dual_encoder", dual_encoder.to_json()}}; }
};

struct EvaluationSettings {
  std::size_t beam_size = 5;
  std::size_t max_len = 64;
  std::string split = "dev";
  nlohmann::json to_json() const { return {{"beam_size", beam_size}, {"max_len", max_len}, {"split", split}}; }
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  std::string mode = "desk";  // desk | full
  std::string run_dir = "runs/default";
  CorpusPaths corpus;
  SyntheticSpec synthetic;
  SegmenterConfig segmenter;
  LabelerConfig labeler;
  RetrieverSettings retriever;
  FusionConfig fusion;
  ModelConfig model;  // vocab_size is filled from the training vocabulary
  TrainingConfig training;
  EvaluationSettings evaluation;

  nlohmann::json to_json() const {
    auto m = model.to_json();
    m.erase("vocab_size");
    auto t = training.to_json();
    t.erase("seed");
    return {{"seed", seed},
            {"mode", mode},
            {"run_dir", run_dir},
            {"corpus", corpus.to_json()},
            {"synthetic", synthetic.to_json()},
            {"segmenter", segmenter.to_json()},
            {"labeler", labeler.to_json()},
            {"retriever", retriever.to_json()},
            {"fusion", fusion.to_json()},
            {"model", m},
            {"training", t},
            {"evaluation", evaluation.to_json()}};
  }

  /// Defaults for a mode. "full" widens the reader for a real corpus.
  static PipelineConfig defaults(const std::string& mode = "desk") {
    PipelineConfig c;
    c.mode = mode;
    if (mode == "full") {
      c.model.d_model = 512;
      c.model.heads = 8;
      c.model.d_ff = 2048;
      c.model.encoder_layers = 6;
      c.model.decoder_layers = 6;
      c.model.max_input_len = 512;
      c.retriever.kind = "dense";
      c.training.max_steps = 50000;
      c.training.eval_every = 1000;
    } else if (mode != "desk") {
      throw ConfigError("mode must be 'desk' or 'full', got '" + mode + "'");
    }
    return c;
  }

  /// Hash of everything except run_dir, so identical runs in different directories agree.
  std::string hash() const {
    auto j = to_json();
    j.erase("run_dir");
    return hex64(fnv1a(j.dump()));
  }
};

namespace config_detail {

inline std::string key_list(const nlohmann::json& schema) {
  std::string out;
  for (const auto& [k, _] : schema.items()) out += (out.empty() ? "" : ", ") + k;
  return out;
}

/// Checks every key of `user` against `schema` recursively.
inline void check_keys(const nlohmann::json& user, const nlohmann::json& schema, const std::string& where) {
  if (!user.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [k, v] : user.items()) {
    const std::string path = where.empty() ? k : where + "." + k;
    if (!schema.contains(k))
      throw ConfigError("config: unknown key '" + path + "' (valid keys" + (where.empty() ? "" : " in '" + where + "'") +
                        ": " + key_list(schema) + ")");
    if (schema.at(k).is_object() && !schema.at(k).empty()) check_keys(v, schema.at(k), path);
  }
}

template <typename T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace config_detail

/// Builds a config from the mode defaults overlaid with `user`.
inline PipelineConfig config_from_json(const nlohmann::json& user) {
  using config_detail::take;
  const std::string mode = user.value("mode", std::string("desk"));
  PipelineConfig c = PipelineConfig::defaults(mode);
  config_detail::check_keys(user, c.to_json(), "");
  auto merged = c.to_json();
  merged.merge_patch(user);

  take(merged, "seed", c.seed);
  take(merged, "run_dir", c.run_dir);
  const auto& co = merged.at("corpus");
  take(co, "kb", c.corpus.kb);
  take(co, "train", c.corpus.train);
  take(co, "dev", c.corpus.dev);
  take(co, "test", c.corpus.test);
  c.synthetic = SyntheticSpec::from_json(merged.at("synthetic"));

  const auto& sg = merged.at("segmenter");
  take(sg, "discourse_markers", c.segmenter.discourse_markers);
  take(sg, "bullet_patterns", c.segmenter.bullet_patterns);
  take(sg, "max_edus", c.segmenter.max_edus);
  c.segmenter.validate();

  const auto& lb = merged.at("labeler");
  if (lb.value("granularity", std::string("token")) != "token")
    throw ConfigError("labeler.granularity: only 'token' is supported");
  if (lb.contains("max_distance") && !lb.at("max_distance").is_null())
    c.labeler.max_distance = lb.at("max_distance").get<std::size_t>();

  const auto& rt = merged.at("retriever");
  take(rt, "kind", c.retriever.kind);
  take(rt, "top_n", c.retriever.top_n);
  if (c.retriever.kind != "tfidf" && c.retriever.kind != "dense")
    throw ConfigError("retriever.kind must be 'tfidf' or 'dense'");
  const auto& de = rt.at("dual_encoder");
  auto& d = c.retriever.dual_encoder;
  take(de, "embedding_dim", d.embedding_dim);
  take(de, "num_negatives", d.num_negatives);
  take(de, "temperature", d.temperature);
  take(de, "steps", d.steps);
  take(de, "batch_size", d.batch_size);
  take(de, "learning_rate", d.learning_rate);
  take(de, "seed", d.seed);
  d.validate();

  const auto& fu = merged.at("fusion");
  take(fu, "k", c.fusion.k);
  take(fu, "top_relevant", c.fusion.top_relevant);
  take(fu, "num_random", c.fusion.num_random);
  take(fu, "force_gold", c.fusion.force_gold);
  take(fu, "shuffle", c.fusion.shuffle);
  take(fu, "rd_pool", c.fusion.rd_pool);
  c.fusion.validate();

  const auto& mo = merged.at("model");
  take(mo, "d_model", c.model.d_model);
  take(mo, "heads", c.model.heads);
  take(mo, "d_ff", c.model.d_ff);
  take(mo, "encoder_layers", c.model.encoder_layers);
  take(mo, "decoder_layers", c.model.decoder_layers);
  take(mo, "entailment_layers", c.model.entailment_layers);
  take(mo, "entailment_heads", c.model.entailment_heads);
  take(mo, "max_input_len", c.model.max_input_len);
  take(mo, "max_target_len", c.model.max_target_len);
  take(mo, "dropout", c.model.dropout);
  take(mo, "init_seed", c.model.init_seed);

  const auto& tr = merged.at("training");
  auto& t = c.training;
  take(tr, "lambda", t.lambda);
  take(tr, "lr_backbone", t.lr_backbone);
  take(tr, "lr_entailment_decoder", t.lr_entailment_decoder);
  take(tr, "weight_decay", t.weight_decay);
  take(tr, "beta1", t.beta1);
  take(tr, "beta2", t.beta2);
  take(tr, "eps", t.eps);
  take(tr, "grad_clip", t.grad_clip);
  take(tr, "batch_size", t.batch_size);
  take(tr, "max_steps", t.max_steps);
  take(tr, "eval_every", t.eval_every);
  take(tr, "patience", t.patience);
  const auto& ab = tr.at("ablation");
  take(ab, "rd_pool", t.ablation.rd_pool);
  take(ab, "entailment_loss", t.ablation.entailment_loss);
  take(ab, "shuffle", t.ablation.shuffle);
  take(ab, "fusion", t.ablation.fusion);
  t.seed = c.seed;
  t.validate();

  const auto& ev = merged.at("evaluation");
  take(ev, "beam_size", c.evaluation.beam_size);
  take(ev, "max_len", c.evaluation.max_len);
  take(ev, "split", c.evaluation.split);
  if (c.evaluation.beam_size == 0) throw ConfigError("evaluation.beam_size must be >= 1");
  if (c.evaluation.split != "dev" && c.evaluation.split != "test")
    throw ConfigError("evaluation.split must be 'dev' or 'test'");
  return c;
}

/// Parses "a.b.c=value"; the value is read as JSON when it parses, else as a string.
inline nlohmann::json override_patch(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override '" + std::string(assignment) + "' must look like key.path=value");
  const std::string path(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json patch = value;
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : path) {
    if (ch == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  parts.push_back(cur);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (it->empty()) throw ConfigError("override '" + path + "' has an empty key segment");
    patch = nlohmann::json{{*it, patch}};
  }
  return patch;
}

/// Path-valued environment overrides: OCMR_KB, OCMR_TRAIN, OCMR_DEV, OCMR_TEST, OCMR_RUN_DIR.
inline void apply_env_paths(nlohmann::json& user) {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  };
  if (auto v = env("OCMR_KB")) user["corpus"]["kb"] = *v;
  if (auto v = env("OCMR_TRAIN")) user["corpus"]["train"] = *v;
  if (auto v = env("OCMR_DEV")) user["corpus"]["dev"] = *v;
  if (auto v = env("OCMR_TEST")) user["corpus"]["test"] = *v;
  if (auto v = env("OCMR_RUN_DIR")) user["run_dir"] = *v;
}

}  // namespace ocmr
