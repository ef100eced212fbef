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

// Pipeline stages behind the command-line tool. Each stage reads its inputs
// from the run directory, checks the config hashes embedded in cached
// artifacts, and writes its outputs atomically.
//
// Run directory layout:
//   config.json                  resolved config, hash, version
//   data/                        synthetic corpus (synth)
//   kb_segmented.jsonl           + segmentation.json (ingest)
//   labels_train.jsonl           (ingest)
//   retriever_dense.json         (train-retriever)
//   index_<kind>.json            (build-index)
//   retrieval_<split>.jsonl      + retrieval_report.json (retrieve)
//   checkpoint.ocmr, train_log.jsonl (train-reader)
//   report_<split>.json, predictions_<split>.jsonl (evaluate)

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "json.hpp"
#include "ocmr/config.hpp"
#include "ocmr/corpus.hpp"
#include "ocmr/edu_segmentation.hpp"
#include "ocmr/entailment_supervision.hpp"
#include "ocmr/evaluation.hpp"
#include "ocmr/reader_model.hpp"
#include "ocmr/retriever.hpp"
#include "ocmr/synthetic.hpp"
#include "ocmr/training.hpp"
#include "ocmr/vocabulary.hpp"

namespace ocmr {

struct UsageError : Error {
  using Error::Error;
};

namespace fs = std::filesystem;

inline std::string hash_of(std::initializer_list<std::string_view> parts) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto p : parts) {
    h = fnv1a(p, h);
    h = fnv1a("\x1f", h);
  }
  return hex64(h);
}

inline nlohmann::json read_json(const fs::path& p) {
  auto j = nlohmann::json::parse(read_file(p), nullptr, false);
  if (j.is_discarded()) throw ParseError("invalid JSON in " + p.string());
  return j;
}

inline void write_json(const fs::path& p, const nlohmann::json& j) { atomic_write(p, j.dump(2) + "\n"); }

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config) : config_(std::move(config)) {}

  const PipelineConfig& config() const { return config_; }
  fs::path run_dir() const { return config_.run_dir; }

  fs::path corpus_path(const std::string& which) const {
    const auto& c = config_.corpus;
    const std::string& explicit_path = which == "kb" ? c.kb : which == "train" ? c.train : which == "dev" ? c.dev : c.test;
    if (!explicit_path.empty()) return explicit_path;
    return run_dir() / "data" / (which + ".jsonl");
  }

  void write_config_snapshot() const {
    write_json(run_dir() / "config.json",
               {{"config", config_.to_json()}, {"config_hash", config_.hash()}, {"version", kVersion}});
  }

  // -- synth ---------------------------------------------------------------

  /// Writes a synthetic corpus in the corpus formats.
  fs::path synth(const std::optional<fs::path>& out = std::nullopt) const {
    const fs::path dir = out ? *out : run_dir() / "data";
    auto world = generate(config_.synthetic);
    atomic_write(dir / "kb.jsonl", serialize(world.kb));
    atomic_write(dir / "train.jsonl", serialize(world.train));
    atomic_write(dir / "dev.jsonl", serialize(world.dev));
    atomic_write(dir / "test.jsonl", serialize(world.test));
    atomic_write(dir / "truth_labels.jsonl", serialize_labels(world.truth, "generator:" + synthetic_hash()));
    write_json(dir / "spec.json", {{"spec", config_.synthetic.to_json()}, {"hash", synthetic_hash()}});
    spdlog::info("synth: {} rules, {}/{}/{} instances -> {}", world.kb.size(), world.train.instances.size(),
                 world.dev.instances.size(), world.test.instances.size(), dir.string());
    return dir;
  }
  std::string synthetic_hash() const { return hash_of({config_.synthetic.to_json().dump()}); }

  // -- hashes ---------------------------------------------------------------

  std::string corpus_hash(const std::string& which) const { return hex64(fnv1a(read_file(corpus_path(which)))); }
  std::string segmentation_hash() const {
    return hash_of({corpus_hash("kb"), RuleBasedSegmenter(config_.segmenter).fingerprint()});
  }
  std::string labels_hash() const {
    return hash_of({segmentation_hash(), config_.labeler.to_json().dump(), corpus_hash("train")});
  }
  std::string retriever_hash() const {
    if (config_.retriever.kind == "tfidf") return hash_of({segmentation_hash(), "tfidf"});
    return hash_of({segmentation_hash(), "dense", config_.retriever.dual_encoder.to_json().dump(), corpus_hash("train")});
  }
  std::string retrieval_hash(const std::string& split) const {
    return hash_of({retriever_hash(), std::to_string(config_.retriever.top_n), corpus_hash(split)});
  }

  // -- ingest ---------------------------------------------------------------

  struct Corpus {
    KnowledgeBase kb;  // segmented
    DatasetSplit train, dev, test;
  };

  Corpus load_raw() const {
    Corpus c;
    c.kb = load_knowledge_base(corpus_path("kb"));
    c.train = load_split(corpus_path("train"), c.kb, SplitName::Train);
    c.dev = load_split(corpus_path("dev"), c.kb, SplitName::Dev);
    c.test = load_split(corpus_path("test"), c.kb, SplitName::Test);
    return c;
  }

  /// Segments the knowledge base and labels the training split.
  void ingest() const {
    auto c = load_raw();
    c.kb = segment_kb(c.kb, RuleBasedSegmenter(config_.segmenter));
    atomic_write(run_dir() / "kb_segmented.jsonl", serialize(c.kb));
    write_json(run_dir() / "segmentation.json",
               {{"config_hash", segmentation_hash()}, {"segmenter", config_.segmenter.to_json()}});
    const auto labels = label_split(c.train, c.kb, config_.labeler);
    atomic_write(run_dir() / "labels_train.jsonl", serialize_labels(labels, labels_hash()));
    spdlog::info("ingest: {} rules, {} train labels", c.kb.size(), labels.size());
  }

  Corpus load_ingested() const {
    const auto seg = run_dir() / "segmentation.json";
    if (!fs::exists(seg)) throw UsageError("no segmented knowledge base in " + run_dir().string() + "; run ingest first");
    const std::string have = read_json(seg).value("config_hash", "");
    if (have != segmentation_hash())
      throw StaleCacheError("segmented knowledge base hash " + have + " != " + segmentation_hash() + "; rerun ingest");
    Corpus c;
    c.kb = load_knowledge_base(run_dir() / "kb_segmented.jsonl");
    c.train = load_split(corpus_path("train"), c.kb, SplitName::Train);
    c.dev = load_split(corpus_path("dev"), c.kb, SplitName::Dev);
    c.test = load_split(corpus_path("test"), c.kb, SplitName::Test);
    return c;
  }

  LabelMap load_labels() const { return parse_labels(read_file(run_dir() / "labels_train.jsonl"), labels_hash()); }

  // -- retriever ------------------------------------------------------------

  /// Trains the dual encoder and reports its top-k table on dev.
  nlohmann::json train_retriever() const {
    auto c = load_ingested();
    DualEncoderTrace trace;
    auto enc = train_dual_encoder(c.kb, c.train, config_.retriever.dual_encoder, &trace);
    nlohmann::json j{{"config_hash", hash_of({segmentation_hash(), "dense",
                                             config_.retriever.dual_encoder.to_json().dump(), corpus_hash("train")})},
                     {"encoder", enc.to_json()},
                     {"final_loss", trace.step_loss.empty() ? 0.0 : trace.step_loss.back()}};
    write_json(run_dir() / "retriever_dense.json", j);
    DenseIndex index(c.kb, enc);
    const auto table = evaluate_retrieval(retrieve_split(index, c.dev, config_.retriever.top_n), c.dev, c.kb,
                                          training_gold_ids(c.train));
    spdlog::info("train-retriever: dev top-5 {:.1f}%", table.overall.accuracy[1]);
    return to_json(table);
  }

  std::unique_ptr<Retriever> make_retriever(const KnowledgeBase& kb) const {
    if (config_.retriever.kind == "tfidf") return std::make_unique<TfidfIndex>(kb);
    const auto p = run_dir() / "retriever_dense.json";
    if (!fs::exists(p)) throw UsageError("dense retriever requested but " + p.string() + " is missing; run train-retriever");
    auto j = read_json(p);
    if (j.value("config_hash", "") != retriever_hash())
      throw StaleCacheError("dense retriever hash " + j.value("config_hash", "") + " != " + retriever_hash());
    return std::make_unique<DenseIndex>(kb, DualEncoder::from_json(j.at("encoder")));
  }

  /// Index summary for the configured retriever kind.
  nlohmann::json build_index(const std::string& kind) {
    config_.retriever.kind = kind;
    auto c = load_ingested();
    auto r = make_retriever(c.kb);
    nlohmann::json j{{"kind", r->kind()}, {"documents", r->size()}, {"config_hash", retriever_hash()}};
    if (auto* t = dynamic_cast<TfidfIndex*>(r.get())) j["terms"] = t->num_terms();
    write_json(run_dir() / ("index_" + kind + ".json"), j);
    return j;
  }

  /// Retrieval caches for all splits and the top-k table.
  nlohmann::json retrieve() const {
    auto c = load_ingested();
    auto r = make_retriever(c.kb);
    const auto seen_gold = training_gold_ids(c.train);
    nlohmann::json report{{"retriever", r->kind()}};
    for (const auto* split : {&c.train, &c.dev, &c.test}) {
      const std::string name(split_name(split->name));
      auto results = retrieve_split(*r, *split, config_.retriever.top_n);
      atomic_write(run_dir() / ("retrieval_" + name + ".jsonl"),
                   serialize_retrieval(results, r->kind(), retrieval_hash(name)));
      report[name] = to_json(evaluate_retrieval(results, *split, c.kb, seen_gold));
    }
    write_json(run_dir() / "retrieval_report.json", report);
    return report;
  }

  RetrievalMap load_retrieval(const std::string& split) const {
    const auto p = run_dir() / ("retrieval_" + split + ".jsonl");
    if (!fs::exists(p)) throw UsageError("missing " + p.string() + "; run retrieve first");
    return parse_retrieval(read_file(p), retrieval_hash(split));
  }

  // -- reader ---------------------------------------------------------------

  std::string reader_hash() const {
    auto t = config_.training.to_json();
    return hash_of({labels_hash(), retrieval_hash("train"), config_.fusion.to_json().dump(), config_.model.to_json().dump(),
                    t.dump()});
  }

  /// Trains the reader and writes the best checkpoint and the step log.
  nlohmann::json train_reader() const {
    auto c = load_ingested();
    const auto labels = load_labels();
    const auto train_r = load_retrieval("train");
    const auto dev_r = load_retrieval("dev");
    const auto vocab = Vocabulary::build(c.kb, c.train);
    ModelConfig mc = config_.model;
    mc.vocab_size = vocab.size();
    ReaderModel<float> model(mc);

    std::string log;
    TrainData data{c.kb, c.train, train_r, labels, vocab, &c.dev, &dev_r};
    auto result = train(std::move(model), data, config_.fusion, config_.training, config_.evaluation.beam_size,
                        [&](const StepLog& s) { log += to_json(s).dump() + "\n"; });
    atomic_write(run_dir() / "train_log.jsonl", log);
    nlohmann::json summary{{"reader_hash", reader_hash()},
                           {"steps", result.steps.size()},
                           {"best_step", result.best_step},
                           {"best_dev_micro", result.best_dev_micro},
                           {"early_stopped", result.early_stopped},
                           {"config", config_.to_json()}};
    nlohmann::json dev_curve = nlohmann::json::array();
    for (const auto& d : result.dev) dev_curve.push_back({{"step", d.step}, {"micro_acc", d.micro_acc}});
    summary["dev_curve"] = dev_curve;
    save_checkpoint(result.model, vocab, summary, run_dir() / "checkpoint.ocmr");
    spdlog::info("train-reader: {} steps, best dev micro {:.2f} at step {}", result.steps.size(), result.best_dev_micro,
                 result.best_step);
    return summary;
  }

  /// Scores a checkpoint on the configured split; requires an existing checkpoint.
  nlohmann::json evaluate_checkpoint(const std::optional<fs::path>& checkpoint) const {
    const fs::path ck = checkpoint ? *checkpoint : run_dir() / "checkpoint.ocmr";
    if (!fs::exists(ck))
      throw UsageError("evaluate needs a checkpoint: " + ck.string() + " does not exist (run train-reader or pass --checkpoint)");
    auto c = load_ingested();
    LoadedCheckpoint info;
    auto model = load_checkpoint<float>(ck, &info);
    const std::string split = config_.evaluation.split;
    const auto& data = split == "test" ? c.test : c.dev;
    const auto retrieval = load_retrieval(split);
    std::vector<PredictionRecord> records;
    const auto k = effective_fusion(config_.fusion, config_.training.ablation).k;
    auto report = evaluate(data, c.kb, model, info.vocab, retrieval, training_gold_ids(c.train), k,
                           config_.evaluation.beam_size, &records);
    report.metadata["split"] = split;
    report.metadata["config_hash"] = config_.hash();
    report.metadata["retriever"] = config_.retriever.kind;
    report.metadata["checkpoint_reader_hash"] = info.extra.value("reader_hash", "");
    auto j = to_json(report);
    write_json(run_dir() / ("report_" + split + ".json"), j);
    std::string preds;
    for (const auto& r : records)
      preds += nlohmann::json{{"utterance_id", r.utterance_id},
                              {"prediction", r.predicted.text},
                              {"decision", std::string(decision_name(r.predicted.decision))},
                              {"gold_decision", std::string(decision_name(r.gold_decision))},
                              {"subset", std::string(subset_name(r.subset))}}
                   .dump() +
               "\n";
    atomic_write(run_dir() / ("predictions_" + split + ".jsonl"), preds);
    spdlog::info("evaluate ({}): micro {:.2f} macro {:.2f}", split, report.overall.micro_acc, report.overall.macro_acc);
    return j;
  }

  /// ingest, retrieve, train-reader, evaluate.
  nlohmann::json run_all() {
    write_config_snapshot();
    ingest();
    if (config_.retriever.kind == "dense") train_retriever();
    retrieve();
    train_reader();
    return evaluate_checkpoint(std::nullopt);
  }

 private:
  PipelineConfig config_;
};

/// Ablation rows in the order of a cumulative ablation table.
inline const std::vector<std::string>& ablation_rows() {
  static const std::vector<std::string> rows{"none", "s", "s+a", "s+a+i", "s+a+i+f"};
  return rows;
}

/// Runs the full pipeline for every ablation row in sub-directories of run_dir
/// and returns the rendered comparison table.
inline std::string ablation_matrix(const PipelineConfig& base, const std::vector<std::string>& rows = ablation_rows()) {
  std::vector<std::pair<std::string, nlohmann::json>> runs;
  for (const auto& row : rows) {
    PipelineConfig c = base;
    c.training.ablation = AblationFlags::parse(row);
    c.run_dir = (fs::path(base.run_dir) / ("ablate-" + (row == "none" ? std::string("full") : row))).string();
    if (base.corpus.kb.empty()) {
      const auto data = fs::path(base.run_dir) / "data";
      c.corpus = {(data / "kb.jsonl").string(), (data / "train.jsonl").string(), (data / "dev.jsonl").string(),
                  (data / "test.jsonl").string()};
    }
    Pipeline p(c);
    runs.emplace_back(row == "none" ? "full model" : "-w/o " + row, p.run_all());
  }
  const auto table = render_table(runs);
  atomic_write(fs::path(base.run_dir) / "ablation_table.txt", table);
  return table;
}

}  // namespace ocmr
