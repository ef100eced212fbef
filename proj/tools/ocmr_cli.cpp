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

// Command-line entry point for the open-retrieval reading pipeline.
//
//   ocmr synth --out data/
//   ocmr ingest --config run.json
//   ocmr retrieve --config run.json
//   ocmr train-reader --config run.json --seed 3
//   ocmr evaluate --config run.json
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage or config error, 3 stale cache.

#include <iostream>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "ocmr/config.hpp"
#include "ocmr/pipeline.hpp"

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string ablate;
  std::string mode;
  std::vector<std::string> sets;
  std::string kb, train, dev, test;
  bool verbose = false;
  bool quiet = false;
};

ocmr::PipelineConfig resolve(const GlobalOptions& g) {
  nlohmann::json user = nlohmann::json::object();
  if (!g.config_path.empty()) {
    user = ocmr::read_json(g.config_path);
    if (!user.is_object()) throw ocmr::ConfigError("config file must hold a JSON object");
  }
  if (!g.mode.empty()) user["mode"] = g.mode;
  ocmr::apply_env_paths(user);
  for (const auto& s : g.sets) user.merge_patch(ocmr::override_patch(s));
  if (g.seed) user["seed"] = *g.seed;
  if (!g.out.empty()) user["run_dir"] = g.out;
  for (const auto& [key, path] : {std::pair{"kb", &g.kb}, {"train", &g.train}, {"dev", &g.dev}, {"test", &g.test}})
    if (!path->empty()) user["corpus"][key] = *path;
  auto config = ocmr::config_from_json(user);
  if (!g.ablate.empty()) config.training.ablation = ocmr::AblationFlags::parse(g.ablate);
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-retrieval conversational machine reading pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config_path, "Pipeline config (JSON)");
  app.add_option("--seed", g.seed, "Global seed");
  app.add_option("--out", g.out, "Run directory (for synth: corpus output directory)");
  app.add_option("--ablate", g.ablate, "Ablation: s, s+a, s+a+i or s+a+i+f");
  app.add_option("--mode", g.mode, "desk or full")->check(CLI::IsMember({"desk", "full"}));
  app.add_option("--set", g.sets, "Override a config key: section.key=value (repeatable)");
  app.add_flag("-v,--verbose", g.verbose, "Debug logging");
  app.add_flag("-q,--quiet", g.quiet, "Warnings and errors only");

  auto* synth = app.add_subcommand("synth", "Generate the synthetic benchmark");
  std::string spec_path;
  synth->add_option("--spec", spec_path, "Synthetic spec (JSON)");
  auto* ingest = app.add_subcommand("ingest", "Validate the corpus, segment rules, label training EDUs");
  ingest->add_option("--kb", g.kb, "Knowledge base JSONL");
  ingest->add_option("--train", g.train, "Training split JSONL");
  ingest->add_option("--dev", g.dev, "Dev split JSONL");
  ingest->add_option("--test", g.test, "Test split JSONL");
  auto* build_index = app.add_subcommand("build-index", "Build a retrieval index");
  build_index->add_option("--kb", g.kb, "Knowledge base JSONL");
  std::string index_kind = "tfidf";
  build_index->add_option("--kind,--type", index_kind, "tfidf or dense")->check(CLI::IsMember({"tfidf", "dense"}));
  auto* train_retriever = app.add_subcommand("train-retriever", "Train the dual-encoder retriever");
  auto* retrieve = app.add_subcommand("retrieve", "Retrieve rules for every split");
  auto* train_reader = app.add_subcommand("train-reader", "Train the reader");
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a reader checkpoint");
  std::string checkpoint, split;
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint path (default: <run>/checkpoint.ocmr)");
  evaluate->add_option("--split", split, "dev or test")->check(CLI::IsMember({"dev", "test"}));
  auto* report = app.add_subcommand("report", "Print a results table for run directories");
  std::vector<std::string> report_runs;
  report->add_option("runs", report_runs, "Run directories")->required();
  auto* run_all = app.add_subcommand("run", "ingest, retrieve, train-reader and evaluate");
  auto* ablation = app.add_subcommand("ablation-matrix", "Train and evaluate every cumulative ablation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  spdlog::set_level(g.verbose ? spdlog::level::debug : g.quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*report) {
      std::vector<std::pair<std::string, nlohmann::json>> runs;
      for (const auto& dir : report_runs) {
        const auto p = std::filesystem::path(dir) / "report_dev.json";
        const auto q = std::filesystem::path(dir) / "report_test.json";
        if (std::filesystem::exists(p)) runs.emplace_back(dir, ocmr::read_json(p));
        else if (std::filesystem::exists(q)) runs.emplace_back(dir, ocmr::read_json(q));
        else throw ocmr::UsageError("no report in " + dir + "; run evaluate first");
      }
      std::cout << ocmr::render_table(runs);
      return 0;
    }

    if (*synth) {
      nlohmann::json user = nlohmann::json::object();
      if (!spec_path.empty()) user["synthetic"] = ocmr::read_json(spec_path);
      if (g.seed) user["synthetic"]["seed"] = *g.seed;
      for (const auto& s : g.sets) user.merge_patch(ocmr::override_patch(s));
      ocmr::apply_env_paths(user);
      ocmr::Pipeline p(ocmr::config_from_json(user));
      const auto dir = p.synth(g.out.empty() ? std::nullopt : std::optional<std::filesystem::path>(g.out));
      std::cout << dir.string() << "\n";
      return 0;
    }

    auto config = resolve(g);
    if (!split.empty()) config.evaluation.split = split;
    ocmr::Pipeline p(config);
    p.write_config_snapshot();
    if (*ingest) {
      p.ingest();
    } else if (*build_index) {
      std::cout << p.build_index(index_kind).dump(2) << "\n";
    } else if (*train_retriever) {
      std::cout << p.train_retriever().dump(2) << "\n";
    } else if (*retrieve) {
      std::cout << p.retrieve().dump(2) << "\n";
    } else if (*train_reader) {
      auto s = p.train_reader();
      s.erase("config");
      std::cout << s.dump(2) << "\n";
    } else if (*evaluate) {
      std::cout << p.evaluate_checkpoint(checkpoint.empty() ? std::nullopt
                                                            : std::optional<std::filesystem::path>(checkpoint))
                       .dump(2)
                << "\n";
    } else if (*run_all) {
      std::cout << p.run_all().dump(2) << "\n";
    } else if (*ablation) {
      std::cout << ocmr::ablation_matrix(config);
    }
    return 0;
  } catch (const ocmr::UsageError& e) {
    spdlog::error("usage: {}", e.what());
    return 2;
  } catch (const ocmr::ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return 2;
  } catch (const ocmr::StaleCacheError& e) {
    spdlog::error("stale cache: {}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
