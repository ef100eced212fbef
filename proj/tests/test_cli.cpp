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
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

#include "ocmr/common.hpp"
#include "ocmr/config.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace ocmr {
namespace {

struct Result {
  int code;
  std::string output;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("ocmr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Result run(const std::string& args) {
    const auto log = dir_ / "cli_output.txt";
    const std::string cmd = std::string(OCMR_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(log)};
  }

  // Tiny synthetic corpus and matching small-model settings.
  std::string small_world() {
    write_spec();
    auto r = run("synth --spec " + (dir_ / "spec.json").string() + " --out " + (dir_ / "data").string());
    EXPECT_EQ(r.code, 0) << r.output;
    return "--set corpus.kb=" + (dir_ / "data/kb.jsonl").string() + " --set corpus.train=" +
           (dir_ / "data/train.jsonl").string() + " --set corpus.dev=" + (dir_ / "data/dev.jsonl").string() +
           " --set corpus.test=" + (dir_ / "data/test.jsonl").string() +
           " --set model.d_model=16 --set model.heads=2 --set model.d_ff=24 --set model.encoder_layers=1"
           " --set model.decoder_layers=1 --set model.entailment_heads=2 --set training.max_steps=4"
           " --set training.batch_size=4 --set training.eval_every=2 --out " +
           (dir_ / "run").string();
  }
  void write_spec() {
    atomic_write(dir_ / "spec.json",
                 R"({"num_rules": 6, "vocab_size": 40, "num_train": 12, "num_dev": 6, "num_test": 6})");
  }

  fs::path dir_;
};

TEST_F(CliTest, NoSubcommandIsUsageError) { EXPECT_EQ(run("").code, 2); }

TEST_F(CliTest, EvaluateWithoutCheckpointFails) {
  auto flags = small_world();
  ASSERT_EQ(run("ingest " + flags).code, 0);
  auto r = run("evaluate " + flags);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("checkpoint"), std::string::npos) << r.output;
}

TEST_F(CliTest, UnknownConfigKeyListsValidKeys) {
  atomic_write(dir_ / "bad.json", R"({"training": {"learning_rate": 0.1}})");
  auto r = run("ingest --config " + (dir_ / "bad.json").string() + " --out " + (dir_ / "run").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("learning_rate"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("lr_backbone"), std::string::npos) << r.output;
}

TEST_F(CliTest, UnsupportedLabelerGranularityIsConfigError) {
  auto r = run("ingest --set labeler.granularity=edu --out " + (dir_ / "run").string());
  EXPECT_EQ(r.code, 2) << r.output;
}

TEST_F(CliTest, StaleSegmentationExitsThree) {
  auto flags = small_world();
  ASSERT_EQ(run("ingest " + flags).code, 0);
  auto r = run("retrieve " + flags + " --set segmenter.max_edus=3");
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("ingest"), std::string::npos);
}

TEST_F(CliTest, CorpusFlagsOnIngest) {
  small_world();
  const auto d = dir_ / "data";
  auto r = run("ingest --kb " + (d / "kb.jsonl").string() + " --train " + (d / "train.jsonl").string() + " --dev " +
               (d / "dev.jsonl").string() + " --test " + (d / "test.jsonl").string() + " --out " +
               (dir_ / "run").string());
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir_ / "run/kb_segmented.jsonl"));
  EXPECT_TRUE(fs::exists(dir_ / "run/labels_train.jsonl"));
  EXPECT_EQ(run("ingest --kb " + (dir_ / "missing.jsonl").string() + " --out " + (dir_ / "run").string()).code, 1);
}

TEST_F(CliTest, SmallPipelineEndToEnd) {
  auto flags = small_world();
  ASSERT_EQ(run("ingest " + flags).code, 0);
  auto idx = run("build-index --type tfidf " + flags);
  ASSERT_EQ(idx.code, 0) << idx.output;
  ASSERT_EQ(run("retrieve " + flags).code, 0);
  auto tr = run("train-reader " + flags);
  ASSERT_EQ(tr.code, 0) << tr.output;
  auto ev = run("evaluate " + flags);
  ASSERT_EQ(ev.code, 0) << ev.output;
  auto report = nlohmann::json::parse(read_file(dir_ / "run/report_dev.json"));
  EXPECT_TRUE(report.at("overall").contains("micro_acc"));
  EXPECT_EQ(report.at("metadata").at("split"), "dev");
  EXPECT_TRUE(report.at("metadata").contains("config_hash"));
  EXPECT_TRUE(fs::exists(dir_ / "run/predictions_dev.jsonl"));
  EXPECT_TRUE(fs::exists(dir_ / "run/train_log.jsonl"));
  auto rep = run("report " + (dir_ / "run").string());
  EXPECT_EQ(rep.code, 0);
  EXPECT_NE(rep.output.find("Micro"), std::string::npos) << rep.output;
}

TEST_F(CliTest, BadAblationSpecIsConfigError) {
  auto flags = small_world();
  EXPECT_EQ(run("ingest --ablate s+z " + flags).code, 2);
}

}  // namespace
}  // namespace ocmr
