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

#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "ocmr/common.hpp"
#include "ocmr/corpus.hpp"

namespace ocmr {

/// Word-level vocabulary over text::tokenize output, with reserved ids for the
/// special tokens of the reader input template.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kEdu = 4;  // precedes every EDU; its encoding is the EDU representation
  static constexpr int kScn = 5;  // scenario
  static constexpr int kUsr = 6;  // user question
  static constexpr int kHis = 7;  // follow-up question of a history turn
  static constexpr int kAns = 8;  // answer of a history turn
  static constexpr int kNumSpecial = 9;

  Vocabulary() {
    for (const char* w : {"[PAD]", "[UNK]", "[BOS]", "[EOS]", "[EDU]", "[SCN]", "[USR]", "[HIS]", "[ANS]"}) add(w);
  }

  int add(const std::string& word) {
    auto [it, inserted] = index_.emplace(word, static_cast<int>(words_.size()));
    if (inserted) words_.push_back(word);
    return it->second;
  }
  int id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return words_.size(); }
  static bool is_special(int id) { return id < kNumSpecial; }

  std::vector<int> encode(std::string_view s) const {
    std::vector<int> ids;
    for (const auto& t : text::tokenize(s)) ids.push_back(id(t));
    return ids;
  }
  std::string decode(const std::vector<int>& ids) const {
    std::vector<std::string> parts;
    for (int i : ids)
      if (!is_special(i) || i == kUnk) parts.push_back(word(i));
    return text::join(parts, " ");
  }
  /// Like decode, but keeps the special tokens.
  std::string render(const std::vector<int>& ids) const {
    std::vector<std::string> parts;
    for (int i : ids) parts.push_back(word(i));
    return text::join(parts, " ");
  }

  /// Sorted word list from the knowledge base and the training split.
  static Vocabulary build(const KnowledgeBase& kb, const DatasetSplit& train) {
    std::set<std::string> words;
    auto add_text = [&](std::string_view s) {
      for (auto& t : text::tokenize(s)) words.insert(std::move(t));
    };
    for (const auto& d : kb.documents()) {
      add_text(d.title);
      add_text(d.body);
      for (const auto& e : d.edus) add_text(e);
    }
    for (const auto& inst : train.instances) {
      add_text(inst.question);
      add_text(inst.scenario);
      add_text(inst.gold_answer);
      for (const auto& t : inst.history) add_text(t.follow_up_question);
    }
    add_text("yes no");
    Vocabulary v;
    for (const auto& w : words) v.add(w);
    return v;
  }

  nlohmann::json to_json() const { return words_; }
  static Vocabulary from_json(const nlohmann::json& j) {
    Vocabulary v;
    const auto words = j.get<std::vector<std::string>>();
    if (words.size() < kNumSpecial) throw ParseError("vocabulary: missing special tokens");
    for (std::size_t i = 0; i < kNumSpecial; ++i)
      if (words[i] != v.words_[i]) throw ParseError("vocabulary: special token mismatch at " + std::to_string(i));
    for (std::size_t i = kNumSpecial; i < words.size(); ++i) v.add(words[i]);
    return v;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace ocmr
