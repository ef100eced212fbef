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

// Knowledge base and dialogue splits: in-memory model plus the
// line-delimited JSON files they are read from and written to.
//
// Knowledge base record:
//   {"doc_id": str, "title": str, "body": str, "seen": bool, "edus": [str]?}
// Split record:
//   {"utterance_id": str, "tree_id": str, "gold_doc_id": str,
//    "question": str, "scenario": str,
//    "history": [{"follow_up_question": str, "follow_up_answer": "Yes"|"No"}],
//    "evidence": [str], "answer": str}

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "ocmr/common.hpp"

namespace ocmr {

using DocId = std::string;
using json = nlohmann::json;

struct RuleDocument {
  DocId doc_id;
  std::string title;
  std::string body;
  std::vector<std::string> edus;
};

class KnowledgeBase {
 public:
  KnowledgeBase() = default;

  /// Adds a document. Duplicate ids are a ValidationError.
  void add(RuleDocument doc, bool seen) {
    if (index_.count(doc.doc_id)) throw ValidationError("duplicate doc_id: " + doc.doc_id);
    index_.emplace(doc.doc_id, documents_.size());
    (seen ? seen_ids_ : unseen_ids_).insert(doc.doc_id);
    documents_.push_back(std::move(doc));
  }

  const RuleDocument* find(const DocId& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &documents_[it->second];
  }
  RuleDocument* find(const DocId& id) {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &documents_[it->second];
  }
  const RuleDocument& at(const DocId& id) const {
    if (auto* d = find(id)) return *d;
    throw ReferentialError("unknown doc_id: " + id);
  }
  bool contains(const DocId& id) const { return index_.count(id) != 0; }
  bool is_seen(const DocId& id) const { return seen_ids_.count(id) != 0; }

  /// Documents in file order.
  const std::vector<RuleDocument>& documents() const { return documents_; }
  std::vector<RuleDocument>& documents() { return documents_; }
  const std::set<DocId>& seen_ids() const { return seen_ids_; }
  const std::set<DocId>& unseen_ids() const { return unseen_ids_; }
  std::size_t size() const { return documents_.size(); }
  bool empty() const { return documents_.empty(); }

 private:
  std::vector<RuleDocument> documents_;
  std::unordered_map<DocId, std::size_t> index_;
  std::set<DocId> seen_ids_;
  std::set<DocId> unseen_ids_;
};

struct DialogueTurn {
  std::string follow_up_question;
  Decision follow_up_answer = Decision::Yes;  // Yes or No only
};

struct DialogueInstance {
  std::string utterance_id;
  std::string tree_id;
  DocId gold_doc_id;
  std::string question;
  std::string scenario;
  std::vector<DialogueTurn> history;
  std::string gold_answer;
  std::vector<std::string> evidence;  // stored verbatim, never consumed
};

enum class SplitName { Train, Dev, Test };

inline std::string_view split_name(SplitName s) {
  switch (s) {
    case SplitName::Train: return "train";
    case SplitName::Dev: return "dev";
    case SplitName::Test: return "test";
  }
  return "train";
}

struct DatasetSplit {
  SplitName name = SplitName::Train;
  std::vector<DialogueInstance> instances;
};

/// "Yes"/"No" after trimming and case folding; everything else is Inquire.
inline Decision decision_class(std::string_view answer) {
  const auto a = text::lower(text::trim(answer));
  if (a == "yes") return Decision::Yes;
  if (a == "no") return Decision::No;
  return Decision::Inquire;
}

inline Decision decision_class(const DialogueInstance& instance) {
  return decision_class(instance.gold_answer);
}

enum class Subset { Seen, Unseen };

inline std::string_view subset_name(Subset s) { return s == Subset::Seen ? "seen" : "unseen"; }

/// Gold rules that occur in the training split; dev/test instances whose gold
/// rule is in this set form the seen subset.
inline std::set<DocId> training_gold_ids(const DatasetSplit& train) {
  std::set<DocId> ids;
  for (const auto& inst : train.instances) ids.insert(inst.gold_doc_id);
  return ids;
}

inline Subset subset_of(const DialogueInstance& inst, const std::set<DocId>& seen_gold) {
  return seen_gold.count(inst.gold_doc_id) ? Subset::Seen : Subset::Unseen;
}

namespace detail {

inline std::string require_string(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string())
    throw ParseError("line " + std::to_string(line) + ": missing or non-string field '" + key + "'");
  return it->get<std::string>();
}

inline std::string optional_string(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (!it->is_string())
    throw ParseError("line " + std::to_string(line) + ": field '" + key + "' must be a string");
  return it->get<std::string>();
}

template <typename Fn>
void for_each_record(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object()) throw ParseError("line " + std::to_string(lineno) + ": record is not an object");
    fn(j, lineno);
  }
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open: " + path.string());
  return in;
}

}  // namespace detail

inline KnowledgeBase parse_knowledge_base(std::istream& in) {
  KnowledgeBase kb;
  detail::for_each_record(in, [&](const json& j, std::size_t line) {
    RuleDocument doc;
    doc.doc_id = detail::require_string(j, "doc_id", line);
    doc.title = detail::optional_string(j, "title", line);
    doc.body = detail::require_string(j, "body", line);
    bool seen = true;
    if (auto it = j.find("seen"); it != j.end()) {
      if (!it->is_boolean()) throw ParseError("line " + std::to_string(line) + ": 'seen' must be boolean");
      seen = it->get<bool>();
    }
    if (auto it = j.find("edus"); it != j.end()) {
      if (!it->is_array()) throw ParseError("line " + std::to_string(line) + ": 'edus' must be an array");
      for (const auto& e : *it) {
        if (!e.is_string()) throw ParseError("line " + std::to_string(line) + ": non-string EDU");
        doc.edus.push_back(e.get<std::string>());
      }
    }
    try {
      kb.add(std::move(doc), seen);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line) + ": " + e.what());
    }
  });
  return kb;
}

inline KnowledgeBase load_knowledge_base(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_knowledge_base(in);
}

inline json to_json(const RuleDocument& doc, bool seen) {
  json j = {{"doc_id", doc.doc_id}, {"title", doc.title}, {"body", doc.body}, {"seen", seen}};
  if (!doc.edus.empty()) j["edus"] = doc.edus;
  return j;
}

inline std::string serialize(const KnowledgeBase& kb) {
  std::string out;
  for (const auto& doc : kb.documents()) {
    out += to_json(doc, kb.is_seen(doc.doc_id)).dump();
    out += '\n';
  }
  return out;
}

inline DialogueTurn parse_turn(const json& j, std::size_t line) {
  if (!j.is_object()) throw ParseError("line " + std::to_string(line) + ": history turn is not an object");
  DialogueTurn t;
  t.follow_up_question = detail::require_string(j, "follow_up_question", line);
  const auto ans = text::lower(text::trim(detail::require_string(j, "follow_up_answer", line)));
  if (ans == "yes") {
    t.follow_up_answer = Decision::Yes;
  } else if (ans == "no") {
    t.follow_up_answer = Decision::No;
  } else {
    throw ParseError("line " + std::to_string(line) + ": follow_up_answer must be Yes or No, got '" +
                     j.at("follow_up_answer").get<std::string>() + "'");
  }
  return t;
}

inline DatasetSplit parse_split(std::istream& in, const KnowledgeBase& kb, SplitName name) {
  DatasetSplit split;
  split.name = name;
  std::set<std::string> ids;
  detail::for_each_record(in, [&](const json& j, std::size_t line) {
    DialogueInstance inst;
    inst.utterance_id = detail::require_string(j, "utterance_id", line);
    inst.tree_id = detail::optional_string(j, "tree_id", line);
    inst.gold_doc_id = detail::require_string(j, "gold_doc_id", line);
    inst.question = detail::require_string(j, "question", line);
    inst.scenario = detail::optional_string(j, "scenario", line);
    inst.gold_answer = detail::require_string(j, "answer", line);
    if (text::trim(inst.gold_answer).empty())
      throw ValidationError("line " + std::to_string(line) + ": empty answer");
    if (auto it = j.find("history"); it != j.end() && !it->is_null()) {
      if (!it->is_array()) throw ParseError("line " + std::to_string(line) + ": 'history' must be an array");
      for (const auto& t : *it) inst.history.push_back(parse_turn(t, line));
    }
    if (auto it = j.find("evidence"); it != j.end() && !it->is_null()) {
      if (!it->is_array()) throw ParseError("line " + std::to_string(line) + ": 'evidence' must be an array");
      for (const auto& e : *it) inst.evidence.push_back(e.is_string() ? e.get<std::string>() : e.dump());
    }
    if (!kb.contains(inst.gold_doc_id))
      throw ReferentialError("line " + std::to_string(line) + ": gold_doc_id '" + inst.gold_doc_id +
                             "' not in knowledge base");
    if (!ids.insert(inst.utterance_id).second)
      throw ValidationError("line " + std::to_string(line) + ": duplicate utterance_id " + inst.utterance_id);
    split.instances.push_back(std::move(inst));
  });
  return split;
}

inline DatasetSplit load_split(const std::filesystem::path& path, const KnowledgeBase& kb,
                               SplitName name = SplitName::Train) {
  auto in = detail::open_input(path);
  return parse_split(in, kb, name);
}

inline json to_json(const DialogueInstance& inst) {
  json history = json::array();
  for (const auto& t : inst.history)
    history.push_back({{"follow_up_question", t.follow_up_question},
                       {"follow_up_answer", std::string(decision_name(t.follow_up_answer))}});
  return {{"utterance_id", inst.utterance_id}, {"tree_id", inst.tree_id},
          {"gold_doc_id", inst.gold_doc_id},   {"question", inst.question},
          {"scenario", inst.scenario},         {"history", history},
          {"evidence", inst.evidence},         {"answer", inst.gold_answer}};
}

inline std::string serialize(const DatasetSplit& split) {
  std::string out;
  for (const auto& inst : split.instances) {
    out += to_json(inst).dump();
    out += '\n';
  }
  return out;
}

/// Canonical form of a line-delimited JSON file: one compact, key-sorted object per
/// non-blank line. Used to compare files independently of formatting.
inline std::string normalize_jsonl(std::string_view content) {
  std::istringstream in{std::string(content)};
  std::string out;
  detail::for_each_record(in, [&](const json& j, std::size_t) {
    out += j.dump();
    out += '\n';
  });
  return out;
}

}  // namespace ocmr
