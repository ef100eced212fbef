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

// Rule-text segmentation into elementary discourse units (EDUs).
//
// The default segmenter works on whitespace-normalized words:
//   1. a word ending in '.', '?' or '!' closes a sentence;
//   2. a bullet ("-", "*", "(a)", or "3." at a list position) opens a new unit;
//   3. a clause-initial discourse marker ("if", "or if", ...) opens a new
//      unit unless it is the first word of the current unit.
// Markers are matched case-insensitively with surrounding punctuation
// stripped; when several markers start at a word, the longest wins. Joining
// the EDUs with single spaces gives back the normalized body.

#include <memory>
#include <regex>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "json.hpp"
#include "ocmr/common.hpp"
#include "ocmr/corpus.hpp"

namespace ocmr {

struct SegmenterConfig {
  std::vector<std::string> discourse_markers{"if", "unless", "or if", "and if", "provided", "when"};
  std::vector<std::string> bullet_patterns{R"(^[-*•]$)", R"(^\d+[.)]$)", R"(^\([a-z0-9]+\)$)"};
  std::size_t max_edus = 32;

  void validate() const {
    if (max_edus < 1) throw ConfigError("segmenter.max_edus must be >= 1");
    if (discourse_markers.empty()) throw ConfigError("segmenter.discourse_markers must be non-empty");
  }

  nlohmann::json to_json() const {
    return {{"discourse_markers", discourse_markers},
            {"bullet_patterns", bullet_patterns},
            {"max_edus", max_edus}};
  }
  std::string hash() const { return hex64(fnv1a(to_json().dump())); }
};

class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual std::vector<std::string> segment(std::string_view body) const = 0;
  /// Identifies the segmentation behaviour; cached artifacts embed it.
  virtual std::string fingerprint() const = 0;
};

class RuleBasedSegmenter final : public Segmenter {
 public:
  explicit RuleBasedSegmenter(SegmenterConfig config = {}) : config_(std::move(config)) {
    config_.validate();
    for (const auto& m : config_.discourse_markers) {
      auto words = text::content_tokens(m);
      if (words.empty()) throw ConfigError("segmenter: empty discourse marker");
      markers_.push_back(std::move(words));
    }
    for (const auto& p : config_.bullet_patterns) {
      try {
        bullets_.emplace_back(p, std::regex::ECMAScript);
      } catch (const std::regex_error& e) {
        throw ConfigError("segmenter: bad bullet pattern '" + p + "': " + e.what());
      }
    }
  }

  std::vector<std::string> segment(std::string_view body) const override {
    const auto words = text::split_ws(body);
    if (words.empty()) throw EmptyInputError("segment: empty rule body");

    std::vector<std::string> keys;
    keys.reserve(words.size());
    for (const auto& w : words) {
      auto t = text::content_tokens(w);
      keys.push_back(t.empty() ? std::string() : text::join(t, " "));
    }

    std::vector<std::string> edus;
    std::vector<std::string> current;
    auto flush = [&] {
      if (!current.empty()) edus.push_back(text::join(current, " "));
      current.clear();
    };
    for (std::size_t i = 0; i < words.size();) {
      std::size_t span = 1;
      bool opens = false;
      const bool bullet = is_bullet(words, i);
      if (bullet) {
        opens = true;
      } else if (std::size_t len = marker_at(keys, i); len > 0) {
        opens = true;
        span = len;
      }
      if (opens && !current.empty()) flush();
      for (std::size_t j = i; j < i + span; ++j) current.push_back(words[j]);
      i += span;
      if (!bullet && ends_sentence(current.back())) flush();
    }
    flush();

    if (edus.size() > config_.max_edus) {
      spdlog::warn("segment: {} EDUs exceed max_edus={}, truncating", edus.size(), config_.max_edus);
      edus.resize(config_.max_edus);
    }
    return edus;
  }

  std::string fingerprint() const override { return "rule:" + config_.hash(); }
  const SegmenterConfig& config() const { return config_; }

 private:
  // "3." is only a bullet at a list position (first word, or after ':', ';'
  // or a sentence end), so "over 65." stays a number. A bullet is never the
  // last word.
  bool is_bullet(const std::vector<std::string>& words, std::size_t i) const {
    if (i + 1 >= words.size()) return false;
    if (i > 0 && words[i].back() == '.') {
      const char last = words[i - 1].back();
      if (last != ':' && last != ';' && !ends_sentence(words[i - 1])) return false;
    }
    for (const auto& re : bullets_)
      if (std::regex_match(words[i], re)) return true;
    return false;
  }

  // Length in words of the longest marker starting at word i, or 0.
  std::size_t marker_at(const std::vector<std::string>& keys, std::size_t i) const {
    std::size_t best = 0;
    for (const auto& m : markers_) {
      if (m.size() <= best || i + m.size() > keys.size()) continue;
      bool ok = true;
      for (std::size_t j = 0; j < m.size() && ok; ++j) ok = keys[i + j] == m[j];
      if (ok) best = m.size();
    }
    return best;
  }

  static bool ends_sentence(const std::string& word) {
    // Trailing closing quotes/brackets do not hide the terminator.
    std::size_t e = word.size();
    while (e > 0 && (word[e - 1] == '"' || word[e - 1] == '\'' || word[e - 1] == ')')) --e;
    if (e == 0) return false;
    char c = word[e - 1];
    return c == '.' || c == '?' || c == '!';
  }

  SegmenterConfig config_;
  std::vector<std::vector<std::string>> markers_;
  std::vector<std::regex> bullets_;
};

inline std::vector<std::string> segment(std::string_view body, const SegmenterConfig& config = {}) {
  return RuleBasedSegmenter(config).segment(body);
}

/// Returns a copy of `kb` with every document's EDUs (re)computed.
inline KnowledgeBase segment_kb(const KnowledgeBase& kb, const Segmenter& segmenter) {
  KnowledgeBase out = kb;
  for (auto& doc : out.documents()) {
    try {
      doc.edus = segmenter.segment(doc.body);
    } catch (const EmptyInputError& e) {
      throw EmptyInputError("doc " + doc.doc_id + ": " + e.what());
    } catch (const Error& e) {
      throw Error("doc " + doc.doc_id + ": " + e.what());
    }
  }
  return out;
}

inline KnowledgeBase segment_kb(const KnowledgeBase& kb, const SegmenterConfig& config = {}) {
  return segment_kb(kb, RuleBasedSegmenter(config));
}

}  // namespace ocmr
