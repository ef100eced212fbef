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

// Toy rule world. Every rule reads
//   "You can get the <topic> <kind> if <cond> and if <cond> ... ."
// with conditions drawn from a closed set of phrase templates. Instances pair a
// rule with a scenario and a dialogue history, and the generator knows the
// exact entailment state of every EDU.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "ocmr/common.hpp"
#include "ocmr/corpus.hpp"
#include "ocmr/entailment_supervision.hpp"

namespace ocmr {

struct SyntheticSpec {
  std::size_t num_rules = 40;
  std::size_t min_conditions = 2;
  std::size_t max_conditions = 4;
  std::size_t vocab_size = 120;  // topic words + condition filler words
  std::size_t num_train = 2000;
  std::size_t num_dev = 200;
  std::size_t num_test = 200;
  std::uint64_t seed = 7;
  double unseen_fraction = 0.3;       // share of dev/test instances whose gold rule is unseen
  double scenario_cover_prob = 0.12;  // scenario states one condition
  double distractor_prob = 0.45;      // scenario mentions another rule's topic

  static constexpr std::size_t kTemplates = 5;
  static constexpr std::size_t kMinFillersPerTemplate = 4;

  void validate() const {
    if (num_rules < 2) throw ConfigError("synthetic.num_rules must be >= 2");
    if (min_conditions < 1 || max_conditions < min_conditions || max_conditions > kTemplates)
      throw ConfigError("synthetic.conditions_per_rule must satisfy 1 <= min <= max <= 5");
    if (num_train == 0 || num_dev == 0 || num_test == 0) throw ConfigError("synthetic split sizes must be positive");
    if (unseen_fraction < 0 || unseen_fraction > 1) throw ConfigError("synthetic.unseen_fraction must be in [0, 1]");
    if (scenario_cover_prob < 0 || distractor_prob < 0 || scenario_cover_prob + distractor_prob > 1)
      throw ConfigError("synthetic scenario probabilities must be non-negative and sum to <= 1");
    const std::size_t need = num_rules + kTemplates * kMinFillersPerTemplate;
    if (vocab_size < need)
      throw ConfigError("synthetic.vocab_size " + std::to_string(vocab_size) + " is too small for " +
                        std::to_string(num_rules) + " rules (need >= " + std::to_string(need) + ")");
  }

  nlohmann::json to_json() const {
    return {{"num_rules", num_rules},
            {"conditions_per_rule", {min_conditions, max_conditions}},
            {"vocab_size", vocab_size},
            {"num_train", num_train},
            {"num_dev", num_dev},
            {"num_test", num_test},
            {"seed", seed},
            {"unseen_fraction", unseen_fraction},
            {"scenario_cover_prob", scenario_cover_prob},
            {"distractor_prob", distractor_prob}};
  }

  static SyntheticSpec from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    static const std::set<std::string> keys{"num_rules", "conditions_per_rule", "vocab_size", "num_train",
                                            "num_dev", "num_test", "seed", "unseen_fraction",
                                            "scenario_cover_prob", "distractor_prob"};
    for (const auto& [k, v] : j.items()) {
      if (!keys.count(k)) {
        std::string valid;
        for (const auto& x : keys) valid += (valid.empty() ? "" : ", ") + x;
        throw ConfigError("synthetic spec: unknown key '" + k + "' (valid keys: " + valid + ")");
      }
    }
    s.num_rules = j.value("num_rules", s.num_rules);
    if (j.contains("conditions_per_rule")) {
      const auto& r = j.at("conditions_per_rule");
      s.min_conditions = r.at(0).get<std::size_t>();
      s.max_conditions = r.at(1).get<std::size_t>();
    }
    s.vocab_size = j.value("vocab_size", s.vocab_size);
    s.num_train = j.value("num_train", s.num_train);
    s.num_dev = j.value("num_dev", s.num_dev);
    s.num_test = j.value("num_test", s.num_test);
    s.seed = j.value("seed", s.seed);
    s.unseen_fraction = j.value("unseen_fraction", s.unseen_fraction);
    s.scenario_cover_prob = j.value("scenario_cover_prob", s.scenario_cover_prob);
    s.distractor_prob = j.value("distractor_prob", s.distractor_prob);
    s.validate();
    return s;
  }
};

/// One condition phrase in its four surface forms.
struct SyntheticCondition {
  std::size_t template_id = 0;
  std::string filler;
  std::string clause;     // "you live in brova"
  std::string question;   // "Do you live in brova?"
  std::string affirm;     // "I live in brova."
  std::string deny;       // "I do not live in brova."
};

struct SyntheticRule {
  DocId doc_id;
  std::string topic, kind;
  std::vector<SyntheticCondition> conditions;
  std::vector<std::string> edus;  // head clause followed by one EDU per condition
  bool seen = true;
};

struct SyntheticWorld {
  SyntheticSpec spec;
  KnowledgeBase kb;  // raw bodies; edus left for the segmenter
  std::vector<SyntheticRule> rules;
  DatasetSplit train, dev, test;
  LabelMap truth;  // exact per-EDU states for every instance of every split

  const DatasetSplit& split(SplitName n) const { return n == SplitName::Train ? train : n == SplitName::Dev ? dev : test; }
};

namespace synth_detail {

inline std::vector<std::string> pseudo_words(std::size_t n, Rng& rng) {
  static const std::vector<std::string> onset{"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
                                              "br", "dr", "gl", "pl", "st", "tr"};
  static const std::vector<std::string> vowel{"a", "e", "i", "o", "u"};
  static const std::vector<std::string> coda{"", "n", "r", "l", "s", "x"};
  static const std::set<std::string> reserved{"yes", "no", "if", "and", "or", "you", "the", "get", "can", "are",
                                              "not", "live", "work", "have", "over", "unless", "when"};
  std::set<std::string> used;
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string w;
    const std::size_t syllables = 2 + uniform_index(rng, 2);
    for (std::size_t s = 0; s < syllables; ++s)
      w += onset[uniform_index(rng, onset.size())] + vowel[uniform_index(rng, vowel.size())];
    w += coda[uniform_index(rng, coda.size())];
    if (reserved.count(w) || !used.insert(w).second) continue;
    out.push_back(w);
  }
  return out;
}

inline std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

inline SyntheticCondition make_condition(std::size_t tpl, const std::string& w) {
  SyntheticCondition c{tpl, w, {}, {}, {}, {}};
  switch (tpl) {
    case 0: c = {tpl, w, "you are a " + w, "Are you a " + w + "?", "I am a " + w + ".", "I am not a " + w + "."}; break;
    case 1: c = {tpl, w, "you live in " + w, "Do you live in " + w + "?", "I live in " + w + ".", "I do not live in " + w + "."}; break;
    case 2: c = {tpl, w, "you have a " + w, "Do you have a " + w + "?", "I have a " + w + ".", "I do not have a " + w + "."}; break;
    case 3: c = {tpl, w, "you work in " + w, "Do you work in " + w + "?", "I work in " + w + ".", "I do not work in " + w + "."}; break;
    default: c = {tpl, w, "you are over " + w, "Are you over " + w + "?", "I am over " + w + ".", "I am not over " + w + "."}; break;
  }
  return c;
}

inline const std::vector<std::string>& kinds() {
  static const std::vector<std::string> k{"grant", "allowance", "benefit", "loan", "pension", "credit"};
  return k;
}

inline const std::vector<std::string>& question_forms() {
  static const std::vector<std::string> q{"Can I get the {}?", "Am I eligible for the {}?", "Can I apply for the {}?",
                                          "Do I qualify for the {}?"};
  return q;
}

inline std::string fill(std::string form, const std::string& value) {
  form.replace(form.find("{}"), 2, value);
  return form;
}

}  // namespace synth_detail

/// Builds the rules, knowledge base and all three splits for `spec`.
inline SyntheticWorld generate(const SyntheticSpec& spec) {
  using namespace synth_detail;
  spec.validate();
  SyntheticWorld world;
  world.spec = spec;

  Rng word_rng = derive_rng(spec.seed, "synthetic-words");
  const auto words = pseudo_words(spec.vocab_size, word_rng);
  std::vector<std::string> topics(words.begin(), words.begin() + static_cast<long>(spec.num_rules));
  std::vector<std::vector<std::string>> fillers(SyntheticSpec::kTemplates);
  for (std::size_t i = spec.num_rules; i < words.size(); ++i)
    fillers[(i - spec.num_rules) % SyntheticSpec::kTemplates].push_back(words[i]);
  // Ages read naturally as numbers.
  fillers[4].clear();
  for (std::size_t i = 0; i < std::max<std::size_t>(SyntheticSpec::kMinFillersPerTemplate, (spec.vocab_size - spec.num_rules) / 5); ++i)
    fillers[4].push_back(std::to_string(18 + 3 * i));

  Rng rule_rng = derive_rng(spec.seed, "synthetic-rules");
  std::vector<std::size_t> order(spec.num_rules);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_in_place(order, rule_rng);
  const auto num_unseen = static_cast<std::size_t>(std::llround(spec.unseen_fraction * static_cast<double>(spec.num_rules)));
  std::set<std::size_t> unseen_rules(order.begin(), order.begin() + static_cast<long>(std::min(num_unseen, spec.num_rules - 1)));

  for (std::size_t r = 0; r < spec.num_rules; ++r) {
    SyntheticRule rule;
    char id[32];
    std::snprintf(id, sizeof id, "rule-%03zu", r);
    rule.doc_id = id;
    rule.topic = topics[r];
    rule.kind = kinds()[uniform_index(rule_rng, kinds().size())];
    rule.seen = !unseen_rules.count(r);
    const std::size_t n = spec.min_conditions + uniform_index(rule_rng, spec.max_conditions - spec.min_conditions + 1);
    std::vector<std::size_t> tpls(SyntheticSpec::kTemplates);
    for (std::size_t t = 0; t < tpls.size(); ++t) tpls[t] = t;
    shuffle_in_place(tpls, rule_rng);
    std::string body = "You can get the " + rule.topic + " " + rule.kind;
    rule.edus.push_back(body);
    for (std::size_t c = 0; c < n; ++c) {
      const auto& pool = fillers[tpls[c]];
      rule.conditions.push_back(make_condition(tpls[c], pool[uniform_index(rule_rng, pool.size())]));
      std::string edu = (c == 0 ? "if " : "and if ") + rule.conditions.back().clause;
      if (c + 1 == n) edu += ".";
      body += " " + edu;
      rule.edus.push_back(edu);
    }
    world.kb.add(RuleDocument{rule.doc_id, capitalize(rule.topic) + " " + capitalize(rule.kind), body, {}}, rule.seen);
    world.rules.push_back(std::move(rule));
  }

  std::vector<std::size_t> seen_idx, unseen_idx;
  for (std::size_t r = 0; r < world.rules.size(); ++r) (world.rules[r].seen ? seen_idx : unseen_idx).push_back(r);

  auto make_split = [&](SplitName name, std::size_t count) {
    DatasetSplit split;
    split.name = name;
    const std::string prefix(split_name(name));
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng = derive_rng(spec.seed, "synthetic-instance:" + prefix, i);
      const bool unseen = name != SplitName::Train && !unseen_idx.empty() && uniform_real(rng) < spec.unseen_fraction;
      const auto& pool = unseen ? unseen_idx : seen_idx;
      const SyntheticRule& rule = world.rules[pool[uniform_index(rng, pool.size())]];
      const std::size_t n = rule.conditions.size();

      DialogueInstance inst;
      char uid[32];
      std::snprintf(uid, sizeof uid, "%s-%05zu", prefix.c_str(), i);
      inst.utterance_id = uid;
      inst.tree_id = rule.doc_id;
      inst.gold_doc_id = rule.doc_id;
      const auto& forms = question_forms();
      inst.question = fill(forms[uniform_index(rng, forms.size())], rule.topic + " " + rule.kind);

      std::vector<EntailmentLabel> truth(n + 1, EntailmentLabel::Neutral);
      std::vector<bool> resolved(n, false);
      bool scenario_denies = false;
      const double u = uniform_real(rng);
      if (u < spec.scenario_cover_prob) {
        const std::size_t c = uniform_index(rng, n);
        const bool yes = uniform_index(rng, 2) == 0;
        inst.scenario = yes ? rule.conditions[c].affirm : rule.conditions[c].deny;
        truth[c + 1] = yes ? EntailmentLabel::Entailment : EntailmentLabel::Contradiction;
        resolved[c] = true;
        scenario_denies = !yes;
      } else if (u < spec.scenario_cover_prob + spec.distractor_prob) {
        const SyntheticRule* other = &rule;
        while (other == &rule) other = &world.rules[uniform_index(rng, world.rules.size())];
        inst.scenario = "My neighbour gets the " + other->topic + " " + other->kind + ".";
      }

      std::vector<std::size_t> open;
      for (std::size_t c = 0; c < n; ++c)
        if (!resolved[c]) open.push_back(c);
      auto ask = [&](std::size_t c, bool yes) {
        inst.history.push_back({rule.conditions[c].question, yes ? Decision::Yes : Decision::No});
        truth[c + 1] = yes ? EntailmentLabel::Entailment : EntailmentLabel::Contradiction;
      };

      const std::size_t cls = uniform_index(rng, 3);
      if (scenario_denies) {
        inst.gold_answer = "No";
      } else if (cls == 0 || open.empty()) {
        for (auto c : open) ask(c, true);
        inst.gold_answer = "Yes";
      } else {
        const std::size_t p = uniform_index(rng, open.size());
        for (std::size_t j = 0; j < p; ++j) ask(open[j], true);
        if (cls == 1) {
          ask(open[p], false);
          inst.gold_answer = "No";
        } else {
          inst.gold_answer = rule.conditions[open[p]].question;
        }
      }
      inst.evidence = {};
      world.truth.emplace(inst.utterance_id, EntailmentLabelSequence{rule.doc_id, std::move(truth)});
      split.instances.push_back(std::move(inst));
    }
    return split;
  };
  world.train = make_split(SplitName::Train, spec.num_train);
  world.dev = make_split(SplitName::Dev, spec.num_dev);
  world.test = make_split(SplitName::Test, spec.num_test);
  return world;
}

/// Ground truth restricted to one split.
inline LabelMap truth_for(const SyntheticWorld& world, const DatasetSplit& split) {
  LabelMap out;
  for (const auto& inst : split.instances) out.emplace(inst.utterance_id, world.truth.at(inst.utterance_id));
  return out;
}

/// Reference solver that reads the gold rule's generator structure.
inline std::string oracle_answer(const SyntheticWorld& world, const DialogueInstance& inst) {
  const SyntheticRule* rule = nullptr;
  for (const auto& r : world.rules)
    if (r.doc_id == inst.gold_doc_id) rule = &r;
  if (!rule) throw ReferentialError("oracle: unknown rule " + inst.gold_doc_id);
  const auto scen = text::content_tokens(inst.scenario);
  std::vector<int> state(rule->conditions.size(), 0);  // 1 yes, -1 no
  for (std::size_t c = 0; c < rule->conditions.size(); ++c) {
    if (scen == text::content_tokens(rule->conditions[c].affirm)) state[c] = 1;
    if (scen == text::content_tokens(rule->conditions[c].deny)) state[c] = -1;
    for (const auto& t : inst.history)
      if (t.follow_up_question == rule->conditions[c].question) state[c] = t.follow_up_answer == Decision::Yes ? 1 : -1;
  }
  for (int s : state)
    if (s < 0) return "No";
  for (std::size_t c = 0; c < state.size(); ++c)
    if (state[c] == 0) return rule->conditions[c].question;
  return "Yes";
}

}  // namespace ocmr
