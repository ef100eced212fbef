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

// Rule-text retrieval. Two retrievers share one interface:
//   TfidfIndex  - inverted index, smoothed idf, cosine over L2-normalized vectors.
//   DenseIndex  - documents embedded by a trained DualEncoder, dot-product scores.
// Rankings break score ties by ascending doc_id.

#include <array>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "ocmr/common.hpp"
#include "ocmr/corpus.hpp"

namespace ocmr {

struct Query {
  std::string text;

  /// Question and scenario joined into one query string.
  static Query from(const DialogueInstance& inst) {
    Query q{text::trim(inst.question + " " + inst.scenario)};
    if (q.text.empty()) throw ContractError("query: empty question and scenario for " + inst.utterance_id);
    return q;
  }
};

struct ScoredDoc {
  DocId doc_id;
  double score = 0.0;
  bool operator==(const ScoredDoc&) const = default;
};

struct RetrievalResult {
  std::vector<ScoredDoc> ranked;
  std::size_t k = 0;

  /// 1-based rank of `id`, or 0 when absent.
  std::size_t rank_of(const DocId& id) const {
    for (std::size_t i = 0; i < ranked.size(); ++i)
      if (ranked[i].doc_id == id) return i + 1;
    return 0;
  }
};

/// Sorts by descending score, ascending doc_id, and keeps the first k.
inline RetrievalResult top_k(std::vector<ScoredDoc> scored, std::size_t k) {
  if (k == 0) throw ContractError("retrieve: k must be >= 1");
  std::sort(scored.begin(), scored.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  });
  if (scored.size() > k) scored.resize(k);
  return {std::move(scored), k};
}

class Retriever {
 public:
  virtual ~Retriever() = default;
  virtual RetrievalResult retrieve(const Query& query, std::size_t k) const = 0;
  virtual std::string kind() const = 0;
  virtual std::size_t size() const = 0;
};

inline std::string doc_text(const RuleDocument& d) { return d.title + " " + d.body; }

class TfidfIndex final : public Retriever {
 public:
  explicit TfidfIndex(const KnowledgeBase& kb) {
    if (kb.empty()) throw EmptyInputError("build_tfidf_index: empty knowledge base");
    const double n = static_cast<double>(kb.size());
    std::vector<std::map<std::string, double>> counts;
    std::map<std::string, std::size_t> df;
    for (const auto& doc : kb.documents()) {
      ids_.push_back(doc.doc_id);
      std::map<std::string, double> tf;
      for (auto& t : text::content_tokens(doc_text(doc))) tf[t] += 1.0;
      for (const auto& [t, _] : tf) ++df[t];
      counts.push_back(std::move(tf));
    }
    for (const auto& [t, c] : df) idf_[t] = std::log((1.0 + n) / (1.0 + static_cast<double>(c))) + 1.0;
    for (std::size_t d = 0; d < counts.size(); ++d) {
      double norm = 0.0;
      for (const auto& [t, c] : counts[d]) norm += (c * idf_[t]) * (c * idf_[t]);
      norm = std::sqrt(norm);
      for (const auto& [t, c] : counts[d])
        postings_[t].push_back({d, norm > 0 ? c * idf_[t] / norm : 0.0});
    }
  }

  RetrievalResult retrieve(const Query& query, std::size_t k) const override {
    std::map<std::string, double> tf;
    for (auto& t : text::content_tokens(query.text)) tf[t] += 1.0;
    std::vector<double> scores(ids_.size(), 0.0);
    double qnorm = 0.0;
    std::vector<std::pair<const std::vector<Posting>*, double>> hits;
    for (const auto& [t, c] : tf) {
      auto it = idf_.find(t);
      if (it == idf_.end()) continue;
      const double w = c * it->second;
      qnorm += w * w;
      hits.push_back({&postings_.at(t), w});
    }
    qnorm = std::sqrt(qnorm);
    if (qnorm > 0)
      for (const auto& [plist, w] : hits)
        for (const auto& p : *plist) scores[p.doc] += w / qnorm * p.weight;
    std::vector<ScoredDoc> scored;
    scored.reserve(ids_.size());
    for (std::size_t d = 0; d < ids_.size(); ++d) scored.push_back({ids_[d], scores[d]});
    return top_k(std::move(scored), k);
  }

  std::string kind() const override { return "tfidf"; }
  std::size_t size() const override { return ids_.size(); }
  double idf(const std::string& term) const {
    auto it = idf_.find(term);
    return it == idf_.end() ? 0.0 : it->second;
  }
  std::size_t num_terms() const { return idf_.size(); }

 private:
  struct Posting {
    std::size_t doc;
    double weight;
  };
  std::vector<DocId> ids_;
  std::map<std::string, double> idf_;
  std::map<std::string, std::vector<Posting>> postings_;
};

inline TfidfIndex build_tfidf_index(const KnowledgeBase& kb) { return TfidfIndex(kb); }

// ---------------------------------------------------------------------------
// Dual encoder

struct DualEncoderConfig {
  std::size_t embedding_dim = 128;
  std::size_t num_negatives = 7;
  double temperature = 1.0;
  std::size_t steps = 1500;
  std::size_t batch_size = 16;
  double learning_rate = 0.001;
  std::uint64_t seed = 13;

  void validate() const {
    if (embedding_dim == 0) throw ConfigError("retriever.embedding_dim must be positive");
    if (num_negatives < 1) throw ConfigError("retriever.num_negatives must be >= 1");
    if (!(temperature > 0)) throw ConfigError("retriever.temperature must be > 0");
    if (batch_size == 0) throw ConfigError("retriever.batch_size must be positive");
    if (!(learning_rate > 0)) throw ConfigError("retriever.learning_rate must be > 0");
  }
  nlohmann::json to_json() const {
    return {{"embedding_dim", embedding_dim}, {"num_negatives", num_negatives},
            {"temperature", temperature},     {"steps", steps},
            {"batch_size", batch_size},       {"learning_rate", learning_rate},
            {"seed", seed}};
  }
};

/// Softmax cross-entropy of index 0 among `scores`, and its gradient.
inline double contrastive_loss(const std::vector<double>& scores, std::vector<double>* grad = nullptr) {
  double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - mx);
  const double log_z = mx + std::log(z);
  if (grad) {
    grad->resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) (*grad)[i] = std::exp(scores[i] - log_z) - (i == 0 ? 1.0 : 0.0);
  }
  return log_z - scores[0];
}

/// Bag-of-embeddings query and document towers with mean pooling. Both towers
/// start from the same random table so untrained words still match themselves.
class DualEncoder {
 public:
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vector = Eigen::VectorXd;

  DualEncoder() = default;
  DualEncoder(std::vector<std::string> vocab, const DualEncoderConfig& config) : config_(config) {
    config_.validate();
    for (auto& w : vocab) add_word(w);
    Rng rng = derive_rng(config.seed, "dual-encoder-init");
    std::normal_distribution<double> normal(0.0, 1.0);
    query_ = Matrix(words_.size(), config.embedding_dim);
    for (Eigen::Index i = 0; i < query_.size(); ++i) query_.data()[i] = normal(rng);
    doc_ = query_;
  }

  std::vector<std::size_t> token_ids(std::string_view s) const {
    std::vector<std::size_t> ids;
    for (auto& t : text::content_tokens(s))
      if (auto it = index_.find(t); it != index_.end()) ids.push_back(it->second);
    return ids;
  }

  Vector encode_query(std::string_view s) const { return pool(query_, token_ids(s)); }
  Vector encode_doc(std::string_view s) const { return pool(doc_, token_ids(s)); }

  double score(const Vector& q, const Vector& d) const { return q.dot(d) / config_.temperature; }

  const DualEncoderConfig& config() const { return config_; }
  Matrix& query_table() { return query_; }
  Matrix& doc_table() { return doc_; }
  const Matrix& query_table() const { return query_; }
  const Matrix& doc_table() const { return doc_; }
  const std::vector<std::string>& words() const { return words_; }

  nlohmann::json to_json() const {
    auto dump = [](const Matrix& m) { return std::vector<double>(m.data(), m.data() + m.size()); };
    return {{"config", config_.to_json()}, {"words", words_}, {"query", dump(query_)}, {"doc", dump(doc_)}};
  }
  static DualEncoder from_json(const nlohmann::json& j) {
    DualEncoder e;
    const auto& c = j.at("config");
    e.config_.embedding_dim = c.at("embedding_dim");
    e.config_.num_negatives = c.at("num_negatives");
    e.config_.temperature = c.at("temperature");
    e.config_.steps = c.at("steps");
    e.config_.batch_size = c.at("batch_size");
    e.config_.learning_rate = c.at("learning_rate");
    e.config_.seed = c.at("seed");
    for (const auto& w : j.at("words")) e.add_word(w.get<std::string>());
    auto load = [&](const nlohmann::json& arr) {
      auto v = arr.get<std::vector<double>>();
      if (v.size() != e.words_.size() * e.config_.embedding_dim) throw ParseError("dual encoder: bad table size");
      return Matrix(Eigen::Map<Matrix>(v.data(), e.words_.size(), e.config_.embedding_dim));
    };
    e.query_ = load(j.at("query"));
    e.doc_ = load(j.at("doc"));
    return e;
  }

  static Vector pool(const Matrix& table, const std::vector<std::size_t>& ids) {
    Vector v = Vector::Zero(table.cols());
    for (auto id : ids) v += table.row(static_cast<Eigen::Index>(id)).transpose();
    if (!ids.empty()) v /= static_cast<double>(ids.size());
    return v;
  }

 private:
  void add_word(const std::string& w) {
    if (index_.emplace(w, words_.size()).second) words_.push_back(w);
  }

  DualEncoderConfig config_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
  Matrix query_;
  Matrix doc_;
};

struct DualEncoderTrace {
  std::vector<double> step_loss;  // mean batch loss per step
};

/// Contrastive training: each query's gold document against m negatives drawn
/// uniformly from the seen part of the knowledge base.
inline DualEncoder train_dual_encoder(const KnowledgeBase& kb, const DatasetSplit& train,
                                      const DualEncoderConfig& config, DualEncoderTrace* trace = nullptr) {
  config.validate();
  std::vector<DocId> seen(kb.seen_ids().begin(), kb.seen_ids().end());
  if (config.num_negatives >= seen.size())
    throw ConfigError("train_dual_encoder: num_negatives (" + std::to_string(config.num_negatives) +
                      ") must be smaller than the seen knowledge base (" + std::to_string(seen.size()) + ")");
  if (train.instances.empty()) throw EmptyInputError("train_dual_encoder: empty training split");

  std::set<std::string> vocab_set;
  for (const auto& d : kb.documents())
    for (auto& t : text::content_tokens(doc_text(d))) vocab_set.insert(t);
  for (const auto& inst : train.instances)
    for (auto& t : text::content_tokens(inst.question + " " + inst.scenario)) vocab_set.insert(t);
  DualEncoder enc(std::vector<std::string>(vocab_set.begin(), vocab_set.end()), config);

  std::unordered_map<DocId, std::vector<std::size_t>> doc_ids;
  for (const auto& d : kb.documents()) doc_ids[d.doc_id] = enc.token_ids(doc_text(d));
  std::vector<std::vector<std::size_t>> query_ids;
  for (const auto& inst : train.instances) query_ids.push_back(enc.token_ids(Query::from(inst).text));

  using Matrix = DualEncoder::Matrix;
  using Vector = DualEncoder::Vector;
  auto& Q = enc.query_table();
  auto& D = enc.doc_table();
  Matrix mq = Matrix::Zero(Q.rows(), Q.cols()), vq = mq, md = mq, vd = mq;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double inv_t = 1.0 / config.temperature;
  Rng rng = derive_rng(config.seed, "dual-encoder-train");

  for (std::size_t step = 1; step <= config.steps; ++step) {
    Matrix gq = Matrix::Zero(Q.rows(), Q.cols()), gd = gq;
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const std::size_t qi = uniform_index(rng, train.instances.size());
      const auto& gold = train.instances[qi].gold_doc_id;
      std::vector<DocId> cands{gold};
      while (cands.size() < config.num_negatives + 1) {
        const auto& c = seen[uniform_index(rng, seen.size())];
        if (std::find(cands.begin(), cands.end(), c) == cands.end()) cands.push_back(c);
      }
      const auto& qids = query_ids[qi];
      Vector q = DualEncoder::pool(Q, qids);
      std::vector<Vector> ds;
      std::vector<double> scores;
      for (const auto& c : cands) {
        ds.push_back(DualEncoder::pool(D, doc_ids[c]));
        scores.push_back(q.dot(ds.back()) * inv_t);
      }
      std::vector<double> g;
      batch_loss += contrastive_loss(scores, &g);
      Vector dq = Vector::Zero(q.size());
      for (std::size_t j = 0; j < cands.size(); ++j) {
        dq += g[j] * inv_t * ds[j];
        const auto& ids = doc_ids[cands[j]];
        if (ids.empty()) continue;
        const Vector dd = g[j] * inv_t * q / static_cast<double>(ids.size());
        for (auto id : ids) gd.row(static_cast<Eigen::Index>(id)) += dd.transpose();
      }
      if (!qids.empty()) {
        dq /= static_cast<double>(qids.size());
        for (auto id : qids) gq.row(static_cast<Eigen::Index>(id)) += dq.transpose();
      }
    }
    const double scale = 1.0 / static_cast<double>(config.batch_size);
    gq *= scale;
    gd *= scale;
    if (trace) trace->step_loss.push_back(batch_loss * scale);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    auto adam = [&](Matrix& p, Matrix& m, Matrix& v, const Matrix& g) {
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g.cwiseProduct(g);
      p.array() -= config.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    adam(Q, mq, vq, gq);
    adam(D, md, vd, gd);
  }
  return enc;
}

class DenseIndex final : public Retriever {
 public:
  DenseIndex(const KnowledgeBase& kb, DualEncoder encoder) : encoder_(std::move(encoder)) {
    if (kb.empty()) throw EmptyInputError("dense index: empty knowledge base");
    for (const auto& d : kb.documents()) {
      ids_.push_back(d.doc_id);
      docs_.push_back(encoder_.encode_doc(doc_text(d)));
    }
  }

  RetrievalResult retrieve(const Query& query, std::size_t k) const override {
    const auto q = encoder_.encode_query(query.text);
    std::vector<ScoredDoc> scored;
    scored.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) scored.push_back({ids_[i], encoder_.score(q, docs_[i])});
    return top_k(std::move(scored), k);
  }
  std::string kind() const override { return "dense"; }
  std::size_t size() const override { return ids_.size(); }
  const DualEncoder& encoder() const { return encoder_; }

 private:
  DualEncoder encoder_;
  std::vector<DocId> ids_;
  std::vector<DualEncoder::Vector> docs_;
};

// ---------------------------------------------------------------------------
// Evaluation and cache

using RetrievalMap = std::map<std::string, RetrievalResult>;

inline constexpr std::array<std::size_t, 4> kRetrievalCutoffs{1, 5, 10, 20};

struct TopKRow {
  std::size_t count = 0;
  std::array<double, 4> accuracy{};  // percentages at kRetrievalCutoffs
};

struct RetrievalTable {
  TopKRow overall, seen, unseen;
};

inline RetrievalMap retrieve_split(const Retriever& retriever, const DatasetSplit& split, std::size_t k = 20) {
  RetrievalMap out;
  for (const auto& inst : split.instances) out.emplace(inst.utterance_id, retriever.retrieve(Query::from(inst), k));
  return out;
}

inline RetrievalTable evaluate_retrieval(const RetrievalMap& results, const DatasetSplit& split,
                                         const KnowledgeBase& kb, const std::set<DocId>& seen_gold) {
  std::array<std::array<std::size_t, 4>, 3> hits{};
  std::array<std::size_t, 3> counts{};
  const std::size_t need = std::min<std::size_t>(20, kb.size());
  for (const auto& inst : split.instances) {
    auto it = results.find(inst.utterance_id);
    if (it == results.end()) throw ReferentialError("evaluate_retrieval: no result for " + inst.utterance_id);
    if (it->second.ranked.size() < need)
      throw ContractError("evaluate_retrieval: result for " + inst.utterance_id + " has fewer than " +
                          std::to_string(need) + " ranks");
    const std::size_t rank = it->second.rank_of(inst.gold_doc_id);
    const std::size_t group = subset_of(inst, seen_gold) == Subset::Seen ? 1 : 2;
    for (std::size_t g : {std::size_t{0}, group}) {
      ++counts[g];
      for (std::size_t c = 0; c < kRetrievalCutoffs.size(); ++c)
        if (rank != 0 && rank <= kRetrievalCutoffs[c]) ++hits[g][c];
    }
  }
  auto row = [&](std::size_t g) {
    TopKRow r;
    r.count = counts[g];
    for (std::size_t c = 0; c < 4; ++c)
      r.accuracy[c] = counts[g] ? 100.0 * static_cast<double>(hits[g][c]) / static_cast<double>(counts[g]) : 0.0;
    return r;
  };
  return {row(0), row(1), row(2)};
}

inline nlohmann::json to_json(const RetrievalTable& t) {
  auto row = [](const TopKRow& r) {
    nlohmann::json j{{"count", r.count}};
    for (std::size_t c = 0; c < 4; ++c) j["top" + std::to_string(kRetrievalCutoffs[c])] = r.accuracy[c];
    return j;
  };
  return {{"overall", row(t.overall)}, {"seen", row(t.seen)}, {"unseen", row(t.unseen)}};
}

inline std::string serialize_retrieval(const RetrievalMap& results, const std::string& retriever_kind,
                                       const std::string& config_hash) {
  std::size_t k = 0;
  for (const auto& [_, r] : results) k = std::max(k, r.k);
  std::string out = nlohmann::json{{"kind", "retrieval"}, {"retriever", retriever_kind},
                                   {"config_hash", config_hash}, {"k", k}}
                        .dump() +
                    "\n";
  for (const auto& [uid, r] : results) {
    nlohmann::json ranked = nlohmann::json::array();
    for (const auto& s : r.ranked) ranked.push_back({s.doc_id, s.score});
    out += nlohmann::json{{"utterance_id", uid}, {"ranked", ranked}}.dump() + "\n";
  }
  return out;
}

inline RetrievalMap parse_retrieval(std::string_view content, const std::string& expected_hash) {
  std::istringstream in{std::string(content)};
  std::string line;
  if (!std::getline(in, line)) throw ParseError("retrieval cache: missing header");
  auto header = nlohmann::json::parse(line);
  if (header.value("kind", "") != "retrieval") throw ParseError("retrieval cache: bad header");
  if (header.value("config_hash", "") != expected_hash)
    throw StaleCacheError("retrieval cache: config hash " + header.value("config_hash", "") + " != " + expected_hash);
  const std::size_t k = header.at("k");
  RetrievalMap out;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line);
    RetrievalResult r;
    r.k = k;
    for (const auto& e : j.at("ranked")) r.ranked.push_back({e.at(0).get<std::string>(), e.at(1).get<double>()});
    out.emplace(j.at("utterance_id").get<std::string>(), std::move(r));
  }
  return out;
}

}  // namespace ocmr
