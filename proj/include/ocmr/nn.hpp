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

// Minimal transformer building blocks with explicit backward passes.
//
// Activations are row-major [tokens x features] matrices. Each layer is
// stateless apart from its parameters: forward() fills a caller-owned cache,
// backward() consumes it, accumulates parameter gradients and returns the
// gradient with respect to the layer input. Everything is templated on the
// scalar type so the same code runs in float for training and double for
// gradient checking.

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ocmr/common.hpp"

namespace ocmr::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

/// Encoder (shared), answer decoder, entailment decoder.
enum class ParamGroup { Encoder, Answer, Entailment };

inline std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::Encoder: return "encoder";
    case ParamGroup::Answer: return "answer_decoder";
    case ParamGroup::Entailment: return "entailment_decoder";
  }
  return "encoder";
}

template <typename S>
struct Param {
  std::string name;
  ParamGroup group = ParamGroup::Encoder;
  bool decay = true;
  Mat<S> value;
  Mat<S> grad;
  Mat<S> m;  // AdamW first moment
  Mat<S> v;  // AdamW second moment

  void init(std::string n, ParamGroup g, Eigen::Index rows, Eigen::Index cols, bool apply_decay = true) {
    name = std::move(n);
    group = g;
    decay = apply_decay;
    value = Mat<S>::Zero(rows, cols);
    grad = Mat<S>::Zero(rows, cols);
    m = Mat<S>::Zero(rows, cols);
    v = Mat<S>::Zero(rows, cols);
  }
  void normal(Rng& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Eigen::Index i = 0; i < value.size(); ++i) value.data()[i] = static_cast<S>(dist(rng));
  }
};

/// Forward-pass switches. Dropout is active only when `train` is set.
struct Context {
  bool train = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

template <typename S>
struct Dropout {
  Mat<S> mask;  // empty when inactive

  Mat<S> forward(const Mat<S>& x, const Context& ctx) {
    if (!ctx.train || ctx.dropout <= 0.0 || ctx.rng == nullptr) {
      mask.resize(0, 0);
      return x;
    }
    const S keep = static_cast<S>(1.0 - ctx.dropout);
    mask.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i)
      mask.data()[i] = uniform_real(*ctx.rng) < ctx.dropout ? S(0) : S(1) / keep;
    return x.cwiseProduct(mask);
  }
  Mat<S> backward(const Mat<S>& dy) const { return mask.size() ? Mat<S>(dy.cwiseProduct(mask)) : dy; }
};

template <typename S>
struct Linear {
  Param<S> W;  // [in x out]
  Param<S> b;  // [1 x out]

  void init(const std::string& name, ParamGroup g, Eigen::Index in, Eigen::Index out, Rng& rng,
            double scale = 1.0) {
    W.init(name + ".W", g, in, out);
    b.init(name + ".b", g, 1, out, false);
    W.normal(rng, scale / std::sqrt(static_cast<double>(in)));
  }

  Mat<S> forward(const Mat<S>& x) const {
    Mat<S> y = x * W.value;
    y.rowwise() += b.value.row(0);
    return y;
  }
  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy) {
    W.grad.noalias() += x.transpose() * dy;
    b.grad += dy.colwise().sum();
    return dy * W.value.transpose();
  }
  template <typename F>
  void visit(F&& f) {
    f(W);
    f(b);
  }
};

template <typename S>
struct LayerNorm {
  Param<S> gamma, beta;
  static constexpr double kEps = 1e-5;

  struct Cache {
    Mat<S> xhat;
    Eigen::Matrix<S, Eigen::Dynamic, 1> rstd;
  };

  void init(const std::string& name, ParamGroup g, Eigen::Index d) {
    gamma.init(name + ".gamma", g, 1, d, false);
    beta.init(name + ".beta", g, 1, d, false);
    gamma.value.setOnes();
  }

  Mat<S> forward(const Mat<S>& x, Cache& c) const {
    const auto d = static_cast<S>(x.cols());
    c.xhat.resize(x.rows(), x.cols());
    c.rstd.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const S mean = x.row(r).sum() / d;
      const S var = (x.row(r).array() - mean).square().sum() / d;
      const S rstd = S(1) / std::sqrt(var + static_cast<S>(kEps));
      c.rstd(r) = rstd;
      c.xhat.row(r) = (x.row(r).array() - mean) * rstd;
    }
    Mat<S> y = c.xhat.array().rowwise() * gamma.value.row(0).array();
    y.rowwise() += beta.value.row(0);
    return y;
  }
  Mat<S> backward(const Cache& c, const Mat<S>& dy) {
    gamma.grad += dy.cwiseProduct(c.xhat).colwise().sum();
    beta.grad += dy.colwise().sum();
    Mat<S> g = dy.array().rowwise() * gamma.value.row(0).array();
    const auto d = static_cast<S>(dy.cols());
    Mat<S> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      const S mg = g.row(r).sum() / d;
      const S mgx = g.row(r).dot(c.xhat.row(r)) / d;
      dx.row(r) = c.rstd(r) * (g.row(r).array() - mg - c.xhat.row(r).array() * mgx);
    }
    return dx;
  }
  template <typename F>
  void visit(F&& f) {
    f(gamma);
    f(beta);
  }
};

template <typename S>
struct Embedding {
  Param<S> table;  // [vocab x d]

  void init(const std::string& name, ParamGroup g, Eigen::Index rows, Eigen::Index d, Rng& rng, double stddev) {
    table.init(name, g, rows, d);
    table.normal(rng, stddev);
  }
  Mat<S> forward(const std::vector<int>& ids) const {
    Mat<S> out(static_cast<Eigen::Index>(ids.size()), table.value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= table.value.rows()) throw ContractError("embedding: id out of range");
      out.row(static_cast<Eigen::Index>(i)) = table.value.row(ids[i]);
    }
    return out;
  }
  /// Rows 0..n-1, used for learned positions.
  Mat<S> prefix(Eigen::Index n) const {
    if (n > table.value.rows()) throw ContractError("embedding: sequence longer than position table");
    return table.value.topRows(n);
  }
  void backward(const std::vector<int>& ids, const Mat<S>& dy) {
    for (std::size_t i = 0; i < ids.size(); ++i) table.grad.row(ids[i]) += dy.row(static_cast<Eigen::Index>(i));
  }
  void backward_prefix(const Mat<S>& dy) { table.grad.topRows(dy.rows()) += dy; }
  template <typename F>
  void visit(F&& f) {
    f(table);
  }
};

/// Row-wise softmax.
template <typename S>
Mat<S> softmax_rows(const Mat<S>& x) {
  Mat<S> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S mx = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

template <typename S>
Mat<S> log_softmax_rows(const Mat<S>& x) {
  Mat<S> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S mx = x.row(r).maxCoeff();
    const S lse = mx + std::log((x.row(r).array() - mx).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  return out;
}

template <typename S>
struct MultiHeadAttention {
  Linear<S> q, k, v, o;
  int heads = 1;

  struct Cache {
    Mat<S> xq, xkv, Q, K, V, O;
    std::vector<Mat<S>> P;
  };

  void init(const std::string& name, ParamGroup g, Eigen::Index d, int num_heads, Rng& rng, double out_scale) {
    if (num_heads < 1 || d % num_heads != 0) throw ConfigError(name + ": hidden size not divisible by heads");
    heads = num_heads;
    q.init(name + ".q", g, d, d, rng);
    k.init(name + ".k", g, d, d, rng);
    v.init(name + ".v", g, d, d, rng);
    o.init(name + ".o", g, d, d, rng, out_scale);
  }

  /// Attention of xq over precomputed keys/values.
  Mat<S> attend(const Mat<S>& xq, const Mat<S>& K, const Mat<S>& V, bool causal, Cache* c) const {
    const Eigen::Index d = K.cols(), dh = d / heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    Mat<S> Q = q.forward(xq);
    Mat<S> O(xq.rows(), d);
    if (c) c->P.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Mat<S> s = (Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose()) * scale;
      if (causal)
        for (Eigen::Index i = 0; i < s.rows(); ++i)
          for (Eigen::Index j = i + 1; j < s.cols(); ++j) s(i, j) = -std::numeric_limits<S>::infinity();
      Mat<S> p = softmax_rows(s);
      O.middleCols(h * dh, dh).noalias() = p * V.middleCols(h * dh, dh);
      if (c) c->P[static_cast<std::size_t>(h)] = std::move(p);
    }
    Mat<S> out = o.forward(O);
    if (c) {
      c->Q = std::move(Q);
      c->O = std::move(O);
    }
    return out;
  }

  Mat<S> forward(const Mat<S>& xq, const Mat<S>& xkv, bool causal, Cache* c) const {
    Mat<S> K = k.forward(xkv), V = v.forward(xkv);
    Mat<S> out = attend(xq, K, V, causal, c);
    if (c) {
      c->xq = xq;
      c->xkv = xkv;
      c->K = std::move(K);
      c->V = std::move(V);
    }
    return out;
  }

  /// Returns {d xq, d xkv}.
  std::pair<Mat<S>, Mat<S>> backward(const Cache& c, const Mat<S>& dout) {
    const Eigen::Index d = c.K.cols(), dh = d / heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    Mat<S> dO = o.backward(c.O, dout);
    Mat<S> dQ(c.Q.rows(), d), dK(c.K.rows(), d), dV(c.V.rows(), d);
    for (int h = 0; h < heads; ++h) {
      const auto& P = c.P[static_cast<std::size_t>(h)];
      const auto dOh = dO.middleCols(h * dh, dh);
      Mat<S> dP = dOh * c.V.middleCols(h * dh, dh).transpose();
      dV.middleCols(h * dh, dh).noalias() = P.transpose() * dOh;
      Eigen::Matrix<S, Eigen::Dynamic, 1> rs = P.cwiseProduct(dP).rowwise().sum();
      Mat<S> dS = P.cwiseProduct(dP.colwise() - rs) * scale;
      dQ.middleCols(h * dh, dh).noalias() = dS * c.K.middleCols(h * dh, dh);
      dK.middleCols(h * dh, dh).noalias() = dS.transpose() * c.Q.middleCols(h * dh, dh);
    }
    Mat<S> dxq = q.backward(c.xq, dQ);
    Mat<S> dxkv = k.backward(c.xkv, dK);
    dxkv += v.backward(c.xkv, dV);
    return {std::move(dxq), std::move(dxkv)};
  }

  template <typename F>
  void visit(F&& f) {
    q.visit(f);
    k.visit(f);
    v.visit(f);
    o.visit(f);
  }
};

template <typename S>
struct FeedForward {
  Linear<S> in, out;

  struct Cache {
    Mat<S> x, pre, act;
  };

  void init(const std::string& name, ParamGroup g, Eigen::Index d, Eigen::Index ff, Rng& rng, double out_scale) {
    in.init(name + ".in", g, d, ff, rng);
    out.init(name + ".out", g, ff, d, rng, out_scale);
  }
  Mat<S> forward(const Mat<S>& x, Cache* c) const {
    Mat<S> pre = in.forward(x);
    Mat<S> act = pre.cwiseMax(S(0));
    Mat<S> y = out.forward(act);
    if (c) {
      c->x = x;
      c->pre = std::move(pre);
      c->act = std::move(act);
    }
    return y;
  }
  Mat<S> backward(const Cache& c, const Mat<S>& dy) {
    Mat<S> dact = out.backward(c.act, dy);
    Mat<S> dpre = (c.pre.array() > S(0)).select(dact.array(), S(0)).matrix();
    return in.backward(c.x, dpre);
  }
  template <typename F>
  void visit(F&& f) {
    in.visit(f);
    out.visit(f);
  }
};

/// Pre-norm self-attention block: x + drop(attn(ln(x))), then x + drop(ffn(ln(x))).
template <typename S>
struct EncoderLayer {
  LayerNorm<S> ln1, ln2;
  MultiHeadAttention<S> attn;
  FeedForward<S> ffn;

  struct Cache {
    typename LayerNorm<S>::Cache ln1, ln2;
    typename MultiHeadAttention<S>::Cache attn;
    typename FeedForward<S>::Cache ffn;
    Dropout<S> drop1, drop2;
  };

  void init(const std::string& name, ParamGroup g, Eigen::Index d, int heads, Eigen::Index ff, Rng& rng,
            double out_scale) {
    ln1.init(name + ".ln1", g, d);
    ln2.init(name + ".ln2", g, d);
    attn.init(name + ".attn", g, d, heads, rng, out_scale);
    ffn.init(name + ".ffn", g, d, ff, rng, out_scale);
  }

  Mat<S> forward(const Mat<S>& x, const Context& ctx, Cache& c) const {
    Mat<S> a = ln1.forward(x, c.ln1);
    Mat<S> h = x + c.drop1.forward(attn.forward(a, a, false, &c.attn), ctx);
    Mat<S> b = ln2.forward(h, c.ln2);
    return h + c.drop2.forward(ffn.forward(b, &c.ffn), ctx);
  }
  Mat<S> backward(const Cache& c, const Mat<S>& dy) {
    Mat<S> dh = dy + ln2.backward(c.ln2, ffn.backward(c.ffn, c.drop2.backward(dy)));
    auto [dq, dkv] = attn.backward(c.attn, c.drop1.backward(dh));
    return dh + ln1.backward(c.ln1, dq + dkv);
  }
  template <typename F>
  void visit(F&& f) {
    ln1.visit(f);
    attn.visit(f);
    ln2.visit(f);
    ffn.visit(f);
  }
};

/// Pre-norm decoder block with causal self-attention and cross-attention.
template <typename S>
struct DecoderLayer {
  LayerNorm<S> ln1, ln2, ln3;
  MultiHeadAttention<S> self_attn, cross_attn;
  FeedForward<S> ffn;

  struct Cache {
    typename LayerNorm<S>::Cache ln1, ln2, ln3;
    typename MultiHeadAttention<S>::Cache self_attn, cross_attn;
    typename FeedForward<S>::Cache ffn;
    Dropout<S> drop1, drop2, drop3;
  };

  void init(const std::string& name, ParamGroup g, Eigen::Index d, int heads, Eigen::Index ff, Rng& rng,
            double out_scale) {
    ln1.init(name + ".ln1", g, d);
    ln2.init(name + ".ln2", g, d);
    ln3.init(name + ".ln3", g, d);
    self_attn.init(name + ".self_attn", g, d, heads, rng, out_scale);
    cross_attn.init(name + ".cross_attn", g, d, heads, rng, out_scale);
    ffn.init(name + ".ffn", g, d, ff, rng, out_scale);
  }

  Mat<S> forward(const Mat<S>& x, const Mat<S>& memory, const Context& ctx, Cache& c) const {
    Mat<S> a = ln1.forward(x, c.ln1);
    Mat<S> h1 = x + c.drop1.forward(self_attn.forward(a, a, true, &c.self_attn), ctx);
    Mat<S> b = ln2.forward(h1, c.ln2);
    Mat<S> h2 = h1 + c.drop2.forward(cross_attn.forward(b, memory, false, &c.cross_attn), ctx);
    Mat<S> e = ln3.forward(h2, c.ln3);
    return h2 + c.drop3.forward(ffn.forward(e, &c.ffn), ctx);
  }

  /// Inference step against projected memory keys/values; no caches kept.
  Mat<S> forward_cached(const Mat<S>& x, const Mat<S>& mem_k, const Mat<S>& mem_v) const {
    typename LayerNorm<S>::Cache l1, l2, l3;
    Mat<S> a = ln1.forward(x, l1);
    Mat<S> h1 = x + self_attn.forward(a, a, true, nullptr);
    Mat<S> b = ln2.forward(h1, l2);
    Mat<S> h2 = h1 + cross_attn.attend(b, mem_k, mem_v, false, nullptr);
    Mat<S> e = ln3.forward(h2, l3);
    return h2 + ffn.forward(e, nullptr);
  }

  /// Returns {d x, d memory}.
  std::pair<Mat<S>, Mat<S>> backward(const Cache& c, const Mat<S>& dy) {
    Mat<S> dh2 = dy + ln3.backward(c.ln3, ffn.backward(c.ffn, c.drop3.backward(dy)));
    auto [dbq, dmem] = cross_attn.backward(c.cross_attn, c.drop2.backward(dh2));
    Mat<S> dh1 = dh2 + ln2.backward(c.ln2, dbq);
    auto [daq, dakv] = self_attn.backward(c.self_attn, c.drop1.backward(dh1));
    Mat<S> dx = dh1 + ln1.backward(c.ln1, daq + dakv);
    return {std::move(dx), std::move(dmem)};
  }
  template <typename F>
  void visit(F&& f) {
    ln1.visit(f);
    self_attn.visit(f);
    ln2.visit(f);
    cross_attn.visit(f);
    ln3.visit(f);
    ffn.visit(f);
  }
};

/// Post-norm block (residual then layer norm), used by the inter-sentence reasoner.
template <typename S>
struct PostNormLayer {
  LayerNorm<S> ln1, ln2;
  MultiHeadAttention<S> attn;
  FeedForward<S> ffn;

  struct Cache {
    typename LayerNorm<S>::Cache ln1, ln2;
    typename MultiHeadAttention<S>::Cache attn;
    typename FeedForward<S>::Cache ffn;
    Dropout<S> drop1, drop2;
  };

  void init(const std::string& name, ParamGroup g, Eigen::Index d, int heads, Eigen::Index ff, Rng& rng) {
    ln1.init(name + ".ln1", g, d);
    ln2.init(name + ".ln2", g, d);
    attn.init(name + ".attn", g, d, heads, rng, 1.0);
    ffn.init(name + ".ffn", g, d, ff, rng, 1.0);
  }
  Mat<S> forward(const Mat<S>& x, const Context& ctx, Cache& c) const {
    Mat<S> h = ln1.forward(x + c.drop1.forward(attn.forward(x, x, false, &c.attn), ctx), c.ln1);
    return ln2.forward(h + c.drop2.forward(ffn.forward(h, &c.ffn), ctx), c.ln2);
  }
  Mat<S> backward(const Cache& c, const Mat<S>& dy) {
    Mat<S> ds2 = ln2.backward(c.ln2, dy);
    Mat<S> dh = ds2 + ffn.backward(c.ffn, c.drop2.backward(ds2));
    Mat<S> ds1 = ln1.backward(c.ln1, dh);
    auto [dq, dkv] = attn.backward(c.attn, c.drop1.backward(ds1));
    return ds1 + dq + dkv;
  }
  template <typename F>
  void visit(F&& f) {
    attn.visit(f);
    ln1.visit(f);
    ffn.visit(f);
    ln2.visit(f);
  }
};

}  // namespace ocmr::nn
