// Copyright 2026 The LayerLab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "layerlab/error.hpp"
#include "layerlab/rng.hpp"
#include "layerlab/toymodel.hpp"
#include "toy_ops.hpp"

namespace layerlab {
namespace {

using namespace toy_ops;

template <typename T>
struct LayerCache {
  RowMatrix<T> xhat1, h1, qkv, probs, ctx, x_mid, xhat2, h2, u, tanh_u, g;
  Vec<T> rstd1, rstd2;
};

template <typename T>
void fill_normal(RowMatrix<T>& m, Rng& rng, double sd) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(sd * normal01(rng));
}

}  // namespace

void ToyConfig::validate() const {
  if (n_layers < 1) throw ConfigError("toy n_layers must be >= 1");
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
    throw ConfigError("toy d_model must be a positive multiple of n_heads");
  if (ff_dim < 1) throw ConfigError("toy ff_dim must be >= 1");
  if (context_len < 2) throw ConfigError("toy context_len must be >= 2");
}

template <typename T>
ToyParams<T> ToyParams<T>::zeros(const ToyConfig& cfg, int vocab) {
  cfg.validate();
  const int d = cfg.d_model;
  ToyParams p;
  p.tok_emb = Mat::Zero(vocab, d);
  p.pos_emb = Mat::Zero(cfg.context_len, d);
  p.blocks.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& b : p.blocks) {
    b.ln1_g = Vec::Zero(d);
    b.ln1_b = Vec::Zero(d);
    b.w_qkv = Mat::Zero(d, 3 * d);
    b.b_qkv = Vec::Zero(3 * d);
    b.w_o = Mat::Zero(d, d);
    b.b_o = Vec::Zero(d);
    b.ln2_g = Vec::Zero(d);
    b.ln2_b = Vec::Zero(d);
    b.w_ff1 = Mat::Zero(d, cfg.ff_dim);
    b.b_ff1 = Vec::Zero(cfg.ff_dim);
    b.w_ff2 = Mat::Zero(cfg.ff_dim, d);
    b.b_ff2 = Vec::Zero(d);
  }
  p.lnf_g = Vec::Zero(d);
  p.lnf_b = Vec::Zero(d);
  p.w_out = Mat::Zero(d, vocab);
  p.b_out = Vec::Zero(vocab);
  return p;
}

template <typename T>
ToyParams<T> ToyParams<T>::init(const ToyConfig& cfg, int vocab, std::uint64_t seed) {
  ToyParams p = zeros(cfg, vocab);
  Rng rng(seed);
  const double sd = 0.02;
  const double resid_sd = sd / std::sqrt(2.0 * cfg.n_layers);
  fill_normal(p.tok_emb, rng, sd);
  fill_normal(p.pos_emb, rng, sd);
  for (auto& b : p.blocks) {
    b.ln1_g.setOnes();
    b.ln2_g.setOnes();
    fill_normal(b.w_qkv, rng, sd);
    fill_normal(b.w_o, rng, resid_sd);
    fill_normal(b.w_ff1, rng, sd);
    fill_normal(b.w_ff2, rng, resid_sd);
  }
  p.lnf_g.setOnes();
  fill_normal(p.w_out, rng, sd);
  return p;
}

template <typename T>
template <typename U>
ToyParams<U> ToyParams<T>::cast() const {
  ToyParams<U> out;
  out.tok_emb = tok_emb.template cast<U>();
  out.pos_emb = pos_emb.template cast<U>();
  out.blocks.resize(blocks.size());
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& a = blocks[l];
    auto& b = out.blocks[l];
    b.ln1_g = a.ln1_g.template cast<U>();
    b.ln1_b = a.ln1_b.template cast<U>();
    b.w_qkv = a.w_qkv.template cast<U>();
    b.b_qkv = a.b_qkv.template cast<U>();
    b.w_o = a.w_o.template cast<U>();
    b.b_o = a.b_o.template cast<U>();
    b.ln2_g = a.ln2_g.template cast<U>();
    b.ln2_b = a.ln2_b.template cast<U>();
    b.w_ff1 = a.w_ff1.template cast<U>();
    b.b_ff1 = a.b_ff1.template cast<U>();
    b.w_ff2 = a.w_ff2.template cast<U>();
    b.b_ff2 = a.b_ff2.template cast<U>();
  }
  out.lnf_g = lnf_g.template cast<U>();
  out.lnf_b = lnf_b.template cast<U>();
  out.w_out = w_out.template cast<U>();
  out.b_out = b_out.template cast<U>();
  return out;
}

template <typename T>
ForwardResult<T> forward_backward(const ToyConfig& cfg, const ToyParams<T>& params,
                                  const TokenBatch& batch, ToyParams<T>* grads,
                                  bool keep_residuals) {
  const int B = batch.batch;
  const int L = batch.length;
  const int d = cfg.d_model;
  const int H = cfg.n_heads;
  const int hd = cfg.head_dim();
  const int vocab = static_cast<int>(params.tok_emb.rows());
  const Eigen::Index N = static_cast<Eigen::Index>(B) * L;
  if (L > cfg.context_len) throw ConfigError("batch length exceeds the model context");
  if (batch.tokens.size() != static_cast<std::size_t>(N) ||
      batch.targets.size() != static_cast<std::size_t>(N))
    throw ShapeError("token batch size does not match batch x length");
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  RowMatrix<T> x(N, d);
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < L; ++t) {
      const Eigen::Index row = static_cast<Eigen::Index>(b) * L + t;
      const int tok = batch.tokens[static_cast<std::size_t>(row)];
      if (tok < 0 || tok >= vocab) throw ShapeError("token id out of range");
      x.row(row) = params.tok_emb.row(tok) + params.pos_emb.row(t);
    }
  }

  ForwardResult<T> result;
  std::vector<LayerCache<T>> caches(params.blocks.size());
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    const auto& blk = params.blocks[l];
    auto& c = caches[l];
    layernorm_forward(x, blk.ln1_g, blk.ln1_b, c.xhat1, c.rstd1, c.h1);
    c.qkv = c.h1 * blk.w_qkv;
    c.qkv.rowwise() += blk.b_qkv.transpose();
    c.probs.resize(static_cast<Eigen::Index>(B) * H * L, L);
    c.ctx.resize(N, d);
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        const Eigen::Index r0 = static_cast<Eigen::Index>(b) * L;
        const auto q = c.qkv.block(r0, h * hd, L, hd);
        const auto k = c.qkv.block(r0, d + h * hd, L, hd);
        const auto v = c.qkv.block(r0, 2 * d + h * hd, L, hd);
        RowMatrix<T> s = (q * k.transpose()) * scale;
        auto p = c.probs.block((static_cast<Eigen::Index>(b) * H + h) * L, 0, L, L);
        for (int i = 0; i < L; ++i) {
          const T mx = s.row(i).head(i + 1).maxCoeff();
          p.row(i).head(i + 1) = (s.row(i).head(i + 1).array() - mx).exp();
          p.row(i).head(i + 1) /= p.row(i).head(i + 1).sum();
          p.row(i).tail(L - i - 1).setZero();
        }
        c.ctx.block(r0, h * hd, L, hd).noalias() = p * v;
      }
    }
    RowMatrix<T> attn_out = c.ctx * blk.w_o;
    attn_out.rowwise() += blk.b_o.transpose();
    c.x_mid = x + attn_out;
    layernorm_forward(c.x_mid, blk.ln2_g, blk.ln2_b, c.xhat2, c.rstd2, c.h2);
    c.u = c.h2 * blk.w_ff1;
    c.u.rowwise() += blk.b_ff1.transpose();
    gelu_forward(c.u, c.tanh_u, c.g);
    RowMatrix<T> ff_out = c.g * blk.w_ff2;
    ff_out.rowwise() += blk.b_ff2.transpose();
    x = c.x_mid + ff_out;
    if (keep_residuals) result.residuals.push_back(x);
  }

  RowMatrix<T> xhatf, hf;
  Vec<T> rstdf;
  layernorm_forward(x, params.lnf_g, params.lnf_b, xhatf, rstdf, hf);
  result.logits = hf * params.w_out;
  result.logits.rowwise() += params.b_out.transpose();

  // Softmax cross-entropy over targeted positions. dlogits doubles as the
  // probability buffer.
  RowMatrix<T> dlogits = RowMatrix<T>::Zero(N, vocab);
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < N; ++i) count += batch.targets[static_cast<std::size_t>(i)] >= 0;
  result.n_targets = count;
  T loss = 0;
  for (Eigen::Index i = 0; i < N; ++i) {
    const int y = batch.targets[static_cast<std::size_t>(i)];
    if (y < 0) continue;
    const T mx = result.logits.row(i).maxCoeff();
    dlogits.row(i) = (result.logits.row(i).array() - mx).exp();
    const T z = dlogits.row(i).sum();
    dlogits.row(i) /= z;
    loss -= std::log(dlogits(i, y));
    dlogits(i, y) -= T(1);
  }
  result.loss = count > 0 ? loss / static_cast<T>(count) : T(0);
  if (grads == nullptr || count == 0) return result;

  dlogits /= static_cast<T>(count);
  grads->w_out.noalias() += hf.transpose() * dlogits;
  grads->b_out += dlogits.colwise().sum().transpose();
  RowMatrix<T> dh = dlogits * params.w_out.transpose();
  RowMatrix<T> dx = layernorm_backward(dh, xhatf, rstdf, params.lnf_g, grads->lnf_g, grads->lnf_b);

  for (std::size_t li = params.blocks.size(); li-- > 0;) {
    const auto& blk = params.blocks[li];
    auto& gb = grads->blocks[li];
    auto& c = caches[li];

    // Feed-forward sublayer; dx is the gradient w.r.t. the block output.
    gb.b_ff2 += dx.colwise().sum().transpose();
    gb.w_ff2.noalias() += c.g.transpose() * dx;
    RowMatrix<T> du = dx * blk.w_ff2.transpose();
    gelu_backward(c.u, c.tanh_u, du);
    gb.w_ff1.noalias() += c.h2.transpose() * du;
    gb.b_ff1 += du.colwise().sum().transpose();
    RowMatrix<T> dh2 = du * blk.w_ff1.transpose();
    RowMatrix<T> dx_mid = dx + layernorm_backward(dh2, c.xhat2, c.rstd2, blk.ln2_g, gb.ln2_g, gb.ln2_b);

    // Attention sublayer.
    gb.b_o += dx_mid.colwise().sum().transpose();
    gb.w_o.noalias() += c.ctx.transpose() * dx_mid;
    RowMatrix<T> dctx = dx_mid * blk.w_o.transpose();
    RowMatrix<T> dqkv(N, 3 * d);
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        const Eigen::Index r0 = static_cast<Eigen::Index>(b) * L;
        const auto q = c.qkv.block(r0, h * hd, L, hd);
        const auto k = c.qkv.block(r0, d + h * hd, L, hd);
        const auto v = c.qkv.block(r0, 2 * d + h * hd, L, hd);
        const auto p = c.probs.block((static_cast<Eigen::Index>(b) * H + h) * L, 0, L, L);
        const auto dc = dctx.block(r0, h * hd, L, hd);
        RowMatrix<T> dp = dc * v.transpose();
        dqkv.block(r0, 2 * d + h * hd, L, hd).noalias() = p.transpose() * dc;
        const Vec<T> dot = (dp.array() * p.array()).rowwise().sum();
        RowMatrix<T> ds = p.array() * (dp.array().colwise() - dot.array());
        ds *= scale;
        dqkv.block(r0, h * hd, L, hd).noalias() = ds * k;
        dqkv.block(r0, d + h * hd, L, hd).noalias() = ds.transpose() * q;
      }
    }
    gb.w_qkv.noalias() += c.h1.transpose() * dqkv;
    gb.b_qkv += dqkv.colwise().sum().transpose();
    RowMatrix<T> dh1 = dqkv * blk.w_qkv.transpose();
    dx = dx_mid + layernorm_backward(dh1, c.xhat1, c.rstd1, blk.ln1_g, gb.ln1_g, gb.ln1_b);
  }

  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < L; ++t) {
      const Eigen::Index row = static_cast<Eigen::Index>(b) * L + t;
      grads->tok_emb.row(batch.tokens[static_cast<std::size_t>(row)]) += dx.row(row);
      grads->pos_emb.row(t) += dx.row(row);
    }
  }
  return result;
}

template struct ToyParams<float>;
template struct ToyParams<double>;
template ToyParams<double> ToyParams<float>::cast<double>() const;
template ToyParams<float> ToyParams<double>::cast<float>() const;
template ToyParams<float> ToyParams<float>::cast<float>() const;
template ForwardResult<float> forward_backward<float>(const ToyConfig&, const ToyParams<float>&,
                                                      const TokenBatch&, ToyParams<float>*, bool);
template ForwardResult<double> forward_backward<double>(const ToyConfig&,
                                                        const ToyParams<double>&,
                                                        const TokenBatch&, ToyParams<double>*,
                                                        bool);

}  // namespace layerlab
