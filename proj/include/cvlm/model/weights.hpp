#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "cvlm/model/config.hpp"
#include "cvlm/numkit/random.hpp"
#include "cvlm/numkit/tensor.hpp"

namespace cvlm {

using num::Matrix;

/// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)).
/// Attention projections carry no bias; the MLP does.
template <class X>
struct BlockWeights {
  X wq, wk, wv, wo;
  X w1, b1, w2, b2;
};

/// Visual merger + projector: k consecutive tokens are concatenated, then
/// GELU(x W1 + b1) W2 + b2.
template <class X>
struct ProjectorWeights {
  X w1, b1, w2, b2;
};

/// Frozen dense model parameters (theta).
template <class X>
struct ModelWeights {
  X visual_pos;                         // T_e x D_v
  std::vector<BlockWeights<X>> encoder;  // N_v
  ProjectorWeights<X> projector;
  X token_embedding;                    // vocab x D_l
  X position_embedding;                 // max_positions x D_l
  std::vector<BlockWeights<X>> lm;       // N_l
  X head;                               // D_l x vocab
};

/// Trainable compact-pathway parameters (phi).
template <class X>
struct CivicParams {
  X anchors;               // M_e x D_v
  std::vector<X> kv_assign;  // per visual layer, D_v x S
  ProjectorWeights<X> projector;
};

// Field visitation. `f(name, fields...)` is called once per tensor with the
// matching field of every argument, in a fixed order. Arguments may be const.

template <class F, class... B>
void zip_block(const std::string& p, F&& f, B&&... b) {
  f(p + "wq", b.wq...);
  f(p + "wk", b.wk...);
  f(p + "wv", b.wv...);
  f(p + "wo", b.wo...);
  f(p + "w1", b.w1...);
  f(p + "b1", b.b1...);
  f(p + "w2", b.w2...);
  f(p + "b2", b.b2...);
}

template <class F, class... P>
void zip_projector(const std::string& p, F&& f, P&&... b) {
  f(p + "w1", b.w1...);
  f(p + "b1", b.b1...);
  f(p + "w2", b.w2...);
  f(p + "b2", b.b2...);
}

template <class F, class First, class... Rest>
void zip_model(const std::string& p, F&& f, First&& first, Rest&&... rest) {
  f(p + "visual_pos", first.visual_pos, rest.visual_pos...);
  for (std::size_t l = 0; l < first.encoder.size(); ++l)
    zip_block(p + "encoder." + std::to_string(l) + ".", f, first.encoder[l], rest.encoder[l]...);
  zip_projector(p + "projector.", f, first.projector, rest.projector...);
  f(p + "token_embedding", first.token_embedding, rest.token_embedding...);
  f(p + "position_embedding", first.position_embedding, rest.position_embedding...);
  for (std::size_t l = 0; l < first.lm.size(); ++l)
    zip_block(p + "lm." + std::to_string(l) + ".", f, first.lm[l], rest.lm[l]...);
  f(p + "head", first.head, rest.head...);
}

template <class F, class First, class... Rest>
void zip_params(const std::string& p, F&& f, First&& first, Rest&&... rest) {
  f(p + "anchors", first.anchors, rest.anchors...);
  for (std::size_t l = 0; l < first.kv_assign.size(); ++l)
    f(p + "kv_assign." + std::to_string(l), first.kv_assign[l], rest.kv_assign[l]...);
  zip_projector(p + "projector.", f, first.projector, rest.projector...);
}

inline constexpr const char* kModelPrefix = "model.";
inline constexpr const char* kCivicPrefix = "civic.";

/// Converts every tensor of a weight set through `fn(name, const X&) -> Y`.
template <class Y, class X, class Fn>
ModelWeights<Y> map_weights(const ModelWeights<X>& src, Fn&& fn) {
  ModelWeights<Y> dst;
  dst.encoder.resize(src.encoder.size());
  dst.lm.resize(src.lm.size());
  zip_model(kModelPrefix, [&](const std::string& name, const X& a, Y& b) { b = fn(name, a); }, src, dst);
  return dst;
}

template <class Y, class X, class Fn>
CivicParams<Y> map_params(const CivicParams<X>& src, Fn&& fn) {
  CivicParams<Y> dst;
  dst.kv_assign.resize(src.kv_assign.size());
  zip_params(kCivicPrefix, [&](const std::string& name, const X& a, Y& b) { b = fn(name, a); }, src, dst);
  return dst;
}

template <class T>
ModelWeights<num::Tensor<T>> convert_weights(const ModelWeights<Matrix>& w) {
  return map_weights<num::Tensor<T>>(w, [](const std::string&, const Matrix& m) { return num::cast<T>(m); });
}

template <class T>
CivicParams<num::Tensor<T>> convert_params(const CivicParams<Matrix>& p) {
  return map_params<num::Tensor<T>>(p, [](const std::string&, const Matrix& m) { return num::cast<T>(m); });
}

namespace detail {

inline BlockWeights<Matrix> init_block(num::Rng& rng, std::size_t dim) {
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  const double s4 = 1.0 / std::sqrt(static_cast<double>(4 * dim));
  BlockWeights<Matrix> b;
  b.wq = rng.gaussian(dim, dim, s);
  b.wk = rng.gaussian(dim, dim, s);
  b.wv = rng.gaussian(dim, dim, s);
  b.wo = rng.gaussian(dim, dim, s);
  b.w1 = rng.gaussian(dim, 4 * dim, s);
  b.b1 = Matrix(1, 4 * dim);
  b.w2 = rng.gaussian(4 * dim, dim, s4);
  b.b2 = Matrix(1, dim);
  return b;
}

}  // namespace detail

/// Seeded random teacher. Weights are never trained.
inline ModelWeights<Matrix> init_model_weights(const PipelineConfig& cfg) {
  num::Rng rng(cfg.seed);
  ModelWeights<Matrix> w;
  const std::size_t dv = cfg.visual_dim, dl = cfg.lm_dim, k = cfg.merge_factor;
  w.visual_pos = rng.gaussian(cfg.dense_tokens, dv, 0.5);
  for (std::size_t l = 0; l < cfg.visual_layers; ++l) w.encoder.push_back(detail::init_block(rng, dv));
  w.projector.w1 = rng.gaussian(k * dv, dl, 1.0 / std::sqrt(static_cast<double>(k * dv)));
  w.projector.b1 = Matrix(1, dl);
  w.projector.w2 = rng.gaussian(dl, dl, 1.0 / std::sqrt(static_cast<double>(dl)));
  w.projector.b2 = Matrix(1, dl);
  w.token_embedding = rng.gaussian(cfg.vocab, dl, 1.0);
  w.position_embedding = rng.gaussian(cfg.max_positions, dl, 0.5);
  for (std::size_t l = 0; l < cfg.lm_layers; ++l) w.lm.push_back(detail::init_block(rng, dl));
  w.head = rng.gaussian(dl, cfg.vocab, 1.0 / std::sqrt(static_cast<double>(dl)));
  return w;
}

/// Anchors are an even-stride row subsample of a seeded Gaussian (scale
/// 1/sqrt(D_v)); the compact projector starts as a copy of the dense one.
inline CivicParams<Matrix> init_civic_params(const PipelineConfig& cfg, const ModelWeights<Matrix>& theta) {
  num::Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  CivicParams<Matrix> p;
  const std::size_t dv = cfg.visual_dim;
  Matrix pool = rng.gaussian(cfg.dense_tokens, dv, 1.0 / std::sqrt(static_cast<double>(dv)));
  p.anchors = Matrix(cfg.compact_tokens, dv);
  for (std::size_t j = 0; j < cfg.compact_tokens; ++j) {
    const std::size_t src = j * cfg.dense_tokens / cfg.compact_tokens;
    for (std::size_t c = 0; c < dv; ++c) p.anchors(j, c) = pool(src, c);
  }
  for (std::size_t l = 0; l < cfg.visual_layers; ++l)
    p.kv_assign.push_back(rng.gaussian(dv, cfg.kv_anchors, 1.0 / std::sqrt(static_cast<double>(dv))));
  p.projector = theta.projector;
  return p;
}

/// FNV-1a over the bit patterns of every tensor, in visitation order.
template <class W>
std::uint64_t checksum(const W& weights) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const std::string&, const Matrix& m) {
    for (double v : m.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffU;
        h *= 1099511628211ULL;
      }
    }
  };
  if constexpr (requires { weights.anchors; })
    zip_params(kCivicPrefix, mix, weights);
  else
    zip_model(kModelPrefix, mix, weights);
  return h;
}

}  // namespace cvlm
