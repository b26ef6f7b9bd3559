#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "cvlm/model/weights.hpp"
#include "cvlm/numkit/instrument.hpp"
#include "cvlm/numkit/tensor.hpp"

// Building blocks shared by every pipeline. Each function is a template over
// the tensor type X, which is num::Tensor<T> for inference and num::Var when
// the forward pass is taped for distillation. Calls are unqualified so the
// matching overload set is found by argument lookup.

namespace cvlm {

/// MacCounter region labels for one transformer stage.
struct StageLabels {
  const char* linear;
  const char* scores;
  const char* mix;
  const char* mlp;
};

inline constexpr StageLabels kVisualLabels{"visual_linear", "visual_attention", "visual_attention_mix",
                                           "visual_mlp"};
inline constexpr StageLabels kCompactLabels{"compact_visual_linear", "compact_visual_attention",
                                            "compact_visual_attention_mix", "compact_visual_mlp"};
inline constexpr StageLabels kPrefillLabels{"llm_prefill_linear", "llm_prefill_attention",
                                            "llm_prefill_attention_mix", "llm_prefill_mlp"};
inline constexpr StageLabels kDecodeLabels{"llm_decode_linear", "llm_decode_attention",
                                           "llm_decode_attention_mix", "llm_decode_mlp"};

inline constexpr const char* kKvAssignRegion = "compact_kv_assign";
inline constexpr const char* kKvPoolRegion = "compact_kv_pool";
inline constexpr const char* kProjectorRegion = "projector";
inline constexpr const char* kHeadRegion = "llm_head";

/// softmax(Q Kᵀ/√d) V per head, heads concatenated along columns. Keys and
/// values may have a different row count from the queries.
template <class X>
X multi_head_attend(const X& q, const X& k, const X& v, std::size_t heads, bool causal,
                    const StageLabels& labels) {
  const std::size_t d = q.cols() / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<X> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    X qh = heads == 1 ? q : slice_cols(q, h * d, d);
    X kh = heads == 1 ? k : slice_cols(k, h * d, d);
    X vh = heads == 1 ? v : slice_cols(v, h * d, d);
    X scores = [&] {
      num::Region r(labels.scores);
      return scale(matmul_nt(qh, kh), inv_sqrt_d);
    }();
    X probs = causal ? causal_softmax_rows(scores) : softmax_rows(scores);
    num::Region r(labels.mix);
    outs.push_back(matmul(probs, vh));
  }
  return heads == 1 ? outs.front() : concat_cols(outs);
}

template <class X>
X mlp(const X& h, const BlockWeights<X>& w, const StageLabels& labels) {
  num::Region r(labels.mlp);
  return add_row(matmul(gelu(add_row(matmul(h, w.w1), w.b1)), w.w2), w.b2);
}

/// Pre-norm residual block. `attend(normed)` returns the concatenated head
/// outputs before the output projection.
template <class X, class AttendFn>
X prenorm_block(const X& x, const BlockWeights<X>& w, const StageLabels& labels, AttendFn&& attend) {
  X a = attend(layernorm_rows(x));
  X o = [&] {
    num::Region r(labels.linear);
    return matmul(a, w.wo);
  }();
  X x1 = add(x, o);
  return add(x1, mlp(layernorm_rows(x1), w, labels));
}

template <class X>
struct Projected {
  X q, k, v;
};

template <class X>
Projected<X> project_qkv(const X& h, const BlockWeights<X>& w, const StageLabels& labels) {
  num::Region r(labels.linear);
  return {matmul(h, w.wq), matmul(h, w.wk), matmul(h, w.wv)};
}

/// Full (non-causal) self-attention block, as used by the dense visual encoder.
template <class X>
X self_attention_block(const X& x, const BlockWeights<X>& w, std::size_t heads,
                       const StageLabels& labels) {
  return prenorm_block(x, w, labels, [&](const X& h) {
    auto p = project_qkv(h, w, labels);
    return multi_head_attend(p.q, p.k, p.v, heads, false, labels);
  });
}

/// Keys and values are pooled into S slots with the column-normalized
/// assignment R̄ = colnorm(R): K_c = R̄ᵀK, V_c = R̄ᵀV. Queries keep the
/// original projection, so scores are M×S rather than M×M.
template <class X>
X kv_compressed_attend(const Projected<X>& p, const X& assignment, std::size_t heads,
                       const StageLabels& labels) {
  X r_bar = column_normalize(assignment);
  X kc, vc;
  {
    num::Region r(kKvPoolRegion);
    kc = matmul_tn(r_bar, p.k);
    vc = matmul_tn(r_bar, p.v);
  }
  return multi_head_attend(p.q, kc, vc, heads, false, labels);
}

/// Content-based KV assignment R = softmax_rows(H B).
template <class X>
X kv_assignment(const X& h, const X& b) {
  num::Region r(kKvAssignRegion);
  return softmax_rows(matmul(h, b));
}

/// Compact visual block. If `fixed_assignment` is non-null it replaces
/// softmax(H B); tests use this to pin R.
template <class X>
X compact_block(const X& x, const BlockWeights<X>& w, const X& assign_b, const X* fixed_assignment,
                std::size_t heads) {
  return prenorm_block(x, w, kCompactLabels, [&](const X& h) {
    auto p = project_qkv(h, w, kCompactLabels);
    X r = fixed_assignment != nullptr ? *fixed_assignment : kv_assignment(h, assign_b);
    return kv_compressed_attend(p, r, heads, kCompactLabels);
  });
}

/// Merger + projector: groups of `merge_factor` consecutive rows become one
/// row (a row-major reshape), then GELU(x W1 + b1) W2 + b2.
template <class X>
X project_tokens(const X& h, const ProjectorWeights<X>& p, std::size_t merge_factor) {
  if (merge_factor == 0 || h.rows() % merge_factor != 0) {
    throw num::DimensionError("projector: " + std::to_string(h.rows()) +
                              " tokens not divisible by merge factor " + std::to_string(merge_factor));
  }
  num::Region r(kProjectorRegion);
  X grouped = reshape(h, h.rows() / merge_factor, h.cols() * merge_factor);
  return add_row(matmul(gelu(add_row(matmul(grouped, p.w1), p.b1)), p.w2), p.b2);
}

}  // namespace cvlm
