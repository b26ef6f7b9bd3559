#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cvlm/model/config.hpp"
#include "cvlm/model/kv_cache.hpp"
#include "cvlm/model/layers.hpp"
#include "cvlm/model/weights.hpp"

namespace cvlm {

enum class Segment : std::uint8_t { text, visual };

using TokenId = std::size_t;

/// Merged LM input: embeddings plus a segment tag and position id per row.
template <class X>
struct SequenceT {
  X embeddings;
  std::vector<Segment> segments;
  std::vector<std::size_t> positions;

  std::size_t len() const { return segments.size(); }
  std::size_t count(Segment s) const {
    return static_cast<std::size_t>(std::count(segments.begin(), segments.end(), s));
  }
};

template <class T>
using MultimodalSequence = SequenceT<num::Tensor<T>>;

/// Segment tags and position ids of [text_prefix | visual | text_suffix].
struct SequenceLayout {
  std::vector<Segment> segments;
  std::vector<std::size_t> positions;
};

/// Dense layout: positions 0..L+T_p-1 in order.
inline SequenceLayout dense_layout(std::size_t text_len, std::size_t text_prefix, std::size_t visual_len) {
  SequenceLayout out;
  const std::size_t n = text_len + visual_len;
  for (std::size_t i = 0; i < n; ++i) {
    const bool vis = i >= text_prefix && i < text_prefix + visual_len;
    out.segments.push_back(vis ? Segment::visual : Segment::text);
    out.positions.push_back(i);
  }
  return out;
}

/// Position ids for `count` compact visual tokens inside a dense visual span
/// of `span_len` positions starting at `span_start`: span_start + ⌊i·span/count⌋.
inline std::vector<std::size_t> strided_positions(std::size_t span_start, std::size_t span_len,
                                                  std::size_t count) {
  std::vector<std::size_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = span_start + i * span_len / count;
  return out;
}

/// Compact layout: text keeps its dense positions; the visual tokens inherit
/// evenly strided positions from the dense span they replace.
inline SequenceLayout compact_layout(std::size_t text_len, std::size_t text_prefix,
                                     std::size_t dense_span, std::size_t compact_len) {
  SequenceLayout out;
  for (std::size_t i = 0; i < text_prefix; ++i) {
    out.segments.push_back(Segment::text);
    out.positions.push_back(i);
  }
  for (std::size_t p : strided_positions(text_prefix, dense_span, compact_len)) {
    out.segments.push_back(Segment::visual);
    out.positions.push_back(p);
  }
  for (std::size_t i = text_prefix; i < text_len; ++i) {
    out.segments.push_back(Segment::text);
    out.positions.push_back(i + dense_span);
  }
  return out;
}

/// Inserts `visual` rows after the first `text_prefix` rows of `text`.
template <class X>
SequenceT<X> assemble(const X& text, const X& visual, std::size_t text_prefix, SequenceLayout layout) {
  if (text.cols() != visual.cols() && visual.rows() != 0) {
    throw num::DimensionError("merge: text width " + std::to_string(text.cols()) + " vs visual width " +
                              std::to_string(visual.cols()));
  }
  std::vector<X> parts;
  parts.push_back(slice_rows(text, 0, text_prefix));
  if (visual.rows() != 0) parts.push_back(visual);
  parts.push_back(slice_rows(text, text_prefix, text.rows() - text_prefix));
  return {concat_rows(parts), std::move(layout.segments), std::move(layout.positions)};
}

template <class X>
X embed_tokens(std::span<const TokenId> ids, const X& table) {
  return gather_rows(table, ids);
}

/// Runs the causal LM stack over `embeddings` at the given position ids and
/// returns the final-normed hidden states. `on_kv(layer, k, v)` receives each
/// layer's keys and values.
template <class X, class KvSink>
X lm_hidden(const X& embeddings, std::span<const std::size_t> positions, const ModelWeights<X>& w,
            std::size_t heads, const StageLabels& labels, KvSink&& on_kv) {
  X x = add(embeddings, gather_rows(w.position_embedding, positions));
  for (std::size_t l = 0; l < w.lm.size(); ++l) {
    x = prenorm_block(x, w.lm[l], labels, [&](const X& h) {
      auto p = project_qkv(h, w.lm[l], labels);
      on_kv(l, p.k, p.v);
      return multi_head_attend(p.q, p.k, p.v, heads, true, labels);
    });
  }
  return layernorm_rows(x);
}

template <class X>
X lm_logits(const X& hidden, const ModelWeights<X>& w) {
  num::Region r(kHeadRegion);
  return matmul(hidden, w.head);
}

enum class LogitsMode { all, last };

template <class T>
struct PrefillResult {
  num::Tensor<T> logits;  // len × vocab, or 1 × vocab in LogitsMode::last
  KVCache<T> cache;
};

/// Causal prefill over the whole sequence; fills the cache to len.
template <class T>
PrefillResult<T> prefill(const MultimodalSequence<T>& seq, const ModelWeights<num::Tensor<T>>& w,
                         const PipelineConfig& cfg, LogitsMode mode = LogitsMode::all,
                         std::size_t reserve_decode = 0) {
  KVCache<T> cache(w.lm.size(), cfg.lm_dim, seq.len() + reserve_decode);
  auto hidden = lm_hidden(seq.embeddings, seq.positions, w, cfg.lm_heads, kPrefillLabels,
                          [&](std::size_t l, const num::Tensor<T>& k, const num::Tensor<T>& v) {
                            cache.append(l, k, v);
                          });
  if (mode == LogitsMode::last && hidden.rows() > 0) hidden = num::slice_rows(hidden, hidden.rows() - 1, 1);
  return {lm_logits(hidden, w), std::move(cache)};
}

/// One autoregressive step: appends the token to the cache, returns 1 × vocab logits.
template <class T>
num::Tensor<T> decode_step(TokenId token, std::size_t position, KVCache<T>& cache,
                           const ModelWeights<num::Tensor<T>>& w, const PipelineConfig& cfg) {
  if (position >= w.position_embedding.rows()) {
    throw ConfigError("decode: position " + std::to_string(position) + " exceeds max_positions");
  }
  const std::size_t pos[1] = {position};
  const TokenId ids[1] = {token};
  num::Tensor<T> x = num::add(embed_tokens<num::Tensor<T>>(ids, w.token_embedding),
                              num::gather_rows(w.position_embedding, std::span<const std::size_t>(pos)));
  for (std::size_t l = 0; l < w.lm.size(); ++l) {
    x = prenorm_block(x, w.lm[l], kDecodeLabels, [&](const num::Tensor<T>& h) {
      auto p = project_qkv(h, w.lm[l], kDecodeLabels);
      cache.append(l, p.k, p.v);
      return multi_head_attend(p.q, cache.keys(l), cache.values(l), cfg.lm_heads, false, kDecodeLabels);
    });
  }
  return lm_logits(num::layernorm_rows(x), w);
}

/// Lowest index among maximal entries.
template <class T>
TokenId argmax_row(std::span<const T> row) {
  return static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
}

/// Greedy decoding. Each step emits argmax of the current logits and feeds it
/// back at the next position; the cache grows by one row per step.
template <class T>
std::vector<TokenId> decode_greedy(KVCache<T>& cache, const num::Tensor<T>& last_logits, std::size_t steps,
                                   std::size_t next_position, const ModelWeights<num::Tensor<T>>& w,
                                   const PipelineConfig& cfg) {
  std::vector<TokenId> out;
  out.reserve(steps);
  num::Tensor<T> logits = last_logits;
  for (std::size_t s = 0; s < steps; ++s) {
    const TokenId tok = argmax_row<T>(logits.row(logits.rows() - 1));
    out.push_back(tok);
    logits = decode_step(tok, next_position + s, cache, w, cfg);
  }
  return out;
}

}  // namespace cvlm
