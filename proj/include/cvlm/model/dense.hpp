#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cvlm/model/config.hpp"
#include "cvlm/model/language_model.hpp"
#include "cvlm/model/layers.hpp"
#include "cvlm/model/run_report.hpp"
#include "cvlm/model/weights.hpp"

namespace cvlm {

/// Dense patch embeddings laid out on an h_p × w_p grid, row-major.
template <class T>
struct VisualInput {
  num::Tensor<T> patches;  // T_e × D_v
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;

  void validate(const PipelineConfig& cfg) const {
    if (grid_h * grid_w != patches.rows())
      throw num::DimensionError("visual input: grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                                " does not cover " + std::to_string(patches.rows()) + " patches");
    if (patches.rows() != cfg.dense_tokens || patches.cols() != cfg.visual_dim)
      throw num::DimensionError("visual input: expected " + std::to_string(cfg.dense_tokens) + "x" +
                                std::to_string(cfg.visual_dim) + ", got " + patches.shape_str());
    if (!num::all_finite(patches)) throw num::DimensionError("visual input: non-finite values");
  }
};

/// Encoder blocks [begin, end) over already position-embedded hidden states.
template <class X>
X encode_layers(X h, const ModelWeights<X>& w, std::size_t begin, std::size_t end, std::size_t heads) {
  for (std::size_t l = begin; l < end; ++l) h = self_attention_block(h, w.encoder[l], heads, kVisualLabels);
  return h;
}

/// Learned positional embeddings are added once, then N_v full-attention blocks.
template <class X>
X encode_dense(const X& patches, const ModelWeights<X>& w, std::size_t heads) {
  if (!(patches.rows() == w.visual_pos.rows() && patches.cols() == w.visual_pos.cols())) {
    throw num::DimensionError("encode_dense: patches " + std::to_string(patches.rows()) + "x" +
                              std::to_string(patches.cols()) + " vs positional table " +
                              std::to_string(w.visual_pos.rows()) + "x" + std::to_string(w.visual_pos.cols()));
  }
  return encode_layers(add(patches, w.visual_pos), w, 0, w.encoder.size(), heads);
}

template <class X>
X project_dense(const X& hidden, const ModelWeights<X>& w, std::size_t merge_factor) {
  return project_tokens(hidden, w.projector, merge_factor);
}

/// [text prefix | visual | text suffix] with sequential positions.
template <class X>
SequenceT<X> merge_dense(const X& text, const X& visual, std::size_t text_prefix) {
  return assemble(text, visual, text_prefix, dense_layout(text.rows(), text_prefix, visual.rows()));
}

inline void validate_prompt(std::span<const TokenId> prompt, const PipelineConfig& cfg) {
  if (prompt.size() != cfg.text_len) {
    throw num::DimensionError("prompt has " + std::to_string(prompt.size()) + " tokens, config text_len is " +
                              std::to_string(cfg.text_len));
  }
  for (TokenId t : prompt)
    if (t >= cfg.vocab) throw num::DimensionError("prompt token " + std::to_string(t) + " outside vocab");
}

/// Logits at every position of the dense pipeline, no decoding. This is the
/// teacher side of distillation.
template <class X>
X dense_forward_logits(const X& patches, std::span<const TokenId> prompt, const ModelWeights<X>& w,
                       const PipelineConfig& cfg) {
  auto hidden = encode_dense(patches, w, cfg.visual_heads);
  auto seq = merge_dense(embed_tokens(prompt, w.token_embedding), project_dense(hidden, w, cfg.merge_factor),
                         cfg.text_prefix);
  auto h = lm_hidden(seq.embeddings, seq.positions, w, cfg.lm_heads, kPrefillLabels,
                     [](std::size_t, const X&, const X&) {});
  return lm_logits(h, w);
}

/// Prefill + greedy decode + bookkeeping shared by every pipeline runner.
template <class T>
void finish_with_lm(const MultimodalSequence<T>& seq, const ModelWeights<num::Tensor<T>>& w,
                    const PipelineConfig& cfg, const RunOptions& opts, Stopwatch& sw, RunResult& out) {
  if (seq.positions.back() + 1 + opts.steps > cfg.max_positions) {
    throw ConfigError("max_positions " + std::to_string(cfg.max_positions) + " too small for " +
                      std::to_string(opts.steps) + " decode steps");
  }
  auto pre = prefill(seq, w, cfg, LogitsMode::last, opts.steps);
  out.report.prefill_ms = sw.lap();
  out.report.prefill_tokens = seq.len();
  out.report.kv_cache_bytes = pre.cache.bytes();
  out.tokens = decode_greedy(pre.cache, pre.logits, opts.steps, seq.positions.back() + 1, w, cfg);
  out.report.decode_ms = sw.lap();
  out.report.kv_cache_peak_bytes = pre.cache.bytes();
}

/// Dense reference pipeline: encode → project → merge → prefill → decode.
template <class T>
RunResult run_dense(const VisualInput<T>& input, std::span<const TokenId> prompt,
                    const ModelWeights<num::Tensor<T>>& w, const PipelineConfig& cfg, const RunOptions& opts) {
  input.validate(cfg);
  validate_prompt(prompt, cfg);
  num::MacCounter local;
  num::Instrumentation probe(opts.macs != nullptr ? opts.macs : &local, opts.trace);
  RunResult out;
  Stopwatch sw;

  auto hidden = encode_dense(input.patches, w, cfg.visual_heads);
  out.report.vision_enc_ms = sw.lap();

  auto visual = project_dense(hidden, w, cfg.merge_factor);
  auto seq = merge_dense(embed_tokens(prompt, w.token_embedding), visual, cfg.text_prefix);
  out.report.proj_ms = sw.lap();
  out.report.visual_tokens_kept = hidden.rows();

  finish_with_lm(seq, w, cfg, opts, sw, out);
  out.report.overhead_ms = 0.0;
  out.report.total_ms = sw.elapsed();
  out.report.mac_counts = (opts.macs != nullptr ? opts.macs : &local)->counts();
  return out;
}

}  // namespace cvlm
