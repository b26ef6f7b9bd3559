#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cvlm/civic/aggregate.hpp"
#include "cvlm/model/dense.hpp"
#include "cvlm/model/language_model.hpp"
#include "cvlm/model/layers.hpp"
#include "cvlm/model/run_report.hpp"
#include "cvlm/model/weights.hpp"

namespace cvlm::civic {

/// Rows of the dense positional table inherited by the kept anchors: anchor
/// j sits at dense index ⌊j·T_e/M_e⌋.
inline std::vector<std::size_t> compact_position_rows(std::span<const std::size_t> kept_anchors,
                                                      std::size_t dense_tokens, std::size_t compact_tokens) {
  std::vector<std::size_t> rows;
  rows.reserve(kept_anchors.size());
  for (std::size_t j : kept_anchors) rows.push_back(j * dense_tokens / compact_tokens);
  return rows;
}

/// Compact visual encoder: positional embeddings P_c are added once, then each
/// layer runs the frozen block weights with KV-compressed attention. When
/// `fixed_assignments` is non-empty it supplies R per layer instead of
/// softmax(H B).
template <class X>
X encode_compact(const X& compact, const X& positions, const ModelWeights<X>& theta,
                 std::span<const X> kv_assign, std::size_t heads, std::span<const X> fixed_assignments = {}) {
  if (compact.rows() == 0) throw num::ContractError("encode_compact: no tokens kept");
  if (kv_assign.size() != theta.encoder.size()) {
    throw num::DimensionError("encode_compact: " + std::to_string(kv_assign.size()) + " assignment matrices for " +
                              std::to_string(theta.encoder.size()) + " layers");
  }
  X h = add(compact, positions);
  for (std::size_t l = 0; l < theta.encoder.size(); ++l) {
    const X* fixed = fixed_assignments.empty() ? nullptr : &fixed_assignments[l];
    h = compact_block(h, theta.encoder[l], kv_assign[l], fixed, heads);
  }
  return h;
}

template <class X>
X project_compact(const X& encoded, const CivicParams<X>& phi, std::size_t merge_factor) {
  return project_tokens(encoded, phi.projector, merge_factor);
}

/// Compact visual tokens replace the dense visual span; text keeps its dense
/// positions and the visual tokens take strided positions from the span.
template <class X>
SequenceT<X> merge_compact(const X& text, const X& visual, std::size_t text_prefix, std::size_t dense_span) {
  return assemble(text, visual, text_prefix,
                  compact_layout(text.rows(), text_prefix, dense_span, visual.rows()));
}

/// Student logits at every position with all anchors kept. Generic so the
/// same code is taped during distillation.
template <class X>
X compact_forward_logits(const X& patches, std::span<const TokenId> prompt, const ModelWeights<X>& theta,
                         const CivicParams<X>& phi, const PipelineConfig& cfg) {
  auto agg = aggregate_anchors(patches, phi.anchors, cfg.tau);
  std::vector<std::size_t> all(cfg.compact_tokens);
  for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
  X pos = gather_rows(theta.visual_pos, compact_position_rows(all, cfg.dense_tokens, cfg.compact_tokens));
  X encoded = encode_compact<X>(agg.compact, pos, theta, phi.kv_assign, cfg.visual_heads);
  X visual = project_compact(encoded, phi, cfg.merge_factor);
  auto seq = merge_compact(embed_tokens(prompt, theta.token_embedding), visual, cfg.text_prefix,
                           cfg.prefill_visual_tokens());
  X hidden = lm_hidden(seq.embeddings, seq.positions, theta, cfg.lm_heads, kPrefillLabels,
                       [](std::size_t, const X&, const X&) {});
  return lm_logits(hidden, theta);
}

struct CompactRunOptions {
  RunOptions base;
  bool apply_floor = true;
};

/// Path-consistent compact pipeline: aggregate → retention floor → compact
/// encoder → compact projector → compact merge → prefill → decode. Overhead
/// is the time spent in aggregation and the retention floor.
template <class T>
RunResult run_compact(const VisualInput<T>& input, std::span<const TokenId> prompt,
                      const ModelWeights<num::Tensor<T>>& theta, const CivicParams<num::Tensor<T>>& phi,
                      const PipelineConfig& cfg, const CompactRunOptions& copts) {
  using Tn = num::Tensor<T>;
  const RunOptions& opts = copts.base;
  input.validate(cfg);
  validate_prompt(prompt, cfg);
  num::MacCounter local;
  num::Instrumentation probe(opts.macs != nullptr ? opts.macs : &local, opts.trace);
  RunResult out;
  Stopwatch sw;

  auto agg = aggregate(input.patches, phi.anchors, cfg.tau);
  if (copts.apply_floor) retention_floor(agg, cfg.min_keep_ratio, cfg.coverage, cfg.merge_factor);
  const auto kept = agg.kept_indices();
  Tn compact = kept.size() == agg.compact.rows() ? std::move(agg.compact) : num::gather_rows(agg.compact, kept);
  out.report.overhead_ms = sw.lap();

  // Position lookup is encoder work, as in the dense encoder.
  Tn pos = num::gather_rows(theta.visual_pos, compact_position_rows(kept, cfg.dense_tokens, cfg.compact_tokens));
  Tn encoded = encode_compact<Tn>(compact, pos, theta, phi.kv_assign, cfg.visual_heads);
  out.report.vision_enc_ms = sw.lap();

  Tn visual = project_compact(encoded, phi, cfg.merge_factor);
  auto seq = merge_compact(embed_tokens(prompt, theta.token_embedding), visual, cfg.text_prefix,
                           cfg.prefill_visual_tokens());
  out.report.proj_ms = sw.lap();
  out.report.visual_tokens_kept = kept.size();

  finish_with_lm(seq, theta, cfg, opts, sw, out);
  out.report.total_ms = sw.elapsed();
  out.report.mac_counts = (opts.macs != nullptr ? opts.macs : &local)->counts();
  return out;
}

}  // namespace cvlm::civic
