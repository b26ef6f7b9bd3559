#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cvlm/model/dense.hpp"
#include "cvlm/model/run_report.hpp"
#include "cvlm/baselines/routing_log.hpp"

// Post-hoc token pruning stand-ins. The dense encoder runs as usual; partway
// through, tokens are scored and a subset is routed forward. Every routing
// step is timed into a RoutingOpLog, which is the report's overhead column.

namespace cvlm::baselines {

enum class PostHocMode { dense_restore, propagate };
enum class Scoring { norm, attn_mass };

inline constexpr const char* kRoutingRegion = "routing";

struct PostHocConfig {
  double keep_ratio = 0.75;    // r
  std::size_t prune_layer = 0;  // encoder blocks before this index see every token
  PostHocMode mode = PostHocMode::dense_restore;
  Scoring scoring = Scoring::norm;

  void validate(const PipelineConfig& cfg) const {
    if (!(keep_ratio > 0 && keep_ratio <= 1)) throw ConfigError("posthoc: keep_ratio must be in (0, 1]");
    if (prune_layer >= cfg.visual_layers) throw ConfigError("posthoc: prune_layer must be below visual_layers");
    if (scoring == Scoring::attn_mass && prune_layer == 0)
      throw ConfigError("posthoc: attn_mass scoring needs an attention layer before prune_layer");
  }
};

/// ⌈r·T⌉ tokens survive. A zero budget is an error.
inline std::size_t keep_count(double keep_ratio, std::size_t tokens) {
  const auto k = static_cast<std::size_t>(std::ceil(keep_ratio * static_cast<double>(tokens) - 1e-9));
  if (k == 0) throw ConfigError("posthoc: keep budget rounds to zero tokens");
  return std::min(k, tokens);
}

/// Budget used by propagate mode: the projector consumes whole merge groups,
/// so the kept count is rounded up to a multiple of merge_factor.
inline std::size_t propagate_count(double keep_ratio, std::size_t tokens, std::size_t merge_factor) {
  const std::size_t k = keep_count(keep_ratio, tokens);
  return std::min(tokens, (k + merge_factor - 1) / merge_factor * merge_factor);
}

template <class T>
std::vector<double> norm_scores(const num::Tensor<T>& h) {
  std::vector<double> s(h.rows());
  for (std::size_t i = 0; i < h.rows(); ++i) {
    double acc = 0;
    for (T v : h.row(i)) acc += static_cast<double>(v) * v;
    s[i] = std::sqrt(acc);
  }
  return s;
}

/// Attention mass received by each token: column sums of the head-averaged
/// attention matrix of `block` evaluated on `x` (the block's own input).
template <class T>
std::vector<double> attention_mass_scores(const num::Tensor<T>& x, const BlockWeights<num::Tensor<T>>& block,
                                          std::size_t heads) {
  num::Region r(kRoutingRegion);
  auto h = num::layernorm_rows(x);
  auto q = num::matmul(h, block.wq);
  auto k = num::matmul(h, block.wk);
  const std::size_t d = q.cols() / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> mass(x.rows(), 0.0);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    auto p = num::softmax_rows(
        num::scale(num::matmul_nt(num::slice_cols(q, hd * d, d), num::slice_cols(k, hd * d, d)), inv_sqrt_d));
    for (std::size_t i = 0; i < p.rows(); ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) mass[j] += static_cast<double>(p(i, j)) / heads;
  }
  return mass;
}

/// Indices of the `k` highest scores (ties to the lower index), returned in
/// ascending index order.
inline std::vector<std::size_t> select_top(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

/// For every slot in [0, n), the kept index nearest to it (ties to the lower
/// index). `kept` must be ascending and non-empty.
inline std::vector<std::size_t> nearest_kept(std::span<const std::size_t> kept, std::size_t n) {
  std::vector<std::size_t> src(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto it = std::lower_bound(kept.begin(), kept.end(), i);
    if (it == kept.end()) {
      src[i] = kept.back();
    } else if (*it == i || it == kept.begin()) {
      src[i] = *it;
    } else {
      const std::size_t prev = *(it - 1);
      src[i] = i - prev <= *it - i ? prev : *it;
    }
  }
  return src;
}

struct PostHocResult {
  std::vector<TokenId> tokens;
  RunReport report;
  RoutingOpLog log;
};

template <class T>
PostHocResult run_posthoc(const VisualInput<T>& input, std::span<const TokenId> prompt,
                          const ModelWeights<num::Tensor<T>>& w, const PipelineConfig& cfg,
                          const PostHocConfig& pcfg, const RunOptions& opts) {
  using Tn = num::Tensor<T>;
  input.validate(cfg);
  validate_prompt(prompt, cfg);
  pcfg.validate(cfg);
  const std::size_t n = cfg.dense_tokens;
  const std::size_t k = pcfg.mode == PostHocMode::propagate ? propagate_count(pcfg.keep_ratio, n, cfg.merge_factor)
                                                            : keep_count(pcfg.keep_ratio, n);
  num::MacCounter local;
  num::Instrumentation probe(opts.macs != nullptr ? opts.macs : &local, opts.trace);
  PostHocResult out;
  RoutingOpLog& log = out.log;
  Stopwatch sw;

  const std::size_t last = pcfg.prune_layer == 0 ? 0 : pcfg.prune_layer - 1;
  Tn before_last = num::add(input.patches, w.visual_pos);
  if (pcfg.prune_layer > 0) before_last = encode_layers(before_last, w, 0, last, cfg.visual_heads);
  Tn h = pcfg.prune_layer > 0 ? encode_layers(before_last, w, last, pcfg.prune_layer, cfg.visual_heads)
                              : before_last;
  double vision_ms = sw.lap();

  std::vector<double> scores = pcfg.scoring == Scoring::norm
                                   ? [&] {
                                       num::Region r(kRoutingRegion);
                                       return norm_scores(h);
                                     }()
                                   : attention_mass_scores(before_last, w.encoder[last], cfg.visual_heads);
  log.append(RouteOp::score, sw.lap(), n);

  const auto kept = select_top(scores, k);
  log.append(RouteOp::select, sw.lap(), n);

  Tn pruned = [&] {
    num::Region r(kRoutingRegion);
    return num::gather_rows(h, kept);
  }();
  log.append(RouteOp::gather, sw.lap(), k * h.cols());

  pruned = encode_layers(std::move(pruned), w, pcfg.prune_layer, w.encoder.size(), cfg.visual_heads);
  vision_ms += sw.lap();

  Tn visual_tokens;
  if (pcfg.mode == PostHocMode::dense_restore) {
    Tn full(n, pruned.cols());
    for (std::size_t i = 0; i < kept.size(); ++i) std::copy_n(pruned.row(i).data(), pruned.cols(), full.row(kept[i]).data());
    log.append(RouteOp::scatter_unmerge, sw.lap(), k * pruned.cols());

    std::vector<std::size_t> slot_of(n, 0);
    for (std::size_t i = 0; i < kept.size(); ++i) slot_of[kept[i]] = i;
    const auto src = nearest_kept(kept, n);
    for (std::size_t i = 0; i < n; ++i)
      if (src[i] != i) std::copy_n(pruned.row(slot_of[src[i]]).data(), pruned.cols(), full.row(i).data());
    log.append(RouteOp::restore, sw.lap(), (n - k) * pruned.cols());
    visual_tokens = std::move(full);
  } else {
    visual_tokens = std::move(pruned);
  }

  auto visual = project_dense(visual_tokens, w, cfg.merge_factor);
  auto seq = merge_dense(embed_tokens(prompt, w.token_embedding), visual, cfg.text_prefix);
  out.report.proj_ms = sw.lap();
  out.report.vision_enc_ms = vision_ms;
  out.report.visual_tokens_kept = k;

  RunResult lm;
  finish_with_lm(seq, w, cfg, opts, sw, lm);
  out.tokens = std::move(lm.tokens);
  out.report.prefill_ms = lm.report.prefill_ms;
  out.report.decode_ms = lm.report.decode_ms;
  out.report.prefill_tokens = lm.report.prefill_tokens;
  out.report.kv_cache_bytes = lm.report.kv_cache_bytes;
  out.report.kv_cache_peak_bytes = lm.report.kv_cache_peak_bytes;
  out.report.overhead_ms = log.total();
  out.report.total_ms = sw.elapsed();
  out.report.mac_counts = (opts.macs != nullptr ? opts.macs : &local)->counts();
  return out;
}

}  // namespace cvlm::baselines
