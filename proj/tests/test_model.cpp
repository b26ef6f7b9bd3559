#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <vector>

#include "cvlm/model/checkpoint.hpp"
#include "cvlm/model/dense.hpp"
#include "cvlm/model/language_model.hpp"

using namespace cvlm;
using num::Matrix;

namespace {

PipelineConfig toy() {
  PipelineConfig c;
  c.validate();
  return c;
}

VisualInput<double> seeded_input(const PipelineConfig& c, std::uint64_t seed) {
  num::Rng rng(seed);
  return {rng.gaussian(c.dense_tokens, c.visual_dim, 1.0), c.grid_h, c.grid_w};
}

std::vector<TokenId> seeded_prompt(const PipelineConfig& c, std::uint64_t seed) {
  num::Rng rng(seed);
  std::vector<TokenId> p(c.text_len);
  for (auto& t : p) t = rng.index(c.vocab);
  return p;
}

}  // namespace

TEST(Config, DefaultsAreValid) { EXPECT_NO_THROW(toy().validate()); }

TEST(Config, RejectsBrokenInvariants) {
  auto bad = [](auto mutate) {
    PipelineConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](PipelineConfig& c) { c.merge_factor = 3; });
  bad([](PipelineConfig& c) { c.compact_tokens = 64; });  // M_p == T_p
  bad([](PipelineConfig& c) { c.kv_anchors = 17; });
  bad([](PipelineConfig& c) { c.tau = 0; });
  bad([](PipelineConfig& c) { c.kl_temperature = -1; });
  bad([](PipelineConfig& c) { c.kl_weight = -0.1; });
  bad([](PipelineConfig& c) { c.min_keep_ratio = 1.5; });
  bad([](PipelineConfig& c) { c.coverage = 0; });
  bad([](PipelineConfig& c) { c.grid_w = 7; });
  bad([](PipelineConfig& c) { c.visual_heads = 3; });
}

TEST(EncodeDense, NoLayersAddsPositionsOnly) {
  auto c = toy();
  c.visual_layers = 0;
  auto w = init_model_weights(c);
  auto in = seeded_input(c, 1);
  EXPECT_EQ(encode_dense(in.patches, w, c.visual_heads), num::add(in.patches, w.visual_pos));
}

TEST(EncodeDense, SingleTokenIsResidualMlpPath) {
  PipelineConfig c;
  c.dense_tokens = 1;
  c.grid_h = c.grid_w = 1;
  c.visual_layers = 1;
  auto w = init_model_weights(c);
  num::Rng rng(2);
  Matrix x = rng.gaussian(1, c.visual_dim, 1.0);
  // One key: every head's softmax is exactly 1, so attention returns V.
  const auto& b = w.encoder[0];
  Matrix h = num::add(x, w.visual_pos);
  Matrix x1 = num::add(h, num::matmul(num::matmul(num::layernorm_rows(h), b.wv), b.wo));
  Matrix mlp_out = num::add_row(
      num::matmul(num::gelu(num::add_row(num::matmul(num::layernorm_rows(x1), b.w1), b.b1)), b.w2), b.b2);
  Matrix expect = num::add(x1, mlp_out);
  EXPECT_LE(num::max_abs_diff(encode_dense(x, w, c.visual_heads), expect), 1e-12);
}

TEST(EncodeDense, ScoreMacsAreClosedForm) {
  auto c = toy();
  auto w = init_model_weights(c);
  num::MacCounter macs;
  {
    num::Instrumentation probe(&macs);
    encode_dense(seeded_input(c, 3).patches, w, c.visual_heads);
  }
  const std::uint64_t d = c.visual_head_dim();
  EXPECT_EQ(macs.at("visual_attention"), c.visual_layers * c.visual_heads * c.dense_tokens * c.dense_tokens * d);
  EXPECT_EQ(macs.at("visual_attention_mix"), macs.at("visual_attention"));
}

TEST(ProjectDense, SingleGroup) {
  PipelineConfig c;
  c.dense_tokens = 4;
  c.grid_h = c.grid_w = 2;
  auto w = init_model_weights(c);
  num::Rng rng(4);
  EXPECT_EQ(project_dense(rng.gaussian(4, c.visual_dim, 1.0), w, 4).rows(), 1u);
}

TEST(ProjectDense, NoMergeIsPlainMlp) {
  num::Rng rng(5);
  ProjectorWeights<Matrix> p{rng.gaussian(3, 3, 1.0), rng.gaussian(1, 3, 1.0), rng.gaussian(3, 3, 1.0),
                             rng.gaussian(1, 3, 1.0)};
  Matrix h = rng.gaussian(5, 3, 1.0);
  Matrix expect = num::add_row(num::matmul(num::gelu(num::add_row(num::matmul(h, p.w1), p.b1)), p.w2), p.b2);
  EXPECT_EQ(project_tokens(h, p, 1), expect);
}

TEST(ProjectDense, MatchesExplicitConcatOracle) {
  const std::size_t dv = 3, k = 4;
  num::Rng rng(6);
  ProjectorWeights<Matrix> p{rng.gaussian(k * dv, 5, 1.0), rng.gaussian(1, 5, 1.0), rng.gaussian(5, 2, 1.0),
                             rng.gaussian(1, 2, 1.0)};
  Matrix h = rng.gaussian(8, dv, 1.0);
  Matrix grouped(2, k * dv);
  for (std::size_t g = 0; g < 2; ++g)
    for (std::size_t t = 0; t < k; ++t)
      for (std::size_t c = 0; c < dv; ++c) grouped(g, t * dv + c) = h(g * k + t, c);
  Matrix expect =
      num::add_row(num::matmul(num::gelu(num::add_row(num::matmul(grouped, p.w1), p.b1)), p.w2), p.b2);
  EXPECT_LE(num::max_abs_diff(project_tokens(h, p, k), expect), 1e-12);
  EXPECT_THROW(project_tokens(num::slice_rows(h, 0, 7), p, k), num::DimensionError);
}

TEST(MergeDense, LayoutAndLength) {
  Matrix text(3, 2, 1.0), vis(2, 2, 2.0);
  auto s = merge_dense(text, vis, 1);
  std::vector<Segment> expect{Segment::text, Segment::visual, Segment::visual, Segment::text, Segment::text};
  EXPECT_EQ(s.segments, expect);
  EXPECT_EQ(s.len(), 5u);
  EXPECT_EQ(s.embeddings(1, 0), 2.0);
  EXPECT_EQ(s.embeddings(3, 0), 1.0);
  for (std::size_t i = 0; i < s.len(); ++i) EXPECT_EQ(s.positions[i], i);
}

TEST(MergeDense, EmptyVisualSpanIsPureText) {
  Matrix text(3, 2, 1.0);
  auto s = merge_dense(text, Matrix(0, 2), 1);
  EXPECT_EQ(s.len(), 3u);
  EXPECT_EQ(s.count(Segment::visual), 0u);
  EXPECT_EQ(s.embeddings, text);
}

TEST(Prefill, SingleToken) {
  auto c = toy();
  auto w = init_model_weights(c);
  const TokenId ids[] = {3};
  MultimodalSequence<double> s{embed_tokens<Matrix>(ids, w.token_embedding), {Segment::text}, {0}};
  auto r = prefill(s, w, c);
  EXPECT_EQ(r.cache.current_len(), 1u);
  EXPECT_EQ(r.logits.rows(), 1u);
  EXPECT_EQ(r.logits.cols(), c.vocab);
}

TEST(Prefill, CausalPrefixUnchangedBySuffixPerturbation) {
  auto c = toy();
  auto w = init_model_weights(c);
  auto in = seeded_input(c, 7);
  auto prompt = seeded_prompt(c, 7);
  auto seq = merge_dense(embed_tokens<Matrix>(prompt, w.token_embedding),
                         project_dense(encode_dense(in.patches, w, c.visual_heads), w, c.merge_factor),
                         c.text_prefix);
  auto a = prefill(seq, w, c).logits;
  const std::size_t cut = 6;
  for (std::size_t i = cut; i < seq.len(); ++i)
    for (auto& v : seq.embeddings.row(i)) v += 0.37;
  auto b = prefill(seq, w, c).logits;
  EXPECT_EQ(num::slice_rows(a, 0, cut), num::slice_rows(b, 0, cut));
  EXPECT_NE(num::slice_rows(a, cut, 1), num::slice_rows(b, cut, 1));
}

TEST(Prefill, LastModeMatchesAllModeTail) {
  auto c = toy();
  auto w = init_model_weights(c);
  auto in = seeded_input(c, 8);
  auto seq = merge_dense(embed_tokens<Matrix>(seeded_prompt(c, 8), w.token_embedding),
                         project_dense(encode_dense(in.patches, w, c.visual_heads), w, c.merge_factor),
                         c.text_prefix);
  auto all = prefill(seq, w, c, LogitsMode::all).logits;
  auto last = prefill(seq, w, c, LogitsMode::last).logits;
  EXPECT_EQ(last, num::slice_rows(all, all.rows() - 1, 1));
}

TEST(KVCacheBytes, ClosedForm) {
  KVCache<float> cache(2, 8);
  for (std::size_t l = 0; l < 2; ++l) cache.append(l, num::Tensor<float>(12, 8), num::Tensor<float>(12, 8));
  EXPECT_EQ(cache.bytes(), 1536u);
  EXPECT_TRUE(cache.consistent());
  KVCache<double> d(3, 5);
  for (std::size_t l = 0; l < 3; ++l) d.append(l, Matrix(7, 5), Matrix(7, 5));
  EXPECT_EQ(d.bytes(), 2u * 3 * 7 * 5 * 8);
  EXPECT_THROW(d.append(0, Matrix(1, 4), Matrix(1, 4)), num::DimensionError);
}

TEST(Decode, ZeroStepsLeavesCache) {
  auto c = toy();
  auto w = init_model_weights(c);
  KVCache<double> cache(c.lm_layers, c.lm_dim);
  auto out = decode_greedy(cache, Matrix(1, c.vocab), 0, 0, w, c);
  EXPECT_TRUE(out.empty());
  EXPECT_EQ(cache.current_len(), 0u);
}

TEST(Decode, ArgmaxAndLowestIdTieBreak) {
  std::vector<double> unique(10, 0.0);
  unique[7] = 1.0;
  EXPECT_EQ(argmax_row<double>(unique), 7u);
  std::vector<double> tie(10, 0.0);
  tie[2] = tie[5] = 3.0;
  EXPECT_EQ(argmax_row<double>(tie), 2u);
}

TEST(Decode, CacheGrowsOnePerStep) {
  auto c = toy();
  auto w = init_model_weights(c);
  Matrix logits(1, c.vocab);
  logits(0, 7) = 1.0;
  KVCache<double> cache(c.lm_layers, c.lm_dim);
  auto out = decode_greedy(cache, logits, 5, 0, w, c);
  ASSERT_EQ(out.size(), 5u);
  EXPECT_EQ(out[0], 7u);
  EXPECT_EQ(cache.current_len(), 5u);
  EXPECT_TRUE(cache.consistent());
}

TEST(RunDense, ReportLawsAndDeterminism) {
  auto c = toy();
  auto w = init_model_weights(c);
  auto in = seeded_input(c, 9);
  auto prompt = seeded_prompt(c, 9);
  RunOptions opts;
  opts.steps = 6;
  auto a = run_dense(in, prompt, w, c, opts);
  auto b = run_dense(in, prompt, w, c, opts);
  EXPECT_EQ(a.report.prefill_tokens, c.text_len + c.prefill_visual_tokens());
  EXPECT_EQ(a.report.overhead_ms, 0.0);
  EXPECT_EQ(a.report.kv_cache_bytes, 2u * c.lm_layers * a.report.prefill_tokens * c.lm_dim * sizeof(double));
  EXPECT_EQ(a.report.kv_cache_peak_bytes,
            2u * c.lm_layers * (a.report.prefill_tokens + opts.steps) * c.lm_dim * sizeof(double));
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.report.mac_counts, b.report.mac_counts);
  EXPECT_GE(a.report.residual_ms(), 0.0);
  EXPECT_DOUBLE_EQ(a.report.llm_total_ms(), a.report.prefill_ms + a.report.decode_ms);
}

TEST(RunDense, FloatAndDoubleAgreeOnTokens) {
  auto c = toy();
  auto w = init_model_weights(c);
  auto in = seeded_input(c, 10);
  auto prompt = seeded_prompt(c, 10);
  RunOptions opts;
  opts.steps = 4;
  auto d = run_dense(in, prompt, w, c, opts);
  VisualInput<float> inf{num::cast<float>(in.patches), in.grid_h, in.grid_w};
  auto f = run_dense(inf, prompt, convert_weights<float>(w), c, opts);
  EXPECT_EQ(f.report.prefill_tokens, d.report.prefill_tokens);
  EXPECT_EQ(f.report.kv_cache_bytes * 2, d.report.kv_cache_bytes);
}

TEST(RunDense, RejectsBadPrompt) {
  auto c = toy();
  auto w = init_model_weights(c);
  auto in = seeded_input(c, 11);
  std::vector<TokenId> short_prompt(c.text_len - 1, 0);
  EXPECT_THROW(run_dense(in, short_prompt, w, c, {}), num::DimensionError);
  std::vector<TokenId> oov(c.text_len, c.vocab);
  EXPECT_THROW(run_dense(in, oov, w, c, {}), num::DimensionError);
}

TEST(PrefillMacs, ScoreTermScalesQuadratically) {
  auto score_macs = [](std::size_t dense_tokens) {
    PipelineConfig c;
    c.dense_tokens = dense_tokens;
    c.grid_h = 1;
    c.grid_w = dense_tokens;
    c.compact_tokens = 4;
    c.kv_anchors = 4;
    auto w = init_model_weights(c);
    num::Rng rng(12);
    VisualInput<double> in{rng.gaussian(dense_tokens, c.visual_dim, 1.0), 1, dense_tokens};
    num::MacCounter macs;
    RunOptions opts;
    opts.macs = &macs;
    run_dense(in, std::vector<TokenId>(c.text_len, 1), w, c, opts);
    return std::pair{macs.at("llm_prefill_attention"), c.dense_sequence_len()};
  };
  auto [m1, n1] = score_macs(32);
  auto [m2, n2] = score_macs(64);
  EXPECT_EQ(m1 * n2 * n2, m2 * n1 * n1);
}

TEST(Checkpoint, RoundTripIsExact) {
  auto c = toy();
  auto w = init_model_weights(c);
  auto phi = init_civic_params(c, w);
  TensorMap all;
  collect(all, w);
  collect(all, phi);
  const auto path = std::filesystem::temp_directory_path() / "cvlm_ckpt_test.json";
  save_tensors(path.string(), all);
  auto loaded = load_tensors(path.string());
  std::filesystem::remove(path);

  auto w2 = init_model_weights(c);
  for (auto& v : w2.head.values()) v = 0;
  restore(loaded, w2);
  EXPECT_EQ(w2.head, w.head);
  EXPECT_EQ(w2.encoder[1].w2, w.encoder[1].w2);
  auto phi2 = init_civic_params(c, w);
  phi2.anchors = Matrix(c.compact_tokens, c.visual_dim);
  restore(loaded, phi2);
  EXPECT_EQ(phi2.anchors, phi.anchors);
  EXPECT_TRUE(loaded.count("model.encoder.0.wq"));
  EXPECT_TRUE(loaded.count("civic.kv_assign.1"));
}

TEST(Checkpoint, ShapeMismatchRejected) {
  auto c = toy();
  auto w = init_model_weights(c);
  TensorMap all;
  collect(all, w);
  all["model.head"] = Matrix(2, 2);
  EXPECT_THROW(restore(all, w), CheckpointError);
  all.erase("model.head");
  EXPECT_THROW(restore(all, w), CheckpointError);
}
