#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace cvlm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes and hyperparameters shared by the dense and compact pipelines.
struct PipelineConfig {
  // Vision side.
  std::size_t dense_tokens = 64;   // T_e
  std::size_t grid_h = 8;          // h_p, h_p * w_p == T_e
  std::size_t grid_w = 8;          // w_p
  std::size_t visual_dim = 32;     // D_v
  std::size_t visual_layers = 2;   // N_v
  std::size_t visual_heads = 2;
  std::size_t merge_factor = 4;

  // Language side.
  std::size_t lm_dim = 32;         // D_l
  std::size_t lm_layers = 2;       // N_l
  std::size_t lm_heads = 2;
  std::size_t text_len = 8;        // L
  std::size_t text_prefix = 1;     // text tokens before the visual span
  std::size_t vocab = 64;
  std::size_t max_positions = 512;

  // Compact pathway.
  std::size_t compact_tokens = 16;  // M_e
  std::size_t kv_anchors = 8;       // S
  double tau = 0.07;
  double min_keep_ratio = 0.5;      // rho_min
  double coverage = 0.9;            // q_cov

  // Distillation.
  double kl_temperature = 1.0;      // T_KL
  double kl_weight = 1.0;           // lambda

  std::uint64_t seed = 1234;

  std::size_t prefill_visual_tokens() const { return dense_tokens / merge_factor; }   // T_p
  std::size_t compact_prefill_tokens() const { return compact_tokens / merge_factor; }  // M_p
  std::size_t visual_head_dim() const { return visual_dim / visual_heads; }
  std::size_t lm_head_dim() const { return lm_dim / lm_heads; }
  std::size_t dense_sequence_len() const { return text_len + prefill_visual_tokens(); }

  /// Throws ConfigError naming the first violated constraint.
  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("invalid config: " + msg); };
    if (merge_factor == 0) fail("merge_factor must be positive");
    if (dense_tokens == 0) fail("dense_tokens must be positive");
    if (dense_tokens % merge_factor != 0) fail("dense_tokens must be a multiple of merge_factor");
    if (grid_h * grid_w != dense_tokens) fail("grid_h * grid_w must equal dense_tokens");
    if (compact_tokens == 0) fail("compact_tokens must be positive");
    if (compact_tokens % merge_factor != 0) fail("compact_tokens must be a multiple of merge_factor");
    if (compact_tokens > dense_tokens) fail("compact_tokens must not exceed dense_tokens");
    if (compact_prefill_tokens() >= prefill_visual_tokens())
      fail("compact prefill length must be shorter than the dense prefill span");
    if (kv_anchors == 0 || kv_anchors > compact_tokens) fail("kv_anchors must be in [1, compact_tokens]");
    if (visual_heads == 0 || visual_dim % visual_heads != 0)
      fail("visual_dim must be divisible by visual_heads");
    if (lm_heads == 0 || lm_dim % lm_heads != 0) fail("lm_dim must be divisible by lm_heads");
    if (visual_dim < 2 || lm_dim < 2) fail("hidden sizes must be at least 2");
    if (text_prefix > text_len) fail("text_prefix must not exceed text_len");
    if (vocab == 0) fail("vocab must be positive");
    if (dense_sequence_len() > max_positions) fail("max_positions too small for the dense sequence");
    if (!(tau > 0)) fail("tau must be positive");
    if (!(kl_temperature > 0)) fail("kl_temperature must be positive");
    if (!(kl_weight >= 0)) fail("kl_weight must be non-negative");
    if (!(min_keep_ratio >= 0 && min_keep_ratio <= 1)) fail("min_keep_ratio must be in [0, 1]");
    if (!(coverage > 0 && coverage <= 1)) fail("coverage must be in (0, 1]");
  }
};

}  // namespace cvlm
