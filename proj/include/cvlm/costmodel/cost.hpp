#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

#include "cvlm/baselines/routing_log.hpp"
#include "cvlm/model/config.hpp"

// Closed-form cost model in abstract units:
//   dense   = α N_v T_e² D_v   + β N_l (L+T_p)² D_l + γ N_l (L+T_p) D_l + C_dec
//   compact = α N_v M_e S D_v  + β N_l (L+M_p)² D_l + γ N_l (L+M_p) D_l + C_dec
//   posthoc = dense + Σ routing op costs
// with C_dec = steps · β N_l (prefill_len + steps/2) D_l.

namespace cvlm::cost {

/// Shape symbols the model reads. Kept separate from PipelineConfig so that
/// degenerate points (M_p == T_p, S == T_e) can be evaluated.
struct CostShape {
  double visual_layers = 0;  // N_v
  double dense_tokens = 0;   // T_e
  double visual_dim = 0;     // D_v
  double lm_layers = 0;      // N_l
  double text_len = 0;       // L
  double dense_prefill = 0;  // T_p
  double lm_dim = 0;         // D_l
  double compact_tokens = 0;   // M_e
  double kv_anchors = 0;       // S
  double compact_prefill = 0;  // M_p

  static CostShape from(const PipelineConfig& c) {
    return {static_cast<double>(c.visual_layers),         static_cast<double>(c.dense_tokens),
            static_cast<double>(c.visual_dim),            static_cast<double>(c.lm_layers),
            static_cast<double>(c.text_len),              static_cast<double>(c.prefill_visual_tokens()),
            static_cast<double>(c.lm_dim),                static_cast<double>(c.compact_tokens),
            static_cast<double>(c.kv_anchors),            static_cast<double>(c.compact_prefill_tokens())};
  }
};

struct CostCoefficients {
  double alpha = 1;
  double beta = 1;
  double gamma = 1;

  void validate() const {
    if (!(alpha >= 0 && beta >= 0 && gamma >= 0)) throw std::invalid_argument("cost coefficients must be >= 0");
  }
};

struct CostBreakdown {
  double visual_attention = 0;
  double llm_prefill = 0;
  double kv_cache = 0;
  double decode = 0;
  double route = 0;

  double total() const { return visual_attention + llm_prefill + kv_cache + decode + route; }
};

/// steps · β N_l (prefill_len + steps/2) D_l.
inline double decode_cost(const CostShape& s, const CostCoefficients& k, double prefill_len, std::size_t steps) {
  const double n = static_cast<double>(steps);
  return n * k.beta * s.lm_layers * (prefill_len + n / 2) * s.lm_dim;
}

namespace detail {

inline CostBreakdown lm_terms(const CostShape& s, const CostCoefficients& k, double prefill_len,
                              std::size_t steps) {
  CostBreakdown b;
  b.llm_prefill = k.beta * s.lm_layers * prefill_len * prefill_len * s.lm_dim;
  b.kv_cache = k.gamma * s.lm_layers * prefill_len * s.lm_dim;
  b.decode = decode_cost(s, k, prefill_len, steps);
  return b;
}

}  // namespace detail

inline CostBreakdown dense_cost(const CostShape& s, const CostCoefficients& k, std::size_t steps) {
  k.validate();
  auto b = detail::lm_terms(s, k, s.text_len + s.dense_prefill, steps);
  b.visual_attention = k.alpha * s.visual_layers * s.dense_tokens * s.dense_tokens * s.visual_dim;
  return b;
}

inline CostBreakdown compact_cost(const CostShape& s, const CostCoefficients& k, std::size_t steps) {
  k.validate();
  auto b = detail::lm_terms(s, k, s.text_len + s.compact_prefill, steps);
  b.visual_attention = k.alpha * s.visual_layers * s.compact_tokens * s.kv_anchors * s.visual_dim;
  return b;
}

inline CostBreakdown dense_cost(const PipelineConfig& c, const CostCoefficients& k, std::size_t steps) {
  return dense_cost(CostShape::from(c), k, steps);
}

inline CostBreakdown compact_cost(const PipelineConfig& c, const CostCoefficients& k, std::size_t steps) {
  return compact_cost(CostShape::from(c), k, steps);
}

/// Dense cost plus the measured routing overhead.
inline CostBreakdown posthoc_cost(const CostBreakdown& dense, const baselines::RoutingOpLog& log) {
  CostBreakdown b = dense;
  b.route += baselines::route_cost(log);
  return b;
}

/// Per-layer visual attention interaction ratio M_e S / T_e².
inline double attention_ratio(const CostShape& s) { return s.compact_tokens * s.kv_anchors / (s.dense_tokens * s.dense_tokens); }

/// (L+M_p)/(L+T_p), also the KV-cache byte ratio.
inline double length_ratio(double compact_len, double dense_len) { return compact_len / dense_len; }

inline double cache_ratio(const CostShape& s) {
  return length_ratio(s.text_len + s.compact_prefill, s.text_len + s.dense_prefill);
}

inline double prefill_ratio(const CostShape& s) {
  const double r = cache_ratio(s);
  return r * r;
}

inline double attention_ratio(const PipelineConfig& c) { return attention_ratio(CostShape::from(c)); }
inline double cache_ratio(const PipelineConfig& c) { return cache_ratio(CostShape::from(c)); }
inline double prefill_ratio(const PipelineConfig& c) { return prefill_ratio(CostShape::from(c)); }

/// Static budget check: the compact pathway's modeled cost must not exceed
/// omega_max when a budget is given.
inline bool within_budget(const CostBreakdown& compact, std::optional<double> omega_max) {
  return !omega_max || compact.total() <= *omega_max;
}

inline void require_budget(const CostBreakdown& compact, std::optional<double> omega_max) {
  if (!within_budget(compact, omega_max)) {
    throw ConfigError("compact cost " + std::to_string(compact.total()) + " exceeds budget " +
                      std::to_string(*omega_max));
  }
}

}  // namespace cvlm::cost
