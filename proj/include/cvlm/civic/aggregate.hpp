#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "cvlm/numkit/instrument.hpp"
#include "cvlm/numkit/reduce.hpp"
#include "cvlm/numkit/tensor.hpp"

namespace cvlm::civic {

inline constexpr const char* kAggregationRegion = "aggregation";

template <class X>
struct Aggregated {
  X weights;  // W_A, M_e × T_e; rows are softmax distributions over patches
  X compact;  // Z_0 = W_A X_0, M_e × D_v
};

/// Anchor cross-attention onto dense patches:
///   K_0 = Norm(LN(X_0)), Q_A = Norm(LN(A)), W_A = softmax(Q_A K_0ᵀ / τ),
///   Z_0 = W_A X_0 (the weights act on the raw patches).
template <class X>
Aggregated<X> aggregate_anchors(const X& patches, const X& anchors, double tau,
                                double eps = num::kLayerNormEps) {
  if (!(tau > 0)) throw num::ContractError("aggregate: tau must be positive");
  if (patches.cols() != anchors.cols()) {
    throw num::DimensionError("aggregate: anchor width " + std::to_string(anchors.cols()) +
                              " vs patch width " + std::to_string(patches.cols()));
  }
  num::Region r(kAggregationRegion);
  X keys = l2norm_rows(layernorm_rows(patches, eps));
  // 1/τ is folded into the M_e queries rather than the M_e × T_e scores.
  X queries = scale(l2norm_rows(layernorm_rows(anchors, eps)), 1.0 / tau);
  X weights = softmax_rows(matmul_nt(queries, keys));
  X compact = matmul(weights, patches);
  return {std::move(weights), std::move(compact)};
}

/// Aggregation output plus the retention decision.
template <class T>
struct AggregationResult {
  num::Tensor<T> weights;        // W_A
  num::Tensor<T> compact;        // Z_0
  std::vector<T> patch_norms;    // ‖X_0[i]‖₂
  std::vector<double> saliency;  // filled by retention_floor
  std::vector<bool> kept;        // one flag per anchor; all true until the floor runs

  std::size_t kept_count() const {
    return static_cast<std::size_t>(std::count(kept.begin(), kept.end(), true));
  }
  /// Kept anchor indices in ascending (spatial) order.
  std::vector<std::size_t> kept_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < kept.size(); ++j)
      if (kept[j]) idx.push_back(j);
    return idx;
  }
};

template <class T>
AggregationResult<T> aggregate(const num::Tensor<T>& patches, const num::Tensor<T>& anchors, double tau,
                               double eps = num::kLayerNormEps) {
  auto a = aggregate_anchors(patches, anchors, tau, eps);
  AggregationResult<T> out;
  out.weights = std::move(a.weights);
  out.compact = std::move(a.compact);
  {
    num::Region r(kAggregationRegion);
    out.patch_norms = num::row_norms(patches);
  }
  out.kept.assign(anchors.rows(), true);
  return out;
}

/// s_j = Σ_i W_A[j,i] · ‖X_0[i]‖₂.
template <class T>
std::vector<double> anchor_saliency(const num::Tensor<T>& weights, std::span<const T> patch_norms) {
  std::vector<double> s(weights.rows(), 0.0);
  for (std::size_t j = 0; j < weights.rows(); ++j) s[j] = num::lane_dot<T>(weights.row(j), patch_norms);
  return s;
}

/// Number of anchors to keep: the smallest saliency-descending prefix whose
/// mass reaches `coverage` of the total, raised to ⌈min_keep·M⌉, then rounded
/// up to a multiple of `multiple` (never above M, never below one group).
inline std::size_t retained_count(std::span<const double> saliency, double min_keep, double coverage,
                                  std::size_t multiple) {
  const std::size_t m = saliency.size();
  if (m == 0) return 0;
  std::vector<double> sorted(saliency.begin(), saliency.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
  const double target = coverage * total;
  std::size_t k = 0;
  double mass = 0;
  while (k < m && (k == 0 || mass < target)) mass += sorted[k++];
  const auto floor_count = static_cast<std::size_t>(std::ceil(min_keep * static_cast<double>(m) - 1e-12));
  k = std::max(k, floor_count);
  if (multiple > 1) k = (k + multiple - 1) / multiple * multiple;
  return std::clamp<std::size_t>(k, std::min(multiple, m), m);
}

/// Marks the `retained_count` most salient anchors as kept (ties broken by
/// lower index). Dropped anchors leave the compact stream.
template <class T>
void retention_floor(AggregationResult<T>& res, double min_keep, double coverage, std::size_t multiple) {
  if (!(min_keep >= 0 && min_keep <= 1)) throw num::ContractError("retention_floor: min_keep outside [0,1]");
  if (!(coverage > 0 && coverage <= 1)) throw num::ContractError("retention_floor: coverage outside (0,1]");
  res.saliency = anchor_saliency<T>(res.weights, res.patch_norms);
  const std::size_t keep = retained_count(res.saliency, min_keep, coverage, multiple);
  std::vector<std::size_t> order(res.saliency.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return res.saliency[a] > res.saliency[b]; });
  res.kept.assign(res.saliency.size(), false);
  for (std::size_t i = 0; i < keep; ++i) res.kept[order[i]] = true;
}

}  // namespace cvlm::civic
