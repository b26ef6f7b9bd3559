#pragma once

#include <algorithm>
#include <cstddef>
#include <span>

// Reductions with a fixed 16-lane layout: lane l accumulates elements
// i ≡ l (mod 16) of the leading multiple of 16, lanes are then combined in
// order and the tail is added last. Deterministic for a given length, and
// the lane loop vectorizes where a single running sum is latency-bound.

namespace cvlm::num {

inline constexpr std::size_t kReduceLanes = 16;

template <class T, class F>
T lane_reduce(std::span<const T> v, F&& term) {
  constexpr std::size_t L = kReduceLanes;
  T acc[L] = {};
  std::size_t i = 0;
  for (; i + L <= v.size(); i += L)
    for (std::size_t l = 0; l < L; ++l) acc[l] += term(v[i + l]);
  T s = 0;
  for (std::size_t l = 0; l < L; ++l) s += acc[l];
  for (; i < v.size(); ++i) s += term(v[i]);
  return s;
}

template <class T>
T lane_sum(std::span<const T> v) {
  return lane_reduce(v, [](T x) { return x; });
}

/// Σ (v_i − c)².
template <class T>
T lane_sum_sq(std::span<const T> v, T c = T{0}) {
  return lane_reduce(v, [c](T x) { return (x - c) * (x - c); });
}

/// Σ a_i b_i with the same lane layout.
template <class T>
T lane_dot(std::span<const T> a, std::span<const T> b) {
  constexpr std::size_t L = kReduceLanes;
  T acc[L] = {};
  std::size_t i = 0;
  for (; i + L <= a.size(); i += L)
    for (std::size_t l = 0; l < L; ++l) acc[l] += a[i + l] * b[i + l];
  T s = 0;
  for (std::size_t l = 0; l < L; ++l) s += acc[l];
  for (; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Largest element of a non-empty span.
template <class T>
T lane_max(std::span<const T> v) {
  constexpr std::size_t L = kReduceLanes;
  if (v.size() < L) return *std::max_element(v.begin(), v.end());
  T acc[L];
  std::copy_n(v.begin(), L, acc);
  std::size_t i = L;
  for (; i + L <= v.size(); i += L)
    for (std::size_t l = 0; l < L; ++l) acc[l] = std::max(acc[l], v[i + l]);
  T m = *std::max_element(acc, acc + L);
  for (; i < v.size(); ++i) m = std::max(m, v[i]);
  return m;
}

}  // namespace cvlm::num
