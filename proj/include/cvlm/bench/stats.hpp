#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace cvlm::bench {

/// Order statistics of a sample. Quartiles interpolate linearly between
/// order statistics (position q·(n−1)), so the median of an even-sized
/// sample is the mean of the middle pair.
struct Summary {
  double median = 0;
  double q1 = 0;
  double q3 = 0;
  double min = 0;
  double max = 0;

  double iqr() const { return q3 - q1; }
};

inline double quantile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return s[lo] + (s[hi] - s[lo]) * frac;
}

inline Summary summarize(std::vector<double> xs) {
  if (xs.empty()) throw std::invalid_argument("summarize: empty sample");
  std::sort(xs.begin(), xs.end());
  return {quantile_sorted(xs, 0.5), quantile_sorted(xs, 0.25), quantile_sorted(xs, 0.75), xs.front(), xs.back()};
}

inline double median(std::vector<double> xs) { return summarize(std::move(xs)).median; }

}  // namespace cvlm::bench
