#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include "cvlm/numkit/tensor.hpp"

namespace cvlm::num {

/// Seeded generator; the only source of randomness in the engine.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal(double stddev = 1.0) { return std::normal_distribution<double>(0.0, stddev)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  std::uint64_t next() { return engine_(); }

  Matrix gaussian(std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (auto& v : m.values()) v = normal(stddev);
    return m;
  }
  Matrix uniform(std::size_t rows, std::size_t cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (auto& v : m.values()) v = uniform(lo, hi);
    return m;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace cvlm::num
