#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cvlm/numkit/instrument.hpp"

namespace cvlm {

/// Stage timings and footprint of a single pipeline run.
struct RunReport {
  double total_ms = 0;
  double vision_enc_ms = 0;
  double proj_ms = 0;
  double prefill_ms = 0;
  double decode_ms = 0;
  double overhead_ms = 0;
  std::size_t prefill_tokens = 0;
  std::size_t visual_tokens_kept = 0;   // visual rows entering the projector
  std::uint64_t kv_cache_bytes = 0;     // after prefill
  std::uint64_t kv_cache_peak_bytes = 0;  // after decoding
  std::map<std::string, std::uint64_t> mac_counts;

  double llm_total_ms() const { return prefill_ms + decode_ms; }
  /// Untimed glue between instrumentation points.
  double residual_ms() const {
    return total_ms - (vision_enc_ms + proj_ms + prefill_ms + decode_ms + overhead_ms);
  }
};

/// Options shared by every pipeline runner.
struct RunOptions {
  std::size_t steps = 0;
  num::MacCounter* macs = nullptr;
  num::ShapeTrace* trace = nullptr;
};

struct RunResult {
  std::vector<std::size_t> tokens;
  RunReport report;
};

/// Monotonic stopwatch; lap() returns ms since the previous lap.
class Stopwatch {
 public:
  using Clock = std::chrono::steady_clock;
  Stopwatch() : start_(Clock::now()), last_(start_) {}

  double lap() {
    const auto now = Clock::now();
    const double ms = std::chrono::duration<double, std::milli>(now - last_).count();
    last_ = now;
    return ms;
  }
  double elapsed() const {
    return std::chrono::duration<double, std::milli>(Clock::now() - start_).count();
  }

 private:
  Clock::time_point start_;
  Clock::time_point last_;
};

}  // namespace cvlm
