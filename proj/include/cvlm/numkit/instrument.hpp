#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cvlm::num {

/// Multiply-accumulate counts keyed by region label. Counts only grow.
class MacCounter {
 public:
  void add(const std::string& region, std::uint64_t macs) { counts_[region] += macs; }

  std::uint64_t at(const std::string& region) const {
    auto it = counts_.find(region);
    return it == counts_.end() ? 0 : it->second;
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& [_, n] : counts_) t += n;
    return t;
  }

  const std::map<std::string, std::uint64_t>& counts() const { return counts_; }

 private:
  std::map<std::string, std::uint64_t> counts_;
};

struct ShapeRecord {
  std::string region;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Shapes of every buffer produced by a kernel while attached.
class ShapeTrace {
 public:
  void record(const std::string& region, std::size_t rows, std::size_t cols) {
    records_.push_back({region, rows, cols});
  }
  const std::vector<ShapeRecord>& records() const { return records_; }

 private:
  std::vector<ShapeRecord> records_;
};

inline constexpr const char* kUnlabeled = "unlabeled";

namespace detail {

struct ProbeState {
  MacCounter* macs = nullptr;
  ShapeTrace* shapes = nullptr;
  const char* region = kUnlabeled;
};

inline ProbeState& probe() {
  thread_local ProbeState state;
  return state;
}

}  // namespace detail

/// Called by every kernel with its output shape and MAC count.
inline void note_op(std::size_t rows, std::size_t cols, std::uint64_t macs) {
  auto& p = detail::probe();
  if (p.macs != nullptr && macs != 0) p.macs->add(p.region, macs);
  if (p.shapes != nullptr) p.shapes->record(p.region, rows, cols);
}

/// Attaches a counter and/or shape trace to the current thread for its lifetime.
class Instrumentation {
 public:
  explicit Instrumentation(MacCounter* macs, ShapeTrace* shapes = nullptr)
      : saved_(detail::probe()) {
    detail::probe().macs = macs;
    detail::probe().shapes = shapes;
  }
  ~Instrumentation() {
    detail::probe().macs = saved_.macs;
    detail::probe().shapes = saved_.shapes;
  }
  Instrumentation(const Instrumentation&) = delete;
  Instrumentation& operator=(const Instrumentation&) = delete;

 private:
  detail::ProbeState saved_;
};

/// Labels kernel work issued within its scope. The label must outlive the scope
/// (string literals in practice).
class Region {
 public:
  explicit Region(const char* label) : saved_(detail::probe().region) {
    detail::probe().region = label;
  }
  ~Region() { detail::probe().region = saved_; }
  Region(const Region&) = delete;
  Region& operator=(const Region&) = delete;

 private:
  const char* saved_;
};

}  // namespace cvlm::num
