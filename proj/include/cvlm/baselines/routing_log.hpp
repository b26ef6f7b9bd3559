#pragma once

#include <cstddef>
#include <vector>

namespace cvlm::baselines {

enum class RouteOp { score, select, gather, scatter_unmerge, restore };

inline const char* to_string(RouteOp op) {
  switch (op) {
    case RouteOp::score: return "score";
    case RouteOp::select: return "select";
    case RouteOp::gather: return "gather";
    case RouteOp::scatter_unmerge: return "scatter_unmerge";
    case RouteOp::restore: return "restore";
  }
  return "unknown";
}

struct RouteEntry {
  RouteOp op;
  double ms;
  std::size_t elements;
};

class RoutingOpLog {
 public:
  void append(RouteOp op, double ms, std::size_t elements) { entries_.push_back({op, ms, elements}); }
  const std::vector<RouteEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  double total() const {
    double t = 0;
    for (const auto& e : entries_) t += e.ms;
    return t;
  }

 private:
  std::vector<RouteEntry> entries_;
};

/// C_route = Σ c(o) over logged routing operations.
inline double route_cost(const RoutingOpLog& log) { return log.total(); }

}  // namespace cvlm::baselines
