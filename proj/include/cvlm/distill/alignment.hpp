#pragma once

#include <cstddef>
#include <vector>

#include "cvlm/model/config.hpp"

namespace cvlm::distill {

/// Text rows of the teacher (dense) sequence and the student (compact) rows
/// they map to. Visual rows appear in neither list.
struct AlignmentMap {
  std::vector<std::size_t> teacher;  // I_t
  std::vector<std::size_t> student;  // π(I_t)

  std::size_t size() const { return teacher.size(); }
};

/// π(i) = i before the visual span and i − (T_p − M_p) after it.
inline AlignmentMap build_alignment(std::size_t text_len, std::size_t text_prefix, std::size_t dense_span,
                                    std::size_t compact_span) {
  if (compact_span > dense_span) throw ConfigError("alignment: compact span longer than dense span");
  AlignmentMap m;
  const std::size_t shift = dense_span - compact_span;
  for (std::size_t i = 0; i < text_prefix; ++i) {
    m.teacher.push_back(i);
    m.student.push_back(i);
  }
  for (std::size_t i = text_prefix + dense_span; i < text_len + dense_span; ++i) {
    m.teacher.push_back(i);
    m.student.push_back(i - shift);
  }
  return m;
}

inline AlignmentMap build_alignment(const PipelineConfig& cfg, std::size_t compact_span) {
  return build_alignment(cfg.text_len, cfg.text_prefix, cfg.prefill_visual_tokens(), compact_span);
}

}  // namespace cvlm::distill
