#pragma once

#include <string>
#include <type_traits>

#include "cvlm/distill/alignment.hpp"
#include "cvlm/numkit/autodiff.hpp"
#include "cvlm/numkit/tensor.hpp"

namespace cvlm::distill {

/// (λ T² / |I_t|) Σ_i KL(softmax(ℓ_t^i / T) ‖ softmax(ℓ_s^{π(i)} / T)).
/// Generic over Matrix and Var; the teacher side never carries gradient.
template <class X>
X kl_loss(const X& teacher_logits, const X& student_logits, const AlignmentMap& map, double temperature,
          double weight) {
  if (teacher_logits.cols() != student_logits.cols()) {
    throw num::DimensionError("kl_loss: teacher vocab " + std::to_string(teacher_logits.cols()) +
                              " vs student vocab " + std::to_string(student_logits.cols()));
  }
  if (map.size() == 0) throw num::ContractError("kl_loss: empty alignment");
  const double inv_t = 1.0 / temperature;
  X t = scale(gather_rows(teacher_logits, map.teacher), inv_t);
  X s = scale(gather_rows(student_logits, map.student), inv_t);
  auto kl = sum_all(hadamard(softmax_rows(t), sub(log_softmax_rows(t), log_softmax_rows(s))));
  const double c = weight * temperature * temperature / static_cast<double>(map.size());
  if constexpr (std::is_same_v<decltype(kl), X>)
    return scale(kl, c);
  else
    return X(1, 1, static_cast<typename X::value_type>(kl * c));
}

inline num::Var kl_loss(const num::Matrix& teacher_logits, const num::Var& student_logits, const AlignmentMap& map,
                        double temperature, double weight) {
  return kl_loss(student_logits.tape()->constant(teacher_logits), student_logits, map, temperature, weight);
}

}  // namespace cvlm::distill
