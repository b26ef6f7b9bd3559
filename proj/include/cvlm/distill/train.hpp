#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvlm/civic/compact.hpp"
#include "cvlm/distill/adam.hpp"
#include "cvlm/distill/alignment.hpp"
#include "cvlm/distill/kl.hpp"
#include "cvlm/distill/synthetic.hpp"
#include "cvlm/model/dense.hpp"
#include "cvlm/numkit/autodiff.hpp"

namespace cvlm::distill {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Defaults come from the calibration run on the toy config: smaller train
// sets overfit and larger learning rates stall the held-out loss.
struct TrainOptions {
  std::size_t steps = 200;
  AdamOptions adam{.lr = 3e-4};
  std::size_t train_samples = 128;
  std::size_t heldout_samples = 32;
  std::uint64_t data_seed = 1;
};

struct TrainRecord {
  std::size_t step = 0;
  double train_loss = 0;
  double heldout_loss = 0;
};

struct TrainState {
  CivicParams<Matrix> phi;
  std::size_t step = 0;
  std::vector<TrainRecord> history;
};

/// Dense-teacher logits at every position of one sample. θ is frozen, so
/// these are computed once and reused.
inline std::vector<Matrix> teacher_logits(const std::vector<DistillSample>& data, const ModelWeights<Matrix>& theta,
                                          const PipelineConfig& cfg) {
  std::vector<Matrix> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(dense_forward_logits<Matrix>(s.input.patches, s.prompt, theta, cfg));
  return out;
}

/// Mean distillation loss over `data` with all anchors kept (no tape).
inline double evaluate(const std::vector<DistillSample>& data, const std::vector<Matrix>& teacher,
                       const ModelWeights<Matrix>& theta, const CivicParams<Matrix>& phi, const PipelineConfig& cfg) {
  const auto map = build_alignment(cfg, cfg.compact_prefill_tokens());
  double total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto student = civic::compact_forward_logits<Matrix>(data[i].input.patches, data[i].prompt, theta, phi, cfg);
    total += kl_loss(teacher[i], student, map, cfg.kl_temperature, cfg.kl_weight)(0, 0);
  }
  return total / static_cast<double>(data.size());
}

struct LossAndGrad {
  double loss = 0;
  CivicParams<Matrix> grad;
};

/// Full-batch loss (mean over samples) and its gradient with respect to φ.
/// θ enters the tape as constants and never receives a gradient.
inline LossAndGrad loss_and_grad(const std::vector<DistillSample>& data, const std::vector<Matrix>& teacher,
                                 const ModelWeights<Matrix>& theta, const CivicParams<Matrix>& phi,
                                 const PipelineConfig& cfg) {
  using num::Var;
  num::Tape tape;
  auto theta_v = map_weights<Var>(theta, [&](const std::string&, const Matrix& m) { return tape.constant(m); });
  auto phi_v = map_params<Var>(phi, [&](const std::string&, const Matrix& m) { return tape.leaf(m); });
  const auto map = build_alignment(cfg, cfg.compact_prefill_tokens());

  std::vector<Var> per_sample;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Var patches = tape.constant(data[i].input.patches);
    Var student = civic::compact_forward_logits<Var>(patches, data[i].prompt, theta_v, phi_v, cfg);
    per_sample.push_back(kl_loss(teacher[i], student, map, cfg.kl_temperature, cfg.kl_weight));
  }
  Var loss = scale(sum_all(concat_rows(per_sample)), 1.0 / static_cast<double>(data.size()));
  auto grads = tape.backward(loss);

  LossAndGrad out;
  out.loss = loss.value()(0, 0);
  out.grad = map_params<Matrix>(phi_v, [&](const std::string&, const Var& v) {
    const Matrix* g = grads.find(v);
    return g != nullptr ? *g : Matrix(v.rows(), v.cols());
  });
  return out;
}

inline double squared_norm(const CivicParams<Matrix>& p) {
  double s = 0;
  zip_params(kCivicPrefix, [&](const std::string&, const Matrix& m) {
    for (double v : m.values()) s += v * v;
  }, p);
  return s;
}

inline std::string norms_report(const CivicParams<Matrix>& p) {
  std::ostringstream os;
  zip_params(kCivicPrefix, [&](const std::string& n, const Matrix& m) {
    double s = 0;
    for (double v : m.values()) s += v * v;
    os << ' ' << n << '=' << std::sqrt(s);
  }, p);
  return os.str();
}

/// Optimizes φ against the frozen teacher θ. Each step is one full-batch
/// Adam update. history[k] holds the losses after k updates, so it has
/// steps + 1 rows. `on_record` is called as each row is produced.
template <class OnRecord>
TrainState train(const ModelWeights<Matrix>& theta, CivicParams<Matrix> phi, const PipelineConfig& cfg,
                 const TrainOptions& opts, OnRecord&& on_record) {
  cfg.validate();
  auto train_set = gen_synthetic(opts.data_seed, opts.train_samples, cfg);
  auto heldout = gen_synthetic(opts.data_seed ^ 0x5bd1e995ULL, opts.heldout_samples, cfg);
  const auto train_teacher = teacher_logits(train_set, theta, cfg);
  const auto heldout_teacher = teacher_logits(heldout, theta, cfg);

  TrainState state;
  Adam adam(phi, opts.adam);
  for (std::size_t k = 0;; ++k) {
    auto lg = loss_and_grad(train_set, train_teacher, theta, phi, cfg);
    const double held = evaluate(heldout, heldout_teacher, theta, phi, cfg);
    if (!std::isfinite(lg.loss) || !std::isfinite(held) || !std::isfinite(squared_norm(lg.grad))) {
      throw TrainingError("non-finite loss at step " + std::to_string(k) + " (train " + std::to_string(lg.loss) +
                          ", held-out " + std::to_string(held) + "); parameter norms:" + norms_report(phi));
    }
    state.history.push_back({k, lg.loss, held});
    on_record(state.history.back());
    if (k == opts.steps) break;
    adam.step(phi, lg.grad);
  }
  state.phi = std::move(phi);
  state.step = opts.steps;
  return state;
}

inline TrainState train(const ModelWeights<Matrix>& theta, CivicParams<Matrix> phi, const PipelineConfig& cfg,
                        const TrainOptions& opts) {
  return train(theta, std::move(phi), cfg, opts, [](const TrainRecord&) {});
}

inline void write_metrics_csv(std::ostream& os, const std::vector<TrainRecord>& history) {
  os << "step,train_loss,heldout_loss\n";
  os.precision(17);
  for (const auto& r : history) os << r.step << ',' << r.train_loss << ',' << r.heldout_loss << '\n';
}

}  // namespace cvlm::distill
