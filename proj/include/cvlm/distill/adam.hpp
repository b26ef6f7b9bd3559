#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "cvlm/model/weights.hpp"

namespace cvlm::distill {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive moment estimation over the compact-pathway parameters, no weight decay.
class Adam {
 public:
  Adam(const CivicParams<Matrix>& like, AdamOptions opts) : opts_(opts), m_(zeros(like)), v_(zeros(like)) {}

  void step(CivicParams<Matrix>& params, const CivicParams<Matrix>& grads) {
    ++t_;
    const double c1 = 1 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1 - std::pow(opts_.beta2, static_cast<double>(t_));
    zip_params(
        kCivicPrefix,
        [&](const std::string&, Matrix& p, const Matrix& g, Matrix& m, Matrix& v) {
          for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g.values()[i];
            double& mi = m.values()[i];
            double& vi = v.values()[i];
            mi = opts_.beta1 * mi + (1 - opts_.beta1) * gi;
            vi = opts_.beta2 * vi + (1 - opts_.beta2) * gi * gi;
            p.values()[i] -= opts_.lr * (mi / c1) / (std::sqrt(vi / c2) + opts_.eps);
          }
        },
        params, grads, m_, v_);
  }

  std::size_t steps_taken() const { return t_; }
  const AdamOptions& options() const { return opts_; }

 private:
  static CivicParams<Matrix> zeros(const CivicParams<Matrix>& like) {
    return map_params<Matrix>(like, [](const std::string&, const Matrix& m) { return Matrix(m.rows(), m.cols()); });
  }

  AdamOptions opts_;
  CivicParams<Matrix> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace cvlm::distill
