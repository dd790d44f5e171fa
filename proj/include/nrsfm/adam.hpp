#pragma once

#include <Eigen/Core>

#include <cmath>

namespace nrsfm {

struct AdamConfig {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment estimates for one parameter block.
class AdamMoments {
 public:
  AdamMoments() = default;
  AdamMoments(Eigen::Index rows, Eigen::Index cols)
      : m_(Eigen::MatrixXd::Zero(rows, cols)), v_(Eigen::MatrixXd::Zero(rows, cols)) {}

  /// One bias-corrected Adam update of `param` in place; `step` counts from 1.
  template <typename Param, typename Grad>
  void update(Param&& param, const Grad& grad, double lr, const AdamConfig& cfg, long step) {
    m_ = cfg.beta1 * m_ + (1.0 - cfg.beta1) * grad;
    v_ = cfg.beta2 * v_ + (1.0 - cfg.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    param.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg.epsilon);
  }

 private:
  Eigen::MatrixXd m_;
  Eigen::MatrixXd v_;
};

}  // namespace nrsfm
