#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace unroll {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive moment estimation over a flat parameter vector. An optional
/// per-coordinate scale multiplies each step (a diagonal reparametrization).
class Adam {
public:
  Adam(Eigen::Index size, AdamOptions options = {})
    : options_(options)
    , m_(Eigen::VectorXd::Zero(size))
    , v_(Eigen::VectorXd::Zero(size))
  {
  }

  void step(Eigen::VectorXd &params, const Eigen::VectorXd &grad, double lr, const Eigen::VectorXd *scales = nullptr)
  {
    ++t_;
    m_ = options_.beta1 * m_ + (1.0 - options_.beta1) * grad;
    v_ = options_.beta2 * v_ + (1.0 - options_.beta2) * grad.cwiseAbs2();
    double const c1 = 1.0 - std::pow(options_.beta1, t_);
    double const c2 = 1.0 - std::pow(options_.beta2, t_);
    Eigen::ArrayXd update = (m_.array() / c1) / ((v_.array() / c2).sqrt() + options_.epsilon);
    if (scales) { update *= scales->array(); }
    params.array() -= lr * update;
  }

  long steps() const { return t_; }

private:
  AdamOptions options_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long t_ = 0;
};

/// lr * decay^floor(step / every); every <= 0 disables decay.
inline double step_decay_lr(double lr, double decay, int every, long step)
{
  if (every <= 0) { return lr; }
  return lr * std::pow(decay, static_cast<double>(step / every));
}

} // namespace unroll
