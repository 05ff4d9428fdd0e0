#pragma once

#include <Eigen/Dense>

#include <vector>

namespace unroll {

/// Per-stage estimates and fidelity gradients of one forward pass. Each
/// entry is n x batch; column j belongs to sample j.
struct StageTrace {
  std::vector<Eigen::MatrixXd> estimates;
  std::vector<Eigen::MatrixXd> gradients;

  std::size_t stages() const { return estimates.size(); }
};

/// Loss sensitivities with respect to a StageTrace. Empty matrices mean
/// "no contribution" for that stage.
struct TraceAdjoint {
  std::vector<Eigen::MatrixXd> d_estimates;
  std::vector<Eigen::MatrixXd> d_gradients;

  explicit TraceAdjoint(std::size_t stages = 0)
    : d_estimates(stages)
    , d_gradients(stages)
  {
  }
};

inline void accumulate(Eigen::MatrixXd &target, const Eigen::MatrixXd &delta)
{
  if (delta.size() == 0) { return; }
  if (target.size() == 0) {
    target = delta;
  } else {
    target += delta;
  }
}

} // namespace unroll
