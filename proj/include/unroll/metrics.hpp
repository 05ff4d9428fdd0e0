#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>

#include "unroll/error.hpp"

namespace unroll {

/// 10 log10(1 / MSE) for signals normalized to peak 1; +inf when MSE = 0.
template <class DA, class DB> double psnr(const Eigen::MatrixBase<DA> &reference, const Eigen::MatrixBase<DB> &estimate)
{
  require_shape(estimate.rows(), estimate.cols(), reference.rows(), reference.cols(), "psnr operands");
  double const mse = (reference - estimate).squaredNorm() / static_cast<double>(reference.size());
  if (mse == 0.0) { return std::numeric_limits<double>::infinity(); }
  return 10.0 * std::log10(1.0 / mse);
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean SSIM over all fully-contained Gaussian windows.
double ssim(const Eigen::MatrixXd &x, const Eigen::MatrixXd &y, const SsimOptions &options = {});

/// Normalized 1-D Gaussian taps.
Eigen::VectorXd gaussian_taps(int window, double sigma);

/// Fraction of positions where two +-1 symbol sets differ.
template <class DA, class DB> double ber(const Eigen::MatrixBase<DA> &truth, const Eigen::MatrixBase<DB> &decided)
{
  require_shape(decided.rows(), decided.cols(), truth.rows(), truth.cols(), "ber operands");
  auto const valid = [](double s) { return s == 1.0 || s == -1.0; };
  Eigen::Index errors = 0;
  for (Eigen::Index j = 0; j < truth.cols(); ++j) {
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
      double const a = truth(i, j);
      double const b = decided(i, j);
      if (!valid(a) || !valid(b)) { throw Error(Errc::invalid_symbol, "BER operands must be +-1"); }
      errors += a != b;
    }
  }
  return truth.size() == 0 ? 0.0 : static_cast<double>(errors) / static_cast<double>(truth.size());
}

} // namespace unroll
