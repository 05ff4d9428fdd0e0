#include "unroll/metrics.hpp"

namespace unroll {

namespace {

// Valid-mode separable filtering: rows then columns.
Eigen::MatrixXd filter_valid(const Eigen::MatrixXd &img, const Eigen::VectorXd &taps)
{
  Eigen::Index const w = taps.size();
  Eigen::Index const out_r = img.rows() - w + 1;
  Eigen::Index const out_c = img.cols() - w + 1;
  Eigen::MatrixXd horiz(img.rows(), out_c);
  for (Eigen::Index c = 0; c < out_c; ++c) { horiz.col(c) = img.middleCols(c, w) * taps; }
  Eigen::MatrixXd out(out_r, out_c);
  for (Eigen::Index r = 0; r < out_r; ++r) { out.row(r) = taps.transpose() * horiz.middleRows(r, w); }
  return out;
}

} // namespace

Eigen::VectorXd gaussian_taps(int window, double sigma)
{
  Eigen::VectorXd taps(window);
  double const center = (window - 1) / 2.0;
  for (int i = 0; i < window; ++i) {
    double const d = i - center;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  return taps / taps.sum();
}

double ssim(const Eigen::MatrixXd &x, const Eigen::MatrixXd &y, const SsimOptions &options)
{
  require_shape(y.rows(), y.cols(), x.rows(), x.cols(), "ssim operands");
  require(x.rows() >= options.window && x.cols() >= options.window, Errc::invalid_dimension,
          "image smaller than the SSIM window");
  Eigen::VectorXd const taps = gaussian_taps(options.window, options.sigma);
  double const c1 = std::pow(options.k1 * options.dynamic_range, 2);
  double const c2 = std::pow(options.k2 * options.dynamic_range, 2);

  auto const xa = x.array();
  auto const ya = y.array();
  Eigen::ArrayXXd const mu_x = filter_valid(x, taps).array();
  Eigen::ArrayXXd const mu_y = filter_valid(y, taps).array();
  Eigen::ArrayXXd const sxx = filter_valid((xa * xa).matrix(), taps).array() - mu_x * mu_x;
  Eigen::ArrayXXd const syy = filter_valid((ya * ya).matrix(), taps).array() - mu_y * mu_y;
  Eigen::ArrayXXd const sxy = filter_valid((xa * ya).matrix(), taps).array() - mu_x * mu_y;

  Eigen::ArrayXXd const map = ((2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)) /
                              ((mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2));
  return map.mean();
}

} // namespace unroll
