#include "unroll/losses.hpp"

#include "unroll/error.hpp"
#include "unroll/log.hpp"

#include <cmath>

namespace unroll {

std::vector<double> stage_weights(std::size_t stages, int offset)
{
  std::vector<double> w(stages);
  for (std::size_t i = 0; i < stages; ++i) { w[i] = std::log(static_cast<double>(i + 1) + offset); }
  return w;
}

double weighted_stage_distance(const std::vector<Matrix> &student, const std::vector<Matrix> &teacher, int offset,
                               std::vector<Matrix> *d_student)
{
  require(student.size() == teacher.size(), Errc::invalid_configuration,
          "stage lists differ in length: " + std::to_string(student.size()) + " vs " +
            std::to_string(teacher.size()));
  if (d_student) { d_student->assign(student.size(), Matrix()); }
  if (student.empty()) { return 0.0; }
  auto const batch = static_cast<double>(student.front().cols());
  auto const weights = stage_weights(student.size(), offset);

  double total = 0.0;
  for (std::size_t i = 0; i < student.size(); ++i) {
    require_shape(student[i].rows(), student[i].cols(), teacher[i].rows(), teacher[i].cols(), "stage entry");
    if (weights[i] == 0.0) { continue; }
    Matrix const diff = student[i] - teacher[i];
    Eigen::RowVectorXd const norms = diff.colwise().norm();
    total += weights[i] * norms.sum();
    if (d_student) {
      Matrix d = Matrix::Zero(diff.rows(), diff.cols());
      for (Eigen::Index j = 0; j < diff.cols(); ++j) {
        if (norms[j] > 0.0) { d.col(j) = (weights[i] / (batch * norms[j])) * diff.col(j); }
      }
      (*d_student)[i] = std::move(d);
    }
  }
  return total / batch;
}

double recon_loss_mse(const Matrix &x_hat, const Matrix &x, Matrix *d_x_hat)
{
  require_shape(x_hat.rows(), x_hat.cols(), x.rows(), x.cols(), "reconstruction");
  auto const count = static_cast<double>(x.size());
  Matrix const diff = x_hat - x;
  if (d_x_hat) { *d_x_hat = (2.0 / count) * diff; }
  return diff.squaredNorm() / count;
}

Matrix zero_forcing(const DetectionBatch &batch)
{
  Eigen::Index const n = batch.aty.rows();
  Matrix out(n, batch.size());
  std::vector<Eigen::LDLT<Matrix>> factors;
  std::vector<bool> singular;
  for (auto const &g : batch.gram) {
    Eigen::LDLT<Matrix> ldlt(g);
    bool const bad = ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
                     ldlt.vectorD().minCoeff() <= 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff());
    factors.push_back(std::move(ldlt));
    singular.push_back(bad);
  }
  bool warned = false;
  for (Eigen::Index j = 0; j < batch.size(); ++j) {
    std::size_t const k = batch.gram.size() == 1 ? 0 : static_cast<std::size_t>(j);
    if (singular[k]) {
      if (!warned) {
        log::warn("singular Gram matrix in zero-forcing reference; using pseudo-inverse");
        warned = true;
      }
      Eigen::CompleteOrthogonalDecomposition<Matrix> cod(batch.gram[k]);
      out.col(j) = cod.solve(batch.aty.col(j));
    } else {
      out.col(j) = factors[k].solve(batch.aty.col(j));
    }
  }
  return out;
}

double recon_loss_detnet(const StageTrace &trace, const Matrix &x, const Matrix &zf, int offset,
                         std::vector<Matrix> *d_estimates)
{
  require(trace.stages() >= 1, Errc::invalid_configuration, "trace must hold at least one stage");
  require_shape(zf.rows(), zf.cols(), x.rows(), x.cols(), "zero-forcing reference");
  auto const batch = static_cast<double>(x.cols());
  Eigen::RowVectorXd const denom = (x - zf).colwise().squaredNorm().cwiseMax(1e-12);
  auto const weights = stage_weights(trace.stages(), offset);
  if (d_estimates) { d_estimates->assign(trace.stages(), Matrix()); }

  double total = 0.0;
  for (std::size_t l = 0; l < trace.stages(); ++l) {
    auto const &est = trace.estimates[l];
    require_shape(est.rows(), est.cols(), x.rows(), x.cols(), "stage estimate");
    Matrix const diff = est - x;
    total += weights[l] * diff.colwise().squaredNorm().cwiseQuotient(denom).sum();
    if (d_estimates) {
      Matrix d = diff;
      for (Eigen::Index j = 0; j < d.cols(); ++j) { d.col(j) *= 2.0 * weights[l] / (batch * denom[j]); }
      (*d_estimates)[l] = std::move(d);
    }
  }
  return total / batch;
}

} // namespace unroll
