#pragma once

// DetNet: unrolled projected gradient descent for BPSK MIMO detection.
//
//   q  = [A^T y; x; A^T A x; v]
//   z  = relu(W1 q + b1)
//   x+ = psi_t(W2 z + b2)
//   v+ = W3 z + b3
//
// from x = 0, v = 0. Products use coefficient-wise evaluation so a batch
// column is bit-identical to the same sample evaluated alone.

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "unroll/error.hpp"
#include "unroll/trace.hpp"

namespace unroll {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Piecewise-linear soft sign -1 + relu(v + t)/t - relu(v - t)/t, evaluated
/// as clamp(v / t, -1, 1) so saturation is exact in floating point.
template <class Derived> Matrix psi_t(const Eigen::MatrixBase<Derived> &v, double t)
{
  if (!(t > 0.0)) { throw Error(Errc::invalid_parameter, "soft-sign threshold must be positive"); }
  return (v.derived().array() / t).cwiseMax(-1.0).cwiseMin(1.0).matrix();
}

/// d psi_t / d v: 1/t strictly inside (-t, t), 0 outside.
template <class Derived> Matrix psi_t_slope(const Eigen::MatrixBase<Derived> &v, double t)
{
  return (v.derived().array().abs() < t).select(Matrix::Constant(v.rows(), v.cols(), 1.0 / t),
                                               Matrix::Zero(v.rows(), v.cols()));
}

/// Sign with sign(0) = +1.
template <class Derived> Matrix hard_decision(const Eigen::MatrixBase<Derived> &soft)
{
  return (soft.derived().array() >= 0.0).select(Matrix::Ones(soft.rows(), soft.cols()),
                                                -Matrix::Ones(soft.rows(), soft.cols()));
}

struct DetNetStageParams {
  Matrix w1; // hidden x (3n + aux)
  Vector b1;
  Matrix w2; // n x hidden
  Vector b2;
  Matrix w3; // aux x hidden
  Vector b3;

  Eigen::Index parameter_count() const
  {
    return w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size();
  }
};

struct DetNetParams {
  std::vector<DetNetStageParams> stages;
  Eigen::Index n = 0;
  Eigen::Index hidden = 0;
  Eigen::Index aux = 0;
  double t = 0.5;

  Eigen::Index parameter_count() const;
  DetNetParams zeros_like() const;
};

struct DetNetInit {
  int stages = 20;
  Eigen::Index hidden = 0; // 0 selects 4n
  Eigen::Index aux = 0;    // 0 selects n
  double t = 0.5;
};

DetNetParams init_detnet_params(Eigen::Index n, const DetNetInit &init, std::uint64_t seed);

/// What a detector sees of a batch: A_k^T y per column and the Gram matrix
/// A_k^T A_k, either shared (one entry) or one per column.
struct DetectionBatch {
  Matrix aty;
  std::vector<Matrix> gram;

  Eigen::Index size() const { return aty.cols(); }
  const Matrix &gram_of(Eigen::Index j) const { return gram.size() == 1 ? gram.front() : gram[j]; }
};

/// known holds one shared operator or one per column of y.
DetectionBatch make_detection_batch(const std::vector<Matrix> &known, const Matrix &y);

/// Column-wise A_k^T A_k x - A_k^T y.
Matrix batch_fidelity_gradient(const DetectionBatch &batch, const Matrix &x);

struct DetNetStageOutput {
  Matrix estimate;
  Matrix aux;
  Matrix gradient;
};

DetNetStageOutput detnet_stage(const Matrix &x, const Matrix &v, const DetectionBatch &batch,
                               const DetNetStageParams &params, double t);
DetNetStageOutput detnet_stage(const Vector &x, const Vector &v, const Matrix &known, const Vector &y,
                               const DetNetStageParams &params, double t);

struct DetNetForward {
  Matrix estimate;
  StageTrace trace;
  std::vector<Matrix> x_in;   // estimate entering each stage
  std::vector<Matrix> aux_in; // auxiliary entering each stage
};

DetNetForward detnet_forward(const DetectionBatch &batch, const DetNetParams &params);
DetNetForward detnet_forward(const Matrix &y, const Matrix &known, const DetNetParams &params);

DetNetParams detnet_backward(const DetectionBatch &batch, const DetNetParams &params, const DetNetForward &fwd,
                             const TraceAdjoint &adjoint);

/// Flat parameter vector (per stage: W1, b1, W2, b2, W3, b3).
Vector pack(const DetNetParams &params);
void unpack(const Eigen::Ref<const Vector> &flat, DetNetParams &params);

// "DET1", u32 L, u32 n, u32 h, u32 v, f64 t, then per stage row-major
// W1, b1, W2, b2, W3, b3.
void write_detnet(std::ostream &out, const DetNetParams &params);
DetNetParams read_detnet(std::istream &in);

} // namespace unroll
