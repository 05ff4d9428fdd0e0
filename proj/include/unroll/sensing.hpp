#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>

#include "unroll/error.hpp"

namespace unroll {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A = known + unknown. The unknown part is i.i.d. N(0, sigma^2) keyed on seed.
struct SensingOperator {
  Matrix known;
  Matrix unknown;
  double sigma = 0.0;
  std::uint64_t seed = 0;

  Eigen::Index rows() const { return known.rows(); }
  Eigen::Index cols() const { return known.cols(); }
  Matrix composite() const { return known + unknown; }
};

struct ComplexChannel {
  Matrix real_part;
  Matrix imag_part;
};

/// Real-valued equivalent of y = A x + w for a complex system.
struct LiftedModel {
  Matrix channel;
  Vector signal;
  Vector noise;
};

/// Rows of the Sylvester-Hadamard matrix (n a power of four) in cake-cutting
/// order: ascending count of 4-connected constant-sign regions of each row
/// reshaped to sqrt(n) x sqrt(n), ties kept in natural order.
Matrix build_hadamard_cake_cutting(Eigen::Index n, Eigen::Index m);

/// Full n x n Sylvester-Hadamard matrix for any power of two n.
Matrix sylvester_hadamard(Eigen::Index n);

/// Number of 4-connected constant-sign regions of a row-major side x side pattern.
int count_sign_blocks(const Eigen::Ref<const Vector> &pattern, Eigen::Index side);

Matrix sample_unknown(Eigen::Index rows, Eigen::Index cols, double sigma, std::uint64_t seed);

/// Builds an operator around a known matrix and draws its unknown part.
SensingOperator make_operator(Matrix known, double sigma, std::uint64_t seed);

Matrix lift_channel(const ComplexChannel &channel);
Vector stack_complex(const Eigen::Ref<const Eigen::VectorXcd> &v);
LiftedModel lift_complex_to_real(const ComplexChannel &channel, const Eigen::Ref<const Eigen::VectorXcd> &signal,
                                 const Eigen::Ref<const Eigen::VectorXcd> &noise);

/// y = (known + unknown) x + w. With snr_db set, w is Gaussian with
/// E||w||^2 = ||A x||^2 / 10^(snr_db/10); without it, w = 0.
Vector forward_measure(const SensingOperator &op, const Eigen::Ref<const Vector> &x, std::optional<double> snr_db,
                       std::uint64_t seed);

/// Standard normal matrix keyed on (seed, row, col).
Matrix standard_noise(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);

/// Scales unit-variance draws column by column so that column j of the
/// result sits at snr_db[j] relative to column j of clean.
Matrix scale_noise(const Matrix &clean, const Eigen::Ref<const Vector> &snr_db, const Matrix &standard);

/// A_k^T (A_k x - y), column-wise when x and y hold batches.
template <class DA, class DX, class DY>
Matrix fidelity_gradient(const Eigen::MatrixBase<DA> &known, const Eigen::MatrixBase<DX> &x,
                         const Eigen::MatrixBase<DY> &y)
{
  if (known.cols() != x.rows() || known.rows() != y.rows() || x.cols() != y.cols()) {
    throw Error(Errc::invalid_dimension, "fidelity_gradient: operator " + std::to_string(known.rows()) + "x" +
                                           std::to_string(known.cols()) + " with x of " + std::to_string(x.rows()) +
                                           " and y of " + std::to_string(y.rows()));
  }
  Matrix residual = known * x;
  residual -= y;
  return known.transpose() * residual;
}

/// 1/2 ||y - A_k x||^2
template <class DA, class DX, class DY>
double fidelity_value(const Eigen::MatrixBase<DA> &known, const Eigen::MatrixBase<DX> &x,
                      const Eigen::MatrixBase<DY> &y)
{
  return 0.5 * (y - known * x).squaredNorm();
}

// Binary container: "SOP1", u32 m, u32 n, f64 sigma, u64 seed, then A_k and
// A_u row-major, all little-endian.
void write_operator(std::ostream &out, const SensingOperator &op);
SensingOperator read_operator(std::istream &in);
void save_operator(const std::filesystem::path &path, const SensingOperator &op);
SensingOperator load_operator(const std::filesystem::path &path);

} // namespace unroll
