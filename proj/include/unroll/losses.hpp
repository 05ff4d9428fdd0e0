#pragma once

// Reconstruction and distillation losses over column batches. Every
// function optionally writes dL/d(first argument) for the reverse pass.

#include <Eigen/Dense>

#include <vector>

#include "unroll/detnet.hpp"
#include "unroll/trace.hpp"

namespace unroll {

using Matrix = Eigen::MatrixXd;

/// ln(i + offset) for i = 1..stages. offset 0 zeroes the first stage.
std::vector<double> stage_weights(std::size_t stages, int offset);

/// Batch mean of sum_i ln(i + offset) ||student[i] - teacher[i]||_2 (unsquared).
/// Teacher entries are constants; only d/d(student) is produced.
double weighted_stage_distance(const std::vector<Matrix> &student, const std::vector<Matrix> &teacher, int offset,
                               std::vector<Matrix> *d_student = nullptr);

/// Gradient-matching distillation loss over per-stage fidelity gradients.
inline double loss_grad(const std::vector<Matrix> &student, const std::vector<Matrix> &teacher, int offset = 0,
                        std::vector<Matrix> *d_student = nullptr)
{
  return weighted_stage_distance(student, teacher, offset, d_student);
}

/// Output-matching distillation loss over per-stage estimates.
inline double loss_output(const std::vector<Matrix> &student, const std::vector<Matrix> &teacher, int offset = 0,
                          std::vector<Matrix> *d_student = nullptr)
{
  return weighted_stage_distance(student, teacher, offset, d_student);
}

/// Mean over batch and entries of (x_hat - x)^2.
double recon_loss_mse(const Matrix &x_hat, const Matrix &x, Matrix *d_x_hat = nullptr);

/// Column-wise (A_k^T A_k)^{-1} A_k^T y; singular Gram matrices fall back
/// to a pseudo-inverse with a logged warning.
Matrix zero_forcing(const DetectionBatch &batch);

/// Batch mean of sum_l ln(l + offset) ||x - x_l||^2 / ||x - x_zf||^2.
double recon_loss_detnet(const StageTrace &trace, const Matrix &x, const Matrix &zf, int offset = 1,
                         std::vector<Matrix> *d_estimates = nullptr);

} // namespace unroll
