#pragma once

// ADMM-inspired unrolled network for single-pixel-camera recovery.
//
// Stage l maps (x, u) to
//   z+ = D(x + u)
//   g  = A_k^T (A_k x - y)
//   x+ = x - alpha (g - rho (x - z+ + u))
//   u+ = u + x+ - z+
// starting from x = A_k^T y, u = 0. D is a residual 3x3 conv block per stage.
// All signals are column batches: n x batch.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "unroll/trace.hpp"

namespace unroll {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// out = v + conv2(relu(conv1(v))), zero-padded 3x3 correlations on a
/// side x side image. conv1 has `channels` outputs; conv2 folds them to one.
struct ConvDenoiser {
  Eigen::Index side = 0;
  Matrix w1; // channels x 9, tap k = (dr + 1) * 3 + (dc + 1)
  Vector b1; // channels
  Matrix w2; // channels x 9
  double b2 = 0.0;

  Eigen::Index channels() const { return w1.rows(); }
  Eigen::Index signal_size() const { return side * side; }
  Eigen::Index parameter_count() const { return w1.size() + b1.size() + w2.size() + 1; }
  static ConvDenoiser zeros(Eigen::Index side, Eigen::Index channels);
};

Matrix denoiser_apply(const ConvDenoiser &d, const Matrix &v);

/// Accumulates weight gradients into grad and returns dL/dv.
Matrix denoiser_backward(const ConvDenoiser &d, const Matrix &v, const Matrix &d_out, ConvDenoiser &grad);

struct AdmmStageParams {
  double alpha = 0.0;
  double rho = 0.0;
  ConvDenoiser denoiser;
};

struct AdmmParams {
  std::vector<AdmmStageParams> stages;

  Eigen::Index signal_size() const { return stages.empty() ? 0 : stages.front().denoiser.signal_size(); }
  Eigen::Index channels() const { return stages.empty() ? 0 : stages.front().denoiser.channels(); }
  Eigen::Index parameter_count() const;
  /// Same shapes, every entry zero.
  AdmmParams zeros_like() const;
};

struct AdmmInit {
  int stages = 10;
  Eigen::Index channels = 16;
  /// Initial alpha and rho as multiples of 1/L and L, L = ||A_k||_2^2.
  double alpha_scaled = 1.0;
  double rho_scaled = 0.1;
};

/// Fan-in uniform conv1 weights, zero biases, zero conv2 (identity denoiser).
AdmmParams init_admm_params(Eigen::Index n, double lipschitz, const AdmmInit &init, std::uint64_t seed);

/// Largest eigenvalue of A^T A.
double operator_norm_squared(const Matrix &known);

struct AdmmState {
  Matrix x_est;
  Matrix z;
  Matrix u;
};

AdmmState init_state(const Matrix &y, const Matrix &known);

struct AdmmStageOutput {
  AdmmState state;
  Matrix estimate;
  Matrix gradient;
};

AdmmStageOutput admm_stage(const AdmmState &state, const AdmmStageParams &params, const Matrix &known,
                           const Matrix &y);

struct AdmmForward {
  Matrix estimate;
  StageTrace trace;
  /// inputs[l] is the state entering stage l; z is the stage-l auxiliary output.
  std::vector<AdmmState> inputs;
};

AdmmForward admm_forward(const Matrix &y, const Matrix &known, const AdmmParams &params);

/// Reverse pass. adjoint carries dL/d(trace entries); the final estimate is
/// trace.estimates.back(), so dL/dx_hat belongs in adjoint.d_estimates.back().
AdmmParams admm_backward(const Matrix &y, const Matrix &known, const AdmmParams &params, const AdmmForward &fwd,
                         const TraceAdjoint &adjoint);

/// Flat parameter vector (per stage: alpha, rho, w1, b1, w2, b2).
Vector pack(const AdmmParams &params);
void unpack(const Eigen::Ref<const Vector> &flat, AdmmParams &params);

/// Per-coordinate step multipliers for the optimizer: 1/L for alpha, L for
/// rho, 1 elsewhere, so every coordinate moves on an O(1) scale.
Vector step_scales(const AdmmParams &params, double lipschitz);

// "ADM1", u32 L, u32 n, u32 C, then per stage f64 alpha, f64 rho and the
// denoiser weights row-major in the order w1, b1, w2, b2.
void write_admm(std::ostream &out, const AdmmParams &params);
AdmmParams read_admm(std::istream &in);

} // namespace unroll
