#include "unroll/admm_net.hpp"

#include "unroll/binary_io.hpp"
#include "unroll/error.hpp"
#include "unroll/random.hpp"
#include "unroll/sensing.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

namespace unroll {

namespace {

constexpr int kTaps = 9;

Eigen::Index side_of(Eigen::Index n)
{
  auto const side = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(n))));
  require(side * side == n, Errc::invalid_dimension, "denoiser needs a square image, n = " + std::to_string(n));
  return side;
}

/// neighbors[p * 9 + k] is the pixel read by tap k at p, or -1 outside the image.
std::vector<Eigen::Index> neighbor_table(Eigen::Index side)
{
  std::vector<Eigen::Index> table(static_cast<std::size_t>(side * side * kTaps));
  for (Eigen::Index r = 0; r < side; ++r) {
    for (Eigen::Index c = 0; c < side; ++c) {
      Eigen::Index const p = r * side + c;
      for (int k = 0; k < kTaps; ++k) {
        Eigen::Index const rr = r + k / 3 - 1;
        Eigen::Index const cc = c + k % 3 - 1;
        bool const inside = rr >= 0 && rr < side && cc >= 0 && cc < side;
        table[p * kTaps + k] = inside ? rr * side + cc : -1;
      }
    }
  }
  return table;
}

// patches(k, j * n + p) = v(neighbor(p, k), j). flip reads tap 8 - k, the
// adjoint of the shift: neighbor(p, k) = q exactly when neighbor(q, 8 - k) = p.
Matrix gather_taps(const std::vector<Eigen::Index> &nbr, const Matrix &v, bool flip = false)
{
  Eigen::Index const n = v.rows();
  Matrix patches(kTaps, n * v.cols());
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    double const *src = v.col(j).data();
    double *dst = patches.data() + j * n * kTaps;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (int k = 0; k < kTaps; ++k) {
        Eigen::Index const q = nbr[p * kTaps + (flip ? kTaps - 1 - k : k)];
        dst[p * kTaps + k] = q < 0 ? 0.0 : src[q];
      }
    }
  }
  return patches;
}

// out(p, j) += sum_k taps(k, j * n + neighbor(p, k)); flip as in gather_taps.
void sum_taps(const std::vector<Eigen::Index> &nbr, const Matrix &taps, Matrix &out, bool flip = false)
{
  Eigen::Index const n = out.rows();
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    double const *src = taps.data() + j * n * kTaps;
    double *dst = out.col(j).data();
    for (Eigen::Index p = 0; p < n; ++p) {
      double acc = 0.0;
      for (int k = 0; k < kTaps; ++k) {
        Eigen::Index const q = nbr[p * kTaps + (flip ? kTaps - 1 - k : k)];
        if (q >= 0) { acc += src[q * kTaps + k]; }
      }
      dst[p] += acc;
    }
  }
}

void check_denoiser(const ConvDenoiser &d, const Matrix &v)
{
  require(v.rows() == d.signal_size(), Errc::invalid_dimension,
          "denoiser input has " + std::to_string(v.rows()) + " rows, expected " + std::to_string(d.signal_size()));
}

} // namespace

ConvDenoiser ConvDenoiser::zeros(Eigen::Index side, Eigen::Index channels)
{
  ConvDenoiser d;
  d.side = side;
  d.w1 = Matrix::Zero(channels, kTaps);
  d.b1 = Vector::Zero(channels);
  d.w2 = Matrix::Zero(channels, kTaps);
  d.b2 = 0.0;
  return d;
}

// Columns per block, sized so the per-block temporaries stay cache resident.
constexpr Eigen::Index kBlock = 2;

Matrix denoiser_apply(const ConvDenoiser &d, const Matrix &v)
{
  check_denoiser(d, v);
  auto const nbr = neighbor_table(d.side);
  Matrix out = v;
  for (Eigen::Index j0 = 0; j0 < v.cols(); j0 += kBlock) {
    Eigen::Index const cols = std::min(kBlock, v.cols() - j0);
    Matrix hidden = d.w1 * gather_taps(nbr, v.middleCols(j0, cols));
    hidden.colwise() += d.b1;
    hidden = hidden.cwiseMax(0.0);
    Matrix const taps = d.w2.transpose() * hidden; // taps(k, q): tap k's response to pixel q
    Matrix block = out.middleCols(j0, cols);
    sum_taps(nbr, taps, block);
    out.middleCols(j0, cols) = block;
  }
  out.array() += d.b2;
  return out;
}

Matrix denoiser_backward(const ConvDenoiser &d, const Matrix &v, const Matrix &d_out, ConvDenoiser &grad)
{
  check_denoiser(d, v);
  require_shape(d_out.rows(), d_out.cols(), v.rows(), v.cols(), "denoiser output sensitivity");
  auto const nbr = neighbor_table(d.side);
  Matrix d_v = d_out;
  grad.b2 += d_out.sum();
  for (Eigen::Index j0 = 0; j0 < v.cols(); j0 += kBlock) {
    Eigen::Index const cols = std::min(kBlock, v.cols() - j0);
    Matrix const patches = gather_taps(nbr, v.middleCols(j0, cols));
    Matrix pre = d.w1 * patches;
    pre.colwise() += d.b1;
    Matrix const hidden = pre.cwiseMax(0.0);

    // spread(k, q) = d_out at the pixel whose tap k reads q
    Matrix const spread = gather_taps(nbr, d_out.middleCols(j0, cols), true);
    grad.w2.noalias() += hidden * spread.transpose();
    Matrix d_hidden = d.w2 * spread;
    d_hidden.array() *= (pre.array() > 0.0).cast<double>();
    grad.b1 += d_hidden.rowwise().sum();
    grad.w1.noalias() += d_hidden * patches.transpose();

    Matrix block = d_v.middleCols(j0, cols);
    sum_taps(nbr, d.w1.transpose() * d_hidden, block, true);
    d_v.middleCols(j0, cols) = block;
  }
  return d_v;
}

Eigen::Index AdmmParams::parameter_count() const
{
  Eigen::Index total = 0;
  for (auto const &s : stages) { total += 2 + s.denoiser.parameter_count(); }
  return total;
}

AdmmParams AdmmParams::zeros_like() const
{
  AdmmParams z;
  z.stages.reserve(stages.size());
  for (auto const &s : stages) {
    z.stages.push_back({0.0, 0.0, ConvDenoiser::zeros(s.denoiser.side, s.denoiser.channels())});
  }
  return z;
}

AdmmParams init_admm_params(Eigen::Index n, double lipschitz, const AdmmInit &init, std::uint64_t seed)
{
  require(init.stages >= 1, Errc::invalid_configuration, "ADMM network needs at least one stage");
  require(init.channels >= 1, Errc::invalid_configuration, "denoiser needs at least one channel");
  require(lipschitz > 0.0 && std::isfinite(lipschitz), Errc::invalid_parameter, "operator norm must be positive");
  Eigen::Index const side = side_of(n);
  double const bound = 1.0 / std::sqrt(static_cast<double>(kTaps));

  AdmmParams params;
  for (int l = 0; l < init.stages; ++l) {
    AdmmStageParams stage;
    stage.alpha = init.alpha_scaled / lipschitz;
    stage.rho = init.rho_scaled * lipschitz;
    stage.denoiser = ConvDenoiser::zeros(side, init.channels);
    CounterRng rng(derive_seed(seed, "admm-init"), static_cast<std::uint64_t>(l));
    for (Eigen::Index k = 0; k < stage.denoiser.w1.size(); ++k) { stage.denoiser.w1(k) = rng.uniform(-bound, bound); }
    params.stages.push_back(std::move(stage));
  }
  return params;
}

double operator_norm_squared(const Matrix &known)
{
  Matrix const gram = known.rows() <= known.cols() ? Matrix(known * known.transpose())
                                                   : Matrix(known.transpose() * known);
  Eigen::SelfAdjointEigenSolver<Matrix> solver(gram, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().maxCoeff();
}

AdmmState init_state(const Matrix &y, const Matrix &known)
{
  require(y.rows() == known.rows(), Errc::invalid_dimension,
          "measurement has " + std::to_string(y.rows()) + " rows, operator has " + std::to_string(known.rows()));
  AdmmState s;
  s.x_est = known.transpose() * y;
  s.u = Matrix::Zero(s.x_est.rows(), s.x_est.cols());
  s.z = s.x_est;
  return s;
}

AdmmStageOutput admm_stage(const AdmmState &state, const AdmmStageParams &params, const Matrix &known,
                           const Matrix &y)
{
  require_shape(state.u.rows(), state.u.cols(), state.x_est.rows(), state.x_est.cols(), "dual variable");
  require(state.x_est.rows() == known.cols(), Errc::invalid_dimension, "estimate length != operator columns");

  AdmmStageOutput out;
  out.state.z = denoiser_apply(params.denoiser, state.x_est + state.u);
  out.gradient = fidelity_gradient(known, state.x_est, y);
  out.state.x_est =
    state.x_est - params.alpha * (out.gradient - params.rho * (state.x_est - out.state.z + state.u));
  out.state.u = state.u + out.state.x_est - out.state.z;
  out.estimate = out.state.x_est;
  return out;
}

AdmmForward admm_forward(const Matrix &y, const Matrix &known, const AdmmParams &params)
{
  require(!params.stages.empty(), Errc::invalid_configuration, "ADMM network has no stages");
  AdmmForward fwd;
  AdmmState state = init_state(y, known);
  for (auto const &stage : params.stages) {
    AdmmStageOutput out = admm_stage(state, stage, known, y);
    state.z = out.state.z;
    fwd.inputs.push_back(std::move(state));
    fwd.trace.estimates.push_back(std::move(out.estimate));
    fwd.trace.gradients.push_back(std::move(out.gradient));
    state = std::move(out.state);
  }
  fwd.estimate = fwd.trace.estimates.back();
  return fwd;
}

AdmmParams admm_backward(const Matrix &y, const Matrix &known, const AdmmParams &params, const AdmmForward &fwd,
                         const TraceAdjoint &adjoint)
{
  (void)y;
  auto const stages = params.stages.size();
  require(fwd.inputs.size() == stages && adjoint.d_estimates.size() == stages &&
            adjoint.d_gradients.size() == stages,
          Errc::invalid_configuration, "trace and adjoint lengths must equal the stage count");

  AdmmParams grad = params.zeros_like();
  Matrix d_x = Matrix::Zero(fwd.estimate.rows(), fwd.estimate.cols());
  Matrix d_u = d_x;
  for (std::size_t idx = stages; idx-- > 0;) {
    auto const &p = params.stages[idx];
    auto const &in = fwd.inputs[idx];
    auto const &g = fwd.trace.gradients[idx];
    auto &gs = grad.stages[idx];

    Matrix d_next = d_x;
    if (adjoint.d_estimates[idx].size() != 0) { d_next += adjoint.d_estimates[idx]; }
    // u+ = u + x+ - z+ routes its sensitivity through x+ too.
    Matrix const d_next_eff = d_next + d_u;
    Matrix const residual = in.x_est - in.z + in.u;
    double const ar = p.alpha * p.rho;

    gs.alpha = ((p.rho * residual - g).cwiseProduct(d_next_eff)).sum();
    gs.rho = p.alpha * residual.cwiseProduct(d_next_eff).sum();

    Matrix d_g = -p.alpha * d_next_eff;
    if (adjoint.d_gradients[idx].size() != 0) { d_g += adjoint.d_gradients[idx]; }
    Matrix const d_z = -ar * d_next_eff - d_u;
    Matrix new_dx = (1.0 + ar) * d_next_eff;
    Matrix new_du = ar * d_next_eff + d_u;
    new_dx.noalias() += known.transpose() * (known * d_g);

    Matrix const d_v = denoiser_backward(p.denoiser, in.x_est + in.u, d_z, gs.denoiser);
    new_dx += d_v;
    new_du += d_v;
    d_x = std::move(new_dx);
    d_u = std::move(new_du);
  }
  return grad;
}

Vector pack(const AdmmParams &params)
{
  Vector flat(params.parameter_count());
  Eigen::Index at = 0;
  auto put = [&](const auto &block) {
    flat.segment(at, block.size()) = Eigen::Map<const Vector>(block.data(), block.size());
    at += block.size();
  };
  for (auto const &s : params.stages) {
    flat[at++] = s.alpha;
    flat[at++] = s.rho;
    put(s.denoiser.w1);
    put(s.denoiser.b1);
    put(s.denoiser.w2);
    flat[at++] = s.denoiser.b2;
  }
  return flat;
}

void unpack(const Eigen::Ref<const Vector> &flat, AdmmParams &params)
{
  require(flat.size() == params.parameter_count(), Errc::invalid_dimension, "flat ADMM parameter size mismatch");
  Eigen::Index at = 0;
  auto take = [&](auto &block) {
    Eigen::Map<Vector>(block.data(), block.size()) = flat.segment(at, block.size());
    at += block.size();
  };
  for (auto &s : params.stages) {
    s.alpha = flat[at++];
    s.rho = flat[at++];
    take(s.denoiser.w1);
    take(s.denoiser.b1);
    take(s.denoiser.w2);
    s.denoiser.b2 = flat[at++];
  }
}

Vector step_scales(const AdmmParams &params, double lipschitz)
{
  Vector scales = Vector::Ones(params.parameter_count());
  Eigen::Index at = 0;
  for (auto const &s : params.stages) {
    scales[at] = 1.0 / lipschitz;
    scales[at + 1] = lipschitz;
    at += 2 + s.denoiser.parameter_count();
  }
  return scales;
}

void write_admm(std::ostream &out, const AdmmParams &params)
{
  require(!params.stages.empty(), Errc::invalid_configuration, "cannot serialize an empty network");
  binary::put_magic(out, "ADM1");
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.stages.size()));
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.signal_size()));
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.channels()));
  for (auto const &s : params.stages) {
    binary::put_le<double>(out, s.alpha);
    binary::put_le<double>(out, s.rho);
    binary::put_matrix(out, s.denoiser.w1);
    binary::put_matrix(out, s.denoiser.b1.transpose());
    binary::put_matrix(out, s.denoiser.w2);
    binary::put_le<double>(out, s.denoiser.b2);
  }
}

AdmmParams read_admm(std::istream &in)
{
  binary::expect_magic(in, "ADM1");
  auto const stages = binary::get_le<std::uint32_t>(in);
  auto const n = binary::get_le<std::uint32_t>(in);
  auto const c = binary::get_le<std::uint32_t>(in);
  Eigen::Index const side = side_of(n);
  AdmmParams params;
  for (std::uint32_t l = 0; l < stages; ++l) {
    AdmmStageParams s;
    s.alpha = binary::get_le<double>(in);
    s.rho = binary::get_le<double>(in);
    s.denoiser.side = side;
    s.denoiser.w1 = binary::get_matrix(in, c, kTaps);
    s.denoiser.b1 = binary::get_matrix(in, 1, c).transpose();
    s.denoiser.w2 = binary::get_matrix(in, c, kTaps);
    s.denoiser.b2 = binary::get_le<double>(in);
    params.stages.push_back(std::move(s));
  }
  return params;
}

} // namespace unroll
