#include "unroll/detnet.hpp"

#include "unroll/binary_io.hpp"
#include "unroll/random.hpp"

#include <cmath>
#include <istream>
#include <ostream>

namespace unroll {

namespace {

Eigen::Index input_size(const DetNetParams &p) { return 3 * p.n + p.aux; }

void check_stage(const DetNetStageParams &s, Eigen::Index n, Eigen::Index hidden, Eigen::Index aux)
{
  require_shape(s.w1.rows(), s.w1.cols(), hidden, 3 * n + aux, "W1");
  require(s.b1.size() == hidden, Errc::invalid_dimension, "b1 length");
  require_shape(s.w2.rows(), s.w2.cols(), n, hidden, "W2");
  require(s.b2.size() == n, Errc::invalid_dimension, "b2 length");
  require_shape(s.w3.rows(), s.w3.cols(), aux, hidden, "W3");
  require(s.b3.size() == aux, Errc::invalid_dimension, "b3 length");
}

void fill_uniform(Matrix &m, double bound, CounterRng &rng)
{
  for (Eigen::Index k = 0; k < m.size(); ++k) { m(k) = rng.uniform(-bound, bound); }
}

Vector stacked_input(const DetectionBatch &batch, const Matrix &x, const Matrix &v, Eigen::Index j, Vector &gx)
{
  Eigen::Index const n = x.rows();
  Vector xj = x.col(j);
  gx.noalias() = batch.gram_of(j) * xj;
  Vector q(3 * n + v.rows());
  q.segment(0, n) = batch.aty.col(j);
  q.segment(n, n) = xj;
  q.segment(2 * n, n) = gx;
  q.segment(3 * n, v.rows()) = v.col(j);
  return q;
}

struct StageCache {
  DetNetStageOutput out;
  Matrix hidden_pre;
  Matrix out_pre;
};

StageCache run_stage(const Matrix &x, const Matrix &v, const DetectionBatch &batch, const DetNetStageParams &p,
                     double t)
{
  Eigen::Index const n = x.rows();
  Eigen::Index const b = x.cols();
  require(batch.aty.rows() == n && batch.aty.cols() == b, Errc::invalid_dimension,
          "estimate batch does not match the detection batch");
  require(v.cols() == b, Errc::invalid_dimension, "auxiliary batch size mismatch");
  check_stage(p, n, p.w1.rows(), v.rows());
  require(t > 0.0, Errc::invalid_parameter, "soft-sign threshold must be positive");

  StageCache c;
  c.hidden_pre.resize(p.w1.rows(), b);
  c.out_pre.resize(n, b);
  c.out.aux.resize(p.w3.rows(), b);
  c.out.gradient.resize(n, b);
  Vector gx(n);
  Vector pre(p.w1.rows());
  Vector z(p.w1.rows());
  Vector xo(n);
  Vector vo(p.w3.rows());
  for (Eigen::Index j = 0; j < b; ++j) {
    Vector const q = stacked_input(batch, x, v, j, gx);
    c.out.gradient.col(j) = gx - batch.aty.col(j);
    pre.noalias() = p.w1 * q;
    pre += p.b1;
    z = pre.cwiseMax(0.0);
    xo.noalias() = p.w2 * z;
    xo += p.b2;
    vo.noalias() = p.w3 * z;
    vo += p.b3;
    c.hidden_pre.col(j) = pre;
    c.out_pre.col(j) = xo;
    c.out.aux.col(j) = vo;
  }
  c.out.estimate = psi_t(c.out_pre, t);
  return c;
}

} // namespace

Eigen::Index DetNetParams::parameter_count() const
{
  Eigen::Index total = 0;
  for (auto const &s : stages) { total += s.parameter_count(); }
  return total;
}

DetNetParams DetNetParams::zeros_like() const
{
  DetNetParams z = *this;
  for (auto &s : z.stages) {
    s.w1.setZero();
    s.b1.setZero();
    s.w2.setZero();
    s.b2.setZero();
    s.w3.setZero();
    s.b3.setZero();
  }
  return z;
}

DetNetParams init_detnet_params(Eigen::Index n, const DetNetInit &init, std::uint64_t seed)
{
  require(init.stages >= 1, Errc::invalid_configuration, "DetNet needs at least one stage");
  require(n >= 1, Errc::invalid_dimension, "DetNet signal size must be positive");
  require(init.t > 0.0, Errc::invalid_parameter, "soft-sign threshold must be positive");
  DetNetParams p;
  p.n = n;
  p.hidden = init.hidden > 0 ? init.hidden : 4 * n;
  p.aux = init.aux > 0 ? init.aux : n;
  p.t = init.t;
  double const in_bound = 1.0 / std::sqrt(static_cast<double>(input_size(p)));
  double const hid_bound = 1.0 / std::sqrt(static_cast<double>(p.hidden));
  for (int l = 0; l < init.stages; ++l) {
    CounterRng rng(derive_seed(seed, "detnet-init"), static_cast<std::uint64_t>(l));
    DetNetStageParams s;
    s.w1.resize(p.hidden, input_size(p));
    s.w2.resize(p.n, p.hidden);
    s.w3.resize(p.aux, p.hidden);
    fill_uniform(s.w1, in_bound, rng);
    fill_uniform(s.w2, hid_bound, rng);
    fill_uniform(s.w3, hid_bound, rng);
    s.b1 = Vector::Zero(p.hidden);
    s.b2 = Vector::Zero(p.n);
    s.b3 = Vector::Zero(p.aux);
    p.stages.push_back(std::move(s));
  }
  return p;
}

DetectionBatch make_detection_batch(const std::vector<Matrix> &known, const Matrix &y)
{
  require(known.size() == 1 || known.size() == static_cast<std::size_t>(y.cols()), Errc::invalid_dimension,
          "need one shared operator or one per measurement column");
  DetectionBatch batch;
  Eigen::Index const n = known.front().cols();
  batch.aty.resize(n, y.cols());
  for (auto const &a : known) {
    require(a.rows() == y.rows() && a.cols() == n, Errc::invalid_dimension, "operator shape mismatch in batch");
    batch.gram.push_back(a.transpose() * a);
  }
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    const Matrix &a = known.size() == 1 ? known.front() : known[j];
    Vector const yj = y.col(j);
    batch.aty.col(j) = a.transpose() * yj;
  }
  return batch;
}

Matrix batch_fidelity_gradient(const DetectionBatch &batch, const Matrix &x)
{
  require_shape(x.rows(), x.cols(), batch.aty.rows(), batch.aty.cols(), "estimate batch");
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Vector const xj = x.col(j);
    g.col(j) = batch.gram_of(j) * xj - batch.aty.col(j);
  }
  return g;
}

DetNetStageOutput detnet_stage(const Matrix &x, const Matrix &v, const DetectionBatch &batch,
                               const DetNetStageParams &params, double t)
{
  return run_stage(x, v, batch, params, t).out;
}

DetNetStageOutput detnet_stage(const Vector &x, const Vector &v, const Matrix &known, const Vector &y,
                               const DetNetStageParams &params, double t)
{
  require(known.cols() == x.size() && known.rows() == y.size(), Errc::invalid_dimension,
          "operator does not match estimate and measurement");
  DetectionBatch const batch = make_detection_batch({known}, y);
  return run_stage(x, v, batch, params, t).out;
}

DetNetForward detnet_forward(const DetectionBatch &batch, const DetNetParams &params)
{
  require(!params.stages.empty(), Errc::invalid_configuration, "DetNet has no stages");
  require(batch.aty.rows() == params.n, Errc::invalid_dimension, "batch signal size != network signal size");
  DetNetForward fwd;
  Matrix x = Matrix::Zero(params.n, batch.size());
  Matrix v = Matrix::Zero(params.aux, batch.size());
  for (auto const &stage : params.stages) {
    StageCache c = run_stage(x, v, batch, stage, params.t);
    fwd.x_in.push_back(std::move(x));
    fwd.aux_in.push_back(std::move(v));
    fwd.trace.gradients.push_back(std::move(c.out.gradient));
    x = c.out.estimate;
    v = std::move(c.out.aux);
    fwd.trace.estimates.push_back(std::move(c.out.estimate));
  }
  fwd.estimate = fwd.trace.estimates.back();
  return fwd;
}

DetNetForward detnet_forward(const Matrix &y, const Matrix &known, const DetNetParams &params)
{
  return detnet_forward(make_detection_batch({known}, y), params);
}

DetNetParams detnet_backward(const DetectionBatch &batch, const DetNetParams &params, const DetNetForward &fwd,
                             const TraceAdjoint &adjoint)
{
  auto const stages = params.stages.size();
  require(fwd.x_in.size() == stages && adjoint.d_estimates.size() == stages &&
            adjoint.d_gradients.size() == stages,
          Errc::invalid_configuration, "trace and adjoint lengths must equal the stage count");
  Eigen::Index const n = params.n;
  Eigen::Index const b = batch.size();

  DetNetParams grad = params.zeros_like();
  Matrix d_x = Matrix::Zero(n, b);
  Matrix d_v = Matrix::Zero(params.aux, b);
  Matrix q(input_size(params), b);
  Vector gx(n);
  for (std::size_t idx = stages; idx-- > 0;) {
    auto const &p = params.stages[idx];
    auto &g = grad.stages[idx];
    // Recomputing the stage is cheaper than caching every pre-activation.
    StageCache const c = run_stage(fwd.x_in[idx], fwd.aux_in[idx], batch, p, params.t);
    for (Eigen::Index j = 0; j < b; ++j) { q.col(j) = stacked_input(batch, fwd.x_in[idx], fwd.aux_in[idx], j, gx); }
    Matrix const z = c.hidden_pre.cwiseMax(0.0);

    Matrix d_out = d_x;
    if (adjoint.d_estimates[idx].size() != 0) { d_out += adjoint.d_estimates[idx]; }
    Matrix const d_pre = d_out.cwiseProduct(psi_t_slope(c.out_pre, params.t));

    g.w2.noalias() += d_pre * z.transpose();
    g.b2 += d_pre.rowwise().sum();
    g.w3.noalias() += d_v * z.transpose();
    g.b3 += d_v.rowwise().sum();

    Matrix d_hidden = p.w2.transpose() * d_pre;
    d_hidden.noalias() += p.w3.transpose() * d_v;
    d_hidden.array() *= (c.hidden_pre.array() > 0.0).cast<double>();
    g.w1.noalias() += d_hidden * q.transpose();
    g.b1 += d_hidden.rowwise().sum();

    Matrix const d_q = p.w1.transpose() * d_hidden;
    Matrix d_gx = d_q.middleRows(2 * n, n);
    if (adjoint.d_gradients[idx].size() != 0) { d_gx += adjoint.d_gradients[idx]; }
    Matrix new_dx = d_q.middleRows(n, n);
    for (Eigen::Index j = 0; j < b; ++j) { new_dx.col(j).noalias() += batch.gram_of(j) * d_gx.col(j); }
    d_x = std::move(new_dx);
    d_v = d_q.bottomRows(params.aux);
  }
  return grad;
}

Vector pack(const DetNetParams &params)
{
  Vector flat(params.parameter_count());
  Eigen::Index at = 0;
  auto put = [&](const auto &block) {
    flat.segment(at, block.size()) = Eigen::Map<const Vector>(block.data(), block.size());
    at += block.size();
  };
  for (auto const &s : params.stages) {
    put(s.w1);
    put(s.b1);
    put(s.w2);
    put(s.b2);
    put(s.w3);
    put(s.b3);
  }
  return flat;
}

void unpack(const Eigen::Ref<const Vector> &flat, DetNetParams &params)
{
  require(flat.size() == params.parameter_count(), Errc::invalid_dimension, "flat DetNet parameter size mismatch");
  Eigen::Index at = 0;
  auto take = [&](auto &block) {
    Eigen::Map<Vector>(block.data(), block.size()) = flat.segment(at, block.size());
    at += block.size();
  };
  for (auto &s : params.stages) {
    take(s.w1);
    take(s.b1);
    take(s.w2);
    take(s.b2);
    take(s.w3);
    take(s.b3);
  }
}

void write_detnet(std::ostream &out, const DetNetParams &params)
{
  require(!params.stages.empty(), Errc::invalid_configuration, "cannot serialize an empty network");
  binary::put_magic(out, "DET1");
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.stages.size()));
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.n));
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.hidden));
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.aux));
  binary::put_le<double>(out, params.t);
  for (auto const &s : params.stages) {
    binary::put_matrix(out, s.w1);
    binary::put_matrix(out, s.b1.transpose());
    binary::put_matrix(out, s.w2);
    binary::put_matrix(out, s.b2.transpose());
    binary::put_matrix(out, s.w3);
    binary::put_matrix(out, s.b3.transpose());
  }
}

DetNetParams read_detnet(std::istream &in)
{
  binary::expect_magic(in, "DET1");
  DetNetParams p;
  auto const stages = binary::get_le<std::uint32_t>(in);
  p.n = binary::get_le<std::uint32_t>(in);
  p.hidden = binary::get_le<std::uint32_t>(in);
  p.aux = binary::get_le<std::uint32_t>(in);
  p.t = binary::get_le<double>(in);
  for (std::uint32_t l = 0; l < stages; ++l) {
    DetNetStageParams s;
    s.w1 = binary::get_matrix(in, p.hidden, input_size(p));
    s.b1 = binary::get_matrix(in, 1, p.hidden).transpose();
    s.w2 = binary::get_matrix(in, p.n, p.hidden);
    s.b2 = binary::get_matrix(in, 1, p.n).transpose();
    s.w3 = binary::get_matrix(in, p.aux, p.hidden);
    s.b3 = binary::get_matrix(in, 1, p.aux).transpose();
    p.stages.push_back(std::move(s));
  }
  return p;
}

} // namespace unroll
