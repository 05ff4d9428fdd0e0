#include <doctest.h>

#include "oracles.hpp"
#include "unroll/detnet.hpp"
#include "unroll/random.hpp"
#include "unroll/sensing.hpp"

#include <sstream>

using namespace unroll;

namespace {

DetNetStageParams random_stage(Eigen::Index n, Eigen::Index h, Eigen::Index v, std::uint64_t seed)
{
  DetNetStageParams s;
  s.w1 = 0.3 * standard_noise(h, 3 * n + v, derive_seed(seed, "w1"));
  s.b1 = 0.1 * standard_noise(h, 1, derive_seed(seed, "b1")).col(0);
  s.w2 = 0.3 * standard_noise(n, h, derive_seed(seed, "w2"));
  s.b2 = 0.1 * standard_noise(n, 1, derive_seed(seed, "b2")).col(0);
  s.w3 = 0.3 * standard_noise(v, h, derive_seed(seed, "w3"));
  s.b3 = 0.1 * standard_noise(v, 1, derive_seed(seed, "b3")).col(0);
  return s;
}

DetNetParams random_params(Eigen::Index n, Eigen::Index h, Eigen::Index v, int stages, std::uint64_t seed)
{
  DetNetParams p;
  p.n = n;
  p.hidden = h;
  p.aux = v;
  p.t = 0.5;
  for (int l = 0; l < stages; ++l) { p.stages.push_back(random_stage(n, h, v, derive_seed(seed, static_cast<std::uint64_t>(l)))); }
  return p;
}

oracle::DetStep run_oracle(const oracle::Vec &x, const oracle::Vec &v, const Matrix &a, const Vector &y,
                           const DetNetStageParams &s, double t)
{
  return oracle::detnet_stage(x, v, oracle::to_mat(a), oracle::to_vec(y), oracle::to_mat(s.w1), oracle::to_vec(s.b1),
                              oracle::to_mat(s.w2), oracle::to_vec(s.b2), oracle::to_mat(s.w3), oracle::to_vec(s.b3), t);
}

double max_abs_diff(const Eigen::VectorXd &a, const oracle::Vec &b)
{
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) { worst = std::max(worst, std::abs(a[i] - b[i])); }
  return worst;
}

} // namespace

TEST_CASE("soft sign examples")
{
  auto one = [](double v, double t) { return psi_t(Matrix::Constant(1, 1, v), t)(0, 0); };
  CHECK(one(0.0, 0.3) == 0.0);
  CHECK(one(2.0, 0.5) == 1.0);
  CHECK(one(-2.0, 0.5) == -1.0);
  CHECK(one(0.25, 0.5) == 0.5);
  CHECK_THROWS_AS(psi_t(Matrix::Zero(1, 1), 0.0), Error);
  CHECK_THROWS_AS(psi_t(Matrix::Zero(1, 1), -1.0), Error);
}

TEST_CASE("soft sign is odd, monotone, bounded and saturates exactly")
{
  for (double t : {0.05, 0.25, 0.5, 1.0, 3.0}) {
    Vector grid = Vector::LinSpaced(4001, -5.0, 5.0);
    Matrix const out = psi_t(grid, t);
    Matrix const neg = psi_t(Vector(-grid), t);
    for (Eigen::Index i = 0; i < grid.size(); ++i) {
      double const v = grid[i];
      CHECK(out(i) == -neg(i));
      CHECK(out(i) >= -1.0);
      CHECK(out(i) <= 1.0);
      if (i > 0) { CHECK(out(i) >= out(i - 1)); }
      if (std::abs(v) >= t) { CHECK(out(i) == (v > 0 ? 1.0 : -1.0)); }
    }
  }
}

TEST_CASE("hard decisions")
{
  CHECK(hard_decision(Vector((Vector(2) << 0.3, -0.7).finished())) == (Vector(2) << 1, -1).finished());
  CHECK(hard_decision(Vector::Zero(2)) == Vector::Ones(2));
  Vector const soft = standard_noise(200, 1, 3).col(0);
  Matrix const d = hard_decision(soft);
  for (Eigen::Index i = 0; i < soft.size(); ++i) {
    double const nearest = std::abs(soft[i] - 1.0) <= std::abs(soft[i] + 1.0) ? 1.0 : -1.0;
    CHECK(d(i) == nearest);
  }
}

TEST_CASE("one stage matches the scripted update")
{
  Eigen::Index const n = 4, h = 8, v = 4;
  Matrix const a = standard_noise(6, n, 1);
  Vector const y = standard_noise(6, 1, 2).col(0);
  DetNetStageParams const s = random_stage(n, h, v, 3);
  Vector const x = psi_t(standard_noise(n, 1, 4).col(0), 0.5);
  Vector const aux = standard_noise(v, 1, 5).col(0);

  DetNetStageOutput const out = detnet_stage(x, aux, a, y, s, 0.5);
  oracle::DetStep const want = run_oracle(oracle::to_vec(x), oracle::to_vec(aux), a, y, s, 0.5);
  CHECK(max_abs_diff(out.estimate.col(0), want.x) <= 1e-10);
  CHECK(max_abs_diff(out.aux.col(0), want.v) <= 1e-10);
  CHECK(max_abs_diff(out.gradient.col(0), want.grad) <= 1e-10);
  CHECK((out.gradient - fidelity_gradient(a, x, y)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("zeroed stage and zero initialization")
{
  Eigen::Index const n = 3, h = 5, v = 2;
  Matrix const a = standard_noise(4, n, 11);
  Vector const y = standard_noise(4, 1, 12).col(0);
  DetNetStageParams s = random_stage(n, h, v, 13);
  s.w1.setZero();
  s.b1.setZero();
  s.w2.setZero();
  s.b2.setZero();
  CHECK(detnet_stage(Vector::Zero(n), Vector::Zero(v), a, y, s, 0.5).estimate.isZero(0.0));

  // From x = 0, v = 0 only the A^T y block of W1 can reach the hidden layer.
  DetNetStageParams probe = random_stage(n, h, v, 14);
  DetNetStageParams masked = probe;
  masked.w1.rightCols(2 * n + v).setZero();
  DetNetStageOutput const full = detnet_stage(Vector::Zero(n), Vector::Zero(v), a, y, probe, 0.5);
  DetNetStageOutput const first = detnet_stage(Vector::Zero(n), Vector::Zero(v), a, y, masked, 0.5);
  CHECK(full.estimate == first.estimate);
  CHECK(full.aux == first.aux);
}

TEST_CASE("forward chains stages from zero")
{
  Eigen::Index const n = 4, h = 8, v = 4;
  Matrix const a = standard_noise(8, n, 21);
  Matrix const y = standard_noise(8, 3, 22);
  DetNetParams const p = random_params(n, h, v, 3, 23);
  DetNetForward const fwd = detnet_forward(y, a, p);
  REQUIRE(fwd.trace.stages() == 3);
  CHECK(fwd.estimate == fwd.trace.estimates.back());
  CHECK(fwd.estimate.cwiseAbs().maxCoeff() <= 1.0);

  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    oracle::Vec x(n, 0.0), aux(v, 0.0);
    for (int l = 0; l < 3; ++l) {
      oracle::DetStep const st = run_oracle(x, aux, a, y.col(j), p.stages[l], p.t);
      CHECK(max_abs_diff(fwd.trace.estimates[l].col(j), st.x) <= 1e-10);
      CHECK(max_abs_diff(fwd.trace.gradients[l].col(j), st.grad) <= 1e-10);
      x = st.x;
      aux = st.v;
    }
  }

  DetNetParams single = p;
  single.stages.resize(1);
  CHECK(detnet_forward(y, a, single).estimate == fwd.trace.estimates.front());
  DetNetParams none = p;
  none.stages.clear();
  CHECK_THROWS_AS(detnet_forward(y, a, none), Error);
}

TEST_CASE("batched evaluation is bit-identical to per-sample evaluation")
{
  Eigen::Index const n = 4;
  DetNetParams const p = random_params(n, 16, 4, 2, 31);
  std::vector<Matrix> known;
  for (int j = 0; j < 5; ++j) { known.push_back(standard_noise(8, n, derive_seed(32, static_cast<std::uint64_t>(j)))); }
  Matrix const y = standard_noise(8, 5, 33);
  Matrix const batched = detnet_forward(make_detection_batch(known, y), p).estimate;
  for (int j = 0; j < 5; ++j) {
    Matrix const alone = detnet_forward(make_detection_batch({known[j]}, y.col(j)), p).estimate;
    CHECK(alone.col(0) == batched.col(j));
  }
  CHECK_THROWS_AS(make_detection_batch({known[0], known[1]}, y), Error);
}

TEST_CASE("initialization defaults and round trips")
{
  DetNetInit init;
  init.stages = 90;
  DetNetParams const p = init_detnet_params(6, init, 1);
  CHECK(p.stages.size() == 90);
  CHECK(p.hidden == 24);
  CHECK(p.aux == 6);
  CHECK(p.t == 0.5);
  CHECK(p.stages[0].w1.rows() == 24);
  CHECK(p.stages[0].w1.cols() == 3 * 6 + 6);
  CHECK(p.stages[0].b1.isZero(0.0));
  CHECK(p.stages[7].w1 != p.stages[8].w1);
  CHECK(init_detnet_params(6, init, 1).stages[40].w2 == p.stages[40].w2);

  DetNetParams const small = random_params(3, 5, 2, 2, 41);
  Vector const flat = pack(small);
  CHECK(flat.size() == small.parameter_count());
  DetNetParams other = small.zeros_like();
  unpack(flat, other);
  CHECK(pack(other) == flat);

  std::stringstream buf;
  write_detnet(buf, small);
  CHECK(buf.str().substr(0, 4) == "DET1");
  DetNetParams const back = read_detnet(buf);
  CHECK(pack(back) == flat);
  CHECK(back.n == 3);
  CHECK(back.hidden == 5);
  CHECK(back.aux == 2);
  CHECK(back.t == 0.5);
  std::stringstream truncated(buf.str().substr(0, 20));
  CHECK_THROWS_AS(read_detnet(truncated), Error);
}
