#include <doctest.h>

#include "oracles.hpp"
#include "unroll/random.hpp"
#include "unroll/sensing.hpp"

#include <sstream>

using namespace unroll;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) { return standard_noise(r, c, seed); }

} // namespace

TEST_CASE("Hadamard rows are orthogonal and start with the constant row")
{
  Matrix const h4 = build_hadamard_cake_cutting(4, 4);
  CHECK((h4 * h4.transpose()).isApprox(4.0 * Matrix::Identity(4, 4), 0.0));
  CHECK((h4.row(0).array() == 1.0).all());

  Matrix const h = build_hadamard_cake_cutting(64, 64);
  CHECK((h * h.transpose() - 64.0 * Matrix::Identity(64, 64)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((h.array().abs() == 1.0).all());
}

TEST_CASE("cake-cutting order matches a flood-fill block count with stable sort")
{
  for (int n : {16, 64}) {
    int const side = n == 16 ? 4 : 8;
    oracle::Mat const h = oracle::sylvester(n);
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) { order[i] = i; }
    std::vector<int> blocks(n);
    for (int i = 0; i < n; ++i) { blocks[i] = oracle::block_count(h[i], side); }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return blocks[a] < blocks[b]; });

    Matrix const got = build_hadamard_cake_cutting(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) { REQUIRE(got(i, j) == h[order[i]][j]); }
    }
    Matrix const partial = build_hadamard_cake_cutting(n, n / 4);
    CHECK(partial == got.topRows(n / 4));
  }
}

TEST_CASE("Hadamard argument errors")
{
  auto code = [](auto &&f) {
    try {
      f();
    } catch (const Error &e) {
      return e.code();
    }
    return Errc::io_error;
  };
  CHECK(code([] { build_hadamard_cake_cutting(8, 4); }) == Errc::invalid_dimension);
  CHECK(code([] { build_hadamard_cake_cutting(12, 4); }) == Errc::invalid_dimension);
  CHECK(code([] { build_hadamard_cake_cutting(16, 17); }) == Errc::invalid_snapshot_count);
  CHECK(code([] { build_hadamard_cake_cutting(16, 0); }) == Errc::invalid_snapshot_count);
}

TEST_CASE("unknown part: zeros at sigma 0, variance, determinism")
{
  CHECK(sample_unknown(5, 7, 0.0, 3).isZero(0.0));
  CHECK_THROWS_AS(sample_unknown(2, 2, -0.1, 1), Error);

  Matrix const u = sample_unknown(1000, 1000, 0.5, 99);
  double const mean = u.mean();
  double const var = (u.array() - mean).square().sum() / static_cast<double>(u.size() - 1);
  CHECK(std::abs(var - 0.25) < 0.05 * 0.25);
  CHECK(std::abs(mean) < 0.01);
  CHECK(sample_unknown(30, 20, 0.5, 99) == u.topLeftCorner(30, 20));
  CHECK(sample_unknown(30, 20, 0.5, 98) != u.topLeftCorner(30, 20));
}

TEST_CASE("composite operator is known plus unknown")
{
  SensingOperator const op = make_operator(random_matrix(6, 9, 1), 0.3, 4);
  Vector const x = random_matrix(9, 1, 2).col(0);
  CHECK((op.composite() * x - (op.known * x + op.unknown * x)).norm() <= 1e-12);
  CHECK(op.unknown.rows() == 6);
  CHECK(op.unknown.cols() == 9);
  CHECK(forward_measure(op, x, std::nullopt, 0) == op.known * x + op.unknown * x);
  CHECK_THROWS_AS(forward_measure(op, Vector::Zero(8), std::nullopt, 0), Error);
}

TEST_CASE("lifting to real coordinates")
{
  SUBCASE("i times identity")
  {
    ComplexChannel ch{Matrix::Zero(2, 2), Matrix::Identity(2, 2)};
    Eigen::VectorXcd const x = Eigen::VectorXcd::Ones(2);
    LiftedModel const m = lift_complex_to_real(ch, x, Eigen::VectorXcd::Zero(2));
    Vector const y = m.channel * m.signal + m.noise;
    CHECK(y == (Vector(4) << 0, 0, 1, 1).finished());
  }
  SUBCASE("real channel is block diagonal")
  {
    ComplexChannel ch{random_matrix(3, 2, 5), Matrix::Zero(3, 2)};
    Matrix const a = lift_channel(ch);
    CHECK(a.topRightCorner(3, 2).isZero(0.0));
    CHECK(a.bottomLeftCorner(3, 2).isZero(0.0));
    CHECK(a.topLeftCorner(3, 2) == ch.real_part);
    CHECK(a.bottomRightCorner(3, 2) == ch.real_part);
  }
  SUBCASE("random instance matches complex arithmetic")
  {
    Matrix const re = random_matrix(3, 3, 11);
    Matrix const im = random_matrix(3, 3, 12);
    Eigen::VectorXcd x(3), w(3);
    for (int i = 0; i < 3; ++i) {
      x[i] = {keyed_normal(13, i, 0), keyed_normal(13, i, 1)};
      w[i] = {keyed_normal(14, i, 0), keyed_normal(14, i, 1)};
    }
    std::vector<std::complex<double>> yc(3);
    for (int i = 0; i < 3; ++i) {
      std::complex<double> s = w[i];
      for (int j = 0; j < 3; ++j) { s += std::complex<double>(re(i, j), im(i, j)) * x[j]; }
      yc[i] = s;
    }
    LiftedModel const m = lift_complex_to_real({re, im}, x, w);
    Vector const y = m.channel * m.signal + m.noise;
    CHECK(m.channel.rows() == 6);
    CHECK(m.channel.cols() == 6);
    double err = 0.0;
    for (int i = 0; i < 3; ++i) {
      err = std::max(err, std::abs(y[i] - yc[i].real()));
      err = std::max(err, std::abs(y[i + 3] - yc[i].imag()));
    }
    CHECK(err <= 1e-12);
  }
  CHECK_THROWS_AS(lift_complex_to_real({Matrix::Zero(2, 3), Matrix::Zero(2, 3)}, Eigen::VectorXcd::Zero(2),
                                       Eigen::VectorXcd::Zero(2)),
                  Error);
}

TEST_CASE("measurement noise sits at the requested SNR")
{
  SensingOperator const identity = make_operator(Matrix::Identity(3, 3), 0.0, 0);
  Vector const x = (Vector(3) << 1, -2, 0.5).finished();
  CHECK(forward_measure(identity, x, std::nullopt, 1) == x);

  SensingOperator const op = make_operator(random_matrix(16, 8, 21), 0.2, 22);
  double signal = 0.0;
  double noise = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    Vector const xi = random_matrix(8, 1, derive_seed(23, static_cast<std::uint64_t>(trial))).col(0);
    Vector const clean = op.composite() * xi;
    Vector const y = forward_measure(op, xi, 7.0, derive_seed(24, static_cast<std::uint64_t>(trial)));
    signal += clean.squaredNorm();
    noise += (y - clean).squaredNorm();
  }
  CHECK(std::abs(10.0 * std::log10(signal / noise) - 7.0) < 0.3);
  Vector const x8 = random_matrix(8, 1, 25).col(0);
  CHECK(forward_measure(op, x8, 9.0, 5) == forward_measure(op, x8, 9.0, 5));
  CHECK(forward_measure(op, x8, 9.0, 5) != forward_measure(op, x8, 9.0, 6));
}

TEST_CASE("fidelity gradient")
{
  Matrix const eye = Matrix::Identity(2, 2);
  Vector const x = (Vector(2) << 1, 0).finished();
  CHECK(fidelity_gradient(eye, x, x).isZero(0.0));
  CHECK(fidelity_gradient(eye, x, Vector::Zero(2)) == x);

  Matrix const a = random_matrix(5, 8, 31);
  Vector const xt = random_matrix(8, 1, 32).col(0);
  Vector const y = random_matrix(5, 1, 33).col(0);
  Vector const g = fidelity_gradient(a, xt, y);
  double const h = 1e-6;
  double worst = 0.0;
  for (int i = 0; i < 8; ++i) {
    Vector xp = xt, xm = xt;
    xp[i] += h;
    xm[i] -= h;
    double const fd = (fidelity_value(a, xp, y) - fidelity_value(a, xm, y)) / (2 * h);
    worst = std::max(worst, std::abs(fd - g[i]) / std::max(std::abs(g[i]), 1e-12));
  }
  CHECK(worst <= 1e-6);
  CHECK_THROWS_AS(fidelity_gradient(a, Vector::Zero(7), y), Error);
}

TEST_CASE("operator container round trip")
{
  SensingOperator const op = make_operator(random_matrix(4, 6, 41), 0.7, 42);
  std::stringstream buf;
  write_operator(buf, op);
  CHECK(buf.str().size() == 4 + 4 + 4 + 8 + 8 + 2 * 24 * 8);
  CHECK(buf.str().substr(0, 4) == "SOP1");
  SensingOperator const back = read_operator(buf);
  CHECK(back.known == op.known);
  CHECK(back.unknown == op.unknown);
  CHECK(back.sigma == op.sigma);
  CHECK(back.seed == op.seed);

  std::string bytes;
  {
    std::stringstream s;
    write_operator(s, op);
    bytes = s.str();
  }
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_operator(truncated), Error);
  std::stringstream wrong("XXXX" + bytes.substr(4));
  CHECK_THROWS_AS(read_operator(wrong), Error);
}
