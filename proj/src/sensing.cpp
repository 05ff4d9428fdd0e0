#include "unroll/sensing.hpp"

#include "unroll/binary_io.hpp"
#include "unroll/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <vector>

namespace unroll {

namespace {

bool is_power_of_two(Eigen::Index n) { return n > 0 && (n & (n - 1)) == 0; }

bool is_power_of_four(Eigen::Index n)
{
  if (!is_power_of_two(n)) { return false; }
  int shift = 0;
  while ((Eigen::Index{1} << shift) < n) { ++shift; }
  return shift % 2 == 0;
}

} // namespace

Matrix sylvester_hadamard(Eigen::Index n)
{
  require(is_power_of_two(n), Errc::invalid_dimension, "Hadamard order must be a power of two");
  Matrix h = Matrix::Ones(1, 1);
  while (h.rows() < n) {
    Eigen::Index const k = h.rows();
    Matrix next(2 * k, 2 * k);
    next << h, h, h, -h;
    h.swap(next);
  }
  return h;
}

int count_sign_blocks(const Eigen::Ref<const Vector> &pattern, Eigen::Index side)
{
  require(pattern.size() == side * side, Errc::invalid_dimension, "pattern does not reshape to side x side");
  std::vector<char> seen(static_cast<std::size_t>(pattern.size()), 0);
  std::vector<Eigen::Index> stack;
  int blocks = 0;
  for (Eigen::Index start = 0; start < pattern.size(); ++start) {
    if (seen[start]) { continue; }
    ++blocks;
    bool const sign = pattern[start] > 0;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      Eigen::Index const p = stack.back();
      stack.pop_back();
      Eigen::Index const r = p / side;
      Eigen::Index const c = p % side;
      auto visit = [&](Eigen::Index q) {
        if (!seen[q] && (pattern[q] > 0) == sign) {
          seen[q] = 1;
          stack.push_back(q);
        }
      };
      if (r > 0) { visit(p - side); }
      if (r + 1 < side) { visit(p + side); }
      if (c > 0) { visit(p - 1); }
      if (c + 1 < side) { visit(p + 1); }
    }
  }
  return blocks;
}

Matrix build_hadamard_cake_cutting(Eigen::Index n, Eigen::Index m)
{
  require(is_power_of_four(n), Errc::invalid_dimension,
          "cake-cutting order needs n a power of four, got " + std::to_string(n));
  require(m >= 1 && m <= n, Errc::invalid_snapshot_count,
          "snapshot count " + std::to_string(m) + " outside [1, " + std::to_string(n) + "]");

  Matrix const h = sylvester_hadamard(n);
  auto const side = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(n))));
  std::vector<int> blocks(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) { blocks[i] = count_sign_blocks(h.row(i).transpose(), side); }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return blocks[a] < blocks[b]; });

  Matrix out(m, n);
  for (Eigen::Index i = 0; i < m; ++i) { out.row(i) = h.row(order[i]); }
  return out;
}

Matrix sample_unknown(Eigen::Index rows, Eigen::Index cols, double sigma, std::uint64_t seed)
{
  require(sigma >= 0.0 && std::isfinite(sigma), Errc::invalid_parameter, "sigma must be finite and >= 0");
  Matrix out = Matrix::Zero(rows, cols);
  if (sigma == 0.0) { return out; }
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      out(i, j) = sigma * keyed_normal(seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j));
    }
  }
  return out;
}

SensingOperator make_operator(Matrix known, double sigma, std::uint64_t seed)
{
  SensingOperator op;
  op.unknown = sample_unknown(known.rows(), known.cols(), sigma, seed);
  op.known = std::move(known);
  op.sigma = sigma;
  op.seed = seed;
  return op;
}

Matrix lift_channel(const ComplexChannel &channel)
{
  require_shape(channel.imag_part.rows(), channel.imag_part.cols(), channel.real_part.rows(),
                channel.real_part.cols(), "imaginary part");
  Eigen::Index const m = channel.real_part.rows();
  Eigen::Index const n = channel.real_part.cols();
  Matrix a(2 * m, 2 * n);
  a.topLeftCorner(m, n) = channel.real_part;
  a.topRightCorner(m, n) = -channel.imag_part;
  a.bottomLeftCorner(m, n) = channel.imag_part;
  a.bottomRightCorner(m, n) = channel.real_part;
  return a;
}

Vector stack_complex(const Eigen::Ref<const Eigen::VectorXcd> &v)
{
  Vector out(2 * v.size());
  out.head(v.size()) = v.real();
  out.tail(v.size()) = v.imag();
  return out;
}

LiftedModel lift_complex_to_real(const ComplexChannel &channel, const Eigen::Ref<const Eigen::VectorXcd> &signal,
                                 const Eigen::Ref<const Eigen::VectorXcd> &noise)
{
  require(signal.size() == channel.real_part.cols(), Errc::invalid_dimension, "signal length != channel columns");
  require(noise.size() == channel.real_part.rows(), Errc::invalid_dimension, "noise length != channel rows");
  return {lift_channel(channel), stack_complex(signal), stack_complex(noise)};
}

Matrix standard_noise(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed)
{
  Matrix out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      out(i, j) = keyed_normal(seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j));
    }
  }
  return out;
}

Matrix scale_noise(const Matrix &clean, const Eigen::Ref<const Vector> &snr_db, const Matrix &standard)
{
  require_shape(standard.rows(), standard.cols(), clean.rows(), clean.cols(), "noise draws");
  require(snr_db.size() == clean.cols(), Errc::invalid_dimension, "one SNR per column required");
  Matrix out(clean.rows(), clean.cols());
  auto const m = static_cast<double>(clean.rows());
  for (Eigen::Index j = 0; j < clean.cols(); ++j) {
    double const variance = clean.col(j).squaredNorm() / (m * std::pow(10.0, snr_db[j] / 10.0));
    out.col(j) = std::sqrt(variance) * standard.col(j);
  }
  return out;
}

Vector forward_measure(const SensingOperator &op, const Eigen::Ref<const Vector> &x, std::optional<double> snr_db,
                       std::uint64_t seed)
{
  require(x.size() == op.cols(), Errc::invalid_dimension,
          "signal length " + std::to_string(x.size()) + " != operator columns " + std::to_string(op.cols()));
  Vector y = op.known * x + op.unknown * x;
  if (snr_db) {
    Matrix const clean = y;
    Vector const snr = Vector::Constant(1, *snr_db);
    y += scale_noise(clean, snr, standard_noise(y.size(), 1, seed)).col(0);
  }
  return y;
}

void write_operator(std::ostream &out, const SensingOperator &op)
{
  binary::put_magic(out, "SOP1");
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(op.rows()));
  binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(op.cols()));
  binary::put_le<double>(out, op.sigma);
  binary::put_le<std::uint64_t>(out, op.seed);
  binary::put_matrix(out, op.known);
  binary::put_matrix(out, op.unknown);
}

SensingOperator read_operator(std::istream &in)
{
  binary::expect_magic(in, "SOP1");
  SensingOperator op;
  auto const m = binary::get_le<std::uint32_t>(in);
  auto const n = binary::get_le<std::uint32_t>(in);
  op.sigma = binary::get_le<double>(in);
  op.seed = binary::get_le<std::uint64_t>(in);
  op.known = binary::get_matrix(in, m, n);
  op.unknown = binary::get_matrix(in, m, n);
  return op;
}

void save_operator(const std::filesystem::path &path, const SensingOperator &op)
{
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), Errc::io_error, "cannot open " + path.string());
  write_operator(out, op);
  require(static_cast<bool>(out), Errc::io_error, "write failed for " + path.string());
}

SensingOperator load_operator(const std::filesystem::path &path)
{
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::io_error, "cannot open " + path.string());
  return read_operator(in);
}

} // namespace unroll
