#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string_view>

#include "unroll/error.hpp"

namespace unroll::binary {

template <class T> void put_le(std::ostream &out, T value)
{
  static_assert(std::is_trivially_copyable_v<T> && (sizeof(T) == 4 || sizeof(T) == 8));
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) { std::reverse(bytes.begin(), bytes.end()); }
  out.write(reinterpret_cast<const char *>(bytes.data()), sizeof(T));
}

template <class T> T get_le(std::istream &in)
{
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char *>(bytes.data()), sizeof(T))) {
    throw Error(Errc::length_error, "unexpected end of binary stream");
  }
  if constexpr (std::endian::native == std::endian::big) { std::reverse(bytes.begin(), bytes.end()); }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline void put_magic(std::ostream &out, std::string_view magic) { out.write(magic.data(), 4); }

inline void expect_magic(std::istream &in, std::string_view magic)
{
  char got[4] = {};
  if (!in.read(got, 4)) { throw Error(Errc::length_error, "missing magic"); }
  if (std::string_view(got, 4) != magic) {
    throw Error(Errc::format_error, "bad magic, expected " + std::string(magic));
  }
}

/// Row-major f64 payload.
template <class Derived> void put_matrix(std::ostream &out, const Eigen::MatrixBase<Derived> &m)
{
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) { put_le<double>(out, m(i, j)); }
  }
}

inline Eigen::MatrixXd get_matrix(std::istream &in, Eigen::Index rows, Eigen::Index cols)
{
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) { m(i, j) = get_le<double>(in); }
  }
  return m;
}

} // namespace unroll::binary
