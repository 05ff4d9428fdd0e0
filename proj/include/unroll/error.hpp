#pragma once

#include <stdexcept>
#include <string>

namespace unroll {

enum class Errc {
  invalid_dimension,
  invalid_parameter,
  invalid_configuration,
  invalid_snapshot_count,
  invalid_symbol,
  format_error,
  length_error,
  training_failure,
  io_error,
};

const char *to_string(Errc code) noexcept;

class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string &what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what)
    , code_(code)
  {
  }

  Errc code() const noexcept { return code_; }

private:
  Errc code_;
};

inline const char *to_string(Errc code) noexcept
{
  switch (code) {
  case Errc::invalid_dimension: return "invalid dimension";
  case Errc::invalid_parameter: return "invalid parameter";
  case Errc::invalid_configuration: return "invalid configuration";
  case Errc::invalid_snapshot_count: return "invalid snapshot count";
  case Errc::invalid_symbol: return "invalid symbol";
  case Errc::format_error: return "format error";
  case Errc::length_error: return "length error";
  case Errc::training_failure: return "training failure";
  case Errc::io_error: return "i/o error";
  }
  return "unknown error";
}

template <class Rows, class Cols>
inline void require_shape(Rows rows, Cols cols, Rows want_rows, Cols want_cols, const char *what)
{
  if (rows != want_rows || cols != want_cols) {
    throw Error(Errc::invalid_dimension, std::string(what) + ": got " + std::to_string(rows) + "x" +
                                           std::to_string(cols) + ", expected " + std::to_string(want_rows) +
                                           "x" + std::to_string(want_cols));
  }
}

inline void require(bool ok, Errc code, const std::string &what)
{
  if (!ok) { throw Error(code, what); }
}

} // namespace unroll
