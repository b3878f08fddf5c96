#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace dunroll {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// N x d matrix, row i holds agent i's estimate.
using StackedEstimate = Matrix;

// Error hierarchy. The CLI maps these onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParameterError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct StateError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct ParseError : IoError {
  ParseError(const std::string& detail, std::size_t line, const std::string& source = {})
      : IoError((source.empty() ? "" : source + ":") + "line " + std::to_string(line) + ": " +
                detail),
        detail_(detail),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }
  const std::string& detail() const noexcept { return detail_; }
  ParseError with_source(const std::string& source) const { return {detail_, line_, source}; }

 private:
  std::string detail_;
  std::size_t line_;
};
struct NumericalError : Error {
  using Error::Error;
};
struct DivergenceError : NumericalError {
  DivergenceError(const std::string& what, int iteration)
      : NumericalError(what + " (iteration " + std::to_string(iteration) + ")"),
        iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};
struct NonConvergenceError : NumericalError {
  NonConvergenceError(const std::string& what, double residual)
      : NumericalError(what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};
struct MetricError : NumericalError {
  using NumericalError::NumericalError;
};

// 17 significant digits: lossless for binary64.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline bool parse_real(std::string_view s, double& out) {
  if (s == "nan") {
    out = std::numeric_limits<double>::quiet_NaN();
    return true;
  }
  if (s == "inf") {
    out = std::numeric_limits<double>::infinity();
    return true;
  }
  if (s == "-inf") {
    out = -std::numeric_limits<double>::infinity();
    return true;
  }
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Stack x on every one of n rows.
inline Matrix stack_rows(const Vector& x, Eigen::Index n) {
  return x.transpose().replicate(n, 1);
}

}  // namespace dunroll
