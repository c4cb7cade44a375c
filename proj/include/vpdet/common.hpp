#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace vpdet {

using Vec3 = Eigen::Vector3d;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file or configuration. Carries the offending file and
/// 1-based line (0 when the problem is not tied to a line).
class ParseError : public Error {
 public:
  ParseError(std::string file, int line, const std::string& message);

  const std::string& file() const { return file_; }
  int line() const { return line_; }

 private:
  std::string file_;
  int line_;
};

/// Failure inside one stage of the detection pipeline.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message);

  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// SplitMix64 finalizer. Used wherever a seeded, order-independent hash of a
/// value is needed.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle into [-pi, pi).
double wrap_angle(double theta);

}  // namespace vpdet
