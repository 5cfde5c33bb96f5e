#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

namespace odin {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using NodeId = std::int32_t;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input files or records.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid schedule, dimensions, flags or config files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf activations or losses.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Counter-based generator (splitmix64). Every random decision in the
/// library derives its own stream from mix_seed(...) so results do not
/// depend on call order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();
  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t uniform(std::uint64_t bound);
  /// Uniform double in [0, 1).
  double uniform01();
  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

 private:
  std::uint64_t state_;
};

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

/// 64-bit FNV-1a, used for config digests.
std::uint64_t fnv1a(std::string_view data);
std::string hex64(std::uint64_t value);

}  // namespace odin
