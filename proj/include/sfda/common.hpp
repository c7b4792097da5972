#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sfda {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Index = Eigen::Index;

// Error taxonomy. The CLI maps each family onto a distinct exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or precondition on user-supplied parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or statistically unusable input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Failure talking to (or interpreting) the external completion backend.
class BackendError : public Error {
 public:
  using Error::Error;
};

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);

/// Parses a full string as a double; throws DataError on garbage.
double parse_double(std::string_view text);

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

/// First 8 bytes of SHA-256, big-endian.
std::uint64_t sha256_u64(std::string_view data);

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Derives an independent seed for a named substream. Stable across
/// platforms so that every random decision can be replayed from one run seed.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream,
                          std::uint64_t index = 0);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. fn must only write
/// to slot i of pre-sized outputs so that results do not depend on scheduling.
void parallel_for(std::size_t n, unsigned threads,
                  const std::function<void(std::size_t)>& fn);

/// Global worker cap used by parallel stages (0 = hardware concurrency).
unsigned worker_count();
void set_worker_count(unsigned threads);

}  // namespace sfda
