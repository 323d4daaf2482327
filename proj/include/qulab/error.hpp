#ifndef QULAB_ERROR_HPP_
#define QULAB_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace qulab {

// Error categories map onto CLI exit codes: config/usage -> 1,
// data/dependency/io -> 2, numeric -> 3. Contract violations
// (shape, index, state) use the std exception types directly.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace qulab

#endif  // QULAB_ERROR_HPP_
