#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace mmcrl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Invalid configuration, arguments, or inputs. Maps to CLI exit code 2.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or failed numerical safeguards. Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or missing files on disk.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ConfigError(message);
}

}  // namespace mmcrl
