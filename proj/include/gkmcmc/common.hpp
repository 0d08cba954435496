#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace gkmcmc {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Bad user input: configs, files, malformed chain data.  Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failure that cannot be recovered from (singular system, degenerate
// chain, non-convergence where a flag is not enough).  Maps to CLI exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint/config mismatch on resume.  Maps to CLI exit code 4.
class CheckpointError : public std::runtime_error {
public:
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gkmcmc
