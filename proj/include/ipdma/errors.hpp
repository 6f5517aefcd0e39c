#pragma once

#include <stdexcept>
#include <string>

namespace ipdma {

/// Bad run configuration (unknown keys, malformed values, vocabulary
/// violations). Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Unusable input data (missing columns, unparseable cells, empty datasets).
/// Maps to CLI exit code 2.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A model fit or estimator failed on otherwise valid data (rank deficiency,
/// separation without convergence, infinite weights, ...). Maps to CLI exit
/// code 3.
class EstimationError : public std::runtime_error {
public:
    explicit EstimationError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace ipdma
