#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace tokenlab {

struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised by fixed_point_solve when an iterate stops being finite.
struct DivergenceError : NumericError {
    DivergenceError(const std::string& what, std::vector<double> last, int iter)
        : NumericError(what), last_finite(std::move(last)), iterations(iter) {}
    std::vector<double> last_finite;
    int iterations;
};

struct EvaluationError : NumericError {
    using NumericError::NumericError;
};

}  // namespace tokenlab
