#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace mobcast {

// Parameters and gradients are stored row-major so that checkpoint files map
// directly onto memory.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape mismatch between operands.
struct DimensionError : Error {
    using Error::Error;
};

// Operation invoked in the wrong order (e.g. optimizer step without gradients).
struct StateError : Error {
    using Error::Error;
};

// Bad input data: schema violations, out-of-range values, unknown codes.
struct ValidationError : Error {
    using Error::Error;
};

// NaN/Inf encountered where finite values are required.
struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

inline void ensure_finite(const Matrix& m, const std::string& context) {
    if (!m.allFinite())
        throw NumericError("non-finite value in " + context);
}

inline void ensure_finite(double v, const std::string& context) {
    if (!std::isfinite(v))
        throw NumericError("non-finite value in " + context);
}

}  // namespace mobcast
