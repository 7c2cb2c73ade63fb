#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ocfem {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Mesh or index sizes exceed the representable range.
class SizeError : public Error {
public:
    using Error::Error;
};

/// Malformed input data (non-symmetric diffusion, mismatched meshes, bad config).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Problem data violates the admissibility condition a0 + alpha >= 0.
class AdmissibilityError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// A linear solve broke down. Carries the residual history when an
/// iterative method was used.
class SolverError : public Error {
public:
    SolverError(const std::string& what, std::vector<double> history = {})
        : Error(what), residual_history(std::move(history)) {}
    std::vector<double> residual_history;
};

/// The operator handed to an SPD solve was not positive definite. In this
/// library that always means the reaction coefficient lost coercivity.
class CoercivityError : public SolverError {
public:
    using SolverError::SolverError;
};

/// An iterative nonlinear method ran out of iterations.
class NonconvergenceError : public Error {
public:
    NonconvergenceError(const std::string& what, double last_residual, int iterations)
        : Error(what), residual(last_residual), iterations(iterations) {}
    double residual;
    int iterations;
};

}  // namespace ocfem
