// Common matrix aliases and the error hierarchy shared by every module.
#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>

namespace mfg_irl {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes that do not fit together (block partitions, gain sizes, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Inputs that violate a documented precondition (asymmetric weights, bad
/// tolerances, inconsistent discount rates).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Lyapunov operator is singular: two eigenvalues of F sum to ~0.
class DegenerateLyapunovError : public Error {
 public:
  using Error::Error;
};

/// A gain that was required to be stabilizing is not.
class NotStabilizingError : public Error {
 public:
  using Error::Error;
};

/// Hamiltonian is not strong (N,N) c-splitting or its stable subspace is not
/// a graph subspace.
class SplittingError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Least-squares design matrix lost rank (persistency of excitation failed).
class ExcitationError : public Error {
 public:
  using Error::Error;
};

/// Non-finite state during integration.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace mfg_irl
