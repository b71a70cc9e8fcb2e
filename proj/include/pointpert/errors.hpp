#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pointpert {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition (bad range, coincident points, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Operation not available on this backend (e.g. measures on the sphere).
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Request exceeds the memory budget; carries the estimated number of items required.
class ResourceError : public Error {
 public:
  ResourceError(const std::string& what, std::uint64_t required, std::uint64_t budget)
      : Error(what + " (required ~" + std::to_string(required) + ", budget " +
              std::to_string(budget) + ")"),
        required_(required),
        budget_(budget) {}

  std::uint64_t required() const noexcept { return required_; }
  std::uint64_t budget() const noexcept { return budget_; }

 private:
  std::uint64_t required_;
  std::uint64_t budget_;
};

/// (C,S) fails C*C + S*S = Id or C*S = S*C.
class FrameValidationError : public Error {
 public:
  FrameValidationError(double unitarity_residual, double symmetry_residual, double tol)
      : Error("frame is not Lagrangian: ||C*C + S*S - Id||_F = " +
              std::to_string(unitarity_residual) + ", ||C*S - S*C||_F = " +
              std::to_string(symmetry_residual) + " (tolerance " + std::to_string(tol) + ")"),
        unitarity_(unitarity_residual),
        symmetry_(symmetry_residual) {}

  double unitarity_residual() const noexcept { return unitarity_; }
  double symmetry_residual() const noexcept { return symmetry_; }

 private:
  double unitarity_;
  double symmetry_;
};

/// Spectral parameter sits on (or within the guard distance of) an eigenvalue of the Laplacian.
class PoleError : public Error {
 public:
  PoleError(double eta, std::int64_t lambda_sq)
      : Error("eta = " + std::to_string(eta) + " is within the pole guard of eigenvalue lambda^2 = " +
              std::to_string(lambda_sq)),
        eta_(eta),
        lambda_sq_(lambda_sq) {}

  double eta() const noexcept { return eta_; }
  std::int64_t lambda_sq() const noexcept { return lambda_sq_; }

 private:
  double eta_;
  std::int64_t lambda_sq_;
};

/// C - G_eta S is singular: eta is an eigenvalue of the perturbed operator.
class SingularSecularMatrix : public Error {
 public:
  SingularSecularMatrix(double eta, double condition)
      : Error("eta = " + std::to_string(eta) +
              " is an eigenvalue of the perturbed operator (cond(C - G S) = " +
              std::to_string(condition) + ")"),
        eta_(eta) {}

  double eta() const noexcept { return eta_; }

 private:
  double eta_;
};

/// Explicit shell sum would stop too close to the spectral parameter.
class InsufficientCutoff : public PreconditionError {
 public:
  InsufficientCutoff(double cutoff, double required)
      : PreconditionError("cutoff " + std::to_string(cutoff) + " is below the required " + std::to_string(required)),
        cutoff_(cutoff),
        required_(required) {}

  double cutoff() const noexcept { return cutoff_; }
  double required() const noexcept { return required_; }

 private:
  double cutoff_;
  double required_;
};

}  // namespace pointpert
