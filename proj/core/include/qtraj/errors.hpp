#pragma once

#include <stdexcept>
#include <string>

namespace qtraj {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a primitive (log of a
/// non-positive value, division by zero, ...).
struct DomainError : Error {
  using Error::Error;
};

/// A state update lost essentially all of its trace and cannot be
/// renormalized.
struct DegenerateState : Error {
  using Error::Error;
};

/// A value violates the invariants of its type (non-Hermitian density
/// matrix, Bloch vector outside the unit ball, ...).
struct InvalidState : Error {
  using Error::Error;
};

struct InvalidArgument : Error {
  using Error::Error;
};

/// Tomography input is missing a (preparation, axis) cell.
struct MissingCell : Error {
  using Error::Error;
};

/// Least-squares design matrix is rank deficient.
struct FitSingular : Error {
  using Error::Error;
};

/// Training loss became non-finite.
struct TrainingDiverged : Error {
  using Error::Error;
};

struct TruncatedStream : Error {
  using Error::Error;
};

struct ChecksumMismatch : Error {
  using Error::Error;
};

struct VersionMismatch : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace qtraj
