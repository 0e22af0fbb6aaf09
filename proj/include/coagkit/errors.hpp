#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace coagkit {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on user-supplied data failed. `index()` names the
/// offending element when the input was a list.
class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what,
                           std::optional<std::size_t> index = std::nullopt)
      : Error(what), index_(index) {}

  std::optional<std::size_t> index() const noexcept { return index_; }

 private:
  std::optional<std::size_t> index_;
};

/// Malformed or schema-violating experiment configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A mathematical invariant that must hold exactly was violated (exit code 3).
/// `invariant()` is a short stable identifier such as "coupling-order".
class InvariantViolation : public Error {
 public:
  InvariantViolation(std::string invariant, const std::string& detail)
      : Error(invariant + ": " + detail), invariant_(std::move(invariant)) {}

  const std::string& invariant() const noexcept { return invariant_; }

 private:
  std::string invariant_;
};

/// Integrator or iteration failure: step underflow, non-convergence,
/// negativity beyond tolerance (exit code 4).
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

} // namespace coagkit
