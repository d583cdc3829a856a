// SPDX-License-Identifier: Apache-2.0
/**
 * @file   error.hpp
 * @brief  Exception hierarchy shared by every dtwin module.
 */
#ifndef DTWIN_ERROR_HPP
#define DTWIN_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dtwin {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A value is outside the mathematical domain of an operation (NaN state, r(t) <= 0, ...).
class DomainError : public Error {
public:
  using Error::Error;
};

/// A caller-supplied argument violates a precondition.
class ArgumentError : public Error {
public:
  using Error::Error;
};

/// Shapes or dimensions of cooperating objects disagree.
class StructuralError : public Error {
public:
  using Error::Error;
};

class IndexError : public Error {
public:
  using Error::Error;
};

/// Non-finite value produced inside an integrator step.
class NonFiniteStepError : public DomainError {
public:
  NonFiniteStepError(const std::string &what, std::size_t step)
    : DomainError(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

private:
  std::size_t step_;
};

/// Simulated state escaped the blow-up bound.
class DivergenceError : public Error {
public:
  DivergenceError(const std::string &what, double time)
    : Error(what), time_(time) {}
  double time() const noexcept { return time_; }

private:
  double time_;
};

/// Training loss became non-finite.
class TrainingDivergedError : public Error {
public:
  TrainingDivergedError(const std::string &what, std::size_t epoch,
                        double last_finite_loss)
    : Error(what), epoch_(epoch), last_finite_loss_(last_finite_loss) {}
  std::size_t epoch() const noexcept { return epoch_; }
  double last_finite_loss() const noexcept { return last_finite_loss_; }

private:
  std::size_t epoch_;
  double last_finite_loss_;
};

/// Malformed text input. line() is 1-based; 0 when no line applies.
class ParseError : public Error {
public:
  ParseError(const std::string &what, std::size_t line = 0)
    : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
      line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

} // namespace dtwin

#endif // DTWIN_ERROR_HPP
