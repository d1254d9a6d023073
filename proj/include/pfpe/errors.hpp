#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pfpe {

/// Violated model invariant (probability rows, discount, bounds).
class InvalidModel : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DimensionMismatch : public std::invalid_argument {
 public:
  DimensionMismatch(const std::string& what, std::size_t expected, std::size_t got)
      : std::invalid_argument(what + ": expected dimension " + std::to_string(expected) +
                              ", got " + std::to_string(got)),
        expected_(expected),
        got_(got) {}

  std::size_t expected() const noexcept { return expected_; }
  std::size_t got() const noexcept { return got_; }

 private:
  std::size_t expected_;
  std::size_t got_;
};

class NonErgodic : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CalledOffSchedule : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class SingularGramMatrix : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularSystem : public std::runtime_error {
 public:
  SingularSystem(const std::string& what, double smallest_singular_value)
      : std::runtime_error(what + " (smallest singular value " +
                           std::to_string(smallest_singular_value) + ")"),
        sigma_min_(smallest_singular_value) {}

  double smallest_singular_value() const noexcept { return sigma_min_; }

 private:
  double sigma_min_;
};

class SingularHessian : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateEigenvalue : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class QuadratureUnconverged : public std::runtime_error {
 public:
  QuadratureUnconverged(const std::string& what, double max_change)
      : std::runtime_error(what + " (max entry change " + std::to_string(max_change) + ")"),
        max_change_(max_change) {}

  double max_change() const noexcept { return max_change_; }

 private:
  double max_change_;
};

class EigenSolverFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pfpe
