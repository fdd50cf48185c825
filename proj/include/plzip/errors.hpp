#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace plzip {

//! Input-domain violation (e.g. CH loss evaluated at negative deviance).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

//! Malformed input data (CSV contract violations carry line numbers).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

//! Failure of a fit step; carries the local smoothing point when relevant.
class FitError : public std::runtime_error {
 public:
  explicit FitError(const std::string& what, double tau = 0.0,
                    bool has_tau = false)
      : std::runtime_error(what), tau_(tau), has_tau_(has_tau) {}
  bool has_tau() const { return has_tau_; }
  double tau() const { return tau_; }

 private:
  double tau_;
  bool has_tau_;
};

//! Quasi-separation in the logistic step; names the runaway direction.
class SeparationError : public std::runtime_error {
 public:
  SeparationError(const std::string& what, std::vector<double> direction)
      : std::runtime_error(what), direction_(std::move(direction)) {}
  const std::vector<double>& direction() const { return direction_; }

 private:
  std::vector<double> direction_;
};

//! Bandwidth selection failed for every candidate.
class SelectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace plzip
