#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "plzip/loss.hpp"

namespace plzip {

//! Observed sample. X carries the Poisson-part covariates without an
//! intercept column (the level is absorbed by the smooth term); Z carries
//! the logistic-part covariates as given (include a ones column for an
//! intercept).
struct Dataset {
  Eigen::VectorXd y;  // nonnegative integer-valued counts
  Eigen::MatrixXd X;  // n x p
  Eigen::MatrixXd Z;  // n x q
  Eigen::VectorXd t;  // smoothing covariate

  long n() const { return y.size(); }
  long p() const { return X.cols(); }
  long q() const { return Z.cols(); }

  //! Throws DataError on row-count mismatch, non-finite entries, or a
  //! y that is not a nonnegative integer.
  void validate() const;
};

struct KernelConfig {
  double h = 0.0;  // Gaussian bandwidth, > 0
};

//! Point estimate of (beta, gamma, m) with m tabulated on the unique
//! training t values.
struct ThetaEstimate {
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma;
  std::vector<double> m_t;      // sorted unique training t
  std::vector<double> m_value;  // aligned with m_t
  double h = 0.0;
  LossFamily loss_family = LossFamily::ML;
  double loss_c = 0.0;

  //! m at a training t (exact grid lookup; throws std::out_of_range
  //! when t is not a training point).
  double m_at(double t) const;

  //! Per-observation m for a dataset whose t values are all training
  //! points of this estimate.
  Eigen::VectorXd m_for(const Dataset& data) const;
};

struct FitConfig {
  int max_em_iters = 100;
  double tol_param = 1e-4;  // max-norm change of (beta, gamma) plus sup-norm change of m
  double tol_score = 1e-3;
  int restarts = 5;  // random multistart seeds for redescending losses
  std::optional<bool> guard_false_zeros;  // default: on for CH/MT
  int threads = 0;        // 0 = PLZIP_THREADS env or hardware
  uint64_t seed = 12345;  // stream for restart perturbations
};

struct FitResult {
  ThetaEstimate theta;
  int iterations = 0;
  bool converged = false;
  bool gamma_separated = false;
  //! l2 norm of (S_n2, S_n3) plus the max over the tau grid of the
  //! scalar eta-score of S_n1, all evaluated after one fresh E-step at
  //! the fixed point.
  double score_norm = std::numeric_limits<double>::infinity();
  std::vector<double> objective_trace;  // Q_n2 + Q_n3 per EM iteration
  Eigen::VectorXd w;                    // final E-step posterior
  Eigen::VectorXd omega1, omega2;       // leverage weights used
};

}  // namespace plzip
