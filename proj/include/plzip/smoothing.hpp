#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "plzip/types.hpp"

namespace plzip {

//! Standard normal density kernel.
double gauss_kernel(double v);

//! Nadaraya-Watson weights W_i(tau) = K((tau - t_i)/h) / sum_j K(...).
//! Nonnegative, sum to one. Throws DataError when every kernel value
//! underflows (degenerate window; cannot happen for sane h).
Eigen::VectorXd nw_weights(double tau, const Eigen::VectorXd& t,
                           const KernelConfig& cfg);

//! 20 log-spaced candidates in [0.05, 0.5] * range(t).
std::vector<double> default_h_grid(const Eigen::VectorXd& t);

//! Parses "lo:hi:count" (log-spaced) or a comma list of values.
std::vector<double> parse_h_grid(const std::string& text);

struct CvDetail {
  std::vector<double> grid;
  std::vector<double> criterion;  // +inf where the fit failed
};

//! Robust k-fold bandwidth selection. Folds are contiguous blocks of a
//! seeded shuffle; the held-out criterion is the Q_n2-style loss
//! (1 - w_i) rho(y_i, x_i beta + m(t_i)) omega1(x_i) with m solved at
//! held-out points by the step-3 local problem. Ties go to the smaller h.
//! Throws SelectionError when every candidate fails.
double cv_bandwidth(const Dataset& data, const LossSpec& spec, int folds,
                    const std::vector<double>& grid, uint64_t seed,
                    const FitConfig& cfg, CvDetail* detail = nullptr);

}  // namespace plzip
