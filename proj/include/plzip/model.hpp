#pragma once

#include <Eigen/Dense>

#include "plzip/types.hpp"

namespace plzip {

//! E-step posterior that an observation is a structural zero:
//! 0 for y > 0, else 1 / (1 + exp(-z'gamma - e^{x'beta + m})).
double posterior_w(double y, double zgamma, double xbeta_plus_m);

//! PLZIP log-likelihood; m given per observation.
double loglik(const Dataset& data, const Eigen::VectorXd& beta,
              const Eigen::VectorXd& gamma, const Eigen::VectorXd& m);

//! Complete-data log-likelihood at weights w in [0,1]^n. The Poisson
//! part depends only on (beta, m), the logistic part only on gamma.
double complete_loglik(const Dataset& data, const Eigen::VectorXd& w,
                       const Eigen::VectorXd& beta,
                       const Eigen::VectorXd& gamma,
                       const Eigen::VectorXd& m);

//! ZIP mean (1 - pi) lambda at a new covariate point. m at the new t is
//! produced by re-solving the step-3 local problem at tau = t with the
//! fitted beta and final weights, never by interpolating the m grid.
double predict_mean(const Eigen::VectorXd& x, const Eigen::VectorXd& z,
                    double t, const FitResult& fit, const Dataset& train,
                    const LossSpec& spec);

}  // namespace plzip
