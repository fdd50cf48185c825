#pragma once

#include <Eigen/Dense>

#include "plzip/types.hpp"

namespace plzip {

//! E-step: w_i = posterior at the current parameters; exactly zero for
//! positive counts.
Eigen::VectorXd e_step(const Dataset& data, const Eigen::VectorXd& beta,
                       const Eigen::VectorXd& gamma, const Eigen::VectorXd& m);

struct LocalFit {
  Eigen::VectorXd beta;  // local slope at tau
  double eta = 0.0;      // local level m(tau)
  double score_inf_norm = 0.0;
  bool converged = false;
};

//! Step 1: joint (beta, eta) minimizer of the kernel-localized robust
//! objective at tau. Multistart for redescending losses: warm start (when
//! given), the local ML solution, and seeded random perturbations, with a
//! Nelder-Mead pre-polish for the random seeds; candidates are compared
//! on the objective. Throws FitError (carrying tau) when the window has
//! too few effective observations or no positive counts.
LocalFit step1_local(double tau, const Dataset& data, const Eigen::VectorXd& w,
                     const LossSpec& spec, const KernelConfig& kernel,
                     const Eigen::VectorXd& omega1, const FitConfig& cfg,
                     const LocalFit* warm = nullptr);

//! Step 2a: global beta minimizing Q_n2 at fixed m; seeded by the
//! coordinatewise median of the step-1 slopes and the previous iterate.
Eigen::VectorXd step2_beta(const Dataset& data, const Eigen::VectorXd& m,
                           const Eigen::VectorXd& w, const LossSpec& spec,
                           const Eigen::VectorXd& omega1, const FitConfig& cfg,
                           const Eigen::VectorXd* seed_median = nullptr,
                           const Eigen::VectorXd* warm = nullptr);

//! Step 2b: gamma from the weighted logistic objective with fractional
//! responses. Strictly convex; Newton with step halving. Throws
//! SeparationError (naming the runaway direction) on quasi-separation.
Eigen::VectorXd step2_gamma(const Dataset& data, const Eigen::VectorXd& w,
                            const Eigen::VectorXd& omega3);

//! Step 3: scalar eta refit at tau given the global beta. Global grid
//! scan over [eta_tilde - 3, eta_tilde + 3] at step 0.05, then a root
//! polish of the scalar score on the best cell.
double step3_m(double tau, const Eigen::VectorXd& beta, const Dataset& data,
               const Eigen::VectorXd& w, const LossSpec& spec,
               const KernelConfig& kernel, const Eigen::VectorXd& omega1,
               double eta_tilde);

//! Deterministic starting point: gamma zero except a crude intercept from
//! the excess-zero fraction, then one full M pass at a proportional split
//! of the zeros.
ThetaEstimate initialize(const Dataset& data, const LossSpec& spec,
                         const KernelConfig& kernel, const FitConfig& cfg);

//! Full EM-like fit. Non-convergence is reported in the result, not
//! thrown; gamma separation freezes the logistic part and fits the
//! Poisson part alone. Step-level errors propagate. A starting estimate
//! (from a neighbouring bandwidth, say) replaces the initialization pass
//! when its m grid matches the data.
FitResult em_fit(const Dataset& data, const LossSpec& spec,
                 const KernelConfig& kernel, const FitConfig& cfg,
                 const ThetaEstimate* init = nullptr);

//! Score blocks at given parameters (S_n2 over beta, S_n3 over gamma),
//! exposed for the estimating-equation diagnostics.
Eigen::VectorXd score_beta(const Dataset& data, const Eigen::VectorXd& beta,
                           const Eigen::VectorXd& m, const Eigen::VectorXd& w,
                           const LossSpec& spec,
                           const Eigen::VectorXd& omega1);
Eigen::VectorXd score_gamma(const Dataset& data, const Eigen::VectorXd& gamma,
                            const Eigen::VectorXd& w,
                            const Eigen::VectorXd& omega3);

//! Scalar eta-component of S_n1 at (beta, eta, tau).
double score_eta(double tau, const Eigen::VectorXd& beta, double eta,
                 const Dataset& data, const Eigen::VectorXd& w,
                 const LossSpec& spec, const KernelConfig& kernel,
                 const Eigen::VectorXd& omega1);

//! Leverage weights as used by em_fit: identically one for ML, built
//! from the covariates for the robust families.
Eigen::VectorXd fit_omega1(const Dataset& data, const LossSpec& spec);
Eigen::VectorXd fit_omega2(const Dataset& data, const LossSpec& spec);
bool resolve_guard(const LossSpec& spec, const FitConfig& cfg);

}  // namespace plzip
