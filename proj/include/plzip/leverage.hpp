#pragma once

#include <Eigen/Dense>
#include <vector>

namespace plzip {

//! Covariate down-weighting from robust Mahalanobis distance with
//! coordinatewise median/MAD standardization. Columns whose MAD is zero
//! (constants, intercepts) carry no leverage information and are
//! excluded; the cutoff is the chi-square 0.975 quantile at the retained
//! dimension.
struct LeverageWeights {
  Eigen::VectorXd center;      // full-width medians
  Eigen::VectorXd scale;       // 1.4826 * MAD, full width
  std::vector<int> retained;   // column indices entering the distance
  double cutoff = 0.0;
  bool hard = false;  // hard rejection instead of cutoff/MD^2 decay

  double md2(const Eigen::VectorXd& v) const;
  //! 1 inside the cutoff ellipsoid, cutoff/MD^2 beyond (0 when hard).
  double omega(const Eigen::VectorXd& v) const;
  Eigen::VectorXd omega_rows(const Eigen::MatrixXd& M) const;
};

LeverageWeights build_leverage(const Eigen::MatrixXd& M,
                               bool hard_rejection = false);

double chi2_quantile(int dof, double prob);

}  // namespace plzip
