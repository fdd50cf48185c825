#include "plzip/leverage.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <stdexcept>

namespace plzip {

namespace {

double median_of(std::vector<double> v) {
  size_t n = v.size();
  auto mid = v.begin() + n / 2;
  std::nth_element(v.begin(), mid, v.end());
  double hi = *mid;
  if (n % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

}  // namespace

double chi2_quantile(int dof, double prob) {
  boost::math::chi_squared dist(static_cast<double>(dof));
  return boost::math::quantile(dist, prob);
}

LeverageWeights build_leverage(const Eigen::MatrixXd& M, bool hard_rejection) {
  const long n = M.rows(), d = M.cols();
  if (n < 2) throw std::invalid_argument("build_leverage: need n >= 2");
  LeverageWeights lw;
  lw.hard = hard_rejection;
  lw.center.resize(d);
  lw.scale.resize(d);
  std::vector<double> col(n);
  for (long j = 0; j < d; ++j) {
    for (long i = 0; i < n; ++i) col[i] = M(i, j);
    double med = median_of(col);
    for (long i = 0; i < n; ++i) col[i] = std::abs(M(i, j) - med);
    double mad = 1.4826 * median_of(col);
    lw.center(j) = med;
    lw.scale(j) = mad;
    if (mad > 0.0) lw.retained.push_back(static_cast<int>(j));
  }
  lw.cutoff = lw.retained.empty()
                  ? 0.0
                  : chi2_quantile(static_cast<int>(lw.retained.size()), 0.975);
  return lw;
}

double LeverageWeights::md2(const Eigen::VectorXd& v) const {
  double acc = 0.0;
  for (int j : retained) {
    double z = (v(j) - center(j)) / scale(j);
    acc += z * z;
  }
  return acc;
}

double LeverageWeights::omega(const Eigen::VectorXd& v) const {
  if (retained.empty()) return 1.0;  // no leverage information
  double d2 = md2(v);
  if (d2 <= cutoff) return 1.0;
  return hard ? 0.0 : cutoff / d2;
}

Eigen::VectorXd LeverageWeights::omega_rows(const Eigen::MatrixXd& M) const {
  Eigen::VectorXd out(M.rows());
  for (long i = 0; i < M.rows(); ++i) out(i) = omega(M.row(i).transpose());
  return out;
}

}  // namespace plzip
