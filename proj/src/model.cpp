#include "plzip/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "plzip/errors.hpp"
#include "plzip/fit.hpp"

namespace plzip {

namespace {

double log1pexp(double x) {
  if (x > 36.0) return x;
  if (x < -36.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// log(e^a + e^b), stable
double logsumexp2(double a, double b) {
  double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

}  // namespace

void Dataset::validate() const {
  const long nn = n();
  if (nn < 1) throw DataError("dataset is empty");
  if (X.rows() != nn || Z.rows() != nn || t.size() != nn)
    throw DataError("dataset row counts disagree");
  for (long i = 0; i < nn; ++i) {
    double yi = y(i);
    if (!std::isfinite(yi) || yi < 0.0 || yi != std::floor(yi))
      throw DataError("y must hold nonnegative integers (row " +
                      std::to_string(i + 1) + ")");
    if (!std::isfinite(t(i)))
      throw DataError("non-finite t (row " + std::to_string(i + 1) + ")");
  }
  if (!X.allFinite() || !Z.allFinite())
    throw DataError("non-finite covariate entries");
}

double ThetaEstimate::m_at(double tv) const {
  auto it = std::lower_bound(m_t.begin(), m_t.end(), tv);
  if (it == m_t.end() || *it != tv)
    throw std::out_of_range("m_at: t is not a training point");
  return m_value[static_cast<size_t>(it - m_t.begin())];
}

Eigen::VectorXd ThetaEstimate::m_for(const Dataset& data) const {
  Eigen::VectorXd m(data.n());
  for (long i = 0; i < data.n(); ++i) m(i) = m_at(data.t(i));
  return m;
}

double posterior_w(double y, double zgamma, double xbeta_plus_m) {
  if (y > 0.0) return 0.0;
  double lam = std::exp(std::min(xbeta_plus_m, 700.0));
  double expo = -zgamma - lam;
  if (expo > 700.0) return 0.0;
  if (expo < -36.0) return 1.0;
  return 1.0 / (1.0 + std::exp(expo));
}

double loglik(const Dataset& data, const Eigen::VectorXd& beta,
              const Eigen::VectorXd& gamma, const Eigen::VectorXd& m) {
  const long n = data.n();
  double ll = 0.0;
  for (long i = 0; i < n; ++i) {
    double zg = data.Z.row(i).dot(gamma);
    double u = data.X.row(i).dot(beta) + m(i);
    ll -= log1pexp(zg);
    if (data.y(i) == 0.0) {
      ll += logsumexp2(zg, -std::exp(std::min(u, 700.0)));
    } else {
      double yi = data.y(i);
      ll += yi * u - std::exp(u) - std::lgamma(yi + 1.0);
    }
  }
  return ll;
}

double complete_loglik(const Dataset& data, const Eigen::VectorXd& w,
                       const Eigen::VectorXd& beta,
                       const Eigen::VectorXd& gamma,
                       const Eigen::VectorXd& m) {
  const long n = data.n();
  double pois = 0.0, logit = 0.0;
  for (long i = 0; i < n; ++i) {
    double u = data.X.row(i).dot(beta) + m(i);
    double yi = data.y(i);
    pois += (1.0 - w(i)) * (yi * u - std::exp(u) - std::lgamma(yi + 1.0));
    double zg = data.Z.row(i).dot(gamma);
    logit += w(i) * zg - log1pexp(zg);
  }
  return pois + logit;
}

double predict_mean(const Eigen::VectorXd& x, const Eigen::VectorXd& z,
                    double t, const FitResult& fit, const Dataset& train,
                    const LossSpec& spec) {
  const auto& th = fit.theta;
  double pi = 0.0;
  if (!fit.gamma_separated) {
    double zg = z.dot(th.gamma);
    pi = 1.0 / (1.0 + std::exp(-std::min(std::max(zg, -700.0), 700.0)));
  }
  // nearest training point seeds the local eta scan
  auto it = std::lower_bound(th.m_t.begin(), th.m_t.end(), t);
  size_t k = static_cast<size_t>(it - th.m_t.begin());
  if (k == th.m_t.size()) --k;
  if (k > 0 && std::abs(th.m_t[k - 1] - t) < std::abs(th.m_t[k] - t)) --k;
  double eta_tilde = th.m_value[k];
  KernelConfig kernel{th.h};
  double m = step3_m(t, th.beta, train, fit.w, spec, kernel, fit.omega1,
                     eta_tilde);
  double lam = std::exp(std::min(x.dot(th.beta) + m, 700.0));
  return (1.0 - pi) * lam;
}

}  // namespace plzip
