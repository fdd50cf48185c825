#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace plzip {

//! Brent minimization on a bracketing interval [a, b].
template <typename F>
double brent_min(const F& f, double a, double b, double xtol = 1e-10,
                 int max_iter = 200) {
  const double gold = 0.3819660112501051;
  double x = a + gold * (b - a), w = x, v = x;
  double fx = f(x), fw = fx, fv = fx;
  double d = 0.0, e = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    double m = 0.5 * (a + b);
    double tol1 = xtol * (std::abs(x) + 1e-12);
    double tol2 = 2.0 * tol1;
    if (std::abs(x - m) <= tol2 - 0.5 * (b - a)) break;
    bool use_golden = true;
    if (std::abs(e) > tol1) {
      double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      double e_old = e;
      e = d;
      if (std::abs(p) < std::abs(0.5 * q * e_old) && p > q * (a - x) &&
          p < q * (b - x)) {
        d = p / q;
        double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = (x < m) ? tol1 : -tol1;
        use_golden = false;
      }
    }
    if (use_golden) {
      e = (x < m) ? b - x : a - x;
      d = gold * e;
    }
    double u = (std::abs(d) >= tol1) ? x + d : x + (d > 0 ? tol1 : -tol1);
    double fu = f(u);
    if (fu <= fx) {
      (u < x ? b : a) = x;
      v = w; fv = fw;
      w = x; fw = fx;
      x = u; fx = fu;
    } else {
      (u < x ? a : b) = u;
      if (fu <= fw || w == x) {
        v = w; fv = fw;
        w = u; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  return x;
}

//! Brent-Dekker root finder; requires f(a) and f(b) of opposite sign.
template <typename F>
double brent_root(const F& f, double a, double b, double xtol = 1e-12,
                  int max_iter = 200) {
  double fa = f(a), fb = f(b);
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  if (fa * fb > 0.0) return std::numeric_limits<double>::quiet_NaN();
  double c = a, fc = fa, d = b - a, e = d;
  for (int it = 0; it < max_iter; ++it) {
    if (std::abs(fc) < std::abs(fb)) {
      a = b; b = c; c = a;
      fa = fb; fb = fc; fc = fa;
    }
    double tol1 = 2.0 * std::numeric_limits<double>::epsilon() * std::abs(b) +
                  0.5 * xtol;
    double xm = 0.5 * (c - b);
    if (std::abs(xm) <= tol1 || fb == 0.0) return b;
    if (std::abs(e) >= tol1 && std::abs(fa) > std::abs(fb)) {
      double s = fb / fa, p, q;
      if (a == c) {
        p = 2.0 * xm * s;
        q = 1.0 - s;
      } else {
        double qq = fa / fc, r = fb / fc;
        p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
        q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0.0) q = -q;
      p = std::abs(p);
      if (2.0 * p < std::min(3.0 * xm * q - std::abs(tol1 * q),
                             std::abs(e * q))) {
        e = d;
        d = p / q;
      } else {
        d = xm;
        e = d;
      }
    } else {
      d = xm;
      e = d;
    }
    a = b;
    fa = fb;
    b += (std::abs(d) > tol1) ? d : (xm > 0 ? tol1 : -tol1);
    fb = f(b);
    if ((fb > 0.0) == (fc > 0.0)) {
      c = a; fc = fa;
      d = b - a; e = d;
    }
  }
  return b;
}

struct NewtonResult {
  Eigen::VectorXd x;
  double score_inf_norm = std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;
};

//! Damped Newton on a score system S(x) = 0 with a caller-supplied
//! Jacobian. Line search halves the step on the l2 norm of S; steps are
//! trust-capped to avoid redescending far-field escapes.
inline NewtonResult newton_score(
    const std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)>& score,
    const std::function<void(const Eigen::VectorXd&, Eigen::MatrixXd&)>& jac,
    Eigen::VectorXd x0, double tol, int max_iter = 60, double max_step = 2.0) {
  NewtonResult res;
  const long d = x0.size();
  Eigen::VectorXd s(d), s_trial(d);
  Eigen::MatrixXd J(d, d);
  Eigen::VectorXd x = std::move(x0);
  score(x, s);
  if (!s.allFinite()) {
    res.x = x;
    return res;
  }
  double snorm = s.norm();
  for (int it = 0; it < max_iter; ++it) {
    res.iterations = it;
    if (s.lpNorm<Eigen::Infinity>() <= tol) break;
    jac(x, J);
    double mu = 0.0;
    Eigen::VectorXd step;
    for (int attempt = 0; attempt < 6; ++attempt) {
      Eigen::MatrixXd Jd = J;
      if (mu > 0.0) Jd.diagonal().array() += mu;
      step = Jd.fullPivLu().solve(-s);
      if (step.allFinite()) break;
      mu = (mu == 0.0) ? 1e-8 : mu * 100.0;
    }
    if (!step.allFinite()) break;
    double nd = step.norm();
    if (nd > max_step) step *= max_step / nd;
    double lambda = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls) {
      score(x + lambda * step, s_trial);
      if (s_trial.allFinite() && s_trial.norm() < snorm) {
        accepted = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!accepted) break;
    x += lambda * step;
    s = s_trial;
    snorm = s.norm();
  }
  res.x = x;
  res.score_inf_norm = s.allFinite()
                           ? s.lpNorm<Eigen::Infinity>()
                           : std::numeric_limits<double>::infinity();
  res.converged = res.score_inf_norm <= tol;
  return res;
}

//! Compact Nelder-Mead, used only as a pre-polish for multistart seeds.
inline Eigen::VectorXd nelder_mead(
    const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x0,
    double scale = 0.25, int max_evals = 400, double ftol = 1e-10) {
  const long n = x0.size();
  std::vector<Eigen::VectorXd> v(n + 1, x0);
  std::vector<double> fv(n + 1);
  for (long k = 0; k < n; ++k) v[k + 1](k) += scale;
  int evals = 0;
  for (long k = 0; k <= n; ++k) {
    fv[k] = f(v[k]);
    ++evals;
  }
  auto order = [&] {
    for (long i = 0; i <= n; ++i)
      for (long j = i + 1; j <= n; ++j)
        if (fv[j] < fv[i]) {
          std::swap(fv[i], fv[j]);
          std::swap(v[i], v[j]);
        }
  };
  order();
  while (evals < max_evals) {
    if (std::abs(fv[n] - fv[0]) <= ftol * (std::abs(fv[0]) + ftol)) break;
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (long k = 0; k < n; ++k) centroid += v[k];
    centroid /= static_cast<double>(n);
    Eigen::VectorXd xr = centroid + (centroid - v[n]);
    double fr = f(xr);
    ++evals;
    if (fr < fv[0]) {
      Eigen::VectorXd xe = centroid + 2.0 * (centroid - v[n]);
      double fe = f(xe);
      ++evals;
      if (fe < fr) {
        v[n] = xe; fv[n] = fe;
      } else {
        v[n] = xr; fv[n] = fr;
      }
    } else if (fr < fv[n - 1]) {
      v[n] = xr; fv[n] = fr;
    } else {
      Eigen::VectorXd xc = centroid + 0.5 * (v[n] - centroid);
      double fc = f(xc);
      ++evals;
      if (fc < fv[n]) {
        v[n] = xc; fv[n] = fc;
      } else {
        for (long k = 1; k <= n; ++k) {
          v[k] = v[0] + 0.5 * (v[k] - v[0]);
          fv[k] = f(v[k]);
          ++evals;
        }
      }
    }
    order();
  }
  return v[0];
}

}  // namespace plzip
