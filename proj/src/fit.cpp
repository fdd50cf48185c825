#include "plzip/fit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "plzip/errors.hpp"
#include "plzip/leverage.hpp"
#include "plzip/model.hpp"
#include "plzip/optim.hpp"
#include "plzip/parallel.hpp"
#include "plzip/rng.hpp"
#include "plzip/smoothing.hpp"

namespace plzip {

namespace {

constexpr double kWindowSigmas = 8.0;   // kernel support cutoff
constexpr double kLocalTol = 1e-6;      // step-1/2 score tolerance
constexpr double kEtaTol = 1e-8;        // step-3 scalar score tolerance
constexpr double kEtaScanHalf = 3.0;    // step-3 scan half width
constexpr double kEtaScanStep = 0.05;
constexpr double kGammaCap = 50.0;      // separation guard on |gamma|

uint64_t tau_bits(double tau) {
  uint64_t b;
  std::memcpy(&b, &tau, sizeof(b));
  return b;
}

double log1pexp(double x) {
  if (x > 36.0) return x;
  if (x < -36.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// ---------------------------------------------------------------------
// data sorted by t with a unique-tau grid and kernel windows

struct SortedData {
  Eigen::VectorXd t, y, om1;
  Eigen::MatrixXd X;
  std::vector<long> order;        // sorted position -> original row
  std::vector<double> tau;        // unique sorted t
  std::vector<long> obs_slot;     // original row -> tau slot
  std::vector<long> sorted_slot;  // sorted position -> tau slot

  void build(const Dataset& data, const Eigen::VectorXd& omega1) {
    const long n = data.n();
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](long a, long b) { return data.t(a) < data.t(b); });
    t.resize(n);
    y.resize(n);
    om1.resize(n);
    X.resize(n, data.p());
    for (long k = 0; k < n; ++k) {
      long i = order[k];
      t(k) = data.t(i);
      y(k) = data.y(i);
      om1(k) = omega1(i);
      X.row(k) = data.X.row(i);
    }
    tau.clear();
    sorted_slot.resize(n);
    for (long k = 0; k < n; ++k) {
      if (tau.empty() || t(k) != tau.back()) tau.push_back(t(k));
      sorted_slot[k] = static_cast<long>(tau.size()) - 1;
    }
    obs_slot.resize(n);
    for (long k = 0; k < n; ++k) obs_slot[order[k]] = sorted_slot[k];
  }

  //! sorted-index window of points within kWindowSigmas * h of tau
  std::pair<long, long> window(double tv, double h) const {
    double lo = tv - kWindowSigmas * h, hi = tv + kWindowSigmas * h;
    const double* begin = t.data();
    const double* end = t.data() + t.size();
    long a = std::lower_bound(begin, end, lo) - begin;
    long b = std::upper_bound(begin, end, hi) - begin;
    return {a, b};
  }
};

// ---------------------------------------------------------------------
// local (beta, eta) problem at a fixed tau

struct LocalProblem {
  const SortedData* sd = nullptr;
  const LossSpec* spec = nullptr;
  double tau = 0.0;
  long lo = 0, hi = 0;          // sorted-index window
  Eigen::VectorXd v;            // kernel weight * (1-w) * omega1, window
  Eigen::VectorXd kw;           // normalized kernel weights, window
  long dim = 0;                 // p + 1

  //! builds weights; w is in sorted order
  void init(const SortedData& sorted, const LossSpec& loss, double tv,
            double h, const Eigen::VectorXd& w_sorted) {
    sd = &sorted;
    spec = &loss;
    tau = tv;
    auto win = sorted.window(tv, h);
    lo = win.first;
    hi = win.second;
    if (hi <= lo)
      throw DataError("degenerate kernel window at tau = " +
                      std::to_string(tv));
    long m = hi - lo;
    kw.resize(m);
    double total = 0.0;
    for (long k = 0; k < m; ++k) {
      double u = (tv - sorted.t(lo + k)) / h;
      kw(k) = std::exp(-0.5 * u * u);
      total += kw(k);
    }
    if (!(total > 0.0))
      throw DataError("degenerate kernel window at tau = " +
                      std::to_string(tv));
    kw /= total;
    v.resize(m);
    for (long k = 0; k < m; ++k)
      v(k) = kw(k) * (1.0 - w_sorted(lo + k)) * sorted.om1(lo + k);
    dim = sorted.X.cols() + 1;
  }

  long effective_count() const {
    long c = 0;
    for (long k = 0; k < v.size(); ++k)
      if (v(k) > 1e-12) ++c;
    return c;
  }

  double effective_ysum() const {
    double s = 0.0;
    for (long k = 0; k < v.size(); ++k)
      if (v(k) > 1e-12) s += v(k) * sd->y(lo + k);
    return s;
  }

  // theta = (beta..., eta)
  double predictor(const Eigen::VectorXd& th, long k) const {
    double u = th(dim - 1);
    for (long j = 0; j + 1 < dim; ++j) u += sd->X(lo + k, j) * th(j);
    return u;
  }

  double objective(const Eigen::VectorXd& th) const {
    double q = 0.0;
    for (long k = 0; k < v.size(); ++k)
      if (v(k) > 0.0) q += v(k) * rho(sd->y(lo + k), predictor(th, k), *spec);
    return q;
  }

  void score(const Eigen::VectorXd& th, Eigen::VectorXd& s) const {
    s.setZero(dim);
    for (long k = 0; k < v.size(); ++k) {
      if (v(k) <= 0.0) continue;
      double g = v(k) * psi(sd->y(lo + k), predictor(th, k), *spec);
      for (long j = 0; j + 1 < dim; ++j) s(j) += g * sd->X(lo + k, j);
      s(dim - 1) += g;
    }
  }

  void score_jac(const Eigen::VectorXd& th, Eigen::VectorXd& s,
                 Eigen::MatrixXd& J) const {
    s.setZero(dim);
    J.setZero(dim, dim);
    Eigen::VectorXd a(dim);
    for (long k = 0; k < v.size(); ++k) {
      if (v(k) <= 0.0) continue;
      double u = predictor(th, k);
      double yk = sd->y(lo + k);
      double g = v(k) * psi(yk, u, *spec);
      double dg = v(k) * dpsi(yk, u, *spec);
      for (long j = 0; j + 1 < dim; ++j) a(j) = sd->X(lo + k, j);
      a(dim - 1) = 1.0;
      s.noalias() += g * a;
      J.noalias() += dg * (a * a.transpose());
    }
  }
};

//! damped Newton on the local score; trust-capped steps
bool local_newton(const LocalProblem& prob, Eigen::VectorXd& th, double tol,
                  int max_iter = 60) {
  const long d = prob.dim;
  Eigen::VectorXd s(d), st(d);
  Eigen::MatrixXd J(d, d);
  prob.score(th, s);
  if (!s.allFinite()) return false;
  double snorm = s.norm();
  for (int it = 0; it < max_iter; ++it) {
    if (s.lpNorm<Eigen::Infinity>() <= tol) return true;
    prob.score_jac(th, s, J);
    Eigen::VectorXd step;
    double mu = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt) {
      Eigen::MatrixXd Jd = J;
      Jd.diagonal().array() += mu;
      step = Jd.fullPivLu().solve(-s);
      if (step.allFinite() &&
          (attempt > 0 || step.norm() < 1e6)) break;
      mu = (mu == 0.0) ? 1e-6 * (1.0 + J.diagonal().cwiseAbs().maxCoeff())
                       : mu * 100.0;
    }
    if (!step.allFinite()) return false;
    double nd = step.norm();
    if (nd > 2.0) step *= 2.0 / nd;
    double lambda = 1.0;
    bool ok = false;
    for (int ls = 0; ls < 30; ++ls) {
      prob.score(th + lambda * step, st);
      if (st.allFinite() && st.norm() < snorm) {
        ok = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!ok) return s.lpNorm<Eigen::Infinity>() <= tol;
    th += lambda * step;
    s = st;
    snorm = s.norm();
  }
  return s.lpNorm<Eigen::Infinity>() <= tol;
}

struct Candidate {
  Eigen::VectorXd th;
  double obj = std::numeric_limits<double>::infinity();
  bool converged = false;
};

Candidate run_chain(const LocalProblem& prob, Eigen::VectorXd seed,
                    double tol) {
  Candidate c;
  c.converged = local_newton(prob, seed, tol);
  c.th = std::move(seed);
  if (c.th.allFinite()) c.obj = prob.objective(c.th);
  return c;
}

//! Local ML solution used as a multistart seed (and as the solver for the
//! ML family itself).
Candidate local_ml_fit(const LocalProblem& prob, const Eigen::VectorXd* warm) {
  const LossSpec& ml = get_loss(LossFamily::ML, 0.0);
  LocalProblem mlprob = prob;
  mlprob.spec = &ml;
  Eigen::VectorXd seed;
  if (warm && warm->allFinite()) {
    seed = *warm;
  } else {
    seed = Eigen::VectorXd::Zero(prob.dim);
    double sy = 0.0, sv = 0.0;
    for (long k = 0; k < prob.v.size(); ++k) {
      sy += prob.v(k) * prob.sd->y(prob.lo + k);
      sv += prob.v(k);
    }
    seed(prob.dim - 1) = std::log(std::max(sy, 1e-8) / std::max(sv, 1e-12));
  }
  return run_chain(mlprob, std::move(seed), kLocalTol);
}

LocalFit solve_local(const LocalProblem& prob, const FitConfig& cfg,
                     const LocalFit* warm, bool full_multistart) {
  if (prob.effective_count() < prob.dim)
    throw FitError("local fit: too few effective observations", prob.tau,
                   true);
  if (!(prob.effective_ysum() > 0.0))
    throw FitError("local fit: no positive counts in the window", prob.tau,
                   true);

  const bool is_ml = prob.spec->family() == LossFamily::ML;
  Eigen::VectorXd warm_th;
  if (warm) {
    warm_th.resize(prob.dim);
    warm_th.head(prob.dim - 1) = warm->beta;
    warm_th(prob.dim - 1) = warm->eta;
  }

  std::vector<Candidate> cands;
  if (is_ml) {
    cands.push_back(local_ml_fit(prob, warm ? &warm_th : nullptr));
  } else {
    if (warm) cands.push_back(run_chain(prob, warm_th, kLocalTol));
    bool warm_ok = !cands.empty() && cands.back().converged;
    if (full_multistart || !warm_ok) {
      Candidate ml = local_ml_fit(prob, warm ? &warm_th : nullptr);
      cands.push_back(run_chain(prob, ml.th, kLocalTol));
    }
    // random restarts when the deterministic seeds failed or disagree
    bool need_restarts = false;
    if (full_multistart && cands.size() >= 2) {
      bool both = cands[0].converged && cands[1].converged;
      double gap = (cands[0].th - cands[1].th).lpNorm<Eigen::Infinity>();
      need_restarts = !both || gap > 1e-3;
    }
    if (std::none_of(cands.begin(), cands.end(),
                     [](const Candidate& c) { return c.converged; }))
      need_restarts = true;
    if (need_restarts && cfg.restarts > 0) {
      const Candidate& base =
          *std::min_element(cands.begin(), cands.end(),
                            [](const Candidate& a, const Candidate& b) {
                              return a.obj < b.obj;
                            });
      Rng rng(Rng::stream(cfg.seed, 0x5741, tau_bits(prob.tau)));
      for (int r = 0; r < cfg.restarts; ++r) {
        Eigen::VectorXd seed = base.th;
        for (long j = 0; j < prob.dim; ++j) seed(j) += 0.5 * rng.normal();
        seed = nelder_mead(
            [&](const Eigen::VectorXd& x) { return prob.objective(x); },
            std::move(seed), 0.25, 60 * static_cast<int>(prob.dim), 1e-9);
        cands.push_back(run_chain(prob, std::move(seed), kLocalTol));
      }
    }
  }

  const Candidate* best = nullptr;
  for (const auto& c : cands)
    if (c.converged && (!best || c.obj < best->obj)) best = &c;
  if (!best)
    throw FitError("local fit failed to converge", prob.tau, true);
  LocalFit out;
  out.beta = best->th.head(prob.dim - 1);
  out.eta = best->th(prob.dim - 1);
  out.converged = true;
  Eigen::VectorXd s;
  prob.score(best->th, s);
  out.score_inf_norm = s.lpNorm<Eigen::Infinity>();
  return out;
}

//! step-3 problem: scalar eta with beta fixed; grid scan plus root polish
double solve_eta(const LocalProblem& prob, const Eigen::VectorXd& beta,
                 double eta_tilde) {
  if (prob.effective_count() < 1)
    throw FitError("local fit: too few effective observations", prob.tau,
                   true);
  if (!(prob.effective_ysum() > 0.0))
    throw FitError("local fit: no positive counts in the window", prob.tau,
                   true);
  const long m = prob.v.size();
  Eigen::VectorXd xb(m);
  for (long k = 0; k < m; ++k) {
    double u = 0.0;
    for (long j = 0; j < beta.size(); ++j) u += prob.sd->X(prob.lo + k, j) * beta(j);
    xb(k) = u;
  }
  auto qobj = [&](double eta) {
    double q = 0.0;
    for (long k = 0; k < m; ++k)
      if (prob.v(k) > 0.0)
        q += prob.v(k) * rho(prob.sd->y(prob.lo + k), xb(k) + eta, *prob.spec);
    return q;
  };
  auto sfun = [&](double eta) {
    double s = 0.0;
    for (long k = 0; k < m; ++k)
      if (prob.v(k) > 0.0)
        s += prob.v(k) * psi(prob.sd->y(prob.lo + k), xb(k) + eta, *prob.spec);
    return s;
  };

  // ML has the weighted-Poisson closed form with offset xb
  if (prob.spec->family() == LossFamily::ML) {
    double sy = 0.0, se = 0.0;
    for (long k = 0; k < m; ++k) {
      if (prob.v(k) <= 0.0) continue;
      sy += prob.v(k) * prob.sd->y(prob.lo + k);
      se += prob.v(k) * std::exp(xb(k));
    }
    return std::log(sy / se);
  }

  double center = eta_tilde;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const long steps = static_cast<long>(
        std::round(2.0 * kEtaScanHalf / kEtaScanStep));
    double best_eta = center - kEtaScanHalf;
    double best_q = qobj(best_eta);
    long best_k = 0;
    for (long k = 1; k <= steps; ++k) {
      double eta = center - kEtaScanHalf + kEtaScanStep * k;
      double q = qobj(eta);
      if (q < best_q) {
        best_q = q;
        best_eta = eta;
        best_k = k;
      }
    }
    if (best_k == 0 || best_k == steps) {
      // minimum at the scan edge: recenter once, then give up loudly
      if (attempt == 0) {
        center = best_eta + (best_k == 0 ? -kEtaScanHalf : kEtaScanHalf);
        continue;
      }
      throw FitError("step-3 scan hit its boundary", prob.tau, true);
    }
    double lo = best_eta - kEtaScanStep, hi = best_eta + kEtaScanStep;
    double slo = sfun(lo), shi = sfun(hi);
    if (slo == 0.0) return lo;
    if (shi == 0.0) return hi;
    if (slo * shi < 0.0) {
      double root = brent_root(sfun, lo, hi, 1e-13);
      if (std::isfinite(root)) return root;
    }
    // no sign change (flat redescending stretch): refine the objective
    return brent_min(qobj, lo, hi, 1e-11);
  }
  throw FitError("step-3 scan failed", prob.tau, true);  // unreachable
}

// ---------------------------------------------------------------------
// global beta step

struct BetaProblem {
  const Dataset* data;
  const LossSpec* spec;
  const Eigen::VectorXd* m;
  Eigen::VectorXd v;  // (1-w) omega1 / n

  double objective(const Eigen::VectorXd& beta) const {
    double q = 0.0;
    for (long i = 0; i < data->n(); ++i)
      if (v(i) > 0.0)
        q += v(i) * rho(data->y(i), data->X.row(i).dot(beta) + (*m)(i), *spec);
    return q;
  }
  void score(const Eigen::VectorXd& beta, Eigen::VectorXd& s) const {
    s.setZero(beta.size());
    for (long i = 0; i < data->n(); ++i) {
      if (v(i) <= 0.0) continue;
      double g = v(i) * psi(data->y(i), data->X.row(i).dot(beta) + (*m)(i), *spec);
      s.noalias() += g * data->X.row(i).transpose();
    }
  }
  void score_jac(const Eigen::VectorXd& beta, Eigen::VectorXd& s,
                 Eigen::MatrixXd& J) const {
    const long p = beta.size();
    s.setZero(p);
    J.setZero(p, p);
    for (long i = 0; i < data->n(); ++i) {
      if (v(i) <= 0.0) continue;
      double u = data->X.row(i).dot(beta) + (*m)(i);
      double g = v(i) * psi(data->y(i), u, *spec);
      double dg = v(i) * dpsi(data->y(i), u, *spec);
      s.noalias() += g * data->X.row(i).transpose();
      J.noalias() += dg * (data->X.row(i).transpose() * data->X.row(i));
    }
  }
};

bool beta_newton(const BetaProblem& prob, Eigen::VectorXd& beta, double tol) {
  const long p = beta.size();
  Eigen::VectorXd s(p), st(p);
  Eigen::MatrixXd J(p, p);
  prob.score(beta, s);
  if (!s.allFinite()) return false;
  double snorm = s.norm();
  for (int it = 0; it < 80; ++it) {
    if (s.lpNorm<Eigen::Infinity>() <= tol) return true;
    prob.score_jac(beta, s, J);
    double mu = 0.0;
    Eigen::VectorXd step;
    for (int attempt = 0; attempt < 8; ++attempt) {
      Eigen::MatrixXd Jd = J;
      Jd.diagonal().array() += mu;
      step = Jd.fullPivLu().solve(-s);
      if (step.allFinite()) break;
      mu = (mu == 0.0) ? 1e-8 : mu * 100.0;
    }
    if (!step.allFinite()) return false;
    if (step.norm() > 2.0) step *= 2.0 / step.norm();
    double lambda = 1.0;
    bool ok = false;
    for (int ls = 0; ls < 30; ++ls) {
      prob.score(beta + lambda * step, st);
      if (st.allFinite() && st.norm() < snorm) {
        ok = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!ok) return s.lpNorm<Eigen::Infinity>() <= tol;
    beta += lambda * step;
    s = st;
    snorm = s.norm();
  }
  return s.lpNorm<Eigen::Infinity>() <= tol;
}

}  // namespace

// ---------------------------------------------------------------------
// public surface

Eigen::VectorXd e_step(const Dataset& data, const Eigen::VectorXd& beta,
                       const Eigen::VectorXd& gamma,
                       const Eigen::VectorXd& m) {
  Eigen::VectorXd w(data.n());
  for (long i = 0; i < data.n(); ++i)
    w(i) = posterior_w(data.y(i), data.Z.row(i).dot(gamma),
                       data.X.row(i).dot(beta) + m(i));
  return w;
}

LocalFit step1_local(double tau, const Dataset& data, const Eigen::VectorXd& w,
                     const LossSpec& spec, const KernelConfig& kernel,
                     const Eigen::VectorXd& omega1, const FitConfig& cfg,
                     const LocalFit* warm) {
  SortedData sd;
  sd.build(data, omega1);
  Eigen::VectorXd ws(data.n());
  for (long k = 0; k < data.n(); ++k) ws(k) = w(sd.order[k]);
  LocalProblem prob;
  prob.init(sd, spec, tau, kernel.h, ws);
  return solve_local(prob, cfg, warm, /*full_multistart=*/true);
}

Eigen::VectorXd step2_beta(const Dataset& data, const Eigen::VectorXd& m,
                           const Eigen::VectorXd& w, const LossSpec& spec,
                           const Eigen::VectorXd& omega1, const FitConfig& cfg,
                           const Eigen::VectorXd* seed_median,
                           const Eigen::VectorXd* warm) {
  BetaProblem prob{&data, &spec, &m,
                   ((1.0 - w.array()) * omega1.array() / data.n()).matrix()};
  std::vector<Candidate> cands;
  auto try_seed = [&](Eigen::VectorXd seed) {
    Candidate c;
    c.converged = beta_newton(prob, seed, kLocalTol);
    c.th = std::move(seed);
    if (c.th.allFinite()) c.obj = prob.objective(c.th);
    cands.push_back(std::move(c));
  };
  if (seed_median) try_seed(*seed_median);
  if (warm) try_seed(*warm);
  if (cands.empty()) try_seed(Eigen::VectorXd::Zero(data.p()));
  bool any = std::any_of(cands.begin(), cands.end(),
                         [](const Candidate& c) { return c.converged; });
  bool disagree = false;
  if (cands.size() >= 2 && cands[0].converged && cands[1].converged)
    disagree = (cands[0].th - cands[1].th).lpNorm<Eigen::Infinity>() > 1e-3;
  if ((!any || disagree) && spec.family() != LossFamily::ML &&
      cfg.restarts > 0) {
    const Candidate& base =
        *std::min_element(cands.begin(), cands.end(),
                          [](const Candidate& a, const Candidate& b) {
                            return a.obj < b.obj;
                          });
    Rng rng(Rng::stream(cfg.seed, 0xBE7A, 0));
    for (int r = 0; r < cfg.restarts; ++r) {
      Eigen::VectorXd seed = base.th;
      for (long j = 0; j < seed.size(); ++j) seed(j) += 0.5 * rng.normal();
      try_seed(std::move(seed));
    }
  }
  const Candidate* best = nullptr;
  for (const auto& c : cands)
    if (c.converged && (!best || c.obj < best->obj)) best = &c;
  if (!best) throw FitError("beta step failed to converge after restarts");
  return best->th;
}

Eigen::VectorXd step2_gamma(const Dataset& data, const Eigen::VectorXd& w,
                            const Eigen::VectorXd& omega3) {
  const long n = data.n(), q = data.q();
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(q);
  auto objective = [&](const Eigen::VectorXd& g) {
    double f = 0.0;
    for (long i = 0; i < n; ++i) {
      double zg = data.Z.row(i).dot(g);
      f += omega3(i) * (log1pexp(zg) - w(i) * zg);
    }
    return f / n;
  };
  double fcur = objective(gamma);
  Eigen::VectorXd grad(q), gnew(q);
  Eigen::MatrixXd H(q, q);
  for (int it = 0; it < 200; ++it) {
    grad.setZero();
    H.setZero();
    for (long i = 0; i < n; ++i) {
      double zg = data.Z.row(i).dot(gamma);
      double p = 1.0 / (1.0 + std::exp(-std::max(std::min(zg, 700.0), -700.0)));
      double r = omega3(i) * (p - w(i));
      grad.noalias() += r * data.Z.row(i).transpose();
      H.noalias() += (omega3(i) * p * (1.0 - p)) *
                     (data.Z.row(i).transpose() * data.Z.row(i));
    }
    grad /= n;
    H /= n;
    if (grad.lpNorm<Eigen::Infinity>() <= 1e-10) return gamma;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Eigen::VectorXd step;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive())
      step = ldlt.solve(-grad);
    if (!step.size() || !step.allFinite() ||
        (H * step + grad).norm() > 1e-6 * (1.0 + grad.norm())) {
      // singular Hessian with a live gradient: unbounded direction
      Eigen::VectorXd dir = -grad.normalized();
      throw SeparationError(
          "gamma step: quasi-separation (singular curvature)",
          std::vector<double>(dir.data(), dir.data() + dir.size()));
    }
    double lambda = 1.0;
    double fnew = fcur;
    for (int ls = 0; ls < 40; ++ls) {
      gnew = gamma + lambda * step;
      fnew = objective(gnew);
      if (std::isfinite(fnew) && fnew <= fcur) break;
      lambda *= 0.5;
    }
    gamma = gnew;
    fcur = fnew;
    if (gamma.norm() > kGammaCap) {
      Eigen::VectorXd dir = gamma.normalized();
      throw SeparationError(
          "gamma step: quasi-separation (runaway coefficients)",
          std::vector<double>(dir.data(), dir.data() + dir.size()));
    }
  }
  return gamma;
}

double step3_m(double tau, const Eigen::VectorXd& beta, const Dataset& data,
               const Eigen::VectorXd& w, const LossSpec& spec,
               const KernelConfig& kernel, const Eigen::VectorXd& omega1,
               double eta_tilde) {
  SortedData sd;
  sd.build(data, omega1);
  Eigen::VectorXd ws(data.n());
  for (long k = 0; k < data.n(); ++k) ws(k) = w(sd.order[k]);
  LocalProblem prob;
  prob.init(sd, spec, tau, kernel.h, ws);
  return solve_eta(prob, beta, eta_tilde);
}

double score_eta(double tau, const Eigen::VectorXd& beta, double eta,
                 const Dataset& data, const Eigen::VectorXd& w,
                 const LossSpec& spec, const KernelConfig& kernel,
                 const Eigen::VectorXd& omega1) {
  SortedData sd;
  sd.build(data, omega1);
  Eigen::VectorXd ws(data.n());
  for (long k = 0; k < data.n(); ++k) ws(k) = w(sd.order[k]);
  LocalProblem prob;
  prob.init(sd, spec, tau, kernel.h, ws);
  double s = 0.0;
  for (long k = 0; k < prob.v.size(); ++k) {
    if (prob.v(k) <= 0.0) continue;
    double u = eta;
    for (long j = 0; j < beta.size(); ++j)
      u += sd.X(prob.lo + k, j) * beta(j);
    s += prob.v(k) * psi(sd.y(prob.lo + k), u, spec);
  }
  return s;
}

Eigen::VectorXd score_beta(const Dataset& data, const Eigen::VectorXd& beta,
                           const Eigen::VectorXd& m, const Eigen::VectorXd& w,
                           const LossSpec& spec,
                           const Eigen::VectorXd& omega1) {
  BetaProblem prob{&data, &spec, &m,
                   ((1.0 - w.array()) * omega1.array() / data.n()).matrix()};
  Eigen::VectorXd s;
  prob.score(beta, s);
  return s;
}

Eigen::VectorXd score_gamma(const Dataset& data, const Eigen::VectorXd& gamma,
                            const Eigen::VectorXd& w,
                            const Eigen::VectorXd& omega3) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(data.q());
  for (long i = 0; i < data.n(); ++i) {
    double zg = data.Z.row(i).dot(gamma);
    double p = 1.0 / (1.0 + std::exp(-std::max(std::min(zg, 700.0), -700.0)));
    s.noalias() += (omega3(i) * (p - w(i))) * data.Z.row(i).transpose();
  }
  return s / data.n();
}

bool resolve_guard(const LossSpec& spec, const FitConfig& cfg) {
  if (cfg.guard_false_zeros.has_value()) return *cfg.guard_false_zeros;
  return spec.family() != LossFamily::ML;
}

Eigen::VectorXd fit_omega1(const Dataset& data, const LossSpec& spec) {
  if (spec.family() == LossFamily::ML)
    return Eigen::VectorXd::Ones(data.n());
  return build_leverage(data.X).omega_rows(data.X);
}

Eigen::VectorXd fit_omega2(const Dataset& data, const LossSpec& spec) {
  if (spec.family() == LossFamily::ML)
    return Eigen::VectorXd::Ones(data.n());
  return build_leverage(data.Z).omega_rows(data.Z);
}

ThetaEstimate initialize(const Dataset& data, const LossSpec& spec,
                         const KernelConfig& kernel, const FitConfig& cfg) {
  data.validate();
  const long n = data.n();
  double p0 = (data.y.array() == 0.0).cast<double>().mean();
  double lbar = data.y.mean();
  double ptil = std::exp(-lbar);

  // gamma: zero except an intercept column, which absorbs the excess-zero
  // fraction on the logit scale
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(data.q());
  double frac = std::min(0.95, std::max(0.05, p0 - ptil));
  for (long j = 0; j < data.q(); ++j) {
    if ((data.Z.col(j).array() == 1.0).all()) {
      gamma(j) = std::log(frac / (1.0 - frac));
      break;
    }
  }

  ThetaEstimate theta;
  theta.gamma = gamma;
  theta.h = kernel.h;
  theta.loss_family = spec.family();
  theta.loss_c = spec.c();

  bool any_positive = (data.y.array() > 0.0).any();
  Eigen::VectorXd omega1 = fit_omega1(data, spec);
  SortedData sd;
  sd.build(data, omega1);
  theta.m_t = sd.tau;

  if (!any_positive) {
    // all-zero response: the Poisson part is unidentified, skip it
    theta.beta = Eigen::VectorXd::Zero(data.p());
    theta.m_value.assign(sd.tau.size(), 0.0);
    return theta;
  }

  // crude split of the zeros, then one multistart M pass at that split
  double w0 = p0 > 0.0
                  ? std::min(0.95, std::max(0.05, (p0 - ptil) / p0))
                  : 0.0;
  Eigen::VectorXd w(n);
  for (long i = 0; i < n; ++i) w(i) = (data.y(i) == 0.0) ? w0 : 0.0;

  Eigen::VectorXd ws(n);
  for (long k = 0; k < n; ++k) ws(k) = w(sd.order[k]);

  const long ntau = static_cast<long>(sd.tau.size());
  Eigen::MatrixXd betas(ntau, data.p());
  std::vector<double> mtil(ntau);
  std::vector<LocalFit> fits(ntau);
  parallel_for(
      ntau,
      [&](long k) {
        LocalProblem prob;
        prob.init(sd, spec, sd.tau[k], kernel.h, ws);
        fits[k] = solve_local(prob, cfg, nullptr, /*full_multistart=*/true);
      },
      cfg.threads);
  for (long k = 0; k < ntau; ++k) {
    betas.row(k) = fits[k].beta;
    mtil[k] = fits[k].eta;
  }

  Eigen::VectorXd med(data.p());
  for (long j = 0; j < data.p(); ++j) {
    std::vector<double> col(betas.col(j).data(), betas.col(j).data() + ntau);
    auto mid = col.begin() + col.size() / 2;
    std::nth_element(col.begin(), mid, col.end());
    med(j) = *mid;
  }
  Eigen::VectorXd m_per_obs(n);
  for (long i = 0; i < n; ++i) m_per_obs(i) = mtil[sd.obs_slot[i]];
  theta.beta = step2_beta(data, m_per_obs, w, spec, omega1, cfg, &med, nullptr);

  theta.m_value.resize(ntau);
  parallel_for(
      ntau,
      [&](long k) {
        LocalProblem prob;
        prob.init(sd, spec, sd.tau[k], kernel.h, ws);
        theta.m_value[k] = solve_eta(prob, theta.beta, mtil[k]);
      },
      cfg.threads);
  return theta;
}

FitResult em_fit(const Dataset& data, const LossSpec& spec,
                 const KernelConfig& kernel, const FitConfig& cfg,
                 const ThetaEstimate* init) {
  data.validate();
  if (!(kernel.h > 0.0)) throw std::invalid_argument("bandwidth must be > 0");
  const long n = data.n();

  FitResult res;
  res.omega1 = fit_omega1(data, spec);
  res.omega2 = fit_omega2(data, spec);
  bool guard = resolve_guard(spec, cfg);
  Eigen::VectorXd omega3 =
      guard ? (res.omega2.array() * res.omega1.array()).matrix() : res.omega2;

  SortedData sd;
  sd.build(data, res.omega1);
  ThetaEstimate theta;
  if (init && init->m_t == sd.tau && init->beta.size() == data.p() &&
      init->gamma.size() == data.q()) {
    theta = *init;
    theta.h = kernel.h;
  } else {
    theta = initialize(data, spec, kernel, cfg);
  }
  const long ntau = static_cast<long>(sd.tau.size());

  Eigen::VectorXd m_per_obs(n);
  for (long i = 0; i < n; ++i) m_per_obs(i) = theta.m_value[sd.obs_slot[i]];

  std::vector<LocalFit> warm(ntau);
  for (long k = 0; k < ntau; ++k) {
    warm[k].beta = theta.beta;
    warm[k].eta = theta.m_value[k];
    warm[k].converged = true;
  }

  Eigen::VectorXd w(n), ws(n);
  bool stopped_by_tol = false;
  int iter = 0;
  for (iter = 1; iter <= cfg.max_em_iters; ++iter) {
    // E step
    w = e_step(data, theta.beta, theta.gamma, m_per_obs);
    for (long k = 0; k < n; ++k) ws(k) = w(sd.order[k]);

    // M step 1: local joint solves, warm-chained with multistart fallback
    std::vector<LocalFit> fits(ntau);
    parallel_for(
        ntau,
        [&](long k) {
          LocalProblem prob;
          prob.init(sd, spec, sd.tau[k], kernel.h, ws);
          try {
            fits[k] = solve_local(prob, cfg, &warm[k], false);
          } catch (const FitError&) {
            fits[k] = solve_local(prob, cfg, nullptr, true);
          }
        },
        cfg.threads);

    Eigen::VectorXd med(data.p());
    {
      std::vector<double> col(ntau);
      for (long j = 0; j < data.p(); ++j) {
        for (long k = 0; k < ntau; ++k) col[k] = fits[k].beta(j);
        auto mid = col.begin() + col.size() / 2;
        std::nth_element(col.begin(), mid, col.end());
        med(j) = *mid;
      }
    }
    Eigen::VectorXd mtil_obs(n);
    for (long i = 0; i < n; ++i) mtil_obs(i) = fits[sd.obs_slot[i]].eta;

    // M step 2
    Eigen::VectorXd beta_new = step2_beta(data, mtil_obs, w, spec, res.omega1,
                                          cfg, &med, &theta.beta);
    Eigen::VectorXd gamma_new = theta.gamma;
    if (!res.gamma_separated) {
      try {
        gamma_new = step2_gamma(data, w, omega3);
      } catch (const SeparationError&) {
        res.gamma_separated = true;  // freeze gamma, keep fitting beta/m
      }
    }

    // M step 3
    std::vector<double> m_new(ntau);
    parallel_for(
        ntau,
        [&](long k) {
          LocalProblem prob;
          prob.init(sd, spec, sd.tau[k], kernel.h, ws);
          m_new[k] = solve_eta(prob, beta_new, fits[k].eta);
        },
        cfg.threads);

    double dm = 0.0;
    for (long k = 0; k < ntau; ++k)
      dm = std::max(dm, std::abs(m_new[k] - theta.m_value[k]));
    double dpar =
        std::max((beta_new - theta.beta).lpNorm<Eigen::Infinity>(),
                 (gamma_new - theta.gamma).lpNorm<Eigen::Infinity>());
    double delta = dpar + dm;

    theta.beta = beta_new;
    theta.gamma = gamma_new;
    theta.m_value = m_new;
    for (long i = 0; i < n; ++i) m_per_obs(i) = theta.m_value[sd.obs_slot[i]];
    for (long k = 0; k < ntau; ++k) {
      warm[k].beta = fits[k].beta;
      warm[k].eta = m_new[k];
    }

    // composite robust objective for the trace
    {
      double q2 = 0.0, q3 = 0.0;
      for (long i = 0; i < n; ++i) {
        q2 += (1.0 - w(i)) * res.omega1(i) *
              rho(data.y(i), data.X.row(i).dot(theta.beta) + m_per_obs(i),
                  spec);
        double zg = data.Z.row(i).dot(theta.gamma);
        q3 += omega3(i) * (log1pexp(zg) - w(i) * zg);
      }
      res.objective_trace.push_back((q2 + q3) / n);
    }

    if (delta < cfg.tol_param) {
      stopped_by_tol = true;
      break;
    }
  }
  res.iterations = std::min(iter, cfg.max_em_iters);
  res.w = e_step(data, theta.beta, theta.gamma, m_per_obs);

  // fixed-point diagnostics after a fresh E step
  Eigen::VectorXd s2 =
      score_beta(data, theta.beta, m_per_obs, res.w, spec, res.omega1);
  Eigen::VectorXd s3 = res.gamma_separated
                           ? Eigen::VectorXd::Zero(data.q())
                           : score_gamma(data, theta.gamma, res.w, omega3);
  Eigen::VectorXd wsf(n);
  for (long k = 0; k < n; ++k) wsf(k) = res.w(sd.order[k]);
  std::vector<double> eta_scores(ntau);
  parallel_for(
      ntau,
      [&](long k) {
        LocalProblem prob;
        prob.init(sd, spec, sd.tau[k], kernel.h, wsf);
        double s = 0.0;
        for (long j = 0; j < prob.v.size(); ++j) {
          if (prob.v(j) <= 0.0) continue;
          double u = theta.m_value[k];
          for (long jj = 0; jj < theta.beta.size(); ++jj)
            u += sd.X(prob.lo + j, jj) * theta.beta(jj);
          s += prob.v(j) * psi(sd.y(prob.lo + j), u, spec);
        }
        eta_scores[k] = std::abs(s);
      },
      cfg.threads);
  double s1max = eta_scores.empty()
                     ? 0.0
                     : *std::max_element(eta_scores.begin(), eta_scores.end());
  res.score_norm =
      std::sqrt(s2.squaredNorm() + s3.squaredNorm()) + s1max;
  res.converged = stopped_by_tol && res.score_norm <= cfg.tol_score;
  res.theta = std::move(theta);
  return res;
}

}  // namespace plzip
