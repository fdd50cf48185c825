#include "plzip/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "plzip/errors.hpp"
#include "plzip/fit.hpp"
#include "plzip/leverage.hpp"
#include "plzip/loss.hpp"
#include "plzip/model.hpp"
#include "plzip/rng.hpp"

namespace plzip {

double gauss_kernel(double v) {
  return 0.3989422804014327 * std::exp(-0.5 * v * v);
}

Eigen::VectorXd nw_weights(double tau, const Eigen::VectorXd& t,
                           const KernelConfig& cfg) {
  if (t.size() < 1) throw std::invalid_argument("nw_weights: empty t");
  if (!(cfg.h > 0.0)) throw std::invalid_argument("nw_weights: h must be > 0");
  Eigen::VectorXd w(t.size());
  double total = 0.0;
  for (long i = 0; i < t.size(); ++i) {
    w(i) = gauss_kernel((tau - t(i)) / cfg.h);
    total += w(i);
  }
  if (!(total > 0.0))
    throw DataError("nw_weights: degenerate kernel window at tau = " +
                    std::to_string(tau));
  return w / total;
}

std::vector<double> default_h_grid(const Eigen::VectorXd& t) {
  double range = t.maxCoeff() - t.minCoeff();
  if (!(range > 0.0)) range = 1.0;
  std::vector<double> grid(20);
  double lo = std::log(0.05 * range), hi = std::log(0.5 * range);
  for (int k = 0; k < 20; ++k)
    grid[k] = std::exp(lo + (hi - lo) * k / 19.0);
  return grid;
}

std::vector<double> parse_h_grid(const std::string& text) {
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    double lo, hi;
    long count;
    char c1, c2;
    std::istringstream ss(text);
    if (!(ss >> lo >> c1 >> hi >> c2 >> count) || c1 != ':' || c2 != ':' ||
        !(lo > 0.0) || !(hi > lo) || count < 1)
      throw std::invalid_argument("bad grid spec '" + text +
                                  "' (want lo:hi:count)");
    out.resize(count);
    if (count == 1) {
      out[0] = lo;
    } else {
      for (long k = 0; k < count; ++k)
        out[k] = std::exp(std::log(lo) +
                          (std::log(hi) - std::log(lo)) * k / (count - 1.0));
    }
    return out;
  }
  std::istringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    out.push_back(std::stod(cell));
  }
  if (out.empty()) throw std::invalid_argument("empty bandwidth grid");
  return out;
}

namespace {

Dataset subset(const Dataset& data, const std::vector<long>& rows) {
  Dataset out;
  long m = static_cast<long>(rows.size());
  out.y.resize(m);
  out.t.resize(m);
  out.X.resize(m, data.p());
  out.Z.resize(m, data.q());
  for (long k = 0; k < m; ++k) {
    out.y(k) = data.y(rows[k]);
    out.t(k) = data.t(rows[k]);
    out.X.row(k) = data.X.row(rows[k]);
    out.Z.row(k) = data.Z.row(rows[k]);
  }
  return out;
}

double nearest_m(const ThetaEstimate& th, double t) {
  auto it = std::lower_bound(th.m_t.begin(), th.m_t.end(), t);
  size_t k = static_cast<size_t>(it - th.m_t.begin());
  if (k == th.m_t.size()) --k;
  if (k > 0 && std::abs(th.m_t[k - 1] - t) < std::abs(th.m_t[k] - t)) --k;
  return th.m_value[k];
}

}  // namespace

double cv_bandwidth(const Dataset& data, const LossSpec& spec, int folds,
                    const std::vector<double>& grid, uint64_t seed,
                    const FitConfig& cfg, CvDetail* detail) {
  if (folds < 2) throw std::invalid_argument("cv_bandwidth: folds >= 2");
  if (grid.empty()) throw std::invalid_argument("cv_bandwidth: empty grid");
  data.validate();
  const long n = data.n();
  if (n < folds) throw std::invalid_argument("cv_bandwidth: n < folds");

  std::vector<double> hs(grid);
  std::sort(hs.begin(), hs.end());

  // deterministic shuffle, contiguous blocks
  std::vector<long> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (long i = n - 1; i > 0; --i) {
    long j = static_cast<long>(rng.next_u64() % static_cast<uint64_t>(i + 1));
    std::swap(perm[i], perm[j]);
  }

  struct Fold {
    Dataset train;
    std::vector<long> held;  // original row indices
    Eigen::VectorXd omega1_held;
    ThetaEstimate warm;
    bool has_warm = false;
  };
  std::vector<Fold> fold_data(folds);
  for (int f = 0; f < folds; ++f) {
    long lo = n * f / folds, hi = n * (f + 1) / folds;
    std::vector<long> train_rows;
    train_rows.reserve(n - (hi - lo));
    auto& fd = fold_data[f];
    for (long k = 0; k < n; ++k) {
      if (k >= lo && k < hi)
        fd.held.push_back(perm[k]);
      else
        train_rows.push_back(perm[k]);
    }
    fd.train = subset(data, train_rows);
    if (spec.family() == LossFamily::ML) {
      fd.omega1_held = Eigen::VectorXd::Ones(
          static_cast<long>(fd.held.size()));
    } else {
      auto lw = build_leverage(fd.train.X);
      fd.omega1_held.resize(static_cast<long>(fd.held.size()));
      for (size_t k = 0; k < fd.held.size(); ++k)
        fd.omega1_held(static_cast<long>(k)) =
            lw.omega(data.X.row(fd.held[k]).transpose());
    }
  }

  std::vector<double> crit(hs.size(),
                           std::numeric_limits<double>::infinity());
  for (size_t hi_idx = 0; hi_idx < hs.size(); ++hi_idx) {
    double h = hs[hi_idx];
    KernelConfig kernel{h};
    double total = 0.0;
    bool ok = true;
    for (int f = 0; f < folds && ok; ++f) {
      auto& fd = fold_data[f];
      try {
        FitResult fit = em_fit(fd.train, spec, kernel, cfg,
                               fd.has_warm ? &fd.warm : nullptr);
        if (!fit.converged) {
          ok = false;
          break;
        }
        fd.warm = fit.theta;
        fd.has_warm = true;
        for (size_t k = 0; k < fd.held.size(); ++k) {
          long i = fd.held[k];
          double m_held =
              step3_m(data.t(i), fit.theta.beta, fd.train, fit.w, spec,
                      kernel, fit.omega1, nearest_m(fit.theta, data.t(i)));
          double u = data.X.row(i).dot(fit.theta.beta) + m_held;
          double w_held =
              fit.gamma_separated
                  ? 0.0
                  : posterior_w(data.y(i), data.Z.row(i).dot(fit.theta.gamma),
                                u);
          double term =
              (1.0 - w_held) * rho(data.y(i), u, spec) * fd.omega1_held(
                  static_cast<long>(k));
          if (!std::isfinite(term)) {
            ok = false;
            break;
          }
          total += term;
        }
      } catch (const FitError&) {
        ok = false;
      } catch (const SeparationError&) {
        ok = false;
      }
    }
    if (ok) crit[hi_idx] = total;
  }

  if (detail) {
    detail->grid = hs;
    detail->criterion = crit;
  }
  size_t best = hs.size();
  for (size_t k = 0; k < hs.size(); ++k)
    if (std::isfinite(crit[k]) && (best == hs.size() || crit[k] < crit[best]))
      best = k;
  if (best == hs.size())
    throw SelectionError("cv_bandwidth: every candidate bandwidth failed");
  return hs[best];
}

}  // namespace plzip
