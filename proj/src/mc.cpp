#include "plzip/mc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "plzip/errors.hpp"
#include "plzip/fit.hpp"
#include "plzip/parallel.hpp"
#include "plzip/rng.hpp"
#include "plzip/smoothing.hpp"

namespace plzip {

namespace {

constexpr double kPi = 3.14159265358979323846;

double nan_val() { return std::numeric_limits<double>::quiet_NaN(); }

double median_of(std::vector<double> v) {
  if (v.empty()) return nan_val();
  size_t n = v.size();
  auto mid = v.begin() + n / 2;
  std::nth_element(v.begin(), mid, v.end());
  double hi = *mid;
  if (n % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

double mad_of(const std::vector<double>& v) {
  if (v.empty()) return nan_val();
  double med = median_of(v);
  std::vector<double> dev(v.size());
  for (size_t k = 0; k < v.size(); ++k) dev[k] = std::abs(v[k] - med);
  return 1.4826 * median_of(dev);
}

}  // namespace

std::string scheme_name(Scheme s) {
  switch (s) {
    case Scheme::C0: return "c0";
    case Scheme::C1: return "c1";
    case Scheme::C2: return "c2";
    case Scheme::C3: return "c3";
  }
  return "?";
}

Scheme scheme_from_name(const std::string& name) {
  if (name == "c0" || name == "C0") return Scheme::C0;
  if (name == "c1" || name == "C1") return Scheme::C1;
  if (name == "c2" || name == "C2") return Scheme::C2;
  if (name == "c3" || name == "C3") return Scheme::C3;
  throw std::invalid_argument("unknown scheme '" + name + "'");
}

std::pair<Dataset, TruthRecord> gen_scheme(const SchemeConfig& cfg) {
  if (cfg.n < 10) throw std::invalid_argument("gen_scheme: n >= 10");
  const long n = cfg.n;
  // one stream per dataset; draw order is part of the format:
  // x2, t, z1, z2, w, y | contamination indices, redraws
  Rng rng(cfg.seed);

  Dataset d;
  TruthRecord truth;
  truth.beta0 = Eigen::Vector2d(2.0, 2.0);
  truth.gamma0 = Eigen::Vector2d(-1.0, 1.0);
  d.X.resize(n, 2);
  d.Z.resize(n, 2);
  d.y.resize(n);
  d.t.resize(n);
  truth.w_true.resize(n);
  truth.m_true.resize(n);
  truth.contaminated.assign(n, 0);

  for (long i = 0; i < n; ++i) d.X(i, 0) = (i < n / 2) ? 1.0 : 0.0;
  for (long i = 0; i < n; ++i) d.X(i, 1) = rng.uniform(0.0, 1.0);
  for (long i = 0; i < n; ++i) d.t(i) = rng.uniform(-2.0, 2.0);
  for (long i = 0; i < n; ++i) d.Z(i, 0) = rng.uniform(0.0, 1.0);
  for (long i = 0; i < n; ++i) d.Z(i, 1) = rng.normal();

  for (long i = 0; i < n; ++i) {
    truth.m_true(i) = std::sin(0.5 * kPi * d.t(i));
    double pi_i = 1.0 / (1.0 + std::exp(-d.Z.row(i).dot(truth.gamma0)));
    truth.w_true(i) = (rng.uniform() < pi_i) ? 1.0 : 0.0;
  }
  for (long i = 0; i < n; ++i) {
    if (truth.w_true(i) == 1.0) {
      d.y(i) = 0.0;
    } else {
      double lam = std::exp(d.X.row(i).dot(truth.beta0) + truth.m_true(i));
      d.y(i) = static_cast<double>(rng.poisson(lam));
    }
  }

  auto contaminate_response = [&](const std::vector<long>& idx) {
    for (long i : idx) {
      d.y(i) += cfg.y0;
      truth.contaminated[i] = 1;
    }
  };
  auto contaminate_covariate = [&](const std::vector<long>& idx) {
    for (long i : idx) {
      d.X(i, 1) = rng.uniform(1.0, 2.0);
      d.y(i) = 0.0;
      truth.contaminated[i] = 1;
    }
  };

  std::vector<long> idx;
  switch (cfg.scheme) {
    case Scheme::C0:
      break;
    case Scheme::C1:
      rng.choose(n, n / 10, idx);
      contaminate_response(idx);
      break;
    case Scheme::C2:
      rng.choose(n, n / 10, idx);
      contaminate_covariate(idx);
      break;
    case Scheme::C3: {
      rng.choose(n, 2 * (n / 20), idx);
      std::vector<long> first(idx.begin(), idx.begin() + n / 20);
      std::vector<long> second(idx.begin() + n / 20, idx.end());
      contaminate_covariate(first);
      contaminate_response(second);
      break;
    }
  }
  return {std::move(d), std::move(truth)};
}

double rmse_m(const std::vector<double>& mhat, const std::vector<double>& m0) {
  if (mhat.size() != m0.size())
    throw std::invalid_argument("rmse_m: length mismatch");
  if (mhat.empty()) throw std::invalid_argument("rmse_m: empty input");
  double acc = 0.0;
  for (size_t k = 0; k < mhat.size(); ++k) {
    double d = mhat[k] - m0[k];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(mhat.size()));
}

namespace {

const LossSpec& study_loss(const StudyConfig& cfg, LossFamily fam) {
  double c = fam == LossFamily::CH ? cfg.c_ch : cfg.c_mt;
  return get_loss(fam, c);
}

uint64_t dataset_seed(const StudyConfig& cfg, Scheme scheme, long rep) {
  return Rng::stream(cfg.seed, static_cast<uint64_t>(scheme) + 1,
                     static_cast<uint64_t>(rep));
}

std::vector<double> study_cv_grid(const StudyConfig& cfg, const Dataset& d) {
  if (!cfg.cv_grid.empty()) return cfg.cv_grid;
  double range = d.t.maxCoeff() - d.t.minCoeff();
  std::vector<double> grid(6);
  double lo = std::log(0.02 * range), hi = std::log(0.2 * range);
  for (int k = 0; k < 6; ++k)
    grid[k] = std::exp(lo + (hi - lo) * k / 5.0);
  return grid;
}

}  // namespace

std::vector<StudyRow> run_study(const StudyConfig& cfg) {
  if (cfg.reps < 1) throw std::invalid_argument("run_study: reps >= 1");
  if (cfg.schemes.empty() || cfg.losses.empty())
    throw std::invalid_argument("run_study: schemes and losses required");

  // bandwidth per loss, resolved once
  std::vector<double> h_for_loss(cfg.losses.size(), cfg.fixed_h);
  if (cfg.policy == BandwidthPolicy::CvAverage) {
    Scheme first = cfg.schemes.front();
    long cv_reps = std::min<long>(cfg.cv_reps, cfg.reps);
    for (size_t li = 0; li < cfg.losses.size(); ++li) {
      const LossSpec& spec = study_loss(cfg, cfg.losses[li]);
      std::vector<double> picked(cv_reps, 0.0);
      parallel_for(
          cv_reps,
          [&](long r) {
            SchemeConfig sc{first, cfg.n, dataset_seed(cfg, first, r)};
            auto [d, truth] = gen_scheme(sc);
            FitConfig cvfit = cfg.fit;
            cvfit.threads = 1;
            picked[r] = cv_bandwidth(d, spec, cfg.cv_folds,
                                     study_cv_grid(cfg, d),
                                     Rng::stream(cfg.seed, 0xCF, r), cvfit);
          },
          cfg.threads);
      double mean = 0.0;
      for (double h : picked) mean += h;
      h_for_loss[li] = mean / static_cast<double>(cv_reps);
    }
  }

  struct Cell {
    Scheme scheme;
    LossFamily loss;
    size_t loss_index;
  };
  std::vector<Cell> cells;
  for (Scheme s : cfg.schemes)
    for (size_t li = 0; li < cfg.losses.size(); ++li)
      cells.push_back({s, cfg.losses[li], li});

  std::vector<StudyRow> rows(cells.size() * cfg.reps);
  for (size_t ci = 0; ci < cells.size(); ++ci) {
    const Cell& cell = cells[ci];
    const LossSpec& spec = study_loss(cfg, cell.loss);
    parallel_for(
        cfg.reps,
        [&](long rep) {
          StudyRow& row = rows[ci * cfg.reps + rep];
          row.scheme = scheme_name(cell.scheme);
          row.loss = spec.name();
          row.rep = rep;
          SchemeConfig sc{cell.scheme, cfg.n,
                          dataset_seed(cfg, cell.scheme, rep)};
          auto [d, truth] = gen_scheme(sc);
          FitConfig fit_cfg = cfg.fit;
          fit_cfg.threads = 1;  // parallelism lives at the replication level
          double h = h_for_loss[cell.loss_index];
          if (cfg.policy == BandwidthPolicy::CvEach) {
            try {
              h = cv_bandwidth(d, spec, cfg.cv_folds, study_cv_grid(cfg, d),
                               Rng::stream(cfg.seed, 0xCF, rep), fit_cfg);
            } catch (const SelectionError&) {
              row.converged = false;
              row.beta_err = row.gamma_err = row.rmse = nan_val();
              return;
            }
          }
          row.h = h;
          auto t0 = std::chrono::steady_clock::now();
          try {
            FitResult fit = em_fit(d, spec, KernelConfig{h}, fit_cfg);
            row.converged = fit.converged;
            row.iterations = fit.iterations;
            row.score_norm = fit.score_norm;
            row.beta_err = (fit.theta.beta - truth.beta0).norm();
            row.gamma_err = fit.gamma_separated
                                ? nan_val()
                                : (fit.theta.gamma - truth.gamma0).norm();
            std::vector<double> mhat(d.n()), m0(d.n());
            for (long i = 0; i < d.n(); ++i) {
              mhat[i] = fit.theta.m_at(d.t(i));
              m0[i] = truth.m_true(i);
            }
            row.rmse = rmse_m(mhat, m0);
          } catch (const std::exception&) {
            row.converged = false;
            row.beta_err = row.gamma_err = row.rmse = nan_val();
          }
          row.wall_ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
        },
        cfg.threads);
  }
  return rows;
}

TextTable study_rows_table(const std::vector<StudyRow>& rows) {
  TextTable t;
  t.names = {"scheme",    "loss",       "rep",        "h",
             "beta_err",  "gamma_err",  "rmse_m",     "converged",
             "iterations", "score_norm", "wall_ms"};
  for (const auto& r : rows) {
    t.rows.push_back({r.scheme, r.loss, std::to_string(r.rep),
                      format_double(r.h), format_double(r.beta_err),
                      format_double(r.gamma_err), format_double(r.rmse),
                      r.converged ? "1" : "0", std::to_string(r.iterations),
                      format_double(r.score_norm),
                      format_double(r.wall_ms)});
  }
  return t;
}

TextTable study_summary_table(const std::vector<StudyRow>& rows) {
  TextTable t;
  t.names = {"scheme",           "loss",
             "reps",             "converged",
             "h",                "beta_err_median",
             "beta_err_mad",     "gamma_err_median",
             "gamma_err_mad",    "rmse_m_median",
             "rmse_m_mad"};
  // cells appear in first-seen order, which follows the study layout
  std::vector<std::pair<std::string, std::string>> cells;
  for (const auto& r : rows) {
    auto key = std::make_pair(r.scheme, r.loss);
    if (std::find(cells.begin(), cells.end(), key) == cells.end())
      cells.push_back(key);
  }
  for (const auto& cell : cells) {
    std::vector<double> be, ge, rm;
    long reps = 0, conv = 0;
    double h = nan_val();
    for (const auto& r : rows) {
      if (r.scheme != cell.first || r.loss != cell.second) continue;
      ++reps;
      if (r.converged) ++conv;
      h = r.h;
      if (std::isfinite(r.beta_err)) be.push_back(r.beta_err);
      if (std::isfinite(r.gamma_err)) ge.push_back(r.gamma_err);
      if (std::isfinite(r.rmse)) rm.push_back(r.rmse);
    }
    t.rows.push_back({cell.first, cell.second, std::to_string(reps),
                      std::to_string(conv), format_double(h),
                      format_double(median_of(be)), format_double(mad_of(be)),
                      format_double(median_of(ge)), format_double(mad_of(ge)),
                      format_double(median_of(rm)),
                      format_double(mad_of(rm))});
  }
  return t;
}

}  // namespace plzip
