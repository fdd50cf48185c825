#include <cmath>
#include <vector>

#include "doctest.h"
#include "plzip/errors.hpp"
#include "plzip/loss.hpp"
#include "plzip/optim.hpp"
#include "plzip/rng.hpp"

using namespace plzip;

namespace {

// ---- independent oracles (no calls into the paths they check) ----

double oracle_phi_mt(double s, double c) {
  if (std::abs(s) > c) return 1.0;
  double t = 1.0 - (s / c) * (s / c);
  return 1.0 - t * t * t * t;
}

// Brute-force MT centering: grid step 1e-4 on the expected loss, then a
// Brent polish around the best grid cell.
double oracle_f_mt(double lambda, double c) {
  if (lambda <= 0.0) return 0.0;
  long jhi = static_cast<long>(std::ceil(lambda + 10.0 * std::sqrt(lambda) + 20.0));
  std::vector<double> pm(jhi + 1), sq(jhi + 1);
  for (long j = 0; j <= jhi; ++j) {
    pm[j] = std::exp(pois_log_pmf(static_cast<double>(j), lambda));
    sq[j] = std::sqrt(static_cast<double>(j));
  }
  auto expected = [&](double u) {
    double e = 0.0;
    for (long j = 0; j <= jhi; ++j) e += pm[j] * oracle_phi_mt(sq[j] - u, c);
    return e;
  };
  double lo = -1.0, hi = sq.back() + 1.0;
  double best_u = lo, best_v = expected(lo);
  for (double u = lo; u <= hi; u += 1e-4) {
    double v = expected(u);
    if (v < best_v) {
      best_v = v;
      best_u = u;
    }
  }
  return brent_min(expected, best_u - 2e-4, best_u + 2e-4, 1e-12);
}

// g-series with its own pmf recursion and a configurable truncation.
double oracle_g_series(double s, double c, long jhi) {
  auto dphi_ch = [c](double v) {
    return std::exp(-std::sqrt(std::max(v, c)));
  };
  double total = -dphi_ch(s) * std::exp(-s);
  double lns = std::log(s);
  double lp = -s;
  for (long j = 1; j <= jhi; ++j) {
    lp += lns - std::log(static_cast<double>(j));
    double jd = static_cast<double>(j);
    double dev = std::max(0.0, s - jd * (lns + 1.0 - std::log(jd)));
    total += dphi_ch(dev) * std::exp(lp) * (jd - s) / s;
  }
  return total;
}

// plain recursive Simpson, independent of plzip::integrate
double oracle_simpson(const std::function<double(double)>& f, double a,
                      double b, double tol, int depth = 48) {
  double m = 0.5 * (a + b);
  double fa = f(a), fb = f(b), fm = f(m);
  std::function<double(double, double, double, double, double, double,
                       double, double, int)>
      rec = [&](double x0, double x2, double f0, double f2, double x1,
                double f1, double whole, double tl, int dp) -> double {
    double xl = 0.5 * (x0 + x1), xr = 0.5 * (x1 + x2);
    double fl = f(xl), fr = f(xr);
    double left = (x1 - x0) / 6.0 * (f0 + 4.0 * fl + f1);
    double right = (x2 - x1) / 6.0 * (f1 + 4.0 * fr + f2);
    double diff = left + right - whole;
    if (dp <= 0 || std::abs(diff) <= 15.0 * tl)
      return left + right + diff / 15.0;
    return rec(x0, x1, f0, f1, xl, fl, left, 0.5 * tl, dp - 1) +
           rec(x1, x2, f1, f2, xr, fr, right, 0.5 * tl, dp - 1);
  };
  double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return rec(a, b, fa, fb, m, fm, whole, tol, depth);
}

}  // namespace

TEST_CASE("dev_arg closed forms and sign") {
  CHECK(dev_arg(0, 1.3) == doctest::Approx(std::exp(1.3)).epsilon(1e-14));
  CHECK(dev_arg(1, 0.0) == 0.0);
  CHECK(dev_arg(2, 0.0) ==
        doctest::Approx(2.0 * std::log(2.0) - 1.0).epsilon(1e-14));

  Rng rng(11);
  for (int k = 0; k < 2000; ++k) {
    double y = std::floor(rng.uniform(0, 60));
    double u = rng.uniform(-6, 6);
    double s = dev_arg(y, u);
    CHECK(s >= 0.0);
    if (y >= 1.0) CHECK(dev_arg(y, std::log(y)) <= 1e-12);
  }
}

TEST_CASE("phi CH: values, continuity, monotonicity, domain") {
  const auto& spec = get_loss(LossFamily::CH, 0.5);
  CHECK(phi(0.25, spec) == doctest::Approx(0.12326717284880995).epsilon(1e-12));
  double at_c = 0.5 * std::exp(-std::sqrt(0.5));
  CHECK(phi(0.5 - 1e-12, spec) == doctest::Approx(at_c).epsilon(1e-9));
  CHECK(phi(0.5 + 1e-12, spec) == doctest::Approx(at_c).epsilon(1e-9));

  double prev = phi(0.0, spec);
  CHECK(prev == 0.0);
  for (double s = 0.01; s < 50.0; s += 0.01) {
    double v = phi(s, spec);
    CHECK(v >= prev - 1e-15);
    prev = v;
  }
  CHECK_THROWS_AS(phi(-0.1, spec), DomainError);
  CHECK_THROWS_AS(dphi(-0.1, spec), DomainError);
}

TEST_CASE("phi MT: range, evenness, saturation") {
  const auto& spec = get_loss(LossFamily::MT, 2.9);
  CHECK(phi(0.0, spec) == 0.0);
  CHECK(phi(1.45, spec) == doctest::Approx(0.68359375).epsilon(1e-14));
  CHECK(phi(2.9, spec) == 1.0);
  CHECK(phi(-5.0, spec) == 1.0);
  Rng rng(3);
  for (int k = 0; k < 500; ++k) {
    double s = rng.uniform(-6, 6);
    double v = phi(s, spec);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == doctest::Approx(phi(-s, spec)).epsilon(1e-14));
    if (std::abs(s) >= 2.9) CHECK(v == 1.0);
  }
}

TEST_CASE("mt_center against brute-force oracle") {
  const auto& spec = get_loss(LossFamily::MT, 2.9);
  CHECK(mt_center(0.0, spec) == 0.0);
  for (double lam : {0.1, 1.0, 4.0, 10.0, 50.0}) {
    double oracle = oracle_f_mt(lam, 2.9);
    CHECK(std::abs(mt_center(lam, spec) - oracle) <= 1e-3);
  }
  // monotone over the table, close to sqrt for large lambda
  double prev = -1.0;
  for (double lam = 0.05; lam < 2000.0; lam *= 1.35) {
    double f = mt_center(lam, spec);
    CHECK(f >= prev);
    prev = f;
    if (lam >= 25.0) CHECK(std::abs(f - std::sqrt(lam)) <= 0.15);
  }
  // out-of-table fallback: the first-order condition of the expected
  // loss holds at the returned value (far cheaper than the grid oracle
  // at this lambda)
  {
    double lam = 2e4;
    double f = mt_center(lam, spec);
    auto score = [&](double u) {
      double e = 0.0;
      long jlo = static_cast<long>(lam - 10.0 * std::sqrt(lam) - 20.0);
      long jhi = static_cast<long>(lam + 10.0 * std::sqrt(lam) + 20.0);
      double lp = pois_log_pmf(static_cast<double>(jlo), lam);
      double lns = std::log(lam);
      for (long j = jlo; j <= jhi; ++j) {
        if (j > jlo) lp += lns - std::log(static_cast<double>(j));
        double s = std::sqrt(static_cast<double>(j)) - u;
        if (std::abs(s) <= 2.9) {
          double t = 1.0 - (s / 2.9) * (s / 2.9);
          e -= std::exp(lp) * (8.0 * s / (2.9 * 2.9)) * t * t * t;
        }
      }
      return e;
    };
    CHECK(std::abs(score(f)) <= 1e-7);
    CHECK(std::abs(f - std::sqrt(lam)) <= 0.15);
  }
}

TEST_CASE("correction_g: doubled truncation and constant-phi identity") {
  const auto& spec = get_loss(LossFamily::CH, 0.5);
  double s = 1.0;
  long J = static_cast<long>(std::ceil(s + 10.0 * std::sqrt(s) + 20.0));
  CHECK(correction_g(s, spec) ==
        doctest::Approx(oracle_g_series(s, 0.5, 2 * J)).epsilon(1e-10));
  CHECK(std::abs(correction_g(5.0, spec) -
                 oracle_g_series(5.0, 0.5, 200)) <= 1e-10);
  CHECK_THROWS_AS(correction_g(0.0, spec), DomainError);
  CHECK_THROWS_AS(correction_g(-1.0, spec), DomainError);

  // with phi' == 1 the j=0 term and the series cancel exactly
  for (double sv : {0.3, 1.0, 3.0}) {
    double lns = std::log(sv);
    double total = -std::exp(-sv);
    double lp = -sv;
    long jhi = static_cast<long>(std::ceil(sv + 10 * std::sqrt(sv) + 40));
    for (long j = 1; j <= jhi; ++j) {
      lp += lns - std::log(static_cast<double>(j));
      total += std::exp(lp) * (static_cast<double>(j) - sv) / sv;
    }
    CHECK(std::abs(total) <= 1e-12);
  }
}

TEST_CASE("correction_G: anchor, refined quadrature agreement") {
  const auto& spec = get_loss(LossFamily::CH, 0.5);
  CHECK(std::abs(correction_G(1e-3, spec)) <= 1e-12);
  for (double s : {0.5, 1.0, 5.0, 20.0}) {
    double refined = oracle_simpson(
        [&](double x) { return correction_g(x, spec); }, 1e-3, s, 1e-10);
    CHECK(std::abs(correction_G(s, spec) - refined) <= 1e-6);
  }
  CHECK_THROWS_AS(correction_G(-2.0, spec), DomainError);
}

TEST_CASE("rho/psi: ML reduction is the exact Poisson score") {
  const auto& spec = get_loss(LossFamily::ML, 0.0);
  CHECK(std::abs(psi(3, std::log(3.0), spec)) <= 1e-12);
  for (double y : {0.0, 1.0, 2.0, 7.0, 31.0}) {
    for (double u = -3.0; u <= 4.0; u += 0.37) {
      CHECK(psi(y, u, spec) == std::exp(u) - y);
      CHECK(rho(y, u, spec) == dev_arg(y, u));
    }
  }
}

TEST_CASE("psi: CH bounded on a grid, MT vanishes at -inf") {
  const auto& ch = get_loss(LossFamily::CH, 0.5);
  double max_abs = 0.0;
  for (double y = 0.0; y <= 50.0; y += 1.0)
    for (double u = -3.0; u <= 4.0; u += 0.05) {
      double p = psi(y, u, ch);
      CHECK(std::isfinite(p));
      max_abs = std::max(max_abs, std::abs(p));
    }
  CHECK(max_abs <= 1e3);

  const auto& mt = get_loss(LossFamily::MT, 2.9);
  CHECK(std::abs(psi(0, -30.0, mt)) <= 1e-10);
}

TEST_CASE("psi is the u-derivative of rho; dpsi matches finite differences") {
  Rng rng(99);
  for (auto fam : {LossFamily::ML, LossFamily::CH, LossFamily::MT}) {
    const auto& spec = get_loss(fam, fam == LossFamily::CH ? 0.5 : 2.9);
    for (int k = 0; k < 300; ++k) {
      double y = std::floor(rng.uniform(0, 40));
      double u = rng.uniform(-2.5, 3.5);
      double h = 1e-6;
      double fd_psi = (rho(y, u + h, spec) - rho(y, u - h, spec)) / (2 * h);
      double fd_dpsi = (psi(y, u + h, spec) - psi(y, u - h, spec)) / (2 * h);
      CHECK(psi(y, u, spec) == doctest::Approx(fd_psi).epsilon(5e-4).scale(1.0));
      CHECK(dpsi(y, u, spec) ==
            doctest::Approx(fd_dpsi).epsilon(5e-3).scale(1.0));
    }
  }
}

TEST_CASE("fisher consistency across families") {
  const auto& ml = get_loss(LossFamily::ML, 0.0);
  const auto& ch = get_loss(LossFamily::CH, 0.5);
  const auto& mt = get_loss(LossFamily::MT, 2.9);
  for (double u : {-2.0, -1.0, 0.0, 1.0, 2.0, 3.0}) {
    CHECK(std::abs(fisher_consistency_check(u, ml)) <= 1e-10);
    CHECK(std::abs(fisher_consistency_check(u, ch)) <= 1e-4);
    CHECK(std::abs(fisher_consistency_check(u, mt)) <= 1e-3);
  }
  // the correction term is what buys consistency for CH: dropping it
  // leaves a visible residual
  double u = 1.0;
  double lam = std::exp(u);
  double without_g = fisher_consistency_check(u, ch) - ch.Gprime_at(u);
  CHECK(std::abs(without_g) > 1e-3);
  (void)lam;
}

TEST_CASE("loss spec construction contracts") {
  CHECK_THROWS_AS(LossSpec::ch(0.0), std::invalid_argument);
  CHECK_THROWS_AS(LossSpec::mt(-1.0), std::invalid_argument);
  const auto& ml = get_loss(LossFamily::ML, 0.0);
  CHECK(ml.g_table().empty());
  CHECK(ml.f_table().empty());
  const auto& ch = get_loss(LossFamily::CH, 0.5);
  CHECK_FALSE(ch.g_table().empty());
  CHECK(ch.f_table().empty());
  const auto& mt = get_loss(LossFamily::MT, 2.9);
  CHECK(mt.g_table().empty());
  CHECK_FALSE(mt.f_table().empty());
  CHECK(family_from_name("ch") == LossFamily::CH);
  CHECK_THROWS_AS(family_from_name("huber"), std::invalid_argument);
}
