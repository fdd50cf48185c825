#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "plzip/csv.hpp"
#include "plzip/errors.hpp"
#include "plzip/interp.hpp"
#include "plzip/optim.hpp"
#include "plzip/parallel.hpp"
#include "plzip/quadrature.hpp"
#include "plzip/rng.hpp"

using namespace plzip;

TEST_CASE("pchip reproduces knots and preserves monotonicity") {
  std::vector<double> x = {0.0, 1.0, 2.0, 3.5, 5.0};
  std::vector<double> y = {0.0, 0.5, 0.6, 2.0, 2.1};
  PchipCurve c(x, y);
  for (size_t k = 0; k < x.size(); ++k)
    CHECK(c(x[k]) == doctest::Approx(y[k]).epsilon(1e-14));
  double prev = c(0.0);
  for (double t = 0.0; t <= 5.0; t += 0.01) {
    double v = c(t);
    CHECK(v >= prev - 1e-12);
    CHECK(v >= -1e-12);
    CHECK(v <= 2.1 + 1e-12);
    prev = v;
  }
  // derivative consistent with finite differences
  for (double t : {0.3, 1.7, 2.9, 4.2}) {
    double h = 1e-6;
    double fd = (c(t + h) - c(t - h)) / (2 * h);
    CHECK(c.deriv(t) == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("pchip interpolates smooth functions accurately") {
  auto xs = LogGridCurve::make_knots(1e-2, 1e2, 600);
  std::vector<double> ys(xs.size());
  for (size_t k = 0; k < xs.size(); ++k) ys[k] = std::log1p(xs[k]);
  auto curve = LogGridCurve::build(1e-2, 1e2, ys);
  for (double x = 0.02; x < 90.0; x *= 1.618) {
    CHECK(curve(x) == doctest::Approx(std::log1p(x)).epsilon(1e-7));
    CHECK(curve.eval_ln(std::log(x), x) ==
          doctest::Approx(std::log1p(x)).epsilon(1e-7));
  }
}

TEST_CASE("adaptive simpson") {
  CHECK(integrate([](double x) { return x * x; }, 0.0, 1.0, 1e-12) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(integrate([](double x) { return std::exp(-x); }, 0.0, 5.0, 1e-12) ==
        doctest::Approx(1.0 - std::exp(-5.0)).epsilon(1e-12));
  CHECK(integrate([](double x) { return std::sin(x); }, 3.0, 0.0, 1e-12) ==
        doctest::Approx(-(1.0 - std::cos(3.0))).epsilon(1e-10));
}

TEST_CASE("brent minimization and root finding") {
  double x = brent_min([](double t) { return (t - 2.0) * (t - 2.0) + 1.0; },
                       -10.0, 10.0, 1e-12);
  CHECK(x == doctest::Approx(2.0).epsilon(1e-8));
  double r = brent_root([](double t) { return t * t * t - 8.0; }, 0.0, 5.0);
  CHECK(r == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("newton_score solves a small nonlinear system") {
  auto score = [](const Eigen::VectorXd& x, Eigen::VectorXd& s) {
    s.resize(2);
    s(0) = std::exp(x(0)) - 2.0;
    s(1) = x(0) + x(1) * x(1) * x(1) - 1.0;
  };
  auto jac = [](const Eigen::VectorXd& x, Eigen::MatrixXd& J) {
    J.resize(2, 2);
    J(0, 0) = std::exp(x(0));
    J(0, 1) = 0.0;
    J(1, 0) = 1.0;
    J(1, 1) = 3.0 * x(1) * x(1);
  };
  auto res = newton_score(score, jac, Eigen::Vector2d(0.1, 0.9), 1e-12);
  CHECK(res.converged);
  CHECK(res.x(0) == doctest::Approx(std::log(2.0)).epsilon(1e-10));
  CHECK(res.x(1) ==
        doctest::Approx(std::cbrt(1.0 - std::log(2.0))).epsilon(1e-8));
}

TEST_CASE("nelder_mead finds a quadratic minimum") {
  auto f = [](const Eigen::VectorXd& x) {
    return (x(0) - 1.0) * (x(0) - 1.0) + 4.0 * (x(1) + 2.0) * (x(1) + 2.0);
  };
  auto x = nelder_mead(f, Eigen::Vector2d(3.0, 3.0), 0.5, 600, 1e-14);
  CHECK(x(0) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(x(1) == doctest::Approx(-2.0).epsilon(1e-3));
}

TEST_CASE("rng streams are deterministic and distributions sane") {
  Rng a(42), b(42);
  for (int k = 0; k < 100; ++k) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng::stream(1, 2, 3) == Rng::stream(1, 2, 3));
  CHECK(Rng::stream(1, 2, 3) != Rng::stream(1, 2, 4));
  CHECK(Rng::stream(1, 2, 3) != Rng::stream(1, 3, 3));

  Rng r(7);
  double sum = 0.0, sum2 = 0.0;
  const int n = 40000;
  for (int k = 0; k < n; ++k) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    sum2 += u * u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
  CHECK(sum2 / n == doctest::Approx(1.0 / 3.0).epsilon(0.03));

  double nsum = 0.0, nsum2 = 0.0;
  for (int k = 0; k < n; ++k) {
    double z = r.normal();
    nsum += z;
    nsum2 += z * z;
  }
  CHECK(std::abs(nsum / n) <= 0.03);
  CHECK(nsum2 / n == doctest::Approx(1.0).epsilon(0.05));

  for (double lam : {0.7, 3.0, 40.0, 800.0}) {
    double psum = 0.0;
    for (int k = 0; k < 20000; ++k) psum += r.poisson(lam);
    double mean = psum / 20000.0;
    CHECK(std::abs(mean - lam) <= 4.0 * std::sqrt(lam / 20000.0) + 1e-9);
  }

  std::vector<long> pick;
  r.choose(10, 4, pick);
  CHECK(pick.size() == 4);
  for (size_t i = 0; i < pick.size(); ++i) {
    CHECK(pick[i] >= 0);
    CHECK(pick[i] < 10);
    for (size_t j = i + 1; j < pick.size(); ++j) CHECK(pick[i] != pick[j]);
  }
}

TEST_CASE("parallel_for covers every slot under any thread count") {
  const long n = 1000;
  std::vector<double> out1(n, 0.0), out4(n, 0.0);
  parallel_for(n, [&](long i) { out1[i] = std::sqrt(i); }, 1);
  parallel_for(n, [&](long i) { out4[i] = std::sqrt(i); }, 4);
  CHECK(out1 == out4);
}

TEST_CASE("csv round trip and error reporting") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "plzip_csv_test";
  fs::create_directories(dir);
  auto path = (dir / "t.csv").string();

  CsvTable t;
  t.add("a", {1.0, 2.5, -3.125e-7});
  t.add("b", {0.1234567890123456789, 2.0, 3.0});
  write_csv(t, path);
  auto back = read_csv(path);
  REQUIRE(back.names == t.names);
  for (size_t k = 0; k < t.columns.size(); ++k)
    for (size_t i = 0; i < t.columns[k].size(); ++i)
      CHECK(back.columns[k][i] == t.columns[k][i]);

  auto bad = (dir / "bad.csv").string();
  {
    std::ofstream out(bad);
    out << "a,b\n1,2\n3,oops\n";
  }
  bool threw = false;
  try {
    read_csv(bad);
  } catch (const DataError& e) {
    threw = true;
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
  CHECK(threw);

  auto ragged = (dir / "ragged.csv").string();
  {
    std::ofstream out(ragged);
    out << "a,b\n1,2,3\n";
  }
  CHECK_THROWS_AS(read_csv(ragged), DataError);
  CHECK_THROWS_AS(read_csv((dir / "missing.csv").string()), DataError);
}
