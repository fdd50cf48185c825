#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace plzip {

//! Monotone cubic (Fritsch-Carlson / PCHIP) interpolant on a strictly
//! increasing knot grid. Shape preserving: never overshoots the data.
class PchipCurve {
 public:
  PchipCurve() = default;

  PchipCurve(std::vector<double> x, std::vector<double> y)
      : x_(std::move(x)), y_(std::move(y)) {
    const size_t n = x_.size();
    if (n < 2 || y_.size() != n)
      throw std::invalid_argument("PchipCurve: need >= 2 aligned knots");
    for (size_t k = 1; k < n; ++k)
      if (!(x_[k] > x_[k - 1]))
        throw std::invalid_argument("PchipCurve: knots must be increasing");
    d_.resize(n);
    std::vector<double> h(n - 1), delta(n - 1);
    for (size_t k = 0; k + 1 < n; ++k) {
      h[k] = x_[k + 1] - x_[k];
      delta[k] = (y_[k + 1] - y_[k]) / h[k];
    }
    if (n == 2) {
      d_[0] = d_[1] = delta[0];
    } else {
      for (size_t k = 1; k + 1 < n; ++k) {
        if (delta[k - 1] * delta[k] <= 0.0) {
          d_[k] = 0.0;
        } else {
          double w1 = 2.0 * h[k] + h[k - 1];
          double w2 = h[k] + 2.0 * h[k - 1];
          d_[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
      }
      d_[0] = edge(h[0], h[1], delta[0], delta[1]);
      d_[n - 1] = edge(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    }
  }

  bool empty() const { return x_.empty(); }
  double x_min() const { return x_.front(); }
  double x_max() const { return x_.back(); }
  const std::vector<double>& knots() const { return x_; }
  const std::vector<double>& values() const { return y_; }

  //! Evaluate inside [x_min, x_max]; clamps to the end values outside.
  double operator()(double x) const {
    size_t k = cell(x);
    return eval_cell(k, x);
  }

  //! Hermite derivative of the interpolant.
  double deriv(double x) const { return deriv_cell(cell(x), x); }

  double deriv_cell(size_t k, double x) const {
    double h = x_[k + 1] - x_[k];
    double s = (x - x_[k]) / h;
    double h00 = 6.0 * s * s - 6.0 * s;
    double h10 = 3.0 * s * s - 4.0 * s + 1.0;
    double h01 = -h00;
    double h11 = 3.0 * s * s - 2.0 * s;
    return (y_[k] * h00 + y_[k + 1] * h01) / h + d_[k] * h10 + d_[k + 1] * h11;
  }

  size_t cell(double x) const {
    if (x <= x_.front()) return 0;
    if (x >= x_.back()) return x_.size() - 2;
    size_t lo = 0, hi = x_.size() - 1;
    while (hi - lo > 1) {
      size_t mid = (lo + hi) / 2;
      (x_[mid] <= x ? lo : hi) = mid;
    }
    return lo;
  }

  double eval_cell(size_t k, double x) const {
    double h = x_[k + 1] - x_[k];
    double s = (x - x_[k]) / h;
    double s2 = s * s, s3 = s2 * s;
    double h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    double h10 = s3 - 2.0 * s2 + s;
    double h01 = -2.0 * s3 + 3.0 * s2;
    double h11 = s3 - s2;
    return y_[k] * h00 + d_[k] * h * h10 + y_[k + 1] * h01 + d_[k + 1] * h * h11;
  }

 private:
  static double edge(double h0, double h1, double d0, double d1) {
    double d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (d * d0 <= 0.0) return 0.0;
    if (d0 * d1 < 0.0 && std::abs(d) > 3.0 * std::abs(d0)) return 3.0 * d0;
    return d;
  }

  std::vector<double> x_, y_, d_;
};

//! PCHIP on a log-uniform grid with O(1) cell lookup given ln(x).
//! Used for the loss tables, where ln(x) is the linear predictor and is
//! already available in the hot loops.
class LogGridCurve {
 public:
  LogGridCurve() = default;
  LogGridCurve(PchipCurve curve, double ln_min, double ln_step)
      : curve_(std::move(curve)), ln_min_(ln_min), inv_step_(1.0 / ln_step) {}

  //! Log-spaced knots exp(linspace(ln(a), ln(b), n)).
  static std::vector<double> make_knots(double a, double b, size_t n) {
    std::vector<double> x(n);
    double la = std::log(a), lb = std::log(b);
    for (size_t k = 0; k < n; ++k)
      x[k] = std::exp(la + (lb - la) * static_cast<double>(k) /
                               static_cast<double>(n - 1));
    x.front() = a;
    x.back() = b;
    return x;
  }

  static LogGridCurve build(double a, double b, std::vector<double> vals) {
    size_t n = vals.size();
    auto x = make_knots(a, b, n);
    double ln_step = (std::log(b) - std::log(a)) / static_cast<double>(n - 1);
    return LogGridCurve(PchipCurve(std::move(x), std::move(vals)),
                        std::log(a), ln_step);
  }

  bool empty() const { return curve_.empty(); }
  const PchipCurve& curve() const { return curve_; }
  bool covers(double x) const {
    return x >= curve_.x_min() && x <= curve_.x_max();
  }

  //! Evaluate at x = e^lnx. Caller guarantees covers(x).
  double eval_ln(double lnx, double x) const {
    size_t k = cell_ln(lnx);
    return curve_.eval_cell(k, x);
  }

  double operator()(double x) const { return eval_ln(std::log(x), x); }

  size_t cell_ln(double lnx) const {
    double f = (lnx - ln_min_) * inv_step_;
    long k = static_cast<long>(f);
    long last = static_cast<long>(curve_.knots().size()) - 2;
    if (k < 0) k = 0;
    if (k > last) k = last;
    // guard against rounding at cell edges
    const auto& xs = curve_.knots();
    double x = std::exp(lnx);
    if (x < xs[k] && k > 0) --k;
    if (x > xs[k + 1] && k < last) ++k;
    return static_cast<size_t>(k);
  }

 private:
  PchipCurve curve_;
  double ln_min_ = 0.0, inv_step_ = 0.0;
};

}  // namespace plzip
