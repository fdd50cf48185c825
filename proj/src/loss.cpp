#include "plzip/loss.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

#include "plzip/errors.hpp"
#include "plzip/optim.hpp"
#include "plzip/quadrature.hpp"

namespace plzip {

namespace {

// Table layout: 2497 knots, uniform in v = ln(s) over [ln 1e-4, ln 1e4].
// 2497 = 8 * 312 + 1 puts the G anchor s0 = 1e-3 exactly on a knot, and
// the density keeps the interpolation error of G' below the Fisher
// consistency budget (400 knots measurably does not).
constexpr size_t kKnots = 2497;
constexpr double kSMin = 1e-4;
constexpr double kSMax = 1e4;
const double kVMin = std::log(kSMin);
const double kVMax = std::log(kSMax);

std::vector<double> v_knots() {
  std::vector<double> v(kKnots);
  for (size_t k = 0; k < kKnots; ++k)
    v[k] = kVMin + (kVMax - kVMin) * static_cast<double>(k) /
                       static_cast<double>(kKnots - 1);
  return v;
}

// phi branches -------------------------------------------------------------

double phi_ch(double s, double c) {
  if (s < 0.0) throw DomainError("phi (CH family): negative argument");
  if (s <= c) return s * std::exp(-std::sqrt(c));
  double rc = std::sqrt(c), rs = std::sqrt(s);
  return std::exp(-rc) * (2.0 * (1.0 + rc) + c) -
         2.0 * std::exp(-rs) * (1.0 + rs);
}

double dphi_ch(double s, double c) {
  if (s < 0.0) throw DomainError("dphi (CH family): negative argument");
  return std::exp(-std::sqrt(std::max(s, c)));
}

double ddphi_ch(double s, double c) {
  if (s <= c) return 0.0;
  double rs = std::sqrt(s);
  return -std::exp(-rs) / (2.0 * rs);
}

double phi_mt(double s, double c) {
  double a = std::abs(s);
  if (a > c) return 1.0;
  double t = 1.0 - (s / c) * (s / c);
  double t2 = t * t;
  return 1.0 - t2 * t2;
}

double dphi_mt(double s, double c) {
  if (std::abs(s) > c) return 0.0;
  double t = 1.0 - (s / c) * (s / c);
  return (8.0 * s / (c * c)) * t * t * t;
}

double ddphi_mt(double s, double c) {
  if (std::abs(s) > c) return 0.0;
  double q = (s / c) * (s / c);
  double t = 1.0 - q;
  return (8.0 / (c * c)) * t * t * (t - 6.0 * q);
}

// Poisson pmf over a window, iterated in log space.
template <typename Fn>
void for_each_pois(double lambda, long jlo, long jhi, Fn&& fn) {
  double lns = std::log(lambda);
  double lp = static_cast<double>(jlo) * lns - lambda -
              std::lgamma(static_cast<double>(jlo) + 1.0);
  for (long j = jlo; j <= jhi; ++j) {
    if (j > jlo) lp += lns - std::log(static_cast<double>(j));
    fn(j, std::exp(lp));
  }
}

long window_lo(double lambda, double pad) {
  double lo = lambda - 10.0 * std::sqrt(lambda) - pad;
  return lo > 1.0 ? static_cast<long>(std::floor(lo)) : 0;
}

// 20-point Gauss-Legendre nodes/weights on [0, 1] (symmetric halves).
constexpr int kGL = 10;
constexpr double kGLNode[kGL] = {
    0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
    0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
    0.5108670019508271, 0.3737060887154195, 0.2277858511416451,
    0.0765265211334973};
constexpr double kGLWeight[kGL] = {
    0.0176140071391521, 0.0406014298003869, 0.0626720483341091,
    0.0832767415767048, 0.1019301198172404, 0.1181945319615184,
    0.1316886384491766, 0.1420961093183820, 0.1491729864726037,
    0.1527533871307258};

template <typename F>
double gauss20(const F& f, double a, double b) {
  double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double acc = 0.0;
  for (int k = 0; k < kGL; ++k) {
    double dx = half * kGLNode[k];
    acc += kGLWeight[k] * (f(mid - dx) + f(mid + dx));
  }
  return acc * half;
}

// Direct series for G'(s), CH family.
double g_series_ch(double s, double c, double trunc_mult = 1.0) {
  long jhi = static_cast<long>(
      std::ceil(trunc_mult * (s + 10.0 * std::sqrt(s) + 20.0)));
  double total = -dphi_ch(s, c) * std::exp(-s);  // j = 0 term
  long jlo = std::max<long>(1, window_lo(s, 20.0));
  double lns = std::log(s);
  for_each_pois(s, jlo, jhi, [&](long j, double pm) {
    double jd = static_cast<double>(j);
    double dev = s - jd * (lns + 1.0 - std::log(jd));
    if (dev < 0.0) dev = 0.0;
    total += dphi_ch(dev, c) * pm * (jd - s) / s;
  });
  return total;
}

// Expected MT loss minimizer at one lambda. A bracket hint (from the
// neighbouring table knot) narrows the global scan.
double f_mt_direct(double lambda, double c, const double* hint = nullptr) {
  if (!(lambda > 0.0) || lambda < 1e-300) return 0.0;
  long jlo = window_lo(lambda, 20.0);
  long jhi = static_cast<long>(
      std::ceil(lambda + 10.0 * std::sqrt(lambda) + 20.0));
  std::vector<double> pm(jhi - jlo + 1), sq(jhi - jlo + 1);
  for_each_pois(lambda, jlo, jhi, [&](long j, double p) {
    pm[j - jlo] = p;
    sq[j - jlo] = std::sqrt(static_cast<double>(j));
  });
  auto expected = [&](double u) {
    double e = 0.0;
    for (size_t k = 0; k < pm.size(); ++k) e += pm[k] * phi_mt(sq[k] - u, c);
    return e;
  };
  double lo = (jlo > 0) ? sq.front() - c - 0.5 : -1.0;
  double hi = sq.back() + 1.0;
  if (hint) {
    lo = std::max(lo, *hint - 0.3);
    hi = std::min(hi, *hint + 0.6);
  }
  const int grid = hint ? 24 : 96;
  double best_u = lo, best_v = expected(lo);
  for (int k = 1; k <= grid; ++k) {
    double u = lo + (hi - lo) * static_cast<double>(k) / grid;
    double v = expected(u);
    if (v < best_v) {
      best_v = v;
      best_u = u;
    }
  }
  double span = (hi - lo) / grid;
  return brent_min(expected, best_u - span, best_u + span, 1e-10);
}

}  // namespace

std::string family_name(LossFamily f) {
  switch (f) {
    case LossFamily::ML: return "ml";
    case LossFamily::CH: return "ch";
    case LossFamily::MT: return "mt";
  }
  return "?";
}

LossFamily family_from_name(const std::string& name) {
  if (name == "ml") return LossFamily::ML;
  if (name == "ch") return LossFamily::CH;
  if (name == "mt") return LossFamily::MT;
  throw std::invalid_argument("unknown loss family '" + name + "'");
}

double pois_log_pmf(double j, double lambda) {
  return j * std::log(lambda) - lambda - std::lgamma(j + 1.0);
}

double dev_arg(double y, double u) {
  double s = std::exp(u) - y * (u + 1.0);
  if (y > 0.0) s += y * std::log(y);
  return s > 0.0 ? s : 0.0;
}

LossSpec LossSpec::ml() { return LossSpec(LossFamily::ML, 0.0); }

LossSpec LossSpec::ch(double c) {
  if (!(c > 0.0)) throw std::invalid_argument("CH loss requires c > 0");
  LossSpec spec(LossFamily::CH, c);
  spec.build_ch_tables();
  return spec;
}

LossSpec LossSpec::mt(double c) {
  if (!(c > 0.0)) throw std::invalid_argument("MT loss requires c > 0");
  LossSpec spec(LossFamily::MT, c);
  spec.build_mt_tables();
  return spec;
}

LossSpec LossSpec::make(LossFamily family, double c) {
  switch (family) {
    case LossFamily::ML: return ml();
    case LossFamily::CH: return ch(c);
    case LossFamily::MT: return mt(c);
  }
  throw std::invalid_argument("bad loss family");
}

void LossSpec::build_ch_tables() {
  auto vk = v_knots();
  v_min_ = vk.front();
  v_max_ = vk.back();
  inv_dv_ = static_cast<double>(kKnots - 1) / (v_max_ - v_min_);
  n_cells_ = kKnots - 1;

  std::vector<double> s(kKnots), gv(kKnots), Gv(kKnots);
  for (size_t k = 0; k < kKnots; ++k) s[k] = std::exp(vk[k]);

  // G'(e^v) e^v at each knot, exact series.
  for (size_t k = 0; k < kKnots; ++k)
    gv[k] = g_series_ch(s[k], c_) * s[k];

  // Accumulate G along the grid; s0 = 1e-3 sits exactly on knot kAnchor.
  // Fixed-order Gauss-Legendre per cell in v-space: the integrand
  // g(e^v) e^v is analytic and the cells are tiny, so the per-cell error
  // is far below the 1e-8 budget of the documented quadrature tolerance.
  const size_t kAnchor = (kKnots - 1) / 8;
  auto integrand_v = [this](double v) {
    double x = std::exp(v);
    return g_series_ch(x, c_) * x;
  };
  Gv[kAnchor] = 0.0;
  for (size_t k = kAnchor + 1; k < kKnots; ++k)
    Gv[k] = Gv[k - 1] + gauss20(integrand_v, vk[k - 1], vk[k]);
  for (size_t k = kAnchor; k-- > 0;)
    Gv[k] = Gv[k + 1] - gauss20(integrand_v, vk[k], vk[k + 1]);

  edge_g_lo_ = gv.front() / s.front();  // G'(s) near the lower edge
  edge_g_hi_ = gv.back();               // d/dv G(e^v) at the upper edge
  pchip_G_ = PchipCurve(vk, std::move(Gv));
  pchip_g_ = PchipCurve(std::move(vk), std::move(gv));
}

void LossSpec::build_mt_tables() {
  auto vk = v_knots();
  v_min_ = vk.front();
  v_max_ = vk.back();
  inv_dv_ = static_cast<double>(kKnots - 1) / (v_max_ - v_min_);
  n_cells_ = kKnots - 1;

  std::vector<double> fv(kKnots);
  for (size_t k = 0; k < kKnots; ++k) {
    // full scan every 64 knots guards the warm bracket against drift
    const double* hint = (k > 0 && k % 64 != 0) ? &fv[k - 1] : nullptr;
    fv[k] = f_mt_direct(std::exp(vk[k]), c_, hint);
    if (k > 0 && fv[k] < fv[k - 1]) fv[k] = fv[k - 1];  // pin monotone
  }
  std::vector<double> fpv(kKnots);
  double dv = (v_max_ - v_min_) / static_cast<double>(kKnots - 1);
  for (size_t k = 0; k < kKnots; ++k) {
    if (k == 0)
      fpv[k] = (fv[1] - fv[0]) / dv;
    else if (k == kKnots - 1)
      fpv[k] = (fv[k] - fv[k - 1]) / dv;
    else
      fpv[k] = (fv[k + 1] - fv[k - 1]) / (2.0 * dv);
  }
  edge_f_hi_ = fv.back() - std::exp(0.5 * v_max_);
  pchip_f_ = PchipCurve(vk, std::move(fv));
  pchip_fp_ = PchipCurve(std::move(vk), std::move(fpv));
}

double LossSpec::G_at(double v) const {
  if (v < v_min_)
    return pchip_G_.values().front() +
           edge_g_lo_ * (std::exp(v) - std::exp(v_min_));
  if (v > v_max_)
    return pchip_G_.values().back() + edge_g_hi_ * (v - v_max_);
  return pchip_G_.eval_cell(cell(v), v);
}

double LossSpec::Gprime_at(double v) const {
  if (v < v_min_) return edge_g_lo_ * std::exp(v);
  if (v > v_max_) return edge_g_hi_;
  return pchip_g_.eval_cell(cell(v), v);
}

double LossSpec::Gsecond_at(double v) const {
  if (v < v_min_) return edge_g_lo_ * std::exp(v);
  if (v > v_max_) return 0.0;
  return pchip_g_.deriv_cell(cell(v), v);
}

double LossSpec::f_at(double v) const {
  if (v < v_min_)
    return pchip_f_.values().front() * std::exp(v - v_min_);
  if (v > v_max_) return std::exp(0.5 * v) + edge_f_hi_;
  return pchip_f_.eval_cell(cell(v), v);
}

double LossSpec::fprime_at(double v) const {
  if (v < v_min_) return pchip_f_.values().front() * std::exp(v - v_min_);
  if (v > v_max_) return 0.5 * std::exp(0.5 * v);
  return pchip_fp_.eval_cell(cell(v), v);
}

double LossSpec::fsecond_at(double v) const {
  if (v < v_min_) return pchip_f_.values().front() * std::exp(v - v_min_);
  if (v > v_max_) return 0.25 * std::exp(0.5 * v);
  return pchip_fp_.deriv_cell(cell(v), v);
}

const LossSpec& get_loss(LossFamily family, double c) {
  static std::mutex mu;
  static std::map<std::pair<int, double>, LossSpec> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(static_cast<int>(family),
                            family == LossFamily::ML ? 0.0 : c);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, LossSpec::make(family, c)).first;
  return it->second;
}

double phi(double s, const LossSpec& spec) {
  switch (spec.family()) {
    case LossFamily::ML: return s;
    case LossFamily::CH: return phi_ch(s, spec.c());
    case LossFamily::MT: return phi_mt(s, spec.c());
  }
  return 0.0;
}

double dphi(double s, const LossSpec& spec) {
  switch (spec.family()) {
    case LossFamily::ML: return 1.0;
    case LossFamily::CH: return dphi_ch(s, spec.c());
    case LossFamily::MT: return dphi_mt(s, spec.c());
  }
  return 0.0;
}

double mt_center(double lambda, const LossSpec& spec) {
  if (spec.family() != LossFamily::MT)
    throw std::invalid_argument("mt_center: loss family is not MT");
  if (!(lambda > 0.0)) return 0.0;
  if (lambda < kSMin || lambda > kSMax) return f_mt_direct(lambda, spec.c());
  return spec.f_at(std::log(lambda));
}

double mt_center_deriv(double lambda, const LossSpec& spec) {
  if (spec.family() != LossFamily::MT)
    throw std::invalid_argument("mt_center_deriv: loss family is not MT");
  if (!(lambda > 0.0)) return 0.0;
  if (lambda < kSMin || lambda > kSMax) {
    double h = 1e-4 * lambda;
    return (f_mt_direct(lambda + h, spec.c()) -
            f_mt_direct(lambda - h, spec.c())) /
           (2.0 * h);
  }
  return spec.fprime_at(std::log(lambda)) / lambda;
}

double correction_g(double s, const LossSpec& spec) {
  if (spec.family() != LossFamily::CH)
    throw std::invalid_argument("correction_g: loss family is not CH");
  if (!(s > 0.0)) throw DomainError("correction_g: s must be positive");
  return g_series_ch(s, spec.c());
}

double correction_G(double s, const LossSpec& spec) {
  if (spec.family() != LossFamily::CH)
    throw std::invalid_argument("correction_G: loss family is not CH");
  if (!(s > 0.0)) throw DomainError("correction_G: s must be positive");
  double c = spec.c();
  auto integrand = [c](double x) { return g_series_ch(x, c); };
  if (s < kSMin)
    return spec.G_at(std::log(kSMin)) - integrate(integrand, s, kSMin, 1e-8);
  if (s > kSMax)
    return spec.G_at(std::log(kSMax)) + integrate(integrand, kSMax, s, 1e-8);
  return spec.G_at(std::log(s));
}

double rho(double y, double u, const LossSpec& spec) {
  switch (spec.family()) {
    case LossFamily::ML:
      return dev_arg(y, u);
    case LossFamily::CH:
      return phi_ch(dev_arg(y, u), spec.c()) + spec.G_at(u);
    case LossFamily::MT:
      return phi_mt(std::sqrt(y) - spec.f_at(u), spec.c());
  }
  return 0.0;
}

double psi(double y, double u, const LossSpec& spec) {
  switch (spec.family()) {
    case LossFamily::ML:
      return std::exp(u) - y;
    case LossFamily::CH: {
      double lam = std::exp(u);
      return dphi_ch(dev_arg(y, u), spec.c()) * (lam - y) + spec.Gprime_at(u);
    }
    case LossFamily::MT:
      return -dphi_mt(std::sqrt(y) - spec.f_at(u), spec.c()) *
             spec.fprime_at(u);
  }
  return 0.0;
}

double dpsi(double y, double u, const LossSpec& spec) {
  switch (spec.family()) {
    case LossFamily::ML:
      return std::exp(u);
    case LossFamily::CH: {
      double lam = std::exp(u);
      double dev = dev_arg(y, u);
      double r = lam - y;
      return ddphi_ch(dev, spec.c()) * r * r +
             dphi_ch(dev, spec.c()) * lam + spec.Gsecond_at(u);
    }
    case LossFamily::MT: {
      double r = std::sqrt(y) - spec.f_at(u);
      double fp = spec.fprime_at(u);
      return ddphi_mt(r, spec.c()) * fp * fp -
             dphi_mt(r, spec.c()) * spec.fsecond_at(u);
    }
  }
  return 0.0;
}

double fisher_consistency_check(double u, const LossSpec& spec) {
  double lam = std::exp(u);
  if (lam < 1e-300) return psi(0.0, u, spec);
  long jhi =
      static_cast<long>(std::ceil(lam + 10.0 * std::sqrt(lam) + 30.0));
  long jlo = window_lo(lam, 30.0);
  double total = 0.0;
  for_each_pois(lam, jlo, jhi, [&](long j, double pm) {
    total += psi(static_cast<double>(j), u, spec) * pm;
  });
  return total;
}

}  // namespace plzip
