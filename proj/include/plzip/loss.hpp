#pragma once

#include <string>
#include <vector>

#include "plzip/interp.hpp"

namespace plzip {

enum class LossFamily { ML, CH, MT };

std::string family_name(LossFamily f);
LossFamily family_from_name(const std::string& name);

//! Robust loss specification. CH and MT carry precomputed tables on a
//! uniform grid in v = ln(s), v in [ln(1e-4), ln(1e4)]:
//!   CH: G(e^v) and its v-derivative G'(e^v) e^v (the score correction)
//!   MT: f(e^v) and its v-derivative, centered differences on the table
//! Construction is deterministic; instances are immutable afterwards and
//! safe to share across threads.
class LossSpec {
 public:
  static LossSpec ml();
  static LossSpec ch(double c = 0.5);
  static LossSpec mt(double c = 2.9);
  static LossSpec make(LossFamily family, double c);

  LossFamily family() const { return family_; }
  double c() const { return c_; }
  std::string name() const { return family_name(family_); }

  // table access in v-space (empty unless the family uses them)
  const PchipCurve& g_table() const { return pchip_G_; }
  const PchipCurve& f_table() const { return pchip_f_; }

  // hot-path evaluations keyed by v = ln(s); continuation beyond the grid
  double G_at(double v) const;        // G(e^v)
  double Gprime_at(double v) const;   // d/dv G(e^v) = G'(e^v) e^v
  double Gsecond_at(double v) const;  // d/dv Gprime
  double f_at(double v) const;        // f(e^v)
  double fprime_at(double v) const;   // d/dv f(e^v) = f'(e^v) e^v
  double fsecond_at(double v) const;  // d/dv fprime

  double table_v_min() const { return v_min_; }
  double table_v_max() const { return v_max_; }

 private:
  LossSpec(LossFamily family, double c) : family_(family), c_(c) {}
  void build_ch_tables();
  void build_mt_tables();

  LossFamily family_ = LossFamily::ML;
  double c_ = 0.0;
  PchipCurve pchip_G_, pchip_g_, pchip_f_, pchip_fp_;  // all in v-space
  double v_min_ = 0.0, v_max_ = 0.0, inv_dv_ = 0.0;
  double edge_g_lo_ = 0.0, edge_g_hi_ = 0.0;  // continuation slopes
  double edge_f_hi_ = 0.0;
  size_t n_cells_ = 0;

  size_t cell(double v) const {
    double f = (v - v_min_) * inv_dv_;
    long k = static_cast<long>(f);
    long last = static_cast<long>(n_cells_) - 1;
    if (k < 0) k = 0;
    if (k > last) k = last;
    return static_cast<size_t>(k);
  }
};

//! Process-wide cache of built specs, keyed by (family, c).
const LossSpec& get_loss(LossFamily family, double c);

//! Poisson unit-deviance argument s = e^u - y (u + 1 - ln y), with the
//! convention y ln y = 0 at y = 0. Nonnegative; zero iff y >= 1, u = ln y.
double dev_arg(double y, double u);

//! phi and its derivative for the configured family. CH is defined on
//! s >= 0 only and throws DomainError for negative arguments.
double phi(double s, const LossSpec& spec);
double dphi(double s, const LossSpec& spec);

//! MT centering value f(lambda) = argmin_u E_lambda phi_MT(sqrt(y) - u).
//! Table-backed inside the grid; direct minimization outside.
double mt_center(double lambda, const LossSpec& spec);
double mt_center_deriv(double lambda, const LossSpec& spec);

//! Direct series evaluation of the Fisher-consistency integrand G'(s):
//!   -phi'(s) e^{-s} + sum_{j>=1} phi'(s - j(ln s + 1 - ln j)) Pois(j; s) (j-s)/s
//! truncated at J(s) = ceil(s + 10 sqrt(s) + 20).
double correction_g(double s, const LossSpec& spec);

//! Antiderivative of correction_g anchored at G(1e-3) = 0. Table-backed
//! inside the grid; adaptive quadrature from the nearest edge outside.
double correction_G(double s, const LossSpec& spec);

double rho(double y, double u, const LossSpec& spec);
double psi(double y, double u, const LossSpec& spec);
double dpsi(double y, double u, const LossSpec& spec);

//! Sum of psi(j, u) Pois(j; e^u) over j <= ceil(e^u + 10 sqrt(e^u) + 30);
//! approximately zero for every family when the loss is Fisher consistent.
double fisher_consistency_check(double u, const LossSpec& spec);

//! log Pois(j; lambda); lambda > 0.
double pois_log_pmf(double j, double lambda);

}  // namespace plzip
