#pragma once

#include <string>
#include <vector>

#include "plzip/types.hpp"

namespace plzip {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

//! On-disk fit document. Besides the estimate it carries the training
//! arrays the step-3 local solve needs, so prediction at new points works
//! from the document plus new covariates alone.
struct FitDocument {
  std::string loss_name;  // ml | ch | mt
  double loss_c = 0.0;
  double bandwidth = 0.0;
  bool guard_false_zeros = false;
  uint64_t seed = 0;

  Eigen::VectorXd beta, gamma;
  bool gamma_separated = false;
  std::vector<double> m_t, m_value;

  int iterations = 0;
  bool converged = false;
  double score_norm = 0.0;
  std::vector<double> objective_trace;

  // training arrays for local re-solves: t, y, x'beta, w, omega1 per row
  std::vector<double> train_t, train_y, train_xb, train_w, train_omega1;

  // column bindings from the fit invocation
  std::string y_col, t_col;
  std::vector<std::string> x_cols, z_cols;

  static FitDocument from_fit(const FitResult& fit, const Dataset& data,
                              const LossSpec& spec, bool guard,
                              uint64_t seed);
  //! Rebuilds the pieces predict_mean needs.
  void to_fit(FitResult& fit, Dataset& train) const;

  std::string to_json() const;  // stable field order, lossless numbers
  static FitDocument from_json(const std::string& text);
  void save(const std::string& path) const;
  static FitDocument load(const std::string& path);
};

}  // namespace plzip
