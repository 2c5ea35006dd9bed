#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace bg {

enum class Complexity { simple, complex };

// Main-effect term list plus interaction policy. `complex` adds all pairwise
// products of the main-effect columns (p + p(p-1)/2 columns before rank
// filtering).
struct DesignSpec {
  std::vector<std::string> terms;  // empty selects every offered column
  Complexity complexity = Complexity::simple;
};

struct DesignMatrix {
  Eigen::MatrixXd X;  // intercept first
  std::vector<std::string> column_names;
  std::vector<std::string> dropped_columns;
};

struct GlmFit {
  Eigen::VectorXd coefficients;  // intercept first
  bool converged = false;
  int iterations = 0;
  double deviance = 0.0;
  std::vector<std::string> column_names;
  std::vector<std::string> dropped_columns;
};

struct OlsFit {
  Eigen::VectorXd coefficients;
  double r_squared = 0.0;
  double intercept = 0.0;
  std::vector<std::string> column_names;
  std::vector<std::string> dropped_columns;
};

// Assemble a design matrix: select `spec.terms` among the offered columns,
// add pairwise products under the complex spec, prepend an intercept, then
// drop constant columns and columns correlated > 1 - 1e-12 in absolute value
// with an earlier column (recording them).
DesignMatrix build_design(const Eigen::MatrixXd& columns,
                          const std::vector<std::string>& names,
                          const DesignSpec& spec);

// Weighted Bernoulli IRLS. Convergence: relative coefficient step < 1e-8 or
// 100 iterations. Quasi-separation (any |coef| > 30) switches on a 1e-6 ridge
// for non-intercept columns and flags a warning.
GlmFit fit_weighted_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& w,
                             const std::vector<std::string>& names = {});

Eigen::VectorXd predict_proba(const GlmFit& fit, const Eigen::MatrixXd& X);

// Least squares via column-pivoted QR on the rank-filtered design. The first
// column is treated as the intercept and never dropped.
OlsFit fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
               const std::vector<std::string>& names = {});

double expit(double x);

}  // namespace bg
