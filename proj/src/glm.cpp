#include "balancegauge/glm.hpp"

#include "balancegauge/common.hpp"

#include <Eigen/QR>

#include <cmath>
#include <limits>
#include <sstream>

namespace bg {

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

namespace {

constexpr double kProbClamp = 1e-12;
constexpr double kDupCorr = 1.0 - 1e-12;

bool is_constant(const Eigen::VectorXd& col) {
  const double mean = col.mean();
  const double scale = std::max(1.0, std::abs(mean));
  return (col.array() - mean).abs().maxCoeff() <= 1e-12 * scale;
}

// Drops constant columns and columns with |corr| > 1 - 1e-12 against an
// earlier kept column. Columns before `first_checked` (the intercept) are
// always kept. Returns kept indices and appends dropped names.
std::vector<int> rank_filter(const Eigen::MatrixXd& X,
                             const std::vector<std::string>& names,
                             int first_checked,
                             std::vector<std::string>& dropped) {
  const int p = static_cast<int>(X.cols());
  std::vector<int> kept;
  std::vector<Eigen::VectorXd> centered;  // kept non-constant columns
  std::vector<double> norms;
  kept.reserve(p);
  for (int j = 0; j < p; ++j) {
    if (j < first_checked) {
      kept.push_back(j);
      continue;
    }
    Eigen::VectorXd col = X.col(j);
    if (is_constant(col)) {
      dropped.push_back(names[j]);
      continue;
    }
    Eigen::VectorXd c = col.array() - col.mean();
    const double norm = c.norm();
    bool duplicate = false;
    for (std::size_t i = 0; i < centered.size(); ++i) {
      const double r = std::abs(c.dot(centered[i])) / (norm * norms[i]);
      if (r > kDupCorr) {
        duplicate = true;
        break;
      }
    }
    if (duplicate) {
      dropped.push_back(names[j]);
      continue;
    }
    kept.push_back(j);
    centered.push_back(std::move(c));
    norms.push_back(norm);
  }
  return kept;
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& X,
                               const std::vector<int>& idx) {
  Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(j) = X.col(idx[j]);
  return out;
}

}  // namespace

DesignMatrix build_design(const Eigen::MatrixXd& columns,
                          const std::vector<std::string>& names,
                          const DesignSpec& spec) {
  if (static_cast<std::size_t>(columns.cols()) != names.size())
    throw std::invalid_argument("build_design: column/name count mismatch");
  std::vector<int> main_idx;
  if (spec.terms.empty()) {
    for (int j = 0; j < columns.cols(); ++j) main_idx.push_back(j);
  } else {
    for (const auto& term : spec.terms) {
      int found = -1;
      for (std::size_t j = 0; j < names.size(); ++j)
        if (names[j] == term) {
          found = static_cast<int>(j);
          break;
        }
      if (found < 0) throw DataError("unknown design term '" + term + "'");
      main_idx.push_back(found);
    }
  }
  const int n = static_cast<int>(columns.rows());
  const int p = static_cast<int>(main_idx.size());
  const int n_inter =
      spec.complexity == Complexity::complex ? p * (p - 1) / 2 : 0;

  Eigen::MatrixXd X(n, 1 + p + n_inter);
  std::vector<std::string> col_names;
  col_names.reserve(1 + p + n_inter);
  X.col(0).setOnes();
  col_names.push_back("(Intercept)");
  for (int j = 0; j < p; ++j) {
    X.col(1 + j) = columns.col(main_idx[j]);
    col_names.push_back(names[main_idx[j]]);
  }
  if (n_inter > 0) {
    int c = 1 + p;
    for (int i = 0; i < p; ++i)
      for (int j = i + 1; j < p; ++j) {
        X.col(c) = columns.col(main_idx[i]).cwiseProduct(columns.col(main_idx[j]));
        col_names.push_back(names[main_idx[i]] + ":" + names[main_idx[j]]);
        ++c;
      }
  }

  DesignMatrix dm;
  const std::vector<int> kept = rank_filter(X, col_names, 1, dm.dropped_columns);
  dm.X = select_columns(X, kept);
  dm.column_names.reserve(kept.size());
  for (int j : kept) dm.column_names.push_back(col_names[j]);
  return dm;
}

GlmFit fit_weighted_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& w,
                             const std::vector<std::string>& names) {
  const Eigen::Index n = X.rows();
  const Eigen::Index k = X.cols();
  if (y.size() != n || w.size() != n)
    throw std::invalid_argument("fit_weighted_logistic: length mismatch");
  if (k == 0) throw std::invalid_argument("fit_weighted_logistic: empty design");
  if ((w.array() < 0).any())
    throw std::invalid_argument("fit_weighted_logistic: negative weight");

  const double w_tot = w.sum();
  const double w_events = (w.array() * y.array()).sum();
  if (w_tot <= 0.0)
    throw NumericError("logistic fit: no positive weights");
  if (w_events <= 0.0 || w_events >= w_tot)
    throw NumericError("logistic fit: degenerate response (outcome constant "
                       "among positively weighted rows)");

  GlmFit fit;
  fit.column_names = names;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd mu(n);
  bool ridged = false;
  for (int it = 0; it < 100; ++it) {
    mu = (X * beta).unaryExpr([](double e) { return expit(e); });
    mu = mu.cwiseMax(kProbClamp).cwiseMin(1.0 - kProbClamp);
    Eigen::VectorXd s = w.array() * mu.array() * (1.0 - mu.array());
    Eigen::VectorXd grad = X.transpose() * (w.array() * (y - mu).array()).matrix();
    Eigen::MatrixXd H = X.transpose() * s.asDiagonal() * X;
    if (beta.cwiseAbs().maxCoeff() > 30.0) {
      // Quasi-separation: penalize non-intercept coefficients.
      if (!ridged) {
        ridged = true;
        warnings().emit("glm_engine",
                        "quasi-separation detected; applying 1e-6 ridge to "
                        "non-intercept coefficients");
      }
      for (Eigen::Index j = 1; j < k; ++j) {
        H(j, j) += 1e-6;
        grad(j) -= 1e-6 * beta(j);
      }
    }
    Eigen::VectorXd step = H.ldlt().solve(grad);
    if (!step.allFinite())
      throw NumericError("logistic fit: singular information matrix");
    const double denom = std::max(beta.cwiseAbs().maxCoeff(), 1.0);
    beta += step;
    fit.iterations = it + 1;
    if (step.cwiseAbs().maxCoeff() / denom < 1e-8) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged)
    warnings().emit("glm_engine", "IRLS did not converge within 100 iterations");

  mu = (X * beta).unaryExpr([](double e) { return expit(e); });
  mu = mu.cwiseMax(kProbClamp).cwiseMin(1.0 - kProbClamp);
  fit.deviance = -2.0 * (w.array() * (y.array() * mu.array().log() +
                                      (1.0 - y.array()) *
                                          (1.0 - mu.array()).log()))
                            .sum();
  fit.coefficients = std::move(beta);
  return fit;
}

Eigen::VectorXd predict_proba(const GlmFit& fit, const Eigen::MatrixXd& X) {
  if (X.cols() != fit.coefficients.size())
    throw std::invalid_argument("predict_proba: design width mismatch");
  return (X * fit.coefficients).unaryExpr([](double e) { return expit(e); });
}

OlsFit fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
               const std::vector<std::string>& names) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (y.size() != n) throw std::invalid_argument("fit_ols: length mismatch");
  std::vector<std::string> col_names = names;
  if (col_names.empty())
    for (Eigen::Index j = 0; j < p; ++j)
      col_names.push_back("x" + std::to_string(j));

  OlsFit fit;
  const std::vector<int> kept = rank_filter(X, col_names, 1, fit.dropped_columns);
  Eigen::MatrixXd Xk = select_columns(X, kept);
  for (int j : kept) fit.column_names.push_back(col_names[j]);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xk);
  qr.setThreshold(1e-10);
  if (qr.rank() < Xk.cols()) {
    std::ostringstream oss;
    oss << "least squares: rank-deficient design after filtering (columns";
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index j = qr.rank(); j < Xk.cols(); ++j)
      oss << " '" << fit.column_names[perm(j)] << "'";
    oss << " are collinear)";
    throw NumericError(oss.str());
  }
  fit.coefficients = qr.solve(y);

  const double y_mean = y.mean();
  const double sst = (y.array() - y_mean).square().sum();
  if (sst <= 0.0)
    throw NumericError("least squares: constant response (zero total sum of "
                       "squares)");
  const double sse = (y - Xk * fit.coefficients).squaredNorm();
  fit.r_squared = std::min(1.0, std::max(0.0, 1.0 - sse / sst));
  fit.intercept = fit.coefficients(0);
  return fit;
}

}  // namespace bg
