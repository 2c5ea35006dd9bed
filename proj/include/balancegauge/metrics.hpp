#pragma once

#include "balancegauge/glm.hpp"
#include "balancegauge/panel.hpp"
#include "balancegauge/weights.hpp"

#include <array>
#include <string>
#include <utility>
#include <vector>

namespace bg {

enum class Metric { D, SMD, OVL, KS, LV, MHB, CS, GWD };

inline constexpr std::array<Metric, 8> kAllMetrics = {
    Metric::D,  Metric::SMD, Metric::OVL, Metric::KS,
    Metric::LV, Metric::MHB, Metric::CS,  Metric::GWD};

std::string metric_name(Metric m);
Metric metric_from_name(const std::string& name);
bool metric_is_global(Metric m);  // MHB, CS, GWD have no per-covariate cells

// Weighted mean and the count-normalized unbiased weighted variance
// (weights rescaled to sum to the sample count, then /(m-1)).
double weighted_mean(const std::vector<double>& x, const std::vector<double>& w);
double weighted_variance(const std::vector<double>& x,
                         const std::vector<double>& w);

// Concordance of score vs group under weights; ties count 0.5.
double weighted_auc(const std::vector<double>& score,
                    const std::vector<int>& group,
                    const std::vector<double>& w);

// Per-covariate metrics for block column j. Rows whose weight is missing are
// excluded before grouping; an empty group raises DataError.
double weighted_mean_diff(const CovariateBlock& block, const WeightSet& w, int j);
double smd(const CovariateBlock& block, const WeightSet& w, int j);
double overlap_coefficient(const CovariateBlock& block, const WeightSet& w, int j);
double ks_distance(const CovariateBlock& block, const WeightSet& w, int j);
double levy_distance(const CovariateBlock& block, const WeightSet& w, int j);

// Global metrics over the whole covariate block.
double mahalanobis_balance(const CovariateBlock& block, const WeightSet& w);

struct GwdResult {
  double sum = 0.0;
  double mean_per_term = 0.0;  // sum / nondegenerate terms
  int nondegenerate_terms = 0;
  int total_terms = 0;
};
GwdResult gwd(const CovariateBlock& block, const WeightSet& w);

struct CstatResult {
  double auc = 0.5;
  double normalized = 0.0;  // 2 (max(C, 1-C) - 0.5)
};
// Weighted refit of the group on the given covariate columns (intercept
// added), weighted AUC of the linear predictor.
CstatResult cstat_on(const Eigen::MatrixXd& columns,
                     const std::vector<std::string>& names,
                     const std::vector<int>& group,
                     const std::vector<double>& w, const DesignSpec& spec);
// Returns NaN (with a warning) when the refit is infeasible: the cell is
// marked unavailable rather than failing the whole table.
double post_weighting_cstat(const CovariateBlock& block, const WeightSet& w,
                            const DesignSpec& spec = {});

struct BalanceCell {
  int t = 0;
  int k = 0;
  Metric metric = Metric::D;
  std::string covariate;  // "GLOBAL" for MHB/CS/GWD
  double value = 0.0;
  double threshold = 0.0;  // NaN when the metric has none
  bool flagged = false;
  bool available = true;
};

// Aggregate balance variable: per-covariate metrics averaged over covariates,
// global metrics passed through. For T=1 these are the three variables
// (A_0~X_0), (A_1~X_0), (A_1~X_1).
struct BalanceAggregate {
  int t = 0;
  int k = 0;
  Metric metric = Metric::D;
  double value = 0.0;
  bool available = true;
};

struct BalanceReport {
  std::vector<BalanceCell> cells;
  std::vector<BalanceAggregate> aggregates;
  int covariate_count = 0;
};

// All (t, k) with 0 <= k <= t over treatment time-points.
std::vector<std::pair<int, int>> balance_schedule(const PanelDataset& data);

// Every scheduled cell for the requested metrics. The CS refit at time t uses
// the cumulative covariate design X_0..X_t without prior treatment; its value
// is shared across the lags of t. Per-cell failures mark the cell unavailable.
BalanceReport balance_table(
    const PanelDataset& data, const WeightSet& w,
    const std::vector<Metric>& metrics,
    const std::vector<std::pair<int, int>>& schedule = {});

std::string balance_report_json(const BalanceReport& report);
void write_balance_csv(const BalanceReport& report, const std::string& path);

// Plot-ready curves for block column j (weighted, per group).
struct CurvePoint {
  double x = 0.0;
  double f1 = 0.0;
  double f0 = 0.0;
};
std::vector<CurvePoint> ecdf_curve(const CovariateBlock& block,
                                   const WeightSet& w, int j);
std::vector<CurvePoint> density_curve(const CovariateBlock& block,
                                      const WeightSet& w, int j);

WeightSet unit_weights(int n);

}  // namespace bg
