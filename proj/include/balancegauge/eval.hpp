#pragma once

#include "balancegauge/dgp.hpp"
#include "balancegauge/metrics.hpp"

#include <string>
#include <vector>

namespace bg {

// One evaluation-regression observation: a replicate-regime's bias and its
// three aggregate balance variables (A_0~X_0, A_1~X_0, A_1~X_1).
struct EvalRow {
  double bias = 0.0;
  double b1 = 0.0, b2 = 0.0, b3 = 0.0;
};

struct EvalTable {
  Metric metric = Metric::D;
  std::vector<EvalRow> rows;
  long dropped = 0;  // records skipped because a cell was missing
};

struct EvalResult {
  std::string metric;
  double r_squared = 0.0;
  double intercept = 0.0;  // average bias in the absence of imbalance
  long row_count = 0;
  long dropped_rows = 0;
  bool intercept_alert = false;  // set by rank_metrics
};

std::vector<ReplicateRecord> read_archive_csv(const std::string& path);

// One row per (replicate, regime) of the given PS specification; records with
// a missing bias or balance cell are dropped and counted.
EvalTable assemble_eval_table(const std::vector<ReplicateRecord>& records,
                              const std::string& ps_spec, Metric metric);

// OLS of bias on the three balance variables plus their raw squares. Exactly
// duplicated or constant predictors are dropped; a nearly unidentified design
// (balance variables that barely move, e.g. an unweighted-only archive)
// raises NumericError instead of returning a spurious fit.
EvalResult fit_bias_regression(const EvalTable& table);

// Sorted descending by R^2, ties broken by |intercept| ascending; flags
// results whose |intercept| exceeds `alert_level`.
std::vector<EvalResult> rank_metrics(std::vector<EvalResult> results,
                                     double alert_level = 0.1);

// Every metric present in the archive for one PS specification, or the given
// subset.
std::vector<EvalResult> evaluate_archive(
    const std::vector<ReplicateRecord>& records, const std::string& ps_spec,
    const std::vector<Metric>& metrics = {});

struct EvalRecord {
  std::string scenario;
  std::string ps_spec;
  EvalResult result;
};

void write_eval_csv(const std::string& path,
                    const std::vector<EvalRecord>& records);

}  // namespace bg
