#include "balancegauge/eval.hpp"

#include "balancegauge/common.hpp"
#include "balancegauge/csv.hpp"
#include "balancegauge/glm.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bg {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Threshold for the scaled condition number of the (deduplicated) evaluation
// design. Complete campaign archives sit two orders of magnitude below it;
// archives whose balance variables barely move (unweighted-only runs) sit
// comfortably above.
constexpr double kMaxScaledCondition = 1000.0;

double parse_cell(const std::string& cell, const std::string& context) {
  if (cell.empty()) return kNaN;
  return parse_double(cell, context);
}

}  // namespace

std::vector<ReplicateRecord> read_archive_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  const std::vector<std::string> expected = {"rep",       "ps_spec",
                                             "regime",    "metric",
                                             "bal_A0X0",  "bal_A1X0",
                                             "bal_A1X1",  "bias"};
  if (table.header != expected)
    throw DataError(path + ": unexpected archive header");
  std::vector<ReplicateRecord> records;
  records.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where =
        path + " line " + std::to_string(table.line_numbers[r]);
    ReplicateRecord rec;
    try {
      rec.rep = std::stol(row[0]);
    } catch (const std::exception&) {
      throw DataError(where + ": invalid rep '" + row[0] + "'");
    }
    rec.ps_spec = row[1];
    rec.regime = row[2];
    rec.metric = metric_name(metric_from_name(row[3]));
    rec.bal_a0x0 = parse_cell(row[4], where + " bal_A0X0");
    rec.bal_a1x0 = parse_cell(row[5], where + " bal_A1X0");
    rec.bal_a1x1 = parse_cell(row[6], where + " bal_A1X1");
    rec.bias = parse_cell(row[7], where + " bias");
    records.push_back(std::move(rec));
  }
  return records;
}

EvalTable assemble_eval_table(const std::vector<ReplicateRecord>& records,
                              const std::string& ps_spec, Metric metric) {
  const std::string want = metric_name(metric);
  EvalTable table;
  table.metric = metric;
  for (const ReplicateRecord& rec : records) {
    if (rec.ps_spec != ps_spec || rec.metric != want) continue;
    if (!std::isfinite(rec.bias) || !std::isfinite(rec.bal_a0x0) ||
        !std::isfinite(rec.bal_a1x0) || !std::isfinite(rec.bal_a1x1)) {
      ++table.dropped;
      continue;
    }
    table.rows.push_back({rec.bias, rec.bal_a0x0, rec.bal_a1x0, rec.bal_a1x1});
  }
  return table;
}

EvalResult fit_bias_regression(const EvalTable& table) {
  const std::string metric = metric_name(table.metric);
  const long n = static_cast<long>(table.rows.size());
  if (n < 8)
    throw DataError("metric " + metric + ": need at least 8 rows, have " +
                    std::to_string(n));

  Eigen::MatrixXd X(n, 7);
  Eigen::VectorXd y(n);
  for (long i = 0; i < n; ++i) {
    const EvalRow& r = table.rows[i];
    X(i, 0) = 1.0;
    X(i, 1) = r.b1;
    X(i, 2) = r.b2;
    X(i, 3) = r.b3;
    X(i, 4) = r.b1 * r.b1;
    X(i, 5) = r.b2 * r.b2;
    X(i, 6) = r.b3 * r.b3;
    y(i) = r.bias;
  }
  const std::vector<std::string> names = {"(Intercept)", "b1",    "b2",
                                          "b3",          "b1_sq", "b2_sq",
                                          "b3_sq"};
  OlsFit fit;
  try {
    fit = fit_ols(X, y, names);
  } catch (const NumericError& e) {
    throw NumericError("metric " + metric + ": " + e.what());
  }

  // Guard against a nearly unidentified design that slipped past the exact
  // duplicate/constant filter: scaled condition number of the kept columns.
  Eigen::MatrixXd kept(n, fit.column_names.size());
  long col = 0;
  for (std::size_t j = 0; j < names.size(); ++j) {
    const bool keep = std::find(fit.column_names.begin(),
                                fit.column_names.end(),
                                names[j]) != fit.column_names.end();
    if (keep) kept.col(col++) = X.col(j) / X.col(j).norm();
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(kept);
  const double smin = svd.singularValues().tail(1)(0);
  const double cond =
      smin > 0.0 ? svd.singularValues()(0) / smin
                 : std::numeric_limits<double>::infinity();
  if (cond > kMaxScaledCondition)
    throw NumericError(
        "metric " + metric +
        ": balance variables are nearly constant across rows (scaled "
        "condition number " +
        format_double(cond) + "); the evaluation regression is unidentified");

  EvalResult result;
  result.metric = metric;
  result.r_squared = fit.r_squared;
  result.intercept = fit.intercept;
  result.row_count = n;
  result.dropped_rows = table.dropped;
  return result;
}

std::vector<EvalResult> rank_metrics(std::vector<EvalResult> results,
                                     double alert_level) {
  if (results.empty())
    throw std::invalid_argument("rank_metrics requires at least one result");
  std::stable_sort(results.begin(), results.end(),
                   [](const EvalResult& a, const EvalResult& b) {
                     if (a.r_squared != b.r_squared)
                       return a.r_squared > b.r_squared;
                     return std::abs(a.intercept) < std::abs(b.intercept);
                   });
  for (EvalResult& r : results)
    r.intercept_alert = std::abs(r.intercept) > alert_level;
  return results;
}

std::vector<EvalResult> evaluate_archive(
    const std::vector<ReplicateRecord>& records, const std::string& ps_spec,
    const std::vector<Metric>& metrics) {
  std::vector<Metric> todo = metrics;
  if (todo.empty()) {
    for (Metric m : kAllMetrics) {
      const std::string name = metric_name(m);
      for (const ReplicateRecord& rec : records) {
        if (rec.ps_spec == ps_spec && rec.metric == name) {
          todo.push_back(m);
          break;
        }
      }
    }
  }
  if (todo.empty())
    throw DataError("archive has no records for PS specification '" +
                    ps_spec + "'");
  std::vector<EvalResult> results;
  results.reserve(todo.size());
  for (Metric m : todo)
    results.push_back(
        fit_bias_regression(assemble_eval_table(records, ps_spec, m)));
  return results;
}

void write_eval_csv(const std::string& path,
                    const std::vector<EvalRecord>& records) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(records.size());
  for (const EvalRecord& rec : records) {
    rows.push_back({rec.scenario, rec.ps_spec, rec.result.metric,
                    format_double(rec.result.r_squared),
                    format_double(rec.result.intercept)});
  }
  write_csv(path, {"scenario", "ps_spec", "metric", "r2", "intercept"}, rows);
}

}  // namespace bg
