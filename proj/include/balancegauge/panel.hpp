#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace bg {

enum class CovariateKind { continuous, binary, ordinal };
enum class Encoding { numeric_score, dummy };

struct CovariateSpec {
  std::string name;
  CovariateKind kind = CovariateKind::continuous;
  Encoding encoding = Encoding::numeric_score;
  // Ordered level list; required (size >= 2) for ordinal, {0,1} for binary.
  std::vector<double> levels;
};

// One time-point of the panel. Covariate cells and treatments of censored
// (subject, time) cells are NaN and excluded from all computations.
struct Wave {
  std::vector<double> treatment;
  std::vector<int> censored;
  Eigen::MatrixXd covariates;  // n x p in schema order
  // False when the panel simply has no treatment decision at this time
  // (e.g. a baseline covariate wave); distinct from censoring-induced NaN.
  bool treatment_present = true;
};

struct PanelDataset {
  std::vector<CovariateSpec> schema;
  std::vector<std::string> ids;
  std::vector<Wave> waves;
  std::vector<double> outcome;  // per subject, NaN when missing

  int n() const { return static_cast<int>(ids.size()); }
  int time_points() const { return static_cast<int>(waves.size()); }
  // Mask of subjects with C_is = 0 for every s <= t.
  std::vector<char> uncensored_through(int t) const;
};

// Rows of X_{t-k} (encoded) for subjects uncensored at t, grouped by A_t.
struct CovariateBlock {
  int target_time = 0;
  int lag = 0;
  Eigen::MatrixXd columns;
  std::vector<int> group;
  std::vector<int> subjects;  // block row -> subject index
  std::vector<std::string> column_names;
  std::vector<CovariateKind> column_kinds;
  std::vector<std::vector<double>> column_levels;  // empty for continuous
};

PanelDataset load_panel(const std::string& panel_csv,
                        const std::string& outcome_csv,
                        const std::vector<CovariateSpec>& schema);

void write_panel(const PanelDataset& data, const std::string& panel_csv,
                 const std::string& outcome_csv);

CovariateBlock covariate_block(const PanelDataset& data, int t, int k);

// Encoded columns of wave `time` for the given subject rows (no grouping);
// shared by covariate_block and the weight/CS design builders.
struct EncodedWave {
  Eigen::MatrixXd columns;
  std::vector<std::string> column_names;
  std::vector<CovariateKind> column_kinds;
  std::vector<std::vector<double>> column_levels;
};
EncodedWave encode_wave(const PanelDataset& data, int time,
                        const std::vector<int>& subjects);

// Cross-wave design columns for the given subject rows: encoded covariate
// waves 0..cov_through followed by treatments 0..treat_through (-1 for none).
// Covariate columns are named "<name>_t<time>", treatments "A_t<time>".
EncodedWave history_design(const PanelDataset& data, int cov_through,
                           int treat_through,
                           const std::vector<int>& subjects);

}  // namespace bg
