#pragma once

#include "balancegauge/metrics.hpp"
#include "balancegauge/panel.hpp"
#include "balancegauge/weights.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bg {

// Coefficients on the six observed covariates plus the four derived terms
// (T = sin L, R = M^2, V = N*O, Z = O*P) that enter some linear predictors.
struct CovariateCoeffs {
  double L = 0, M = 0, N = 0, O = 0, P = 0, Q = 0;
  double T = 0, R = 0, V = 0, Z = 0;
};

struct CensoringConfig {
  double mu1 = -2.7;
  double muL = 0.04, muM = 0.05, muN = 0.02;
  double muO = 1.0, muP = 0.02, muQ = 0.01;
  double lambda = 1.0;
};

// Defaults reproduce the base scenario; builtins override from here.
struct ScenarioConfig {
  std::string id = "custom";
  int n = 10000;
  // t = 0 covariates and treatment
  double delta0 = -0.05;
  double alpha0 = -1.3;
  CovariateCoeffs phi0{0.05, 0.05, 0.1, 0.75, 0.5, 0.4};
  // t = 1 covariates and treatment
  double beta_ar = 0.0;  // covariate autoregression
  std::array<double, 5> gamma{-1.0, -0.5, -0.25, -0.5, -0.75};
  double delta1 = 1.23;
  double mu0 = -1.1;
  double alpha1 = -1.7;
  CovariateCoeffs phi1{0.05, 0.05, 0.1, 0.75, 0.5, 0.4};
  double theta = 0.69;  // treatment carryover
  // outcome
  double alphaY = -4.3;
  CovariateCoeffs betaY{0.5, 0.5, 0.05, 1.0, 1.0, 0.2};
  double betaA0 = -0.69, betaA1 = -0.69;
  // ordinal level prevalences (levels 1..5)
  std::array<double, 5> q0_prev{0.5, 0.3, 0.1, 0.05, 0.05};
  std::array<double, 5> q1_prev{0.4, 0.3, 0.2, 0.05, 0.05};
  std::optional<CensoringConfig> censor;
};

// "1".."10" or "censored_base".
ScenarioConfig builtin_scenario(const std::string& id);
std::string scenario_to_json(const ScenarioConfig& config);
ScenarioConfig scenario_from_json(const std::string& text);

struct MsmTruth {
  double beta0 = 0, beta1 = 0, beta2 = 0;
  long oracle_n = 0;
  double or1() const;
  double or2() const;
};

struct MsmEstimate {
  double beta0 = 0, beta1 = 0, beta2 = 0;
  bool converged = false;
  long rows = 0;
};

enum class BiasAggregation { mean_abs, signed_mean };

// Exogenous draws come from streams keyed by (seed, replicate, stage), so a
// subject's noise is identical across forced-treatment variants and results
// do not depend on worker count.
PanelDataset generate_scenario(const ScenarioConfig& config, std::uint64_t seed,
                               std::uint64_t replicate = 0);

// Same exogenous streams with both treatments forced and censoring disabled.
PanelDataset generate_counterfactual(const ScenarioConfig& config,
                                     std::uint64_t seed,
                                     std::uint64_t replicate, int a0, int a1);

// Counterfactual simulation: the four forced regimes stacked and fit jointly.
MsmTruth truth_oracle(const ScenarioConfig& config, long N, std::uint64_t seed);

// Weighted logistic of the outcome on the treatment history, restricted to
// subjects with an available outcome and weight.
MsmEstimate estimate_msm(const PanelDataset& data, const WeightSet& w);

// Per-parameter odds-ratio errors exp(beta_hat_j) - exp(beta_j).
std::array<double, 2> or_errors(const MsmEstimate& estimate,
                                const MsmTruth& truth);
double bias(const MsmEstimate& estimate, const MsmTruth& truth,
            BiasAggregation agg = BiasAggregation::mean_abs);

inline constexpr std::array<const char*, 6> kRegimes = {
    "unweighted", "W0xW1", "W1", "W0", "W0tr90xW1", "W0xW1tr90"};

struct ReplicateRecord {
  long rep = 0;
  std::string ps_spec;  // "simple" | "complex"
  std::string regime;
  std::string metric;
  double bal_a0x0 = 0, bal_a1x0 = 0, bal_a1x1 = 0;
  double bias = 0;  // signed mean of the two OR errors
};

struct ReplicateSummary {
  long rep = 0;
  std::string ps_spec;
  std::string regime;
  bool converged = false;
  double beta0 = 0, beta1 = 0, beta2 = 0;
  double or1_err = 0, or2_err = 0;
};

struct ReplicateFailure {
  long rep = 0;
  std::string ps_spec;
  std::string message;
};

struct RunOptions {
  long reps = 1000;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::vector<std::string> regimes;  // empty = all six
  std::vector<Metric> metrics;       // empty = all eight
  long truth_n = 300000;
};

struct CampaignResult {
  MsmTruth truth;
  std::vector<ReplicateRecord> records;
  std::vector<ReplicateSummary> summaries;
  std::vector<ReplicateFailure> failures;
  double censor_fraction_mean = 0.0;  // NaN for uncensored scenarios
};

// Full simulation campaign: per replicate, both PS specifications, the six
// weighting regimes, aggregate balance variables for every metric, and bias
// against the Monte Carlo truth. Per-replicate failures are recorded and
// skipped. Deterministic for a fixed seed regardless of `jobs`.
CampaignResult run_replicates(const ScenarioConfig& config,
                              const RunOptions& options);

void write_archive_csv(const CampaignResult& result, const std::string& path);
void write_summaries_csv(const CampaignResult& result, const std::string& path);

}  // namespace bg
