#pragma once

#include "balancegauge/glm.hpp"
#include "balancegauge/panel.hpp"

#include <optional>
#include <string>
#include <vector>

namespace bg {

enum class WeightFamily {
  unstabilized_U,
  stabilized_SW,   // numerator conditions on prior treatment
  marginal_W,      // numerator is the marginal treatment prevalence
  censoring_WC,
  treatment_WA,    // marginal form on censored data
  combined_WAC,
  partial,         // strict subset of the per-time factors
  custom
};

std::string family_name(WeightFamily family);
WeightFamily family_from_name(const std::string& name);

struct Truncation {
  double percentile = 1.0;
  double cutoff = 0.0;
};

struct WeightSet {
  WeightFamily family = WeightFamily::custom;
  std::vector<double> values;  // per subject; NaN = unavailable
  std::vector<int> time_range;
  std::optional<Truncation> truncation;
};

struct TreatmentTimeModel {
  int time = 0;
  GlmFit denominator;  // P(A_t = 1 | history), fit on rows uncensored through t
  GlmFit numerator;    // marginal or prior-treatment-conditional
  std::vector<double> p_denom;  // per subject; NaN where unavailable
  std::vector<double> p_num;
};

struct TreatmentModels {
  WeightFamily family = WeightFamily::marginal_W;
  std::vector<TreatmentTimeModel> times;
};

struct CensoringTimeModel {
  int time = 1;
  GlmFit denominator;  // P(C_t = 0 | history through t-1) on at-risk rows
  GlmFit numerator;    // intercept-only remaining-uncensored probability
  std::vector<double> p_denom;
  double p_num = 1.0;
};

struct CensoringModels {
  std::vector<CensoringTimeModel> times;
};

// One denominator + one numerator fit per treatment time, restricted to rows
// uncensored through t. The denominator design is all covariate lags 0..t
// plus all prior treatments, expanded per `spec`.
TreatmentModels fit_treatment_models(const PanelDataset& data,
                                     const DesignSpec& spec,
                                     WeightFamily family);

// Product over `time_range` of numerator/denominator probabilities of the
// observed treatment; unstabilized forces the numerator to 1. Subjects
// censored before the product's last term get a missing (NaN) value.
WeightSet compute_weights(const PanelDataset& data,
                          const TreatmentModels& models, WeightFamily family,
                          const std::vector<int>& time_range);

// Remaining-uncensored models at every t >= 1 with at least one censoring
// event; errors if the panel has no censoring at all.
CensoringModels fit_censoring_models(const PanelDataset& data,
                                     const DesignSpec& spec);

WeightSet compute_censoring_weights(const PanelDataset& data,
                                    const CensoringModels& models,
                                    const std::vector<int>& time_range);

// Elementwise product of a treatment and a censoring weight set.
WeightSet combine_weights(const WeightSet& wa, const WeightSet& wc);

// Clip values above the empirical percentile cutoff (type-7 quantile of the
// available values). Re-applying at the same percentile is a no-op.
WeightSet truncate_weights(const WeightSet& w, double percentile);

// Linear-interpolation (type-7) quantile; ignores NaN entries.
double quantile_type7(std::vector<double> x, double p);

// Mean over available values; the stabilized-family diagnostic.
double weight_mean(const WeightSet& w);

}  // namespace bg
