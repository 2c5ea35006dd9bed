#include "balancegauge/weights.hpp"

#include "balancegauge/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace bg {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kProbClamp = 1e-12;

double logit(double p) { return std::log(p / (1.0 - p)); }

GlmFit intercept_only_fit(double p) {
  // MLE of an intercept-only logistic is exactly the sample prevalence.
  GlmFit fit;
  fit.coefficients = Eigen::VectorXd::Constant(1, logit(p));
  fit.converged = true;
  fit.column_names = {"(Intercept)"};
  return fit;
}

std::vector<int> mask_to_subjects(const std::vector<char>& mask) {
  std::vector<int> subjects;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) subjects.push_back(static_cast<int>(i));
  }
  return subjects;
}

double clamp_prob(double p, long& clamped) {
  if (p < kProbClamp) {
    ++clamped;
    return kProbClamp;
  }
  if (p > 1.0 - kProbClamp) {
    ++clamped;
    return 1.0 - kProbClamp;
  }
  return p;
}

void warn_clamped(long clamped, const char* what) {
  if (clamped > 0) {
    warnings().emit("weight_factory",
                    std::to_string(clamped) + " " + what +
                        " probabilities clamped to [1e-12, 1 - 1e-12]");
  }
}

}  // namespace

std::string family_name(WeightFamily family) {
  switch (family) {
    case WeightFamily::unstabilized_U: return "unstabilized_U";
    case WeightFamily::stabilized_SW: return "stabilized_SW";
    case WeightFamily::marginal_W: return "marginal_W";
    case WeightFamily::censoring_WC: return "censoring_WC";
    case WeightFamily::treatment_WA: return "treatment_WA";
    case WeightFamily::combined_WAC: return "combined_WAC";
    case WeightFamily::partial: return "partial";
    case WeightFamily::custom: return "custom";
  }
  return "custom";
}

WeightFamily family_from_name(const std::string& name) {
  if (name == "unstabilized_U" || name == "U") return WeightFamily::unstabilized_U;
  if (name == "stabilized_SW" || name == "SW") return WeightFamily::stabilized_SW;
  if (name == "marginal_W" || name == "W") return WeightFamily::marginal_W;
  if (name == "censoring_WC" || name == "WC") return WeightFamily::censoring_WC;
  if (name == "treatment_WA" || name == "WA") return WeightFamily::treatment_WA;
  if (name == "combined_WAC" || name == "WAC") return WeightFamily::combined_WAC;
  if (name == "partial") return WeightFamily::partial;
  if (name == "custom") return WeightFamily::custom;
  throw DataError("unknown weight family '" + name + "'");
}

TreatmentModels fit_treatment_models(const PanelDataset& data,
                                     const DesignSpec& spec,
                                     WeightFamily family) {
  if (family == WeightFamily::censoring_WC ||
      family == WeightFamily::combined_WAC ||
      family == WeightFamily::partial || family == WeightFamily::custom) {
    throw std::invalid_argument(
        "fit_treatment_models: family must be a treatment weight family");
  }
  TreatmentModels models;
  models.family = family;
  const int n = data.n();
  for (int t = 0; t < data.time_points(); ++t) {
    if (!data.waves[t].treatment_present) continue;
    TreatmentTimeModel tm;
    tm.time = t;
    const std::vector<char> mask = data.uncensored_through(t);
    const std::vector<int> subjects = mask_to_subjects(mask);
    const int m = static_cast<int>(subjects.size());
    Eigen::VectorXd y(m);
    for (int r = 0; r < m; ++r) y(r) = data.waves[t].treatment[subjects[r]];
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m);

    const EncodedWave hist = history_design(data, t, t - 1, subjects);
    const DesignMatrix dm = build_design(hist.columns, hist.column_names, spec);
    Eigen::VectorXd pd;
    try {
      tm.denominator = fit_weighted_logistic(dm.X, y, ones, dm.column_names);
      tm.denominator.dropped_columns = dm.dropped_columns;
      pd = predict_proba(tm.denominator, dm.X);
    } catch (const NumericError& e) {
      throw NumericError("treatment model at time " + std::to_string(t) +
                         ": " + e.what());
    }

    Eigen::VectorXd pn;
    std::vector<int> prior;
    if (family == WeightFamily::stabilized_SW) {
      for (int s = 0; s < t; ++s) {
        if (data.waves[s].treatment_present) prior.push_back(s);
      }
    }
    if (prior.empty()) {
      // Marginal prevalence; the intercept-only MLE equals the sample mean.
      const double p = y.mean();
      if (p <= 0.0 || p >= 1.0) {
        throw NumericError("treatment model at time " + std::to_string(t) +
                           ": degenerate treatment (all " +
                           (p >= 1.0 ? std::string("treated") : "untreated") +
                           ")");
      }
      tm.numerator = intercept_only_fit(p);
      pn = Eigen::VectorXd::Constant(m, p);
    } else {
      Eigen::MatrixXd prior_cols(m, static_cast<Eigen::Index>(prior.size()));
      std::vector<std::string> prior_names;
      for (std::size_t j = 0; j < prior.size(); ++j) {
        for (int r = 0; r < m; ++r) {
          prior_cols(r, j) = data.waves[prior[j]].treatment[subjects[r]];
        }
        prior_names.push_back("A_t" + std::to_string(prior[j]));
      }
      const DesignMatrix nm = build_design(prior_cols, prior_names, DesignSpec{});
      try {
        tm.numerator = fit_weighted_logistic(nm.X, y, ones, nm.column_names);
        pn = predict_proba(tm.numerator, nm.X);
      } catch (const NumericError& e) {
        throw NumericError("treatment numerator model at time " +
                           std::to_string(t) + ": " + e.what());
      }
    }

    tm.p_denom.assign(n, kNaN);
    tm.p_num.assign(n, kNaN);
    for (int r = 0; r < m; ++r) {
      tm.p_denom[subjects[r]] = pd(r);
      tm.p_num[subjects[r]] = pn(r);
    }
    models.times.push_back(std::move(tm));
  }
  if (models.times.empty()) {
    throw DataError("fit_treatment_models: panel has no treatment time-points");
  }
  return models;
}

WeightSet compute_weights(const PanelDataset& data,
                          const TreatmentModels& models, WeightFamily family,
                          const std::vector<int>& time_range) {
  if (family != WeightFamily::unstabilized_U && family != models.family) {
    throw std::invalid_argument(
        "compute_weights: family does not match the fitted numerators (" +
        family_name(models.family) + ")");
  }
  if (time_range.empty()) {
    throw std::invalid_argument("compute_weights: empty time range");
  }
  std::vector<int> times = time_range;
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  std::vector<const TreatmentTimeModel*> factors;
  for (const int t : times) {
    const TreatmentTimeModel* found = nullptr;
    for (const auto& tm : models.times) {
      if (tm.time == t) found = &tm;
    }
    if (!found) {
      throw std::invalid_argument("compute_weights: models do not cover time " +
                                  std::to_string(t));
    }
    factors.push_back(found);
  }

  WeightSet ws;
  ws.family = times.size() < models.times.size() ? WeightFamily::partial : family;
  ws.time_range = times;
  ws.values.assign(data.n(), kNaN);
  const std::vector<char> avail = data.uncensored_through(times.back());
  long clamped = 0;
  for (int i = 0; i < data.n(); ++i) {
    if (!avail[i]) continue;
    double v = 1.0;
    for (const TreatmentTimeModel* tm : factors) {
      const bool treated = data.waves[tm->time].treatment[i] == 1.0;
      const double pd =
          clamp_prob(treated ? tm->p_denom[i] : 1.0 - tm->p_denom[i], clamped);
      const double pn = family == WeightFamily::unstabilized_U
                            ? 1.0
                            : (treated ? tm->p_num[i] : 1.0 - tm->p_num[i]);
      v *= pn / pd;
    }
    ws.values[i] = v;
  }
  warn_clamped(clamped, "treatment");
  return ws;
}

CensoringModels fit_censoring_models(const PanelDataset& data,
                                     const DesignSpec& spec) {
  CensoringModels models;
  const int n = data.n();
  for (int t = 1; t < data.time_points(); ++t) {
    const std::vector<char> at_risk = data.uncensored_through(t - 1);
    const std::vector<int> subjects = mask_to_subjects(at_risk);
    const int m = static_cast<int>(subjects.size());
    if (m == 0) continue;
    Eigen::VectorXd y(m);  // 1 = remains uncensored
    int events = 0;
    for (int r = 0; r < m; ++r) {
      const int c = data.waves[t].censored[subjects[r]];
      y(r) = c == 0 ? 1.0 : 0.0;
      events += c;
    }
    if (events == 0) continue;
    if (events == m) {
      throw DataError("fit_censoring_models: all subjects censored at time " +
                      std::to_string(t));
    }

    CensoringTimeModel cm;
    cm.time = t;
    const EncodedWave hist = history_design(data, t - 1, t - 1, subjects);
    const DesignMatrix dm = build_design(hist.columns, hist.column_names, spec);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m);
    Eigen::VectorXd pd;
    try {
      cm.denominator = fit_weighted_logistic(dm.X, y, ones, dm.column_names);
      cm.denominator.dropped_columns = dm.dropped_columns;
      pd = predict_proba(cm.denominator, dm.X);
    } catch (const NumericError& e) {
      throw NumericError("censoring model at time " + std::to_string(t) + ": " +
                         e.what());
    }
    cm.p_num = y.mean();
    cm.numerator = intercept_only_fit(cm.p_num);
    cm.p_denom.assign(n, kNaN);
    for (int r = 0; r < m; ++r) cm.p_denom[subjects[r]] = pd(r);
    models.times.push_back(std::move(cm));
  }
  if (models.times.empty()) {
    throw DataError(
        "fit_censoring_models: no censoring observed at any time-point; "
        "censoring weights are unneeded, use treatment-only weights");
  }
  return models;
}

WeightSet compute_censoring_weights(const PanelDataset& data,
                                    const CensoringModels& models,
                                    const std::vector<int>& time_range) {
  if (time_range.empty()) {
    throw std::invalid_argument("compute_censoring_weights: empty time range");
  }
  std::vector<int> times = time_range;
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  std::vector<const CensoringTimeModel*> factors;
  for (const int t : times) {
    const CensoringTimeModel* found = nullptr;
    for (const auto& cm : models.times) {
      if (cm.time == t) found = &cm;
    }
    if (!found) {
      throw std::invalid_argument(
          "compute_censoring_weights: models do not cover time " +
          std::to_string(t));
    }
    factors.push_back(found);
  }

  WeightSet ws;
  ws.family = WeightFamily::censoring_WC;
  ws.time_range = times;
  ws.values.assign(data.n(), kNaN);
  const std::vector<char> avail = data.uncensored_through(times.back());
  long clamped = 0;
  for (int i = 0; i < data.n(); ++i) {
    if (!avail[i]) continue;
    double v = 1.0;
    for (const CensoringTimeModel* cm : factors) {
      v *= cm->p_num / clamp_prob(cm->p_denom[i], clamped);
    }
    ws.values[i] = v;
  }
  warn_clamped(clamped, "censoring");
  return ws;
}

WeightSet combine_weights(const WeightSet& wa, const WeightSet& wc) {
  if (wa.values.size() != wc.values.size()) {
    throw std::invalid_argument("combine_weights: subject index mismatch");
  }
  if (wa.family != WeightFamily::treatment_WA &&
      wa.family != WeightFamily::marginal_W &&
      wa.family != WeightFamily::partial) {
    throw std::invalid_argument(
        "combine_weights: first argument must be a treatment weight set");
  }
  if (wc.family != WeightFamily::censoring_WC) {
    throw std::invalid_argument(
        "combine_weights: second argument must be a censoring weight set");
  }
  WeightSet out;
  out.family = WeightFamily::combined_WAC;
  out.values.resize(wa.values.size());
  for (std::size_t i = 0; i < wa.values.size(); ++i) {
    out.values[i] = wa.values[i] * wc.values[i];
  }
  std::set<int> times(wa.time_range.begin(), wa.time_range.end());
  times.insert(wc.time_range.begin(), wc.time_range.end());
  out.time_range.assign(times.begin(), times.end());
  return out;
}

double quantile_type7(std::vector<double> x, double p) {
  if (p < 0.0 || p > 1.0) {
    throw std::invalid_argument("quantile_type7: p outside [0, 1]");
  }
  x.erase(std::remove_if(x.begin(), x.end(),
                         [](double v) { return std::isnan(v); }),
          x.end());
  if (x.empty()) throw std::invalid_argument("quantile_type7: no values");
  std::sort(x.begin(), x.end());
  const double h = (static_cast<double>(x.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= x.size()) return x.back();
  return x[lo] + (h - static_cast<double>(lo)) * (x[lo + 1] - x[lo]);
}

WeightSet truncate_weights(const WeightSet& w, double percentile) {
  if (!(percentile > 0.0) || percentile > 1.0) {
    throw std::invalid_argument("truncate_weights: percentile outside (0, 1]");
  }
  // The truncation record makes re-application at the same percentile a no-op
  // (re-estimating the quantile on clipped values would drift downward).
  if (w.truncation && w.truncation->percentile == percentile) return w;
  WeightSet out = w;
  const double cutoff = quantile_type7(w.values, percentile);
  for (double& v : out.values) {
    if (!std::isnan(v) && v > cutoff) v = cutoff;
  }
  out.truncation = Truncation{percentile, cutoff};
  return out;
}

double weight_mean(const WeightSet& w) {
  double sum = 0.0;
  long count = 0;
  for (const double v : w.values) {
    if (!std::isnan(v)) {
      sum += v;
      ++count;
    }
  }
  return count > 0 ? sum / static_cast<double>(count) : kNaN;
}

}  // namespace bg
