#include "balancegauge/dgp.hpp"

#include "balancegauge/common.hpp"
#include "balancegauge/csv.hpp"
#include "balancegauge/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>
#include <utility>

namespace bg {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kNSd = 10.0;  // N_t is N(., 10) with 10 read as an SD

// Stream keys. Forced-treatment runs reuse the x0/x1/y streams and skip the
// decision stages, so a subject's exogenous noise is shared between the
// observed panel and any counterfactual variant of it.
constexpr std::uint64_t kPurposePanel = 0;
constexpr std::uint64_t kPurposeTruth = 1;
constexpr std::uint64_t kStageX0 = 0;
constexpr std::uint64_t kStageA0 = 1;
constexpr std::uint64_t kStageC1 = 2;
constexpr std::uint64_t kStageX1 = 3;
constexpr std::uint64_t kStageA1 = 4;
constexpr std::uint64_t kStageY = 5;

struct Frame {
  std::vector<double> L, M, N, O, P, Q;  // observed covariates
  std::vector<double> T, R, V, Z;        // derived terms, never exported

  void resize(long n) {
    L.resize(n); M.resize(n); N.resize(n);
    O.resize(n); P.resize(n); Q.resize(n);
  }
};

void derive(Frame& f) {
  const std::size_t n = f.L.size();
  f.T.resize(n);
  f.R.resize(n);
  f.V.resize(n);
  f.Z.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    f.T[i] = std::sin(f.L[i]);
    f.R[i] = f.M[i] * f.M[i];
    f.V[i] = f.N[i] * f.O[i];
    f.Z[i] = f.O[i] * f.P[i];
  }
}

double dot(const CovariateCoeffs& c, const Frame& f, std::size_t i) {
  return c.L * f.L[i] + c.M * f.M[i] + c.N * f.N[i] + c.O * f.O[i] +
         c.P * f.P[i] + c.Q * f.Q[i] + c.T * f.T[i] + c.R * f.R[i] +
         c.V * f.V[i] + c.Z * f.Z[i];
}

std::vector<double> cumulative(const std::array<double, 5>& prev) {
  std::vector<double> cum(prev.begin(), prev.end());
  std::partial_sum(cum.begin(), cum.end(), cum.begin());
  return cum;
}

// Draw order within a stage is covariate-major (all L, then all M, ...), so
// per-subject noise stays aligned when n is fixed.
Frame draw_x0(Stream& s, long n, const ScenarioConfig& c) {
  Frame f;
  f.resize(n);
  for (long i = 0; i < n; ++i) f.L[i] = s.normal();
  for (long i = 0; i < n; ++i) f.M[i] = std::exp(s.normal());
  for (long i = 0; i < n; ++i) f.N[i] = s.normal(0.0, kNSd);
  for (long i = 0; i < n; ++i)
    f.O[i] = s.bernoulli(expit(c.delta0 + 2.0 * f.L[i])) ? 1.0 : 0.0;
  for (long i = 0; i < n; ++i) f.P[i] = s.bernoulli(0.2) ? 1.0 : 0.0;
  const std::vector<double> cum = cumulative(c.q0_prev);
  for (long i = 0; i < n; ++i) f.Q[i] = static_cast<double>(s.ordinal(cum));
  derive(f);
  return f;
}

Frame draw_x1(Stream& s, const ScenarioConfig& c, const Frame& x0,
              const std::vector<double>& a0) {
  const long n = static_cast<long>(a0.size());
  const double b = c.beta_ar;
  const auto& g = c.gamma;
  Frame f;
  f.resize(n);
  for (long i = 0; i < n; ++i)
    f.L[i] = b * x0.L[i] + g[0] * a0[i] + s.normal();
  for (long i = 0; i < n; ++i)
    f.M[i] = std::exp(b * x0.M[i] + g[1] * a0[i] + s.normal());
  for (long i = 0; i < n; ++i)
    f.N[i] = b * x0.N[i] + g[2] * a0[i] + s.normal(0.0, kNSd);
  for (long i = 0; i < n; ++i) {
    const double lp = c.delta1 + b * x0.O[i] + 2.0 * f.L[i] + g[3] * a0[i];
    f.O[i] = s.bernoulli(expit(lp)) ? 1.0 : 0.0;
  }
  for (long i = 0; i < n; ++i) {
    const double lp = c.mu0 + b * x0.P[i] + g[4] * a0[i];
    f.P[i] = s.bernoulli(expit(lp)) ? 1.0 : 0.0;
  }
  const std::vector<double> cum = cumulative(c.q1_prev);
  for (long i = 0; i < n; ++i) f.Q[i] = static_cast<double>(s.ordinal(cum));
  derive(f);
  return f;
}

std::vector<double> draw_y(Stream& s, const ScenarioConfig& c, const Frame& x0,
                           const Frame& x1, const std::vector<double>& a0,
                           const std::vector<double>& a1) {
  const std::size_t n = a0.size();
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lp = c.alphaY + dot(c.betaY, x0, i) + dot(c.betaY, x1, i) +
                      c.betaA0 * a0[i] + c.betaA1 * a1[i];
    y[i] = s.bernoulli(expit(lp)) ? 1.0 : 0.0;
  }
  return y;
}

std::vector<CovariateSpec> panel_schema() {
  return {
      {"L", CovariateKind::continuous, Encoding::numeric_score, {}},
      {"M", CovariateKind::continuous, Encoding::numeric_score, {}},
      {"N", CovariateKind::continuous, Encoding::numeric_score, {}},
      {"O", CovariateKind::binary, Encoding::numeric_score, {0.0, 1.0}},
      {"P", CovariateKind::binary, Encoding::numeric_score, {0.0, 1.0}},
      {"Q", CovariateKind::ordinal, Encoding::numeric_score,
       {1.0, 2.0, 3.0, 4.0, 5.0}},
  };
}

Eigen::MatrixXd frame_matrix(const Frame& f) {
  const long n = static_cast<long>(f.L.size());
  Eigen::MatrixXd m(n, 6);
  for (long i = 0; i < n; ++i) {
    m(i, 0) = f.L[i];
    m(i, 1) = f.M[i];
    m(i, 2) = f.N[i];
    m(i, 3) = f.O[i];
    m(i, 4) = f.P[i];
    m(i, 5) = f.Q[i];
  }
  return m;
}

PanelDataset assemble(const Frame& x0, std::vector<double> a0,
                      const std::vector<int>& c1, const Frame& x1,
                      std::vector<double> a1, std::vector<double> y) {
  const long n = static_cast<long>(a0.size());
  PanelDataset d;
  d.schema = panel_schema();
  d.ids.reserve(n);
  for (long i = 0; i < n; ++i) d.ids.push_back(std::to_string(i + 1));

  Wave w0;
  w0.treatment = std::move(a0);
  w0.censored.assign(n, 0);
  w0.covariates = frame_matrix(x0);

  Wave w1;
  w1.treatment = std::move(a1);
  w1.censored = c1;
  w1.covariates = frame_matrix(x1);
  for (long i = 0; i < n; ++i) {
    if (c1[i]) {
      w1.treatment[i] = kNaN;
      w1.covariates.row(i).setConstant(kNaN);
      y[i] = kNaN;
    }
  }

  d.waves = {std::move(w0), std::move(w1)};
  d.outcome = std::move(y);
  return d;
}

void validate_config(const ScenarioConfig& c) {
  if (c.n < 2) throw DataError("scenario n must be at least 2");
  for (const auto& prev : {c.q0_prev, c.q1_prev}) {
    double sum = 0.0;
    for (double p : prev) {
      if (p < 0.0) throw DataError("ordinal prevalences must be nonnegative");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw DataError("ordinal prevalences must sum to 1");
  }
}

using ordered_json = nlohmann::ordered_json;

ordered_json coeffs_to_json(const CovariateCoeffs& c) {
  return ordered_json{{"L", c.L}, {"M", c.M}, {"N", c.N}, {"O", c.O},
                      {"P", c.P}, {"Q", c.Q}, {"T", c.T}, {"R", c.R},
                      {"V", c.V}, {"Z", c.Z}};
}

// A present coefficient object replaces the whole block; absent keys are 0.
CovariateCoeffs coeffs_from_json(const ordered_json& j,
                                 const std::string& where) {
  if (!j.is_object()) throw DataError(where + " must be an object");
  CovariateCoeffs c{0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  for (const auto& [key, value] : j.items()) {
    double* slot = nullptr;
    if (key == "L") slot = &c.L;
    else if (key == "M") slot = &c.M;
    else if (key == "N") slot = &c.N;
    else if (key == "O") slot = &c.O;
    else if (key == "P") slot = &c.P;
    else if (key == "Q") slot = &c.Q;
    else if (key == "T") slot = &c.T;
    else if (key == "R") slot = &c.R;
    else if (key == "V") slot = &c.V;
    else if (key == "Z") slot = &c.Z;
    else throw DataError("unknown coefficient '" + key + "' in " + where);
    *slot = value.get<double>();
  }
  return c;
}

template <std::size_t K>
std::array<double, K> array_from_json(const ordered_json& j,
                                      const std::string& where) {
  if (!j.is_array() || j.size() != K)
    throw DataError(where + " must be an array of length " +
                    std::to_string(K));
  std::array<double, K> out{};
  for (std::size_t i = 0; i < K; ++i) out[i] = j[i].get<double>();
  return out;
}

CovariateCoeffs phis(double L, double M, double N, double O, double P,
                     double Q, double T = 0, double R = 0, double V = 0,
                     double Z = 0) {
  return CovariateCoeffs{L, M, N, O, P, Q, T, R, V, Z};
}

}  // namespace

ScenarioConfig builtin_scenario(const std::string& id) {
  ScenarioConfig c;  // defaults are the base scenario
  c.id = id;
  if (id == "1") {
    // base
  } else if (id == "2") {
    c.alpha0 = -3.08;
    c.alpha1 = -3.37;
    c.alphaY = -5.1;
  } else if (id == "3") {
    c.n = 1000;  // base process at a small sample size
  } else if (id == "4") {
    c.alpha0 = -3.25;
    c.alpha1 = -2.93;
    c.phi0 = c.phi1 = phis(1, 1, 0.1, 2, 2, 0.4);
    c.alphaY = -0.75;
    c.betaY = phis(0, 0, 0, 0, 0, 0);
  } else if (id == "5") {
    c.alpha0 = -0.05;
    c.alpha1 = -0.2;
    c.phi0 = c.phi1 = phis(0.01, 0.01, 0.02, 0.02, 0.01, 0.01);
    c.gamma = {0, 0, 0, 0, 0};
    c.delta1 = -4.5;
    c.mu0 = 0.0;
    c.theta = 0.0;
    c.alphaY = -20.5;
    c.betaY = phis(1, 1, 0.1, 2, 2, 0.4);
    c.betaA0 = c.betaA1 = 0.0;
  } else if (id == "6") {
    c.alpha0 = -3.25;
    c.alpha1 = -2.95;
    c.phi0 = c.phi1 = phis(1, 1, 0.1, 2, 2, 0.4);
    c.theta = 0.0;
    c.alphaY = -4.07;
  } else if (id == "7") {
    c.theta = 0.0;
    c.alphaY = -3.1;
    c.betaY = phis(0.4, 0.03, 0.03, 0.75, 0.75, 0.2, 0.4, 0.02, 0.04, 0.5);
  } else if (id == "8") {
    c.alpha0 = -1.14;
    c.alpha1 = -1.5;
    c.phi0 = c.phi1 = phis(0.05, 0.05, 0.1, 0.5, 0.25, 0.4, 0.01, 0.02, 0.01, 0.1);
    c.mu0 = -1.08;
    c.alphaY = -3.1;
    c.betaY = phis(0.4, 0.03, 0.03, 0.75, 0.75, 0.2, 0.4, 0.02, 0.04, 0.5);
  } else if (id == "9") {
    c.alpha0 = -0.37;
    c.alpha1 = -0.59;
    c.phi0 = c.phi1 = phis(0.2, 0.03, 0.02, 0, 1.5, 0.01, 0.01, 0.02, 0, 0);
    c.mu0 = -1.08;
    c.alphaY = -2.0;
    c.betaY = phis(0.4, 0.03, 0.03, 0, 0.75, 0.2, 0.4, 0.02, 0, 0);
  } else if (id == "10") {
    c.alpha0 = -0.4;
    c.alpha1 = -0.6;
    c.phi0 = c.phi1 = phis(0.2, 0.03, 0.02, 0.5, 0.25, 0.01, 0.01, 0.02, 0.01, 0.1);
    c.delta1 = 1.21;
    c.mu0 = -1.08;
    c.alphaY = -2.0;
    c.betaY = phis(0.4, 0, 0.03, 0.75, 0.75, 0.2, 0.4, 0, 0.04, 0.5);
  } else if (id == "censored_base") {
    c.censor = CensoringConfig{};
  } else {
    throw DataError("unknown scenario id '" + id +
                    "' (expected 1..10 or censored_base)");
  }
  return c;
}

std::string scenario_to_json(const ScenarioConfig& c) {
  ordered_json j;
  j["id"] = c.id;
  j["n"] = c.n;
  j["delta0"] = c.delta0;
  j["alpha0"] = c.alpha0;
  j["phi0"] = coeffs_to_json(c.phi0);
  j["beta_ar"] = c.beta_ar;
  j["gamma"] = c.gamma;
  j["delta1"] = c.delta1;
  j["mu0"] = c.mu0;
  j["alpha1"] = c.alpha1;
  j["phi1"] = coeffs_to_json(c.phi1);
  j["theta"] = c.theta;
  j["alphaY"] = c.alphaY;
  j["betaY"] = coeffs_to_json(c.betaY);
  j["betaA0"] = c.betaA0;
  j["betaA1"] = c.betaA1;
  j["q0_prev"] = c.q0_prev;
  j["q1_prev"] = c.q1_prev;
  if (c.censor) {
    const CensoringConfig& cc = *c.censor;
    j["censor"] = ordered_json{{"mu1", cc.mu1},       {"muL", cc.muL},
                               {"muM", cc.muM},       {"muN", cc.muN},
                               {"muO", cc.muO},       {"muP", cc.muP},
                               {"muQ", cc.muQ},       {"lambda", cc.lambda}};
  } else {
    j["censor"] = nullptr;
  }
  return j.dump(2) + "\n";
}

ScenarioConfig scenario_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid scenario json: ") + e.what());
  }
  if (!j.is_object()) throw DataError("scenario json must be an object");
  ScenarioConfig c;  // base defaults; present keys override
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "id") c.id = value.get<std::string>();
      else if (key == "n") c.n = value.get<int>();
      else if (key == "delta0") c.delta0 = value.get<double>();
      else if (key == "alpha0") c.alpha0 = value.get<double>();
      else if (key == "phi0") c.phi0 = coeffs_from_json(value, "phi0");
      else if (key == "beta_ar") c.beta_ar = value.get<double>();
      else if (key == "gamma") c.gamma = array_from_json<5>(value, "gamma");
      else if (key == "delta1") c.delta1 = value.get<double>();
      else if (key == "mu0") c.mu0 = value.get<double>();
      else if (key == "alpha1") c.alpha1 = value.get<double>();
      else if (key == "phi1") c.phi1 = coeffs_from_json(value, "phi1");
      else if (key == "theta") c.theta = value.get<double>();
      else if (key == "alphaY") c.alphaY = value.get<double>();
      else if (key == "betaY") c.betaY = coeffs_from_json(value, "betaY");
      else if (key == "betaA0") c.betaA0 = value.get<double>();
      else if (key == "betaA1") c.betaA1 = value.get<double>();
      else if (key == "q0_prev")
        c.q0_prev = array_from_json<5>(value, "q0_prev");
      else if (key == "q1_prev")
        c.q1_prev = array_from_json<5>(value, "q1_prev");
      else if (key == "censor") {
        if (value.is_null()) {
          c.censor.reset();
        } else if (value.is_object()) {
          CensoringConfig cc;
          for (const auto& [ck, cv] : value.items()) {
            if (ck == "mu1") cc.mu1 = cv.get<double>();
            else if (ck == "muL") cc.muL = cv.get<double>();
            else if (ck == "muM") cc.muM = cv.get<double>();
            else if (ck == "muN") cc.muN = cv.get<double>();
            else if (ck == "muO") cc.muO = cv.get<double>();
            else if (ck == "muP") cc.muP = cv.get<double>();
            else if (ck == "muQ") cc.muQ = cv.get<double>();
            else if (ck == "lambda") cc.lambda = cv.get<double>();
            else throw DataError("unknown censoring field '" + ck + "'");
          }
          c.censor = cc;
        } else {
          throw DataError("censor must be null or an object");
        }
      } else {
        throw DataError("unknown scenario field '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid scenario json: ") + e.what());
  }
  validate_config(c);
  return c;
}

double MsmTruth::or1() const { return std::exp(beta1); }
double MsmTruth::or2() const { return std::exp(beta2); }

PanelDataset generate_scenario(const ScenarioConfig& config,
                               std::uint64_t seed, std::uint64_t replicate) {
  validate_config(config);
  const long n = config.n;

  Stream sx0(seed, kPurposePanel, replicate, kStageX0);
  const Frame x0 = draw_x0(sx0, n, config);

  Stream sa0(seed, kPurposePanel, replicate, kStageA0);
  std::vector<double> a0(n);
  for (long i = 0; i < n; ++i) {
    const double p = expit(config.alpha0 + dot(config.phi0, x0, i));
    a0[i] = sa0.bernoulli(p) ? 1.0 : 0.0;
  }

  std::vector<int> c1(n, 0);
  if (config.censor) {
    const CensoringConfig& cc = *config.censor;
    Stream sc1(seed, kPurposePanel, replicate, kStageC1);
    for (long i = 0; i < n; ++i) {
      const double lp = cc.mu1 + cc.muL * x0.L[i] + cc.muM * x0.M[i] +
                        cc.muN * x0.N[i] + cc.muO * x0.O[i] +
                        cc.muP * x0.P[i] + cc.muQ * x0.Q[i] +
                        cc.lambda * a0[i];
      c1[i] = sc1.bernoulli(expit(lp)) ? 1 : 0;
    }
  }

  // Post-baseline stages are drawn for every subject and masked afterwards,
  // keeping streams aligned with uncensored and counterfactual runs.
  Stream sx1(seed, kPurposePanel, replicate, kStageX1);
  const Frame x1 = draw_x1(sx1, config, x0, a0);

  Stream sa1(seed, kPurposePanel, replicate, kStageA1);
  std::vector<double> a1(n);
  for (long i = 0; i < n; ++i) {
    const double p =
        expit(config.alpha1 + dot(config.phi1, x1, i) + config.theta * a0[i]);
    a1[i] = sa1.bernoulli(p) ? 1.0 : 0.0;
  }

  Stream sy(seed, kPurposePanel, replicate, kStageY);
  std::vector<double> y = draw_y(sy, config, x0, x1, a0, a1);

  return assemble(x0, std::move(a0), c1, x1, std::move(a1), std::move(y));
}

PanelDataset generate_counterfactual(const ScenarioConfig& config,
                                     std::uint64_t seed,
                                     std::uint64_t replicate, int a0, int a1) {
  validate_config(config);
  if ((a0 != 0 && a0 != 1) || (a1 != 0 && a1 != 1))
    throw std::invalid_argument("forced treatments must be 0 or 1");
  const long n = config.n;

  Stream sx0(seed, kPurposePanel, replicate, kStageX0);
  const Frame x0 = draw_x0(sx0, n, config);
  const std::vector<double> fa0(n, static_cast<double>(a0));
  const std::vector<double> fa1(n, static_cast<double>(a1));

  Stream sx1(seed, kPurposePanel, replicate, kStageX1);
  const Frame x1 = draw_x1(sx1, config, x0, fa0);

  Stream sy(seed, kPurposePanel, replicate, kStageY);
  std::vector<double> y = draw_y(sy, config, x0, x1, fa0, fa1);

  const std::vector<int> c1(n, 0);
  return assemble(x0, fa0, c1, x1, fa1, std::move(y));
}

MsmTruth truth_oracle(const ScenarioConfig& config, long N,
                      std::uint64_t seed) {
  validate_config(config);
  if (N < 2) throw std::invalid_argument("oracle sample size must be >= 2");

  Stream sx0(seed, kPurposeTruth, 0, kStageX0);
  const Frame x0 = draw_x0(sx0, N, config);

  // The x1 and y streams are recreated per forced regime, so all four cells
  // share each subject's exogenous noise (common random numbers).
  Eigen::VectorXd ys(4 * N);
  Eigen::MatrixXd X(4 * N, 3);
  long row = 0;
  for (int a0 = 0; a0 <= 1; ++a0) {
    const std::vector<double> fa0(N, static_cast<double>(a0));
    Stream sx1(seed, kPurposeTruth, 0, kStageX1);
    const Frame x1 = draw_x1(sx1, config, x0, fa0);
    for (int a1 = 0; a1 <= 1; ++a1) {
      const std::vector<double> fa1(N, static_cast<double>(a1));
      Stream sy(seed, kPurposeTruth, 0, kStageY);
      const std::vector<double> y = draw_y(sy, config, x0, x1, fa0, fa1);
      for (long i = 0; i < N; ++i, ++row) {
        ys(row) = y[i];
        X(row, 0) = 1.0;
        X(row, 1) = static_cast<double>(a0);
        X(row, 2) = static_cast<double>(a1);
      }
    }
  }

  const Eigen::VectorXd w = Eigen::VectorXd::Ones(4 * N);
  const GlmFit fit =
      fit_weighted_logistic(X, ys, w, {"(Intercept)", "A_t0", "A_t1"});
  MsmTruth truth;
  truth.beta0 = fit.coefficients(0);
  truth.beta1 = fit.coefficients(1);
  truth.beta2 = fit.coefficients(2);
  truth.oracle_n = N;
  return truth;
}

MsmEstimate estimate_msm(const PanelDataset& data, const WeightSet& w) {
  if (static_cast<int>(w.values.size()) != data.n())
    throw std::invalid_argument("weight vector length does not match panel");
  std::vector<int> treat_times;
  for (int t = 0; t < data.time_points(); ++t)
    if (data.waves[t].treatment_present) treat_times.push_back(t);
  if (treat_times.empty())
    throw DataError("panel has no treatment time-points");

  std::vector<int> keep;
  for (int i = 0; i < data.n(); ++i) {
    if (!std::isfinite(data.outcome[i]) || !std::isfinite(w.values[i]))
      continue;
    bool ok = true;
    for (int t : treat_times)
      if (!std::isfinite(data.waves[t].treatment[i])) ok = false;
    if (ok) keep.push_back(i);
  }
  const long rows = static_cast<long>(keep.size());
  const long cols = 1 + static_cast<long>(treat_times.size());
  if (rows <= cols)
    throw DataError("too few rows with outcome and weight available");

  Eigen::MatrixXd X(rows, cols);
  Eigen::VectorXd y(rows), wv(rows);
  std::vector<std::string> names = {"(Intercept)"};
  for (int t : treat_times) names.push_back("A_t" + std::to_string(t));
  for (long r = 0; r < rows; ++r) {
    const int i = keep[r];
    X(r, 0) = 1.0;
    for (std::size_t c = 0; c < treat_times.size(); ++c)
      X(r, 1 + c) = data.waves[treat_times[c]].treatment[i];
    y(r) = data.outcome[i];
    wv(r) = w.values[i];
  }

  const GlmFit fit = fit_weighted_logistic(X, y, wv, names);
  MsmEstimate est;
  est.beta0 = fit.coefficients(0);
  est.beta1 = cols > 1 ? fit.coefficients(1) : 0.0;
  est.beta2 = cols > 2 ? fit.coefficients(2) : 0.0;
  est.converged = fit.converged;
  est.rows = rows;
  return est;
}

std::array<double, 2> or_errors(const MsmEstimate& estimate,
                                const MsmTruth& truth) {
  return {std::exp(estimate.beta1) - truth.or1(),
          std::exp(estimate.beta2) - truth.or2()};
}

double bias(const MsmEstimate& estimate, const MsmTruth& truth,
            BiasAggregation agg) {
  const std::array<double, 2> e = or_errors(estimate, truth);
  if (agg == BiasAggregation::signed_mean) return 0.5 * (e[0] + e[1]);
  return 0.5 * (std::abs(e[0]) + std::abs(e[1]));
}

namespace {

WeightSet product_set(const WeightSet& a, const WeightSet& b) {
  if (a.values.size() != b.values.size())
    throw std::invalid_argument("weight sets have different lengths");
  WeightSet r;
  r.family = WeightFamily::custom;
  r.values.resize(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i)
    r.values[i] = a.values[i] * b.values[i];  // NaN propagates
  r.time_range = a.time_range;
  r.time_range.insert(r.time_range.end(), b.time_range.begin(),
                      b.time_range.end());
  std::sort(r.time_range.begin(), r.time_range.end());
  r.time_range.erase(std::unique(r.time_range.begin(), r.time_range.end()),
                     r.time_range.end());
  return r;
}

// Complete-case unit weights: the unweighted regime under censoring analyzes
// the uncensored rows only.
WeightSet complete_case_units(const PanelDataset& data) {
  WeightSet w = unit_weights(data.n());
  const std::vector<char> alive =
      data.uncensored_through(data.time_points() - 1);
  for (int i = 0; i < data.n(); ++i)
    if (!alive[i]) w.values[i] = kNaN;
  return w;
}

struct SpecWeights {
  WeightSet w0, w1, w01;
  std::optional<WeightSet> wc;
};

SpecWeights fit_spec_weights(const PanelDataset& data, const DesignSpec& spec,
                             bool censored) {
  SpecWeights sw;
  const TreatmentModels tm =
      fit_treatment_models(data, spec, WeightFamily::marginal_W);
  sw.w0 = compute_weights(data, tm, WeightFamily::marginal_W, {0});
  sw.w1 = compute_weights(data, tm, WeightFamily::marginal_W, {1});
  sw.w01 = compute_weights(data, tm, WeightFamily::marginal_W, {0, 1});
  if (censored) {
    const CensoringModels cm = fit_censoring_models(data, spec);
    sw.wc = compute_censoring_weights(data, cm, {1});
  }
  return sw;
}

WeightSet regime_weights(const std::string& regime, const PanelDataset& data,
                         const SpecWeights& sw) {
  const bool cens = sw.wc.has_value();
  if (regime == "unweighted")
    return cens ? complete_case_units(data) : unit_weights(data.n());
  if (!cens) {
    if (regime == "W0xW1") return sw.w01;
    if (regime == "W1") return sw.w1;
    if (regime == "W0") return sw.w0;
    if (regime == "W0tr90xW1")
      return product_set(truncate_weights(sw.w0, 0.9), sw.w1);
    if (regime == "W0xW1tr90")
      return product_set(sw.w0, truncate_weights(sw.w1, 0.9));
  } else {
    // Every weighted regime carries the censoring factor; truncation of the
    // t=1 block applies to the combined treatment-by-censoring weight.
    const WeightSet w1c = combine_weights(sw.w1, *sw.wc);
    if (regime == "W0xW1") return combine_weights(sw.w01, *sw.wc);
    if (regime == "W1") return w1c;
    if (regime == "W0") return combine_weights(sw.w0, *sw.wc);
    if (regime == "W0tr90xW1")
      return product_set(truncate_weights(sw.w0, 0.9), w1c);
    if (regime == "W0xW1tr90")
      return product_set(sw.w0, truncate_weights(w1c, 0.9));
  }
  throw DataError("unknown regime '" + regime + "'");
}

double aggregate_value(const BalanceReport& report, int t, int k, Metric m) {
  for (const BalanceAggregate& a : report.aggregates)
    if (a.t == t && a.k == k && a.metric == m)
      return a.available ? a.value : kNaN;
  return kNaN;
}

struct RepOutput {
  std::vector<ReplicateRecord> records;
  std::vector<ReplicateSummary> summaries;
  std::vector<ReplicateFailure> failures;
  double censor_fraction = kNaN;
};

std::string csv_cell(double v) {
  return std::isfinite(v) ? format_double(v) : std::string();
}

}  // namespace

CampaignResult run_replicates(const ScenarioConfig& config,
                              const RunOptions& options) {
  validate_config(config);
  if (options.reps < 1) throw std::invalid_argument("reps must be positive");
  if (options.truth_n < 2)
    throw std::invalid_argument("truth sample size must be >= 2");
  std::vector<std::string> regimes = options.regimes;
  if (regimes.empty())
    regimes.assign(kRegimes.begin(), kRegimes.end());
  for (const std::string& r : regimes)
    if (std::find(kRegimes.begin(), kRegimes.end(), r) == kRegimes.end())
      throw DataError("unknown regime '" + r + "'");
  std::vector<Metric> metrics = options.metrics;
  if (metrics.empty()) metrics.assign(kAllMetrics.begin(), kAllMetrics.end());

  CampaignResult result;
  result.truth = truth_oracle(config, options.truth_n, options.seed);
  const bool censored = config.censor.has_value();

  const auto run_one = [&](long rep) {
    RepOutput out;
    PanelDataset data;
    try {
      data = generate_scenario(config, options.seed,
                               static_cast<std::uint64_t>(rep));
    } catch (const std::exception& e) {
      out.failures.push_back({rep, "generate", e.what()});
      return out;
    }
    if (censored) {
      const std::vector<int>& c1 = data.waves[1].censored;
      out.censor_fraction =
          std::accumulate(c1.begin(), c1.end(), 0.0) / data.n();
    }
    for (const auto& [spec_name, complexity] :
         {std::pair<const char*, Complexity>{"simple", Complexity::simple},
          std::pair<const char*, Complexity>{"complex", Complexity::complex}}) {
      SpecWeights sw;
      try {
        sw = fit_spec_weights(data, DesignSpec{{}, complexity}, censored);
      } catch (const std::exception& e) {
        out.failures.push_back({rep, spec_name, e.what()});
        continue;
      }
      for (const std::string& regime : regimes) {
        try {
          const WeightSet w = regime_weights(regime, data, sw);
          const BalanceReport report = balance_table(data, w, metrics);
          const MsmEstimate est = estimate_msm(data, w);
          const std::array<double, 2> errs = or_errors(est, result.truth);
          const double signed_bias = 0.5 * (errs[0] + errs[1]);

          ReplicateSummary summary;
          summary.rep = rep;
          summary.ps_spec = spec_name;
          summary.regime = regime;
          summary.converged = est.converged;
          summary.beta0 = est.beta0;
          summary.beta1 = est.beta1;
          summary.beta2 = est.beta2;
          summary.or1_err = errs[0];
          summary.or2_err = errs[1];
          out.summaries.push_back(std::move(summary));

          for (Metric m : metrics) {
            ReplicateRecord rec;
            rec.rep = rep;
            rec.ps_spec = spec_name;
            rec.regime = regime;
            rec.metric = metric_name(m);
            rec.bal_a0x0 = aggregate_value(report, 0, 0, m);
            rec.bal_a1x0 = aggregate_value(report, 1, 1, m);
            rec.bal_a1x1 = aggregate_value(report, 1, 0, m);
            rec.bias = signed_bias;
            out.records.push_back(std::move(rec));
          }
        } catch (const std::exception& e) {
          out.failures.push_back(
              {rep, spec_name, "regime " + regime + ": " + e.what()});
        }
      }
    }
    return out;
  };

  // Replicates are distributed over workers via an atomic counter and written
  // to preassigned slots, so assembled output is identical for any job count.
  std::vector<RepOutput> slots(options.reps);
  std::atomic<long> next{0};
  const auto worker = [&]() {
    for (;;) {
      const long rep = next.fetch_add(1);
      if (rep >= options.reps) break;
      slots[rep] = run_one(rep);
    }
  };
  const int jobs = std::max(1, options.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }

  double cfrac_sum = 0.0;
  long cfrac_n = 0;
  for (RepOutput& out : slots) {
    for (auto& r : out.records) result.records.push_back(std::move(r));
    for (auto& s : out.summaries) result.summaries.push_back(std::move(s));
    for (auto& f : out.failures) result.failures.push_back(std::move(f));
    if (std::isfinite(out.censor_fraction)) {
      cfrac_sum += out.censor_fraction;
      ++cfrac_n;
    }
  }
  result.censor_fraction_mean = cfrac_n > 0 ? cfrac_sum / cfrac_n : kNaN;
  return result;
}

void write_archive_csv(const CampaignResult& result, const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(result.records.size());
  for (const ReplicateRecord& r : result.records) {
    rows.push_back({std::to_string(r.rep), r.ps_spec, r.regime, r.metric,
                    csv_cell(r.bal_a0x0), csv_cell(r.bal_a1x0),
                    csv_cell(r.bal_a1x1), csv_cell(r.bias)});
  }
  write_csv(path,
            {"rep", "ps_spec", "regime", "metric", "bal_A0X0", "bal_A1X0",
             "bal_A1X1", "bias"},
            rows);
}

void write_summaries_csv(const CampaignResult& result,
                         const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(result.summaries.size());
  for (const ReplicateSummary& s : result.summaries) {
    rows.push_back({std::to_string(s.rep), s.ps_spec, s.regime,
                    s.converged ? "1" : "0", csv_cell(s.beta0),
                    csv_cell(s.beta1), csv_cell(s.beta2), csv_cell(s.or1_err),
                    csv_cell(s.or2_err)});
  }
  write_csv(path,
            {"rep", "ps_spec", "regime", "converged", "beta0", "beta1",
             "beta2", "or1_err", "or2_err"},
            rows);
}

}  // namespace bg
