#include <doctest.h>

#include "balancegauge/common.hpp"
#include "balancegauge/dgp.hpp"
#include "balancegauge/eval.hpp"
#include "balancegauge/glm.hpp"

#include "helpers.hpp"

#include <json.hpp>

#include <cmath>
#include <string>
#include <vector>

using namespace bg;
using nlohmann::json;

namespace {

double mean_of(const std::vector<double>& x) {
  double s = 0;
  long m = 0;
  for (double v : x) {
    if (std::isnan(v)) continue;
    s += v;
    ++m;
  }
  return s / static_cast<double>(m);
}

double col_mean(const Eigen::MatrixXd& m, int j) {
  double s = 0;
  long cnt = 0;
  for (int i = 0; i < m.rows(); ++i) {
    if (std::isnan(m(i, j))) continue;
    s += m(i, j);
    ++cnt;
  }
  return s / static_cast<double>(cnt);
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  const long n = static_cast<long>(a.size());
  for (long i = 0; i < n; ++i) {
    sa += a[i];
    sb += b[i];
    saa += a[i] * a[i];
    sbb += b[i] * b[i];
    sab += a[i] * b[i];
  }
  const double cov = sab / n - sa / n * sb / n;
  return cov / std::sqrt((saa / n - sa / n * sa / n) * (sbb / n - sb / n * sb / n));
}

void check_golden(const json& g, const std::string& key, double value) {
  CAPTURE(key);
  const double want = g[key]["value"].get<double>();
  const double tol = g[key]["tol"].get<double>();
  CHECK(std::fabs(value - want) <= tol);
}

}  // namespace

TEST_CASE("generator moments match the frozen goldens") {
  const json g = bgtest::load_fixture("dgp_goldens.json");
  const int n = static_cast<int>(g["n_moments"]["value"].get<double>());

  ScenarioConfig base = builtin_scenario("1");
  base.n = n;
  PanelDataset d = generate_scenario(base, 20250815);
  REQUIRE(d.n() == n);
  REQUIRE(d.time_points() == 2);

  // Schema order: L, M, N, O, P, Q.
  std::vector<double> L0(n), L1(n), O0(n);
  for (int i = 0; i < n; ++i) {
    L0[i] = d.waves[0].covariates(i, 0);
    L1[i] = d.waves[1].covariates(i, 0);
    O0[i] = d.waves[0].covariates(i, 3);
  }

  check_golden(g, "treated_frac_t0", mean_of(d.waves[0].treatment));
  check_golden(g, "treated_frac_t1", mean_of(d.waves[1].treatment));
  check_golden(g, "outcome_prev", mean_of(d.outcome));
  check_golden(g, "mean_L0", col_mean(d.waves[0].covariates, 0));
  {
    double s2 = 0;
    const double mu = col_mean(d.waves[0].covariates, 0);
    for (int i = 0; i < n; ++i) s2 += (L0[i] - mu) * (L0[i] - mu);
    check_golden(g, "sd_L0", std::sqrt(s2 / (n - 1)));
  }
  check_golden(g, "mean_M0", col_mean(d.waves[0].covariates, 1));
  check_golden(g, "mean_O0", col_mean(d.waves[0].covariates, 3));
  check_golden(g, "mean_P0", col_mean(d.waves[0].covariates, 4));
  check_golden(g, "mean_Q0", col_mean(d.waves[0].covariates, 5));
  check_golden(g, "mean_Q1", col_mean(d.waves[1].covariates, 5));
  check_golden(g, "corr_O0_L0", correlation(O0, L0));
  check_golden(g, "corr_L0_L1", correlation(L0, L1));
  {
    double s1 = 0, s0 = 0;
    long n1 = 0, n0 = 0;
    for (int i = 0; i < n; ++i) {
      if (d.waves[0].treatment[i] == 1.0) {
        s1 += L1[i];
        ++n1;
      } else {
        s0 += L1[i];
        ++n0;
      }
    }
    check_golden(g, "mean_L1_diff_by_A0", s1 / n1 - s0 / n0);
  }

  ScenarioConfig cb = builtin_scenario("censored_base");
  cb.n = n;
  PanelDataset dc = generate_scenario(cb, 20250815);
  double cfrac = 0;
  for (int i = 0; i < n; ++i) cfrac += dc.waves[1].censored[i];
  check_golden(g, "censor_frac_t1", cfrac / n);
  check_golden(g, "censored_outcome_prev", mean_of(dc.outcome));
}

TEST_CASE("truth oracle matches the frozen counterfactual fit") {
  const json g = bgtest::load_fixture("dgp_goldens.json");
  MsmTruth truth = truth_oracle(builtin_scenario("1"), 300000, 20250815);
  check_golden(g, "truth_beta0", truth.beta0);
  check_golden(g, "truth_beta1", truth.beta1);
  check_golden(g, "truth_beta2", truth.beta2);
  CHECK(truth.oracle_n == 300000);
  CHECK(truth.or1() == doctest::Approx(std::exp(truth.beta1)).epsilon(1e-12));
  CHECK(truth.or2() == doctest::Approx(std::exp(truth.beta2)).epsilon(1e-12));
}

TEST_CASE("counterfactual draws are consistent with the observed panel") {
  ScenarioConfig config = builtin_scenario("1");
  config.n = 3000;
  const std::uint64_t seed = 99;
  PanelDataset obs = generate_scenario(config, seed, 4);

  for (int a0 = 0; a0 <= 1; ++a0) {
    for (int a1 = 0; a1 <= 1; ++a1) {
      PanelDataset cf = generate_counterfactual(config, seed, 4, a0, a1);
      REQUIRE(cf.n() == config.n);
      int matched = 0;
      for (int i = 0; i < config.n; ++i) {
        // Baseline covariates never depend on treatment.
        for (int j = 0; j < 6; ++j) {
          CHECK(cf.waves[0].covariates(i, j) == obs.waves[0].covariates(i, j));
        }
        if (obs.waves[0].treatment[i] != a0 || obs.waves[1].treatment[i] != a1)
          continue;
        ++matched;
        // Subjects whose observed path equals the forced one reproduce their
        // follow-up covariates and outcome exactly.
        for (int j = 0; j < 6; ++j) {
          CHECK(cf.waves[1].covariates(i, j) == obs.waves[1].covariates(i, j));
        }
        CHECK(cf.outcome[i] == obs.outcome[i]);
      }
      CHECK(matched > 100);
    }
  }

  CHECK_THROWS_AS(generate_counterfactual(config, seed, 4, 2, 0),
                  std::invalid_argument);
}

TEST_CASE("generation is deterministic in seed and replicate") {
  ScenarioConfig config = builtin_scenario("1");
  config.n = 500;
  PanelDataset a = generate_scenario(config, 7, 2);
  PanelDataset b = generate_scenario(config, 7, 2);
  PanelDataset c = generate_scenario(config, 7, 3);

  bool all_equal = true, any_diff = false;
  for (int t = 0; t < 2; ++t) {
    for (int i = 0; i < config.n; ++i) {
      if (a.waves[t].treatment[i] != b.waves[t].treatment[i]) all_equal = false;
      if (a.waves[t].covariates(i, 0) != b.waves[t].covariates(i, 0))
        all_equal = false;
      if (a.waves[t].covariates(i, 0) != c.waves[t].covariates(i, 0))
        any_diff = true;
    }
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("censored scenarios censor monotonically and mask cells") {
  ScenarioConfig config = builtin_scenario("censored_base");
  config.n = 2000;
  PanelDataset d = generate_scenario(config, 13);
  int censored = 0;
  for (int i = 0; i < config.n; ++i) {
    CHECK(d.waves[0].censored[i] == 0);
    if (d.waves[1].censored[i] == 1) {
      ++censored;
      CHECK(std::isnan(d.waves[1].treatment[i]));
      CHECK(std::isnan(d.waves[1].covariates(i, 2)));
      CHECK(std::isnan(d.outcome[i]));
    } else {
      CHECK_FALSE(std::isnan(d.waves[1].treatment[i]));
      CHECK_FALSE(std::isnan(d.outcome[i]));
    }
  }
  CHECK(censored > 0.1 * config.n);
  CHECK(censored < 0.3 * config.n);
}

TEST_CASE("builtin scenarios and JSON round-trips") {
  for (const std::string id : {"1", "2", "3", "4", "5", "6", "7", "8", "9",
                               "10", "censored_base"}) {
    ScenarioConfig c = builtin_scenario(id);
    CHECK(c.id == id);
    ScenarioConfig back = scenario_from_json(scenario_to_json(c));
    CHECK(back.id == c.id);
    CHECK(back.n == c.n);
    CHECK(back.alpha0 == c.alpha0);
    CHECK(back.alpha1 == c.alpha1);
    CHECK(back.alphaY == c.alphaY);
    CHECK(back.phi0.O == c.phi0.O);
    CHECK(back.betaY.Z == c.betaY.Z);
    CHECK(back.gamma == c.gamma);
    CHECK(back.q1_prev == c.q1_prev);
    CHECK(back.censor.has_value() == c.censor.has_value());
    if (c.censor) {
      CHECK(back.censor->mu1 == c.censor->mu1);
      CHECK(back.censor->lambda == c.censor->lambda);
    }
  }
  CHECK(builtin_scenario("3").n == 1000);
  CHECK(builtin_scenario("5").theta == 0.0);
  CHECK_THROWS_WITH_AS(builtin_scenario("99"), doctest::Contains("censored_base"),
                       DataError);
  CHECK_THROWS_AS(scenario_from_json("{\"bogus_field\": 1}"), DataError);
  CHECK_THROWS_AS(scenario_from_json("not json"), DataError);
}

TEST_CASE("estimate_msm equals a direct weighted fit on the history design") {
  ScenarioConfig config = builtin_scenario("1");
  config.n = 1500;
  PanelDataset d = generate_scenario(config, 21);
  WeightSet w = unit_weights(d.n());
  MsmEstimate est = estimate_msm(d, w);
  CHECK(est.converged);
  CHECK(est.rows == d.n());

  Eigen::MatrixXd X(d.n(), 3);
  Eigen::VectorXd y(d.n()), wv = Eigen::VectorXd::Ones(d.n());
  for (int i = 0; i < d.n(); ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = d.waves[0].treatment[i];
    X(i, 2) = d.waves[1].treatment[i];
    y(i) = d.outcome[i];
  }
  GlmFit direct = fit_weighted_logistic(X, y, wv);
  CHECK(est.beta0 == doctest::Approx(direct.coefficients(0)).epsilon(1e-12));
  CHECK(est.beta1 == doctest::Approx(direct.coefficients(1)).epsilon(1e-12));
  CHECK(est.beta2 == doctest::Approx(direct.coefficients(2)).epsilon(1e-12));
}

TEST_CASE("estimate_msm keeps only rows with outcome and weight") {
  ScenarioConfig config = builtin_scenario("censored_base");
  config.n = 1200;
  PanelDataset d = generate_scenario(config, 23);
  long complete = 0;
  for (int i = 0; i < d.n(); ++i) complete += d.waves[1].censored[i] == 0;

  MsmEstimate est = estimate_msm(d, unit_weights(d.n()));
  CHECK(est.rows == complete);

  // Knocking out weights removes rows too; too few rows is an error.
  WeightSet w = unit_weights(d.n());
  for (int i = 0; i < d.n() - 2; ++i) w.values[i] = std::nan("");
  CHECK_THROWS_WITH_AS(estimate_msm(d, w),
                       doctest::Contains("too few rows"), DataError);
}

TEST_CASE("odds-ratio errors and bias conventions") {
  MsmEstimate est;
  est.beta1 = std::log(0.5);
  est.beta2 = std::log(2.0);
  MsmTruth truth;  // beta1 = beta2 = 0 so both true ORs are 1
  const auto errs = or_errors(est, truth);
  CHECK(errs[0] == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(errs[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(bias(est, truth) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(bias(est, truth, BiasAggregation::signed_mean) ==
        doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("run_replicates produces the full record grid deterministically") {
  ScenarioConfig config = builtin_scenario("1");
  config.n = 600;
  RunOptions opt;
  opt.reps = 2;
  opt.seed = 5;
  opt.truth_n = 5000;

  CampaignResult r1 = run_replicates(config, opt);
  CHECK(r1.failures.empty());
  // reps x specs x regimes x metrics.
  CHECK(r1.records.size() == 2 * 2 * 6 * 8);
  CHECK(r1.summaries.size() == 2 * 2 * 6);
  CHECK(std::isnan(r1.censor_fraction_mean));

  SUBCASE("worker count does not change any value") {
    RunOptions opt3 = opt;
    opt3.jobs = 3;
    CampaignResult r3 = run_replicates(config, opt3);
    REQUIRE(r3.records.size() == r1.records.size());
    for (std::size_t i = 0; i < r1.records.size(); ++i) {
      const auto& a = r1.records[i];
      const auto& b = r3.records[i];
      CHECK(a.rep == b.rep);
      CHECK(a.ps_spec == b.ps_spec);
      CHECK(a.regime == b.regime);
      CHECK(a.metric == b.metric);
      const auto same = [](double x, double y) {
        return (std::isnan(x) && std::isnan(y)) || x == y;
      };
      CHECK(same(a.bal_a0x0, b.bal_a0x0));
      CHECK(same(a.bal_a1x0, b.bal_a1x0));
      CHECK(same(a.bal_a1x1, b.bal_a1x1));
      CHECK(same(a.bias, b.bias));
    }
  }
  SUBCASE("regime and metric filters restrict the grid") {
    RunOptions f = opt;
    f.regimes = {"W1"};
    f.metrics = {Metric::D};
    CampaignResult rf = run_replicates(config, f);
    CHECK(rf.records.size() == 2 * 2 * 1 * 1);
    for (const auto& rec : rf.records) {
      CHECK(rec.regime == "W1");
      CHECK(rec.metric == "D");
    }
    f.regimes = {"W9"};
    CHECK_THROWS_AS(run_replicates(config, f), DataError);
    RunOptions zero = opt;
    zero.reps = 0;
    CHECK_THROWS_AS(run_replicates(config, zero), std::invalid_argument);
  }
  SUBCASE("archive and summary files round-trip") {
    bgtest::TempDir dir("dgp");
    write_archive_csv(r1, dir.file("archive.csv"));
    write_summaries_csv(r1, dir.file("summaries.csv"));

    const auto records = read_archive_csv(dir.file("archive.csv"));
    REQUIRE(records.size() == r1.records.size());
    CHECK(records[0].rep == r1.records[0].rep);
    CHECK(records[0].metric == r1.records[0].metric);
    CHECK(records[0].bias == doctest::Approx(r1.records[0].bias).epsilon(1e-12));

    const std::string line =
        bgtest::read_file(dir.file("summaries.csv")).substr(0, 60);
    CHECK(line.rfind("rep,ps_spec,regime,converged,beta0,beta1,beta2", 0) == 0);
  }
}

TEST_CASE("censored campaigns report the mean censoring fraction") {
  ScenarioConfig config = builtin_scenario("censored_base");
  config.n = 800;
  RunOptions opt;
  opt.reps = 2;
  opt.seed = 9;
  opt.truth_n = 4000;
  opt.metrics = {Metric::SMD};
  opt.regimes = {"unweighted", "W0xW1"};
  CampaignResult r = run_replicates(config, opt);
  CHECK(r.censor_fraction_mean == doctest::Approx(0.20).epsilon(0.25));
  CHECK(r.records.size() == 2 * 2 * 2 * 1);
}
