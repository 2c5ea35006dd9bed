#include <doctest.h>

#include "helpers.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <string>
#include <sys/wait.h>

using nlohmann::json;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::string& args, const bgtest::TempDir& dir,
                  const std::string& env = "") {
  static int seq = 0;
  const std::string out_file = dir.file("stdout" + std::to_string(seq));
  const std::string err_file = dir.file("stderr" + std::to_string(seq));
  ++seq;
  const std::string cmd = env + (env.empty() ? "" : " ") + BG_CLI_PATH + " " +
                          args + " >" + out_file + " 2>" + err_file;
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = bgtest::read_file(out_file);
  r.err = bgtest::read_file(err_file);
  return r;
}

bool exists(const std::string& path) {
  return std::filesystem::exists(path);
}

}  // namespace

TEST_CASE("cli help and version exit cleanly") {
  bgtest::TempDir dir("cli");
  CHECK(run_cli("--help", dir).code == 0);
  CHECK(run_cli("--version", dir).code == 0);
  CHECK(run_cli("simulate --help", dir).code == 0);
}

TEST_CASE("usage errors exit 2") {
  bgtest::TempDir dir("cli");
  CHECK(run_cli("simulate", dir).code == 2);  // neither --scenario nor --config
  CHECK(run_cli("simulate --scenario 1 --reps 0", dir).code == 2);
  CHECK(run_cli("simulate --scenario 1 --bogus-flag", dir).code == 2);
  CHECK(run_cli("frobnicate", dir).code == 2);
  CHECK(run_cli("simulate --scenario 1 --jobs 0", dir).code == 2);
}

TEST_CASE("simulate then downstream subcommands") {
  bgtest::TempDir dir("cli");
  const std::string sim = dir.file("sim");
  RunResult r = run_cli(
      "simulate --scenario 1 --n 400 --reps 4 --truth-n 3000 --emit-panel "
      "--seed 42 --out " + sim, dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);

  for (const char* f : {"archive.csv", "summaries.csv", "summary.json",
                        "manifest.json", "warnings.log", "panel.csv",
                        "outcome.csv", "schema.json"}) {
    CAPTURE(f);
    CHECK(exists(sim + "/" + f));
  }

  const json summary = json::parse(bgtest::read_file(sim + "/summary.json"));
  CHECK(summary["scenario"] == "1");
  CHECK(summary["reps"] == 4);
  for (const char* key : {"beta0", "beta1", "beta2", "or1", "or2"}) {
    CAPTURE(key);
    CHECK(summary["truth"][key].is_number());
  }
  CHECK(summary["truth"]["oracle_n"] == 3000);
  CHECK(summary["failures"] == 0);

  const json manifest = json::parse(bgtest::read_file(sim + "/manifest.json"));
  CHECK(manifest["tool"] == "balancegauge");
  CHECK(manifest["seed"] == 42);

  // Archive: header + reps x specs x regimes x metrics rows.
  const std::string archive = bgtest::read_file(sim + "/archive.csv");
  const long lines = std::count(archive.begin(), archive.end(), '\n');
  CHECK(lines == 1 + 4 * 2 * 6 * 8);

  SUBCASE("the same seed reproduces the archive byte for byte") {
    const std::string sim2 = dir.file("sim2");
    REQUIRE(run_cli("simulate --scenario 1 --n 400 --reps 4 --truth-n 3000 "
                    "--emit-panel --seed 42 --out " + sim2, dir).code == 0);
    CHECK(bgtest::read_file(sim2 + "/archive.csv") == archive);
    CHECK(bgtest::read_file(sim2 + "/panel.csv") ==
          bgtest::read_file(sim + "/panel.csv"));
  }

  SUBCASE("a worker-count env var changes nothing in the data") {
    const std::string sim3 = dir.file("sim3");
    REQUIRE(run_cli("simulate --scenario 1 --n 400 --reps 4 --truth-n 3000 "
                    "--seed 42 --out " + sim3, dir,
                    "BALANCEGAUGE_THREADS=3").code == 0);
    CHECK(bgtest::read_file(sim3 + "/archive.csv") == archive);
  }

  SUBCASE("weights, balance and report consume the emitted panel") {
    const std::string panel_args = " --panel " + sim + "/panel.csv --outcome " +
                                   sim + "/outcome.csv --schema " + sim +
                                   "/schema.json";
    const std::string wdir = dir.file("w");
    RunResult wr = run_cli("weights" + panel_args +
                           " --family W --truncate 0.9 --out " + wdir, dir);
    REQUIRE_MESSAGE(wr.code == 0, wr.err);
    REQUIRE(exists(wdir + "/weights.csv"));
    const std::string wcsv = bgtest::read_file(wdir + "/weights.csv");
    CHECK(wcsv.rfind("id,family,value,truncated_at", 0) == 0);

    const std::string bdir = dir.file("b");
    RunResult br = run_cli("balance" + panel_args + " --weights " + wdir +
                           "/weights.csv --metrics SMD,MHB --out " + bdir, dir);
    REQUIRE_MESSAGE(br.code == 0, br.err);
    REQUIRE(exists(bdir + "/balance.csv"));
    REQUIRE(exists(bdir + "/balance.json"));
    // Cells nest as t -> k -> metric -> covariate; only the two requested
    // metrics may appear.
    const json bal = json::parse(bgtest::read_file(bdir + "/balance.json"));
    for (const auto& [t, by_k] : bal["cells"].items()) {
      (void)t;
      for (const auto& [k, by_metric] : by_k.items()) {
        (void)k;
        for (const auto& [m, covs] : by_metric.items()) {
          CHECK((m == "SMD" || m == "MHB"));
          CHECK(covs.size() >= 1);
        }
      }
    }

    const std::string rdir = dir.file("r");
    RunResult rr = run_cli("report" + panel_args +
                           " --t 1 --k 0 --covariates L --out " + rdir, dir);
    REQUIRE_MESSAGE(rr.code == 0, rr.err);
    CHECK(exists(rdir + "/ecdf_t1_k0_L.csv"));
    CHECK(exists(rdir + "/density_t1_k0_L.csv"));

    RunResult rnone = run_cli("report" + panel_args +
                              " --t 1 --k 0 --covariates NOPE --out " +
                              dir.file("r2"), dir);
    CHECK(rnone.code == 3);
  }

  SUBCASE("evaluate ranks the archive") {
    const std::string edir = dir.file("e");
    // Four replicates give 24 rows per metric, enough for an identified fit.
    RunResult er = run_cli("evaluate --archive " + sim + " --out " + edir, dir);
    REQUIRE_MESSAGE(er.code == 0, er.err);
    REQUIRE(exists(edir + "/eval.csv"));
    CHECK(er.out.find("R2=") != std::string::npos);
    const std::string eval_csv = bgtest::read_file(edir + "/eval.csv");
    CHECK(eval_csv.rfind("scenario,ps_spec,metric,r2,intercept", 0) == 0);
    // 8 metrics x 2 specs rows.
    CHECK(std::count(eval_csv.begin(), eval_csv.end(), '\n') == 1 + 16);
  }
}

TEST_CASE("data errors exit 3 with source context") {
  bgtest::TempDir dir("cli");
  std::ofstream(dir.file("p.csv")) << "id,time,censored,treatment,L\n"
                                      "s1,0,0,3,0.5\n";
  std::ofstream(dir.file("y.csv")) << "id,outcome\ns1,1\n";
  std::ofstream(dir.file("schema.json"))
      << "[{\"name\":\"L\",\"kind\":\"continuous\"}]";
  RunResult r = run_cli("balance --panel " + dir.file("p.csv") + " --outcome " +
                        dir.file("y.csv") + " --schema " +
                        dir.file("schema.json") + " --out " + dir.file("b"),
                        dir);
  CHECK(r.code == 3);
  CHECK(r.err.find("line 2") != std::string::npos);

  CHECK(run_cli("simulate --scenario bogus --out " + dir.file("s"), dir).code == 3);
  CHECK(run_cli("evaluate --archive " + dir.file("missing_dir") + " --out " +
                dir.file("e"), dir).code == 3);
}

TEST_CASE("an unweighted-only archive is refused as unidentified (exit 4)") {
  bgtest::TempDir dir("cli");
  const std::string sim = dir.file("sim");
  RunResult r = run_cli(
      "simulate --scenario 1 --n 10000 --reps 10 --truth-n 3000 "
      "--regimes unweighted --metrics SMD --seed 7 --out " + sim, dir);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  RunResult er = run_cli("evaluate --archive " + sim + " --out " +
                         dir.file("e"), dir);
  CHECK(er.code == 4);
  CHECK(er.err.find("unidentified") != std::string::npos);
}

TEST_CASE("stabilized weight diagnostics land in warnings.log") {
  bgtest::TempDir dir("cli");
  const std::string sim = dir.file("sim");
  REQUIRE(run_cli("simulate --scenario 1 --n 300 --reps 1 --truth-n 2000 "
                  "--emit-panel --seed 3 --out " + sim, dir).code == 0);
  const std::string wdir = dir.file("w");
  RunResult wr = run_cli("weights --panel " + sim + "/panel.csv --outcome " +
                         sim + "/outcome.csv --schema " + sim + "/schema.json" +
                         " --family SW --format json --out " + wdir, dir);
  REQUIRE_MESSAGE(wr.code == 0, wr.err);
  CHECK(exists(wdir + "/weights.json"));
  CHECK(exists(wdir + "/warnings.log"));
  CHECK(wr.out.find("mean weight") != std::string::npos);
}

TEST_CASE("a bad thread env var is a usage error") {
  bgtest::TempDir dir("cli");
  RunResult r = run_cli("simulate --scenario 1 --n 200 --reps 1 --truth-n 2000"
                        " --out " + dir.file("s"), dir,
                        "BALANCEGAUGE_THREADS=abc");
  CHECK(r.code == 2);
}
