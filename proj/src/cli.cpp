#include "balancegauge/cli.hpp"

#include "balancegauge/common.hpp"
#include "balancegauge/csv.hpp"
#include "balancegauge/dgp.hpp"
#include "balancegauge/eval.hpp"
#include "balancegauge/metrics.hpp"
#include "balancegauge/panel.hpp"
#include "balancegauge/weights.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace bg {
namespace {

constexpr const char* kVersion = "0.1.0";
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int resolve_jobs(int cli_jobs) {
  if (cli_jobs > 0) return cli_jobs;
  if (const char* env = std::getenv("BALANCEGAUGE_THREADS")) {
    try {
      const int j = std::stoi(env);
      if (j >= 1) return j;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument(
        "BALANCEGAUGE_THREADS must be a positive integer");
  }
  return 1;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path ensure_out_dir(const std::string& out) {
  const fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string());
  return dir;
}

// Manifest and warnings log; warnings never go into data files. The manifest
// records everything needed to re-run the command (timestamps excluded from
// the byte-identical guarantee, which covers the data outputs).
void finish_run(const fs::path& out_dir, const std::string& command,
                const ordered_json& config, std::uint64_t seed, int jobs,
                const std::vector<std::string>& inputs,
                const std::vector<std::string>& outputs) {
  const std::vector<std::string> warning_lines = warnings().drain();
  for (const std::string& w : warning_lines) std::cerr << "warning: " << w << "\n";

  std::string log;
  for (const std::string& w : warning_lines) log += w + "\n";
  write_text_file(out_dir / "warnings.log", log);

  ordered_json j;
  j["tool"] = "balancegauge";
  j["version"] = kVersion;
  j["command"] = command;
  j["config"] = config;
  j["seed"] = seed;
  j["jobs"] = jobs;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["generated_utc"] = utc_timestamp();
  j["warnings"] = warning_lines;
  write_text_file(out_dir / "manifest.json", j.dump(2) + "\n");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(text);
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::toupper(c); });
  return s;
}

std::vector<Metric> parse_metrics(const std::string& list) {
  std::vector<Metric> metrics;
  for (const std::string& name : split_list(list))
    metrics.push_back(metric_from_name(upper(name)));
  return metrics;
}

std::vector<int> parse_times(const std::string& list) {
  std::vector<int> times;
  for (const std::string& tok : split_list(list)) {
    try {
      times.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw DataError("invalid time-point '" + tok + "'");
    }
  }
  return times;
}

// ---- schema (de)serialization -------------------------------------------

CovariateKind kind_from_name(const std::string& name) {
  if (name == "continuous") return CovariateKind::continuous;
  if (name == "binary") return CovariateKind::binary;
  if (name == "ordinal") return CovariateKind::ordinal;
  throw DataError("unknown covariate kind '" + name + "'");
}

std::string kind_name(CovariateKind k) {
  switch (k) {
    case CovariateKind::continuous: return "continuous";
    case CovariateKind::binary: return "binary";
    case CovariateKind::ordinal: return "ordinal";
  }
  return "continuous";
}

std::vector<CovariateSpec> schema_from_json_file(const std::string& path) {
  ordered_json j;
  try {
    j = ordered_json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": invalid schema json: " + e.what());
  }
  if (!j.is_array() || j.empty())
    throw DataError(path + ": schema must be a nonempty array");
  std::vector<CovariateSpec> schema;
  try {
    for (const auto& item : j) {
      CovariateSpec spec;
      spec.name = item.at("name").get<std::string>();
      spec.kind = kind_from_name(item.at("kind").get<std::string>());
      if (item.contains("encoding")) {
        const std::string enc = item["encoding"].get<std::string>();
        if (enc == "numeric_score") spec.encoding = Encoding::numeric_score;
        else if (enc == "dummy") spec.encoding = Encoding::dummy;
        else throw DataError("unknown encoding '" + enc + "'");
      }
      if (item.contains("levels"))
        spec.levels = item["levels"].get<std::vector<double>>();
      if (spec.kind == CovariateKind::binary && spec.levels.empty())
        spec.levels = {0.0, 1.0};
      schema.push_back(std::move(spec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": invalid schema json: " + e.what());
  }
  return schema;
}

std::string schema_to_json(const std::vector<CovariateSpec>& schema) {
  ordered_json arr = ordered_json::array();
  for (const CovariateSpec& spec : schema) {
    ordered_json item;
    item["name"] = spec.name;
    item["kind"] = kind_name(spec.kind);
    item["encoding"] =
        spec.encoding == Encoding::dummy ? "dummy" : "numeric_score";
    if (!spec.levels.empty()) item["levels"] = spec.levels;
    arr.push_back(std::move(item));
  }
  return arr.dump(2) + "\n";
}

// ---- weight file round-trip ----------------------------------------------

void write_weights_csv(const fs::path& path, const PanelDataset& data,
                       const WeightSet& w) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(data.n());
  const std::string truncated_at =
      w.truncation ? format_double(w.truncation->cutoff) : std::string();
  for (int i = 0; i < data.n(); ++i) {
    const double v = w.values[i];
    rows.push_back({data.ids[i], family_name(w.family),
                    std::isfinite(v) ? format_double(v) : std::string(),
                    truncated_at});
  }
  write_csv(path.string(), {"id", "family", "value", "truncated_at"}, rows);
}

WeightSet read_weights_csv(const std::string& path, const PanelDataset& data) {
  const CsvTable table = read_csv(path);
  const std::vector<std::string> expected = {"id", "family", "value",
                                             "truncated_at"};
  if (table.header != expected)
    throw DataError(path + ": unexpected weights header");
  std::map<std::string, double> by_id;
  WeightFamily family = WeightFamily::custom;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where =
        path + " line " + std::to_string(table.line_numbers[r]);
    if (!by_id.emplace(row[0], row[2].empty()
                                   ? kNaN
                                   : parse_double(row[2], where + " value"))
             .second)
      throw DataError(where + ": duplicate id '" + row[0] + "'");
    family = family_from_name(row[1]);
  }
  WeightSet w;
  w.family = family;
  w.values.reserve(data.n());
  for (const std::string& id : data.ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end())
      throw DataError(path + ": no weight for panel subject '" + id + "'");
    w.values.push_back(it->second);
  }
  if (by_id.size() != static_cast<std::size_t>(data.n()))
    throw DataError(path + ": contains ids not present in the panel");
  return w;
}

// ---- shared option bundles -----------------------------------------------

struct PanelArgs {
  std::string panel, outcome, schema;
};

void add_panel_options(CLI::App* cmd, PanelArgs& args) {
  cmd->add_option("--panel", args.panel, "Long-format panel CSV")
      ->required();
  cmd->add_option("--outcome", args.outcome, "Outcome CSV (id,outcome)")
      ->required();
  cmd->add_option("--schema", args.schema, "Covariate schema JSON")
      ->required();
}

PanelDataset load_panel_args(const PanelArgs& args) {
  return load_panel(args.panel, args.outcome,
                    schema_from_json_file(args.schema));
}

std::vector<int> treatment_times(const PanelDataset& data) {
  std::vector<int> times;
  for (int t = 0; t < data.time_points(); ++t)
    if (data.waves[t].treatment_present) times.push_back(t);
  return times;
}

// ---- simulate --------------------------------------------------------------

struct SimulateArgs {
  std::string scenario;
  std::string config_path;
  int n = 0;
  long reps = 1000;
  long truth_n = 300000;
  std::string regimes;
  std::string metrics;
  bool emit_panel = false;
};

ordered_json truth_json(const MsmTruth& truth) {
  ordered_json j;
  j["beta0"] = truth.beta0;
  j["beta1"] = truth.beta1;
  j["beta2"] = truth.beta2;
  j["or1"] = truth.or1();
  j["or2"] = truth.or2();
  j["oracle_n"] = truth.oracle_n;
  return j;
}

int cmd_simulate(const SimulateArgs& args, std::uint64_t seed, int jobs,
                 const std::string& out) {
  ScenarioConfig config;
  std::vector<std::string> inputs;
  if (!args.config_path.empty()) {
    config = scenario_from_json(read_text_file(args.config_path));
    inputs.push_back(args.config_path);
  } else {
    config = builtin_scenario(args.scenario);
  }
  if (args.n > 0) config.n = args.n;

  RunOptions options;
  options.reps = args.reps;
  options.seed = seed;
  options.jobs = jobs;
  options.truth_n = args.truth_n;
  options.regimes = split_list(args.regimes);
  options.metrics = parse_metrics(args.metrics);

  const fs::path out_dir = ensure_out_dir(out);
  const CampaignResult result = run_replicates(config, options);

  write_archive_csv(result, (out_dir / "archive.csv").string());
  write_summaries_csv(result, (out_dir / "summaries.csv").string());
  std::vector<std::string> outputs = {"archive.csv", "summaries.csv",
                                      "summary.json"};

  // Campaign digest: truth, per-regime bias in the table convention
  // |mean over replicates of the signed OR error|.
  ordered_json digest;
  digest["scenario"] = config.id;
  digest["n"] = config.n;
  digest["reps"] = args.reps;
  digest["seed"] = seed;
  digest["truth"] = truth_json(result.truth);
  if (std::isfinite(result.censor_fraction_mean))
    digest["censor_fraction_mean"] = result.censor_fraction_mean;
  else
    digest["censor_fraction_mean"] = nullptr;
  digest["failures"] = result.failures.size();
  digest["records"] = result.records.size();
  {
    ordered_json bias_block = ordered_json::object();
    std::map<std::string, std::pair<double, long>> acc;  // key -> (sum, count)
    std::vector<std::string> order;
    for (const ReplicateSummary& s : result.summaries) {
      const std::string key = s.ps_spec + "/" + s.regime;
      auto [it, fresh] = acc.try_emplace(key, 0.0, 0);
      if (fresh) order.push_back(key);
      it->second.first += 0.5 * (s.or1_err + s.or2_err);
      it->second.second += 1;
    }
    std::sort(order.begin(), order.end());
    for (const std::string& key : order) {
      const auto& [sum, count] = acc[key];
      bias_block[key] = std::abs(sum / count);
    }
    digest["bias_abs_mean"] = std::move(bias_block);
  }
  write_text_file(out_dir / "summary.json", digest.dump(2) + "\n");

  if (!result.failures.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (const ReplicateFailure& f : result.failures)
      rows.push_back({std::to_string(f.rep), f.ps_spec, f.message});
    write_csv((out_dir / "failures.csv").string(),
              {"rep", "ps_spec", "message"}, rows);
    outputs.push_back("failures.csv");
  }

  if (args.emit_panel) {
    const PanelDataset panel = generate_scenario(config, seed, 0);
    write_panel(panel, (out_dir / "panel.csv").string(),
                (out_dir / "outcome.csv").string());
    write_text_file(out_dir / "schema.json", schema_to_json(panel.schema));
    outputs.insert(outputs.end(), {"panel.csv", "outcome.csv", "schema.json"});
  }

  std::cout << "scenario " << config.id << ": " << args.reps
            << " replicates, " << result.records.size() << " archive rows, "
            << result.failures.size() << " failures\n";

  finish_run(out_dir, "simulate", ordered_json::parse(scenario_to_json(config)),
             seed, jobs, inputs, outputs);
  return 0;
}

// ---- weights ---------------------------------------------------------------

struct WeightsArgs {
  PanelArgs panel;
  std::string family = "W";
  std::string times;
  double truncate = 0.0;
  std::string ps_spec = "simple";
};

DesignSpec spec_from_name(const std::string& name) {
  if (name == "simple") return DesignSpec{{}, Complexity::simple};
  if (name == "complex") return DesignSpec{{}, Complexity::complex};
  throw DataError("unknown PS specification '" + name +
                  "' (expected simple or complex)");
}

WeightSet compute_family_weights(const PanelDataset& data,
                                 WeightFamily family, const DesignSpec& spec,
                                 std::vector<int> times) {
  if (family == WeightFamily::censoring_WC) {
    const CensoringModels cm = fit_censoring_models(data, spec);
    if (times.empty())
      for (const CensoringTimeModel& m : cm.times) times.push_back(m.time);
    return compute_censoring_weights(data, cm, times);
  }
  if (family == WeightFamily::combined_WAC) {
    const TreatmentModels tm =
        fit_treatment_models(data, spec, WeightFamily::treatment_WA);
    const WeightSet wa = compute_weights(data, tm, WeightFamily::treatment_WA,
                                         times.empty() ? treatment_times(data)
                                                       : times);
    const CensoringModels cm = fit_censoring_models(data, spec);
    std::vector<int> ctimes;
    for (const CensoringTimeModel& m : cm.times) ctimes.push_back(m.time);
    return combine_weights(wa, compute_censoring_weights(data, cm, ctimes));
  }
  const TreatmentModels tm = fit_treatment_models(data, spec, family);
  return compute_weights(data, tm, family,
                         times.empty() ? treatment_times(data) : times);
}

int cmd_weights(const WeightsArgs& args, std::uint64_t seed, int jobs,
                const std::string& out, const std::string& format) {
  const PanelDataset data = load_panel_args(args.panel);
  const WeightFamily family = family_from_name(args.family);
  WeightSet w = compute_family_weights(data, family,
                                       spec_from_name(args.ps_spec),
                                       parse_times(args.times));
  if (args.truncate > 0.0) w = truncate_weights(w, args.truncate);

  const fs::path out_dir = ensure_out_dir(out);
  std::vector<std::string> outputs;
  if (format == "json") {
    ordered_json j;
    j["family"] = family_name(w.family);
    j["time_range"] = w.time_range;
    if (w.truncation) {
      j["truncated_at"] = w.truncation->cutoff;
      j["truncation_percentile"] = w.truncation->percentile;
    } else {
      j["truncated_at"] = nullptr;
    }
    ordered_json values = ordered_json::array();
    for (int i = 0; i < data.n(); ++i) {
      ordered_json row;
      row["id"] = data.ids[i];
      if (std::isfinite(w.values[i])) row["value"] = w.values[i];
      else row["value"] = nullptr;
      values.push_back(std::move(row));
    }
    j["values"] = std::move(values);
    write_text_file(out_dir / "weights.json", j.dump(2) + "\n");
    outputs.push_back("weights.json");
  } else {
    write_weights_csv(out_dir / "weights.csv", data, w);
    outputs.push_back("weights.csv");
  }

  std::cout << "family " << family_name(w.family) << ", mean weight "
            << format_double(weight_mean(w)) << "\n";

  ordered_json config;
  config["family"] = args.family;
  config["ps_spec"] = args.ps_spec;
  config["times"] = w.time_range;
  config["truncate"] = args.truncate > 0.0 ? ordered_json(args.truncate)
                                           : ordered_json(nullptr);
  finish_run(out_dir, "weights", config, seed, jobs,
             {args.panel.panel, args.panel.outcome, args.panel.schema},
             outputs);
  return 0;
}

// ---- balance ---------------------------------------------------------------

struct BalanceArgs {
  PanelArgs panel;
  std::string weights_path;
  std::string metrics;
};

void print_balance_summary(const BalanceReport& report) {
  // Global-first workflow: lead with MHB per (t,k), then drill into the
  // per-covariate SMD cells of any flagged block.
  std::vector<std::pair<int, int>> flagged;
  bool have_mhb = false;
  for (const BalanceCell& cell : report.cells) {
    if (cell.metric != Metric::MHB) continue;
    have_mhb = true;
    std::cout << "MHB t=" << cell.t << " k=" << cell.k << ": ";
    if (!cell.available) {
      std::cout << "unavailable\n";
      continue;
    }
    std::cout << format_double(cell.value);
    if (cell.flagged) {
      std::cout << "  [above threshold " << format_double(cell.threshold)
                << "]";
      flagged.emplace_back(cell.t, cell.k);
    }
    std::cout << "\n";
  }
  if (!have_mhb) {
    for (const BalanceCell& cell : report.cells)
      if (cell.metric == Metric::SMD && cell.flagged)
        flagged.emplace_back(cell.t, cell.k);
    std::sort(flagged.begin(), flagged.end());
    flagged.erase(std::unique(flagged.begin(), flagged.end()), flagged.end());
  }
  if (flagged.empty()) {
    std::cout << "no flagged blocks\n";
    return;
  }
  for (const auto& [t, k] : flagged) {
    std::cout << "SMD drill-down t=" << t << " k=" << k << ":\n";
    for (const BalanceCell& cell : report.cells) {
      if (cell.metric != Metric::SMD || cell.t != t || cell.k != k) continue;
      std::cout << "  " << cell.covariate << " = "
                << (cell.available ? format_double(cell.value) : "unavailable")
                << (cell.flagged ? "  [imbalanced]" : "") << "\n";
    }
  }
}

int cmd_balance(const BalanceArgs& args, std::uint64_t seed, int jobs,
                const std::string& out) {
  const PanelDataset data = load_panel_args(args.panel);
  std::vector<std::string> inputs = {args.panel.panel, args.panel.outcome,
                                     args.panel.schema};
  WeightSet w = unit_weights(data.n());
  if (!args.weights_path.empty()) {
    w = read_weights_csv(args.weights_path, data);
    inputs.push_back(args.weights_path);
  }
  std::vector<Metric> metrics = parse_metrics(args.metrics);
  const BalanceReport report = balance_table(data, w, metrics);

  const fs::path out_dir = ensure_out_dir(out);
  write_text_file(out_dir / "balance.json", balance_report_json(report));
  write_balance_csv(report, (out_dir / "balance.csv").string());
  print_balance_summary(report);

  ordered_json config;
  config["weights"] = args.weights_path.empty()
                          ? ordered_json(nullptr)
                          : ordered_json(args.weights_path);
  config["metrics"] = args.metrics.empty() ? "all" : args.metrics;
  finish_run(out_dir, "balance", config, seed, jobs, inputs,
             {"balance.json", "balance.csv"});
  return 0;
}

// ---- evaluate ----------------------------------------------------------------

struct EvaluateArgs {
  std::vector<std::string> archives;
};

struct ArchiveSource {
  std::string scenario;
  std::string path;
};

std::string scenario_label(const fs::path& archive_path) {
  const fs::path dir = archive_path.parent_path();
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest)) {
    try {
      const ordered_json j = ordered_json::parse(read_text_file(manifest.string()));
      if (j.contains("config") && j["config"].contains("id"))
        return j["config"]["id"].get<std::string>();
    } catch (const std::exception&) {
    }
  }
  const std::string name = dir.filename().string();
  return name.empty() ? archive_path.string() : name;
}

std::vector<ArchiveSource> resolve_archives(
    const std::vector<std::string>& paths) {
  std::vector<ArchiveSource> sources;
  for (const std::string& arg : paths) {
    const fs::path p(arg);
    if (fs::is_regular_file(p)) {
      sources.push_back({scenario_label(p), p.string()});
      continue;
    }
    if (!fs::is_directory(p))
      throw DataError("archive path does not exist: " + arg);
    if (fs::exists(p / "archive.csv")) {
      sources.push_back({scenario_label(p / "archive.csv"),
                         (p / "archive.csv").string()});
      continue;
    }
    // Multi-scenario directory: each subdirectory with an archive is a block.
    std::vector<fs::path> subs;
    for (const auto& entry : fs::directory_iterator(p))
      if (entry.is_directory() && fs::exists(entry.path() / "archive.csv"))
        subs.push_back(entry.path() / "archive.csv");
    std::sort(subs.begin(), subs.end());
    for (const fs::path& sub : subs)
      sources.push_back({scenario_label(sub), sub.string()});
    if (subs.empty())
      throw DataError("no archive.csv found under " + arg);
  }
  return sources;
}

// Structural completeness: within a PS spec every metric must cover the same
// (rep, regime) set; gaps are listed explicitly.
void check_archive_complete(const std::string& scenario,
                            const std::vector<ReplicateRecord>& records,
                            const std::string& ps_spec) {
  std::map<std::string, std::set<std::pair<long, std::string>>> seen;
  std::set<std::pair<long, std::string>> all;
  for (const ReplicateRecord& r : records) {
    if (r.ps_spec != ps_spec) continue;
    seen[r.metric].insert({r.rep, r.regime});
    all.insert({r.rep, r.regime});
  }
  std::vector<std::string> missing;
  for (const auto& [metric, keys] : seen) {
    for (const auto& key : all) {
      if (!keys.count(key))
        missing.push_back("rep " + std::to_string(key.first) + " regime " +
                          key.second + " metric " + metric);
    }
  }
  if (missing.empty()) return;
  std::string msg = "archive for scenario " + scenario + " (" + ps_spec +
                    ") is incomplete; missing cells:";
  const std::size_t shown = std::min<std::size_t>(missing.size(), 20);
  for (std::size_t i = 0; i < shown; ++i) msg += "\n  " + missing[i];
  if (missing.size() > shown)
    msg += "\n  ... and " + std::to_string(missing.size() - shown) + " more";
  throw DataError(msg);
}

int cmd_evaluate(const EvaluateArgs& args, std::uint64_t seed, int jobs,
                 const std::string& out, const std::string& format) {
  const std::vector<ArchiveSource> sources = resolve_archives(args.archives);
  const fs::path out_dir = ensure_out_dir(out);

  std::vector<EvalRecord> eval_records;
  ordered_json json_blocks = ordered_json::array();
  std::vector<std::string> inputs;
  for (const ArchiveSource& source : sources) {
    inputs.push_back(source.path);
    const std::vector<ReplicateRecord> records = read_archive_csv(source.path);
    std::vector<std::string> specs;
    for (const ReplicateRecord& r : records)
      if (std::find(specs.begin(), specs.end(), r.ps_spec) == specs.end())
        specs.push_back(r.ps_spec);
    std::sort(specs.begin(), specs.end());
    if (specs.empty())
      throw DataError(source.path + ": archive has no records");
    for (const std::string& spec : specs) {
      check_archive_complete(source.scenario, records, spec);
      const std::vector<EvalResult> ranked =
          rank_metrics(evaluate_archive(records, spec));
      std::cout << "scenario " << source.scenario << ", " << spec
                << " PS specification:\n";
      for (const EvalResult& r : ranked) {
        std::cout << "  " << r.metric << "  R2=" << format_double(r.r_squared)
                  << "  intercept=" << format_double(r.intercept);
        if (r.dropped_rows > 0)
          std::cout << "  (dropped " << r.dropped_rows << " rows)";
        if (r.intercept_alert) std::cout << "  [intercept alert]";
        std::cout << "\n";
        eval_records.push_back({source.scenario, spec, r});
      }
      if (format == "json") {
        ordered_json block;
        block["scenario"] = source.scenario;
        block["ps_spec"] = spec;
        ordered_json arr = ordered_json::array();
        for (const EvalResult& r : ranked) {
          ordered_json item;
          item["metric"] = r.metric;
          item["r2"] = r.r_squared;
          item["intercept"] = r.intercept;
          item["rows"] = r.row_count;
          item["dropped_rows"] = r.dropped_rows;
          item["intercept_alert"] = r.intercept_alert;
          arr.push_back(std::move(item));
        }
        block["metrics"] = std::move(arr);
        json_blocks.push_back(std::move(block));
      }
    }
  }

  std::vector<std::string> outputs;
  if (format == "json") {
    write_text_file(out_dir / "eval.json", json_blocks.dump(2) + "\n");
    outputs.push_back("eval.json");
  } else {
    write_eval_csv((out_dir / "eval.csv").string(), eval_records);
    outputs.push_back("eval.csv");
  }

  ordered_json config;
  config["archives"] = args.archives;
  config["format"] = format;
  finish_run(out_dir, "evaluate", config, seed, jobs, inputs, outputs);
  return 0;
}

// ---- report ------------------------------------------------------------------

struct ReportArgs {
  PanelArgs panel;
  std::string weights_path;
  int t = -1;
  int k = -1;
  std::string covariates;
};

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name)
    out += (std::isalnum(static_cast<unsigned char>(c)) != 0) ? c : '_';
  return out;
}

void write_curve_csv(const fs::path& path,
                     const std::vector<CurvePoint>& curve) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(curve.size());
  for (const CurvePoint& pt : curve)
    rows.push_back({format_double(pt.x), format_double(pt.f1),
                    format_double(pt.f0)});
  write_csv(path.string(), {"x", "f1", "f0"}, rows);
}

int cmd_report(const ReportArgs& args, std::uint64_t seed, int jobs,
               const std::string& out) {
  const PanelDataset data = load_panel_args(args.panel);
  std::vector<std::string> inputs = {args.panel.panel, args.panel.outcome,
                                     args.panel.schema};
  WeightSet w = unit_weights(data.n());
  if (!args.weights_path.empty()) {
    w = read_weights_csv(args.weights_path, data);
    inputs.push_back(args.weights_path);
  }
  if ((args.t < 0) != (args.k < 0))
    throw DataError("--t and --k must be given together");
  std::vector<std::pair<int, int>> schedule;
  if (args.t >= 0)
    schedule.emplace_back(args.t, args.k);
  else
    schedule = balance_schedule(data);

  const std::vector<std::string> wanted = split_list(args.covariates);
  const fs::path out_dir = ensure_out_dir(out);
  std::vector<std::string> outputs;
  for (const auto& [t, k] : schedule) {
    const CovariateBlock block = covariate_block(data, t, k);
    for (std::size_t j = 0; j < block.column_names.size(); ++j) {
      const std::string& name = block.column_names[j];
      if (!wanted.empty() &&
          std::find(wanted.begin(), wanted.end(), name) == wanted.end())
        continue;
      const std::string stem =
          "t" + std::to_string(t) + "_k" + std::to_string(k) + "_" +
          sanitize(name);
      const std::string ecdf_name = "ecdf_" + stem + ".csv";
      write_curve_csv(out_dir / ecdf_name,
                      ecdf_curve(block, w, static_cast<int>(j)));
      outputs.push_back(ecdf_name);
      if (block.column_kinds[j] == CovariateKind::continuous) {
        const std::string dens_name = "density_" + stem + ".csv";
        write_curve_csv(out_dir / dens_name,
                        density_curve(block, w, static_cast<int>(j)));
        outputs.push_back(dens_name);
      }
    }
  }
  if (outputs.empty())
    throw DataError("no covariates matched the report request");
  std::cout << "wrote " << outputs.size() << " curve files\n";

  ordered_json config;
  config["weights"] = args.weights_path.empty()
                          ? ordered_json(nullptr)
                          : ordered_json(args.weights_path);
  config["t"] = args.t;
  config["k"] = args.k;
  config["covariates"] = args.covariates.empty() ? "all" : args.covariates;
  finish_run(out_dir, "report", config, seed, jobs, inputs, outputs);
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Longitudinal covariate-balance diagnostics for IPW-weighted "
               "marginal structural models"};
  app.set_version_flag("--version", std::string("balancegauge ") + kVersion);
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  int jobs = 0;
  std::string out = ".";
  std::string format = "csv";
  app.add_option("--seed", seed, "Master seed")->capture_default_str();
  app.add_option("--jobs", jobs,
                 "Worker threads (default: BALANCEGAUGE_THREADS or 1)")
      ->check(CLI::PositiveNumber);
  app.add_option("--out", out, "Output directory")->capture_default_str();
  app.add_option("--format", format, "Output format for derived tables")
      ->check(CLI::IsMember({"csv", "json"}))
      ->capture_default_str();

  SimulateArgs sim;
  CLI::App* simulate =
      app.add_subcommand("simulate", "Run a Monte Carlo weighting campaign");
  CLI::Option* sim_scenario =
      simulate->add_option("--scenario", sim.scenario,
                           "Built-in scenario id (1..10 or censored_base)");
  CLI::Option* sim_config =
      simulate->add_option("--config", sim.config_path, "Scenario JSON path");
  sim_scenario->excludes(sim_config);
  simulate->add_option("--n", sim.n, "Override sample size")
      ->check(CLI::PositiveNumber);
  simulate->add_option("--reps", sim.reps, "Replicates")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  simulate->add_option("--truth-n", sim.truth_n,
                       "Counterfactual oracle sample size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  simulate->add_option("--regimes", sim.regimes,
                       "Comma list of weighting regimes (default all)");
  simulate->add_option("--metrics", sim.metrics,
                       "Comma list of balance metrics (default all)");
  simulate->add_flag("--emit-panel", sim.emit_panel,
                     "Also write replicate 0 as panel/outcome/schema files");

  WeightsArgs wargs;
  CLI::App* weights_cmd =
      app.add_subcommand("weights", "Fit and export a weight family");
  add_panel_options(weights_cmd, wargs.panel);
  weights_cmd->add_option("--family", wargs.family,
                          "Weight family (U, SW, W, WC, WA, WAC)")
      ->capture_default_str();
  weights_cmd->add_option("--times", wargs.times,
                          "Comma list of time-points (default all)");
  weights_cmd->add_option("--truncate", wargs.truncate,
                          "Truncation percentile in (0,1]");
  weights_cmd->add_option("--ps-spec", wargs.ps_spec,
                          "Propensity design: simple or complex")
      ->capture_default_str();

  BalanceArgs bargs;
  CLI::App* balance_cmd =
      app.add_subcommand("balance", "Produce a balance report");
  add_panel_options(balance_cmd, bargs.panel);
  balance_cmd->add_option("--weights", bargs.weights_path,
                          "Weights CSV (default: unweighted)");
  balance_cmd->add_option("--metrics", bargs.metrics,
                          "Comma list of metrics (default all)");

  EvaluateArgs eargs;
  CLI::App* evaluate_cmd = app.add_subcommand(
      "evaluate", "Regress bias on balance variables per metric");
  evaluate_cmd
      ->add_option("--archive", eargs.archives,
                   "Archive CSVs, run directories, or multi-scenario roots")
      ->required();

  ReportArgs rargs;
  CLI::App* report_cmd =
      app.add_subcommand("report", "Emit plot-ready ECDF/density curves");
  add_panel_options(report_cmd, rargs.panel);
  report_cmd->add_option("--weights", rargs.weights_path,
                         "Weights CSV (default: unweighted)");
  report_cmd->add_option("--t", rargs.t, "Target time-point");
  report_cmd->add_option("--k", rargs.k, "Lag");
  report_cmd->add_option("--covariates", rargs.covariates,
                         "Comma list of covariates (default all)");

  // Global flags are accepted on either side of the subcommand name.
  for (CLI::App* sub : {simulate, weights_cmd, balance_cmd, evaluate_cmd,
                        report_cmd})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (simulate->parsed() && sim.scenario.empty() && sim.config_path.empty())
      throw std::invalid_argument(
          "simulate requires --scenario or --config");
    const int resolved_jobs = resolve_jobs(jobs);
    if (simulate->parsed())
      return cmd_simulate(sim, seed, resolved_jobs, out);
    if (weights_cmd->parsed())
      return cmd_weights(wargs, seed, resolved_jobs, out, format);
    if (balance_cmd->parsed())
      return cmd_balance(bargs, seed, resolved_jobs, out);
    if (evaluate_cmd->parsed())
      return cmd_evaluate(eargs, seed, resolved_jobs, out, format);
    if (report_cmd->parsed())
      return cmd_report(rargs, seed, resolved_jobs, out);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace bg
