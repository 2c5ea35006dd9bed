#include "balancegauge/panel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include "balancegauge/common.hpp"
#include "balancegauge/csv.hpp"

namespace bg {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool is_binary_value(double v) { return v == 0.0 || v == 1.0; }

void validate_schema(const std::vector<CovariateSpec>& schema) {
  std::set<std::string> seen;
  for (const auto& spec : schema) {
    if (spec.name.empty()) throw DataError("covariate schema: empty name");
    if (!seen.insert(spec.name).second) {
      throw DataError("covariate schema: duplicate name '" + spec.name + "'");
    }
    if (spec.kind == CovariateKind::ordinal && spec.levels.size() < 2) {
      throw DataError("covariate '" + spec.name +
                      "': ordinal kind requires an ordered level list of size >= 2");
    }
  }
}

}  // namespace

std::vector<char> PanelDataset::uncensored_through(int t) const {
  std::vector<char> mask(ids.size(), 1);
  for (int s = 0; s <= t && s < time_points(); ++s) {
    for (int i = 0; i < n(); ++i) {
      if (waves[s].censored[i]) mask[i] = 0;
    }
  }
  return mask;
}

PanelDataset load_panel(const std::string& panel_csv,
                        const std::string& outcome_csv,
                        const std::vector<CovariateSpec>& schema) {
  validate_schema(schema);
  const CsvTable table = read_csv(panel_csv);

  const int id_col = table.column("id");
  const int time_col = table.column("time");
  const int cens_col = table.column("censored");
  const int treat_col = table.column("treatment");
  if (id_col < 0 || time_col < 0 || cens_col < 0 || treat_col < 0) {
    throw DataError(panel_csv + ": header must start with id,time,censored,treatment");
  }
  std::vector<int> cov_cols;
  for (const auto& spec : schema) {
    const int c = table.column(spec.name);
    if (c < 0) throw DataError(panel_csv + ": missing covariate column '" + spec.name + "'");
    cov_cols.push_back(c);
  }
  const std::size_t known = 4 + schema.size();
  if (table.header.size() != known) {
    for (const auto& name : table.header) {
      if (name != "id" && name != "time" && name != "censored" && name != "treatment" &&
          std::none_of(schema.begin(), schema.end(),
                       [&](const CovariateSpec& s) { return s.name == name; })) {
        throw DataError(panel_csv + ": unknown column '" + name + "'");
      }
    }
  }

  // First pass: subjects in order of first appearance, time range.
  std::vector<std::string> ids;
  std::map<std::string, int> id_index;
  long max_time = -1;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (id_index.emplace(row[id_col], static_cast<int>(ids.size())).second) {
      ids.push_back(row[id_col]);
    }
    const std::string line = panel_csv + ": line " + std::to_string(table.line_numbers[r]);
    const double tv = parse_double(row[time_col], line + ", column time");
    if (tv < 0 || tv != std::floor(tv)) throw DataError(line + ": time must be a nonnegative integer");
    max_time = std::max(max_time, static_cast<long>(tv));
  }
  if (ids.empty()) throw DataError(panel_csv + ": no data rows");

  const int n = static_cast<int>(ids.size());
  const int T1 = static_cast<int>(max_time + 1);
  const int p = static_cast<int>(schema.size());

  PanelDataset data;
  data.schema = schema;
  data.ids = ids;
  data.waves.resize(T1);
  for (auto& wave : data.waves) {
    wave.treatment.assign(n, kNaN);
    wave.censored.assign(n, -1);
    wave.covariates = Eigen::MatrixXd::Constant(n, p, kNaN);
  }
  data.outcome.assign(n, kNaN);

  // Second pass: fill cells.
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string line = panel_csv + ": line " + std::to_string(table.line_numbers[r]);
    const int i = id_index[row[id_col]];
    const int t = static_cast<int>(parse_double(row[time_col], line + ", column time"));
    Wave& wave = data.waves[t];
    if (wave.censored[i] != -1) {
      throw DataError(line + ": duplicate row for subject '" + ids[i] + "' at time " +
                      std::to_string(t));
    }
    const double cv = parse_double(row[cens_col], line + ", column censored");
    if (!is_binary_value(cv)) throw DataError(line + ": censored must be 0 or 1");
    wave.censored[i] = static_cast<int>(cv);
    const bool censored = wave.censored[i] == 1;

    if (!row[treat_col].empty()) {
      const double av = parse_double(row[treat_col], line + ", column treatment");
      if (!is_binary_value(av)) throw DataError(line + ": treatment must be 0 or 1");
      wave.treatment[i] = av;
    } else if (!censored) {
      // Legal only if the whole wave carries no treatment; checked below.
      wave.treatment[i] = kNaN;
    }

    for (int j = 0; j < p; ++j) {
      const std::string& cell = row[cov_cols[j]];
      if (cell.empty()) {
        if (!censored) {
          throw DataError(line + ": missing value for '" + schema[j].name +
                          "' on an uncensored row");
        }
        continue;
      }
      const double v = parse_double(cell, line + ", column " + schema[j].name);
      if (schema[j].kind == CovariateKind::binary && !is_binary_value(v)) {
        throw DataError(line + ": binary covariate '" + schema[j].name + "' must be 0 or 1");
      }
      if (schema[j].kind == CovariateKind::ordinal &&
          std::find(schema[j].levels.begin(), schema[j].levels.end(), v) ==
              schema[j].levels.end()) {
        throw DataError(line + ": value " + row[cov_cols[j]] + " of '" + schema[j].name +
                        "' is not in the declared level list");
      }
      wave.covariates(i, j) = v;
    }
  }

  // Completeness, monotone censoring, wave-level treatment presence.
  for (int t = 0; t < T1; ++t) {
    Wave& wave = data.waves[t];
    int with_treatment = 0, uncensored_rows = 0;
    for (int i = 0; i < n; ++i) {
      if (wave.censored[i] == -1) {
        throw DataError(panel_csv + ": subject '" + ids[i] + "' has no row at time " +
                        std::to_string(t));
      }
      if (t > 0 && data.waves[t - 1].censored[i] == 1 && wave.censored[i] == 0) {
        throw DataError(panel_csv + ": non-monotone censoring for subject '" + ids[i] +
                        "' at time " + std::to_string(t));
      }
      if (wave.censored[i] == 0) {
        ++uncensored_rows;
        if (!std::isnan(wave.treatment[i])) ++with_treatment;
      } else {
        wave.treatment[i] = kNaN;
        wave.covariates.row(i).setConstant(kNaN);
      }
    }
    wave.treatment_present = with_treatment > 0;
    if (with_treatment > 0 && with_treatment != uncensored_rows) {
      throw DataError(panel_csv + ": treatment at time " + std::to_string(t) +
                      " is missing for some uncensored subjects");
    }
  }

  // Outcome file: id,outcome; required for subjects uncensored through T.
  const CsvTable ytab = read_csv(outcome_csv);
  const int yid_col = ytab.column("id");
  const int y_col = ytab.column("outcome");
  if (yid_col < 0 || y_col < 0 || ytab.header.size() != 2) {
    throw DataError(outcome_csv + ": header must be id,outcome");
  }
  std::vector<char> seen(n, 0);
  for (std::size_t r = 0; r < ytab.rows.size(); ++r) {
    const std::string line = outcome_csv + ": line " + std::to_string(ytab.line_numbers[r]);
    const auto it = id_index.find(ytab.rows[r][yid_col]);
    if (it == id_index.end()) throw DataError(line + ": unknown subject id");
    if (seen[it->second]) throw DataError(line + ": duplicate outcome row");
    seen[it->second] = 1;
    const std::string& cell = ytab.rows[r][y_col];
    if (cell.empty()) continue;
    const double v = parse_double(cell, line + ", column outcome");
    if (!is_binary_value(v)) throw DataError(line + ": outcome must be 0 or 1");
    data.outcome[it->second] = v;
  }
  const auto complete = data.uncensored_through(T1 - 1);
  for (int i = 0; i < n; ++i) {
    if (complete[i] && std::isnan(data.outcome[i])) {
      throw DataError(outcome_csv + ": missing outcome for uncensored subject '" + ids[i] + "'");
    }
    if (!complete[i]) data.outcome[i] = kNaN;
  }
  return data;
}

void write_panel(const PanelDataset& data, const std::string& panel_csv,
                 const std::string& outcome_csv) {
  std::vector<std::string> header = {"id", "time", "censored", "treatment"};
  for (const auto& spec : data.schema) header.push_back(spec.name);
  std::vector<std::vector<std::string>> rows;
  rows.reserve(static_cast<std::size_t>(data.n()) * data.time_points());
  for (int i = 0; i < data.n(); ++i) {
    for (int t = 0; t < data.time_points(); ++t) {
      const Wave& wave = data.waves[t];
      std::vector<std::string> row;
      row.reserve(header.size());
      row.push_back(data.ids[i]);
      row.push_back(std::to_string(t));
      row.push_back(std::to_string(wave.censored[i]));
      row.push_back(std::isnan(wave.treatment[i])
                        ? std::string()
                        : format_double(wave.treatment[i]));
      for (int j = 0; j < static_cast<int>(data.schema.size()); ++j) {
        const double v = wave.covariates(i, j);
        row.push_back(std::isnan(v) ? std::string() : format_double(v));
      }
      rows.push_back(std::move(row));
    }
  }
  write_csv(panel_csv, header, rows);

  std::vector<std::vector<std::string>> yrows;
  yrows.reserve(data.n());
  for (int i = 0; i < data.n(); ++i) {
    yrows.push_back({data.ids[i], std::isnan(data.outcome[i])
                                      ? std::string()
                                      : format_double(data.outcome[i])});
  }
  write_csv(outcome_csv, {"id", "outcome"}, yrows);
}

EncodedWave encode_wave(const PanelDataset& data, int time,
                        const std::vector<int>& subjects) {
  const Wave& wave = data.waves[time];
  const int m = static_cast<int>(subjects.size());
  EncodedWave out;
  std::vector<int> source_col;
  std::vector<double> dummy_level;
  for (int j = 0; j < static_cast<int>(data.schema.size()); ++j) {
    const CovariateSpec& spec = data.schema[j];
    if (spec.encoding == Encoding::dummy && spec.levels.size() >= 2) {
      // K-level variable -> K-1 indicators, first level as reference.
      for (std::size_t l = 1; l < spec.levels.size(); ++l) {
        source_col.push_back(j);
        dummy_level.push_back(spec.levels[l]);
        out.column_names.push_back(spec.name + "=" + format_double(spec.levels[l]));
        out.column_kinds.push_back(CovariateKind::binary);
        out.column_levels.push_back({0.0, 1.0});
      }
    } else {
      source_col.push_back(j);
      dummy_level.push_back(kNaN);
      out.column_names.push_back(spec.name);
      out.column_kinds.push_back(spec.kind);
      if (spec.kind == CovariateKind::binary) {
        out.column_levels.push_back({0.0, 1.0});
      } else if (spec.kind == CovariateKind::ordinal) {
        out.column_levels.push_back(spec.levels);
      } else {
        out.column_levels.push_back({});
      }
    }
  }
  const int q = static_cast<int>(source_col.size());
  out.columns.resize(m, q);
  for (int c = 0; c < q; ++c) {
    const bool dummy = !std::isnan(dummy_level[c]);
    for (int r = 0; r < m; ++r) {
      const double v = wave.covariates(subjects[r], source_col[c]);
      out.columns(r, c) = dummy ? static_cast<double>(v == dummy_level[c]) : v;
    }
  }
  return out;
}

EncodedWave history_design(const PanelDataset& data, int cov_through,
                           int treat_through,
                           const std::vector<int>& subjects) {
  if (cov_through < 0 || cov_through >= data.time_points()) {
    throw std::invalid_argument("history_design: covariate time out of range");
  }
  if (treat_through >= data.time_points()) {
    throw std::invalid_argument("history_design: treatment time out of range");
  }
  const int m = static_cast<int>(subjects.size());
  EncodedWave out;
  std::vector<EncodedWave> waves;
  int q = 0;
  for (int s = 0; s <= cov_through; ++s) {
    waves.push_back(encode_wave(data, s, subjects));
    q += static_cast<int>(waves.back().column_names.size());
  }
  // Waves without a treatment decision (e.g. a baseline covariate wave) are
  // skipped rather than rejected.
  std::vector<int> treat_times;
  for (int s = 0; s <= treat_through; ++s) {
    if (data.waves[s].treatment_present) treat_times.push_back(s);
  }
  out.columns.resize(m, q + static_cast<int>(treat_times.size()));
  int c = 0;
  for (int s = 0; s <= cov_through; ++s) {
    const EncodedWave& ew = waves[s];
    for (std::size_t j = 0; j < ew.column_names.size(); ++j, ++c) {
      out.columns.col(c) = ew.columns.col(j);
      out.column_names.push_back(ew.column_names[j] + "_t" + std::to_string(s));
      out.column_kinds.push_back(ew.column_kinds[j]);
      out.column_levels.push_back(ew.column_levels[j]);
    }
  }
  for (const int s : treat_times) {
    for (int r = 0; r < m; ++r) {
      out.columns(r, c) = data.waves[s].treatment[subjects[r]];
    }
    out.column_names.push_back("A_t" + std::to_string(s));
    out.column_kinds.push_back(CovariateKind::binary);
    out.column_levels.push_back({0.0, 1.0});
    ++c;
  }
  return out;
}

CovariateBlock covariate_block(const PanelDataset& data, int t, int k) {
  if (t < 0 || t >= data.time_points()) {
    throw std::invalid_argument("covariate_block: target time out of range");
  }
  if (k < 0 || k > t) {
    throw std::invalid_argument("covariate_block: lag must satisfy 0 <= k <= t");
  }
  if (!data.waves[t].treatment_present) {
    throw std::invalid_argument("covariate_block: no treatment at time " + std::to_string(t));
  }
  CovariateBlock block;
  block.target_time = t;
  block.lag = k;
  for (int i = 0; i < data.n(); ++i) {
    if (data.waves[t].censored[i] == 0) block.subjects.push_back(i);
  }
  block.group.reserve(block.subjects.size());
  for (const int i : block.subjects) {
    block.group.push_back(static_cast<int>(data.waves[t].treatment[i]));
  }
  EncodedWave enc = encode_wave(data, t - k, block.subjects);
  block.columns = std::move(enc.columns);
  block.column_names = std::move(enc.column_names);
  block.column_kinds = std::move(enc.column_kinds);
  block.column_levels = std::move(enc.column_levels);
  return block;
}

}  // namespace bg
