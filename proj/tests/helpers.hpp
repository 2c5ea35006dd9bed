#pragma once

#include "balancegauge/metrics.hpp"
#include "balancegauge/panel.hpp"

#include <json.hpp>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace bgtest {

inline std::string fixture_path(const std::string& name) {
  return std::string(BG_FIXTURE_DIR) + "/" + name;
}

inline nlohmann::json load_fixture(const std::string& name) {
  std::ifstream in(fixture_path(name));
  REQUIRE(in.good());
  nlohmann::json j;
  in >> j;
  return j;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Unique per-process scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("bgtest_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

// Builds a standalone covariate block (no panel behind it), the form the
// metric functions consume. Levels for non-continuous columns are the sorted
// distinct observed values.
inline bg::CovariateBlock make_block(
    const std::vector<std::vector<double>>& columns,
    const std::vector<int>& group, const std::vector<std::string>& names,
    const std::vector<bg::CovariateKind>& kinds) {
  bg::CovariateBlock block;
  const int n = static_cast<int>(group.size());
  const int p = static_cast<int>(columns.size());
  block.columns.resize(n, p);
  for (int j = 0; j < p; ++j) {
    REQUIRE(static_cast<int>(columns[j].size()) == n);
    for (int i = 0; i < n; ++i) block.columns(i, j) = columns[j][i];
  }
  block.group = group;
  block.subjects.resize(n);
  for (int i = 0; i < n; ++i) block.subjects[i] = i;
  block.column_names = names;
  block.column_kinds = kinds;
  block.column_levels.resize(p);
  for (int j = 0; j < p; ++j) {
    if (kinds[j] == bg::CovariateKind::continuous) continue;
    std::vector<double> levels = columns[j];
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    block.column_levels[j] = levels;
  }
  return block;
}

inline bg::WeightSet custom_weights(std::vector<double> values) {
  bg::WeightSet w;
  w.family = bg::WeightFamily::custom;
  w.values = std::move(values);
  return w;
}

// Random block generator for property tests: mixes continuous, binary and
// ordinal columns with non-uniform weights.
inline bg::CovariateBlock random_block(std::mt19937& gen, int n, int p,
                                       std::vector<double>* weights) {
  std::normal_distribution<double> norm;
  std::uniform_real_distribution<double> unif;
  std::vector<std::vector<double>> cols(p);
  std::vector<std::string> names(p);
  std::vector<bg::CovariateKind> kinds(p);
  for (int j = 0; j < p; ++j) {
    names[j] = "x" + std::to_string(j);
    const int kind = static_cast<int>(unif(gen) * 3.0);
    const double shift = norm(gen) * 0.5;
    cols[j].resize(n);
    if (kind == 0) {
      kinds[j] = bg::CovariateKind::continuous;
      for (int i = 0; i < n; ++i) cols[j][i] = norm(gen) + (i < n / 2 ? shift : 0.0);
    } else if (kind == 1) {
      kinds[j] = bg::CovariateKind::binary;
      for (int i = 0; i < n; ++i) {
        const double pr = i < n / 2 ? 0.5 + 0.3 * std::tanh(shift) : 0.5;
        cols[j][i] = unif(gen) < pr ? 1.0 : 0.0;
      }
    } else {
      kinds[j] = bg::CovariateKind::ordinal;
      for (int i = 0; i < n; ++i) {
        const double u = unif(gen) + (i < n / 2 ? 0.2 * std::tanh(shift) : 0.0);
        cols[j][i] = 1.0 + std::floor(std::clamp(u, 0.0, 0.999) * 4.0);
      }
    }
  }
  std::vector<int> group(n);
  for (int i = 0; i < n; ++i) group[i] = i < n / 2 ? 1 : 0;
  if (weights) {
    weights->resize(n);
    for (int i = 0; i < n; ++i) (*weights)[i] = 0.25 + unif(gen) * 2.0;
  }
  return make_block(cols, group, names, kinds);
}

}  // namespace bgtest
