#include "balancegauge/metrics.hpp"

#include "balancegauge/common.hpp"
#include "balancegauge/csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

namespace bg {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kGridN = 512;
// Fine-bin centers subdivide the output grid exactly 8x, so kernel offsets
// form a lattice and the Gaussian factors can be tabulated.
constexpr int kFineRatio = 8;
constexpr int kFineN = kFineRatio * (kGridN - 1) + 1;

double wmean(const std::vector<double>& x, const std::vector<double>& w) {
  double sx = 0.0, sw = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += w[i] * x[i];
    sw += w[i];
  }
  return sx / sw;
}

// Weights rescaled to sum to the raw count m, then the unbiased /(m-1) form;
// reduces to the textbook variance under unit weights.
double wvar(const std::vector<double>& x, const std::vector<double>& w) {
  const std::size_t m = x.size();
  if (m < 2) return 0.0;
  double sw = 0.0;
  for (const double v : w) sw += v;
  const double scale = static_cast<double>(m) / sw;
  double mu = 0.0;
  for (std::size_t i = 0; i < m; ++i) mu += w[i] * scale * x[i];
  mu /= static_cast<double>(m);
  double ss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double c = x[i] - mu;
    ss += w[i] * scale * c * c;
  }
  return ss / static_cast<double>(m - 1);
}

struct SplitBlock {
  std::vector<int> rows1, rows0;  // block rows with an available weight
  std::vector<double> w1, w0;
};

double weight_at(const WeightSet& w, int subject) {
  if (subject < 0 || static_cast<std::size_t>(subject) >= w.values.size()) {
    throw std::invalid_argument("weight set does not cover subject index " +
                                std::to_string(subject));
  }
  return w.values[subject];
}

SplitBlock split_block(const CovariateBlock& block, const WeightSet& w) {
  SplitBlock sb;
  for (std::size_t r = 0; r < block.subjects.size(); ++r) {
    const double wv = weight_at(w, block.subjects[r]);
    if (std::isnan(wv)) continue;
    if (block.group[r] == 1) {
      sb.rows1.push_back(static_cast<int>(r));
      sb.w1.push_back(wv);
    } else {
      sb.rows0.push_back(static_cast<int>(r));
      sb.w0.push_back(wv);
    }
  }
  return sb;
}

void require_groups(const SplitBlock& sb, const char* op) {
  if (sb.rows1.empty() || sb.rows0.empty()) {
    throw DataError(std::string(op) + ": a treatment group is empty (after "
                    "dropping rows without weights)");
  }
}

std::vector<double> column_values(const CovariateBlock& block,
                                  const std::vector<int>& rows, int j) {
  std::vector<double> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out[r] = block.columns(rows[r], j);
  }
  return out;
}

void check_column(const CovariateBlock& block, int j) {
  if (j < 0 || j >= block.columns.cols()) {
    throw std::invalid_argument("covariate index out of range");
  }
}

// Weight-normalized ECDF over a sorted copy of one group.
struct Wecdf {
  std::vector<double> xs;
  std::vector<double> cw;  // raw cumulative weights
  double total = 0.0;

  Wecdf(std::vector<double> x, const std::vector<double>& w) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    xs.resize(x.size());
    cw.resize(x.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      xs[i] = x[idx[i]];
      acc += w[idx[i]];
      cw[i] = acc;
    }
    total = acc;
  }

  double at(double v) const {
    const auto it = std::upper_bound(xs.begin(), xs.end(), v);
    if (it == xs.begin()) return 0.0;
    return cw[static_cast<std::size_t>(it - xs.begin()) - 1] / total;
  }

  // F at an increasing query sequence via a running pointer.
  void at_shifted(const std::vector<double>& grid, double eps,
                  std::vector<double>& out) const {
    out.resize(grid.size());
    std::size_t j = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double q = grid[i] + eps;
      while (j < xs.size() && xs[j] <= q) ++j;
      out[i] = j > 0 ? cw[j - 1] / total : 0.0;
    }
  }
};

struct KsLv {
  double ks = 0.0;
  double lv = 0.0;
};

KsLv ks_levy_impl(const std::vector<double>& x1, const std::vector<double>& w1,
                  const std::vector<double>& x0,
                  const std::vector<double>& w0) {
  const Wecdf F1(x1, w1);
  const Wecdf F0(x0, w0);
  std::vector<double> grid;
  grid.reserve(x1.size() + x0.size());
  grid.insert(grid.end(), x1.begin(), x1.end());
  grid.insert(grid.end(), x0.begin(), x0.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  std::vector<double> F1g, F0g, F1p, F0p;
  F1.at_shifted(grid, 0.0, F1g);
  F0.at_shifted(grid, 0.0, F0g);
  KsLv out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    out.ks = std::max(out.ks, std::abs(F1g[i] - F0g[i]));
  }

  // Two-sided feasibility of a given band width at every breakpoint.
  const auto ok = [&](double eps) {
    F0.at_shifted(grid, eps, F0p);
    F1.at_shifted(grid, eps, F1p);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (F1g[i] > F0p[i] + eps + 1e-12) return false;
      if (F0g[i] - eps > F1p[i] + 1e-12) return false;
    }
    return true;
  };

  if (ok(0.0)) {
    out.lv = 0.0;
    return out;
  }
  double lo = 0.0, hi = out.ks;
  while (hi - lo > 1e-6) {
    const double mid = 0.5 * (lo + hi);
    if (ok(mid)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  out.lv = hi;
  return out;
}

// np.interp-style piecewise-linear lookup on an increasing abscissa.
double interp(double q, const std::vector<double>& xp,
              const std::vector<double>& fp) {
  if (q <= xp.front()) return fp.front();
  if (q >= xp.back()) return fp.back();
  const auto it = std::upper_bound(xp.begin(), xp.end(), q);
  const std::size_t i = static_cast<std::size_t>(it - xp.begin());
  const double t = (q - xp[i - 1]) / (xp[i] - xp[i - 1]);
  return fp[i - 1] + t * (fp[i] - fp[i - 1]);
}

// Weighted Silverman bandwidth with effective sample size.
double silverman_bw(const std::vector<double>& x,
                    const std::vector<double>& w) {
  double sw = 0.0, sw2 = 0.0;
  for (const double v : w) {
    sw += v;
    sw2 += v * v;
  }
  const double m_eff = sw * sw / sw2;
  const double sd = std::sqrt(wvar(x, w));
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> xs(x.size()), cw(x.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    xs[i] = x[idx[i]];
    acc += w[idx[i]];
    cw[i] = acc;
  }
  for (double& v : cw) v /= acc;
  const double iqr = interp(0.75, cw, xs) - interp(0.25, cw, xs);
  const double s = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  return std::max(0.9 * s * std::pow(m_eff, -0.2), 1e-12);
}

// Weighted Gaussian KDE on the shared output grid: samples are linearly
// binned onto the 8x fine lattice, then convolved with a tabulated kernel.
std::vector<double> kde_on_grid(const std::vector<double>& x,
                                const std::vector<double>& w, double b,
                                double lo, double dxf) {
  std::vector<double> bins(kFineN, 0.0);
  double sw = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double pos = (x[i] - lo) / dxf;
    double jf = std::floor(pos);
    const double frac = pos - jf;
    long j = static_cast<long>(jf);
    j = std::min(std::max(j, 0L), static_cast<long>(kFineN - 2));
    bins[j] += w[i] * (1.0 - frac);
    bins[j + 1] += w[i] * frac;
    sw += w[i];
  }
  long radius = static_cast<long>(std::ceil(9.0 * b / dxf));
  radius = std::min(radius, static_cast<long>(kFineN - 1));
  std::vector<double> table(radius + 1);
  for (long d = 0; d <= radius; ++d) {
    const double z = static_cast<double>(d) * dxf / b;
    table[d] = std::exp(-0.5 * z * z);
  }
  const double norm = sw * b * std::sqrt(2.0 * M_PI);
  std::vector<double> dens(kGridN);
  for (int g = 0; g < kGridN; ++g) {
    const long center = static_cast<long>(g) * kFineRatio;
    const long i_lo = std::max(0L, center - radius);
    const long i_hi = std::min(static_cast<long>(kFineN - 1), center + radius);
    double acc = 0.0;
    for (long i = i_lo; i <= i_hi; ++i) {
      acc += table[std::labs(center - i)] * bins[i];
    }
    dens[g] = acc / norm;
  }
  return dens;
}

struct KdePair {
  std::vector<double> d1, d0;
  double lo = 0.0, hi = 1.0, dx = 1.0;
};

KdePair kde_pair(const std::vector<double>& x1, const std::vector<double>& w1,
                 const std::vector<double>& x0,
                 const std::vector<double>& w0) {
  const double b1 = silverman_bw(x1, w1);
  const double b0 = silverman_bw(x0, w0);
  double mn = x1[0], mx = x1[0];
  for (const double v : x1) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  for (const double v : x0) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  KdePair out;
  out.lo = mn - 3.0 * std::max(b1, b0);
  out.hi = mx + 3.0 * std::max(b1, b0);
  out.dx = (out.hi - out.lo) / static_cast<double>(kGridN - 1);
  const double dxf = (out.hi - out.lo) / static_cast<double>(kFineN - 1);
  out.d1 = kde_on_grid(x1, w1, b1, out.lo, dxf);
  out.d0 = kde_on_grid(x0, w0, b0, out.lo, dxf);
  return out;
}

double ovl_continuous(const std::vector<double>& x1,
                      const std::vector<double>& w1,
                      const std::vector<double>& x0,
                      const std::vector<double>& w0) {
  const KdePair kp = kde_pair(x1, w1, x0, w0);
  double ov = 0.0;
  for (int g = 0; g + 1 < kGridN; ++g) {
    const double a = std::min(kp.d1[g], kp.d0[g]);
    const double b = std::min(kp.d1[g + 1], kp.d0[g + 1]);
    ov += 0.5 * (a + b) * kp.dx;
  }
  return 1.0 - std::min(ov, 1.0);
}

double ovl_discrete(const std::vector<double>& x1,
                    const std::vector<double>& w1,
                    const std::vector<double>& x0,
                    const std::vector<double>& w0,
                    const std::vector<double>& levels) {
  double overlap = 0.0;
  for (const double lv : levels) {
    std::vector<double> i1(x1.size()), i0(x0.size());
    for (std::size_t r = 0; r < x1.size(); ++r) i1[r] = x1[r] == lv ? 1.0 : 0.0;
    for (std::size_t r = 0; r < x0.size(); ++r) i0[r] = x0[r] == lv ? 1.0 : 0.0;
    overlap += std::min(wmean(i1, w1), wmean(i0, w0));
  }
  return 1.0 - overlap;
}

struct WcovResult {
  Eigen::MatrixXd S;
  Eigen::VectorXd mu;
};

WcovResult weighted_cov(const Eigen::MatrixXd& X, const std::vector<double>& w) {
  const Eigen::Index m = X.rows();
  if (m < 2) throw DataError("mahalanobis_balance: group smaller than 2");
  double sw = 0.0;
  for (const double v : w) sw += v;
  Eigen::VectorXd wn(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    wn(i) = w[i] * (static_cast<double>(m) / sw);
  }
  WcovResult out;
  out.mu = (X.transpose() * wn) / static_cast<double>(m);
  const Eigen::MatrixXd Xc = X.rowwise() - out.mu.transpose();
  out.S = (Xc.transpose() * wn.asDiagonal() * Xc) / static_cast<double>(m - 1);
  return out;
}

Eigen::MatrixXd block_matrix(const CovariateBlock& block,
                             const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                      block.columns.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.row(r) = block.columns.row(rows[r]);
  }
  return out;
}

std::string cell_label(int t, int k, Metric m, const std::string& cov) {
  return "t=" + std::to_string(t) + ",k=" + std::to_string(k) + "," +
         metric_name(m) + "," + cov;
}

}  // namespace

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::D: return "D";
    case Metric::SMD: return "SMD";
    case Metric::OVL: return "OVL";
    case Metric::KS: return "KS";
    case Metric::LV: return "LV";
    case Metric::MHB: return "MHB";
    case Metric::CS: return "CS";
    case Metric::GWD: return "GWD";
  }
  return "D";
}

Metric metric_from_name(const std::string& name) {
  if (name == "D") return Metric::D;
  if (name == "SMD") return Metric::SMD;
  if (name == "OVL") return Metric::OVL;
  if (name == "KS") return Metric::KS;
  if (name == "LV" || name == "LD") return Metric::LV;
  if (name == "MHB") return Metric::MHB;
  if (name == "CS") return Metric::CS;
  if (name == "GWD") return Metric::GWD;
  throw DataError("unknown balance metric '" + name + "'");
}

bool metric_is_global(Metric m) {
  return m == Metric::MHB || m == Metric::CS || m == Metric::GWD;
}

double weighted_mean(const std::vector<double>& x,
                     const std::vector<double>& w) {
  if (x.size() != w.size() || x.empty()) {
    throw std::invalid_argument("weighted_mean: bad input lengths");
  }
  return wmean(x, w);
}

double weighted_variance(const std::vector<double>& x,
                         const std::vector<double>& w) {
  if (x.size() != w.size()) {
    throw std::invalid_argument("weighted_variance: bad input lengths");
  }
  return wvar(x, w);
}

double weighted_auc(const std::vector<double>& score,
                    const std::vector<int>& group,
                    const std::vector<double>& w) {
  const std::size_t n = score.size();
  if (group.size() != n || w.size() != n || n == 0) {
    throw std::invalid_argument("weighted_auc: bad input lengths");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return score[a] < score[b];
  });
  double auc = 0.0, cum0 = 0.0, tot1 = 0.0, tot0 = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    double g1 = 0.0, g0 = 0.0;
    while (j < n && score[idx[j]] == score[idx[i]]) {
      if (group[idx[j]] == 1) {
        g1 += w[idx[j]];
      } else {
        g0 += w[idx[j]];
      }
      ++j;
    }
    auc += g1 * (cum0 + 0.5 * g0);
    cum0 += g0;
    tot1 += g1;
    tot0 += g0;
    i = j;
  }
  if (tot1 <= 0.0 || tot0 <= 0.0) {
    throw DataError("weighted_auc: a group has no positive weight");
  }
  return auc / (tot1 * tot0);
}

double weighted_mean_diff(const CovariateBlock& block, const WeightSet& w,
                          int j) {
  check_column(block, j);
  const SplitBlock sb = split_block(block, w);
  require_groups(sb, "weighted_mean_diff");
  return std::abs(wmean(column_values(block, sb.rows1, j), sb.w1) -
                  wmean(column_values(block, sb.rows0, j), sb.w0));
}

double smd(const CovariateBlock& block, const WeightSet& w, int j) {
  check_column(block, j);
  const SplitBlock sb = split_block(block, w);
  require_groups(sb, "smd");
  const std::vector<double> x1 = column_values(block, sb.rows1, j);
  const std::vector<double> x0 = column_values(block, sb.rows0, j);
  const double d = std::abs(wmean(x1, sb.w1) - wmean(x0, sb.w0));
  const double s2 = 0.5 * (wvar(x1, sb.w1) + wvar(x0, sb.w0));
  if (s2 <= 0.0) {
    throw DataError("smd: zero pooled variance for '" +
                    block.column_names[j] + "' (constant covariate)");
  }
  return d / std::sqrt(s2);
}

double overlap_coefficient(const CovariateBlock& block, const WeightSet& w,
                           int j) {
  check_column(block, j);
  const SplitBlock sb = split_block(block, w);
  require_groups(sb, "overlap_coefficient");
  const std::vector<double> x1 = column_values(block, sb.rows1, j);
  const std::vector<double> x0 = column_values(block, sb.rows0, j);
  if (block.column_kinds[j] == CovariateKind::continuous) {
    return ovl_continuous(x1, sb.w1, x0, sb.w0);
  }
  return ovl_discrete(x1, sb.w1, x0, sb.w0, block.column_levels[j]);
}

double ks_distance(const CovariateBlock& block, const WeightSet& w, int j) {
  check_column(block, j);
  const SplitBlock sb = split_block(block, w);
  require_groups(sb, "ks_distance");
  return ks_levy_impl(column_values(block, sb.rows1, j), sb.w1,
                      column_values(block, sb.rows0, j), sb.w0)
      .ks;
}

double levy_distance(const CovariateBlock& block, const WeightSet& w, int j) {
  check_column(block, j);
  const SplitBlock sb = split_block(block, w);
  require_groups(sb, "levy_distance");
  return ks_levy_impl(column_values(block, sb.rows1, j), sb.w1,
                      column_values(block, sb.rows0, j), sb.w0)
      .lv;
}

double mahalanobis_balance(const CovariateBlock& block, const WeightSet& w) {
  const SplitBlock sb = split_block(block, w);
  require_groups(sb, "mahalanobis_balance");
  const WcovResult g1 = weighted_cov(block_matrix(block, sb.rows1), sb.w1);
  const WcovResult g0 = weighted_cov(block_matrix(block, sb.rows0), sb.w0);
  const Eigen::MatrixXd S = 0.5 * (g1.S + g0.S);
  const Eigen::VectorXd d = g1.mu - g0.mu;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(S);
  lu.setThreshold(1e-10);
  if (lu.isInvertible()) {
    return d.dot(lu.solve(d));
  }
  const auto rank = lu.rank();
  std::string dep;
  const auto& perm = lu.permutationQ().indices();
  for (Eigen::Index c = rank; c < S.cols(); ++c) {
    dep += (dep.empty() ? "" : ", ") + block.column_names[perm(c)];
  }
  warnings().emit("balance_metrics",
                  "pooled covariance matrix is singular (rank " +
                      std::to_string(rank) + " of " + std::to_string(S.cols()) +
                      "; dependent columns: " + dep +
                      "); using the pseudo-inverse");
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(S);
  cod.setThreshold(1e-10);
  return d.dot(cod.pseudoInverse() * d);
}

GwdResult gwd(const CovariateBlock& block, const WeightSet& w) {
  const SplitBlock sb = split_block(block, w);
  require_groups(sb, "gwd");
  const int p = static_cast<int>(block.columns.cols());
  GwdResult out;
  out.total_terms = (p + 1) * (p + 2) / 2;
  std::vector<double> prod1(sb.rows1.size()), prod0(sb.rows0.size());
  // Index 0 is the constant term X_0 = 1; main effects get weight 1/s_ab,
  // squares and cross products 0.5/s_ab.
  for (int a = 0; a <= p; ++a) {
    for (int b = a; b <= p; ++b) {
      for (std::size_t r = 0; r < sb.rows1.size(); ++r) {
        const double va = a == 0 ? 1.0 : block.columns(sb.rows1[r], a - 1);
        const double vb = b == 0 ? 1.0 : block.columns(sb.rows1[r], b - 1);
        prod1[r] = va * vb;
      }
      for (std::size_t r = 0; r < sb.rows0.size(); ++r) {
        const double va = a == 0 ? 1.0 : block.columns(sb.rows0[r], a - 1);
        const double vb = b == 0 ? 1.0 : block.columns(sb.rows0[r], b - 1);
        prod0[r] = va * vb;
      }
      const double s2 = 0.5 * (wvar(prod1, sb.w1) + wvar(prod0, sb.w0));
      if (s2 <= 0.0) continue;
      ++out.nondegenerate_terms;
      const double wt = (a == 0 ? 1.0 : 0.5) / std::sqrt(s2);
      out.sum += wt * std::abs(wmean(prod1, sb.w1) - wmean(prod0, sb.w0));
    }
  }
  if (out.nondegenerate_terms == 0) {
    warnings().emit("balance_metrics", "gwd: all product terms degenerate");
    out.mean_per_term = 0.0;
  } else {
    out.mean_per_term = out.sum / out.nondegenerate_terms;
  }
  return out;
}

CstatResult cstat_on(const Eigen::MatrixXd& columns,
                     const std::vector<std::string>& names,
                     const std::vector<int>& group,
                     const std::vector<double>& w, const DesignSpec& spec) {
  const DesignMatrix dm = build_design(columns, names, spec);
  const Eigen::Index m = dm.X.rows();
  Eigen::VectorXd y(m), wv(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    y(i) = group[i];
    wv(i) = w[i];
  }
  const GlmFit fit = fit_weighted_logistic(dm.X, y, wv, dm.column_names);
  const Eigen::VectorXd score = dm.X * fit.coefficients;
  CstatResult out;
  out.auc = weighted_auc(std::vector<double>(score.data(), score.data() + m),
                         group, w);
  out.normalized = 2.0 * (std::max(out.auc, 1.0 - out.auc) - 0.5);
  return out;
}

double post_weighting_cstat(const CovariateBlock& block, const WeightSet& w,
                            const DesignSpec& spec) {
  const SplitBlock sb = split_block(block, w);
  require_groups(sb, "post_weighting_cstat");
  std::vector<int> rows;
  rows.reserve(sb.rows1.size() + sb.rows0.size());
  rows.insert(rows.end(), sb.rows1.begin(), sb.rows1.end());
  rows.insert(rows.end(), sb.rows0.begin(), sb.rows0.end());
  std::sort(rows.begin(), rows.end());
  std::vector<int> group;
  std::vector<double> wv;
  for (const int r : rows) {
    group.push_back(block.group[r]);
    wv.push_back(weight_at(w, block.subjects[r]));
  }
  try {
    return cstat_on(block_matrix(block, rows), block.column_names, group, wv,
                    spec)
        .normalized;
  } catch (const NumericError& e) {
    warnings().emit("balance_metrics",
                    std::string("post_weighting_cstat unavailable: ") +
                        e.what());
    return kNaN;
  }
}

std::vector<std::pair<int, int>> balance_schedule(const PanelDataset& data) {
  std::vector<std::pair<int, int>> schedule;
  for (int t = 0; t < data.time_points(); ++t) {
    if (!data.waves[t].treatment_present) continue;
    for (int k = 0; k <= t; ++k) schedule.emplace_back(t, k);
  }
  return schedule;
}

BalanceReport balance_table(const PanelDataset& data, const WeightSet& w,
                            const std::vector<Metric>& metrics,
                            const std::vector<std::pair<int, int>>& schedule) {
  if (w.values.size() != static_cast<std::size_t>(data.n())) {
    throw std::invalid_argument("balance_table: weight set size mismatch");
  }
  if (w.family == WeightFamily::stabilized_SW) {
    warnings().emit("balance_metrics",
                    "balance checked under prior-treatment-stabilized weights; "
                    "these mask imbalance in earlier covariates, prefer the "
                    "marginal-stabilized family");
  }
  std::vector<Metric> wanted =
      metrics.empty() ? std::vector<Metric>(kAllMetrics.begin(),
                                            kAllMetrics.end())
                      : metrics;
  const std::vector<std::pair<int, int>> cells =
      schedule.empty() ? balance_schedule(data) : schedule;

  BalanceReport report;
  std::map<int, double> cs_cache;
  for (const auto& [t, k] : cells) {
    const CovariateBlock block = covariate_block(data, t, k);
    const int p = static_cast<int>(block.columns.cols());
    report.covariate_count = std::max(report.covariate_count, p);

    const auto add_cell = [&](Metric m, const std::string& cov, double value,
                              double threshold, bool available) {
      BalanceCell cell;
      cell.t = t;
      cell.k = k;
      cell.metric = m;
      cell.covariate = cov;
      cell.value = value;
      cell.threshold = threshold;
      cell.available = available;
      cell.flagged = available && !std::isnan(threshold) && value > threshold;
      report.cells.push_back(std::move(cell));
    };
    const auto add_aggregate = [&](Metric m, double value, bool available) {
      BalanceAggregate agg;
      agg.t = t;
      agg.k = k;
      agg.metric = m;
      agg.value = value;
      agg.available = available;
      report.aggregates.push_back(agg);
    };

    for (const Metric m : wanted) {
      if (!metric_is_global(m)) {
        double sum = 0.0;
        int avail = 0;
        for (int j = 0; j < p; ++j) {
          const double threshold = m == Metric::SMD ? 0.1 : kNaN;
          try {
            double v = 0.0;
            switch (m) {
              case Metric::D: v = weighted_mean_diff(block, w, j); break;
              case Metric::SMD: v = smd(block, w, j); break;
              case Metric::OVL: v = overlap_coefficient(block, w, j); break;
              case Metric::KS: v = ks_distance(block, w, j); break;
              default: v = levy_distance(block, w, j); break;
            }
            add_cell(m, block.column_names[j], v, threshold, true);
            sum += v;
            ++avail;
          } catch (const std::exception& e) {
            warnings().emit("balance_metrics",
                            cell_label(t, k, m, block.column_names[j]) +
                                " unavailable: " + e.what());
            add_cell(m, block.column_names[j], kNaN, threshold, false);
          }
        }
        add_aggregate(m, avail > 0 ? sum / avail : kNaN, avail > 0);
        continue;
      }
      if (m == Metric::MHB) {
        const double threshold = 0.01 * p;
        try {
          const double v = mahalanobis_balance(block, w);
          add_cell(m, "GLOBAL", v, threshold, true);
          add_aggregate(m, v, true);
        } catch (const std::exception& e) {
          warnings().emit("balance_metrics", cell_label(t, k, m, "GLOBAL") +
                                                 " unavailable: " + e.what());
          add_cell(m, "GLOBAL", kNaN, threshold, false);
          add_aggregate(m, kNaN, false);
        }
      } else if (m == Metric::GWD) {
        try {
          const double v = gwd(block, w).mean_per_term;
          add_cell(m, "GLOBAL", v, kNaN, true);
          add_aggregate(m, v, true);
        } catch (const std::exception& e) {
          warnings().emit("balance_metrics", cell_label(t, k, m, "GLOBAL") +
                                                 " unavailable: " + e.what());
          add_cell(m, "GLOBAL", kNaN, kNaN, false);
          add_aggregate(m, kNaN, false);
        }
      } else {  // CS: one refit per target time on the cumulative design
        auto it = cs_cache.find(t);
        if (it == cs_cache.end()) {
          double v = kNaN;
          try {
            std::vector<int> subjects;
            std::vector<int> group;
            std::vector<double> wv;
            for (std::size_t r = 0; r < block.subjects.size(); ++r) {
              const double wvr = weight_at(w, block.subjects[r]);
              if (std::isnan(wvr)) continue;
              subjects.push_back(block.subjects[r]);
              group.push_back(block.group[r]);
              wv.push_back(wvr);
            }
            const EncodedWave design = history_design(data, t, -1, subjects);
            v = cstat_on(design.columns, design.column_names, group, wv,
                         DesignSpec{})
                    .normalized;
          } catch (const std::exception& e) {
            warnings().emit("balance_metrics",
                            cell_label(t, k, m, "GLOBAL") +
                                " unavailable: " + e.what());
          }
          it = cs_cache.emplace(t, v).first;
        }
        const bool available = !std::isnan(it->second);
        add_cell(m, "GLOBAL", it->second, kNaN, available);
        add_aggregate(m, it->second, available);
      }
    }
  }
  return report;
}

std::string balance_report_json(const BalanceReport& report) {
  nlohmann::ordered_json root;
  root["covariate_count"] = report.covariate_count;
  nlohmann::ordered_json cells = nlohmann::ordered_json::object();
  for (const auto& cell : report.cells) {
    nlohmann::ordered_json entry;
    if (cell.available) {
      entry["value"] = cell.value;
    } else {
      entry["value"] = nullptr;
    }
    if (!std::isnan(cell.threshold)) {
      entry["threshold"] = cell.threshold;
      entry["flag"] = cell.flagged;
    }
    cells[std::to_string(cell.t)][std::to_string(cell.k)]
         [metric_name(cell.metric)][cell.covariate] = std::move(entry);
  }
  root["cells"] = std::move(cells);
  nlohmann::ordered_json aggs = nlohmann::ordered_json::array();
  for (const auto& agg : report.aggregates) {
    nlohmann::ordered_json entry;
    entry["t"] = agg.t;
    entry["k"] = agg.k;
    entry["metric"] = metric_name(agg.metric);
    if (agg.available) {
      entry["value"] = agg.value;
    } else {
      entry["value"] = nullptr;
    }
    aggs.push_back(std::move(entry));
  }
  root["aggregates"] = std::move(aggs);
  return root.dump(2);
}

void write_balance_csv(const BalanceReport& report, const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(report.cells.size());
  for (const auto& cell : report.cells) {
    rows.push_back({std::to_string(cell.t), std::to_string(cell.k),
                    metric_name(cell.metric), cell.covariate,
                    cell.available ? format_double(cell.value) : "",
                    std::isnan(cell.threshold) ? ""
                                               : format_double(cell.threshold),
                    cell.available && !std::isnan(cell.threshold)
                        ? (cell.flagged ? "1" : "0")
                        : ""});
  }
  write_csv(path, {"t", "k", "metric", "covariate", "value", "threshold",
                   "flag"},
            rows);
}

std::vector<CurvePoint> ecdf_curve(const CovariateBlock& block,
                                   const WeightSet& w, int j) {
  check_column(block, j);
  const SplitBlock sb = split_block(block, w);
  require_groups(sb, "ecdf_curve");
  const Wecdf F1(column_values(block, sb.rows1, j), sb.w1);
  const Wecdf F0(column_values(block, sb.rows0, j), sb.w0);
  std::vector<double> grid;
  grid.insert(grid.end(), F1.xs.begin(), F1.xs.end());
  grid.insert(grid.end(), F0.xs.begin(), F0.xs.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  std::vector<CurvePoint> out;
  out.reserve(grid.size());
  for (const double v : grid) {
    out.push_back({v, F1.at(v), F0.at(v)});
  }
  return out;
}

std::vector<CurvePoint> density_curve(const CovariateBlock& block,
                                      const WeightSet& w, int j) {
  check_column(block, j);
  if (block.column_kinds[j] != CovariateKind::continuous) {
    throw std::invalid_argument(
        "density_curve: only defined for continuous covariates");
  }
  const SplitBlock sb = split_block(block, w);
  require_groups(sb, "density_curve");
  const KdePair kp = kde_pair(column_values(block, sb.rows1, j), sb.w1,
                              column_values(block, sb.rows0, j), sb.w0);
  std::vector<CurvePoint> out;
  out.reserve(kGridN);
  for (int g = 0; g < kGridN; ++g) {
    out.push_back({kp.lo + g * kp.dx, kp.d1[g], kp.d0[g]});
  }
  return out;
}

WeightSet unit_weights(int n) {
  WeightSet ws;
  ws.family = WeightFamily::custom;
  ws.values.assign(static_cast<std::size_t>(n), 1.0);
  return ws;
}

}  // namespace bg
