#pragma once

// Aggregation layer for multi-index estimates: per-index records, the
// summed multi-index estimator, outer-sample allocation across indices, the
// H-weighted ratio estimators shared by the MCMC and SMC backends, and
// least-squares fitting of the empirical decay/cost exponents.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mismc2/multi_index.hpp"

namespace mismc2 {

struct EstimateRecord {
  MultiIndex alpha;
  double value = 0.0;       // signed difference estimate at alpha
  int n_alpha = 0;          // outer sample count used
  double cost_units = 0.0;  // simulation work units spent
  std::uint64_t seed = 0;
  int replicate = 0;
  int n = 0;                // time index of the estimate
};

inline std::string records_csv_header() {
  return "alpha_x,alpha_t,n_alpha,value,cost_units,seed,replicate,n\n";
}

inline std::string record_to_csv(const EstimateRecord& r) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.17g,%.17g,%llu,%d,%d\n", r.alpha[0], r.alpha[1],
                r.n_alpha, r.value, r.cost_units,
                static_cast<unsigned long long>(r.seed), r.replicate, r.n);
  return buf;
}

/// Sum of per-index values over an index set; every index must be present.
inline double combine(const std::map<MultiIndex, double>& per_index,
                      const std::vector<MultiIndex>& index_set) {
  double total = 0.0;
  for (const MultiIndex& alpha : index_set) {
    auto it = per_index.find(alpha);
    if (it == per_index.end())
      throw std::out_of_range("combine: missing estimate for index " + alpha.str());
    total += it->second;
  }
  return total;
}

/// Replicate-mean per index, then sum over the set.
inline double combine(std::span<const EstimateRecord> records,
                      const std::vector<MultiIndex>& index_set) {
  std::map<MultiIndex, std::pair<double, int>> acc;
  for (const auto& r : records) {
    auto& slot = acc[r.alpha];
    slot.first += r.value;
    slot.second += 1;
  }
  std::map<MultiIndex, double> means;
  for (const auto& [alpha, slot] : acc) means[alpha] = slot.first / slot.second;
  return combine(means, index_set);
}

struct AllocationRule {
  double c = 1.0;    // calibration constant (the rule is a proportionality)
  int n_min = 50;    // floor keeping ratio estimators well-defined
};

/// Pre-floor allocation eps^{-2} m_x 2^{-a_x - 3 a_t / 2}, scaled by c.
inline double allocation_raw(double eps, int m_x, const MultiIndex& alpha, double c = 1.0) {
  if (!(eps > 0.0)) throw std::invalid_argument("allocate_n: eps must be > 0");
  return c / (eps * eps) * m_x * std::exp2(-alpha[0] - 1.5 * alpha[1]);
}

/// Outer sample counts for every index of the tensor set with max levels
/// (m_x, m_t).
inline std::map<MultiIndex, int> allocate_n(double eps, const std::vector<int>& max_levels,
                                            const AllocationRule& rule = {}) {
  std::map<MultiIndex, int> out;
  for (const MultiIndex& alpha : tensor_index_set(max_levels)) {
    const double raw = allocation_raw(eps, max_levels[0], alpha, rule.c);
    out[alpha] = std::max(rule.n_min, static_cast<int>(std::ceil(raw)));
  }
  return out;
}

/// One path sample feeding the ratio estimators: the test function evaluated
/// per component, and the per-component accumulated log importance ratios.
struct PathSample {
  std::vector<double> phi;
  std::vector<double> log_h;
};

/// Ratio estimator sum_l phi_l H_l / sum_l H_l for one component, computed
/// with a common max-subtracted scaling of the H weights.
inline double eta_ratio(std::span<const PathSample> samples, int component) {
  double max_lh = -std::numeric_limits<double>::infinity();
  for (const auto& s : samples)
    max_lh = std::max(max_lh, s.log_h[static_cast<std::size_t>(component)]);
  if (!std::isfinite(max_lh))
    throw std::runtime_error("H-weight collapse at component " + std::to_string(component));
  double num = 0.0, den = 0.0;
  for (const auto& s : samples) {
    const double h = std::exp(s.log_h[static_cast<std::size_t>(component)] - max_lh);
    num += s.phi[static_cast<std::size_t>(component)] * h;
    den += h;
  }
  return num / den;
}

/// Signed difference estimate: sum_i sign_i (eta(upper_i) - eta(lower_i)),
/// or the plain ratio when the expansion has a single term.
inline double dod_from_samples(std::span<const PathSample> samples, const DodExpansion& e) {
  if (e.k() == 1) return eta_ratio(samples, 0);
  double acc = 0.0;
  for (int i = 0; i < e.pair_count(); ++i)
    acc += e.pair_signs[i] * (eta_ratio(samples, 2 * i + 1) - eta_ratio(samples, 2 * i));
  return acc;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
};

inline LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  const int n = static_cast<int>(x.size());
  if (n < 2 || y.size() != x.size()) throw std::invalid_argument("fit_line: need >= 2 points");
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (int i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_line: degenerate abscissa");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (n > 2) {
    double rss = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = y[i] - (f.intercept + f.slope * x[i]);
      rss += r * r;
    }
    f.slope_se = std::sqrt(rss / (n - 2) / sxx);
  }
  return f;
}

/// Empirical rate exponents per axis: variance decay (beta), mean decay (w),
/// and cost growth (gamma), each from a least-squares slope along the axis
/// line with the other axis held at its maximum level.
struct RateFit {
  std::vector<double> beta, beta_se;
  std::vector<double> w, w_se;
  std::vector<double> gamma, gamma_se;
};

struct RateFitOptions {
  int min_level = 0;  // drop line points below this level (boundary families)
};

inline RateFit fit_rates(std::span<const EstimateRecord> records,
                         const std::map<MultiIndex, double>& truth_increments = {},
                         const RateFitOptions& opts = {}) {
  if (records.empty()) throw std::invalid_argument("fit_rates: no records");
  const int d = records[0].alpha.dim();

  struct Group {
    std::vector<double> values;
    double cost = 0.0;
    int n_alpha = 0;
  };
  std::map<MultiIndex, Group> groups;
  std::vector<int> max_level(static_cast<std::size_t>(d), 0);
  for (const auto& r : records) {
    auto& g = groups[r.alpha];
    g.values.push_back(r.value);
    g.cost += r.cost_units;
    g.n_alpha = r.n_alpha;
    for (int i = 0; i < d; ++i)
      max_level[static_cast<std::size_t>(i)] = std::max(max_level[static_cast<std::size_t>(i)], r.alpha[i]);
  }

  RateFit fit;
  fit.beta.resize(d);
  fit.beta_se.resize(d);
  fit.w.resize(d);
  fit.w_se.resize(d);
  fit.gamma.resize(d);
  fit.gamma_se.resize(d);
  for (int axis = 0; axis < d; ++axis) {
    std::vector<double> xs, log_var, log_mean, log_cost;
    for (int level = opts.min_level; level <= max_level[static_cast<std::size_t>(axis)]; ++level) {
      std::vector<int> coords(max_level.begin(), max_level.end());
      coords[static_cast<std::size_t>(axis)] = level;
      MultiIndex alpha(coords);
      auto it = groups.find(alpha);
      if (it == groups.end()) continue;
      const Group& g = it->second;
      if (g.values.size() < 2)
        throw std::invalid_argument("fit_rates: need replicates at " + alpha.str());
      double mean = 0.0;
      for (double v : g.values) mean += v;
      mean /= static_cast<double>(g.values.size());
      double var = 0.0;
      for (double v : g.values) var += (v - mean) * (v - mean);
      var /= static_cast<double>(g.values.size() - 1);
      xs.push_back(level);
      log_var.push_back(std::log2(g.n_alpha * var));
      double mean_mag = std::abs(mean);
      auto truth_it = truth_increments.find(alpha);
      if (truth_it != truth_increments.end()) mean_mag = std::abs(truth_it->second);
      log_mean.push_back(std::log2(mean_mag));
      log_cost.push_back(std::log2(g.cost / (g.values.size() * static_cast<double>(g.n_alpha))));
    }
    if (xs.size() < 2)
      throw std::invalid_argument("fit_rates: need >= 2 levels along axis " + std::to_string(axis));
    LinearFit fv = fit_line(xs, log_var);
    LinearFit fm = fit_line(xs, log_mean);
    LinearFit fc = fit_line(xs, log_cost);
    fit.beta[static_cast<std::size_t>(axis)] = -fv.slope;
    fit.beta_se[static_cast<std::size_t>(axis)] = fv.slope_se;
    fit.w[static_cast<std::size_t>(axis)] = -fm.slope;
    fit.w_se[static_cast<std::size_t>(axis)] = fm.slope_se;
    fit.gamma[static_cast<std::size_t>(axis)] = fc.slope;
    fit.gamma_se[static_cast<std::size_t>(axis)] = fc.slope_se;
  }
  return fit;
}

}  // namespace mismc2
