#pragma once

// Index-set algebra for mixed-difference (difference-of-differences)
// estimators: multi-indices over discretization axes, tensor-product and
// total-degree index sets, and the signed expansion of the mixed difference
// operator into coupled pairs of neighbouring levels.

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mismc2 {

/// A vector of non-negative discretization levels, one per discretized axis.
class MultiIndex {
 public:
  MultiIndex() = default;
  explicit MultiIndex(std::vector<int> levels) : levels_(std::move(levels)) { check(); }
  MultiIndex(std::initializer_list<int> levels) : levels_(levels) { check(); }

  int dim() const { return static_cast<int>(levels_.size()); }
  int operator[](int axis) const { return levels_[static_cast<std::size_t>(axis)]; }
  const std::vector<int>& levels() const { return levels_; }

  /// Coordinate sum |alpha|_1.
  int sum() const { return std::accumulate(levels_.begin(), levels_.end(), 0); }

  bool any_positive() const {
    return std::any_of(levels_.begin(), levels_.end(), [](int a) { return a > 0; });
  }

  /// alpha - e_axis; requires levels_[axis] > 0.
  MultiIndex decrement(int axis) const {
    if (levels_[static_cast<std::size_t>(axis)] <= 0)
      throw std::invalid_argument("MultiIndex::decrement: level already zero");
    std::vector<int> v = levels_;
    --v[static_cast<std::size_t>(axis)];
    return MultiIndex(std::move(v));
  }

  auto operator<=>(const MultiIndex&) const = default;

  std::string str() const {
    std::string s = "(";
    for (int i = 0; i < dim(); ++i) s += (i ? "," : "") + std::to_string(levels_[i]);
    return s + ")";
  }

  /// CSV form "a1,a2,...,ad".
  std::string csv() const {
    std::string s;
    for (int i = 0; i < dim(); ++i) s += (i ? "," : "") + std::to_string(levels_[i]);
    return s;
  }

 private:
  void check() const {
    if (levels_.empty()) throw std::invalid_argument("dimension must be >= 1");
    for (int a : levels_)
      if (a < 0) throw std::invalid_argument("MultiIndex levels must be non-negative");
  }
  std::vector<int> levels_;
};

inline std::ostream& operator<<(std::ostream& os, const MultiIndex& a) { return os << a.str(); }

/// Compare from the last axis backwards (colexicographic order).
inline bool colex_less(const MultiIndex& a, const MultiIndex& b) {
  for (int i = a.dim() - 1; i >= 0; --i) {
    if (a[i] != b[i]) return a[i] < b[i];
  }
  return false;
}

/// All alpha with 0 <= alpha_i <= max_levels_i, in lexicographic order.
inline std::vector<MultiIndex> tensor_index_set(const std::vector<int>& max_levels) {
  if (max_levels.empty()) throw std::invalid_argument("dimension must be >= 1");
  for (int m : max_levels)
    if (m < 0) throw std::invalid_argument("tensor_index_set: bounds must be >= 0");
  const int d = static_cast<int>(max_levels.size());
  std::vector<MultiIndex> out;
  std::vector<int> cur(max_levels.size(), 0);
  while (true) {
    out.emplace_back(cur);
    int axis = d - 1;
    while (axis >= 0 && cur[axis] == max_levels[axis]) {
      cur[axis] = 0;
      --axis;
    }
    if (axis < 0) break;
    ++cur[axis];
  }
  return out;
}

/// All alpha with sum_i alpha_i * zeta_i <= budget, lexicographic order.
/// The result is downward closed because the weights are positive.
inline std::vector<MultiIndex> total_degree_index_set(const std::vector<double>& zeta,
                                                      double budget) {
  if (zeta.empty()) throw std::invalid_argument("dimension must be >= 1");
  for (double z : zeta)
    if (!(z > 0.0)) throw std::invalid_argument("total_degree_index_set: weights must be positive");
  if (budget < 0.0) throw std::invalid_argument("total_degree_index_set: budget must be >= 0");
  const int d = static_cast<int>(zeta.size());
  std::vector<MultiIndex> out;
  std::vector<int> cur(zeta.size(), 0);
  auto weight = [&](const std::vector<int>& v) {
    double w = 0.0;
    for (int i = 0; i < d; ++i) w += v[i] * zeta[i];
    return w;
  };
  // Odometer with pruning: each axis is capped by the remaining budget.
  while (true) {
    if (weight(cur) <= budget) out.emplace_back(cur);
    int axis = d - 1;
    while (axis >= 0) {
      ++cur[axis];
      if (weight(cur) <= budget) break;
      cur[axis] = 0;
      --axis;
    }
    if (axis < 0) break;
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Declarative index-set description (used by plans and the CLI).
struct IndexSet {
  enum class Kind { tensor, total_degree };
  Kind kind = Kind::tensor;
  std::vector<int> max_levels;  // tensor
  std::vector<double> zeta;     // total_degree
  double budget = 0.0;          // total_degree

  std::vector<MultiIndex> contents() const {
    return kind == Kind::tensor ? tensor_index_set(max_levels)
                                : total_degree_index_set(zeta, budget);
  }
};

/// Signed expansion of the mixed difference at alpha into k terms grouped in
/// consecutive (lower, upper) pairs; each pair differs by one unit on a single
/// axis, and the signed sum of pair differences reproduces the nested
/// single-axis differencing of a value table.
struct DodExpansion {
  MultiIndex alpha;
  std::vector<MultiIndex> terms;
  std::vector<int> pair_signs;  // one per pair; empty when k() == 1

  int k() const { return static_cast<int>(terms.size()); }
  int pair_count() const { return static_cast<int>(pair_signs.size()); }
  const MultiIndex& term(int i) const { return terms[static_cast<std::size_t>(i)]; }
};

/// Expand alpha into its coupled difference terms.
///
/// Terms are alpha minus subsets of unit vectors on the positive axes. Pairing
/// runs along the first positive axis; the remaining positive axes enumerate
/// the pairs. Pairs are ordered by (coordinate sum, colex) of their upper
/// term, which puts terms in nondecreasing coordinate-sum order for d <= 2 and
/// ends with alpha itself. The sign of a pair with upper term beta is
/// (-1)^{|alpha - beta|_1}.
inline DodExpansion dod_expand(const MultiIndex& alpha) {
  DodExpansion e;
  e.alpha = alpha;
  std::vector<int> positive;
  for (int i = 0; i < alpha.dim(); ++i)
    if (alpha[i] > 0) positive.push_back(i);
  if (positive.empty()) {
    e.terms = {alpha};
    return e;
  }
  const int pair_axis = positive.front();
  const std::vector<int> rest(positive.begin() + 1, positive.end());

  struct Pair {
    MultiIndex lower, upper;
    int sign;
  };
  std::vector<Pair> pairs;
  const std::size_t subsets = std::size_t{1} << rest.size();
  for (std::size_t mask = 0; mask < subsets; ++mask) {
    MultiIndex upper = alpha;
    int decrements = 0;
    for (std::size_t j = 0; j < rest.size(); ++j) {
      if (mask & (std::size_t{1} << j)) {
        upper = upper.decrement(rest[j]);
        ++decrements;
      }
    }
    pairs.push_back({upper.decrement(pair_axis), upper, (decrements % 2 == 0) ? +1 : -1});
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    const int sa = a.upper.sum(), sb = b.upper.sum();
    if (sa != sb) return sa < sb;
    return colex_less(a.upper, b.upper);
  });
  for (const Pair& p : pairs) {
    e.terms.push_back(p.lower);
    e.terms.push_back(p.upper);
    e.pair_signs.push_back(p.sign);
  }
  return e;
}

/// Evaluate the signed pair differences of an expansion on a table of
/// per-index values: sum_i sign_i * (v[upper_i] - v[lower_i]), or v[alpha]
/// when the expansion is a single term.
inline double apply_dod(const DodExpansion& e, const std::map<MultiIndex, double>& values) {
  auto lookup = [&](const MultiIndex& idx) {
    auto it = values.find(idx);
    if (it == values.end())
      throw std::out_of_range("apply_dod: missing value for index " + idx.str());
    return it->second;
  };
  if (e.k() == 1) return lookup(e.alpha);
  double acc = 0.0;
  for (int i = 0; i < e.pair_count(); ++i)
    acc += e.pair_signs[i] * (lookup(e.term(2 * i + 1)) - lookup(e.term(2 * i)));
  return acc;
}

}  // namespace mismc2
