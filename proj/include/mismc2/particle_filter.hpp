#pragma once

// Bootstrap particle filter for the coupled multi-level target with a fixed
// noise amplitude: multinomial resampling every step, propagation through the
// coupled kernel, weighting by the max-coupled density. Per-level importance
// ratios (log H) and the running log normalizing constant are carried along
// particle lineages, so no trajectory storage is needed for the estimators
// built on top.

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "mismc2/model.hpp"
#include "mismc2/rng.hpp"

namespace mismc2 {

enum class Resampling { multinomial, systematic };

/// n iid categorical draws by inverse CDF over normalized probabilities.
inline void multinomial_indices(std::span<const double> probs, int n, RngStream& rng,
                                std::vector<int>& out) {
  const int m = static_cast<int>(probs.size());
  std::vector<double> cdf(probs.size());
  double acc = 0.0;
  for (int j = 0; j < m; ++j) {
    acc += probs[j];
    cdf[static_cast<std::size_t>(j)] = acc;
  }
  out.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform() * acc;
    int lo = 0, hi = m - 1;
    while (lo < hi) {
      const int mid = (lo + hi) / 2;
      if (cdf[static_cast<std::size_t>(mid)] < u) lo = mid + 1;
      else hi = mid;
    }
    out[static_cast<std::size_t>(i)] = lo;
  }
}

/// Systematic (stratified single-uniform) variant; diagnostics only.
inline void systematic_indices(std::span<const double> probs, int n, RngStream& rng,
                               std::vector<int>& out) {
  const int m = static_cast<int>(probs.size());
  out.resize(static_cast<std::size_t>(n));
  const double u0 = rng.uniform();
  double acc = probs[0];
  int j = 0;
  for (int i = 0; i < n; ++i) {
    const double u = (i + u0) / n;
    while (u > acc && j + 1 < m) acc += probs[++j];
    out[static_cast<std::size_t>(i)] = j;
  }
}

/// Test function evaluated on (noise amplitude, terminal component state).
using TestFunctional = std::function<double(double, std::span<const double>)>;

inline TestFunctional mean_parameter_functional() {
  return [](double sigma, std::span<const double>) { return sigma; };
}

struct PfOptions {
  int particles = 100;
  Resampling resampling = Resampling::multinomial;
  bool track_ancestry = false;
};

struct PfStepDiagnostics {
  int p = 0;
  double ess = 0.0;
  double log_z_increment = 0.0;
};

class ParticleFilter {
 public:
  /// Initialization: every particle at the deterministic initial condition,
  /// uniform weights, zero observations processed.
  ParticleFilter(const CoupledKernel& kernel, double sigma, PfOptions opts)
      : kernel_(&kernel), sigma_(sigma), opts_(opts) {
    if (opts_.particles < 1) throw std::invalid_argument("ParticleFilter: need >= 1 particle");
    const int N = opts_.particles;
    const int stride = kernel.state_stride();
    states_.resize(static_cast<std::size_t>(N) * stride);
    scratch_states_.resize(states_.size());
    for (int i = 0; i < N; ++i)
      kernel.init_state({states_.data() + static_cast<std::size_t>(i) * stride,
                         static_cast<std::size_t>(stride)});
    log_w_.assign(N, -std::log(static_cast<double>(N)));
    probs_.assign(N, 1.0 / N);
    log_h_.assign(static_cast<std::size_t>(N) * kernel.component_count(), 0.0);
    scratch_log_h_.resize(log_h_.size());
    noise_ws_.resize(kernel.workspace_size());
    log_g_ws_.resize(kernel.component_count());
  }

  int particle_count() const { return opts_.particles; }
  int time_index() const { return t_; }
  double log_normalizer() const { return log_z_; }
  double last_log_increment() const { return last_increment_; }
  std::uint64_t cost_units() const { return cost_; }
  const CoupledKernel& kernel() const { return *kernel_; }
  double sigma() const { return sigma_; }
  const std::vector<PfStepDiagnostics>& diagnostics() const { return diagnostics_; }
  const std::vector<std::vector<int>>& ancestry() const { return ancestry_; }

  double ess() const {
    double s = 0.0;
    for (double p : probs_) s += p * p;
    return 1.0 / s;
  }
  std::span<const double> log_weights() const { return log_w_; }
  std::span<const double> weights() const { return probs_; }

  std::span<const double> particle_state(int i) const {
    const int stride = kernel_->state_stride();
    return {states_.data() + static_cast<std::size_t>(i) * stride,
            static_cast<std::size_t>(stride)};
  }
  std::span<const double> particle_log_h(int i) const {
    const int k = kernel_->component_count();
    return {log_h_.data() + static_cast<std::size_t>(i) * k, static_cast<std::size_t>(k)};
  }

  /// One assimilation step: resample by the current weights, propagate one
  /// observation interval, reweight by the max-coupled density, accumulate
  /// log Z and the per-component log H ratios along the surviving lineages.
  void step(const Observation& obs, RngStream& rng) {
    const int N = opts_.particles;
    const int stride = kernel_->state_stride();
    const int k = kernel_->component_count();

    if (opts_.resampling == Resampling::multinomial)
      multinomial_indices(probs_, N, rng, resample_idx_);
    else
      systematic_indices(probs_, N, rng, resample_idx_);
    for (int i = 0; i < N; ++i) {
      const int a = resample_idx_[static_cast<std::size_t>(i)];
      std::copy_n(states_.data() + static_cast<std::size_t>(a) * stride, stride,
                  scratch_states_.data() + static_cast<std::size_t>(i) * stride);
      std::copy_n(log_h_.data() + static_cast<std::size_t>(a) * k, k,
                  scratch_log_h_.data() + static_cast<std::size_t>(i) * k);
    }
    states_.swap(scratch_states_);
    log_h_.swap(scratch_log_h_);
    if (opts_.track_ancestry) ancestry_.push_back(resample_idx_);

    double max_lw = -std::numeric_limits<double>::infinity();
    log_w_.resize(N);
    for (int i = 0; i < N; ++i) {
      std::span<double> state{states_.data() + static_cast<std::size_t>(i) * stride,
                              static_cast<std::size_t>(stride)};
      kernel_->transition(state, sigma_, rng, noise_ws_);
      const double check = kernel_->log_g_all(state, obs, log_g_ws_);
      for (int c = 0; c < k; ++c)
        log_h_[static_cast<std::size_t>(i) * k + c] += log_g_ws_[static_cast<std::size_t>(c)] - check;
      log_w_[static_cast<std::size_t>(i)] = check;
      max_lw = std::max(max_lw, check);
    }
    cost_ += static_cast<std::uint64_t>(N) * kernel_->cost_per_transition();

    double sum_exp = 0.0;
    for (int i = 0; i < N; ++i) sum_exp += std::exp(log_w_[static_cast<std::size_t>(i)] - max_lw);
    const double log_sum = max_lw + std::log(sum_exp);
    last_increment_ = log_sum - std::log(static_cast<double>(N));
    log_z_ += last_increment_;
    for (int i = 0; i < N; ++i) {
      log_w_[static_cast<std::size_t>(i)] -= log_sum;
      probs_[static_cast<std::size_t>(i)] = std::exp(log_w_[static_cast<std::size_t>(i)]);
    }
    ++t_;
    diagnostics_.push_back({t_, ess(), last_increment_});
  }

  /// Run over a whole observation record.
  void run(std::span<const Observation> obs, RngStream& rng) {
    for (const Observation& o : obs) step(o, rng);
  }

  /// Index draw proportional to the current-step weights.
  int sample_index(RngStream& rng) const {
    std::vector<int> idx;
    multinomial_indices(probs_, 1, rng, idx);
    return idx[0];
  }

  struct Trajectory {
    int index = 0;
    double sigma = 0.0;
    std::vector<double> log_h;  // lineage-accumulated, one per component
    std::vector<double> phi;    // functional at the terminal state, per component
  };

  /// Draw a trajectory by current-step weights and return its carried
  /// functionals; full path reconstruction is never needed.
  Trajectory sample_trajectory(const TestFunctional& phi, RngStream& rng) const {
    Trajectory out;
    out.index = sample_index(rng);
    out.sigma = sigma_;
    const int k = kernel_->component_count();
    out.log_h.assign(particle_log_h(out.index).begin(), particle_log_h(out.index).end());
    out.phi.resize(k);
    auto state = particle_state(out.index);
    for (int c = 0; c < k; ++c)
      out.phi[static_cast<std::size_t>(c)] =
          phi(sigma_, state.subspan(static_cast<std::size_t>(kernel_->offset(c)),
                                    static_cast<std::size_t>(kernel_->component_size(c))));
    return out;
  }

  std::string diagnostics_csv() const {
    std::string out = "p,ess,log_z_increment\n";
    for (const auto& d : diagnostics_)
      out += std::to_string(d.p) + "," + format_double(d.ess) + "," +
             format_double(d.log_z_increment) + "\n";
    return out;
  }

 private:
  const CoupledKernel* kernel_;
  double sigma_;
  PfOptions opts_;
  int t_ = 0;
  double log_z_ = 0.0;
  double last_increment_ = 0.0;
  std::uint64_t cost_ = 0;
  std::vector<double> states_, scratch_states_;
  std::vector<double> log_w_, probs_;
  std::vector<double> log_h_, scratch_log_h_;
  std::vector<double> noise_ws_, log_g_ws_;
  std::vector<int> resample_idx_;
  std::vector<PfStepDiagnostics> diagnostics_;
  std::vector<std::vector<int>> ancestry_;
};

}  // namespace mismc2
