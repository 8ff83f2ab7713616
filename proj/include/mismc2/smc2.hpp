#pragma once

// Outer sequential Monte Carlo over (parameter, inner particle filter)
// particles. Each assimilation step resamples the outer system by the inner
// mean max-coupled density of the previous observation, rejuvenates every
// particle with one marginal PMMH step over the data seen so far, extends
// the inner filters by one observation, and records the new incremental
// weights. Estimates are read out by a trajectory-selecting PMMH pass that
// leaves the running system untouched.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mismc2/mi_estimator.hpp"
#include "mismc2/model.hpp"
#include "mismc2/particle_filter.hpp"
#include "mismc2/pmcmc.hpp"

namespace mismc2 {

struct Smc2Options {
  int n_outer = 100;
  int n_inner = 100;
  double proposal_scale = 0.25;
  int rejuvenation_steps = 1;  // diagnostics only; the algorithm uses 1
};

struct Smc2StepDiagnostics {
  int p = 0;
  double outer_ess = 0.0;
  double mean_acceptance = 0.0;
  double log_g_mean = 0.0;  // log of the mean incremental weight
};

struct DodEstimate {
  double value = 0.0;
  std::vector<double> eta;  // per-component ratio estimates
  std::vector<PathSample> samples;
};

class Smc2Run {
 public:
  Smc2Run(const ModelConfig& config, const DodExpansion& expansion,
          std::span<const Observation> obs, const GammaPrior& prior, const Smc2Options& opts,
          RngStream& rng)
      : expansion_(expansion),
        kernel_(CoupledKernel::for_expansion(config, expansion)),
        obs_(obs),
        prior_(prior),
        opts_(opts),
        rng_(rng) {
    if (opts_.n_outer < 1 || opts_.n_inner < 1)
      throw std::invalid_argument("Smc2Run: need >= 1 outer and inner particles");
    particles_.reserve(static_cast<std::size_t>(opts_.n_outer));
    for (int i = 0; i < opts_.n_outer; ++i) {
      Outer o;
      o.sigma = prior_.sample(rng_);
      o.log_prior = prior_.log_density(o.sigma);
      o.pf.emplace(kernel_, o.sigma, PfOptions{.particles = opts_.n_inner});
      particles_.push_back(std::move(o));
    }
    log_g_.assign(static_cast<std::size_t>(opts_.n_outer), 0.0);
  }

  int time_index() const { return t_; }
  int outer_count() const { return opts_.n_outer; }
  const DodExpansion& expansion() const { return expansion_; }
  const CoupledKernel& kernel() const { return kernel_; }
  double log_evidence() const { return log_evidence_; }
  std::uint64_t cost_units() const { return cost_; }
  const std::vector<Smc2StepDiagnostics>& diagnostics() const { return diagnostics_; }
  double particle_sigma(int i) const { return particles_[static_cast<std::size_t>(i)].sigma; }
  double particle_log_z(int i) const {
    return particles_[static_cast<std::size_t>(i)].pf->log_normalizer();
  }

  /// Assimilate the next observation: select, mutate, extend, reweight.
  void advance() {
    if (t_ >= static_cast<int>(obs_.size())) throw std::logic_error("Smc2Run: no data left");
    const int N = opts_.n_outer;

    if (t_ > 0) {  // initial weights are uniform by construction
      normalized_weights(probs_);
      multinomial_indices(probs_, N, rng_, resample_idx_);
      std::vector<Outer> next;
      next.reserve(static_cast<std::size_t>(N));
      for (int i = 0; i < N; ++i)
        next.push_back(particles_[static_cast<std::size_t>(resample_idx_[static_cast<std::size_t>(i)])]);
      particles_.swap(next);
    }

    const auto prefix = obs_.subspan(0, static_cast<std::size_t>(t_));
    int accepted = 0;
    for (auto& p : particles_)
      for (int r = 0; r < opts_.rejuvenation_steps; ++r) accepted += mutate(p, prefix);

    const Observation& next_obs = obs_[static_cast<std::size_t>(t_)];
    for (int i = 0; i < N; ++i) {
      auto& p = particles_[static_cast<std::size_t>(i)];
      p.pf->step(next_obs, rng_);
      cost_ += static_cast<std::uint64_t>(opts_.n_inner) * kernel_.cost_per_transition();
      log_g_[static_cast<std::size_t>(i)] = p.pf->last_log_increment();
    }
    ++t_;

    double max_lg = -std::numeric_limits<double>::infinity();
    for (double lg : log_g_) max_lg = std::max(max_lg, lg);
    double sum_exp = 0.0;
    for (double lg : log_g_) sum_exp += std::exp(lg - max_lg);
    const double increment = max_lg + std::log(sum_exp) - std::log(static_cast<double>(N));
    log_evidence_ += increment;

    normalized_weights(probs_);
    double ess = 0.0;
    for (double w : probs_) ess += w * w;
    diagnostics_.push_back({t_, 1.0 / ess,
                            static_cast<double>(accepted) /
                                (N * std::max(1, opts_.rejuvenation_steps)),
                            increment});
  }

  void run_all() {
    while (t_ < static_cast<int>(obs_.size())) advance();
  }

  /// Estimate the signed difference of the test function at the current time
  /// index: resample by the current weights, then per particle run one
  /// trajectory-selecting PMMH pass over all data seen so far (the running
  /// system is not modified). Ratio estimates use the carried log H.
  DodEstimate estimate(const TestFunctional& phi) {
    const int N = opts_.n_outer;
    const auto seen = obs_.subspan(0, static_cast<std::size_t>(t_));
    if (t_ > 0) {
      normalized_weights(probs_);
      multinomial_indices(probs_, N, rng_, resample_idx_);
    } else {
      resample_idx_.assign(static_cast<std::size_t>(N), 0);
      for (int i = 0; i < N; ++i) resample_idx_[static_cast<std::size_t>(i)] = i;
    }

    DodEstimate out;
    out.samples.reserve(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
      const Outer& src = particles_[static_cast<std::size_t>(resample_idx_[static_cast<std::size_t>(i)])];
      ParticleFilter::Trajectory kept = src.pf->sample_trajectory(phi, rng_);

      const double sigma_new = src.sigma * std::exp(opts_.proposal_scale * rng_.gauss());
      ParticleFilter fresh(kernel_, sigma_new, PfOptions{.particles = opts_.n_inner});
      fresh.run(seen, rng_);
      cost_ += fresh.cost_units();
      const double log_ratio =
          pmmh_accept_log_ratio(fresh.log_normalizer(), prior_.log_density(sigma_new), sigma_new,
                                src.pf->log_normalizer(), src.log_prior, src.sigma);
      if (std::log(rng_.uniform()) < log_ratio) {
        ParticleFilter::Trajectory traj = fresh.sample_trajectory(phi, rng_);
        out.samples.push_back({std::move(traj.phi), std::move(traj.log_h)});
      } else {
        out.samples.push_back({std::move(kept.phi), std::move(kept.log_h)});
      }
    }

    out.eta.resize(static_cast<std::size_t>(expansion_.k()));
    for (int c = 0; c < expansion_.k(); ++c)
      out.eta[static_cast<std::size_t>(c)] = eta_ratio(out.samples, c);
    out.value = dod_from_samples(out.samples, expansion_);
    return out;
  }

  std::string diagnostics_csv() const {
    std::string out = "p,outer_ess,mean_acceptance,logG_mean\n";
    for (const auto& d : diagnostics_)
      out += std::to_string(d.p) + "," + format_double(d.outer_ess) + "," +
             format_double(d.mean_acceptance) + "," + format_double(d.log_g_mean) + "\n";
    return out;
  }

 private:
  struct Outer {
    double sigma = 0.0;
    double log_prior = 0.0;
    std::optional<ParticleFilter> pf;
  };

  void normalized_weights(std::vector<double>& probs) const {
    const int N = opts_.n_outer;
    probs.resize(static_cast<std::size_t>(N));
    double max_lg = -std::numeric_limits<double>::infinity();
    for (double lg : log_g_) max_lg = std::max(max_lg, lg);
    double sum = 0.0;
    for (int i = 0; i < N; ++i)
      sum += (probs[static_cast<std::size_t>(i)] = std::exp(log_g_[static_cast<std::size_t>(i)] - max_lg));
    for (double& w : probs) w /= sum;
  }

  /// One marginal PMMH move targeting the posterior given `prefix`; on
  /// acceptance the whole inner system is replaced by the proposal's filter.
  bool mutate(Outer& p, std::span<const Observation> prefix) {
    const double sigma_new = p.sigma * std::exp(opts_.proposal_scale * rng_.gauss());
    ParticleFilter fresh(kernel_, sigma_new, PfOptions{.particles = opts_.n_inner});
    fresh.run(prefix, rng_);
    cost_ += fresh.cost_units();
    const double log_ratio =
        pmmh_accept_log_ratio(fresh.log_normalizer(), prior_.log_density(sigma_new), sigma_new,
                              p.pf->log_normalizer(), p.log_prior, p.sigma);
    if (std::log(rng_.uniform()) < log_ratio) {
      p.sigma = sigma_new;
      p.log_prior = prior_.log_density(sigma_new);
      p.pf.emplace(std::move(fresh));
      return true;
    }
    return false;
  }

  DodExpansion expansion_;
  CoupledKernel kernel_;
  std::span<const Observation> obs_;
  GammaPrior prior_;
  Smc2Options opts_;
  RngStream& rng_;
  std::vector<Outer> particles_;
  std::vector<double> log_g_;
  std::vector<double> probs_;
  std::vector<int> resample_idx_;
  std::vector<Smc2StepDiagnostics> diagnostics_;
  int t_ = 0;
  double log_evidence_ = 0.0;
  std::uint64_t cost_ = 0;
};

}  // namespace mismc2
