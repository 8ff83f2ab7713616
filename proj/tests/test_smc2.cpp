#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "mismc2/kalman.hpp"
#include "mismc2/smc2.hpp"

using namespace mismc2;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ModelConfig toy_config(int n_obs = 4) {
  ModelConfig c;
  c.K0 = 2;
  c.M0 = 1;
  c.n_obs = n_obs;
  return c;
}

}  // namespace

TEST_CASE("initial outer system draws parameters from the prior") {
  ModelConfig c = toy_config();
  auto obs = simulate_data(c, MultiIndex{0, 0}, 3);
  GammaPrior prior;
  RngStream rng(11);
  Smc2Run run(c, dod_expand(MultiIndex{1, 1}), obs, prior, {.n_outer = 32, .n_inner = 4}, rng);
  REQUIRE(run.time_index() == 0);
  REQUIRE(run.log_evidence() == 0.0);
  std::set<double> sigmas;
  for (int i = 0; i < 32; ++i) {
    REQUIRE(run.particle_sigma(i) > 0.0);
    REQUIRE(run.particle_log_z(i) == 0.0);
    sigmas.insert(run.particle_sigma(i));
  }
  REQUIRE(sigmas.size() == 32);  // continuous prior: all distinct
}

TEST_CASE("degenerate single-particle run telescopes its own normalizer") {
  ModelConfig c = toy_config(4);
  auto obs = simulate_data(c, MultiIndex{0, 0}, 13);
  GammaPrior prior;
  RngStream rng(21);
  Smc2Run run(c, dod_expand(MultiIndex{0, 0}), obs, prior, {.n_outer = 1, .n_inner = 1}, rng);
  run.run_all();
  REQUIRE(run.time_index() == 4);
  // outer resampling is the identity and the evidence accumulates the
  // single particle's incremental weights
  double total = 0.0;
  for (const auto& d : run.diagnostics()) {
    REQUIRE(d.outer_ess == 1.0);
    REQUIRE(std::isfinite(d.log_g_mean));
    total += d.log_g_mean;
  }
  REQUIRE_THAT(run.log_evidence(), WithinAbs(total, 1e-12));
}

TEST_CASE("zero proposal scale freezes parameters but refreshes estimates") {
  ModelConfig c = toy_config(3);
  auto obs = simulate_data(c, MultiIndex{0, 0}, 17);
  GammaPrior prior;
  RngStream rng(31);
  Smc2Run run(c, dod_expand(MultiIndex{0, 0}), obs, prior,
              {.n_outer = 4, .n_inner = 8, .proposal_scale = 0.0}, rng);
  std::vector<double> sigmas0;
  for (int i = 0; i < 4; ++i) sigmas0.push_back(run.particle_sigma(i));
  std::sort(sigmas0.begin(), sigmas0.end());
  run.run_all();
  std::vector<double> sigmas1;
  for (int i = 0; i < 4; ++i) sigmas1.push_back(run.particle_sigma(i));
  std::sort(sigmas1.begin(), sigmas1.end());
  // resampling may duplicate/drop values but never creates new ones
  for (double s : sigmas1) REQUIRE(std::find(sigmas0.begin(), sigmas0.end(), s) != sigmas0.end());
  // acceptance ratio reduces to Z'/Z, so moves do occur
  double acc = 0.0;
  for (const auto& d : run.diagnostics()) acc += d.mean_acceptance;
  REQUIRE(acc > 0.0);
}

TEST_CASE("constant test function yields an exactly void difference estimate") {
  ModelConfig c = toy_config(3);
  auto obs = simulate_data(c, MultiIndex{1, 1}, 19);
  GammaPrior prior;
  RngStream rng(41);
  Smc2Run run(c, dod_expand(MultiIndex{1, 1}), obs, prior, {.n_outer = 12, .n_inner = 8}, rng);
  run.run_all();
  auto constant = [](double, std::span<const double>) { return 2.7; };
  auto unit = [](double, std::span<const double>) { return 1.0; };
  DodEstimate dz = run.estimate(constant);
  REQUIRE_THAT(dz.value, WithinAbs(0.0, 1e-13));
  DodEstimate du = run.estimate(unit);
  for (double e : du.eta) REQUIRE(e == 1.0);
}

TEST_CASE("runs are deterministic given the stream key") {
  ModelConfig c = toy_config(3);
  auto obs = simulate_data(c, MultiIndex{1, 0}, 23);
  GammaPrior prior;
  auto once = [&]() {
    RngStream rng = seed_stream(606, {9});
    Smc2Run run(c, dod_expand(MultiIndex{1, 0}), obs, prior, {.n_outer = 8, .n_inner = 8}, rng);
    run.run_all();
    return run.estimate(mean_parameter_functional()).value;
  };
  REQUIRE(once() == once());
}

TEST_CASE("evidence estimator is unbiased for the prior-integrated likelihood") {
  ModelConfig c = toy_config(4);
  auto obs = simulate_data(c, MultiIndex{0, 0}, 29);
  GammaPrior prior;

  // reference: trapezoid integral of prior(sigma) * Z(sigma); the grid must
  // reach far below the default floor because the prior is flat at zero and
  // the likelihood stays positive there
  auto grid = make_sigma_grid(2048, 1e-6, 4.0);
  double max_l = -std::numeric_limits<double>::infinity();
  std::vector<double> logw(grid.size());
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const double trap = 0.5 * ((j + 1 < grid.size() ? grid[j + 1] : grid[j]) -
                               (j > 0 ? grid[j - 1] : grid[j]));
    logw[j] = std::log(trap) + prior.log_density(grid[j]) +
              kalman_loglik(obs, grid[j], MultiIndex{0, 0}, c);
    max_l = std::max(max_l, logw[j]);
  }
  double sum = 0.0;
  for (double lw : logw) sum += std::exp(lw - max_l);
  const double log_marginal = max_l + std::log(sum);
  const double adjust = c.n_obs * log_g_constant(c);

  const int reps = 100;
  double rsum = 0.0, rsumsq = 0.0;
  for (int r = 0; r < reps; ++r) {
    RngStream rng = seed_stream(1900, {static_cast<std::uint64_t>(r)});
    Smc2Run run(c, dod_expand(MultiIndex{0, 0}), obs, prior,
                {.n_outer = 16, .n_inner = 16, .proposal_scale = 0.4}, rng);
    run.run_all();
    const double ratio = std::exp(run.log_evidence() + adjust - log_marginal);
    rsum += ratio;
    rsumsq += ratio * ratio;
  }
  const double mean = rsum / reps;
  const double se = std::sqrt((rsumsq - reps * mean * mean) / (reps - 1) / reps);
  REQUIRE_THAT(mean, WithinAbs(1.0, 3.0 * se));
}

TEST_CASE("difference estimates agree with the quadrature oracle at a coupled index") {
  ModelConfig c = toy_config(5);
  auto obs = simulate_data(c, MultiIndex{1, 1}, 37);
  GammaPrior prior;
  auto grid = make_sigma_grid(256);
  auto table = truth_table(obs, tensor_index_set({1, 1}), grid, prior, c);
  const double truth = apply_dod(dod_expand(MultiIndex{1, 1}), table);

  const int reps = 10;
  double sum = 0.0, sumsq = 0.0;
  for (int r = 0; r < reps; ++r) {
    RngStream rng = seed_stream(2100, {static_cast<std::uint64_t>(r)});
    Smc2Run run(c, dod_expand(MultiIndex{1, 1}), obs, prior,
                {.n_outer = 64, .n_inner = 24, .proposal_scale = 0.5}, rng);
    run.run_all();
    const double v = run.estimate(mean_parameter_functional()).value;
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sumsq - reps * mean * mean) / (reps - 1) / reps);
  REQUIRE_THAT(mean, WithinAbs(truth, 3.0 * se));
}

TEST_CASE("single-level posterior mean agrees with the quadrature oracle") {
  ModelConfig c = toy_config(5);
  auto obs = simulate_data(c, MultiIndex{0, 0}, 43);
  GammaPrior prior;
  auto quad = posterior_quadrature(obs, MultiIndex{0, 0}, make_sigma_grid(256), prior, c);

  const int reps = 10;
  double sum = 0.0, sumsq = 0.0;
  for (int r = 0; r < reps; ++r) {
    RngStream rng = seed_stream(2200, {static_cast<std::uint64_t>(r)});
    Smc2Run run(c, dod_expand(MultiIndex{0, 0}), obs, prior,
                {.n_outer = 64, .n_inner = 24, .proposal_scale = 0.5}, rng);
    run.run_all();
    const double v = run.estimate(mean_parameter_functional()).value;
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sumsq - reps * mean * mean) / (reps - 1) / reps);
  REQUIRE_THAT(mean, WithinAbs(quad.posterior_mean, 3.0 * se));
}

TEST_CASE("cost accounting matches the work-unit formula") {
  ModelConfig c = toy_config(3);
  auto obs = simulate_data(c, MultiIndex{1, 0}, 47);
  GammaPrior prior;
  RngStream rng(51);
  const int n_outer = 4, n_inner = 8;
  Smc2Run run(c, dod_expand(MultiIndex{1, 0}), obs, prior,
              {.n_outer = n_outer, .n_inner = n_inner}, rng);
  run.run_all();
  // per outer particle: mutation filters over 0,1,2 observations plus one
  // extension step per observation
  const std::uint64_t per_transition = run.kernel().cost_per_transition();
  const std::uint64_t intervals = n_outer * n_inner * (0 + 1 + 2 + 3);
  REQUIRE(run.cost_units() == intervals * per_transition);
}

TEST_CASE("diagnostics serialize with the documented header") {
  ModelConfig c = toy_config(2);
  auto obs = simulate_data(c, MultiIndex{0, 0}, 53);
  GammaPrior prior;
  RngStream rng(61);
  Smc2Run run(c, dod_expand(MultiIndex{0, 0}), obs, prior, {.n_outer = 2, .n_inner = 2}, rng);
  run.run_all();
  auto csv = run.diagnostics_csv();
  REQUIRE(csv.rfind("p,outer_ess,mean_acceptance,logG_mean\n", 0) == 0);
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 3);
}
