#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "mismc2/kalman.hpp"
#include "mismc2/rng.hpp"

using namespace mismc2;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.K0 = 2;
  c.M0 = 1;
  c.n_obs = 10;
  return c;
}

}  // namespace

TEST_CASE("scalar single-step filter matches the closed form") {
  ModelConfig c;
  c.K0 = 1;
  c.M0 = 1;
  c.n_obs = 1;
  c.obs_locations = {0.5};
  c.tau2 = 0.7;
  const double sigma = 0.4;

  const double lam = eigenvalue(1);
  const double h = c.delta;
  const double decay = std::exp(-lam * h);
  const double A = decay + c.drift * (1.0 - decay) / lam;
  const double Q = sigma * sigma * (1.0 - decay * decay) / (2.0 * lam);
  const double Hc = eigenfunction(1, 0.5);

  const double y = 1.23;
  std::vector<Observation> obs{{1, {y}}};

  const double pred_mean = Hc * A * c.u0;
  const double pred_var = Hc * Hc * Q + c.tau2;
  const double want = -0.5 * (std::log(2.0 * std::numbers::pi * pred_var) +
                              (y - pred_mean) * (y - pred_mean) / pred_var);
  REQUIRE_THAT(kalman_loglik(obs, sigma, MultiIndex{0, 0}, c), WithinAbs(want, 1e-12));
}

TEST_CASE("likelihood flattens as observation noise grows") {
  ModelConfig c = toy_config();
  auto obs = simulate_data(c, MultiIndex{0, 0}, 11);
  double prev_gap = std::numeric_limits<double>::infinity();
  for (double tau2 : {1.0, 10.0, 100.0}) {
    ModelConfig ct = c;
    ct.tau2 = tau2;
    auto obs_t = obs;  // same simulated readings, reinterpreted noise level
    double a = kalman_loglik(obs_t, 0.2, MultiIndex{0, 0}, ct);
    double b = kalman_loglik(obs_t, 0.6, MultiIndex{0, 0}, ct);
    double gap = std::abs(a - b);
    REQUIRE(gap < prev_gap);
    prev_gap = gap;
  }
}

TEST_CASE("filter is invariant to mode reordering") {
  ModelConfig c = toy_config();
  c.K0 = 4;
  auto obs = simulate_data(c, MultiIndex{0, 0}, 5);
  LevelTables t(c, 4, c.M0);

  Eigen::VectorXd gain = Eigen::Map<const Eigen::VectorXd>(t.interval_gain.data(), 4);
  Eigen::VectorXd qv = 0.09 * Eigen::Map<const Eigen::VectorXd>(t.interval_var0.data(), 4);
  Eigen::MatrixXd H(2, 4);
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 4; ++k) H(i, k) = t.obs_basis[static_cast<std::size_t>(i) * 4 + k];
  Eigen::VectorXd m0 = Eigen::VectorXd::Constant(4, c.u0);
  Eigen::MatrixXd P0 = Eigen::MatrixXd::Zero(4, 4);

  double base = kalman_filter_diag(gain, qv, H, c.tau2, m0, P0, obs).log_likelihood;

  std::vector<int> perm{2, 0, 3, 1};
  Eigen::VectorXd gain_p(4), qv_p(4), m0_p(4);
  Eigen::MatrixXd H_p(2, 4);
  for (int k = 0; k < 4; ++k) {
    gain_p(k) = gain(perm[k]);
    qv_p(k) = qv(perm[k]);
    m0_p(k) = m0(perm[k]);
    H_p.col(k) = H.col(perm[k]);
  }
  double permuted = kalman_filter_diag(gain_p, qv_p, H_p, c.tau2, m0_p, P0, obs).log_likelihood;
  REQUIRE_THAT(permuted, WithinAbs(base, 1e-10));
}

TEST_CASE("covariance stays symmetric positive semidefinite") {
  RngStream rng(321);
  for (int trial = 0; trial < 10000; ++trial) {
    const int K = 1 + static_cast<int>(rng.uniform() * 4);
    Eigen::VectorXd gain(K), qv(K);
    for (int k = 0; k < K; ++k) {
      gain(k) = 2.0 * rng.uniform() - 0.5;
      qv(k) = rng.uniform();
    }
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(1, K);
    for (int k = 0; k < K; ++k) H(0, k) = 2.0 * rng.uniform() - 1.0;
    Eigen::VectorXd m0 = Eigen::VectorXd::Zero(K);
    Eigen::MatrixXd P0 = Eigen::MatrixXd::Zero(K, K);
    std::vector<Observation> obs;
    for (int n = 1; n <= 3; ++n) obs.push_back({n, {rng.gauss()}});
    auto s = kalman_filter_diag(gain, qv, H, 0.5 + rng.uniform(), m0, P0, obs);
    REQUIRE((s.covariance - s.covariance.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s.covariance);
    REQUIRE(es.eigenvalues().minCoeff() > -1e-10);
  }
}

TEST_CASE("quadrature weights are a normalized distribution") {
  ModelConfig c = toy_config();
  auto obs = simulate_data(c, MultiIndex{0, 0}, 2);
  auto grid = make_sigma_grid(256);
  auto q = posterior_quadrature(obs, MultiIndex{0, 0}, grid, GammaPrior{}, c);
  double total = 0.0;
  for (double w : q.weights) total += w;
  REQUIRE_THAT(total, WithinAbs(1.0, 1e-12));
  REQUIRE(q.posterior_mean > 0.0);
}

TEST_CASE("delta-like grid returns the pinned value") {
  ModelConfig c = toy_config();
  auto obs = simulate_data(c, MultiIndex{0, 0}, 2);
  // two nearly identical points bracket sigma0; the posterior collapses there
  std::vector<double> grid{0.3162, 0.31622};
  auto q = posterior_quadrature(obs, MultiIndex{0, 0}, grid, GammaPrior{}, c);
  REQUIRE_THAT(q.posterior_mean, WithinAbs(0.3162, 2e-5));
}

TEST_CASE("flat likelihood returns the prior mean under the same quadrature") {
  ModelConfig c = toy_config();
  c.tau2 = 1e8;  // data carry essentially no information
  auto obs = simulate_data(c, MultiIndex{0, 0}, 2);
  auto grid = make_sigma_grid(512);
  GammaPrior prior;
  auto q = posterior_quadrature(obs, MultiIndex{0, 0}, grid, prior, c);

  // same trapezoid rule applied to the bare prior
  double norm = 0.0, mean = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    double trap = 0.5 * ((j + 1 < grid.size() ? grid[j + 1] : grid[j]) -
                         (j > 0 ? grid[j - 1] : grid[j]));
    double w = trap * std::exp(prior.log_density(grid[j]));
    norm += w;
    mean += w * grid[j];
  }
  REQUIRE_THAT(q.posterior_mean, WithinRel(mean / norm, 1e-6));
}

TEST_CASE("quadrature self-converges under grid refinement") {
  ModelConfig c = toy_config();
  auto obs = simulate_data(c, MultiIndex{1, 1}, 7);
  auto coarse = posterior_quadrature(obs, MultiIndex{1, 1}, make_sigma_grid(1024),
                                     GammaPrior{}, c);
  auto fine = posterior_quadrature(obs, MultiIndex{1, 1}, make_sigma_grid(2048),
                                   GammaPrior{}, c);
  REQUIRE(std::abs(fine.posterior_mean - coarse.posterior_mean) < 1e-6);
}

TEST_CASE("truth table telescopes exactly across a tensor set") {
  ModelConfig c = toy_config();
  auto obs = simulate_data(c, MultiIndex{2, 2}, 13);
  auto grid = make_sigma_grid(256);
  auto set = tensor_index_set({1, 1});
  auto table = truth_table(obs, set, grid, GammaPrior{}, c);
  REQUIRE(table.size() == 4);

  double total = 0.0;
  for (const MultiIndex& alpha : set) total += apply_dod(dod_expand(alpha), table);
  REQUIRE_THAT(total, WithinAbs(table.at(MultiIndex{1, 1}), 1e-12));
}

TEST_CASE("increments shrink as levels refine") {
  ModelConfig c = toy_config();
  c.n_obs = 10;
  auto obs = simulate_data(c, MultiIndex{3, 3}, 29);
  auto grid = make_sigma_grid(256);
  auto table = truth_table(obs, tensor_index_set({3, 3}), grid, GammaPrior{}, c);
  double d11 = std::abs(apply_dod(dod_expand(MultiIndex{1, 1}), table));
  double d22 = std::abs(apply_dod(dod_expand(MultiIndex{2, 2}), table));
  double d33 = std::abs(apply_dod(dod_expand(MultiIndex{3, 3}), table));
  REQUIRE(d22 < d11);
  REQUIRE(d33 < d22);
}

TEST_CASE("empty posterior mass is reported") {
  ModelConfig c = toy_config();
  auto obs = simulate_data(c, MultiIndex{0, 0}, 2);
  struct BoundedPrior {
    double log_density(double s) const {
      return s < 0.5 ? 0.0 : -std::numeric_limits<double>::infinity();
    }
  } prior;
  std::vector<double> grid{1.0, 2.0, 3.0};  // entirely outside the prior support
  REQUIRE_THROWS_WITH(posterior_quadrature(obs, MultiIndex{0, 0}, grid, prior, c),
                      Catch::Matchers::ContainsSubstring("posterior mass"));
}
