#pragma once

// Exact inference oracle for the discretized model. Per level the model is
// linear Gaussian with diagonal mode dynamics, so the marginal likelihood is
// available from a Kalman filter (substeps composed into one diagonal
// whole-interval map), and posterior expectations of the noise amplitude
// follow from deterministic quadrature over a sigma grid. Used as ground
// truth for the Monte Carlo estimators.

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "mismc2/config.hpp"
#include "mismc2/model.hpp"
#include "mismc2/multi_index.hpp"

namespace mismc2 {

struct KalmanState {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  double log_likelihood = 0.0;
};

/// Exact log marginal likelihood of a linear Gaussian state-space model with
/// diagonal transition x' = gain .* x + w, w ~ N(0, diag(noise_var)), and
/// observation y = H x + v, v ~ N(0, tau2 I). Includes all Gaussian
/// normalizing constants. Joseph-form covariance update.
inline KalmanState kalman_filter_diag(const Eigen::VectorXd& gain,
                                      const Eigen::VectorXd& noise_var,
                                      const Eigen::MatrixXd& H, double tau2,
                                      const Eigen::VectorXd& mean0,
                                      const Eigen::MatrixXd& cov0,
                                      std::span<const Observation> obs) {
  const auto K = gain.size();
  const auto m = H.rows();
  KalmanState s{mean0, cov0, 0.0};
  const double log2pi = std::log(2.0 * std::numbers::pi);
  (void)K;
  for (const Observation& o : obs) {
    // predict (diagonal dynamics)
    s.mean = gain.cwiseProduct(s.mean);
    s.covariance = gain.asDiagonal() * s.covariance * gain.asDiagonal();
    s.covariance.diagonal() += noise_var;

    // update
    Eigen::Map<const Eigen::VectorXd> y(o.y.data(), static_cast<Eigen::Index>(o.y.size()));
    if (y.size() != m) throw std::invalid_argument("kalman: observation size mismatch");
    Eigen::MatrixXd HP = H * s.covariance;  // m x K
    Eigen::MatrixXd S = HP * H.transpose();
    S.diagonal().array() += tau2;
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("kalman: innovation covariance not positive definite");
    Eigen::VectorXd resid = y - H * s.mean;
    Eigen::VectorXd alpha = llt.solve(resid);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    s.log_likelihood -= 0.5 * (m * log2pi + logdet + resid.dot(alpha));

    // Joseph form written with rank-m pieces only:
    // (I-KH) P (I-KH)' + tau2 K K' = P - K(HP) - (HP)'K' + K S K'
    Eigen::MatrixXd gain_k = llt.solve(HP).transpose();  // P H' S^-1
    s.mean += gain_k * resid;
    Eigen::MatrixXd KHP = gain_k * HP;
    s.covariance += -KHP - KHP.transpose() + gain_k * S * gain_k.transpose();
    s.covariance = 0.5 * (s.covariance + s.covariance.transpose()).eval();
  }
  return s;
}

/// Exact log marginal likelihood of the level-alpha discretized model for a
/// given noise amplitude, starting from the deterministic initial condition.
inline double kalman_loglik(std::span<const Observation> obs, double sigma,
                            const MultiIndex& alpha, const ModelConfig& config) {
  LevelTables t(config, config.modes_at(alpha[0]), config.steps_at(alpha[1]));
  Eigen::VectorXd gain = Eigen::Map<const Eigen::VectorXd>(t.interval_gain.data(), t.K);
  Eigen::VectorXd noise_var =
      sigma * sigma * Eigen::Map<const Eigen::VectorXd>(t.interval_var0.data(), t.K);
  const auto m = static_cast<Eigen::Index>(config.obs_locations.size());
  Eigen::MatrixXd H(m, t.K);
  for (Eigen::Index i = 0; i < m; ++i)
    for (int k = 0; k < t.K; ++k) H(i, k) = t.obs_basis[static_cast<std::size_t>(i) * t.K + k];
  Eigen::VectorXd mean0 = Eigen::VectorXd::Constant(t.K, config.u0);
  Eigen::MatrixXd cov0 = Eigen::MatrixXd::Zero(t.K, t.K);
  return kalman_filter_diag(gain, noise_var, H, config.tau2, mean0, cov0, obs).log_likelihood;
}

/// Log-spaced evaluation grid for the noise amplitude.
inline std::vector<double> make_sigma_grid(int points = 1024, double lo = 1e-3,
                                           double hi = 3.0) {
  if (points < 2 || !(lo > 0.0) || !(hi > lo))
    throw std::invalid_argument("make_sigma_grid: bad grid parameters");
  std::vector<double> grid(points);
  const double step = std::log(hi / lo) / (points - 1);
  for (int j = 0; j < points; ++j) grid[j] = lo * std::exp(step * j);
  return grid;
}

struct QuadratureResult {
  double posterior_mean = 0.0;
  std::vector<double> weights;  // normalized posterior mass per grid point
};

/// Posterior mean of the noise amplitude at level alpha by trapezoidal
/// quadrature of sigma * prior(sigma) * likelihood(sigma) over a sorted grid,
/// normalized by the same quadrature without the sigma factor. All products
/// are handled in log space. Prior is any type exposing log_density(double).
template <class Prior>
QuadratureResult posterior_quadrature(std::span<const Observation> obs,
                                      const MultiIndex& alpha,
                                      std::span<const double> sigma_grid,
                                      const Prior& prior,
                                      const ModelConfig& config) {
  const int J = static_cast<int>(sigma_grid.size());
  if (J < 2) throw std::invalid_argument("posterior_quadrature: need at least 2 grid points");
  for (int j = 0; j < J; ++j) {
    if (!(sigma_grid[j] > 0.0))
      throw std::invalid_argument("posterior_quadrature: grid must be strictly positive");
    if (j > 0 && !(sigma_grid[j] > sigma_grid[j - 1]))
      throw std::invalid_argument("posterior_quadrature: grid must be sorted");
  }
  std::vector<double> logw(J);
  double max_logw = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < J; ++j) {
    const double trap = 0.5 * ((j + 1 < J ? sigma_grid[j + 1] : sigma_grid[j]) -
                               (j > 0 ? sigma_grid[j - 1] : sigma_grid[j]));
    logw[j] = std::log(trap) + prior.log_density(sigma_grid[j]) +
              kalman_loglik(obs, sigma_grid[j], alpha, config);
    max_logw = std::max(max_logw, logw[j]);
  }
  if (!std::isfinite(max_logw))
    throw std::runtime_error("posterior_quadrature: grid does not cover posterior mass");
  double norm = 0.0, mean = 0.0;
  QuadratureResult out;
  out.weights.resize(J);
  for (int j = 0; j < J; ++j) {
    out.weights[j] = std::exp(logw[j] - max_logw);
    norm += out.weights[j];
    mean += out.weights[j] * sigma_grid[j];
  }
  for (double& w : out.weights) w /= norm;
  out.posterior_mean = mean / norm;
  return out;
}

/// Posterior mean per index over an index set; feeds telescoping checks and
/// benchmark error denominators.
template <class Prior>
std::map<MultiIndex, double> truth_table(std::span<const Observation> obs,
                                         const std::vector<MultiIndex>& index_set,
                                         std::span<const double> sigma_grid,
                                         const Prior& prior,
                                         const ModelConfig& config) {
  std::map<MultiIndex, double> out;
  for (const MultiIndex& alpha : index_set)
    out[alpha] = posterior_quadrature(obs, alpha, sigma_grid, prior, config).posterior_mean;
  return out;
}

inline std::string truth_table_to_csv(const std::map<MultiIndex, double>& table) {
  std::string out = "alpha_x,alpha_t,posterior_mean\n";
  for (const auto& [alpha, value] : table)
    out += alpha.csv() + "," + format_double(value) + "\n";
  return out;
}

}  // namespace mismc2
