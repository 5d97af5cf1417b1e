#pragma once

#include "mleig/forward_model.hpp"

namespace mleig {

/// Gaussian importance-sampling measure N(theta_hat, Sigma_hat).
struct LaplaceFit {
  Vector theta_hat;
  Matrix Sigma_hat;
  Matrix chol;  // lower triangular, chol * chol^T = Sigma_hat
  double log_norm_const = 0.0;  // -0.5 * logdet(2 pi Sigma_hat)
  bool on_boundary = false;     // theta_hat pinned to the prior box
  int map_iterations = 0;

  int dim() const { return static_cast<int>(theta_hat.size()); }
  static LaplaceFit from_moments(Vector mean, Matrix covariance);
};

struct MapOptions {
  int max_iterations = 200;
  double gradient_tol = 1e-8;
  /// Also stop when the Gauss-Newton decrement (predicted objective drop)
  /// falls below this; finite-difference Jacobians cannot reach gradient_tol
  /// on stiff models.
  double decrement_tol = 1e-12;
  double step_tol = 1e-12;  // relative step length treated as stagnation
};

struct MapResult {
  Vector theta;
  Vector g;        // g_l(theta)
  Matrix J;        // -grad g_l(theta)
  int iterations = 0;
  double gradient_norm = 0.0;
  bool on_boundary = false;
};

/// Minimizer of 0.5 sum_i ||y_i - g_l(theta)||^2_{Sigma_eps^-1} - log pi(theta)
/// by projected, damped Gauss-Newton. Y is q x N_e.
MapResult find_map_full(const ForwardModel& model, int level, const Matrix& Y, const NoiseSpec& noise,
                        const Vector& theta_init, WorkTally* tally = nullptr, const MapOptions& options = {});

Vector find_map(const ForwardModel& model, int level, const Matrix& Y, const NoiseSpec& noise,
                const Vector& theta_init, WorkTally* tally = nullptr, const MapOptions& options = {});

/// (N_e J^T Sigma_eps^-1 J - grad grad log pi)^-1 at theta_hat.
Matrix laplace_covariance(const ForwardModel& model, int level, const Vector& theta_hat, const NoiseSpec& noise,
                          WorkTally* tally = nullptr);

/// Same, from a Jacobian already evaluated at theta_hat.
Matrix laplace_covariance_from_jacobian(const Matrix& J, const PriorSpec& prior, const NoiseSpec& noise);

/// MAP search followed by the covariance at the MAP point.
LaplaceFit fit_laplace(const ForwardModel& model, int level, const Matrix& Y, const NoiseSpec& noise,
                       const Vector& theta_init, WorkTally* tally = nullptr, const MapOptions& options = {});

double is_log_density(const LaplaceFit& fit, const Vector& theta);

/// log pi(theta) - log pi~(theta | Y); -inf outside the prior support.
double is_ratio_log(const PriorSpec& prior, const LaplaceFit& fit, const Vector& theta);

/// count x d matrix of draws theta_hat + L z.
Matrix sample_is(const LaplaceFit& fit, int count, RandomStream& rng);

/// Maps standard-normal rows z to theta_hat + L z.
Matrix map_standard_normal(const LaplaceFit& fit, const Matrix& z);

}  // namespace mleig
