#pragma once

#include "mleig/dlmc.hpp"
#include "mleig/sparse_grid.hpp"

namespace mleig {

/// Index (ell, beta1, beta2) of the collocation estimator.
struct MldlscIndex {
  int ell = 0;
  MultiIndex beta1;  // d prior dims then q * N_e noise dims
  MultiIndex beta2;  // d inner dims
};

/// p_l(Y | theta~) R_l(theta~; Y); zero outside the prior support.
double psi(const ForwardModel& model, int ell, const Vector& theta_tilde, const Matrix& Y, const LaplaceFit& fit,
           const NoiseSpec& noise, WorkTally* tally = nullptr);

/// log pi_eps(eps) - log Q_beta2[Psi_l] with the inner Gauss-Hermite rule
/// mapped through the Laplace fit at Y = g_l(theta) 1^T + eps.
double f_tilde(const ForwardModel& model, int ell, const Vector& theta, const Matrix& eps, const MultiIndex& beta2,
               const NoiseSpec& noise, WorkTally* tally = nullptr, const MapOptions& map = {});

struct MldlscOptions {
  double tol = 1e-3;
  int beta2 = 1;  // inner level in every dimension; 1 is the Laplace point alone
  double max_work = std::numeric_limits<double>::infinity();
  std::size_t max_indices = 20000;
  int workers = default_workers();
  MapOptions map;
};

/// Outer collocation over (theta, eps) with memoized f~ nodes.
class MldlscIntegrator {
 public:
  MldlscIntegrator(const ForwardModel& model, const NoiseSpec& noise, MldlscOptions options = {});

  /// True when the index carries a leading physical level entry.
  bool has_level() const { return has_level_; }
  int outer_dim() const { return outer_dim_; }
  /// Lowest admissible index: (0, 1, ..., 1) or (1, ..., 1).
  MultiIndex root() const;

  /// Tensor quadrature of f~ at physical level ell and outer levels beta1.
  double U(int ell, const MultiIndex& beta1);
  double U(const MultiIndex& index);
  /// A-priori cost h_l^-gamma * prod m(beta_i).
  double cost(const MultiIndex& index) const;

  const WorkTally& tally() const { return tally_; }
  std::size_t cached_nodes() const { return cache_.size(); }

 private:
  struct Node {
    int ell;
    Vector theta;
    Matrix eps;
  };
  std::vector<QuadratureRule1D<double>> rules_for(const MultiIndex& beta1) const;
  Node node_at(int ell, const Vector& z) const;

  const ForwardModel& model_;
  NoiseSpec noise_;
  MldlscOptions options_;
  bool has_level_;
  int outer_dim_;
  MultiIndex beta2_;
  std::map<std::vector<double>, double> cache_;
  WorkTally tally_;
};

EstimatorResult mldlsc_estimate(const ForwardModel& model, const NoiseSpec& noise, const MldlscOptions& options);

}  // namespace mleig
