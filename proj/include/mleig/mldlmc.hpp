#pragma once

#include "mleig/dlmc.hpp"

#include <optional>

namespace mleig {

struct MlParameters {
  int L = 0;
  double kappa = 0.5;
  std::vector<int> M;
  std::vector<std::int64_t> N;
  double TOL = 0.0;
  double alpha = 0.05;
  double C_alpha = 0.0;
};

/// Everything one coupled difference sample touched; used to verify coupling.
struct DeltaTrace {
  OuterSample outer;
  std::optional<LaplaceFit> fit;
  Matrix inner;  // M_ell x d
  Vector g_fine, g_coarse;
  Matrix Y_fine, Y_coarse;
  Vector fine_terms, coarse_terms;
  double fine = 0.0, coarse = 0.0;
  int M_fine = 0, M_coarse = 0;
};

/// f^_0 for ell = 0; otherwise f^_ell(Y^(ell); M_ell) - f^_{ell-1}(Y^(ell-1); M_prev)
/// with shared (theta_n, eps_n), one Laplace fit at Y^(ell), and the coarse
/// term using the leading M_prev inner draws.
double delta_f_sample(const ForwardModel& model, const NoiseSpec& noise, int ell, int M_ell, int M_prev, bool use_is,
                      RandomStream& rng, WorkTally* tally = nullptr, DeltaTrace* trace = nullptr,
                      const MapOptions& map = {});

/// Variance model for ell > 0 with unit constants:
/// M_l (1/M_l - 1/M_p)^2 + h^(2 eta_s) / M_p + (M_l - M_p) / M_p^2 + h^(2 eta_w).
double theoretical_variance_bound(double M_ell, double M_prev, double h_ell, double eta_s, double eta_w);

struct RateConstants {
  double C1 = 0.0;
  double C2 = 0.0;
  double eta_w = 1.0;
  double eta_s = 1.0;
};

struct PilotOptions {
  int L = 3;
  std::int64_t N = 5;
  int M_low = 1;
  int M_high = 10;
};

struct PilotResult {
  RateConstants constants;
  double c_E = 0.0;      // |E_l| ~ c_E h_l^eta_w
  double gamma = 0.0;    // from wall-clock timing, reported only
  int L = 0;
  std::int64_t N = 0;
  int M_low = 1, M_high = 10;
  std::vector<double> E_low, E_high, V_low, V_high;
  std::vector<double> dg2;              // E ||g_l - g_{l-1}||^2_{Sigma^-1}, l >= 1 (index 0 unused)
  std::vector<double> seconds_per_eval;
  double work = 0.0;
  std::int64_t rejected = 0;
};

/// Least-squares slope and intercept of y against x.
std::pair<double, double> fit_line(const std::vector<double>& x, const std::vector<double>& y);

/// Two coupled passes (M_low and M_high on identical outer samples) over
/// levels 0..L. With L = 0 only C1 and V_0 are estimated.
PilotResult pilot_run(const ForwardModel& model, const NoiseSpec& noise, const PilotOptions& pilot, std::uint64_t seed,
                      const SamplingOptions& sampling = {});

/// ceil(eta_w^-1 (log_beta(2 C2 h0^eta_w) + log_beta(1/TOL))), clamped at 0.
int optimal_level(double TOL, double C2, double eta_w, const MeshHierarchy& hierarchy);

/// Sample allocation from the variance constraint with ceiling (at least 1).
std::vector<std::int64_t> optimal_samples(const std::vector<double>& V, const std::vector<int>& M,
                                          const MeshHierarchy& hierarchy, double kappa, double TOL, double C_alpha);

/// Extends V to levels 0..L by scaling the last entry with the variance bound.
std::vector<double> extend_variances(std::vector<double> V, int L, int M, const MeshHierarchy& hierarchy,
                                     double eta_s, double eta_w);

MlParameters select_parameters(double TOL, double alpha, const RateConstants& constants,
                               const MeshHierarchy& hierarchy, const std::vector<double>& V,
                               bool level_independent = false, int max_level = 1 << 20);

/// Fixed-parameter run: N[l] coupled samples at each level l <= params.L.
EstimatorResult mldlmc_run(const ForwardModel& model, const NoiseSpec& noise, const MlParameters& params,
                           std::uint64_t seed, const SamplingOptions& sampling = {});

struct MldlmcOptions {
  double TOL = 0.1;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  SamplingOptions sampling;
  PilotOptions pilot;
  /// Skip the pilot and use these constants.
  std::optional<PilotResult> constants;
  std::vector<double> schedule{4.0, 2.0, 1.0};
  int max_topups = 20;
  /// Levels with fewer samples take the variance model instead.
  std::int64_t min_variance_samples = 5;
};

/// Pilot, parameter selection and a continuation loop over TOL * schedule.
EstimatorResult mldlmc_estimate(const ForwardModel& model, const NoiseSpec& noise, const MldlmcOptions& options);

/// Single-level DLMC(IS) sized for TOL: level L*, M from C1, N from V_L.
EstimatorResult dlmc_for_tol(const ForwardModel& model, const NoiseSpec& noise, double TOL, double alpha,
                             const PilotResult& constants, std::uint64_t seed, const SamplingOptions& sampling = {},
                             std::int64_t initial_N = 64);

}  // namespace mleig
