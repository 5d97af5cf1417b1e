#pragma once

#include "mleig/laplace.hpp"
#include "mleig/parallel.hpp"

#include <optional>

namespace mleig {

/// One outer draw (theta_n, eps_n); the data at level k is g_k(theta_n) 1^T + eps_n.
struct OuterSample {
  Vector theta;
  Matrix eps;  // q x N_e

  Matrix data(const Vector& g) const { return eps.colwise() + g; }
  Matrix data_at_level(const ForwardModel& model, int level, WorkTally* tally = nullptr) const {
    return data(eval_forward(model, theta, level, tally));
  }
};

OuterSample draw_outer_sample(const PriorSpec& prior, const NoiseSpec& noise, RandomStream& rng);

/// Phi^-1(1 - alpha / 2).
double confidence_constant(double alpha);

/// -(N_e/2) logdet(2 pi Sigma_eps) - 0.5 sum_i ||y_i - g||^2_{Sigma_eps^-1}.
double log_likelihood(const Matrix& Y, const Vector& g, const NoiseSpec& noise);

/// log(mean(exp(terms[0..count)))); throws EvidenceUnderflow when every term is -inf.
double log_mean_exp(const Vector& terms, Eigen::Index count);
inline double log_mean_exp(const Vector& terms) { return log_mean_exp(terms, terms.size()); }

/// log p_l(Y | theta_m) + log R(theta_m) for each row of thetas. With fit == nullptr
/// the rows are prior draws and R = 1. Rows outside the support give -inf and
/// cost no model evaluation.
Vector evidence_log_terms(const ForwardModel& model, int level, const Matrix& Y, const Matrix& thetas,
                          const LaplaceFit* fit, const NoiseSpec& noise, WorkTally* tally = nullptr);

/// count x d matrix of prior draws.
Matrix prior_draws(const PriorSpec& prior, int count, RandomStream& rng);

/// Laplace importance-sampling estimate of log p_l(Y) from M proposal draws.
double estimate_log_evidence_is(const ForwardModel& model, int level, const Matrix& Y, const LaplaceFit& fit, int M,
                                const NoiseSpec& noise, RandomStream& rng, WorkTally* tally = nullptr);

/// Plain Monte Carlo estimate of log p_l(Y) from M prior draws.
double estimate_log_evidence_prior(const ForwardModel& model, int level, const Matrix& Y, int M,
                                   const NoiseSpec& noise, RandomStream& rng, WorkTally* tally = nullptr);

/// log p_l(Y | theta) - log p^_l(Y).
double f_hat(const ForwardModel& model, int level, const Matrix& Y, const Vector& theta, const LaplaceFit& fit,
             int M, const NoiseSpec& noise, RandomStream& rng, WorkTally* tally = nullptr);

// ---------------------------------------------------------------------------
// Sample statistics and results
// ---------------------------------------------------------------------------

/// Welford accumulator for one level.
struct LevelStats {
  std::int64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;
  std::int64_t rejected = 0;
  WorkTally tally;

  void add(double x);
  void merge(const LevelStats& other);
  /// Unbiased sample variance; 0 with fewer than two samples.
  double variance() const;
};

struct LevelSummary {
  int level = 0;
  std::int64_t N = 0;
  int M = 0;
  double E = 0.0;
  double V = 0.0;
  double work = 0.0;
  std::int64_t evaluations = 0;
  std::int64_t rejected = 0;
};

struct EstimatorResult {
  std::string estimator;
  double value = 0.0;
  double stat_error = 0.0;  // C_alpha * sqrt(V[estimator])
  double bias_est = 0.0;
  double error_estimate = 0.0;  // adaptive quadrature only
  std::vector<LevelSummary> per_level;
  double total_work = 0.0;
  double pilot_work = 0.0;
  double wall_time = 0.0;
  std::uint64_t seed = 0;
  double tol = 0.0;
  double alpha = 0.05;
  int L = 0;
  double kappa = 0.0;
  int M = 0;
  std::int64_t rejected = 0;
  bool converged = true;
};

LevelSummary summarize(int level, int M, const LevelStats& stats, const MeshHierarchy& hierarchy);

struct SamplingOptions {
  bool use_is = true;
  int workers = default_workers();
  /// Fraction of outer samples that may be discarded for evidence underflow.
  double max_rejection_rate = 0.01;
  MapOptions map;
};

/// Stream for outer sample n of level l. Streams never depend on the pass
/// that requested the sample, so continuation and single runs agree.
RandomStream sample_stream(std::uint64_t seed, int level, std::int64_t n);

/// One f^ draw at the given level with M inner samples.
double f_hat_sample(const ForwardModel& model, const NoiseSpec& noise, int level, int M, bool use_is,
                    RandomStream& rng, WorkTally* tally, const MapOptions& map = {});

/// Evaluates sample(n, rng, tally) for n in [begin, end) on a worker pool and
/// folds the outcomes into stats in index order. Samples that raise
/// EvidenceUnderflow are counted as rejected.
template <class Sample>
void accumulate_samples(LevelStats& stats, std::int64_t begin, std::int64_t end, int workers, Sample&& sample) {
  if (end <= begin) return;
  const auto count = static_cast<std::size_t>(end - begin);
  std::vector<std::optional<double>> values(count);
  std::vector<WorkTally> tallies(count);
  parallel_for(count, workers, [&](std::size_t i) {
    try {
      values[i] = sample(begin + static_cast<std::int64_t>(i), tallies[i]);
    } catch (const EvidenceUnderflow&) {
      values[i].reset();
    }
  });
  for (std::size_t i = 0; i < count; ++i) {
    stats.tally.merge(tallies[i]);
    if (values[i])
      stats.add(*values[i]);
    else
      ++stats.rejected;
  }
}

/// Throws EvidenceUnderflow when rejected / (accepted + rejected) exceeds the cap.
void check_rejections(std::int64_t accepted, std::int64_t rejected, double cap);

/// Single-level DLMC (use_is off: prior inner sampling) or DLMCIS estimate.
EstimatorResult dlmc_estimate(const ForwardModel& model, const NoiseSpec& noise, int level, std::int64_t N, int M,
                              std::uint64_t seed, double alpha = 0.05, const SamplingOptions& options = {});

}  // namespace mleig
