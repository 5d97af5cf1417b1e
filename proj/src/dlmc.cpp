#include "mleig/dlmc.hpp"

#include <boost/math/distributions/normal.hpp>

#include <chrono>
#include <cmath>
#include <sstream>

namespace mleig {

OuterSample draw_outer_sample(const PriorSpec& prior, const NoiseSpec& noise, RandomStream& rng) {
  OuterSample s;
  s.theta = prior.sample(rng);
  s.eps.resize(noise.dim(), noise.repeats);
  for (int j = 0; j < noise.repeats; ++j)
    for (int i = 0; i < noise.dim(); ++i) s.eps(i, j) = std::sqrt(noise.variance[i]) * rng.normal();
  return s;
}

double confidence_constant(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal(), 1.0 - alpha / 2.0);
}

double log_likelihood(const Matrix& Y, const Vector& g, const NoiseSpec& noise) {
  const Matrix r = Y.colwise() - g;
  const double quad = (r.array().square().colwise() / noise.variance.array()).sum();
  return -0.5 * noise.repeats * noise.log_det_2pi() - 0.5 * quad;
}

double log_mean_exp(const Vector& terms, Eigen::Index count) {
  const double top = terms.head(count).maxCoeff();
  if (top == kNegInf) throw EvidenceUnderflow("evidence estimate: every inner term has zero mass");
  if (count == 1) return top;
  const double s = (terms.head(count).array() - top).exp().sum();
  return top + std::log(s / static_cast<double>(count));
}

Vector evidence_log_terms(const ForwardModel& model, int level, const Matrix& Y, const Matrix& thetas,
                          const LaplaceFit* fit, const NoiseSpec& noise, WorkTally* tally) {
  const auto& prior = model.prior();
  Vector terms(thetas.rows());
  for (Eigen::Index m = 0; m < thetas.rows(); ++m) {
    const Vector th = thetas.row(m).transpose();
    const double log_r = fit ? is_ratio_log(prior, *fit, th) : (prior.in_support(th) ? 0.0 : kNegInf);
    terms[m] = log_r == kNegInf ? kNegInf
                                : log_likelihood(Y, eval_forward(model, th, level, tally), noise) + log_r;
  }
  return terms;
}

Matrix prior_draws(const PriorSpec& prior, int count, RandomStream& rng) {
  Matrix t(count, prior.dim());
  for (int m = 0; m < count; ++m) t.row(m) = prior.sample(rng).transpose();
  return t;
}

double estimate_log_evidence_is(const ForwardModel& model, int level, const Matrix& Y, const LaplaceFit& fit, int M,
                                const NoiseSpec& noise, RandomStream& rng, WorkTally* tally) {
  if (M < 1) throw ConfigError("inner sample count M must be >= 1");
  return log_mean_exp(evidence_log_terms(model, level, Y, sample_is(fit, M, rng), &fit, noise, tally));
}

double estimate_log_evidence_prior(const ForwardModel& model, int level, const Matrix& Y, int M,
                                   const NoiseSpec& noise, RandomStream& rng, WorkTally* tally) {
  if (M < 1) throw ConfigError("inner sample count M must be >= 1");
  return log_mean_exp(
      evidence_log_terms(model, level, Y, prior_draws(model.prior(), M, rng), nullptr, noise, tally));
}

double f_hat(const ForwardModel& model, int level, const Matrix& Y, const Vector& theta, const LaplaceFit& fit,
             int M, const NoiseSpec& noise, RandomStream& rng, WorkTally* tally) {
  const double ll = log_likelihood(Y, eval_forward(model, theta, level, tally), noise);
  return ll - estimate_log_evidence_is(model, level, Y, fit, M, noise, rng, tally);
}

// --- statistics ------------------------------------------------------------

void LevelStats::add(double x) {
  ++count;
  const double delta = x - mean;
  mean += delta / static_cast<double>(count);
  m2 += delta * (x - mean);
}

void LevelStats::merge(const LevelStats& other) {
  tally.merge(other.tally);
  rejected += other.rejected;
  if (other.count == 0) return;
  if (count == 0) {
    count = other.count;
    mean = other.mean;
    m2 = other.m2;
    return;
  }
  const double n1 = static_cast<double>(count), n2 = static_cast<double>(other.count);
  const double delta = other.mean - mean;
  count += other.count;
  mean += delta * n2 / (n1 + n2);
  m2 += other.m2 + delta * delta * n1 * n2 / (n1 + n2);
}

double LevelStats::variance() const {
  return count > 1 ? std::max(0.0, m2 / static_cast<double>(count - 1)) : 0.0;
}

LevelSummary summarize(int level, int M, const LevelStats& stats, const MeshHierarchy& hierarchy) {
  LevelSummary s;
  s.level = level;
  s.N = stats.count;
  s.M = M;
  s.E = stats.mean;
  s.V = stats.variance();
  s.work = stats.tally.work(hierarchy);
  s.evaluations = stats.tally.total_count();
  s.rejected = stats.rejected;
  return s;
}

RandomStream sample_stream(std::uint64_t seed, int level, std::int64_t n) {
  return RandomStream(seed, {static_cast<std::uint64_t>(level), static_cast<std::uint64_t>(n)});
}

double f_hat_sample(const ForwardModel& model, const NoiseSpec& noise, int level, int M, bool use_is,
                    RandomStream& rng, WorkTally* tally, const MapOptions& map) {
  const OuterSample outer = draw_outer_sample(model.prior(), noise, rng);
  const Vector g = eval_forward(model, outer.theta, level, tally);
  const Matrix Y = outer.data(g);
  const double ll = log_likelihood(Y, g, noise);
  if (!use_is) return ll - estimate_log_evidence_prior(model, level, Y, M, noise, rng, tally);
  const LaplaceFit fit = fit_laplace(model, level, Y, noise, outer.theta, tally, map);
  return ll - estimate_log_evidence_is(model, level, Y, fit, M, noise, rng, tally);
}

void check_rejections(std::int64_t accepted, std::int64_t rejected, double cap) {
  const auto total = accepted + rejected;
  if (total == 0 || rejected == 0) return;
  if (static_cast<double>(rejected) > cap * static_cast<double>(total)) {
    std::ostringstream os;
    os << "evidence underflow in " << rejected << " of " << total << " outer samples (cap " << cap * 100 << "%)";
    throw EvidenceUnderflow(os.str());
  }
}

EstimatorResult dlmc_estimate(const ForwardModel& model, const NoiseSpec& noise, int level, std::int64_t N, int M,
                              std::uint64_t seed, double alpha, const SamplingOptions& options) {
  if (N < 1 || M < 1) throw ConfigError("dlmc: N and M must be >= 1");
  model.check_level(level);
  const auto start = std::chrono::steady_clock::now();
  LevelStats stats;
  accumulate_samples(stats, 0, N, options.workers, [&](std::int64_t n, WorkTally& tally) {
    RandomStream rng = sample_stream(seed, level, n);
    return f_hat_sample(model, noise, level, M, options.use_is, rng, &tally, options.map);
  });
  check_rejections(stats.count, stats.rejected, options.max_rejection_rate);

  EstimatorResult r;
  r.estimator = options.use_is ? "dlmcis" : "dlmc";
  r.value = stats.mean;
  r.alpha = alpha;
  r.stat_error = stats.count > 0
                     ? confidence_constant(alpha) * std::sqrt(stats.variance() / static_cast<double>(stats.count))
                     : 0.0;
  r.per_level.push_back(summarize(level, M, stats, model.hierarchy()));
  r.total_work = r.per_level.back().work;
  r.seed = seed;
  r.L = level;
  r.M = M;
  r.rejected = stats.rejected;
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace mleig
