#include "mleig/mldlmc.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace mleig {

double delta_f_sample(const ForwardModel& model, const NoiseSpec& noise, int ell, int M_ell, int M_prev, bool use_is,
                      RandomStream& rng, WorkTally* tally, DeltaTrace* trace, const MapOptions& map) {
  if (ell < 0) throw LevelOutOfRange("delta_f_sample: negative level");
  if (ell > 0 && (M_prev < 1 || M_prev > M_ell)) throw ConfigError("delta_f_sample: need 1 <= M_prev <= M_ell");
  const auto& prior = model.prior();

  const OuterSample outer = draw_outer_sample(prior, noise, rng);
  const Vector g_fine = eval_forward(model, outer.theta, ell, tally);
  const Matrix Y_fine = outer.data(g_fine);
  std::optional<LaplaceFit> fit;
  Matrix inner;
  if (use_is) {
    fit = fit_laplace(model, ell, Y_fine, noise, outer.theta, tally, map);
    inner = sample_is(*fit, M_ell, rng);
  } else {
    inner = prior_draws(prior, M_ell, rng);
  }
  const LaplaceFit* fit_ptr = fit ? &*fit : nullptr;
  const Vector fine_terms = evidence_log_terms(model, ell, Y_fine, inner, fit_ptr, noise, tally);
  const double fine = log_likelihood(Y_fine, g_fine, noise) - log_mean_exp(fine_terms);

  Vector g_coarse, coarse_terms;
  Matrix Y_coarse;
  double coarse = 0.0;
  if (ell > 0) {
    g_coarse = eval_forward(model, outer.theta, ell - 1, tally);
    Y_coarse = outer.data(g_coarse);
    coarse_terms = evidence_log_terms(model, ell - 1, Y_coarse, inner.topRows(M_prev), fit_ptr, noise, tally);
    coarse = log_likelihood(Y_coarse, g_coarse, noise) - log_mean_exp(coarse_terms);
  }

  if (trace) {
    trace->outer = outer;
    trace->fit = fit;
    trace->inner = inner;
    trace->g_fine = g_fine;
    trace->g_coarse = g_coarse;
    trace->Y_fine = Y_fine;
    trace->Y_coarse = Y_coarse;
    trace->fine_terms = fine_terms;
    trace->coarse_terms = coarse_terms;
    trace->fine = fine;
    trace->coarse = coarse;
    trace->M_fine = M_ell;
    trace->M_coarse = ell > 0 ? M_prev : 0;
  }
  return fine - coarse;
}

double theoretical_variance_bound(double M_ell, double M_prev, double h_ell, double eta_s, double eta_w) {
  const double a = 1.0 / M_ell - 1.0 / M_prev;
  return M_ell * a * a + std::pow(h_ell, 2.0 * eta_s) / M_prev + (M_ell - M_prev) / (M_prev * M_prev) +
         std::pow(h_ell, 2.0 * eta_w);
}

std::pair<double, double> fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  if (x.size() < 2 || x.size() != y.size()) throw RateEstimationError("fit_line: need at least two points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

// --- pilot -----------------------------------------------------------------

namespace {

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t tag) {
  RandomStream s(seed, {tag});
  return s();
}

constexpr std::uint64_t kPilotTag = 0x70696c6f74ULL;
constexpr std::uint64_t kSingleTag = 0x73696e676cULL;

}  // namespace

PilotResult pilot_run(const ForwardModel& model, const NoiseSpec& noise, const PilotOptions& pilot, std::uint64_t seed,
                      const SamplingOptions& sampling) {
  if (pilot.L < 0 || pilot.N < 2 || pilot.M_low < 1 || pilot.M_high <= pilot.M_low)
    throw ConfigError("pilot: need L >= 0, N >= 2 and 1 <= M_low < M_high");
  model.check_level(pilot.L);
  const auto& hier = model.hierarchy();
  const std::uint64_t pseed = derived_seed(seed, kPilotTag);

  PilotResult r;
  r.L = pilot.L;
  r.N = pilot.N;
  r.M_low = pilot.M_low;
  r.M_high = pilot.M_high;
  WorkTally total;
  double sum_low = 0.0, sum_high = 0.0;
  for (int l = 0; l <= pilot.L; ++l) {
    LevelStats low, high;
    std::vector<double> dg2(static_cast<std::size_t>(pilot.N), 0.0);
    for (int pass = 0; pass < 2; ++pass) {
      const int M = pass == 0 ? pilot.M_low : pilot.M_high;
      accumulate_samples(pass == 0 ? low : high, 0, pilot.N, sampling.workers, [&](std::int64_t n, WorkTally& t) {
        RandomStream rng = sample_stream(pseed, l, n);
        DeltaTrace trace;
        const double v = delta_f_sample(model, noise, l, M, M, sampling.use_is, rng, &t, &trace, sampling.map);
        if (pass == 0 && l > 0) {
          const Vector d = trace.g_fine - trace.g_coarse;
          dg2[static_cast<std::size_t>(n)] = (d.array().square() / noise.variance.array()).sum();
        }
        return v;
      });
    }
    total.merge(low.tally);
    total.merge(high.tally);
    r.rejected += low.rejected + high.rejected;
    r.E_low.push_back(low.mean);
    r.E_high.push_back(high.mean);
    r.V_low.push_back(low.variance());
    r.V_high.push_back(high.variance());
    double m = 0.0;
    for (double v : dg2) m += v / static_cast<double>(dg2.size());
    r.dg2.push_back(m);
    sum_low += low.mean;
    sum_high += high.mean;
  }
  r.work = total.work(hier);

  // Wall-clock cost per evaluation at each level, for the work exponent.
  {
    RandomStream rng = sample_stream(pseed, pilot.L + 1, 0);
    const Vector theta = model.prior().sample(rng);
    for (int l = 0; l <= pilot.L; ++l) {
      const int reps = 3;
      const auto start = std::chrono::steady_clock::now();
      for (int k = 0; k < reps; ++k) (void)model.evaluate(theta, l);
      r.seconds_per_eval.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() /
                                   reps);
    }
  }

  r.constants.C1 = std::abs(sum_low - sum_high) / (1.0 / pilot.M_low - 1.0 / pilot.M_high);
  r.constants.eta_w = hier.eta_w;
  r.constants.eta_s = hier.eta_s;
  r.gamma = hier.gamma;
  if (pilot.L == 0) return r;

  std::vector<double> logh, logE, logdg, logt;
  for (int l = 1; l <= pilot.L; ++l) {
    const double e = std::abs(r.E_high[static_cast<std::size_t>(l)]);
    if (!(e > 0.0) || !std::isfinite(e))
      throw RateEstimationError("pilot: E_" + std::to_string(l) +
                                " is zero; the model shows no level dependence, raise L_pilot or treat it as "
                                "level independent");
    logh.push_back(std::log(hier.h(l)));
    logE.push_back(std::log(e));
    logdg.push_back(std::log(std::max(r.dg2[static_cast<std::size_t>(l)], std::numeric_limits<double>::min())));
  }
  if (pilot.L < 2) throw RateEstimationError("pilot: rate fits need L_pilot >= 2");
  const auto [eta_w, logc] = fit_line(logh, logE);
  if (!(eta_w > 0.0)) {
    std::ostringstream os;
    os << "pilot: |E_l| does not decay (fitted slope " << eta_w << "); raise L_pilot";
    throw RateEstimationError(os.str());
  }
  r.constants.eta_w = eta_w;
  r.c_E = std::exp(logc);
  r.constants.C2 = r.c_E / (std::pow(static_cast<double>(hier.beta), eta_w) - 1.0);
  const double two_eta_s = fit_line(logh, logdg).first;
  r.constants.eta_s = two_eta_s > 0.0 ? 0.5 * two_eta_s : eta_w;

  std::vector<double> lh_all;
  for (int l = 0; l <= pilot.L; ++l) {
    lh_all.push_back(std::log(hier.h(l)));
    logt.push_back(std::log(std::max(r.seconds_per_eval[static_cast<std::size_t>(l)], 1e-12)));
  }
  r.gamma = -fit_line(lh_all, logt).first;
  return r;
}

// --- parameter selection ----------------------------------------------------

int optimal_level(double TOL, double C2, double eta_w, const MeshHierarchy& hierarchy) {
  if (!(TOL > 0.0)) throw ConfigError("TOL must be > 0");
  if (!(C2 > 0.0 && eta_w > 0.0)) return 0;
  const double lb = std::log(static_cast<double>(hierarchy.beta));
  const double x = (std::log(2.0 * C2 * std::pow(hierarchy.h0, eta_w)) / lb + std::log(1.0 / TOL) / lb) / eta_w;
  return std::max(0, static_cast<int>(std::ceil(x)));
}

std::vector<std::int64_t> optimal_samples(const std::vector<double>& V, const std::vector<int>& M,
                                          const MeshHierarchy& hierarchy, double kappa, double TOL, double C_alpha) {
  double sum = 0.0;
  for (std::size_t l = 0; l < V.size(); ++l)
    sum += std::sqrt(V[l] * M[l] * hierarchy.work(static_cast<int>(l)));
  const double pre = std::pow(C_alpha / (kappa * TOL), 2.0);
  std::vector<std::int64_t> N(V.size());
  for (std::size_t l = 0; l < V.size(); ++l) {
    const double n = pre * std::sqrt(V[l] / (M[l] * hierarchy.work(static_cast<int>(l)))) * sum;
    N[l] = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(n)));
  }
  return N;
}

std::vector<double> extend_variances(std::vector<double> V, int L, int M, const MeshHierarchy& hierarchy,
                                     double eta_s, double eta_w) {
  if (V.empty()) throw ConfigError("extend_variances: need V_0");
  const int last = static_cast<int>(V.size()) - 1;
  for (int l = last + 1; l <= L; ++l) {
    if (last == 0) {
      // Nothing to scale from above level 0; fall back to the bound itself times V_0.
      V.push_back(V[0] * theoretical_variance_bound(M, M, hierarchy.h(l), eta_s, eta_w) /
                  theoretical_variance_bound(M, M, hierarchy.h(1), eta_s, eta_w));
    } else {
      V.push_back(V[static_cast<std::size_t>(last)] *
                  theoretical_variance_bound(M, M, hierarchy.h(l), eta_s, eta_w) /
                  theoretical_variance_bound(M, M, hierarchy.h(last), eta_s, eta_w));
    }
  }
  V.resize(static_cast<std::size_t>(L) + 1);
  return V;
}

MlParameters select_parameters(double TOL, double alpha, const RateConstants& c, const MeshHierarchy& hierarchy,
                               const std::vector<double>& V, bool level_independent, int max_level) {
  MlParameters p;
  p.TOL = TOL;
  p.alpha = alpha;
  p.C_alpha = confidence_constant(alpha);
  if (level_independent) {
    p.L = 0;
    p.kappa = 0.5;
  } else {
    p.L = optimal_level(TOL, c.C2, c.eta_w, hierarchy);
    for (;;) {
      p.kappa = 1.0 - c.C2 * std::pow(hierarchy.h(p.L), c.eta_w) / TOL;
      if (p.kappa > 0.0 && p.kappa < 1.0) break;
      if (p.kappa >= 1.0) {
        // C2 = 0 leaves no discretization bias to budget for.
        p.kappa = 0.5;
        break;
      }
      ++p.L;
    }
  }
  if (p.L > max_level) {
    std::ostringstream os;
    os << "select_parameters: TOL " << TOL << " needs level " << p.L << " but max_level is " << max_level;
    throw ResourceError(os.str());
  }
  const int ML = std::max(1, static_cast<int>(std::ceil(c.C1 / ((1.0 - p.kappa) * TOL))));
  p.M.assign(static_cast<std::size_t>(p.L) + 1, ML);
  const auto Vx = extend_variances(V, p.L, ML, hierarchy, c.eta_s, c.eta_w);
  p.N = optimal_samples(Vx, p.M, hierarchy, p.kappa, TOL, p.C_alpha);
  return p;
}

// --- estimators -------------------------------------------------------------

namespace {

void sample_level(const ForwardModel& model, const NoiseSpec& noise, int l, int M, std::uint64_t seed,
                  LevelStats& stats, std::int64_t& next, std::int64_t target, const SamplingOptions& sampling) {
  if (stats.count >= target) return;
  const std::int64_t begin = next, end = next + (target - stats.count);
  accumulate_samples(stats, begin, end, sampling.workers, [&](std::int64_t n, WorkTally& t) {
    RandomStream rng = sample_stream(seed, l, n);
    return delta_f_sample(model, noise, l, M, M, sampling.use_is, rng, &t, nullptr, sampling.map);
  });
  next = end;
}

EstimatorResult assemble_result(const ForwardModel& model, const std::vector<LevelStats>& stats, int M,
                                double C_alpha) {
  EstimatorResult r;
  double var = 0.0;
  for (std::size_t l = 0; l < stats.size(); ++l) {
    r.per_level.push_back(summarize(static_cast<int>(l), M, stats[l], model.hierarchy()));
    r.value += stats[l].mean;
    if (stats[l].count > 0) var += stats[l].variance() / static_cast<double>(stats[l].count);
    r.total_work += r.per_level.back().work;
    r.rejected += stats[l].rejected;
  }
  r.stat_error = C_alpha * std::sqrt(var);
  r.L = static_cast<int>(stats.size()) - 1;
  r.M = M;
  return r;
}

}  // namespace

EstimatorResult mldlmc_run(const ForwardModel& model, const NoiseSpec& noise, const MlParameters& params,
                           std::uint64_t seed, const SamplingOptions& sampling) {
  const auto start = std::chrono::steady_clock::now();
  model.check_level(params.L);
  std::vector<LevelStats> stats(static_cast<std::size_t>(params.L) + 1);
  const int M = params.M.empty() ? 1 : params.M.back();
  for (int l = 0; l <= params.L; ++l) {
    std::int64_t next = 0;
    sample_level(model, noise, l, M, seed, stats[static_cast<std::size_t>(l)], next,
                 params.N.at(static_cast<std::size_t>(l)), sampling);
  }
  std::int64_t acc = 0, rej = 0;
  for (const auto& s : stats) {
    acc += s.count;
    rej += s.rejected;
  }
  check_rejections(acc, rej, sampling.max_rejection_rate);
  auto r = assemble_result(model, stats, M, confidence_constant(params.alpha));
  r.estimator = "mldlmc";
  r.kappa = params.kappa;
  r.tol = params.TOL;
  r.alpha = params.alpha;
  r.seed = seed;
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

EstimatorResult mldlmc_estimate(const ForwardModel& model, const NoiseSpec& noise, const MldlmcOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const auto& hier = model.hierarchy();
  const bool flat = model.level_independent();

  PilotResult pilot;
  if (options.constants) {
    pilot = *options.constants;
  } else {
    PilotOptions po = options.pilot;
    if (flat) po.L = 0;
    pilot = pilot_run(model, noise, po, options.seed, options.sampling);
  }
  RateConstants rc = pilot.constants;
  if (flat) rc.C2 = 0.0;

  // Pilot variances rescaled to the inner sample count actually used.
  auto pilot_variances = [&](int M) {
    std::vector<double> V = pilot.V_low;
    for (std::size_t l = 1; l < V.size(); ++l) {
      const double h = hier.h(static_cast<int>(l));
      V[l] *= theoretical_variance_bound(M, M, h, rc.eta_s, rc.eta_w) /
              theoretical_variance_bound(pilot.M_low, pilot.M_low, h, rc.eta_s, rc.eta_w);
    }
    return V;
  };

  MlParameters params = select_parameters(options.TOL, options.alpha, rc, hier, pilot_variances(1), flat,
                                          model.max_level());
  const int M = params.M.back();
  if (M != 1) params = select_parameters(options.TOL, options.alpha, rc, hier, pilot_variances(M), flat,
                                         model.max_level());
  const int L = params.L;
  const auto Lsz = static_cast<std::size_t>(L) + 1;

  std::vector<LevelStats> stats(Lsz);
  std::vector<std::int64_t> next(Lsz, 0);
  const std::vector<double> V_pilot = extend_variances(pilot_variances(M), L, M, hier, rc.eta_s, rc.eta_w);

  auto current_variances = [&] {
    std::vector<double> V(Lsz);
    int ref = -1;  // last level >= 1 with enough samples
    for (std::size_t l = 0; l < Lsz; ++l) {
      const int li = static_cast<int>(l);
      if (stats[l].count >= options.min_variance_samples) {
        V[l] = stats[l].variance();
        if (li >= 1) ref = li;
      } else if (ref >= 1) {
        V[l] = V[static_cast<std::size_t>(ref)] * theoretical_variance_bound(M, M, hier.h(li), rc.eta_s, rc.eta_w) /
               theoretical_variance_bound(M, M, hier.h(ref), rc.eta_s, rc.eta_w);
      } else {
        V[l] = V_pilot[l];
      }
    }
    return V;
  };

  auto top_up = [&](double tol) {
    const auto N = optimal_samples(current_variances(), params.M, hier, params.kappa, tol, params.C_alpha);
    for (std::size_t l = 0; l < Lsz; ++l)
      sample_level(model, noise, static_cast<int>(l), M, options.seed, stats[l], next[l], N[l], options.sampling);
  };

  for (double factor : options.schedule) top_up(factor * options.TOL);
  const double budget = std::pow(params.kappa * options.TOL / params.C_alpha, 2.0);
  for (int it = 0; it < options.max_topups; ++it) {
    const auto V = current_variances();
    double var = 0.0;
    for (std::size_t l = 0; l < Lsz; ++l) var += V[l] / static_cast<double>(std::max<std::int64_t>(1, stats[l].count));
    if (var <= budget) break;
    top_up(options.TOL);
  }

  std::int64_t acc = 0, rej = 0;
  for (const auto& s : stats) {
    acc += s.count;
    rej += s.rejected;
  }
  check_rejections(acc, rej, options.sampling.max_rejection_rate);

  auto r = assemble_result(model, stats, M, params.C_alpha);
  r.estimator = "mldlmc";
  r.kappa = params.kappa;
  r.tol = options.TOL;
  r.alpha = options.alpha;
  r.seed = options.seed;
  r.bias_est = (flat ? 0.0 : rc.C2 * std::pow(hier.h(L), rc.eta_w)) + rc.C1 / M;
  r.pilot_work = options.constants ? 0.0 : pilot.work;
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

EstimatorResult dlmc_for_tol(const ForwardModel& model, const NoiseSpec& noise, double TOL, double alpha,
                             const PilotResult& constants, std::uint64_t seed, const SamplingOptions& sampling,
                             std::int64_t initial_N) {
  const auto start = std::chrono::steady_clock::now();
  const auto& hier = model.hierarchy();
  const bool flat = model.level_independent();
  RateConstants rc = constants.constants;
  if (flat) rc.C2 = 0.0;
  const auto params = select_parameters(TOL, alpha, rc, hier, {1.0}, flat, model.max_level());
  const int L = params.L, M = params.M.back();
  const std::uint64_t sseed = derived_seed(seed, kSingleTag);

  LevelStats stats;
  std::int64_t next = 0;
  auto run_to = [&](std::int64_t target) {
    if (stats.count >= target) return;
    const std::int64_t begin = next, end = next + (target - stats.count);
    accumulate_samples(stats, begin, end, sampling.workers, [&](std::int64_t n, WorkTally& t) {
      RandomStream rng = sample_stream(sseed, L, n);
      return f_hat_sample(model, noise, L, M, sampling.use_is, rng, &t, sampling.map);
    });
    next = end;
  };
  const double scale = std::pow(params.C_alpha / (params.kappa * TOL), 2.0);
  run_to(initial_N);
  for (int it = 0; it < 20; ++it) {
    const auto target = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(scale * stats.variance())));
    if (stats.count >= target) break;
    run_to(target);
  }
  check_rejections(stats.count, stats.rejected, sampling.max_rejection_rate);

  EstimatorResult r;
  r.estimator = sampling.use_is ? "dlmcis" : "dlmc";
  r.value = stats.mean;
  r.stat_error = params.C_alpha * std::sqrt(stats.variance() / static_cast<double>(std::max<std::int64_t>(1, stats.count)));
  r.per_level.push_back(summarize(L, M, stats, hier));
  r.total_work = r.per_level.back().work;
  r.bias_est = (flat ? 0.0 : rc.C2 * std::pow(hier.h(L), rc.eta_w)) + rc.C1 / M;
  r.tol = TOL;
  r.alpha = alpha;
  r.seed = seed;
  r.L = L;
  r.kappa = params.kappa;
  r.M = M;
  r.rejected = stats.rejected;
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace mleig
