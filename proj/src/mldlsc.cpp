#include "mleig/mldlsc.hpp"

#include <chrono>
#include <cmath>

namespace mleig {

double psi(const ForwardModel& model, int ell, const Vector& theta_tilde, const Matrix& Y, const LaplaceFit& fit,
           const NoiseSpec& noise, WorkTally* tally) {
  const double log_r = is_ratio_log(model.prior(), fit, theta_tilde);
  if (log_r == kNegInf) return 0.0;
  return std::exp(log_likelihood(Y, eval_forward(model, theta_tilde, ell, tally), noise) + log_r);
}

double f_tilde(const ForwardModel& model, int ell, const Vector& theta, const Matrix& eps, const MultiIndex& beta2,
               const NoiseSpec& noise, WorkTally* tally, const MapOptions& map) {
  const int d = model.dim_theta();
  if (static_cast<int>(beta2.size()) != d) throw ConfigError("f_tilde: beta2 must have one entry per parameter");
  const auto& prior = model.prior();
  const Vector g = eval_forward(model, theta, ell, tally);
  const Matrix Y = eps.colwise() + g;
  const MapResult mr = find_map_full(model, ell, Y, noise, theta, tally, map);
  LaplaceFit fit = LaplaceFit::from_moments(mr.theta, laplace_covariance_from_jacobian(mr.J, prior, noise));

  std::vector<QuadratureRule1D<double>> rules;
  for (int b : beta2) rules.push_back(gh_rule(b));
  // log of sum_j w_j Psi(theta~_j), accumulated as a log-sum-exp.
  std::vector<double> logs;
  std::vector<std::size_t> idx(static_cast<std::size_t>(d), 0);
  Vector z(d);
  for (;;) {
    double logw = 0.0;
    for (int i = 0; i < d; ++i) {
      const auto& r = rules[static_cast<std::size_t>(i)];
      z[i] = r.points[idx[static_cast<std::size_t>(i)]];
      logw += std::log(r.weights[idx[static_cast<std::size_t>(i)]]);
    }
    const Vector tt = fit.theta_hat + fit.chol * z;
    const double log_r = is_ratio_log(prior, fit, tt);
    if (log_r != kNegInf) {
      const Vector gt = z.isZero(0.0) ? mr.g : eval_forward(model, tt, ell, tally);
      logs.push_back(logw + log_likelihood(Y, gt, noise) + log_r);
    }
    std::size_t k = 0;
    while (k < idx.size() && ++idx[k] == rules[k].size()) idx[k++] = 0;
    if (k == idx.size()) break;
  }
  if (logs.empty()) throw EvidenceUnderflow("f_tilde: every inner node lies outside the prior support");
  const double top = *std::max_element(logs.begin(), logs.end());
  double s = 0.0;
  for (double v : logs) s += std::exp(v - top);
  return log_likelihood(Y, g, noise) - (top + std::log(s));
}

// --- integrator ---------------------------------------------------------------

MldlscIntegrator::MldlscIntegrator(const ForwardModel& model, const NoiseSpec& noise, MldlscOptions options)
    : model_(model),
      noise_(noise),
      options_(options),
      has_level_(!model.level_independent()),
      outer_dim_(model.dim_theta() + noise.dim() * noise.repeats),
      beta2_(static_cast<std::size_t>(model.dim_theta()), options.beta2) {
  if (options_.beta2 < 1) throw ConfigError("mldlsc: beta2 must be >= 1");
  if (noise.dim() != model.dim_output()) throw ConfigError("mldlsc: noise dimension must match the model output");
}

MultiIndex MldlscIntegrator::root() const {
  MultiIndex r(static_cast<std::size_t>(outer_dim_), 1);
  if (has_level_) r.insert(r.begin(), 0);
  return r;
}

std::vector<QuadratureRule1D<double>> MldlscIntegrator::rules_for(const MultiIndex& beta1) const {
  std::vector<QuadratureRule1D<double>> rules;
  const int d = model_.dim_theta();
  for (int i = 0; i < outer_dim_; ++i) {
    const int b = beta1[static_cast<std::size_t>(i)];
    const bool uniform = i < d && model_.prior()[i].is_uniform();
    rules.push_back(uniform ? cc_rule(b) : gh_rule(b));
  }
  return rules;
}

MldlscIntegrator::Node MldlscIntegrator::node_at(int ell, const Vector& z) const {
  const int d = model_.dim_theta(), q = noise_.dim();
  Node n{ell, Vector(d), Matrix(q, noise_.repeats)};
  for (int i = 0; i < d; ++i) {
    const auto& p = model_.prior()[i];
    n.theta[i] = p.is_uniform() ? 0.5 * (p.a + p.b) + 0.5 * (p.b - p.a) * z[i] : p.a + std::sqrt(p.b) * z[i];
  }
  for (int j = 0; j < noise_.repeats; ++j)
    for (int i = 0; i < q; ++i) n.eps(i, j) = std::sqrt(noise_.variance[i]) * z[d + j * q + i];
  return n;
}

double MldlscIntegrator::U(const MultiIndex& index) {
  if (has_level_) return U(index[0], MultiIndex(index.begin() + 1, index.end()));
  return U(0, index);
}

double MldlscIntegrator::U(int ell, const MultiIndex& beta1) {
  if (static_cast<int>(beta1.size()) != outer_dim_) throw ConfigError("mldlsc: beta1 has the wrong length");
  model_.check_level(ell);
  const auto rules = rules_for(beta1);
  std::vector<std::vector<double>> w(rules.size());
  for (std::size_t i = 0; i < rules.size(); ++i) w[i] = rules[i].probability_weights();

  std::vector<std::vector<double>> keys;
  std::vector<double> weights;
  std::vector<std::size_t> idx(rules.size(), 0);
  Vector z(outer_dim_);
  for (;;) {
    double wt = 1.0;
    for (std::size_t i = 0; i < rules.size(); ++i) {
      z[static_cast<Eigen::Index>(i)] = rules[i].points[idx[i]];
      wt *= w[i][idx[i]];
    }
    const Node n = node_at(ell, z);
    std::vector<double> key{static_cast<double>(ell)};
    key.insert(key.end(), n.theta.data(), n.theta.data() + n.theta.size());
    key.insert(key.end(), n.eps.data(), n.eps.data() + n.eps.size());
    keys.push_back(std::move(key));
    weights.push_back(wt);
    std::size_t k = 0;
    while (k < idx.size() && ++idx[k] == rules[k].size()) idx[k++] = 0;
    if (k == idx.size()) break;
  }

  std::vector<std::size_t> missing;
  for (std::size_t j = 0; j < keys.size(); ++j)
    if (!cache_.count(keys[j])) missing.push_back(j);
  std::vector<double> values(missing.size());
  std::vector<WorkTally> tallies(missing.size());
  const int d = model_.dim_theta(), q = noise_.dim();
  parallel_for(missing.size(), options_.workers, [&](std::size_t i) {
    const auto& key = keys[missing[i]];
    const Vector theta = Eigen::Map<const Vector>(key.data() + 1, d);
    const Matrix eps = Eigen::Map<const Matrix>(key.data() + 1 + d, q, noise_.repeats);
    values[i] = f_tilde(model_, ell, theta, eps, beta2_, noise_, &tallies[i], options_.map);
  });
  for (std::size_t i = 0; i < missing.size(); ++i) {
    cache_.emplace(keys[missing[i]], values[i]);
    tally_.merge(tallies[i]);
  }

  double sum = 0.0;
  for (std::size_t j = 0; j < keys.size(); ++j) sum += weights[j] * cache_.at(keys[j]);
  return sum;
}

double MldlscIntegrator::cost(const MultiIndex& index) const {
  double c = 1.0;
  std::size_t start = 0;
  if (has_level_) {
    c = model_.hierarchy().work(index[0]);
    start = 1;
  }
  const int d = model_.dim_theta();
  for (std::size_t i = start; i < index.size(); ++i) {
    const int dim = static_cast<int>(i - start);
    const bool uniform = dim < d && model_.prior()[dim].is_uniform();
    c *= uniform ? cc_count(index[i]) : gh_count(index[i]);
  }
  return c;
}

// --- estimator ------------------------------------------------------------------

EstimatorResult mldlsc_estimate(const ForwardModel& model, const NoiseSpec& noise, const MldlscOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  MldlscIntegrator integ(model, noise, options);
  const MultiIndex floors = integ.root();
  IndexFunctionCache U([&](const MultiIndex& index) { return integ.U(index); });
  std::map<MultiIndex, double> deltas;

  auto profit = [&](const MultiIndex& index) -> Profit {
    if (integ.has_level() && index[0] > model.max_level()) {
      // Extrapolate the level direction from the admitted parent.
      MultiIndex parent = index;
      --parent[0];
      double est = deltas.at(parent);
      MultiIndex grand = parent;
      --grand[0];
      if (grand[0] >= 1 && deltas.count(grand) && deltas.at(grand) != 0.0)
        est *= std::min(1.0, std::abs(est / deltas.at(grand)));
      return {est, integ.cost(index), true};
    }
    const double delta = mixed_difference(index, U, floors);
    deltas[index] = delta;
    return {delta, integ.cost(index), false};
  };

  const AdaptResult a = adapt_index_set(profit, floors, {options.tol, options.max_work, options.max_indices});

  EstimatorResult r;
  r.estimator = "mldlsc";
  r.value = a.value;
  r.error_estimate = a.error_estimate;
  r.converged = a.converged;
  r.tol = options.tol;
  r.total_work = integ.tally().work(model.hierarchy());
  int L = 0;
  for (const auto& index : a.set) L = std::max(L, integ.has_level() ? index[0] : 0);
  r.L = L;
  r.M = 1;
  for (int i = 0; i < model.dim_theta(); ++i) r.M *= gh_count(options.beta2);
  for (int l = 0; l <= L; ++l) {
    LevelSummary s;
    s.level = l;
    s.M = r.M;
    for (const auto& index : a.set)
      if ((integ.has_level() ? index[0] : 0) == l) {
        s.E += a.profits.at(index).delta;
        ++s.N;
      }
    s.evaluations = integ.tally().count(l);
    s.work = static_cast<double>(s.evaluations) * model.hierarchy().work(l);
    r.per_level.push_back(s);
  }
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace mleig
