#include "mleig/laplace.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace mleig {

LaplaceFit LaplaceFit::from_moments(Vector mean, Matrix covariance) {
  LaplaceFit fit;
  fit.theta_hat = std::move(mean);
  fit.Sigma_hat = 0.5 * (covariance + covariance.transpose());
  Eigen::LLT<Matrix> llt(fit.Sigma_hat);
  if (llt.info() != Eigen::Success) throw DecompositionError("laplace: covariance is not SPD");
  fit.chol = llt.matrixL();
  const double d = static_cast<double>(fit.theta_hat.size());
  fit.log_norm_const =
      -0.5 * d * std::log(2.0 * std::numbers::pi) - fit.chol.diagonal().array().log().sum();
  return fit;
}

namespace {

struct Objective {
  Vector ybar;
  Vector w;  // 1 / variance
  double ne;
  const PriorSpec& prior;

  double operator()(const Vector& theta, const Vector& g) const {
    return 0.5 * ne * ((ybar - g).array().square() * w.array()).sum() - prior.log_density(theta);
  }
  Vector gradient(const Vector& theta, const Vector& g, const Matrix& J) const {
    return ne * J.transpose() * (w.array() * (ybar - g).array()).matrix() + prior.neg_log_density_gradient(theta);
  }
  Matrix hessian(const Matrix& J) const {
    return ne * J.transpose() * w.asDiagonal() * J + prior.neg_log_density_hessian();
  }
};

// Coordinates held at a bound because the gradient pushes outward.
std::vector<bool> active_set(const PriorSpec& prior, const Vector& theta, const Vector& grad) {
  std::vector<bool> active(static_cast<std::size_t>(theta.size()), false);
  for (int i = 0; i < theta.size(); ++i) {
    if (!prior.has_lower(i)) continue;
    active[static_cast<std::size_t>(i)] =
        (theta[i] <= prior.lower(i) && grad[i] > 0.0) || (theta[i] >= prior.upper(i) && grad[i] < 0.0);
  }
  return active;
}

bool touches_bound(const PriorSpec& prior, const Vector& theta) {
  for (int i = 0; i < theta.size(); ++i)
    if (prior.has_lower(i) && (theta[i] <= prior.lower(i) || theta[i] >= prior.upper(i))) return true;
  return false;
}

Vector solve_spd_or_damped(Matrix H, const Vector& rhs) {
  Eigen::LLT<Matrix> llt(H);
  if (llt.info() == Eigen::Success) return llt.solve(rhs);
  const double scale = std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
  for (double mu = 1e-12; mu <= 1.0; mu *= 100.0) {
    llt.compute(H + mu * scale * Matrix::Identity(H.rows(), H.cols()));
    if (llt.info() == Eigen::Success) return llt.solve(rhs);
  }
  return -rhs;
}

}  // namespace

MapResult find_map_full(const ForwardModel& model, int level, const Matrix& Y, const NoiseSpec& noise,
                        const Vector& theta_init, WorkTally* tally, const MapOptions& options) {
  const auto& prior = model.prior();
  if (Y.rows() != noise.dim() || Y.cols() != noise.repeats)
    throw ConfigError("find_map: data must be q x N_e");
  const Objective F{Y.rowwise().mean(), noise.variance.cwiseInverse(), static_cast<double>(noise.repeats), prior};

  MapResult r;
  r.theta = prior.project(theta_init);
  r.g = eval_forward(model, r.theta, level, tally);
  r.J = eval_jacobian(model, r.theta, level, tally);
  double f = F(r.theta, r.g);

  for (r.iterations = 0; r.iterations < options.max_iterations; ++r.iterations) {
    const Vector grad = F.gradient(r.theta, r.g, r.J);
    const auto active = active_set(prior, r.theta, grad);
    Vector pg = grad;
    std::vector<int> free_idx;
    for (int i = 0; i < grad.size(); ++i) {
      if (active[static_cast<std::size_t>(i)])
        pg[i] = 0.0;
      else
        free_idx.push_back(i);
    }
    r.gradient_norm = pg.norm();
    if (r.gradient_norm <= options.gradient_tol || free_idx.empty()) break;

    const Matrix H = F.hessian(r.J);
    const auto nf = static_cast<Eigen::Index>(free_idx.size());
    Matrix Hf(nf, nf);
    Vector gf(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      gf[a] = grad[free_idx[static_cast<std::size_t>(a)]];
      for (Eigen::Index b = 0; b < nf; ++b)
        Hf(a, b) = H(free_idx[static_cast<std::size_t>(a)], free_idx[static_cast<std::size_t>(b)]);
    }
    const Vector step_f = solve_spd_or_damped(Hf, -gf);
    const double decrement = -gf.dot(step_f);
    if (decrement <= 2.0 * options.decrement_tol) break;
    Vector step = Vector::Zero(grad.size());
    for (Eigen::Index a = 0; a < nf; ++a) step[free_idx[static_cast<std::size_t>(a)]] = step_f[a];

    bool accepted = false;
    double moved = 0.0;
    double alpha = 1.0;
    for (int ls = 0; ls < 40; ++ls) {
      Vector trial = prior.project(r.theta + alpha * step);
      Vector g_trial = eval_forward(model, trial, level, tally);
      double f_trial = F(trial, g_trial);
      const double curv = f_trial - f + alpha * decrement;
      if (f_trial <= f - 1e-4 * alpha * decrement) {
        // Plain Gauss-Newton can bounce around the optimum or crawl towards it;
        // try the interpolated minimizer, or keep doubling while f improves.
        const double best = curv > 0.0 ? 0.5 * decrement * alpha * alpha / curv : 4.0 * alpha;
        auto try_step = [&](double a) {
          Vector t2 = prior.project(r.theta + a * step);
          Vector g2 = eval_forward(model, t2, level, tally);
          const double f2 = F(t2, g2);
          if (!(f2 < f_trial)) return false;
          trial = std::move(t2);
          g_trial = std::move(g2);
          f_trial = f2;
          return true;
        };
        if (best < 0.75 * alpha && best > 0.05 * alpha) {
          try_step(best);
        } else if (best > 1.5 * alpha) {
          for (double a = 2.0 * alpha; a <= 1024.0 * alpha && try_step(a); a *= 2.0) {
          }
        }
        moved = (trial - r.theta).norm();
        r.theta = std::move(trial);
        r.g = std::move(g_trial);
        f = f_trial;
        accepted = true;
        break;
      }
      // Minimizer of the quadratic through f, the slope -decrement and f_trial.
      double next = curv > 0.0 ? 0.5 * decrement * alpha * alpha / curv : 0.5 * alpha;
      if (!std::isfinite(next)) next = 0.5 * alpha;
      alpha = std::clamp(next, 0.1 * alpha, 0.5 * alpha);
    }
    if (!accepted) {
      // No descent left at working precision.
      if (decrement <= 1e-8 * std::max(1.0, std::abs(f))) break;
      throw ConvergenceError("find_map: line search failed", r.theta, r.gradient_norm);
    }
    r.J = eval_jacobian(model, r.theta, level, tally);
    // Stagnation: the gradient sits at the noise floor of the Jacobian.
    if (moved <= options.step_tol * (1.0 + r.theta.norm())) {
      ++r.iterations;
      break;
    }
  }
  if (r.iterations >= options.max_iterations) {
    std::ostringstream os;
    os << "find_map: no convergence in " << options.max_iterations << " iterations, gradient norm "
       << r.gradient_norm;
    throw ConvergenceError(os.str(), r.theta, r.gradient_norm);
  }
  r.on_boundary = touches_bound(prior, r.theta);
  return r;
}

Vector find_map(const ForwardModel& model, int level, const Matrix& Y, const NoiseSpec& noise,
                const Vector& theta_init, WorkTally* tally, const MapOptions& options) {
  return find_map_full(model, level, Y, noise, theta_init, tally, options).theta;
}

Matrix laplace_covariance_from_jacobian(const Matrix& J, const PriorSpec& prior, const NoiseSpec& noise) {
  const Matrix precision = static_cast<double>(noise.repeats) * J.transpose() *
                               noise.variance.cwiseInverse().asDiagonal() * J +
                           prior.neg_log_density_hessian();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (precision + precision.transpose()));
  const double top = std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  if (eig.eigenvalues()[0] <= 1e-13 * top) {
    std::ostringstream os;
    os << "laplace_covariance: Hessian is not SPD, null direction [" << eig.eigenvectors().col(0).transpose()
       << "]";
    throw DecompositionError(os.str());
  }
  Matrix cov = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (cov + cov.transpose());
}

Matrix laplace_covariance(const ForwardModel& model, int level, const Vector& theta_hat, const NoiseSpec& noise,
                          WorkTally* tally) {
  return laplace_covariance_from_jacobian(eval_jacobian(model, theta_hat, level, tally), model.prior(), noise);
}

LaplaceFit fit_laplace(const ForwardModel& model, int level, const Matrix& Y, const NoiseSpec& noise,
                       const Vector& theta_init, WorkTally* tally, const MapOptions& options) {
  const MapResult map = find_map_full(model, level, Y, noise, theta_init, tally, options);
  LaplaceFit fit = LaplaceFit::from_moments(map.theta, laplace_covariance_from_jacobian(map.J, model.prior(), noise));
  fit.on_boundary = map.on_boundary;
  fit.map_iterations = map.iterations;
  return fit;
}

double is_log_density(const LaplaceFit& fit, const Vector& theta) {
  const Vector z = fit.chol.triangularView<Eigen::Lower>().solve(theta - fit.theta_hat);
  return fit.log_norm_const - 0.5 * z.squaredNorm();
}

double is_ratio_log(const PriorSpec& prior, const LaplaceFit& fit, const Vector& theta) {
  const double lp = prior.log_density(theta);
  if (lp == kNegInf) return kNegInf;
  return lp - is_log_density(fit, theta);
}

Matrix map_standard_normal(const LaplaceFit& fit, const Matrix& z) {
  return (z * fit.chol.transpose()).rowwise() + fit.theta_hat.transpose();
}

Matrix sample_is(const LaplaceFit& fit, int count, RandomStream& rng) {
  Matrix z(count, fit.dim());
  for (int m = 0; m < count; ++m)
    for (int i = 0; i < fit.dim(); ++i) z(m, i) = rng.normal();
  return map_standard_normal(fit, z);
}

}  // namespace mleig
