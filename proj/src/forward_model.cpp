#include "mleig/forward_model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace mleig {

// --- PriorSpec -------------------------------------------------------------

double PriorDim::width() const { return is_uniform() ? b - a : std::sqrt(b); }

PriorSpec::PriorSpec(std::vector<PriorDim> dims) : dims_(std::move(dims)) {
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    const auto& d = dims_[i];
    if (d.is_uniform() && !(d.a < d.b))
      throw ConfigError("prior dimension " + std::to_string(i) + ": uniform requires lo < hi");
    if (!d.is_uniform() && !(d.b > 0.0))
      throw ConfigError("prior dimension " + std::to_string(i) + ": gaussian requires variance > 0");
  }
}

namespace {
// Slack so that quadrature nodes computed as mid + half * z with z = +-1 count as inside.
double support_slack(const PriorDim& d) { return 1e-12 * (d.b - d.a); }
}  // namespace

bool PriorSpec::in_support(const Vector& theta) const {
  if (theta.size() != dim()) return false;
  for (int i = 0; i < dim(); ++i) {
    const auto& d = dims_[static_cast<std::size_t>(i)];
    if (!std::isfinite(theta[i])) return false;
    if (d.is_uniform() && (theta[i] < d.a - support_slack(d) || theta[i] > d.b + support_slack(d)))
      return false;
  }
  return true;
}

double PriorSpec::log_density(const Vector& theta) const {
  if (!in_support(theta)) return kNegInf;
  double lp = 0.0;
  for (int i = 0; i < dim(); ++i) {
    const auto& d = dims_[static_cast<std::size_t>(i)];
    if (d.is_uniform()) {
      lp -= std::log(d.b - d.a);
    } else {
      const double r = theta[i] - d.a;
      lp -= 0.5 * (std::log(2.0 * std::numbers::pi * d.b) + r * r / d.b);
    }
  }
  return lp;
}

Vector PriorSpec::neg_log_density_gradient(const Vector& theta) const {
  Vector g = Vector::Zero(dim());
  for (int i = 0; i < dim(); ++i) {
    const auto& d = dims_[static_cast<std::size_t>(i)];
    if (!d.is_uniform()) g[i] = (theta[i] - d.a) / d.b;
  }
  return g;
}

Matrix PriorSpec::neg_log_density_hessian() const {
  Matrix h = Matrix::Zero(dim(), dim());
  for (int i = 0; i < dim(); ++i) {
    const auto& d = dims_[static_cast<std::size_t>(i)];
    if (!d.is_uniform()) h(i, i) = 1.0 / d.b;
  }
  return h;
}

double PriorSpec::lower(int i) const {
  const auto& d = dims_[static_cast<std::size_t>(i)];
  return d.is_uniform() ? d.a : -std::numeric_limits<double>::infinity();
}

double PriorSpec::upper(int i) const {
  const auto& d = dims_[static_cast<std::size_t>(i)];
  return d.is_uniform() ? d.b : std::numeric_limits<double>::infinity();
}

Vector PriorSpec::project(Vector theta) const {
  for (int i = 0; i < dim(); ++i) theta[i] = std::clamp(theta[i], lower(i), upper(i));
  return theta;
}

// --- NoiseSpec -------------------------------------------------------------

NoiseSpec::NoiseSpec(Vector var, int n_e) : variance(std::move(var)), repeats(n_e) {
  if (variance.size() == 0) throw ConfigError("noise: variance vector is empty");
  if ((variance.array() <= 0.0).any()) throw ConfigError("noise: all variances must be > 0");
  if (repeats < 1) throw ConfigError("noise: N_e must be >= 1");
}

double NoiseSpec::log_det_2pi() const {
  return (2.0 * std::numbers::pi * variance.array()).log().sum();
}

// --- MeshHierarchy ---------------------------------------------------------

double MeshHierarchy::h(int level) const { return h0 * std::pow(static_cast<double>(beta), -level); }

double MeshHierarchy::work(int level) const { return std::pow(h(level), -gamma); }

void MeshHierarchy::validate() const {
  if (!(h0 > 0.0)) throw ConfigError("hierarchy: h0 must be > 0");
  if (beta < 2) throw ConfigError("hierarchy: beta must be >= 2");
  if (!(gamma > 0.0 && eta_w > 0.0 && eta_s > 0.0 && C1 >= 0.0 && C2 >= 0.0))
    throw ConfigError("hierarchy: rates and constants must be > 0");
}

double work_of_level(const MeshHierarchy& hierarchy, int level) { return hierarchy.work(level); }

// --- WorkTally -------------------------------------------------------------

void WorkTally::add(int level, std::int64_t n) {
  if (static_cast<std::size_t>(level) >= evals.size()) evals.resize(static_cast<std::size_t>(level) + 1, 0);
  evals[static_cast<std::size_t>(level)] += n;
}

void WorkTally::merge(const WorkTally& other) {
  for (std::size_t l = 0; l < other.evals.size(); ++l)
    if (other.evals[l] != 0) add(static_cast<int>(l), other.evals[l]);
}

std::int64_t WorkTally::count(int level) const {
  return static_cast<std::size_t>(level) < evals.size() ? evals[static_cast<std::size_t>(level)] : 0;
}

std::int64_t WorkTally::total_count() const {
  std::int64_t n = 0;
  for (auto c : evals) n += c;
  return n;
}

double WorkTally::work(const MeshHierarchy& hierarchy) const {
  double w = 0.0;
  for (std::size_t l = 0; l < evals.size(); ++l)
    w += static_cast<double>(evals[l]) * hierarchy.work(static_cast<int>(l));
  return w;
}

// --- ForwardModel ----------------------------------------------------------

ForwardModel::ForwardModel(PriorSpec prior, MeshHierarchy hierarchy, int max_level)
    : prior_(std::move(prior)), hierarchy_(hierarchy), max_level_(max_level) {
  hierarchy_.validate();
  if (max_level_ < 0) throw ConfigError("max_level must be >= 0");
}

void ForwardModel::check_level(int level) const {
  if (level < 0 || level > max_level_) {
    std::ostringstream os;
    os << name() << ": level " << level << " outside [0, " << max_level_ << "]";
    throw LevelOutOfRange(os.str());
  }
}

Vector ForwardModel::evaluate(const Vector& theta, int level) const {
  check_level(level);
  if (!prior_.in_support(theta)) throw DomainError(name() + ": theta outside the prior support");
  return do_evaluate(theta, level);
}

Vector eval_forward(const ForwardModel& model, const Vector& theta, int level, WorkTally* tally) {
  Vector g = model.evaluate(theta, level);
  if (tally) tally->add(level);
  return g;
}

Matrix fd_jacobian(const ForwardModel& model, const Vector& theta, int level, double step_scale,
                   WorkTally* tally) {
  const auto& prior = model.prior();
  const int d = model.dim_theta();
  Matrix J(model.dim_output(), d);
  for (int i = 0; i < d; ++i) {
    const double lo = prior.lower(i), hi = prior.upper(i);
    double step = step_scale * prior[i].width();
    auto fits = [&](double s) { return theta[i] - s >= lo && theta[i] + s <= hi; };
    if (!fits(step)) step *= 0.5;
    Vector plus = theta, minus = theta;
    double denom;
    if (fits(step)) {
      plus[i] += step;
      minus[i] -= step;
      denom = 2.0 * step;
    } else {
      step *= 2.0;
      if (theta[i] + step <= hi) {
        plus[i] += step;
      } else if (theta[i] - step >= lo) {
        minus[i] -= step;
      } else {
        throw DomainError("eval_jacobian: difference stencil does not fit in the support");
      }
      denom = step;
    }
    // J = -dg/dtheta
    J.col(i) = (eval_forward(model, minus, level, tally) - eval_forward(model, plus, level, tally)) / denom;
  }
  return J;
}

Matrix eval_jacobian(const ForwardModel& model, const Vector& theta, int level, WorkTally* tally) {
  model.check_level(level);
  if (auto J = model.analytic_jacobian(theta, level)) {
    // Counted as one solve.
    if (tally) tally->add(level);
    return *J;
  }
  return fd_jacobian(model, theta, level, 1e-5, tally);
}

// --- LinearGaussianModel ---------------------------------------------------

LinearGaussianModel::LinearGaussianModel(Matrix A, PriorSpec prior, int max_level)
    : ForwardModel(std::move(prior), MeshHierarchy{}, max_level), A_(std::move(A)) {
  if (A_.cols() != dim_theta()) throw ConfigError("linear_gaussian: A must have d columns");
  for (const auto& d : this->prior().dims())
    if (d.is_uniform()) throw ConfigError("linear_gaussian: prior must be Gaussian in every dimension");
}

Vector LinearGaussianModel::do_evaluate(const Vector& theta, int) const { return A_ * theta; }

Matrix LinearGaussianModel::prior_covariance() const {
  Vector v(dim_theta());
  for (int i = 0; i < dim_theta(); ++i) v[i] = prior()[i].b;
  return v.asDiagonal();
}

Vector LinearGaussianModel::prior_mean() const {
  Vector m(dim_theta());
  for (int i = 0; i < dim_theta(); ++i) m[i] = prior()[i].a;
  return m;
}

double LinearGaussianModel::exact_eig(const NoiseSpec& noise) const {
  return closed_form_eig(A_, prior_covariance(), Matrix(noise.variance.asDiagonal()), noise.repeats);
}

// --- ConstantModel ---------------------------------------------------------

ConstantModel::ConstantModel(Vector value, PriorSpec prior, int max_level)
    : ForwardModel(std::move(prior), MeshHierarchy{}, max_level), value_(std::move(value)) {}

// --- ToyModel --------------------------------------------------------------

namespace {
MeshHierarchy toy_hierarchy(const ToyModel::Params& p) {
  MeshHierarchy h;
  h.h0 = p.h0;
  h.beta = p.beta;
  h.gamma = p.gamma;
  h.eta_w = p.eta_w;
  h.eta_s = p.eta_w;
  return h;
}
}  // namespace

ToyModel::ToyModel(Params params)
    : ForwardModel(PriorSpec({PriorDim::gaussian(0.0, 1.0)}), toy_hierarchy(params), params.max_level),
      params_(params) {}

double ToyModel::perturbation_scale(int level) const {
  return params_.amplitude * std::pow(hierarchy().h(level), params_.eta_w);
}

Vector ToyModel::exact(const Vector& theta) const {
  const double t = theta[0], a = params_.nonlinearity;
  return Vector{{t + a * t * t, 0.5 * t + a * std::sin(2.0 * t)}};
}

Vector ToyModel::do_evaluate(const Vector& theta, int level) const {
  const double t = theta[0], s = perturbation_scale(level);
  return exact(theta) + s * Vector{{t, t}};
}

std::optional<Matrix> ToyModel::analytic_jacobian(const Vector& theta, int level) const {
  const double t = theta[0], a = params_.nonlinearity, s = perturbation_scale(level);
  Matrix J(2, 1);
  J(0, 0) = -(1.0 + 2.0 * a * t + s);
  J(1, 0) = -(0.5 + 2.0 * a * std::cos(2.0 * t) + s);
  return J;
}

// --- ProbitModel ----------------------------------------------------------

namespace {

PriorSpec probit_prior(const PriorSpec& inner) {
  std::vector<PriorDim> dims = inner.dims();
  for (auto& d : dims)
    if (d.is_uniform()) d = PriorDim::gaussian(0.0, 1.0);
  return PriorSpec(std::move(dims));
}

}  // namespace

ProbitModel::ProbitModel(ModelPtr inner)
    : ForwardModel(probit_prior(inner->prior()), inner->hierarchy(), inner->max_level()), inner_(std::move(inner)) {}

Vector ProbitModel::to_original(const Vector& z) const {
  Vector theta = z;
  const auto& p = inner_->prior();
  for (int i = 0; i < p.dim(); ++i) {
    if (!p[i].is_uniform()) continue;
    const double u = 0.5 * std::erfc(-z[i] / std::numbers::sqrt2);
    theta[i] = std::clamp(p[i].a + (p[i].b - p[i].a) * u, p[i].a, p[i].b);
  }
  return theta;
}

std::optional<Matrix> ProbitModel::analytic_jacobian(const Vector& z, int level) const {
  auto J = inner_->analytic_jacobian(to_original(z), level);
  if (!J) return J;
  const auto& p = inner_->prior();
  for (int i = 0; i < p.dim(); ++i)
    if (p[i].is_uniform())
      J->col(i) *= (p[i].b - p[i].a) * std::exp(-0.5 * z[i] * z[i]) / std::sqrt(2.0 * std::numbers::pi);
  return J;
}

Vector ProbitModel::do_evaluate(const Vector& z, int level) const { return inner_->evaluate(to_original(z), level); }

// --- FunctionModel ---------------------------------------------------------

FunctionModel::FunctionModel(Fn fn, int output_dim, PriorSpec prior, MeshHierarchy hierarchy, int max_level,
                             bool level_independent)
    : ForwardModel(std::move(prior), hierarchy, max_level),
      fn_(std::move(fn)),
      output_dim_(output_dim),
      level_independent_(level_independent) {}

}  // namespace mleig
