#pragma once

#include "mleig/types.hpp"

#include <functional>
#include <memory>
#include <optional>

namespace mleig {

/// Mesh hierarchy h_l = h0 * beta^-l with the rate/constant model used for
/// bias, variance and work estimates.
struct MeshHierarchy {
  double h0 = 1.0;
  int beta = 2;
  double gamma = 2.0;  // work(l) = h_l^-gamma
  double eta_w = 1.0;  // weak rate
  double eta_s = 1.0;  // strong rate
  double C1 = 1.0;     // inner-sampling bias constant
  double C2 = 1.0;     // discretization bias constant

  double h(int level) const;
  double work(int level) const;
  void validate() const;
};

/// h_l^-gamma in relative work units.
double work_of_level(const MeshHierarchy& hierarchy, int level);

/// Per-level count of forward-model evaluations.
struct WorkTally {
  std::vector<std::int64_t> evals;

  void add(int level, std::int64_t n = 1);
  void merge(const WorkTally& other);
  std::int64_t count(int level) const;
  std::int64_t total_count() const;
  double work(const MeshHierarchy& hierarchy) const;
};

/// Level-discretized forward model g_l(theta) in R^q. Implementations are
/// immutable after construction and safe to evaluate concurrently.
class ForwardModel {
 public:
  ForwardModel(PriorSpec prior, MeshHierarchy hierarchy, int max_level);
  virtual ~ForwardModel() = default;

  virtual int dim_theta() const { return prior_.dim(); }
  virtual int dim_output() const = 0;
  /// True when g_l does not depend on l (no discretization hierarchy).
  virtual bool level_independent() const { return false; }
  virtual std::string name() const = 0;

  int max_level() const { return max_level_; }
  const MeshHierarchy& hierarchy() const { return hierarchy_; }
  const PriorSpec& prior() const { return prior_; }

  /// g_l(theta). Throws LevelOutOfRange / DomainError on invalid input.
  Vector evaluate(const Vector& theta, int level) const;
  void check_level(int level) const;

  /// Exact -grad g_l when available.
  virtual std::optional<Matrix> analytic_jacobian(const Vector& /*theta*/, int /*level*/) const {
    return std::nullopt;
  }

 protected:
  virtual Vector do_evaluate(const Vector& theta, int level) const = 0;

 private:
  PriorSpec prior_;
  MeshHierarchy hierarchy_;
  int max_level_;
};

using ModelPtr = std::shared_ptr<const ForwardModel>;

Vector eval_forward(const ForwardModel& model, const Vector& theta, int level,
                    WorkTally* tally = nullptr);

/// J_l(theta) = -grad_theta g_l(theta), q x d. Analytic when the model
/// provides it, otherwise central differences with step 1e-5 * prior width.
Matrix eval_jacobian(const ForwardModel& model, const Vector& theta, int level,
                     WorkTally* tally = nullptr);

/// Finite-difference Jacobian (-grad g) with step = step_scale * prior width.
Matrix fd_jacobian(const ForwardModel& model, const Vector& theta, int level, double step_scale,
                   WorkTally* tally = nullptr);

/// Exact EIG of y = A theta + eps, theta ~ N(mu, Sigma_theta), N_e repeats:
/// 0.5 * logdet(I + N_e A^T Sigma_eps^-1 A Sigma_theta).
template <class DerivedA, class DerivedT, class DerivedE>
double closed_form_eig(const Eigen::MatrixBase<DerivedA>& A, const Eigen::MatrixBase<DerivedT>& sigma_theta,
                       const Eigen::MatrixBase<DerivedE>& sigma_eps, int repeats) {
  using Scalar = typename DerivedA::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::LLT<Mat> eps_chol(sigma_eps);
  Eigen::LLT<Mat> theta_chol(sigma_theta);
  if (eps_chol.info() != Eigen::Success || theta_chol.info() != Eigen::Success)
    throw DecompositionError("closed_form_eig: covariance is not SPD");
  // Symmetric form L_t^T (N_e A^T S^-1 A) L_t keeps the determinant argument SPD.
  const Mat whitened = eps_chol.matrixL().solve(A.derived().template cast<Scalar>());
  const Mat info = Scalar(repeats) * whitened.transpose() * whitened;
  const Mat Lt = theta_chol.matrixL();
  Mat m = Mat::Identity(A.cols(), A.cols()) + Lt.transpose() * info * Lt;
  Eigen::LLT<Mat> chol(m);
  if (chol.info() != Eigen::Success) throw DecompositionError("closed_form_eig: not SPD");
  return static_cast<double>(chol.matrixLLT().diagonal().array().log().sum());
}

// ---------------------------------------------------------------------------
// Concrete models
// ---------------------------------------------------------------------------

/// g(theta) = A theta under an independent Gaussian prior; closed-form oracle.
class LinearGaussianModel final : public ForwardModel {
 public:
  LinearGaussianModel(Matrix A, PriorSpec prior, int max_level = 16);

  int dim_output() const override { return static_cast<int>(A_.rows()); }
  bool level_independent() const override { return true; }
  std::string name() const override { return "linear_gaussian"; }
  std::optional<Matrix> analytic_jacobian(const Vector&, int) const override { return Matrix(-A_); }

  const Matrix& A() const { return A_; }
  Matrix prior_covariance() const;
  Vector prior_mean() const;
  double exact_eig(const NoiseSpec& noise) const;

 protected:
  Vector do_evaluate(const Vector& theta, int level) const override;

 private:
  Matrix A_;
};

/// theta-independent output; the data carries no information.
class ConstantModel final : public ForwardModel {
 public:
  ConstantModel(Vector value, PriorSpec prior, int max_level = 16);

  int dim_output() const override { return static_cast<int>(value_.size()); }
  bool level_independent() const override { return true; }
  std::string name() const override { return "constant"; }
  std::optional<Matrix> analytic_jacobian(const Vector&, int) const override {
    return Matrix::Zero(value_.size(), dim_theta());
  }

 protected:
  Vector do_evaluate(const Vector&, int) const override { return value_; }

 private:
  Vector value_;
};

/// Smooth nonlinear toy with a synthetic discretization error:
///   g(theta)   = (theta + a theta^2,  0.5 theta + a sin(2 theta))
///   g_l(theta) = g(theta) + amplitude * h_l^eta_w * (theta, theta)
/// so that weak and strong rates both equal eta_w. theta ~ N(0, 1).
class ToyModel final : public ForwardModel {
 public:
  struct Params {
    double nonlinearity = 0.05;
    double amplitude = 0.05;
    double eta_w = 1.5;
    double gamma = 2.0;
    double h0 = 1.0;
    int beta = 2;
    int max_level = 12;
  };

  ToyModel() : ToyModel(Params{}) {}
  explicit ToyModel(Params params);

  int dim_output() const override { return 2; }
  bool level_independent() const override { return params_.amplitude == 0.0; }
  std::string name() const override { return "toy"; }
  std::optional<Matrix> analytic_jacobian(const Vector& theta, int level) const override;

  const Params& params() const { return params_; }
  /// The limit model g(theta) without discretization error.
  Vector exact(const Vector& theta) const;

 protected:
  Vector do_evaluate(const Vector& theta, int level) const override;

 private:
  double perturbation_scale(int level) const;
  Params params_;
};

/// Uniform coordinates rewritten as theta_i = a_i + (b_i - a_i) Phi(z_i) with
/// z_i ~ N(0, 1); Gaussian coordinates pass through. The EIG is unchanged,
/// but Laplace fits in z see the prior curvature and never hit a bound.
class ProbitModel final : public ForwardModel {
 public:
  explicit ProbitModel(ModelPtr inner);

  int dim_output() const override { return inner_->dim_output(); }
  bool level_independent() const override { return inner_->level_independent(); }
  std::string name() const override { return inner_->name(); }
  std::optional<Matrix> analytic_jacobian(const Vector& z, int level) const override;

  const ForwardModel& inner() const { return *inner_; }
  Vector to_original(const Vector& z) const;

 protected:
  Vector do_evaluate(const Vector& z, int level) const override;

 private:
  ModelPtr inner_;
};

/// Wraps a callable; used for ad-hoc models in tests and examples.
class FunctionModel final : public ForwardModel {
 public:
  using Fn = std::function<Vector(const Vector&, int)>;
  FunctionModel(Fn fn, int output_dim, PriorSpec prior, MeshHierarchy hierarchy = {},
                int max_level = 8, bool level_independent = false);

  int dim_output() const override { return output_dim_; }
  bool level_independent() const override { return level_independent_; }
  std::string name() const override { return "function"; }

 protected:
  Vector do_evaluate(const Vector& theta, int level) const override { return fn_(theta, level); }

 private:
  Fn fn_;
  int output_dim_;
  bool level_independent_;
};

}  // namespace mleig
