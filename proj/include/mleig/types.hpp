#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mleig {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Error taxonomy. Everything derives from mleig::Error so the CLI can map
// categories onto exit codes.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DomainError : Error {
  using Error::Error;
};

struct LevelOutOfRange : Error {
  using Error::Error;
};

struct DecompositionError : Error {
  using Error::Error;
};

struct SolverError : Error {
  using Error::Error;
};

/// Every inner-loop term of an evidence estimate had zero mass.
struct EvidenceUnderflow : Error {
  using Error::Error;
};

struct ConvergenceError : Error {
  ConvergenceError(const std::string& what, Vector best, double grad_norm)
      : Error(what), best_iterate(std::move(best)), final_gradient_norm(grad_norm) {}
  Vector best_iterate;
  double final_gradient_norm;
};

struct RateEstimationError : Error {
  using Error::Error;
};

/// A requested level or work budget exceeds what was configured.
struct ResourceError : Error {
  using Error::Error;
};

struct StructureError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Prior over the parameters: independent per-dimension uniform or Gaussian.
// ---------------------------------------------------------------------------

struct PriorDim {
  enum class Kind { uniform, gaussian };
  Kind kind = Kind::uniform;
  double a = 0.0;  // lo (uniform) or mean (gaussian)
  double b = 1.0;  // hi (uniform) or variance (gaussian)

  static PriorDim uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }
  static PriorDim gaussian(double mean, double variance) { return {Kind::gaussian, mean, variance}; }

  bool is_uniform() const { return kind == Kind::uniform; }
  /// Width used to scale finite-difference steps: box width or standard deviation.
  double width() const;
};

class PriorSpec {
 public:
  PriorSpec() = default;
  explicit PriorSpec(std::vector<PriorDim> dims);

  int dim() const { return static_cast<int>(dims_.size()); }
  const PriorDim& operator[](int i) const { return dims_[static_cast<std::size_t>(i)]; }
  const std::vector<PriorDim>& dims() const { return dims_; }

  bool in_support(const Vector& theta) const;
  /// log pi(theta); -inf outside the support.
  double log_density(const Vector& theta) const;
  /// -grad log pi(theta) (zero inside a uniform box).
  Vector neg_log_density_gradient(const Vector& theta) const;
  /// -Hessian of log pi (diagonal; zero for uniform dims).
  Matrix neg_log_density_hessian() const;

  bool has_lower(int i) const { return dims_[static_cast<std::size_t>(i)].is_uniform(); }
  double lower(int i) const;
  double upper(int i) const;
  /// Clamp into the closure of the support.
  Vector project(Vector theta) const;

  template <class Rng>
  Vector sample(Rng& rng) const;

 private:
  std::vector<PriorDim> dims_;
};

struct NoiseSpec {
  Vector variance;  // diagonal of Sigma_eps, length q
  int repeats = 1;  // N_e

  NoiseSpec() = default;
  NoiseSpec(Vector var, int n_e);

  int dim() const { return static_cast<int>(variance.size()); }
  /// log det(2 pi Sigma_eps)
  double log_det_2pi() const;
};

}  // namespace mleig

#include "mleig/random.hpp"

namespace mleig {

template <class Rng>
Vector PriorSpec::sample(Rng& rng) const {
  Vector theta(dim());
  for (int i = 0; i < dim(); ++i) {
    const auto& d = dims_[static_cast<std::size_t>(i)];
    theta[i] = d.is_uniform() ? d.a + (d.b - d.a) * uniform01(rng)
                              : d.a + std::sqrt(d.b) * standard_normal(rng);
  }
  return theta;
}

}  // namespace mleig
