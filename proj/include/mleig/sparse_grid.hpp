#pragma once

#include "mleig/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <set>

namespace mleig {

enum class RuleFamily { clenshaw_curtis, gauss_hermite, gauss_legendre };

/// 1D rule on [-1, 1] (Clenshaw-Curtis, Gauss-Legendre) or on R against the
/// standard normal density (Gauss-Hermite). Points are sorted ascending and
/// weights sum to the measure of the domain (2 or 1).
template <class Scalar = double>
struct QuadratureRule1D {
  RuleFamily family = RuleFamily::clenshaw_curtis;
  int level = 1;
  std::vector<Scalar> points;
  std::vector<Scalar> weights;

  std::size_t size() const { return points.size(); }
  Scalar measure() const { return family == RuleFamily::gauss_hermite ? Scalar(1) : Scalar(2); }
  /// Weights against the probability measure (uniform on [-1,1] or N(0,1)).
  std::vector<Scalar> probability_weights() const {
    std::vector<Scalar> w = weights;
    for (auto& x : w) x /= measure();
    return w;
  }
};

/// m(1) = 1, m(beta) = 2^(beta-1) + 1.
inline int cc_count(int beta) { return beta <= 1 ? 1 : (1 << (beta - 1)) + 1; }
/// 2 beta - 1 points per Gauss-Hermite level.
inline int gh_count(int beta) { return 2 * beta - 1; }

template <class Scalar = double>
QuadratureRule1D<Scalar> cc_rule(int beta) {
  if (beta < 1) throw ConfigError("cc_rule: beta must be >= 1");
  QuadratureRule1D<Scalar> r;
  r.family = RuleFamily::clenshaw_curtis;
  r.level = beta;
  const int m = cc_count(beta);
  if (m == 1) {
    r.points = {Scalar(0)};
    r.weights = {Scalar(2)};
    return r;
  }
  const int n = m - 1;
  const Scalar pi = std::numbers::pi_v<Scalar>;
  r.points.resize(static_cast<std::size_t>(m));
  r.weights.resize(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    // cos(j pi / n) written as sin(pi (n - 2j) / (2n)): exact symmetry, exact zero,
    // and bitwise identical values for the shared points of nested levels.
    const Scalar x = std::sin(pi * Scalar(n - 2 * j) / Scalar(2 * n));
    Scalar s = 0;
    for (int k = 1; k <= n / 2; ++k) {
      const Scalar b = (2 * k == n) ? Scalar(1) : Scalar(2);
      s += b / Scalar(4 * k * k - 1) * std::cos(Scalar(2 * k * j) * pi / Scalar(n));
    }
    const Scalar c = (j == 0 || j == n) ? Scalar(1) : Scalar(2);
    // Reverse so that points ascend.
    r.points[static_cast<std::size_t>(n - j)] = x;
    r.weights[static_cast<std::size_t>(n - j)] = c / Scalar(n) * (Scalar(1) - s);
  }
  return r;
}

namespace detail {

/// Golub-Welsch: nodes are eigenvalues of the Jacobi matrix, weights mu0 * v_0^2.
template <class Scalar>
void golub_welsch(const std::vector<Scalar>& offdiag, Scalar mu0, std::vector<Scalar>& x, std::vector<Scalar>& w) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const auto m = static_cast<Eigen::Index>(offdiag.size() + 1);
  Mat J = Mat::Zero(m, m);
  for (Eigen::Index i = 0; i + 1 < m; ++i) J(i, i + 1) = J(i + 1, i) = offdiag[static_cast<std::size_t>(i)];
  Eigen::SelfAdjointEigenSolver<Mat> eig(J);
  x.resize(static_cast<std::size_t>(m));
  w.resize(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    x[static_cast<std::size_t>(i)] = eig.eigenvalues()[i];
    const Scalar v = eig.eigenvectors()(0, i);
    w[static_cast<std::size_t>(i)] = mu0 * v * v;
  }
  // Symmetric weight functions: enforce exact point symmetry and a zero midpoint.
  for (Eigen::Index i = 0; i < m / 2; ++i) {
    const auto a = static_cast<std::size_t>(i), b = static_cast<std::size_t>(m - 1 - i);
    const Scalar xs = (x[b] - x[a]) / 2, ws = (w[a] + w[b]) / 2;
    x[a] = -xs;
    x[b] = xs;
    w[a] = w[b] = ws;
  }
  if (m % 2 == 1) x[static_cast<std::size_t>(m / 2)] = Scalar(0);
}

}  // namespace detail

/// Probabilists' Gauss-Hermite rule with m points (weights sum to 1).
template <class Scalar = double>
QuadratureRule1D<Scalar> gh_rule_points(int m) {
  if (m < 1) throw ConfigError("gauss_hermite: need at least one point");
  QuadratureRule1D<Scalar> r;
  r.family = RuleFamily::gauss_hermite;
  r.level = (m + 1) / 2;
  std::vector<Scalar> off;
  for (int k = 1; k < m; ++k) off.push_back(std::sqrt(Scalar(k)));
  detail::golub_welsch<Scalar>(off, Scalar(1), r.points, r.weights);
  // Newton polish on the orthonormal recurrence; weights from the Christoffel sum.
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    Scalar& x = r.points[i];
    Scalar christoffel = 0;
    for (int it = 0; it < 3; ++it) {
      Scalar p0 = 1, p1 = x, sum = 1 + (m > 1 ? x * x : Scalar(0));
      for (int k = 1; k < m; ++k) {
        const Scalar p2 = (x * p1 - std::sqrt(Scalar(k)) * p0) / std::sqrt(Scalar(k + 1));
        p0 = p1;
        p1 = p2;
        if (k + 1 < m) sum += p1 * p1;
      }
      // p1 = p_m, p0 = p_{m-1}; p_m' = sqrt(m) p_{m-1}.
      christoffel = sum;
      if (p0 != Scalar(0)) x -= p1 / (std::sqrt(Scalar(m)) * p0);
    }
    r.weights[i] = 1 / christoffel;
  }
  for (std::size_t i = 0; i < r.points.size() / 2; ++i) {
    const std::size_t j = r.points.size() - 1 - i;
    const Scalar xs = (r.points[j] - r.points[i]) / 2, ws = (r.weights[i] + r.weights[j]) / 2;
    r.points[i] = -xs;
    r.points[j] = xs;
    r.weights[i] = r.weights[j] = ws;
  }
  if (m % 2 == 1) r.points[static_cast<std::size_t>(m / 2)] = Scalar(0);
  return r;
}

template <class Scalar = double>
QuadratureRule1D<Scalar> gh_rule(int beta) {
  if (beta < 1) throw ConfigError("gh_rule: beta must be >= 1");
  auto r = gh_rule_points<Scalar>(gh_count(beta));
  r.level = beta;
  return r;
}

/// Gauss-Legendre on [-1, 1] with m points (weights sum to 2).
template <class Scalar = double>
QuadratureRule1D<Scalar> gl_rule(int m) {
  if (m < 1) throw ConfigError("gauss_legendre: need at least one point");
  QuadratureRule1D<Scalar> r;
  r.family = RuleFamily::gauss_legendre;
  r.level = m;
  std::vector<Scalar> off;
  for (int k = 1; k < m; ++k) off.push_back(Scalar(k) / std::sqrt(Scalar(4 * k * k - 1)));
  detail::golub_welsch<Scalar>(off, Scalar(2), r.points, r.weights);
  return r;
}

/// Rows z of a standard-normal rule mapped to L z + mu with L L^T = Sigma.
Matrix transform_gaussian_points(const Matrix& rule_points, const Vector& mu, const Matrix& Sigma);

/// sum_j f(z_j) w_j over the product grid, with probability-normalized weights.
template <class F>
double tensor_quadrature(const std::vector<QuadratureRule1D<double>>& rules, F&& f) {
  if (rules.empty()) throw ConfigError("tensor_quadrature: no rules");
  const auto d = rules.size();
  std::vector<std::vector<double>> w(d);
  for (std::size_t i = 0; i < d; ++i) w[i] = rules[i].probability_weights();
  std::vector<std::size_t> idx(d, 0);
  Vector z(static_cast<Eigen::Index>(d));
  double sum = 0.0;
  for (;;) {
    double wt = 1.0;
    for (std::size_t i = 0; i < d; ++i) {
      z[static_cast<Eigen::Index>(i)] = rules[i].points[idx[i]];
      wt *= w[i][idx[i]];
    }
    sum += wt * f(z);
    std::size_t k = 0;
    while (k < d && ++idx[k] == rules[k].size()) idx[k++] = 0;
    if (k == d) break;
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Multi-indices and the combination technique
// ---------------------------------------------------------------------------

using MultiIndex = std::vector<int>;
using IndexSet = std::set<MultiIndex>;

/// True when every lambda - e_i with lambda_i > floor_i is also a member.
bool is_downward_closed(const IndexSet& set, const MultiIndex& floors);

/// Memoizing wrapper around an index functional.
class IndexFunctionCache {
 public:
  explicit IndexFunctionCache(std::function<double(const MultiIndex&)> U) : U_(std::move(U)) {}
  double operator()(const MultiIndex& index);
  std::size_t evaluations() const { return values_.size(); }
  const std::map<MultiIndex, double>& values() const { return values_; }

 private:
  std::function<double(const MultiIndex&)> U_;
  std::map<MultiIndex, double> values_;
};

/// sum over j in {0,1}^k of (-1)^|j| U(index - j), omitting terms below the floors.
double mixed_difference(const MultiIndex& index, IndexFunctionCache& U, const MultiIndex& floors);

/// Signed counts c_lambda = sum over j in {0,1}^k with lambda + j in the set of (-1)^|j|.
std::map<MultiIndex, int> combination_coefficients(const IndexSet& set);

/// sum over the set of the mixed differences, evaluated through the
/// combination coefficients so each U is computed at most once.
double combination_estimate(const IndexSet& set, const std::function<double(const MultiIndex&)>& U,
                            const MultiIndex& floors);

struct Profit {
  double delta = 0.0;  // signed mixed difference of the candidate
  double work = 1.0;   // cost of admitting it
  bool estimated = false;  // delta extrapolated, the index cannot actually be evaluated
};

struct AdaptOptions {
  double tol = 1e-3;
  double max_work = std::numeric_limits<double>::infinity();
  std::size_t max_indices = 100000;
};

struct AdaptResult {
  IndexSet set;
  std::vector<MultiIndex> admission_order;
  std::map<MultiIndex, Profit> profits;  // admitted and margin indices
  IndexSet margin;
  double value = 0.0;           // sum of admitted deltas
  double error_estimate = 0.0;  // sum of |delta| over the margin
  double work = 0.0;            // sum of work over every evaluated index
  bool converged = false;
};

/// Greedy dimension-adaptive construction starting from root. Each step
/// admits the margin index with the largest |delta| / work (ties: smallest
/// index); stops when the margin |delta| sum is <= tol / 2 or work runs out.
/// Selecting an estimated candidate throws ResourceError.
AdaptResult adapt_index_set(const std::function<Profit(const MultiIndex&)>& profit, const MultiIndex& root,
                            const AdaptOptions& options);

}  // namespace mleig
