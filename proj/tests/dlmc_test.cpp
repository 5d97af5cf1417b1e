#include "mleig/dlmc.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace mleig;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

PriorSpec std_normal(int d) { return PriorSpec(std::vector<PriorDim>(static_cast<std::size_t>(d), PriorDim::gaussian(0, 1))); }

/// log N(x; 0, S) by Cholesky, written out independently of the library.
double gaussian_logpdf(const Vector& x, const Matrix& S) {
  Eigen::LLT<Matrix> llt(S);
  const Vector z = llt.matrixL().solve(x);
  return -0.5 * z.squaredNorm() - llt.matrixLLT().diagonal().array().log().sum() -
         0.5 * static_cast<double>(x.size()) * kLog2Pi;
}

}  // namespace

TEST_SUITE("dlmc") {
  TEST_CASE("log likelihood") {
    const NoiseSpec one(Vector::Ones(1), 1), two(Vector::Ones(1), 2);
    const Vector g = Vector::Constant(1, 0.3);
    CHECK(log_likelihood(Matrix::Constant(1, 1, 0.3), g, one) == doctest::Approx(-0.5 * kLog2Pi));
    CHECK(log_likelihood(Matrix::Constant(1, 1, 1.3), g, one) == doctest::Approx(-0.5 * kLog2Pi - 0.5));
    CHECK(log_likelihood(Matrix::Constant(1, 2, 1.3), g, two) == doctest::Approx(-kLog2Pi - 1.0));
  }

  TEST_CASE("log-mean-exp") {
    CHECK(log_mean_exp(Vector{{std::log(1.0), std::log(3.0)}}) == doctest::Approx(std::log(2.0)));
    CHECK(log_mean_exp(Vector{{-1000.0, -1000.0}}) == doctest::Approx(-1000.0));
    CHECK(log_mean_exp(Vector{{kNegInf, 0.0}}) == doctest::Approx(std::log(0.5)));
    CHECK_THROWS_AS(log_mean_exp(Vector{{kNegInf, kNegInf}}), EvidenceUnderflow);
  }

  TEST_CASE("IS evidence of a linear Gaussian model is exact for any M") {
    Matrix A(2, 2);
    A << 1.0, -0.4, 0.3, 0.8;
    const Vector var{{0.6, 1.3}};
    LinearGaussianModel m(A, PriorSpec({PriorDim::gaussian(0, var[0]), PriorDim::gaussian(0, var[1])}));
    const NoiseSpec noise(Vector{{0.2, 0.5}}, 2);
    Matrix Y(2, 2);
    Y << 0.4, -0.1, 1.2, 0.7;
    // vec(Y) ~ N(0, 1 1^T (x) A S A^T + I (x) Sigma_eps).
    const Matrix G = A * var.asDiagonal() * A.transpose();
    Matrix S = Matrix::Zero(4, 4);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) S.block(2 * i, 2 * j, 2, 2) = G;
    for (int i = 0; i < 2; ++i) S.block(2 * i, 2 * i, 2, 2) += Matrix(noise.variance.asDiagonal());
    const Vector y = Eigen::Map<const Vector>(Y.data(), 4);
    const double exact = gaussian_logpdf(y, S);

    const auto fit = fit_laplace(m, 0, Y, noise, Vector::Zero(2));
    for (int M : {1, 7, 100}) {
      RandomStream rng(static_cast<std::uint64_t>(M));
      CHECK(std::abs(estimate_log_evidence_is(m, 0, Y, fit, M, noise, rng) - exact) < 1e-8);
    }
  }

  TEST_CASE("constant model: evidence equals the likelihood") {
    ConstantModel c(Vector{{1.0, 2.0}}, std_normal(1));
    const NoiseSpec noise(Vector{{0.5, 0.5}}, 1);
    Matrix Y(2, 1);
    Y << 1.3, 1.6;
    const auto fit = fit_laplace(c, 0, Y, noise, Vector::Zero(1));
    RandomStream rng(1);
    const double ll = log_likelihood(Y, Vector{{1.0, 2.0}}, noise);
    CHECK(estimate_log_evidence_is(c, 0, Y, fit, 5, noise, rng) == doctest::Approx(ll).epsilon(1e-14));
    CHECK(estimate_log_evidence_prior(c, 0, Y, 5, noise, rng) == doctest::Approx(ll).epsilon(1e-14));
    CHECK(f_hat(c, 0, Y, Vector::Constant(1, 0.4), fit, 3, noise, rng) == doctest::Approx(0.0).scale(1.0).epsilon(1e-13));
  }

  TEST_CASE("draws outside a uniform support cost nothing and carry no mass") {
    FunctionModel m([](const Vector& t, int) { return Vector::Constant(1, t[0]); }, 1,
                    PriorSpec({PriorDim::uniform(0, 1)}));
    const NoiseSpec noise(Vector::Ones(1), 1);
    const auto fit = LaplaceFit::from_moments(Vector::Constant(1, 0.5), Matrix::Identity(1, 1));
    Matrix th(3, 1);
    th << 0.2, 1.5, -0.1;
    WorkTally tally;
    const Vector t = evidence_log_terms(m, 0, Matrix::Zero(1, 1), th, &fit, noise, &tally);
    CHECK(std::isfinite(t[0]));
    CHECK(t[1] == kNegInf);
    CHECK(t[2] == kNegInf);
    CHECK(tally.count(0) == 1);
  }

  TEST_CASE("DLMCIS on the linear Gaussian unit case") {
    LinearGaussianModel m(Matrix::Ones(1, 1), std_normal(1));
    const NoiseSpec noise(Vector::Ones(1), 1);
    const auto r = dlmc_estimate(m, noise, 0, 10000, 1, 3);
    CHECK(std::abs(r.value - 0.5 * std::log(2.0)) < 3 * r.stat_error);
    CHECK(r.rejected == 0);
  }

  TEST_CASE("constant model gives exactly zero") {
    ConstantModel c(Vector{{1.0, 2.0}}, std_normal(1));
    const NoiseSpec noise(Vector::Constant(2, 0.1), 2);
    for (bool is : {true, false}) {
      SamplingOptions o;
      o.use_is = is;
      const auto r = dlmc_estimate(c, noise, 0, 50, 4, 1, 0.05, o);
      CHECK(r.value == 0.0);
      CHECK(r.stat_error == 0.0);
    }
  }

  TEST_CASE("same seed, same value") {
    ToyModel toy;
    const NoiseSpec noise(Vector::Constant(2, 0.01), 1);
    SamplingOptions one, many;
    one.workers = 1;
    many.workers = 3;
    const auto a = dlmc_estimate(toy, noise, 2, 200, 5, 42, 0.05, one);
    const auto b = dlmc_estimate(toy, noise, 2, 200, 5, 42, 0.05, many);
    CHECK(a.value == b.value);
    CHECK(a.total_work == b.total_work);
    const auto c = dlmc_estimate(toy, noise, 2, 200, 5, 43, 0.05, one);
    CHECK(a.value != c.value);
  }

  TEST_CASE("confidence intervals cover the truth") {
    LinearGaussianModel m(Matrix::Ones(1, 1), std_normal(1));
    const NoiseSpec noise(Vector::Ones(1), 1);
    const double truth = 0.5 * std::log(2.0);
    int covered = 0;
    double mean = 0.0;
    const int reps = 200;
    for (int r = 0; r < reps; ++r) {
      const auto e = dlmc_estimate(m, noise, 0, 200, 1, 1000 + static_cast<std::uint64_t>(r));
      if (std::abs(e.value - truth) <= e.stat_error) ++covered;
      mean += e.value / reps;
    }
    // Nominal 95%; a binomial(200, 0.95) count falls below 180 with probability < 1e-3.
    CHECK(covered >= 180);
    // Unbiased: the average of 200 runs with sd ~0.05 each.
    CHECK(std::abs(mean - truth) < 0.015);
  }

  TEST_CASE("Laplace importance sampling beats prior sampling on a concentrated posterior") {
    ToyModel toy;
    const NoiseSpec noise(Vector::Constant(2, 1e-3), 1);
    SamplingOptions is, prior;
    prior.use_is = false;
    const auto a = dlmc_estimate(toy, noise, 2, 400, 10, 5, 0.05, is);
    const auto b = dlmc_estimate(toy, noise, 2, 400, 10, 5, 0.05, prior);
    const auto ref = dlmc_estimate(toy, noise, 2, 400, 200, 5, 0.05, is);
    // Prior sampling with M = 10 misses the posterior and inflates the estimate.
    CHECK(std::abs(a.value - ref.value) < 0.1);
    CHECK(b.value - ref.value > 0.5);
    CHECK(a.per_level[0].V < b.per_level[0].V);
  }

  TEST_CASE("rejections are counted and capped") {
    CHECK_NOTHROW(check_rejections(99, 1, 0.01));
    CHECK_THROWS_AS(check_rejections(98, 2, 0.01), EvidenceUnderflow);
    LevelStats s;
    accumulate_samples(s, 0, 100, 2, [](std::int64_t n, WorkTally& t) -> double {
      t.add(0);
      if (n % 25 == 0) throw EvidenceUnderflow("planted");
      return static_cast<double>(n);
    });
    CHECK(s.count == 96);
    CHECK(s.rejected == 4);
    CHECK(s.tally.count(0) == 100);
  }

  TEST_CASE("Welford statistics merge like a single pass") {
    LevelStats a, b, all;
    for (int i = 0; i < 10; ++i) {
      const double x = std::sin(i);
      (i < 4 ? a : b).add(x);
      all.add(x);
    }
    a.merge(b);
    CHECK(a.count == all.count);
    CHECK(a.mean == doctest::Approx(all.mean));
    CHECK(a.variance() == doctest::Approx(all.variance()));
  }

  TEST_CASE("confidence constant") {
    CHECK(confidence_constant(0.05) == doctest::Approx(1.959963984540054));
    CHECK(confidence_constant(0.3173105078629141) == doctest::Approx(1.0));
  }
}
