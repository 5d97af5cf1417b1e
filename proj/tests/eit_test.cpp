#include "mleig/eit.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace mleig;

namespace {

Vector nominal() {
  Vector th(4);
  th << std::numbers::pi / 3, std::numbers::pi / 4, std::numbers::pi / 5, std::numbers::pi / 6;
  return th;
}

Vector random_angles(const EitModelSpec& s, std::uint64_t seed) {
  RandomStream rng(seed);
  return s.prior.sample(rng);
}

double slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST_SUITE("eit") {
  TEST_CASE("ground constraint and current balance on levels 0-2") {
    const auto spec = EitModelSpec::reference();
    for (int l = 0; l <= 2; ++l)
      for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto sol = solve_cem_full(spec, random_angles(spec, seed), l);
        CHECK(std::abs(sol.U.sum()) < 1e-10);
        CHECK(sol.residual < 1e-10);
        CHECK(std::abs(sol.multiplier) < 1e-10);
        // Discrete Kirchhoff law: every electrode returns its prescribed current.
        CHECK((sol.electrode_currents - spec.currents).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(std::abs(sol.electrode_currents.sum()) < 1e-10);
      }
  }

  TEST_CASE("assembled system is symmetric") {
    const auto spec = EitModelSpec::reference();
    for (int l = 0; l <= 2; ++l) {
      const auto sys = assemble_cem_system(spec, nominal(), l);
      const Eigen::SparseMatrix<double> asym = sys.matrix - Eigen::SparseMatrix<double>(sys.matrix.transpose());
      double amax = 0.0, scale = 0.0;
      for (int k = 0; k < asym.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(asym, k); it; ++it) amax = std::max(amax, std::abs(it.value()));
      for (int k = 0; k < sys.matrix.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(sys.matrix, k); it; ++it)
          scale = std::max(scale, std::abs(it.value()));
      CHECK(amax <= 1e-12 * scale);
      CHECK(sys.matrix.rows() == (sys.nx + 1) * (sys.ny + 1) + sys.num_electrodes + 1);
    }
  }

  TEST_CASE("mirror-symmetric setup gives antisymmetric potentials") {
    auto spec = EitModelSpec::reference();
    spec.sigma1 = spec.sigma2 = spec.sigma3 = 0.02;
    using Side = EitModelSpec::Electrode::Side;
    spec.electrodes = {{Side::top, 3.0, 2.0, 0.1}, {Side::top, 17.0, 2.0, 0.1}, {Side::bottom, 8.0, 2.0, 0.1},
                       {Side::bottom, 12.0, 2.0, 0.1}};
    spec.currents = Vector{{0.1, -0.1, 0.0, 0.0}};
    for (int l = 0; l <= 2; ++l) {
      const auto sol = solve_cem_full(spec, nominal(), l);
      CHECK(std::abs(sol.U[0] + sol.U[1]) < 1e-10);
      CHECK(std::abs(sol.U[2] + sol.U[3]) < 1e-10);
      CHECK(std::abs(sol.U[0]) > 1e-3);
    }
  }

  TEST_CASE("model output is the first N_el - 1 potentials") {
    const auto spec = EitModelSpec::reference();
    EitModel m(spec, MeshHierarchy{}, 2);
    const auto sol = m.solve(nominal(), 1);
    const Vector g = m.evaluate(nominal(), 1);
    CHECK(g.size() == 9);
    CHECK((g - sol.U.head(9)).norm() < 1e-12 * sol.U.norm());
    CHECK((g - solve_cem(spec, nominal(), 1)).norm() < 1e-12 * g.norm());
  }

  TEST_CASE("sensitivity Jacobian matches finite differences") {
    EitModel m(EitModelSpec::reference(), MeshHierarchy{}, 2);
    for (int l = 0; l <= 2; ++l) {
      const Vector th = random_angles(m.spec(), 7u + static_cast<unsigned>(l));
      const Matrix Ja = *m.analytic_jacobian(th, l);
      const Matrix Jf = fd_jacobian(m, th, l, 1e-5);
      CHECK((Ja - Jf).norm() < 1e-5 * Jf.norm());
    }
  }

  TEST_CASE("level differences decay at first order") {
    // Electrode edges limit bilinear elements to O(h) in the potentials.
    const auto spec = EitModelSpec::reference();
    EitModel m(spec, MeshHierarchy{}, 4);
    std::vector<Vector> g;
    for (int l = 0; l <= 4; ++l) g.push_back(m.evaluate(nominal(), l));
    std::vector<double> lh, ld;
    for (int l = 1; l <= 4; ++l) {
      lh.push_back(std::log2(m.hierarchy().h(l)));
      ld.push_back(std::log2((g[static_cast<std::size_t>(l)] - g[static_cast<std::size_t>(l) - 1]).norm()));
    }
    CHECK(slope(lh, ld) == doctest::Approx(1.0).epsilon(0.2));
  }

  TEST_CASE("mean squared level difference tracks 2 eta_s") {
    const auto spec = EitModelSpec::reference();
    EitModel m(spec, MeshHierarchy{}, 4);
    std::vector<double> lh, ld;
    for (int l = 1; l <= 4; ++l) {
      double s = 0.0;
      for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        const Vector th = random_angles(spec, seed);
        s += (m.evaluate(th, l) - m.evaluate(th, l - 1)).squaredNorm() / 4.0;
      }
      lh.push_back(std::log2(m.hierarchy().h(l)));
      ld.push_back(std::log2(s));
    }
    CHECK(std::abs(slope(lh, ld) - 2.0 * m.hierarchy().eta_s) <= 0.5);
  }

  TEST_CASE("hierarchy takes h0 from the coarse mesh") {
    const auto spec = EitModelSpec::reference();
    EitModel m(spec, MeshHierarchy{}, 3);
    CHECK(m.hierarchy().h(0) == doctest::Approx(spec.Lx / spec.Nx0));
    CHECK(m.hierarchy().h(2) == doctest::Approx(spec.Lx / spec.Nx0 / 4));
  }

  TEST_CASE("invalid setups are rejected") {
    auto spec = EitModelSpec::reference();
    spec.currents[0] += 0.05;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    auto narrow = EitModelSpec::reference();
    narrow.Nx0 = 2;
    narrow.electrodes[0].width = 0.1;
    CHECK_THROWS_AS(solve_cem(narrow, nominal(), 0), ConfigError);
  }
}
