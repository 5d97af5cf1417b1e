// One PASS/FAIL line per acceptance criterion on stdout; details go to stderr.
#include "mleig/config.hpp"
#include "mleig/eit.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>

using namespace mleig;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::ostringstream note;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      note << " [failed: " << what << "]";
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void criterion(int id, const std::string& title, double budget_seconds, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.note << " [exception: " << e.what() << "]";
  }
  const double secs = seconds_since(t0);
  if (secs > budget_seconds) o.require(false, "runtime over budget");
  if (!o.pass) ++failures;
  std::printf("%s %d %s:%s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.note.str().c_str(), secs);
  std::fflush(stdout);
}

PriorSpec std_normal(int d) { return PriorSpec(std::vector<PriorDim>(static_cast<std::size_t>(d), PriorDim::gaussian(0, 1))); }

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

/// Least-squares slope of y against x.
double slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / n, my += y[i] / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

SamplingOptions serial() {
  SamplingOptions s;
  s.workers = default_workers();
  return s;
}

// --- 1 ---------------------------------------------------------------------

void oracle_equivalence(Outcome& o) {
  LinearGaussianModel m(Matrix::Ones(1, 1), std_normal(1));
  const NoiseSpec noise(Vector::Ones(1), 1);
  const double truth = 0.5 * std::log(2.0), tol = 0.01;
  // Independent of the library's closed form: log det(1 + 1/1) / 2 for the unit case.
  o.require(std::abs(m.exact_eig(noise) - truth) < 1e-15, "closed form");

  auto t0 = Clock::now();
  PilotOptions po;
  po.L = 0;
  po.N = 50;
  const auto pilot = pilot_run(m, noise, po, 1);
  const auto is = dlmc_for_tol(m, noise, tol, 0.05, pilot, 2);
  const double t_is = seconds_since(t0);
  o.note << " dlmcis " << fmt(is.value) << " +- " << fmt(is.stat_error);
  o.require(std::abs(is.value - truth) <= tol, "dlmcis within TOL");
  o.require(std::abs(is.value - truth) <= 3 * is.stat_error, "dlmcis within 3 stat_error");
  o.require(t_is < 60, "dlmcis under 1 min");

  t0 = Clock::now();
  MldlmcOptions mo;
  mo.TOL = tol;
  mo.seed = 3;
  const auto ml = mldlmc_estimate(m, noise, mo);
  const double t_ml = seconds_since(t0);
  o.note << "; mldlmc " << fmt(ml.value) << " +- " << fmt(ml.stat_error);
  o.require(std::abs(ml.value - truth) <= tol, "mldlmc within TOL");
  o.require(std::abs(ml.value - truth) <= 3 * ml.stat_error, "mldlmc within 3 stat_error");
  o.require(t_ml < 60, "mldlmc under 1 min");

  t0 = Clock::now();
  MldlscOptions so;
  so.tol = tol;
  const auto sc = mldlsc_estimate(m, noise, so);
  const auto sc2 = mldlsc_estimate(m, noise, so);
  const double t_sc = seconds_since(t0);
  o.note << "; mldlsc " << fmt(sc.value);
  o.require(std::abs(sc.value - truth) <= tol, "mldlsc within TOL");
  o.require(sc.value == sc2.value, "mldlsc deterministic");
  o.require(t_sc < 60, "mldlsc under 1 min");
}

// --- 2 ---------------------------------------------------------------------

void trivial_null(Outcome& o) {
  ConstantModel c(Vector{{1.0, 2.0}}, std_normal(2));
  const NoiseSpec noise(Vector::Constant(2, 0.3), 2);
  SamplingOptions prior = serial();
  prior.use_is = false;
  const double v_dlmc = dlmc_estimate(c, noise, 0, 500, 10, 1, 0.05, prior).value;
  const double v_is = dlmc_estimate(c, noise, 0, 500, 10, 1, 0.05, serial()).value;
  MldlmcOptions mo;
  mo.TOL = 0.01;
  const double v_ml = mldlmc_estimate(c, noise, mo).value;
  MldlscOptions so;
  so.tol = 1e-6;
  const double v_sc = mldlsc_estimate(c, noise, so).value;
  o.note << " dlmc " << v_dlmc << ", dlmcis " << v_is << ", mldlmc " << v_ml << ", mldlsc " << v_sc;
  for (double v : {v_dlmc, v_is, v_ml, v_sc}) o.require(std::abs(v) <= 1e-12, "exact zero");
}

// --- 3 ---------------------------------------------------------------------

NoiseSpec toy_noise() { return NoiseSpec(Vector::Constant(2, 0.01), 1); }

void probability_guarantee(Outcome& o) {
  ToyModel toy;
  const NoiseSpec noise = toy_noise();
  const double tol = 0.05;

  // Reference: DLMCIS at a ten times tighter tolerance, with its own pilot.
  PilotOptions po;
  po.L = 4;
  po.N = 40;
  const auto pilot = pilot_run(toy, noise, po, 1001);
  const auto ref = dlmc_for_tol(toy, noise, tol / 10, 0.05, pilot, 1002);
  // Cross-check with deterministic quadrature at the same level.
  MldlscOptions so;
  so.tol = 1e-4;
  const auto sc = mldlsc_estimate(toy, noise, so);
  o.note << " oracle " << fmt(ref.value) << " +- " << fmt(ref.stat_error) << " (L=" << ref.L << ", quadrature "
         << fmt(sc.value) << ")";
  o.require(std::abs(ref.value - sc.value) <= tol / 10, "oracle and quadrature agree to TOL/10");

  int hits = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    MldlmcOptions mo;
    mo.TOL = tol;
    mo.seed = 5000 + s;
    if (std::abs(mldlmc_estimate(toy, noise, mo).value - ref.value) <= tol) ++hits;
  }
  o.note << "; " << hits << "/100 within TOL";
  o.require(hits >= 93, ">= 93/100");
}

// --- 4 and 6 share the EIT pilot ---------------------------------------------

struct EitSetup {
  ModelPtr model;
  NoiseSpec noise;
  PilotResult pilot;
};

EitSetup& eit_setup() {
  static EitSetup s = [] {
    const auto cfg = parse_config(nlohmann::json::parse(R"({
      "model": {"type": "eit", "max_level": 4},
      "noise": {"variance": 1e-4},
      "estimator": "mldlmc",
      "tol_list": [0.1]
    })"));
    EitSetup e;
    e.model = build_model(cfg);
    e.noise = build_noise(cfg, *e.model);
    PilotOptions po;
    po.L = 3;
    po.N = 20;
    e.pilot = pilot_run(*e.model, e.noise, po, 2024);
    return e;
  }();
  return s;
}

void decay_rates(Outcome& o) {
  auto& e = eit_setup();
  const auto& k = e.pilot.constants;
  o.note << " pilot eta_w " << fmt(k.eta_w) << ", eta_s " << fmt(k.eta_s) << ", C1 " << fmt(k.C1) << ", C2 "
         << fmt(k.C2);

  // Fresh coupled samples on levels 0-3 with the pilot's larger inner count.
  // Level differences are heavy tailed; a few hundred samples leave V_3 off by 2x.
  MlParameters p;
  p.L = 3;
  p.M = std::vector<int>(4, e.pilot.M_high);
  p.N = {20, 1000, 1000, 1000};
  const auto r = mldlmc_run(*e.model, e.noise, p, 77);
  std::vector<double> lv, le, lV;
  for (int l = 1; l <= 3; ++l) {
    const auto& s = r.per_level[static_cast<std::size_t>(l)];
    std::cerr << "  eit level " << l << ": E " << s.E << ", V " << s.V << ", N " << s.N << "\n";
    lv.push_back(static_cast<double>(l));
    le.push_back(std::log2(std::abs(s.E)));
    lV.push_back(std::log2(s.V));
  }
  const double rate_E = -slope(lv, le), rate_V = -slope(lv, lV);
  const double target_V = std::min(2 * k.eta_s, 2 * k.eta_w);
  o.note << "; |E_l| rate " << fmt(rate_E) << " vs " << fmt(k.eta_w) << ", V_l rate " << fmt(rate_V) << " vs "
         << fmt(target_V) << ", rejected " << r.rejected;
  o.require(std::abs(rate_E - k.eta_w) <= 0.5, "E rate within 0.5 of eta_w");
  o.require(std::abs(rate_V - target_V) <= 0.5, "V rate within 0.5 of min(2 eta_s, 2 eta_w)");
}

// --- 5 ---------------------------------------------------------------------

void work_complexity(Outcome& o) {
  ToyModel toy;
  const NoiseSpec noise = toy_noise();
  PilotOptions po;
  po.L = 4;
  po.N = 40;
  const auto pilot = pilot_run(toy, noise, po, 31);
  const std::vector<double> tols{0.2, 0.1, 0.05, 0.02};
  const int reps = 5;
  std::vector<double> lt, lml, lis;
  double ml_last = 0, is_last = 0;
  for (double tol : tols) {
    double wml = 0, wis = 0;
    for (int r = 0; r < reps; ++r) {
      MldlmcOptions mo;
      mo.TOL = tol;
      mo.seed = 100 + static_cast<std::uint64_t>(r);
      mo.constants = pilot;
      wml += mldlmc_estimate(toy, noise, mo).total_work / reps;
      wis += dlmc_for_tol(toy, noise, tol, 0.05, pilot, 200 + static_cast<std::uint64_t>(r)).total_work / reps;
    }
    std::cerr << "  toy tol " << tol << ": mldlmc work " << wml << ", dlmcis work " << wis << "\n";
    lt.push_back(std::log(tol));
    lml.push_back(std::log(wml));
    lis.push_back(std::log(wis));
    ml_last = wml;
    is_last = wis;
  }
  const double s_ml = slope(lt, lml), s_is = slope(lt, lis);
  o.note << " mldlmc slope " << fmt(s_ml) << ", dlmcis slope " << fmt(s_is) << ", work ratio at 0.02 "
         << fmt(is_last / ml_last);
  o.require(s_ml >= -2.6 && s_ml <= -1.8, "mldlmc slope in [-2.6, -1.8]");
  o.require(s_is < s_ml || is_last >= 5 * ml_last, "dlmcis steeper or >= 5x work");
}

// --- 6 ---------------------------------------------------------------------

void level_schedule(Outcome& o) {
  RandomStream rng(606);
  int exact = 0;
  for (int t = 0; t < 20;) {
    MeshHierarchy h;
    h.h0 = 0.1 + 1.9 * rng.uniform();
    h.beta = 2 + static_cast<int>(rng.uniform() * 3);
    RateConstants rc;
    rc.C2 = std::exp(std::log(0.05) + rng.uniform() * std::log(200.0));
    rc.eta_w = rc.eta_s = 0.5 + 2.5 * rng.uniform();
    rc.C1 = 0.01;
    const double tol = std::exp(std::log(1e-4) + rng.uniform() * std::log(1e3));
    // Hand formula: ceil((log_b(2 C2 h0^eta) + log_b(1/TOL)) / eta).
    const double lb = std::log(static_cast<double>(h.beta));
    const double raw = (std::log(2 * rc.C2) / lb + rc.eta_w * std::log(h.h0) / lb - std::log(tol) / lb) / rc.eta_w;
    if (raw <= 0.5) continue;  // clamp region; keep tuples where the formula is active
    ++t;
    const int hand = static_cast<int>(std::ceil(raw));
    const auto p = select_parameters(tol, 0.05, rc, h, {1.0});
    if (p.L == hand) ++exact;
    else std::cerr << "  L* mismatch: hand " << hand << ", select_parameters " << p.L << "\n";
  }
  o.note << " " << exact << "/20 random tuples exact";
  o.require(exact == 20, "all 20 tuples");

  // L against log(1/TOL) with the EIT pilot constants.
  auto& e = eit_setup();
  std::vector<double> x, y;
  for (int i = 0; i <= 40; ++i) {
    const double tol = std::pow(10.0, -0.5 - 4.0 * i / 40.0);
    const auto p = select_parameters(tol, 0.05, e.pilot.constants, e.model->hierarchy(), e.pilot.V_low, false);
    x.push_back(std::log(1.0 / tol));
    y.push_back(p.L);
  }
  const double s = slope(x, y);
  o.note << "; eit L slope " << fmt(s) << " per log(1/TOL) (L " << y.front() << ".." << y.back() << ")";
  o.require(std::abs(s - 1.4) <= 0.5, "EIT slope within 0.5 of 1.4");
}

// --- 7 ---------------------------------------------------------------------

double normal_moment(int k) {
  if (k % 2) return 0.0;
  double m = 1.0;
  for (int j = k - 1; j > 0; j -= 2) m *= j;
  return m;
}

void quadrature_suite(Outcome& o) {
  int checks = 0;
  for (int b = 1; b <= 7; ++b) {
    const auto lo = cc_rule(b), hi = cc_rule(b + 1);
    for (double x : lo.points)
      o.require(std::find(hi.points.begin(), hi.points.end(), x) != hi.points.end(), "CC nested"), ++checks;
    const auto w = lo.probability_weights();
    for (int k = 0; k < static_cast<int>(lo.size()); ++k) {
      double s = 0;
      for (std::size_t i = 0; i < lo.size(); ++i) s += w[i] * std::pow(lo.points[i], k);
      o.require(std::abs(s - (k % 2 ? 0.0 : 1.0 / (k + 1))) <= 1e-13, "CC exact"), ++checks;
    }
  }
  for (int m = 1; m <= 15; ++m) {
    const auto r = gh_rule_points(m);
    for (int k = 0; k <= 2 * m - 1; ++k) {
      double s = 0;
      for (std::size_t i = 0; i < r.size(); ++i) s += r.weights[i] * std::pow(r.points[i], k);
      o.require(std::abs(s - normal_moment(k)) <= 1e-13 * normal_moment(k + k % 2), "GH exact"), ++checks;
    }
  }
  // Combination over a full box collapses to the corner tensor rule.
  auto f = [](const Vector& z) { return std::exp(0.3 * z[0] + 0.2 * z[1]) / (1.5 + z[2]); };
  auto U = [&](const MultiIndex& b) { return tensor_quadrature({cc_rule(b[0]), gh_rule(b[1]), cc_rule(b[2])}, f); };
  IndexSet box;
  for (int i = 1; i <= 4; ++i)
    for (int j = 1; j <= 3; ++j)
      for (int k = 1; k <= 3; ++k) box.insert({i, j, k});
  const double corner = U({4, 3, 3});
  o.require(std::abs(combination_estimate(box, U, {1, 1, 1}) - corner) <= 1e-13 * std::abs(corner), "collapse"), ++checks;
  // Every adaptive admission keeps the set downward closed.
  IndexFunctionCache C([&](const MultiIndex& b) { return U(b); });
  auto profit = [&](const MultiIndex& b) {
    return Profit{mixed_difference(b, C, {1, 1, 1}), static_cast<double>(cc_count(b[0]) * gh_count(b[1]) * cc_count(b[2]))};
  };
  AdaptOptions ao;
  ao.tol = 1e-8;
  const auto a = adapt_index_set(profit, {1, 1, 1}, ao);
  IndexSet seen;
  for (const auto& idx : a.admission_order) {
    seen.insert(idx);
    o.require(is_downward_closed(seen, {1, 1, 1}), "downward closed"), ++checks;
  }
  o.require(!is_downward_closed({{1, 1, 1}, {1, 3, 1}}, {1, 1, 1}), "gap detected");
  o.note << " " << checks << " property checks, adaptive set of " << a.set.size();
}

// --- 8 ---------------------------------------------------------------------

void fem_suite(Outcome& o) {
  const auto spec = EitModelSpec::reference();
  RandomStream rng(88);
  double worst_ground = 0, worst_flux = 0, worst_asym = 0, worst_anti = 0;
  for (int l = 0; l <= 2; ++l) {
    for (int k = 0; k < 3; ++k) {
      const Vector th = spec.prior.sample(rng);
      const auto sol = solve_cem_full(spec, th, l);
      worst_ground = std::max(worst_ground, std::abs(sol.U.sum()));
      worst_flux = std::max(worst_flux, (sol.electrode_currents - spec.currents).cwiseAbs().maxCoeff());
    }
    const auto sys = assemble_cem_system(spec, spec.prior.sample(rng), l);
    const Eigen::SparseMatrix<double> T = sys.matrix.transpose();
    const double scale = Matrix(sys.matrix).cwiseAbs().maxCoeff();
    worst_asym = std::max(worst_asym, Matrix(sys.matrix - T).cwiseAbs().maxCoeff() / scale);

    // Isotropic plate, electrodes mirrored about x = Lx / 2, current in on one side and out on the other.
    auto sym = spec;
    sym.sigma1 = sym.sigma2 = sym.sigma3 = 0.02;
    using Side = EitModelSpec::Electrode::Side;
    sym.electrodes = {{Side::top, 5.0, 1.5, 0.1}, {Side::top, 15.0, 1.5, 0.1}, {Side::bottom, 2.0, 1.5, 0.1},
                      {Side::bottom, 18.0, 1.5, 0.1}};
    sym.currents = Vector{{0.1, -0.1, 0.05, -0.05}};
    const auto s = solve_cem_full(sym, spec.prior.sample(rng), l);
    worst_anti = std::max({worst_anti, std::abs(s.U[0] + s.U[1]), std::abs(s.U[2] + s.U[3])});
  }
  o.note << " max |sum U| " << worst_ground << ", max flux error " << worst_flux << ", asymmetry " << worst_asym
         << ", antisymmetry " << worst_anti;
  o.require(worst_ground <= 1e-10, "ground constraint");
  o.require(worst_flux <= 1e-9, "flux conservation");
  o.require(worst_asym <= 1e-12, "symmetric system");
  o.require(worst_anti <= 1e-10, "antisymmetric potentials");
}

// --- 9 ---------------------------------------------------------------------

void variance_cancellation(Outcome& o) {
  RandomStream rng(9);
  double worst = 0;
  for (int k = 0; k < 1000; ++k) {
    const double M = 1 + std::floor(rng.uniform() * 1000);
    const double h = std::exp(-6 * rng.uniform());
    const double es = 0.2 + 3 * rng.uniform(), ew = 0.2 + 3 * rng.uniform();
    const double expect = std::pow(h, 2 * es) / M + std::pow(h, 2 * ew);
    worst = std::max(worst, std::abs(theoretical_variance_bound(M, M, h, es, ew) - expect) / expect);
  }
  o.note << " max relative deviation " << worst << " over 1000 random inputs";
  o.require(worst <= 1e-14, "identity");
}

}  // namespace

int main() {
  criterion(1, "oracle equivalence", 180, oracle_equivalence);
  criterion(2, "trivial null", 60, trivial_null);
  criterion(3, "probability guarantee", 1800, probability_guarantee);
  criterion(4, "decay rates", 1800, decay_rates);
  criterion(5, "work complexity", 1800, work_complexity);
  criterion(6, "level schedule", 1800, level_schedule);
  criterion(7, "quadrature suite", 60, quadrature_suite);
  criterion(8, "FEM suite", 300, fem_suite);
  criterion(9, "variance-bound cancellation", 60, variance_cancellation);
  return failures == 0 ? 0 : 1;
}
