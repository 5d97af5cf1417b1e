#include "mleig/eit.hpp"

#include <Eigen/SparseCholesky>

#include <cmath>
#include <numbers>
#include <sstream>

namespace mleig {

void EitModelSpec::validate() const {
  if (!(Lx > 0.0 && Ly > 0.0)) throw ConfigError("eit: Lx and Ly must be > 0");
  if (Nx0 < 1 || Ny0 < 1) throw ConfigError("eit: Nx0 and Ny0 must be >= 1");
  if (!(sigma1 > 0.0 && sigma2 > 0.0 && sigma3 > 0.0)) throw ConfigError("eit: conductivities must be > 0");
  if (plies.empty()) throw ConfigError("eit: at least one ply is required");
  double total = 0.0;
  for (const auto& p : plies) {
    if (!(p.thickness > 0.0)) throw ConfigError("eit: ply thickness must be > 0");
    if (p.angle_index < 0 || p.angle_index >= prior.dim())
      throw ConfigError("eit: ply angle_index outside the prior dimension");
    total += p.thickness;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("eit: ply thickness fractions must sum to 1");
  if (electrodes.size() < 2) throw ConfigError("eit: at least two electrodes are required");
  if (currents.size() != num_electrodes()) throw ConfigError("eit: currents must have one entry per electrode");
  if (std::abs(currents.sum()) > 1e-12 * std::max(1.0, currents.cwiseAbs().sum()))
    throw ConfigError("eit: injected currents must sum to zero");
  for (std::size_t i = 0; i < electrodes.size(); ++i) {
    const auto& e = electrodes[i];
    if (!(e.impedance > 0.0)) throw ConfigError("eit: electrode impedance must be > 0");
    if (!(e.width > 0.0) || e.center - e.width / 2 < 0.0 || e.center + e.width / 2 > Lx)
      throw ConfigError("eit: electrode " + std::to_string(i) + " does not fit in [0, Lx]");
    for (std::size_t j = 0; j < i; ++j) {
      const auto& f = electrodes[j];
      if (f.side == e.side && std::abs(f.center - e.center) < 0.5 * (e.width + f.width))
        throw ConfigError("eit: electrodes " + std::to_string(j) + " and " + std::to_string(i) + " overlap");
    }
  }
}

EitModelSpec EitModelSpec::reference() {
  EitModelSpec s;
  for (int k = 0; k < 4; ++k) s.plies.push_back({0.25, k});
  using Side = Electrode::Side;
  const double centers[] = {2.0, 6.0, 10.0, 14.0, 18.0};
  std::vector<double> I;
  for (int i = 0; i < 5; ++i) {
    s.electrodes.push_back({Side::top, centers[i], 2.0, 0.1});
    I.push_back(i % 2 == 0 ? 0.1 : -0.1);
  }
  for (int i = 0; i < 5; ++i) {
    s.electrodes.push_back({Side::bottom, centers[i], 2.0, 0.1});
    I.push_back(i % 2 == 0 ? -0.1 : 0.1);
  }
  s.currents = Eigen::Map<Vector>(I.data(), static_cast<Eigen::Index>(I.size()));
  constexpr double pi = std::numbers::pi;
  std::vector<PriorDim> dims;
  for (double c : {pi / 3, pi / 4, pi / 5, pi / 6}) dims.push_back(PriorDim::uniform(c - 0.05, c + 0.05));
  s.prior = PriorSpec(std::move(dims));
  return s;
}

std::pair<double, double> ply_conductivity(const EitModelSpec& spec, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {spec.sigma1 * c * c + spec.sigma3 * s * s, spec.sigma2};
}

// ---------------------------------------------------------------------------
// Level data: the sparsity pattern is shared by every theta, so the system is
// stored as a constant part plus per-ply x/y stiffness parts with aligned
// value arrays. Assembly for a given theta is then a linear combination.
// ---------------------------------------------------------------------------

struct EitModel::LevelData {
  int nx = 0, ny = 0, num_nodes = 0, num_electrodes = 0;
  double hx = 0.0, hy = 0.0;
  Eigen::SparseMatrix<double> base;
  std::vector<Vector> stiff_x, stiff_y;  // one per ply, values aligned with base
  Vector rhs;
  // Electrode edges: (electrode, left node, right node, length).
  struct Edge {
    int electrode, n0, n1;
    double length;
  };
  std::vector<Edge> edges;

  // Grounded copy without the multiplier and the last electrode potential:
  // SPD, and since the currents sum to zero the multiplier vanishes, so
  // shifting its solution to zero-mean electrode potentials recovers the
  // constrained one.
  // Stored symmetrically permuted by a fill-reducing ordering fixed per level.
  Eigen::SparseMatrix<double> grounded_base;
  std::vector<Vector> grounded_x, grounded_y;
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> perm;  // grounded = P A P^T

  static Eigen::SparseMatrix<double> combine(const Eigen::SparseMatrix<double>& b, const std::vector<Vector>& sx,
                                             const std::vector<Vector>& sy, const EitModelSpec& spec,
                                             const Vector& theta) {
    Eigen::SparseMatrix<double> A = b;
    Eigen::Map<Vector> values(A.valuePtr(), A.nonZeros());
    for (std::size_t k = 0; k < spec.plies.size(); ++k) {
      const auto [kx, ky] = ply_conductivity(spec, theta[spec.plies[k].angle_index]);
      values += kx * sx[k] + ky * sy[k];
    }
    return A;
  }
  Eigen::SparseMatrix<double> assemble(const EitModelSpec& spec, const Vector& theta) const {
    return combine(base, stiff_x, stiff_y, spec, theta);
  }
  Eigen::SparseMatrix<double> assemble_grounded(const EitModelSpec& spec, const Vector& theta) const {
    return combine(grounded_base, grounded_x, grounded_y, spec, theta);
  }
};

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

std::unique_ptr<EitModel::LevelData> build_level(const EitModelSpec& spec, int level, int beta) {
  auto data = std::make_unique<EitModel::LevelData>();
  const int scale = static_cast<int>(std::lround(std::pow(beta, level)));
  const int nx = spec.Nx0 * scale, ny = spec.Ny0 * scale;
  const int nn = (nx + 1) * (ny + 1);
  const int ne = spec.num_electrodes();
  const int n = nn + ne + 1;
  data->nx = nx;
  data->ny = ny;
  data->num_nodes = nn;
  data->num_electrodes = ne;
  data->hx = spec.Lx / nx;
  data->hy = spec.Ly / ny;
  const double hx = data->hx, hy = data->hy;
  auto node = [nx](int i, int j) { return j * (nx + 1) + i; };

  // Ply of each element row, by the row's centroid.
  std::vector<int> row_ply(static_cast<std::size_t>(ny));
  {
    std::vector<double> tops;
    double acc = 0.0;
    for (const auto& p : spec.plies) tops.push_back(acc += p.thickness * spec.Ly);
    for (int j = 0; j < ny; ++j) {
      const double yc = (j + 0.5) * hy;
      int k = 0;
      while (k + 1 < static_cast<int>(tops.size()) && yc > tops[static_cast<std::size_t>(k)]) ++k;
      row_ply[static_cast<std::size_t>(j)] = k;
    }
  }

  // Reference bilinear stiffness (d/dx part and d/dy part) on a unit square,
  // local node order (0,0), (1,0), (1,1), (0,1).
  const double kx_ref[4][4] = {{2, -2, -1, 1}, {-2, 2, 1, -1}, {-1, 1, 2, -2}, {1, -1, -2, 2}};
  const double ky_ref[4][4] = {{2, 1, -1, -2}, {1, 2, -2, -1}, {-1, -2, 2, 1}, {-2, -1, 1, 2}};
  const std::size_t np = spec.plies.size();
  std::vector<Triplets> tx(np), ty(np);
  for (int j = 0; j < ny; ++j) {
    const auto k = static_cast<std::size_t>(row_ply[static_cast<std::size_t>(j)]);
    for (int i = 0; i < nx; ++i) {
      const int ids[4] = {node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)};
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
          tx[k].emplace_back(ids[a], ids[b], kx_ref[a][b] * hy / (6.0 * hx));
          ty[k].emplace_back(ids[a], ids[b], ky_ref[a][b] * hx / (6.0 * hy));
        }
    }
  }

  // Electrode Robin terms and the ground multiplier.
  Triplets tb;
  for (int l = 0; l < ne; ++l) {
    const auto& e = spec.electrodes[static_cast<std::size_t>(l)];
    const int jrow = e.side == EitModelSpec::Electrode::Side::top ? ny : 0;
    const double lo = e.center - e.width / 2, hi = e.center + e.width / 2;
    const int Ul = nn + l;
    int count = 0;
    for (int i = 0; i < nx; ++i) {
      const double mid = (i + 0.5) * hx;
      if (mid < lo || mid > hi) continue;
      ++count;
      const int a = node(i, jrow), b = node(i + 1, jrow);
      const double w = 1.0 / e.impedance;
      tb.emplace_back(a, a, w * hx / 3.0);
      tb.emplace_back(b, b, w * hx / 3.0);
      tb.emplace_back(a, b, w * hx / 6.0);
      tb.emplace_back(b, a, w * hx / 6.0);
      for (int v : {a, b}) {
        tb.emplace_back(v, Ul, -w * hx / 2.0);
        tb.emplace_back(Ul, v, -w * hx / 2.0);
      }
      tb.emplace_back(Ul, Ul, w * hx);
      data->edges.push_back({l, a, b, hx});
    }
    if (count == 0) throw ConfigError("eit: electrode " + std::to_string(l) + " covers no mesh edge");
    tb.emplace_back(Ul, n - 1, 1.0);
    tb.emplace_back(n - 1, Ul, 1.0);
  }

  // Union pattern, then every component is rebuilt on that pattern so their
  // value arrays line up entry for entry.
  Triplets all = tb;
  for (std::size_t k = 0; k < np; ++k) {
    all.insert(all.end(), tx[k].begin(), tx[k].end());
    all.insert(all.end(), ty[k].begin(), ty[k].end());
  }
  Eigen::SparseMatrix<double> pattern(n, n);
  pattern.setFromTriplets(all.begin(), all.end());
  Triplets zeros;
  zeros.reserve(static_cast<std::size_t>(pattern.nonZeros()));
  for (int c = 0; c < pattern.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(pattern, c); it; ++it)
      zeros.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), 0.0);
  auto on_pattern = [&](Triplets t) {
    t.insert(t.end(), zeros.begin(), zeros.end());
    Eigen::SparseMatrix<double> m(n, n);
    m.setFromTriplets(t.begin(), t.end());
    return m;
  };
  const int m = n - 2;
  data->base = on_pattern(tb);
  {
    const Eigen::SparseMatrix<double> top = data->base.topLeftCorner(m, m);
    Eigen::AMDOrdering<int> amd;
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> p;
    amd(top.selfadjointView<Eigen::Lower>(), p);
    data->perm = p.inverse();
  }
  auto grounded = [&](const Eigen::SparseMatrix<double>& a) {
    const Eigen::SparseMatrix<double> top = a.topLeftCorner(m, m);
    Eigen::SparseMatrix<double> g = data->perm * top * data->perm.transpose();
    return g;
  };
  data->grounded_base = grounded(data->base);
  for (std::size_t k = 0; k < np; ++k) {
    auto mx = on_pattern(tx[k]);
    auto my = on_pattern(ty[k]);
    data->stiff_x.emplace_back(Eigen::Map<const Vector>(mx.valuePtr(), mx.nonZeros()));
    data->stiff_y.emplace_back(Eigen::Map<const Vector>(my.valuePtr(), my.nonZeros()));
    const auto gx = grounded(mx), gy = grounded(my);
    if (gx.nonZeros() != data->grounded_base.nonZeros() || gy.nonZeros() != data->grounded_base.nonZeros())
      throw SolverError("eit: grounded patterns do not line up");
    data->grounded_x.emplace_back(Eigen::Map<const Vector>(gx.valuePtr(), gx.nonZeros()));
    data->grounded_y.emplace_back(Eigen::Map<const Vector>(gy.valuePtr(), gy.nonZeros()));
  }
  data->rhs = Vector::Zero(n);
  data->rhs.segment(nn, ne) = spec.currents;
  return data;
}

struct Factored {
  Eigen::SparseMatrix<double> A;  // grounded
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::NaturalOrdering<int>> llt;
  Vector x;  // full unknown vector, multiplier included
  double residual = 0.0;
};

void factor_and_solve(const EitModelSpec& spec, const EitModel::LevelData& data, const Vector& theta, Factored& f) {
  f.A = data.assemble_grounded(spec, theta);
  f.llt.compute(f.A);
  if (f.llt.info() != Eigen::Success) throw SolverError("eit: grounded system is not positive definite");
  const Eigen::Index m = f.A.rows();
  const Vector b = data.perm * data.rhs.head(m);
  const Vector y = f.llt.solve(b);
  f.residual = (f.A * y - b).norm() / b.norm();
  if (!y.allFinite() || f.residual > 1e-8) {
    std::ostringstream os;
    os << "eit: linear solve inaccurate, relative residual " << f.residual;
    throw SolverError(os.str());
  }
  const int nn = data.num_nodes, ne = data.num_electrodes;
  f.x = Vector::Zero(m + 2);
  f.x.head(m) = data.perm.transpose() * y;
  f.x.head(nn + ne).array() -= f.x.segment(nn, ne).mean();
}

CemSolution solve_level(const EitModelSpec& spec, const EitModel::LevelData& data, const Vector& theta) {
  Factored f;
  factor_and_solve(spec, data, theta, f);
  const Vector& x = f.x;
  CemSolution sol;
  // Residual of the full constrained system, not just the grounded one.
  sol.residual = (data.assemble(spec, theta) * x - data.rhs).norm() / data.rhs.norm();
  const int nn = data.num_nodes, ne = data.num_electrodes;
  sol.u = x.head(nn);
  sol.U = x.segment(nn, ne);
  sol.multiplier = x[nn + ne];
  sol.electrode_currents = Vector::Zero(ne);
  for (const auto& e : data.edges) {
    const double z = spec.electrodes[static_cast<std::size_t>(e.electrode)].impedance;
    const double mean_u = 0.5 * (sol.u[e.n0] + sol.u[e.n1]);
    sol.electrode_currents[e.electrode] += e.length * (sol.U[e.electrode] - mean_u) / z;
  }
  return sol;
}

}  // namespace

CemSystem assemble_cem_system(const EitModelSpec& spec, const Vector& theta, int level, int beta) {
  spec.validate();
  const auto data = build_level(spec, level, beta);
  CemSystem sys;
  sys.matrix = data->assemble(spec, theta);
  sys.rhs = data->rhs;
  sys.num_nodes = data->num_nodes;
  sys.num_electrodes = data->num_electrodes;
  sys.nx = data->nx;
  sys.ny = data->ny;
  return sys;
}

CemSolution solve_cem_full(const EitModelSpec& spec, const Vector& theta, int level, int beta) {
  spec.validate();
  return solve_level(spec, *build_level(spec, level, beta), theta);
}

Vector solve_cem(const EitModelSpec& spec, const Vector& theta, int level, int beta) {
  const auto sol = solve_cem_full(spec, theta, level, beta);
  return sol.U.head(spec.num_electrodes() - 1);
}

namespace {
MeshHierarchy with_h0(MeshHierarchy h, const EitModelSpec& spec) {
  h.h0 = spec.Lx / spec.Nx0;
  return h;
}
}  // namespace

EitModel::EitModel(EitModelSpec spec, MeshHierarchy hierarchy, int max_level)
    : ForwardModel(spec.prior, with_h0(hierarchy, spec), max_level), spec_(std::move(spec)) {
  spec_.validate();
  levels_.resize(static_cast<std::size_t>(max_level) + 1);
  once_ = std::make_unique<std::once_flag[]>(static_cast<std::size_t>(max_level) + 1);
}

EitModel::~EitModel() = default;

const EitModel::LevelData& EitModel::level_data(int level) const {
  const auto l = static_cast<std::size_t>(level);
  std::call_once(once_[l], [&] { levels_[l] = build_level(spec_, level, hierarchy().beta); });
  return *levels_[l];
}

CemSolution EitModel::solve(const Vector& theta, int level) const {
  check_level(level);
  if (!prior().in_support(theta)) throw DomainError("eit: theta outside the prior support");
  return solve_level(spec_, level_data(level), theta);
}

std::optional<Matrix> EitModel::analytic_jacobian(const Vector& theta, int level) const {
  check_level(level);
  const auto& data = level_data(level);
  Factored f;
  factor_and_solve(spec_, data, theta, f);
  // A x = b, so dx/dtheta_k = -A^-1 (dA/dtheta_k) x; only the x-stiffness of
  // the plies oriented by theta_k depends on it.
  const int q = dim_output();
  Matrix J = Matrix::Zero(q, dim_theta());
  Eigen::SparseMatrix<double> dA = f.A;
  Eigen::Map<Vector> values(dA.valuePtr(), dA.nonZeros());
  const Eigen::Index m = f.A.rows();
  for (int k = 0; k < dim_theta(); ++k) {
    values.setZero();
    bool used = false;
    for (std::size_t p = 0; p < spec_.plies.size(); ++p) {
      if (spec_.plies[p].angle_index != k) continue;
      values += (spec_.sigma3 - spec_.sigma1) * std::sin(2.0 * theta[k]) * data.grounded_x[p];
      used = true;
    }
    if (!used) continue;
    // J = -dg/dtheta = +A^-1 (dA) x on U_1 .. U_q, shifted like x.
    Vector dx = Vector::Zero(m + 1);
    dx.head(m) = data.perm.transpose() * f.llt.solve(Vector(dA * (data.perm * f.x.head(m))));
    const Vector dU = dx.segment(data.num_nodes, data.num_electrodes);
    J.col(k) = (dU.array() - dU.mean()).head(q);
  }
  return J;
}

Vector EitModel::do_evaluate(const Vector& theta, int level) const {
  Factored f;
  const auto& data = level_data(level);
  factor_and_solve(spec_, data, theta, f);
  return f.x.segment(data.num_nodes, spec_.num_electrodes() - 1);
}

}  // namespace mleig
