#pragma once

#include "mleig/forward_model.hpp"

#include <Eigen/SparseCore>

#include <memory>
#include <mutex>

namespace mleig {

/// 2D complete-electrode-model setup on the rectangle [0, Lx] x [0, Ly].
/// Plies are horizontal layers stacked from y = 0 upwards.
struct EitModelSpec {
  struct Ply {
    double thickness = 0.25;  // fraction of Ly
    int angle_index = 0;      // which theta entry orients this ply
  };
  struct Electrode {
    enum class Side { top, bottom };
    Side side = Side::top;
    double center = 0.0;
    double width = 1.0;
    double impedance = 0.1;
  };

  double Lx = 20.0;
  double Ly = 4.0;
  int Nx0 = 40;
  int Ny0 = 8;
  std::vector<Ply> plies;
  double sigma1 = 0.05;  // along the fibre
  double sigma2 = 1e-3;  // through the thickness
  double sigma3 = 1e-3;  // across the fibre, in plane
  std::vector<Electrode> electrodes;
  Vector currents;
  PriorSpec prior;

  int num_electrodes() const { return static_cast<int>(electrodes.size()); }
  void validate() const;

  /// Four plies of 0.25 Ly, five electrodes of width 2 on each face with
  /// alternating +-0.1 currents, uniform angle priors of half-width 0.05.
  static EitModelSpec reference();
};

/// Assembled saddle-point system: nodal potentials, electrode potentials,
/// then one multiplier enforcing sum U = 0.
struct CemSystem {
  Eigen::SparseMatrix<double> matrix;
  Vector rhs;
  int num_nodes = 0;
  int num_electrodes = 0;
  int nx = 0, ny = 0;
};

struct CemSolution {
  Vector u;                   // nodal potential, row-major in x
  Vector U;                   // all electrode potentials
  double multiplier = 0.0;
  Vector electrode_currents;  // sum over E_l of (U_l - u) / z_l
  double residual = 0.0;      // ||A x - b|| / ||b||
};

/// Per-direction effective conductivity (kx, ky) of ply k for angle t.
std::pair<double, double> ply_conductivity(const EitModelSpec& spec, double angle);

CemSystem assemble_cem_system(const EitModelSpec& spec, const Vector& theta, int level, int beta = 2);
CemSolution solve_cem_full(const EitModelSpec& spec, const Vector& theta, int level, int beta = 2);
/// U_1 .. U_{N_el - 1}.
Vector solve_cem(const EitModelSpec& spec, const Vector& theta, int level, int beta = 2);

class EitModel final : public ForwardModel {
 public:
  /// h0 is taken from Lx / Nx0; the remaining hierarchy fields are kept.
  EitModel(EitModelSpec spec, MeshHierarchy hierarchy, int max_level = 4);
  ~EitModel() override;

  int dim_output() const override { return spec_.num_electrodes() - 1; }
  std::string name() const override { return "eit"; }
  const EitModelSpec& spec() const { return spec_; }

  CemSolution solve(const Vector& theta, int level) const;
  /// Sensitivity solves that reuse the forward factorization.
  std::optional<Matrix> analytic_jacobian(const Vector& theta, int level) const override;

  struct LevelData;

 protected:
  Vector do_evaluate(const Vector& theta, int level) const override;

 private:
  const LevelData& level_data(int level) const;

  EitModelSpec spec_;
  mutable std::vector<std::unique_ptr<LevelData>> levels_;
  mutable std::unique_ptr<std::once_flag[]> once_;
};

}  // namespace mleig
