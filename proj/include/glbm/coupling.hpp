#pragma once

#include <array>
#include <vector>

#include "glbm/adapt.hpp"
#include "glbm/granular.hpp"
#include "glbm/solver.hpp"

namespace glbm {

/// Physical scales of one finest cell and one finest step. Internally all
/// state lives in lattice units; this only converts configuration values.
struct UnitScale {
  double dx_phys = 1.0;   ///< m per finest cell
  double dt_phys = 1.0;   ///< s per finest step
  double rho_phys = 1.0;  ///< kg/m^3 per unit lattice density

  /// Force-density conversion factor rho dx / dt^2.
  double C() const { return rho_phys * dx_phys / (dt_phys * dt_phys); }
  /// Same factor from a reference velocity pair.
  double C_from_reference(double u_ref_phys, double u_ref_latt) const {
    return rho_phys * u_ref_phys * u_ref_phys / (u_ref_latt * u_ref_latt * dx_phys);
  }
  double velocity(double v_phys) const { return v_phys * dt_phys / dx_phys; }
  double acceleration(double a_phys) const { return a_phys * dt_phys * dt_phys / dx_phys; }
  double viscosity(double nu_phys) const { return nu_phys * dt_phys / (dx_phys * dx_phys); }
  double force_density(double f_phys) const { return f_phys / C(); }
  double stress(double s_phys) const { return s_phys / (C() * dx_phys); }
  void validate() const;
};

struct CouplingParams {
  double eps_min = 0.3;
  double rho0 = 1.0;
  double nu = 0.1;            ///< finest-level lattice viscosity
  double d_p = 1.0;           ///< particle diameter in finest cells
  double re_min = 0.01;
  double eta_surface = 0.6;   ///< upper sediment fraction of entrainment cells
  double eta_empty = 1e-6;    ///< a neighbour below this counts as free
  bool powder = false;
  double entrainment = 0.0;   ///< E
  double diffusion = 0.0;     ///< D in cells^2 per finest step
  double diffusion_sign = 1.0;  ///< -1 reproduces the anti-diffusive literal form
  bool implicit_drag = true;  ///< exact two-body relaxation of each cell's impulse

  void validate() const;
};

/// Per level-0 cell coupling state.
struct CouplingFields {
  void resize(const GridTopology& topo);
  int cells() const { return static_cast<int>(eps.size()); }

  std::vector<double> eta;      ///< sediment fraction after entrainment
  std::vector<double> eps_raw;  ///< 1 - eta - phi
  std::vector<double> eps;      ///< clamped to [eps_min, 1]
  std::vector<double> area;     ///< summed particle cross-section
  std::vector<double> mass;     ///< sediment node mass
  std::vector<Vec2d> v_cell;    ///< mass-weighted sediment velocity
  std::vector<std::array<double, 3>> sigma;  ///< cell Cauchy stress (xx, xy, yy)
  std::vector<Vec2d> drag_s;    ///< force density on the sediment
  std::vector<Vec2d> drag_f;    ///< force density on the fluid
  std::vector<Vec2d> grad_term; ///< ((rho - rho0) / eps) grad eps
  std::vector<Vec2d> force;     ///< total lattice force on the fluid
  std::vector<std::array<int, 4>> nbr;  ///< x-, x+, y-, y+ level-0 cells, -1 if absent
};

/// Fractions from the rasterized channels of p2g. `phi` may be empty.
void rasterize_fractions(const MpmGrid& grid, const std::vector<double>& phi, double eps_min,
                         CouplingFields& f);
/// Recomputes eps_raw and eps from eta and phi.
void update_fractions(CouplingFields& f, const std::vector<double>& phi, double eps_min);
/// Convenience form that performs the deposit itself.
void rasterize_fractions(const std::vector<Particle>& particles, const GridTopology& topo,
                         const std::vector<double>& phi, double eps_min, CouplingFields& f);

double difelice_cd(double re);
double difelice_chi(double re);

struct DragPair {
  Vec2d fluid = Vec2d::Zero();
  Vec2d sediment = Vec2d::Zero();
};

/// Di Felice drag density for fluid velocity u, sediment velocity v.
DragPair difelice_drag(const Vec2d& u, const Vec2d& v, double eps, double rho_f, double area,
                       const CouplingParams& p);

/// Fills drag_s, drag_f for every cell of `cells` holding sediment. `u` is
/// the fluid velocity, `rho` the fluid density per cell. With implicit_drag the
/// impulse over dt is the exact relaxation of the linearised pair.
void compute_drag(const std::vector<int>& cells, const std::vector<Vec2d>& u, const std::vector<double>& rho,
                  double dt, const CouplingParams& p, CouplingFields& f);

/// Central-difference gradient of eps at a cell; one-sided next to missing cells.
Vec2d eps_gradient(const CouplingFields& f, int cell);

/// Total lattice force ((rho - rho0)/eps) grad eps + rho g + f^f; also stores
/// the gradient term.
Vec2d mixture_force(CouplingFields& f, int cell, double rho, const Vec2& gravity, double rho0);

/// Entrainment rate E |v^T sigma v| / |v|.
double entrainment_rate(const Vec2d& v, const std::array<double, 3>& sigma, double E);

/// True for 0 < eta < eta_surface with some free neighbour.
bool surface_cell(const CouplingFields& f, int cell, const CouplingParams& p);

/// Powder transport on level 0: RK3 semi-Lagrangian advection by `u`
/// (velocity per level-0 cell), forward-Euler diffusion with zero flux at
/// missing neighbours, then entrainment from surface cells (moving fraction
/// from eta into phi). Returns the entrained amount.
double powder_step(const GridTopology& topo, const std::vector<double>& phi_in, const std::vector<Vec2d>& u,
                   double dt, const CouplingParams& p, CouplingFields& f, std::vector<double>& phi_out,
                   bool entrain = true);

struct CoupledConfig {
  SolverParams solver;
  BoundarySpec bc;
  CouplingParams coupling;
  SandParams sand;
  bool adapt = true;
  bool hysteresis = true;
  std::vector<Box> refine_mask;
};

/// Per-step momentum ledger (lattice units, level-0 sums).
struct MomentumAudit {
  Vec2d fluid_change = Vec2d::Zero();
  Vec2d sediment_change = Vec2d::Zero();
  Vec2d gravity_impulse = Vec2d::Zero();
  Vec2d gradient_impulse = Vec2d::Zero();  ///< sum of the eps-gradient force
  Vec2d drag_impulse = Vec2d::Zero();      ///< sum of impulses given to the sediment

  double residual() const {
    return (fluid_change + sediment_change - gravity_impulse - gradient_impulse).cwiseAbs().maxCoeff();
  }
};

struct StepDiagnostics {
  long step = 0;
  Vec2 fluid_momentum{};
  Vec2d sediment_momentum = Vec2d::Zero();
  Vec2d drag_impulse = Vec2d::Zero();
  double phi_sum = 0.0;
  std::vector<int> tiles;
  double eps_min = 1.0;
  double max_drag_pair_error = 0.0;  ///< max |f^f + f^s| over cells
};

/// Orchestrates fluid, sediment, powder and adaptation. One call to step()
/// advances one top-level step; MPM runs inside the level-0 exchange.
class CoupledSimulation : public LevelZeroHook {
 public:
  CoupledSimulation(const GridDomain& dom, CoupledConfig cfg, std::vector<Particle> particles,
                    bool coupling = true);

  void initialize(const InitField& init);
  void step();
  void exchange(const FieldLevel& read, FieldLevel& write) override;

  MultiLevelSolver& solver() { return solver_; }
  const MultiLevelSolver& solver() const { return solver_; }
  GridTopology& topology() { return topo_; }
  const GridTopology& topology() const { return topo_; }
  const std::vector<Particle>& particles() const { return particles_; }
  std::vector<Particle>& particles() { return particles_; }
  const CouplingFields& fields() const { return fields_; }
  const MpmGrid& mpm_grid() const { return grid_; }
  const CoupledConfig& config() const { return cfg_; }
  const MpmStats& mpm_stats() const { return stats_; }
  const MomentumAudit& last_audit() const { return audit_; }
  StepDiagnostics diagnostics() const;
  double entrained_total() const { return entrained_; }
  long adapt_changes() const { return adapt_changes_; }

 private:
  RefineDriver driver() const;
  void adapt();

  CoupledConfig cfg_;
  GridTopology topo_;
  MultiLevelSolver solver_;
  bool coupling_;
  std::vector<Particle> particles_;
  MpmGrid grid_;
  CouplingFields fields_;
  GridAdapter adapter_;
  MpmStats stats_;
  MomentumAudit audit_;
  std::vector<int> active0_;
  long mpm_phase_ = 0;
  double entrained_ = 0.0;
  long adapt_changes_ = 0;
  double max_pair_error_ = 0.0;
};

}  // namespace glbm
