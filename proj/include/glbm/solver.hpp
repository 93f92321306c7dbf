#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "glbm/boundary.hpp"
#include "glbm/lattice.hpp"
#include "glbm/sparse_grid.hpp"

namespace glbm {

using Lat = D2Q9;
using Vec2 = std::array<double, 2>;
using Sym2 = std::array<double, 3>;  // xx, xy, yy

enum class RescaleConvention {
  derived,         ///< kappa_up = 2 tau_{l+1} / tau_l, kappa_down = 1 / kappa_up
  paper_literal,   ///< up tau_{l+1} / (2 tau_l), down 2 tau_{l+1} / tau_l
  post_collision,  ///< kappa_up = 2 (tau_{l+1} - 1) / (tau_l - 1), kappa_down = 1 / kappa_up
};

enum class UpwardMode { coincident, average };

std::string to_string(RescaleConvention c);
RescaleConvention rescale_convention_from_string(const std::string& s);

/// tau at k levels coarser: tau / 2^k + (2^k - 1) / 2^(k+1).
double rescale_tau(double tau, int k);

double kappa_up(double tau_l, double tau_l1, RescaleConvention c);
double kappa_down(double tau_l, double tau_l1, RescaleConvention c);

/// Fine -> coarse: S^eq(u) + kappa_up (S_fine - S^eq(u)).
Sym2 rescale_S_up(const Sym2& s_fine, const Vec2& u, double tau_l, double tau_l1,
                  RescaleConvention c = RescaleConvention::derived);
/// Coarse -> fine: S^eq(u) + kappa_down (S_coarse - S^eq(u)).
Sym2 rescale_S_down(const Sym2& s_coarse, const Vec2& u, double tau_l, double tau_l1,
                    RescaleConvention c = RescaleConvention::derived);

struct LevelParams {
  double dx = 1.0;
  double dt = 1.0;
  double tau = 0.8;
  double nu = 0.1;
  Vec2 gravity{};  ///< lattice acceleration at this level
};

struct SolverParams {
  int levels = 1;
  double tau0 = 0.8;
  double rho0 = 1.0;
  Vec2 gravity{};  ///< finest-level lattice acceleration
  double eps_min = 0.3;
  double tau_floor = 0.51;
  int mpm_cadence = 1;
  RescaleConvention rescale = RescaleConvention::post_collision;
  UpwardMode upward = UpwardMode::coincident;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

std::vector<LevelParams> make_level_params(const SolverParams& p);

/// Outlet and inlet cells of one level.
struct BoundaryCells {
  struct Outlet {
    int cell;
    int inner;
    int axis;
    double sign;  ///< +1 on the max face
  };
  struct Inlet {
    int cell;
    double y;  ///< finest-level units
    LogInlet profile;
  };
  std::vector<Outlet> outlets;
  std::vector<Inlet> inlets;
};

std::vector<BoundaryCells> build_boundary_cells(const GridTopology& topo, const BoundarySpec& bc);

inline Moments<Lat> load(const FieldLevel& f, int cell) {
  Moments<Lat> m;
  m.rho = f(kRho, cell);
  m.u = {f(kUx, cell), f(kUy, cell)};
  m.S = {f(kSxx, cell), f(kSxy, cell), f(kSyy, cell)};
  return m;
}

inline void store(FieldLevel& f, int cell, const Moments<Lat>& m) {
  f(kRho, cell) = m.rho;
  f(kUx, cell) = m.u[0];
  f(kUy, cell) = m.u[1];
  f(kSxx, cell) = m.S[0];
  f(kSxy, cell) = m.S[1];
  f(kSyy, cell) = m.S[2];
}

/// Moment-space BGK collision with forcing. `m` holds the intermediate
/// moments (u already carries the half-force shift).
Moments<Lat> collide(const Moments<Lat>& m, const Vec2& force, double tau);

// Level kernels. They only touch the arrays passed in, so any buffering scheme
// can drive them.

/// Pull streaming + collision for every active cell of level l. Solid cells are
/// copied through. Force per cell is rho* times the level gravity.
void stream_collide(const GridTopology& topo, int l, const LevelParams& lp,
                    const FieldLevel& in, FieldLevel& out);

/// Streaming only: writes raw sums (rho*, j*, Pi*/rho*) of active cells to `out`.
void stream_only(const GridTopology& topo, int l, const FieldLevel& in, FieldLevel& out);

/// Collision of streamed raw sums in `io` with the per-cell force (kFx, kFy) and
/// tau_eff = max(clamp(eps, eps_min, 1) tau, tau_floor).
void collide_coupled(const GridTopology& topo, int l, const LevelParams& lp, const SolverParams& sp,
                     FieldLevel& io);

/// Fills I^d_l of `fine` from level l+1. s = 1 uses `coarse_old`; s = 2 the
/// mean of `coarse_old` and `coarse_new`.
void downward_transfer(const GridTopology& topo, int l, int s, const SolverParams& sp,
                       const std::vector<LevelParams>& lp, const FieldLevel& coarse_old,
                       const FieldLevel& coarse_new, FieldLevel& fine);

/// Fills I^u_{l+1} of `coarse` from level l.
void upward_transfer(const GridTopology& topo, int l, const SolverParams& sp,
                     const std::vector<LevelParams>& lp, const FieldLevel& fine, FieldLevel& coarse);

/// Convective outlet and log inlet. Reads the previous state from `in`.
void apply_boundaries(const BoundaryCells& cells, const SolverParams& sp, const FieldLevel& in,
                      FieldLevel& out);

/// Level-0 exchange point between streaming and collision. `read` is the level-0
/// state before the step, `write` holds the streamed raw sums; the hook fills
/// kEps, kFx, kFy of `write`.
class LevelZeroHook {
 public:
  virtual ~LevelZeroHook() = default;
  virtual void exchange(const FieldLevel& read, FieldLevel& write) = 0;
};

using InitField = std::function<Moments<Lat>(int level, const std::array<double, 2>& pos)>;

/// Multi-level solver over the recursive ping-pong pair.
class MultiLevelSolver {
 public:
  MultiLevelSolver(GridTopology& topo, BoundarySpec bc, SolverParams p, bool coupling = false);

  /// Writes the initial state into the current buffer of every level.
  void initialize(const InitField& init);
  /// One top-level step: 2^(L-1-l) stream-collide calls on level l.
  void step();
  void advance(int l, int s);

  void set_hook(LevelZeroHook* hook) { hook_ = hook; }
  /// Re-derives boundary lists and buffer sizes after a topology change.
  /// Field contents must be remapped by the caller.
  void topology_changed();

  const GridTopology& topology() const { return topo_; }
  GridTopology& topology() { return topo_; }
  const BoundarySpec& boundaries() const { return bc_; }
  const SolverParams& params() const { return params_; }
  const std::vector<LevelParams>& level_params() const { return lp_; }
  PingPongPair& buffers() { return pp_; }
  const PingPongPair& buffers() const { return pp_; }
  FieldLevel& current(int l) { return pp_.read(l); }
  const FieldLevel& current(int l) const { return pp_.read(l); }

  const std::vector<long>& kernel_counts() const { return counts_; }
  long finest_steps() const { return finest_steps_; }
  long top_steps() const { return top_steps_; }
  double time() const { return static_cast<double>(finest_steps_); }

  /// Volume-weighted mass over cells owned by childless tiles (finest units).
  double total_mass() const;
  /// Volume-weighted momentum over owned active cells.
  Vec2 total_momentum() const;
  double kinetic_energy() const;

 private:
  GridTopology& topo_;
  BoundarySpec bc_;
  SolverParams params_;
  std::vector<LevelParams> lp_;
  std::vector<BoundaryCells> bcells_;
  PingPongPair pp_;
  bool coupling_;
  LevelZeroHook* hook_ = nullptr;
  std::vector<long> counts_;
  long finest_steps_ = 0;
  long top_steps_ = 0;
};

/// Cells of level l whose region is not covered by a finer level and that
/// are not solid; each carries weight 4^l in finest-cell units.
std::vector<int> owned_cells(const GridTopology& topo, int l);

}  // namespace glbm
