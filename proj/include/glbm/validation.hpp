#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glbm/solver.hpp"

namespace glbm {

struct TaylorGreenOptions {
  int res = 128;
  double tau = 0.8;
  double u0 = 0.05;
  int levels = 1;
  bool refine_center = false;  ///< statically refine the central quarter-domain
  RescaleConvention rescale = RescaleConvention::post_collision;
  double decay_times = 1.0;
};

struct TaylorGreenResult {
  long steps = 0;
  double l2_error = 0.0;       ///< relative L2 velocity error vs analytic
  double ke_rate_error = 0.0;  ///< relative error of the measured KE decay rate
  bool ke_monotone = true;
  double seconds = 0.0;
};

/// Analytic decaying vortex at finest-level position `pos` and time t, with a
/// post-collision second moment consistent with relaxation time `tau_l` on a
/// level of spacing `dx`.
Moments<Lat> taylor_green_state(const Vec2& pos, double t, int res, double u0, double nu, double tau_l,
                                double dx);

TaylorGreenResult run_taylor_green(const TaylorGreenOptions& opt);

/// Relative L2 velocity difference between an L=2 run with a statically refined
/// central quarter and the uniform fine reference at matched time.
struct ConsistencyResult {
  double rel_l2 = 0.0;
  double seconds = 0.0;
};
ConsistencyResult multilevel_consistency(int res, double tau, double u0, RescaleConvention rescale,
                                         double decay_times = 0.25);

/// Max deviation from a uniform moving state after `top_steps` steps of an
/// L-level periodic hierarchy with a refined patch.
double uniform_flow_deviation(int levels, int top_steps, RescaleConvention rescale = RescaleConvention::post_collision);

struct PoiseuilleResult {
  double max_rel_error = 0.0;  ///< max |u - u_a| / u_max
  long steps = 0;
};
PoiseuilleResult run_poiseuille(int width, double tau, double u_max);

/// Relative drift of total mass: single level over `steps` steps, or
/// multi-level (L=2 refined patch) over `steps` top-level steps.
double mass_drift(int levels, int steps);

struct SandCollapseOptions {
  int particles_per_axis = 2;  ///< per cell and axis
  int column_width = 50;
  int column_height = 50;
  double gravity = 6e-5;
  double E = 0.1;
  double friction_deg = 30.0;
  double floor_friction = 0.5;
  long max_steps = 40000;
  std::uint64_t seed = 7;
};

struct SandCollapseResult {
  std::size_t particles = 0;
  long steps = 0;
  double left_slope = 0.0;   ///< |slope| of a linear fit over each flank
  double right_slope = 0.0;
  double final_height = 0.0;
  double runout = 0.0;       ///< final half-width over initial half-width
  bool mass_exact = false;
  bool settled = false;
  long failures = 0;
  double seconds = 0.0;
};

/// A granular column released on a frictional floor, run until at rest.
SandCollapseResult run_sand_collapse(const SandCollapseOptions& opt);

/// Max |S - down(up(S))| over random states (tau in [0.51, 2], |u| <= 0.1).
/// post_collision skips draws with a tau within 0.05 of 1.
double rescale_roundtrip_error(RescaleConvention c, int samples, std::uint64_t seed);
/// Max |rescale_tau(rescale_tau(t, a), b) - rescale_tau(t, a + b)| for a, b < 4.
double rescale_tau_composition_error(int samples, std::uint64_t seed);

struct BoundaryCheckResult {
  double outlet_rest = 0.0;     ///< outlet change of a fluid at rest with a perturbed density
  double outlet_uniform = 0.0;  ///< outlet change of a uniform moving state
  double inlet_at_y0 = 0.0;     ///< |u_x(y0)| of the log inlet
};
BoundaryCheckResult boundary_checks();

}  // namespace glbm
