#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "glbm/boundary.hpp"
#include "glbm/errors.hpp"
#include "glbm/rng.hpp"
#include "glbm/sparse_grid.hpp"

namespace glbm {

using Mat2 = Eigen::Matrix2d;
using Vec2d = Eigen::Vector2d;

struct Particle {
  Vec2d x = Vec2d::Zero();  ///< level-0 lattice coordinates
  Vec2d v = Vec2d::Zero();
  Mat2 C = Mat2::Zero();
  Mat2 F = Mat2::Identity();
  double m = 1.0;
  double V0 = 1.0;
  double vol_correction = 0.0;  ///< log-volume gained at the cone tip
};

struct SandParams {
  double E = 3.5e5;
  double poisson = 0.3;
  double friction_deg = 30.0;
  double floor_friction = 0.5;  ///< Coulomb coefficient of walls and solids
  bool plasticity = true;

  double mu() const { return E / (2.0 * (1.0 + poisson)); }
  double lambda() const { return E * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson)); }
  /// Cone slope in the Hencky-strain return map.
  double alpha() const;
  void validate() const;
};

/// Quadratic B-spline stencil of a point: nodes base + {0,1,2} per axis.
struct Stencil {
  Index2 base{};
  std::array<std::array<double, 3>, 2> w{};
};
Stencil quadratic_stencil(const Vec2d& x);

/// Node arrays on the level-0 cells of a topology. Node n sits at position n.
class MpmGrid {
 public:
  void resize(const GridTopology& topo);
  void clear();
  int nodes() const { return static_cast<int>(mass.size()); }

  std::vector<double> mass;
  std::vector<Vec2d> momentum;
  std::vector<Vec2d> velocity;
  std::vector<Vec2d> impulse;  ///< external impulse (drag) applied by the next grid update
  // Rasterized particle data for the coupling.
  std::vector<double> volume;   ///< sum of w V
  std::vector<double> area;     ///< sum of w d_p (2D cross-section)
  std::vector<Vec2d> mass_vel;  ///< sum of w m v
  std::vector<std::array<double, 3>> stress;  ///< sum of w V sigma (xx, xy, yy)

  const GridTopology* topo = nullptr;
};

struct MpmStats {
  long clamped = 0;     ///< particles pushed back inside the domain
  long failures = 0;    ///< degenerate deformation gradients reset to a rotation
  long violations = 0;  ///< stencil nodes outside the allocated tiles
  double max_speed = 0.0;
};

/// Kirchhoff stress of the StVK-Hencky model.
Mat2 kirchhoff_stress(const Mat2& F, const SandParams& p);
Mat2 cauchy_stress(const Mat2& F, const SandParams& p);

/// Drucker-Prager return mapping in Hencky strain with volume correction.
/// Returns the projected F; updates `vol_correction`. Sets `failed` for
/// degenerate input (det F <= 0).
Mat2 plasticity_project(const Mat2& F, double& vol_correction, const SandParams& p, bool* failed = nullptr);

/// Particle-to-grid: mass, APIC momentum with the stress term for step dt,
/// and the rasterized coupling channels. Deterministic for any thread count.
void p2g(const std::vector<Particle>& particles, MpmGrid& grid, const SandParams& p, double dt,
         MpmStats& stats);

/// Node velocities from momentum, gravity and the accumulated impulse, with
/// wall and solid projection.
void grid_update(MpmGrid& grid, double dt, const Vec2d& gravity, const BoundarySpec& bc, const SandParams& p);

/// Grid-to-particle with advection, affine update and plasticity.
void g2p(std::vector<Particle>& particles, const MpmGrid& grid, const SandParams& p, double dt,
         MpmStats& stats);

/// Particles on a per_axis x per_axis sub-lattice of every cell of the box,
/// jittered by up to `jitter` sub-spacings.
std::vector<Particle> seed_block(const Box& box, int per_axis, double density, CounterRng& rng,
                                 double jitter = 0.25);

double total_mass(const std::vector<Particle>& ps);
Vec2d total_momentum(const std::vector<Particle>& ps);
double kinetic_energy(const std::vector<Particle>& ps);

/// Binary particle frame: "GLBMPART", uint32 version, uint32 count, then per
/// particle x, y, vx, vy, m as little-endian doubles.
void write_particles(std::ostream& os, const std::vector<Particle>& ps);
std::vector<Particle> read_particles(std::istream& is);

}  // namespace glbm
