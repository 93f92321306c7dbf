#pragma once

#include <array>
#include <string>
#include <vector>

#include "glbm/boundary.hpp"
#include "glbm/solver.hpp"
#include "glbm/sparse_grid.hpp"

namespace glbm {

/// Inputs of the level-selection function.
struct RefineDriver {
  std::vector<Vec2> particles;  ///< finest-level lattice coordinates
  std::vector<Box> refine_mask;
};

/// 0 if the tile's region holds a particle or meets the refine mask, else L-1.
int target_level(const GridDomain& dom, const RefineDriver& driver, const TileKey& tile);

/// Level-0 tiles with target level 0, sorted.
std::vector<TileKey> requested_tiles(const GridDomain& dom, const RefineDriver& driver);

/// Reference hierarchy built from scratch on dense per-level bitmaps. Test oracle.
GridTopology brute_force_grid(const GridDomain& dom, const RefineDriver& driver,
                              const BoundarySpec& bc);

struct AdaptReport {
  bool changed = false;
  std::vector<int> created;  ///< per level
  std::vector<int> removed;
  std::vector<std::string> violations;
};

/// Incremental grid maintenance: refine/delete flags on sparse hash sets, in-place
/// topology edits and field remapping. A tile is released only when neither the
/// current nor the previous driver requests it.
class GridAdapter {
 public:
  explicit GridAdapter(bool hysteresis = true) : hysteresis_(hysteresis) {}

  /// Updates topology and remaps the solver's fields.
  AdaptReport update(MultiLevelSolver& solver, const RefineDriver& driver);
  /// Topology only (no fields).
  AdaptReport update(GridTopology& topo, const BoundarySpec& bc, const RefineDriver& driver);

 private:
  AdaptReport apply(GridTopology& topo, const BoundarySpec& bc, const RefineDriver& driver,
                    MultiLevelSolver* solver);

  bool hysteresis_;
  std::vector<TileKey> prev_;
};

/// Topology checks plus particles-at-finest.
std::vector<std::string> check_adapted(const GridTopology& topo, const RefineDriver& driver);

/// Moment value of an arbitrary node at level l from a (possibly different)
/// hierarchy: own level, then finer levels (rescaled up), then interpolation
/// from coarser levels.
Moments<Lat> resolve_moments(const GridTopology& topo, const PingPongPair& fields, const SolverParams& sp,
                             const std::vector<LevelParams>& lp, int l, Index2 node);

}  // namespace glbm
