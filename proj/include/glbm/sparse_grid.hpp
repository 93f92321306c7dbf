#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "glbm/boundary.hpp"

namespace glbm {

inline constexpr int kTileSize = 4;
inline constexpr int kTileCells = kTileSize * kTileSize;

using Index2 = std::array<int, 2>;

constexpr int floor_div(int a, int b) { return (a >= 0) ? a / b : -((-a + b - 1) / b); }
constexpr int floor_mod(int a, int b) { return a - b * floor_div(a, b); }

/// Identity of a 4x4 tile: level plus signed tile coordinates. The tile
/// covers level-local nodes [4 coords, 4 coords + 4) per axis.
struct TileKey {
  int level = 0;
  Index2 coords{};

  friend bool operator==(const TileKey&, const TileKey&) = default;
  friend auto operator<=>(const TileKey&, const TileKey&) = default;
};

enum class TileKind : std::uint8_t { leaf, border };
enum class AdaptFlag : std::uint8_t { none, refine, coarsen, remove };

struct TileMeta {
  TileKind kind = TileKind::leaf;
  AdaptFlag flag = AdaptFlag::none;
  int slot = -1;
};

std::uint64_t hash_key(const TileKey& k);

// Topology queries. `levels` is the hierarchy depth L.
TileKey parent(const TileKey& k, int levels);
std::array<TileKey, 4> children(const TileKey& k);
std::array<TileKey, 3> siblings(const TileKey& k, int levels);
std::array<TileKey, 8> neighbors(const TileKey& k);

/// Per-level table of stored tiles: open-addressing spatial hash over dense
/// slots. Erasing moves the last slot into the hole.
class TileTable {
 public:
  int find(const TileKey& k) const;
  bool contains(const TileKey& k) const { return find(k) >= 0; }
  /// Returns the slot of `k`, inserting it if absent.
  int insert(const TileKey& k, TileKind kind = TileKind::leaf);
  bool erase(const TileKey& k);
  void clear();

  int size() const { return static_cast<int>(keys_.size()); }
  bool empty() const { return keys_.empty(); }
  const TileKey& key(int slot) const { return keys_[static_cast<std::size_t>(slot)]; }
  TileMeta& meta(int slot) { return meta_[static_cast<std::size_t>(slot)]; }
  const TileMeta& meta(int slot) const { return meta_[static_cast<std::size_t>(slot)]; }
  const std::vector<TileKey>& keys() const { return keys_; }

 private:
  static constexpr int kEmpty = -1;
  static constexpr int kTomb = -2;

  std::size_t probe_find(const TileKey& k) const;
  void rehash(std::size_t capacity);

  std::vector<TileKey> keys_;
  std::vector<TileMeta> meta_;
  std::vector<int> buckets_;
  std::size_t tombstones_ = 0;
};

/// Finest-resolution extents, periodicity and hierarchy depth.
struct GridDomain {
  Index2 extent{64, 64};
  std::array<bool, 2> periodic{true, true};
  int levels = 1;

  int nodes(int level, int axis) const { return extent[axis] >> level; }
  int tiles(int level, int axis) const { return nodes(level, axis) / kTileSize; }
  /// Wraps periodic axes; nullopt when outside a non-periodic axis.
  std::optional<TileKey> canonical(TileKey k) const;
  std::optional<Index2> canonical_node(int level, Index2 n) const;
  /// Throws ConfigError unless extents are multiples of the top-level tile.
  void validate() const;
};

enum class CellRole : std::uint8_t {
  active,    ///< streamed and collided
  downward,  ///< filled from the next coarser level
  upward,    ///< filled from the next finer level
  solid,
  outlet,
  inlet,
};

/// Cells of level l filled from level l+1 by bilinear interpolation.
struct DownwardEntry {
  int cell = 0;
  std::array<int, 4> src{};
  std::array<double, 4> weight{};
};

/// Cells of level l+1 filled from level l.
struct UpwardEntry {
  int cell = 0;
  std::array<int, 4> src{};
  int count = 1;
};

struct InterfaceSets {
  std::vector<std::vector<DownwardEntry>> down;  // down[l]: I^d_l
  std::vector<std::vector<UpwardEntry>> up;      // up[l]: I^u_l (l >= 1)
};

/// Sentinels in the streaming source table.
inline constexpr int kSrcBounce = -1;
inline constexpr int kSrcMissing = -2;

struct LevelTopology {
  TileTable tiles;
  std::vector<std::array<int, 9>> neighbor_slots;  // (dy+1)*3 + (dx+1); -1 absent, -2 outside
  std::vector<CellRole> roles;
  std::vector<int> stream_src;  // 9 entries per cell

  int cells() const { return tiles.size() * kTileCells; }
};

/// The multi-level tile hierarchy.
class GridTopology {
 public:
  GridTopology() = default;
  explicit GridTopology(GridDomain domain);

  const GridDomain& domain() const { return domain_; }
  int levels() const { return domain_.levels; }
  LevelTopology& level(int l) { return levels_[static_cast<std::size_t>(l)]; }
  const LevelTopology& level(int l) const { return levels_[static_cast<std::size_t>(l)]; }
  TileTable& tiles(int l) { return level(l).tiles; }
  const TileTable& tiles(int l) const { return level(l).tiles; }

  /// Slot of the tile containing `node` at `level`, or -1.
  int find_tile(int level, Index2 node) const;
  /// Cell index (slot * 16 + local) of `node`, or -1.
  int find_cell(int level, Index2 node) const;
  Index2 node_of(int level, int cell) const;
  /// Node position in finest-level units.
  std::array<double, 2> position(int level, int cell) const;

  bool has_children(const TileKey& k) const;
  bool has_parent(const TileKey& k) const;
  /// True if some finer level stores the point of `node` (level-l units).
  bool covered_finer(int l, Index2 node) const;
  /// True if the whole region of `k` is stored at finer levels.
  bool tile_covered_finer(const TileKey& k) const;

  /// Recomputes tile kinds, neighbour slots, cell roles, streaming sources
  /// and interface sets. Throws TopologyError on a malformed hierarchy.
  void finalize(const BoundarySpec& bc);
  const InterfaceSets& interfaces() const { return interfaces_; }

  /// Fills every level-(L-1) tile of the domain.
  void fill_coarsest();
  /// Sorted (key, kind) pairs of all stored tiles.
  std::vector<std::pair<TileKey, TileKind>> snapshot() const;
  /// One line per tile: `level cx cy kind`, sorted.
  std::string dump() const;

  std::size_t total_tiles() const;
  std::size_t total_cells() const;

 private:
  void classify_kinds();
  void build_neighbors(int l);
  void build_roles(int l, const BoundarySpec& bc);
  void build_stream_sources(int l, const BoundarySpec& bc);

  GridDomain domain_{};
  std::vector<LevelTopology> levels_;
  InterfaceSets interfaces_;
};

/// Builds I^d / I^u for an already finalized hierarchy.
InterfaceSets classify_interfaces(const GridTopology& topo);

/// Structural invariants: coverage, two-tile overlap, complete sibling
/// groups, leaf/border consistency. Empty when valid.
std::vector<std::string> check_topology(const GridTopology& topo);

// ---------------------------------------------------------------------------
// Field storage

enum Comp : int { kRho = 0, kUx, kUy, kSxx, kSxy, kSyy, kEps, kFx, kFy, kPhi, kNumComp };
inline constexpr int kMomentComps = 6;

struct FieldLevel {
  std::array<std::vector<double>, kNumComp> comp;
  int cells = 0;

  double& operator()(Comp c, int cell) { return comp[c][static_cast<std::size_t>(cell)]; }
  double operator()(Comp c, int cell) const { return comp[c][static_cast<std::size_t>(cell)]; }
};

/// Per-level structure-of-arrays field storage for one copy of the state.
class FieldTree {
 public:
  /// Sizes every array to tile_count * 16; coupling arrays on level 0 only.
  void resize(const GridTopology& topo, bool coupling);
  FieldLevel& level(int l) { return levels_[static_cast<std::size_t>(l)]; }
  const FieldLevel& level(int l) const { return levels_[static_cast<std::size_t>(l)]; }
  int levels() const { return static_cast<int>(levels_.size()); }
  bool coupling() const { return coupling_; }
  std::size_t bytes() const;
  /// Number of times a resize had to grow an array's capacity.
  std::size_t allocation_events() const { return alloc_events_; }

 private:
  std::vector<FieldLevel> levels_;
  bool coupling_ = false;
  std::size_t alloc_events_ = 0;
};

struct BufferRoles {
  int read = 0;   // 0 = tree A, 1 = tree B
  int write = 1;
};

/// Even levels read A / write B at even bounce, odd levels the reverse;
/// roles swap with every bounce.
constexpr BufferRoles buffer_roles(int level, long bounce) {
  const bool a_is_current = ((level + bounce) % 2) == 0;
  return a_is_current ? BufferRoles{0, 1} : BufferRoles{1, 0};
}

/// Two field trees with identical topology and a per-level bounce counter.
struct PingPongPair {
  std::array<FieldTree, 2> tree;
  std::vector<long> bounce;

  void resize(const GridTopology& topo, bool coupling);
  FieldLevel& read(int l) { return tree[buffer_roles(l, bounce[l]).read].level(l); }
  FieldLevel& write(int l) { return tree[buffer_roles(l, bounce[l]).write].level(l); }
  const FieldLevel& read(int l) const { return tree[buffer_roles(l, bounce[l]).read].level(l); }
  const FieldLevel& write(int l) const { return tree[buffer_roles(l, bounce[l]).write].level(l); }
  std::size_t bytes() const { return tree[0].bytes() + tree[1].bytes(); }
};

}  // namespace glbm
