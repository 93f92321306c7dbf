#include "glbm/sparse_grid.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>

#include "glbm/errors.hpp"
#include "glbm/lattice.hpp"

namespace glbm {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string key_str(const TileKey& k) {
  return "(" + std::to_string(k.level) + ",(" + std::to_string(k.coords[0]) + "," +
         std::to_string(k.coords[1]) + "))";
}

}  // namespace

std::uint64_t hash_key(const TileKey& k) {
  const auto x = static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.coords[0]));
  const auto y = static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.coords[1]));
  const auto l = static_cast<std::uint64_t>(k.level);
  return splitmix64((l << 56) ^ (x << 28) ^ y ^ (x >> 36));
}

TileKey parent(const TileKey& k, int levels) {
  if (k.level + 1 >= levels) throw DomainError("parent of a top-level tile " + key_str(k));
  return {k.level + 1, {floor_div(k.coords[0], 2), floor_div(k.coords[1], 2)}};
}

std::array<TileKey, 4> children(const TileKey& k) {
  if (k.level == 0) throw DomainError("children of a level-0 tile " + key_str(k));
  std::array<TileKey, 4> out{};
  int n = 0;
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx)
      out[n++] = {k.level - 1, {2 * k.coords[0] + dx, 2 * k.coords[1] + dy}};
  return out;
}

std::array<TileKey, 3> siblings(const TileKey& k, int levels) {
  const auto all = children(parent(k, levels));
  std::array<TileKey, 3> out{};
  int n = 0;
  for (const auto& c : all)
    if (c != k) out[n++] = c;
  return out;
}

std::array<TileKey, 8> neighbors(const TileKey& k) {
  std::array<TileKey, 8> out{};
  int n = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      if (dx != 0 || dy != 0) out[n++] = {k.level, {k.coords[0] + dx, k.coords[1] + dy}};
  return out;
}

// ---------------------------------------------------------------------------
// TileTable

std::size_t TileTable::probe_find(const TileKey& k) const {
  const std::size_t mask = buckets_.size() - 1;
  std::size_t b = hash_key(k) & mask;
  while (true) {
    const int s = buckets_[b];
    if (s == kEmpty) return buckets_.size();
    if (s >= 0 && keys_[static_cast<std::size_t>(s)] == k) return b;
    b = (b + 1) & mask;
  }
}

int TileTable::find(const TileKey& k) const {
  if (buckets_.empty()) return -1;
  const std::size_t b = probe_find(k);
  return b == buckets_.size() ? -1 : buckets_[b];
}

void TileTable::rehash(std::size_t capacity) {
  buckets_.assign(capacity, kEmpty);
  tombstones_ = 0;
  const std::size_t mask = capacity - 1;
  for (std::size_t s = 0; s < keys_.size(); ++s) {
    std::size_t b = hash_key(keys_[s]) & mask;
    while (buckets_[b] != kEmpty) b = (b + 1) & mask;
    buckets_[b] = static_cast<int>(s);
  }
}

int TileTable::insert(const TileKey& k, TileKind kind) {
  if (const int s = find(k); s >= 0) return s;
  if ((keys_.size() + tombstones_ + 1) * 2 > buckets_.size()) {
    std::size_t cap = std::max<std::size_t>(16, buckets_.size());
    while ((keys_.size() + 1) * 4 > cap) cap *= 2;
    rehash(cap);
  }
  const std::size_t mask = buckets_.size() - 1;
  std::size_t b = hash_key(k) & mask;
  while (buckets_[b] >= 0) b = (b + 1) & mask;
  if (buckets_[b] == kTomb) --tombstones_;
  const int slot = static_cast<int>(keys_.size());
  buckets_[b] = slot;
  keys_.push_back(k);
  meta_.push_back({kind, AdaptFlag::none, slot});
  return slot;
}

bool TileTable::erase(const TileKey& k) {
  if (buckets_.empty()) return false;
  const std::size_t b = probe_find(k);
  if (b == buckets_.size()) return false;
  const int slot = buckets_[b];
  const int last = static_cast<int>(keys_.size()) - 1;
  if (slot != last) {
    const std::size_t lb = probe_find(keys_[static_cast<std::size_t>(last)]);
    buckets_[lb] = slot;
    keys_[static_cast<std::size_t>(slot)] = keys_[static_cast<std::size_t>(last)];
    meta_[static_cast<std::size_t>(slot)] = meta_[static_cast<std::size_t>(last)];
    meta_[static_cast<std::size_t>(slot)].slot = slot;
  }
  keys_.pop_back();
  meta_.pop_back();
  buckets_[b] = kTomb;
  ++tombstones_;
  return true;
}

void TileTable::clear() {
  keys_.clear();
  meta_.clear();
  std::fill(buckets_.begin(), buckets_.end(), kEmpty);
  tombstones_ = 0;
}

// ---------------------------------------------------------------------------
// GridDomain

std::optional<TileKey> GridDomain::canonical(TileKey k) const {
  if (k.level < 0 || k.level >= levels) return std::nullopt;
  for (int a = 0; a < 2; ++a) {
    const int n = tiles(k.level, a);
    if (periodic[a]) {
      k.coords[a] = floor_mod(k.coords[a], n);
    } else if (k.coords[a] < 0 || k.coords[a] >= n) {
      return std::nullopt;
    }
  }
  return k;
}

std::optional<Index2> GridDomain::canonical_node(int level, Index2 n) const {
  for (int a = 0; a < 2; ++a) {
    const int count = nodes(level, a);
    if (periodic[a]) {
      n[a] = floor_mod(n[a], count);
    } else if (n[a] < 0 || n[a] >= count) {
      return std::nullopt;
    }
  }
  return n;
}

void GridDomain::validate() const {
  if (levels < 1) throw ConfigError("levels must be >= 1");
  const int top = kTileSize << (levels - 1);
  for (int a = 0; a < 2; ++a) {
    if (extent[a] <= 0 || extent[a] % top != 0)
      throw ConfigError("domain extent " + std::to_string(extent[a]) +
                        " must be a positive multiple of " + std::to_string(top));
  }
}

// ---------------------------------------------------------------------------
// GridTopology

GridTopology::GridTopology(GridDomain domain) : domain_(domain) {
  domain_.validate();
  levels_.resize(static_cast<std::size_t>(domain_.levels));
}

int GridTopology::find_tile(int level, Index2 node) const {
  const auto n = domain_.canonical_node(level, node);
  if (!n) return -1;
  return tiles(level).find({level, {floor_div((*n)[0], kTileSize), floor_div((*n)[1], kTileSize)}});
}

int GridTopology::find_cell(int level, Index2 node) const {
  const auto n = domain_.canonical_node(level, node);
  if (!n) return -1;
  const int slot =
      tiles(level).find({level, {floor_div((*n)[0], kTileSize), floor_div((*n)[1], kTileSize)}});
  if (slot < 0) return -1;
  return slot * kTileCells + floor_mod((*n)[1], kTileSize) * kTileSize +
         floor_mod((*n)[0], kTileSize);
}

Index2 GridTopology::node_of(int level, int cell) const {
  const TileKey& k = tiles(level).key(cell / kTileCells);
  const int local = cell % kTileCells;
  return {k.coords[0] * kTileSize + local % kTileSize, k.coords[1] * kTileSize + local / kTileSize};
}

std::array<double, 2> GridTopology::position(int level, int cell) const {
  const Index2 n = node_of(level, cell);
  const double h = static_cast<double>(1 << level);
  return {n[0] * h, n[1] * h};
}

bool GridTopology::has_children(const TileKey& k) const {
  if (k.level == 0) return false;
  for (const auto& c : children(k))
    if (tiles(c.level).contains(c)) return true;
  return false;
}

bool GridTopology::covered_finer(int l, Index2 node) const {
  for (int m = l - 1; m >= 0; --m) {
    const int f = 1 << (l - m);
    const Index2 fn{node[0] * f, node[1] * f};
    if (tiles(m).contains({m, {floor_div(fn[0], kTileSize), floor_div(fn[1], kTileSize)}})) return true;
  }
  return false;
}

bool GridTopology::tile_covered_finer(const TileKey& k) const {
  if (k.level == 0) return false;
  for (const auto& c : children(k))
    if (!tiles(c.level).contains(c) && !tile_covered_finer(c)) return false;
  return true;
}

bool GridTopology::has_parent(const TileKey& k) const {
  if (k.level + 1 >= levels()) return false;
  return tiles(k.level + 1).contains(parent(k, levels()));
}

void GridTopology::fill_coarsest() {
  const int top = levels() - 1;
  for (int y = 0; y < domain_.tiles(top, 1); ++y)
    for (int x = 0; x < domain_.tiles(top, 0); ++x) tiles(top).insert({top, {x, y}});
}

void GridTopology::classify_kinds() {
  for (int l = 0; l < levels(); ++l) {
    auto& t = tiles(l);
    for (int s = 0; s < t.size(); ++s) {
      const TileKey& k = t.key(s);
      t.meta(s).kind = (has_parent(k) || has_children(k)) ? TileKind::border : TileKind::leaf;
    }
  }
}

void GridTopology::build_neighbors(int l) {
  auto& lv = level(l);
  lv.neighbor_slots.assign(static_cast<std::size_t>(lv.tiles.size()), {});
  for (int s = 0; s < lv.tiles.size(); ++s) {
    const TileKey k = lv.tiles.key(s);
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const auto nk = domain_.canonical({l, {k.coords[0] + dx, k.coords[1] + dy}});
        lv.neighbor_slots[static_cast<std::size_t>(s)][(dy + 1) * 3 + (dx + 1)] =
            nk ? lv.tiles.find(*nk) : -2;
      }
    }
  }
}

void GridTopology::build_roles(int l, const BoundarySpec& bc) {
  auto& lv = level(l);
  lv.roles.assign(static_cast<std::size_t>(lv.cells()), CellRole::active);
  const Index2 nodes{domain_.nodes(l, 0), domain_.nodes(l, 1)};
  const double h = static_cast<double>(1 << l);

  // Coverage of the 8x8 node window around a tile (local -2..5): 0 present,
  // 1 outside, 2 covered by a finer level, 3 covered by a coarser level.
  std::array<std::array<int, 8>, 8> cov{};
  auto fill_window = [&](int s) {
    const auto& nb = lv.neighbor_slots[static_cast<std::size_t>(s)];
    const Index2 base = node_of(l, s * kTileCells);
    for (int y = -2; y < 6; ++y)
      for (int x = -2; x < 6; ++x) {
        const int tx = x < 0 ? -1 : (x >= kTileSize ? 1 : 0);
        const int ty = y < 0 ? -1 : (y >= kTileSize ? 1 : 0);
        const int ns = nb[static_cast<std::size_t>((ty + 1) * 3 + (tx + 1))];
        int c = 0;
        if (ns == -2) {
          c = 1;
        } else if (ns == -1) {
          const auto n = domain_.canonical_node(l, {base[0] + x, base[1] + y});
          c = !n ? 1 : (covered_finer(l, *n) ? 2 : 3);
        }
        cov[static_cast<std::size_t>(y + 2)][static_cast<std::size_t>(x + 2)] = c;
      }
  };

  for (int s = 0; s < lv.tiles.size(); ++s) {
    const auto& nb = lv.neighbor_slots[static_cast<std::size_t>(s)];
    const bool interior_tile =
        std::all_of(nb.begin(), nb.end(), [](int v) { return v != -1; });
    if (!interior_tile) fill_window(s);
    for (int local = 0; local < kTileCells; ++local) {
      const int cell = s * kTileCells + local;
      const Index2 n = node_of(l, cell);
      CellRole role = CellRole::active;
      if (bc.solid_at(n[0] * h, n[1] * h)) {
        role = CellRole::solid;
      } else {
        bool inlet = false, outlet = false;
        for (int a = 0; a < 2; ++a) {
          if (domain_.periodic[a]) continue;
          const FaceSpec* f = nullptr;
          if (n[a] == 0) f = &bc.faces[2 * a];
          if (n[a] == nodes[a] - 1) f = (f && f->kind == FaceKind::inlet) ? f : &bc.faces[2 * a + 1];
          if (!f) continue;
          inlet = inlet || f->kind == FaceKind::inlet;
          outlet = outlet || f->kind == FaceKind::outlet;
        }
        if (inlet) {
          role = CellRole::inlet;
        } else if (outlet) {
          role = CellRole::outlet;
        } else if (!interior_tile) {
          bool coarser = false, finer = false;
          for (int dy = -2; dy <= 2; ++dy) {
            for (int dx = -2; dx <= 2; ++dx) {
              if (dx == 0 && dy == 0) continue;
              const int c = cov[static_cast<std::size_t>(local / kTileSize + dy + 2)]
                               [static_cast<std::size_t>(local % kTileSize + dx + 2)];
              if (c == 3) coarser = true;
              if (c == 2 && std::abs(dx) <= 1 && std::abs(dy) <= 1) finer = true;
            }
          }
          if (coarser && finer) {
            throw TopologyError("level " + std::to_string(l) + " node (" + std::to_string(n[0]) +
                                "," + std::to_string(n[1]) +
                                ") borders both a coarser and a finer level");
          }
          if (coarser) role = CellRole::downward;
          if (finer) role = CellRole::upward;
        }
      }
      lv.roles[static_cast<std::size_t>(cell)] = role;
    }
  }
}

void GridTopology::build_stream_sources(int l, const BoundarySpec& bc) {
  (void)bc;
  auto& lv = level(l);
  lv.stream_src.assign(static_cast<std::size_t>(lv.cells()) * 9, kSrcMissing);
  for (int s = 0; s < lv.tiles.size(); ++s) {
    const auto& nb = lv.neighbor_slots[static_cast<std::size_t>(s)];
    for (int local = 0; local < kTileCells; ++local) {
      const int cx = local % kTileSize, cy = local / kTileSize;
      const int cell = s * kTileCells + local;
      for (int i = 0; i < 9; ++i) {
        int sx = cx - D2Q9::c[static_cast<std::size_t>(i)][0], sy = cy - D2Q9::c[static_cast<std::size_t>(i)][1];
        const int tx = sx < 0 ? -1 : (sx >= kTileSize ? 1 : 0);
        const int ty = sy < 0 ? -1 : (sy >= kTileSize ? 1 : 0);
        const int ns = nb[(ty + 1) * 3 + (tx + 1)];
        int src;
        if (ns == -2) {
          src = kSrcBounce;
        } else if (ns == -1) {
          src = kSrcMissing;
        } else {
          sx -= tx * kTileSize;
          sy -= ty * kTileSize;
          src = ns * kTileCells + sy * kTileSize + sx;
          if (lv.roles[static_cast<std::size_t>(src)] == CellRole::solid) src = kSrcBounce;
        }
        lv.stream_src[static_cast<std::size_t>(cell) * 9 + static_cast<std::size_t>(i)] = src;
      }
    }
  }
}

void GridTopology::finalize(const BoundarySpec& bc) {
  classify_kinds();
  for (int l = 0; l < levels(); ++l) build_neighbors(l);
  for (int l = 0; l < levels(); ++l) build_roles(l, bc);
  for (int l = 0; l < levels(); ++l) build_stream_sources(l, bc);
  interfaces_ = classify_interfaces(*this);
}

std::vector<std::pair<TileKey, TileKind>> GridTopology::snapshot() const {
  std::vector<std::pair<TileKey, TileKind>> out;
  for (int l = 0; l < levels(); ++l) {
    const auto& t = tiles(l);
    for (int s = 0; s < t.size(); ++s) out.emplace_back(t.key(s), t.meta(s).kind);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string GridTopology::dump() const {
  std::ostringstream os;
  for (const auto& [k, kind] : snapshot())
    os << k.level << ' ' << k.coords[0] << ' ' << k.coords[1] << ' '
       << (kind == TileKind::leaf ? "leaf" : "border") << '\n';
  return os.str();
}

std::size_t GridTopology::total_tiles() const {
  std::size_t n = 0;
  for (int l = 0; l < levels(); ++l) n += static_cast<std::size_t>(tiles(l).size());
  return n;
}

std::size_t GridTopology::total_cells() const { return total_tiles() * kTileCells; }

// ---------------------------------------------------------------------------

InterfaceSets classify_interfaces(const GridTopology& topo) {
  const int L = topo.levels();
  InterfaceSets sets;
  sets.down.resize(static_cast<std::size_t>(L));
  sets.up.resize(static_cast<std::size_t>(L));
  const auto& dom = topo.domain();

  for (int l = 0; l < L; ++l) {
    const auto& lv = topo.level(l);
    for (int cell = 0; cell < lv.cells(); ++cell) {
      const CellRole role = lv.roles[static_cast<std::size_t>(cell)];
      const Index2 n = topo.node_of(l, cell);
      auto where = [&] {
        return "level " + std::to_string(l) + " node (" + std::to_string(n[0]) + "," +
               std::to_string(n[1]) + ")";
      };
      if (role == CellRole::downward) {
        if (l + 1 >= L) throw TopologyError(where() + " needs a coarser level that does not exist");
        const auto& coarse = topo.level(l + 1);
        DownwardEntry e;
        e.cell = cell;
        const Index2 base{floor_div(n[0], 2), floor_div(n[1], 2)};
        // Odd nodes sit midway between two coarse nodes; past a closed face the
        // nearer coarse node is used alone.
        std::array<std::array<double, 2>, 2> wa{};
        for (int a = 0; a < 2; ++a) {
          const bool odd = (n[a] & 1) != 0;
          const bool edge = !dom.periodic[a] && base[a] + 1 >= dom.nodes(l + 1, a);
          wa[a] = (odd && !edge) ? std::array<double, 2>{0.5, 0.5} : std::array<double, 2>{1.0, 0.0};
        }
        const auto& wx = wa[0];
        const auto& wy = wa[1];
        int k = 0;
        int base_cell = -1;
        for (int oy = 0; oy < 2; ++oy) {
          for (int ox = 0; ox < 2; ++ox, ++k) {
            const double w = wx[ox] * wy[oy];
            e.weight[k] = w;
            if (w == 0.0) {
              e.src[k] = base_cell;
              continue;
            }
            const auto cn = dom.canonical_node(l + 1, {base[0] + ox, base[1] + oy});
            const int src = cn ? topo.find_cell(l + 1, *cn) : -1;
            if (src < 0) throw TopologyError(where() + ": downward interface lacks a coarse source");
            const CellRole sr = coarse.roles[static_cast<std::size_t>(src)];
            if (sr == CellRole::downward || sr == CellRole::upward)
              throw TopologyError(where() + ": coarse source is itself an interface cell");
            if (k == 0) base_cell = src;
            e.src[k] = src;
          }
        }
        sets.down[static_cast<std::size_t>(l)].push_back(e);
      } else if (role == CellRole::upward) {
        if (l == 0) throw TopologyError(where() + " needs a finer level that does not exist");
        const auto& fine = topo.level(l - 1);
        UpwardEntry e;
        e.cell = cell;
        e.count = 0;
        for (int oy = 0; oy < 2; ++oy) {
          for (int ox = 0; ox < 2; ++ox) {
            const int src = topo.find_cell(l - 1, {2 * n[0] + ox, 2 * n[1] + oy});
            const bool valid = src >= 0 && fine.roles[static_cast<std::size_t>(src)] != CellRole::downward &&
                               fine.roles[static_cast<std::size_t>(src)] != CellRole::upward;
            if (ox == 0 && oy == 0 && !valid)
              throw TopologyError(where() + ": upward interface lacks its coincident fine node");
            if (valid) e.src[static_cast<std::size_t>(e.count++)] = src;
          }
        }
        sets.up[static_cast<std::size_t>(l)].push_back(e);
      }
    }
  }
  return sets;
}

std::vector<std::string> check_topology(const GridTopology& topo) {
  std::vector<std::string> errors;
  const auto& dom = topo.domain();
  const int L = topo.levels();

  // Coverage by tiles without stored children.
  const int nx = dom.extent[0], ny = dom.extent[1];
  std::vector<int> cover(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny), 0);
  for (int l = 0; l < L; ++l) {
    const auto& t = topo.tiles(l);
    const int span = kTileSize << l;
    for (int s = 0; s < t.size(); ++s) {
      const TileKey& k = t.key(s);
      if (dom.canonical(k) != k) {
        errors.push_back("tile " + key_str(k) + " outside the domain");
        continue;
      }
      if (topo.has_children(k)) continue;
      for (int y = k.coords[1] * span; y < (k.coords[1] + 1) * span; ++y)
        for (int x = k.coords[0] * span; x < (k.coords[0] + 1) * span; ++x)
          ++cover[static_cast<std::size_t>(y) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(x)];
    }
  }
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x)
      if (const int c = cover[static_cast<std::size_t>(y) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(x)]; c != 1) {
        errors.push_back("finest cell (" + std::to_string(x) + "," + std::to_string(y) +
                         ") covered " + std::to_string(c) + " times");
        if (errors.size() > 20) return errors;
      }

  for (int l = 0; l < L; ++l) {
    const auto& t = topo.tiles(l);
    for (int s = 0; s < t.size(); ++s) {
      const TileKey& k = t.key(s);
      const bool border = topo.has_parent(k) || topo.has_children(k);
      if (border != (t.meta(s).kind == TileKind::border))
        errors.push_back("tile " + key_str(k) + " has an inconsistent leaf/border kind");
      // Sibling groups are complete: each sibling is stored or refined.
      if (l + 1 < L) {
        for (const auto& sib : siblings(k, L))
          if (!topo.tiles(l).contains(sib) && !topo.tile_covered_finer(sib))
            errors.push_back("tile " + key_str(k) + " has an incomplete sibling group");
      }
      if (t.meta(s).kind != TileKind::leaf) continue;
      // Two-tile overlap: both neighbour rings live at this level (or finer).
      for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const auto nk = dom.canonical({l, {k.coords[0] + dx, k.coords[1] + dy}});
          if (!nk || topo.tiles(l).contains(*nk)) continue;
          if (!topo.tile_covered_finer(*nk))
            errors.push_back("leaf tile " + key_str(k) + " lacks same-level neighbour " + key_str(*nk));
        }
      }
    }
  }
  return errors;
}

// ---------------------------------------------------------------------------
// Field storage

void FieldTree::resize(const GridTopology& topo, bool coupling) {
  coupling_ = coupling;
  levels_.resize(static_cast<std::size_t>(topo.levels()));
  for (int l = 0; l < topo.levels(); ++l) {
    auto& fl = levels_[static_cast<std::size_t>(l)];
    fl.cells = topo.level(l).cells();
    for (int c = 0; c < kNumComp; ++c) {
      const bool needed = c < kMomentComps || (l == 0 && coupling);
      auto& v = fl.comp[static_cast<std::size_t>(c)];
      const std::size_t n = needed ? static_cast<std::size_t>(fl.cells) : 0;
      if (n > v.capacity()) ++alloc_events_;
      v.resize(n, c == kEps ? 1.0 : 0.0);
    }
  }
}

std::size_t FieldTree::bytes() const {
  std::size_t b = 0;
  for (const auto& fl : levels_)
    for (const auto& v : fl.comp) b += v.size() * sizeof(double);
  return b;
}

void PingPongPair::resize(const GridTopology& topo, bool coupling) {
  tree[0].resize(topo, coupling);
  tree[1].resize(topo, coupling);
  bounce.resize(static_cast<std::size_t>(topo.levels()), 0);
}

}  // namespace glbm
