#include "glbm/adapt.hpp"

#include <algorithm>
#include <cmath>

#include "glbm/errors.hpp"

namespace glbm {

namespace {

TileKey tile_of(int level, const Vec2& x) {
  const double span = kTileSize * std::ldexp(1.0, level);
  return {level, {static_cast<int>(std::floor(x[0] / span)), static_cast<int>(std::floor(x[1] / span))}};
}

bool mask_hits(const Box& b, const TileKey& k) {
  const double span = kTileSize * std::ldexp(1.0, k.level);
  const double cell = std::ldexp(1.0, k.level);
  Box r;
  r.lo = {k.coords[0] * span, k.coords[1] * span};
  r.hi = {r.lo[0] + span - cell, r.lo[1] + span - cell};
  return b.intersects(r);
}

// Dense tile bitmap of one level.
struct Bitmap {
  int nx = 0, ny = 0;
  std::vector<char> bits;

  Bitmap(const GridDomain& dom, int l) : nx(dom.tiles(l, 0)), ny(dom.tiles(l, 1)), bits(static_cast<std::size_t>(nx * ny), 0) {}
  char& at(const Index2& c) { return bits[static_cast<std::size_t>(c[1] * nx + c[0])]; }
  bool get(const Index2& c) const { return bits[static_cast<std::size_t>(c[1] * nx + c[0])] != 0; }
};

Bitmap dilate(const GridDomain& dom, int l, const Bitmap& in) {
  Bitmap out(dom, l);
  for (int y = 0; y < in.ny; ++y)
    for (int x = 0; x < in.nx; ++x) {
      if (!in.get({x, y})) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (const auto k = dom.canonical({l, {x + dx, y + dy}})) out.at(k->coords) = 1;
    }
  return out;
}

Bitmap parents_of(const GridDomain& dom, int l, const Bitmap& in) {
  Bitmap out(dom, l + 1);
  for (int y = 0; y < in.ny; ++y)
    for (int x = 0; x < in.nx; ++x)
      if (in.get({x, y})) out.at({x / 2, y / 2}) = 1;
  return out;
}

}  // namespace

int target_level(const GridDomain& dom, const RefineDriver& driver, const TileKey& tile) {
  for (const auto& p : driver.particles) {
    const auto k = dom.canonical(tile_of(tile.level, p));
    if (k && *k == tile) return 0;
  }
  for (const auto& b : driver.refine_mask)
    if (mask_hits(b, tile)) return 0;
  return dom.levels - 1;
}

std::vector<TileKey> requested_tiles(const GridDomain& dom, const RefineDriver& driver) {
  std::vector<TileKey> out;
  for (const auto& p : driver.particles)
    if (const auto k = dom.canonical(tile_of(0, p))) out.push_back(*k);
  for (const auto& b : driver.refine_mask) {
    const int x0 = std::max(0, static_cast<int>(std::ceil((b.lo[0] - 3.0) / kTileSize)));
    const int y0 = std::max(0, static_cast<int>(std::ceil((b.lo[1] - 3.0) / kTileSize)));
    const int x1 = std::min(dom.tiles(0, 0) - 1, static_cast<int>(std::floor(b.hi[0] / kTileSize)));
    const int y1 = std::min(dom.tiles(0, 1) - 1, static_cast<int>(std::floor(b.hi[1] / kTileSize)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) out.push_back({0, {x, y}});
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

GridTopology brute_force_grid(const GridDomain& dom, const RefineDriver& driver, const BoundarySpec& bc) {
  const int L = dom.levels;
  GridTopology topo(dom);
  if (L == 1) {
    topo.fill_coarsest();
    topo.finalize(bc);
    return topo;
  }
  // refined[l]: level-l positions replaced by finer tiles.
  std::vector<Bitmap> refined;
  for (int l = 0; l < L; ++l) refined.emplace_back(dom, l);
  Bitmap q(dom, 0);
  for (const auto& k : requested_tiles(dom, driver)) q.at(k.coords) = 1;
  refined[1] = parents_of(dom, 0, q);
  for (int l = 1; l + 1 < L; ++l) refined[static_cast<std::size_t>(l) + 1] = parents_of(dom, l, dilate(dom, l, refined[static_cast<std::size_t>(l)]));

  for (int l = 0; l < L; ++l) {
    const Bitmap& own = refined[static_cast<std::size_t>(l)];
    if (l == L - 1) {
      for (int y = 0; y < own.ny; ++y)
        for (int x = 0; x < own.nx; ++x)
          if (!own.get({x, y})) topo.tiles(l).insert({l, {x, y}});
      continue;
    }
    const Bitmap need = dilate(dom, l + 1, refined[static_cast<std::size_t>(l) + 1]);
    for (int y = 0; y < own.ny; ++y)
      for (int x = 0; x < own.nx; ++x)
        if (need.get({x / 2, y / 2}) && !own.get({x, y})) topo.tiles(l).insert({l, {x, y}});
  }
  topo.finalize(bc);
  return topo;
}

// ---------------------------------------------------------------------------

Moments<Lat> resolve_moments(const GridTopology& topo, const PingPongPair& fields, const SolverParams& sp,
                             const std::vector<LevelParams>& lp, int l, Index2 node) {
  const auto& dom = topo.domain();
  const auto cn = dom.canonical_node(l, node);
  if (!cn) throw TopologyError("resolve outside the domain");
  if (const int c = topo.find_cell(l, *cn); c >= 0) return load(fields.read(l), c);
  for (int m = l - 1; m >= 0; --m) {
    const int f = 1 << (l - m);
    const int c = topo.find_cell(m, {(*cn)[0] * f, (*cn)[1] * f});
    if (c < 0) continue;
    Moments<Lat> r = load(fields.read(m), c);
    for (int k = m; k < l; ++k)
      r.S = rescale_S_up(r.S, r.u, lp[static_cast<std::size_t>(k)].tau, lp[static_cast<std::size_t>(k) + 1].tau, sp.rescale);
    return r;
  }
  if (l + 1 >= topo.levels()) throw TopologyError("no data to resolve a new cell");
  std::array<std::array<double, 2>, 2> w{};
  const Index2 base{floor_div((*cn)[0], 2), floor_div((*cn)[1], 2)};
  for (int a = 0; a < 2; ++a) {
    const bool odd = ((*cn)[a] & 1) != 0;
    const bool edge = !dom.periodic[a] && base[a] + 1 >= dom.nodes(l + 1, a);
    w[a] = (odd && !edge) ? std::array<double, 2>{0.5, 0.5} : std::array<double, 2>{1.0, 0.0};
  }
  Moments<Lat> out;
  out.rho = 0.0;
  for (int oy = 0; oy < 2; ++oy)
    for (int ox = 0; ox < 2; ++ox) {
      const double wt = w[0][ox] * w[1][oy];
      if (wt == 0.0) continue;
      const Moments<Lat> s = resolve_moments(topo, fields, sp, lp, l + 1, {base[0] + ox, base[1] + oy});
      out.rho += wt * s.rho;
      for (int a = 0; a < 2; ++a) out.u[a] += wt * s.u[a];
      for (int c = 0; c < 3; ++c) out.S[c] += wt * s.S[c];
    }
  out.S = rescale_S_down(out.S, out.u, lp[static_cast<std::size_t>(l)].tau, lp[static_cast<std::size_t>(l) + 1].tau, sp.rescale);
  return out;
}

std::vector<std::string> check_adapted(const GridTopology& topo, const RefineDriver& driver) {
  auto errors = check_topology(topo);
  const auto& dom = topo.domain();
  for (const auto& p : driver.particles) {
    const auto k = dom.canonical(tile_of(0, p));
    if (!k || !topo.tiles(0).contains(*k))
      errors.push_back("particle at (" + std::to_string(p[0]) + "," + std::to_string(p[1]) +
                       ") is not in a level-0 tile");
  }
  return errors;
}

AdaptReport GridAdapter::update(MultiLevelSolver& solver, const RefineDriver& driver) {
  return apply(solver.topology(), solver.boundaries(), driver, &solver);
}

AdaptReport GridAdapter::update(GridTopology& topo, const BoundarySpec& bc, const RefineDriver& driver) {
  return apply(topo, bc, driver, nullptr);
}

AdaptReport GridAdapter::apply(GridTopology& topo, const BoundarySpec& bc, const RefineDriver& driver,
                               MultiLevelSolver* solver) {
  const auto& dom = topo.domain();
  const int L = dom.levels;
  AdaptReport rep;
  rep.created.assign(static_cast<std::size_t>(L), 0);
  rep.removed.assign(static_cast<std::size_t>(L), 0);
  if (L == 1) return rep;

  const std::vector<TileKey> now = requested_tiles(dom, driver);
  std::vector<TileKey> req = now;
  if (hysteresis_) {
    req.insert(req.end(), prev_.begin(), prev_.end());
    std::sort(req.begin(), req.end());
    req.erase(std::unique(req.begin(), req.end()), req.end());
  }
  prev_ = now;

  // Flags: del[l] tiles are replaced by their children; ref[l] tiles (del plus
  // their neighbours) need children; a refined tile's parent is deleted.
  std::vector<TileTable> del(static_cast<std::size_t>(L)), ref(static_cast<std::size_t>(L));
  for (const auto& k : req) del[1].insert(parent(k, L));
  for (int l = 1; l < L; ++l) {
    auto& d = del[static_cast<std::size_t>(l)];
    auto& r = ref[static_cast<std::size_t>(l)];
    for (const auto& k : d.keys()) {
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (const auto n = dom.canonical({l, {k.coords[0] + dx, k.coords[1] + dy}})) r.insert(*n);
    }
    if (l + 1 < L)
      for (const auto& k : r.keys()) del[static_cast<std::size_t>(l) + 1].insert(parent(k, L));
  }

  auto wanted = [&](const TileKey& k) {
    const int l = k.level;
    if (l > 0 && del[static_cast<std::size_t>(l)].contains(k)) return false;
    if (l == L - 1) return true;
    return ref[static_cast<std::size_t>(l) + 1].contains(parent(k, L));
  };

  std::vector<std::vector<TileKey>> add(static_cast<std::size_t>(L)), drop(static_cast<std::size_t>(L));
  bool any = false;
  for (int l = 0; l < L; ++l) {
    auto& t = topo.tiles(l);
    for (int s = 0; s < t.size(); ++s) {
      const TileKey& k = t.key(s);
      if (wanted(k)) {
        t.meta(s).flag = AdaptFlag::none;
      } else {
        t.meta(s).flag = (l > 0 && del[static_cast<std::size_t>(l)].contains(k)) ? AdaptFlag::remove : AdaptFlag::coarsen;
        drop[static_cast<std::size_t>(l)].push_back(k);
        any = true;
      }
    }
    if (l == L - 1) {
      for (int y = 0; y < dom.tiles(l, 1); ++y)
        for (int x = 0; x < dom.tiles(l, 0); ++x) {
          const TileKey k{l, {x, y}};
          if (!t.contains(k) && wanted(k)) add[static_cast<std::size_t>(l)].push_back(k);
        }
    } else {
      for (const auto& pk : ref[static_cast<std::size_t>(l) + 1].keys())
        for (const auto& k : children(pk))
          if (!t.contains(k) && wanted(k)) add[static_cast<std::size_t>(l)].push_back(k);
    }
    any = any || !add[static_cast<std::size_t>(l)].empty();
  }
  if (!any) return rep;

  rep.changed = true;
  GridTopology old;
  PingPongPair old_fields;
  if (solver) {
    old = topo;
    old_fields = solver->buffers();
  }
  for (int l = 0; l < L; ++l) {
    auto& a = add[static_cast<std::size_t>(l)];
    std::sort(a.begin(), a.end());
    for (const auto& k : drop[static_cast<std::size_t>(l)]) topo.tiles(l).erase(k);
    for (const auto& k : a) topo.tiles(l).insert(k);
    rep.created[static_cast<std::size_t>(l)] = static_cast<int>(a.size());
    rep.removed[static_cast<std::size_t>(l)] = static_cast<int>(drop[static_cast<std::size_t>(l)].size());
  }
  try {
    topo.finalize(bc);
  } catch (const TopologyError& e) {
    rep.violations.emplace_back(e.what());
    return rep;
  }
  if (!solver) return rep;

  solver->topology_changed();
  PingPongPair& pp = solver->buffers();
  const auto& sp = solver->params();
  const auto& lp = solver->level_params();
  for (int l = 0; l < L; ++l) {
    const auto& t = topo.tiles(l);
    for (int s = 0; s < t.size(); ++s) {
      const int os = old.tiles(l).find(t.key(s));
      for (int i = 0; i < kTileCells; ++i) {
        const int cell = s * kTileCells + i;
        if (os >= 0) {
          const int oc = os * kTileCells + i;
          for (int tr = 0; tr < 2; ++tr) {
            auto& dst = pp.tree[static_cast<std::size_t>(tr)].level(l);
            const auto& src = old_fields.tree[static_cast<std::size_t>(tr)].level(l);
            for (int c = 0; c < kNumComp; ++c)
              if (!dst.comp[static_cast<std::size_t>(c)].empty())
                dst.comp[static_cast<std::size_t>(c)][static_cast<std::size_t>(cell)] =
                    src.comp[static_cast<std::size_t>(c)][static_cast<std::size_t>(oc)];
          }
          continue;
        }
        const Moments<Lat> m = resolve_moments(old, old_fields, sp, lp, l, topo.node_of(l, cell));
        for (int tr = 0; tr < 2; ++tr) {
          auto& dst = pp.tree[static_cast<std::size_t>(tr)].level(l);
          store(dst, cell, m);
          if (!dst.comp[kEps].empty()) {
            dst(kEps, cell) = 1.0;
            dst(kFx, cell) = 0.0;
            dst(kFy, cell) = 0.0;
            dst(kPhi, cell) = 0.0;
          }
        }
      }
    }
  }
  return rep;
}

}  // namespace glbm
