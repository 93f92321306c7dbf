#include "glbm/granular.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>

#include "glbm/errors.hpp"
#include "glbm/parallel.hpp"

namespace glbm {

double SandParams::alpha() const {
  const double s = std::sin(friction_deg * std::numbers::pi / 180.0);
  return std::sqrt(2.0 / 3.0) * 2.0 * s / (3.0 - s);
}

void SandParams::validate() const {
  if (!(E > 0.0)) throw ConfigError("materials.E: must be positive");
  if (!(poisson > -1.0 && poisson < 0.5)) throw ConfigError("materials.poisson: must lie in (-1, 0.5)");
  if (!(friction_deg > 0.0 && friction_deg < 90.0))
    throw ConfigError("materials.friction_angle: must lie in (0, 90) degrees");
  if (!(floor_friction >= 0.0)) throw ConfigError("materials.floor_friction: must be >= 0");
}

Stencil quadratic_stencil(const Vec2d& x) {
  Stencil s;
  for (int a = 0; a < 2; ++a) {
    const double b = std::floor(x[a] - 0.5);
    const double fx = x[a] - b;
    s.base[static_cast<std::size_t>(a)] = static_cast<int>(b);
    auto& w = s.w[static_cast<std::size_t>(a)];
    w[0] = 0.5 * (1.5 - fx) * (1.5 - fx);
    w[1] = 0.75 - (fx - 1.0) * (fx - 1.0);
    w[2] = 0.5 * (fx - 0.5) * (fx - 0.5);
  }
  return s;
}

void MpmGrid::resize(const GridTopology& t) {
  topo = &t;
  const auto n = static_cast<std::size_t>(t.level(0).cells());
  mass.assign(n, 0.0);
  momentum.assign(n, Vec2d::Zero());
  velocity.assign(n, Vec2d::Zero());
  impulse.assign(n, Vec2d::Zero());
  volume.assign(n, 0.0);
  area.assign(n, 0.0);
  mass_vel.assign(n, Vec2d::Zero());
  stress.assign(n, {0.0, 0.0, 0.0});
}

void MpmGrid::clear() {
  std::fill(mass.begin(), mass.end(), 0.0);
  std::fill(momentum.begin(), momentum.end(), Vec2d::Zero());
  std::fill(velocity.begin(), velocity.end(), Vec2d::Zero());
  std::fill(impulse.begin(), impulse.end(), Vec2d::Zero());
  std::fill(volume.begin(), volume.end(), 0.0);
  std::fill(area.begin(), area.end(), 0.0);
  std::fill(mass_vel.begin(), mass_vel.end(), Vec2d::Zero());
  std::fill(stress.begin(), stress.end(), std::array<double, 3>{0.0, 0.0, 0.0});
}

namespace {

struct Svd2 {
  Mat2 U, V;
  Vec2d sig;
};

Svd2 svd2(const Mat2& F) {
  Eigen::JacobiSVD<Mat2> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Svd2 r{svd.matrixU(), svd.matrixV(), svd.singularValues()};
  if (r.U.determinant() < 0.0) {
    r.U.col(1) *= -1.0;
    r.sig[1] *= -1.0;
  }
  if (r.V.determinant() < 0.0) {
    r.V.col(1) *= -1.0;
    r.sig[1] *= -1.0;
  }
  return r;
}

Vec2d log_strain(const Vec2d& sig) {
  return {std::log(std::max(std::abs(sig[0]), 1e-4)), std::log(std::max(std::abs(sig[1]), 1e-4))};
}

}  // namespace

Mat2 kirchhoff_stress(const Mat2& F, const SandParams& p) {
  const Svd2 s = svd2(F);
  const Vec2d e = log_strain(s.sig);
  const double tr = e.sum();
  const Vec2d t{2.0 * p.mu() * e[0] + p.lambda() * tr, 2.0 * p.mu() * e[1] + p.lambda() * tr};
  return s.U * t.asDiagonal() * s.U.transpose();
}

Mat2 cauchy_stress(const Mat2& F, const SandParams& p) { return kirchhoff_stress(F, p) / F.determinant(); }

Mat2 plasticity_project(const Mat2& F, double& vol_correction, const SandParams& p, bool* failed) {
  if (failed) *failed = false;
  if (!(F.determinant() > 1e-12) || !F.allFinite()) {
    if (failed) *failed = true;
    vol_correction = 0.0;
    return Mat2::Identity();
  }
  if (!p.plasticity) return F;
  const Svd2 s = svd2(F);
  Vec2d e = log_strain(s.sig);
  e.array() += 0.5 * vol_correction;
  const double tr = e.sum();
  if (tr >= 0.0) {
    vol_correction = tr;
    return s.U * s.V.transpose();
  }
  const bool had_correction = vol_correction != 0.0;
  vol_correction = 0.0;
  const Vec2d dev = e.array() - 0.5 * tr;
  const double norm = dev.norm();
  const double dgamma = norm + (2.0 * p.lambda() + 2.0 * p.mu()) / (2.0 * p.mu()) * tr * p.alpha();
  if (dgamma <= 0.0) {
    if (!had_correction) return F;
    const Vec2d ex = e.array().exp();
    return s.U * ex.asDiagonal() * s.V.transpose();
  }
  const Vec2d en = e - (norm > 0.0 ? dgamma / norm : 0.0) * dev;
  const Vec2d ex = en.array().exp();
  return s.U * ex.asDiagonal() * s.V.transpose();
}

namespace {

// Per-tile scatter window: local node coordinates -1..5 on each axis.
constexpr int kWin = 7;
constexpr int kWinNodes = kWin * kWin;
enum Channel { kM, kPx, kPy, kVol, kArea, kMvx, kMvy, kTxx, kTxy, kTyy, kChannels };
using TileBuffer = std::array<double, kChannels * kWinNodes>;

int tile_offset(int local) { return local < 0 ? -1 : (local >= kTileSize ? 1 : 0); }

}  // namespace

void p2g(const std::vector<Particle>& particles, MpmGrid& grid, const SandParams& p, double dt,
         MpmStats& stats) {
  if (!grid.topo) throw TopologyError("MPM grid has no topology");
  grid.clear();
  const GridTopology& topo = *grid.topo;
  const auto& lv = topo.level(0);
  const auto& dom = topo.domain();
  const int T = lv.tiles.size();
  const int N = static_cast<int>(particles.size());

  // Counting sort of particles by tile; order within a tile is the index order.
  std::vector<int> tile_of(static_cast<std::size_t>(N), -1);
  std::vector<int> start(static_cast<std::size_t>(T) + 1, 0);
  for (int i = 0; i < N; ++i) {
    const Vec2d& x = particles[static_cast<std::size_t>(i)].x;
    const auto n = dom.canonical_node(0, {static_cast<int>(std::floor(x[0])), static_cast<int>(std::floor(x[1]))});
    const int s = n ? topo.find_tile(0, *n) : -1;
    if (s < 0) {
      ++stats.violations;
      continue;
    }
    tile_of[static_cast<std::size_t>(i)] = s;
    ++start[static_cast<std::size_t>(s) + 1];
  }
  for (int s = 0; s < T; ++s) start[static_cast<std::size_t>(s) + 1] += start[static_cast<std::size_t>(s)];
  std::vector<int> order(static_cast<std::size_t>(start[static_cast<std::size_t>(T)]));
  {
    std::vector<int> fill(start.begin(), start.end() - 1);
    for (int i = 0; i < N; ++i)
      if (const int s = tile_of[static_cast<std::size_t>(i)]; s >= 0) order[static_cast<std::size_t>(fill[static_cast<std::size_t>(s)]++)] = i;
  }
  std::vector<int> buf_of(static_cast<std::size_t>(T), -1);
  std::vector<int> busy;
  for (int s = 0; s < T; ++s)
    if (start[static_cast<std::size_t>(s) + 1] > start[static_cast<std::size_t>(s)]) {
      buf_of[static_cast<std::size_t>(s)] = static_cast<int>(busy.size());
      busy.push_back(s);
    }
  std::vector<TileBuffer> bufs(busy.size());
  std::vector<long> viol(busy.size(), 0);

  const double d_scale = 2.0 / std::sqrt(std::numbers::pi);
  parallel_for(static_cast<int>(busy.size()), [&](int b, int e) {
    for (int k = b; k < e; ++k) {
      const int s = busy[static_cast<std::size_t>(k)];
      const auto& nb = lv.neighbor_slots[static_cast<std::size_t>(s)];
      const Index2 lo = topo.node_of(0, s * kTileCells);
      TileBuffer& buf = bufs[static_cast<std::size_t>(k)];
      buf.fill(0.0);
      for (int o = start[static_cast<std::size_t>(s)]; o < start[static_cast<std::size_t>(s) + 1]; ++o) {
        const Particle& pt = particles[static_cast<std::size_t>(order[static_cast<std::size_t>(o)])];
        const Stencil st = quadratic_stencil(pt.x);
        // Stencil base relative to the tile, unwrapped across periodic seams.
        Index2 bl{};
        for (int a = 0; a < 2; ++a) {
          const int fl = static_cast<int>(std::floor(pt.x[a]));
          const int cell_local = floor_mod(fl - lo[static_cast<std::size_t>(a)], dom.nodes(0, a));
          bl[static_cast<std::size_t>(a)] = cell_local + (st.base[static_cast<std::size_t>(a)] - fl);
        }
        bool ok = true;
        for (int ty : {tile_offset(bl[1]), tile_offset(bl[1] + 2)})
          for (int tx : {tile_offset(bl[0]), tile_offset(bl[0] + 2)})
            if (nb[static_cast<std::size_t>((ty + 1) * 3 + (tx + 1))] < 0) ok = false;
        if (!ok) ++viol[static_cast<std::size_t>(k)];

        const double J = pt.F.determinant();
        const Mat2 tau = kirchhoff_stress(pt.F, p);
        const Mat2 affine = pt.m * pt.C - dt * pt.V0 * 4.0 * tau;
        const double vol = pt.V0 * J;
        const double dp = d_scale * std::sqrt(pt.V0);
        for (int j = 0; j < 3; ++j)
          for (int i = 0; i < 3; ++i) {
            const double w = st.w[0][static_cast<std::size_t>(i)] * st.w[1][static_cast<std::size_t>(j)];
            const Vec2d dpos{st.base[0] + i - pt.x[0], st.base[1] + j - pt.x[1]};
            const Vec2d mom = w * (pt.m * pt.v + affine * dpos);
            const int idx = (bl[1] + j + 1) * kWin + (bl[0] + i + 1);
            auto at = [&](Channel c) -> double& { return buf[static_cast<std::size_t>(c * kWinNodes + idx)]; };
            at(kM) += w * pt.m;
            at(kPx) += mom[0];
            at(kPy) += mom[1];
            at(kVol) += w * vol;
            at(kArea) += w * dp;
            at(kMvx) += w * pt.m * pt.v[0];
            at(kMvy) += w * pt.m * pt.v[1];
            at(kTxx) += w * pt.V0 * tau(0, 0);
            at(kTxy) += w * pt.V0 * tau(0, 1);
            at(kTyy) += w * pt.V0 * tau(1, 1);
          }
      }
    }
  });
  for (long v : viol) stats.violations += v;

  // Merge: every node gathers from the windows of its tile and its neighbours
  // in a fixed order.
  parallel_for(T, [&](int b, int e) {
    for (int s = b; s < e; ++s) {
      const auto& nb = lv.neighbor_slots[static_cast<std::size_t>(s)];
      for (int local = 0; local < kTileCells; ++local) {
        const int ix = local % kTileSize, iy = local / kTileSize;
        std::array<double, kChannels> acc{};
        bool any = false;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int ns = nb[static_cast<std::size_t>((dy + 1) * 3 + (dx + 1))];
            if (ns < 0) continue;
            const int bi = buf_of[static_cast<std::size_t>(ns)];
            if (bi < 0) continue;
            const int lx = ix - kTileSize * dx, ly = iy - kTileSize * dy;
            if (lx < -1 || lx > 5 || ly < -1 || ly > 5) continue;
            const TileBuffer& buf = bufs[static_cast<std::size_t>(bi)];
            const int idx = (ly + 1) * kWin + (lx + 1);
            for (int c = 0; c < kChannels; ++c) acc[static_cast<std::size_t>(c)] += buf[static_cast<std::size_t>(c * kWinNodes + idx)];
            any = true;
          }
        if (!any) continue;
        const auto cell = static_cast<std::size_t>(s * kTileCells + local);
        grid.mass[cell] = acc[kM];
        grid.momentum[cell] = {acc[kPx], acc[kPy]};
        grid.volume[cell] = acc[kVol];
        grid.area[cell] = acc[kArea];
        grid.mass_vel[cell] = {acc[kMvx], acc[kMvy]};
        grid.stress[cell] = {acc[kTxx], acc[kTxy], acc[kTyy]};
      }
    }
  });
}

namespace {

void coulomb(Vec2d& v, const Vec2d& n, double mu) {
  const double vn = v.dot(n);
  if (vn >= 0.0) return;
  const Vec2d vt = v - vn * n;
  const double t = vt.norm();
  v = (t > 0.0) ? Vec2d(vt * std::max(0.0, 1.0 - mu * (-vn) / t)) : Vec2d::Zero();
}

}  // namespace

void grid_update(MpmGrid& grid, double dt, const Vec2d& gravity, const BoundarySpec& bc, const SandParams& p) {
  const GridTopology& topo = *grid.topo;
  const auto& dom = topo.domain();
  const bool solids = !bc.solids.empty() || !bc.terrain.height.empty();
  parallel_for(grid.nodes(), [&](int b, int e) {
    for (int c = b; c < e; ++c) {
      const auto i = static_cast<std::size_t>(c);
      const double m = grid.mass[i];
      if (!(m > 0.0)) {
        grid.velocity[i] = Vec2d::Zero();
        continue;
      }
      Vec2d v = grid.momentum[i] / m + dt * gravity + grid.impulse[i] / m;
      const Index2 n = topo.node_of(0, c);
      for (int a = 0; a < 2; ++a) {
        if (dom.periodic[static_cast<std::size_t>(a)]) continue;
        Vec2d nrm = Vec2d::Zero();
        if (n[static_cast<std::size_t>(a)] < 2) nrm[a] = 1.0;
        else if (n[static_cast<std::size_t>(a)] > dom.nodes(0, a) - 3) nrm[a] = -1.0;
        if (nrm[a] != 0.0) coulomb(v, nrm, p.floor_friction);
      }
      if (solids && bc.solid_at(n[0], n[1])) {
        Vec2d g{static_cast<double>(bc.solid_at(n[0] + 1, n[1])) - bc.solid_at(n[0] - 1, n[1]),
                static_cast<double>(bc.solid_at(n[0], n[1] + 1)) - bc.solid_at(n[0], n[1] - 1)};
        Vec2d nrm = -g;
        if (nrm.norm() == 0.0) nrm = {0.0, 1.0};
        coulomb(v, nrm.normalized(), p.floor_friction);
      }
      grid.velocity[i] = v;
    }
  });
}

void g2p(std::vector<Particle>& particles, const MpmGrid& grid, const SandParams& p, double dt,
         MpmStats& stats) {
  const GridTopology& topo = *grid.topo;
  const auto& lv = topo.level(0);
  const auto& dom = topo.domain();
  const int N = static_cast<int>(particles.size());
  std::vector<char> clamped(static_cast<std::size_t>(N), 0), failed(static_cast<std::size_t>(N), 0);
  std::vector<double> speed(static_cast<std::size_t>(N), 0.0);
  parallel_for(N, [&](int b, int e) {
    for (int k = b; k < e; ++k) {
      Particle& pt = particles[static_cast<std::size_t>(k)];
      const Stencil st = quadratic_stencil(pt.x);
      Vec2d v = Vec2d::Zero();
      Mat2 B = Mat2::Zero();
      const auto home = dom.canonical_node(0, {static_cast<int>(std::floor(pt.x[0])), static_cast<int>(std::floor(pt.x[1]))});
      const int slot = home ? topo.find_tile(0, *home) : -1;
      if (slot < 0) continue;
      const auto& nb = lv.neighbor_slots[static_cast<std::size_t>(slot)];
      const Index2 lo = topo.node_of(0, slot * kTileCells);
      Index2 bl{};
      for (int a = 0; a < 2; ++a) {
        const int fl = static_cast<int>(std::floor(pt.x[a]));
        bl[static_cast<std::size_t>(a)] = floor_mod(fl - lo[static_cast<std::size_t>(a)], dom.nodes(0, a)) + (st.base[static_cast<std::size_t>(a)] - fl);
      }
      for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) {
          const int lx = bl[0] + i, ly = bl[1] + j;
          const int tx = tile_offset(lx), ty = tile_offset(ly);
          const int ns = nb[static_cast<std::size_t>((ty + 1) * 3 + (tx + 1))];
          if (ns < 0) continue;
          const int c = ns * kTileCells + (ly - kTileSize * ty) * kTileSize + (lx - kTileSize * tx);
          const double w = st.w[0][static_cast<std::size_t>(i)] * st.w[1][static_cast<std::size_t>(j)];
          const Vec2d& vi = grid.velocity[static_cast<std::size_t>(c)];
          const Vec2d dpos{st.base[0] + i - pt.x[0], st.base[1] + j - pt.x[1]};
          v += w * vi;
          B += w * vi * dpos.transpose();
        }
      pt.v = v;
      pt.C = 4.0 * B;
      pt.x += dt * v;
      for (int a = 0; a < 2; ++a) {
        const double ext = dom.extent[static_cast<std::size_t>(a)];
        if (dom.periodic[static_cast<std::size_t>(a)]) {
          pt.x[a] = std::fmod(pt.x[a], ext);
          if (pt.x[a] < 0.0) pt.x[a] += ext;
          if (pt.x[a] >= ext) pt.x[a] = 0.0;
        } else {
          const double lo = 0.5, hi = ext - 1.5 - 1e-9;
          if (pt.x[a] < lo || pt.x[a] > hi) {
            pt.x[a] = std::clamp(pt.x[a], lo, hi);
            clamped[static_cast<std::size_t>(k)] = 1;
          }
        }
      }
      const Mat2 Ft = (Mat2::Identity() + dt * pt.C) * pt.F;
      bool fail = false;
      pt.F = plasticity_project(Ft, pt.vol_correction, p, &fail);
      failed[static_cast<std::size_t>(k)] = fail;
      speed[static_cast<std::size_t>(k)] = v.norm();
    }
  });
  for (int k = 0; k < N; ++k) {
    stats.clamped += clamped[static_cast<std::size_t>(k)];
    stats.failures += failed[static_cast<std::size_t>(k)];
    stats.max_speed = std::max(stats.max_speed, speed[static_cast<std::size_t>(k)]);
  }
}

std::vector<Particle> seed_block(const Box& box, int per_axis, double density, CounterRng& rng, double jitter) {
  std::vector<Particle> out;
  const double h = 1.0 / per_axis;
  const int nx = static_cast<int>(std::lround((box.hi[0] - box.lo[0]) / h));
  const int ny = static_cast<int>(std::lround((box.hi[1] - box.lo[1]) / h));
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      Particle p;
      p.x = {box.lo[0] + (i + 0.5 + jitter * (2.0 * rng.uniform() - 1.0)) * h,
             box.lo[1] + (j + 0.5 + jitter * (2.0 * rng.uniform() - 1.0)) * h};
      p.V0 = h * h;
      p.m = density * p.V0;
      out.push_back(p);
    }
  return out;
}

double total_mass(const std::vector<Particle>& ps) {
  double m = 0.0;
  for (const auto& p : ps) m += p.m;
  return m;
}

Vec2d total_momentum(const std::vector<Particle>& ps) {
  Vec2d s = Vec2d::Zero();
  for (const auto& p : ps) s += p.m * p.v;
  return s;
}

double kinetic_energy(const std::vector<Particle>& ps) {
  double e = 0.0;
  for (const auto& p : ps) e += 0.5 * p.m * p.v.squaredNorm();
  return e;
}

namespace {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

template <class T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated particle file");
  return to_little(v);
}

constexpr char kMagic[8] = {'G', 'L', 'B', 'M', 'P', 'A', 'R', 'T'};

}  // namespace

void write_particles(std::ostream& os, const std::vector<Particle>& ps) {
  os.write(kMagic, 8);
  put<std::uint32_t>(os, 1);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ps.size()));
  for (const auto& p : ps) {
    put(os, p.x[0]);
    put(os, p.x[1]);
    put(os, p.v[0]);
    put(os, p.v[1]);
    put(os, p.m);
  }
  if (!os) throw IoError("failed to write particle frame");
}

std::vector<Particle> read_particles(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) throw IoError("not a GLBMPART file");
  const auto version = get<std::uint32_t>(is);
  if (version != 1) throw IoError("unsupported GLBMPART version " + std::to_string(version));
  const auto n = get<std::uint32_t>(is);
  std::vector<Particle> ps(n);
  for (auto& p : ps) {
    p.x[0] = get<double>(is);
    p.x[1] = get<double>(is);
    p.v[0] = get<double>(is);
    p.v[1] = get<double>(is);
    p.m = get<double>(is);
  }
  return ps;
}

}  // namespace glbm
