#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "glbm/adapt.hpp"
#include "glbm/granular.hpp"
#include "glbm/parallel.hpp"
#include "glbm/validation.hpp"

using namespace glbm;

namespace {

GridTopology dense(int nx, int ny, bool periodic) {
  GridDomain dom;
  dom.extent = {nx, ny};
  dom.periodic = {periodic, periodic};
  dom.levels = 1;
  BoundarySpec bc;
  if (!periodic)
    for (auto& f : bc.faces) f.kind = FaceKind::wall;
  return brute_force_grid(dom, RefineDriver{}, bc);
}

std::vector<Particle> random_particles(int n, double lo, double hi, std::uint64_t seed, bool with_c = true) {
  CounterRng rng(seed);
  std::vector<Particle> ps(static_cast<std::size_t>(n));
  for (auto& p : ps) {
    p.x = {rng.uniform(lo, hi), rng.uniform(lo, hi)};
    p.v = {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
    if (with_c) p.C << rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01);
    p.F << 1.0 + rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02), 1.0 + rng.uniform(-0.02, 0.02);
    p.m = rng.uniform(0.1, 1.0);
    p.V0 = 0.25;
  }
  return ps;
}

Vec2d grid_momentum(const MpmGrid& g) {
  Vec2d s = Vec2d::Zero();
  for (const auto& m : g.momentum) s += m;
  return s;
}

SandParams elastic() {
  SandParams p;
  p.E = 0.05;
  p.plasticity = false;
  return p;
}

// Principal Hencky strains of F (sorted descending).
Vec2d principal_log(const Mat2& F) {
  Eigen::JacobiSVD<Mat2> svd(F);
  return svd.singularValues().array().log();
}

}  // namespace

TEST(Stencil, PartitionOfUnityAndZeroFirstMoment) {
  CounterRng rng(1);
  for (int n = 0; n < 1000; ++n) {
    const Vec2d x{rng.uniform(2.0, 30.0), rng.uniform(2.0, 30.0)};
    const Stencil s = quadratic_stencil(x);
    for (int a = 0; a < 2; ++a) {
      double sum = 0.0, first = 0.0;
      for (int i = 0; i < 3; ++i) {
        sum += s.w[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)];
        first += s.w[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)] * (s.base[static_cast<std::size_t>(a)] + i - x[a]);
      }
      EXPECT_NEAR(sum, 1.0, 1e-15);
      EXPECT_NEAR(first, 0.0, 1e-14);
    }
  }
}

TEST(P2G, MassSumsToParticleMass) {
  GridTopology topo = dense(32, 32, true);
  MpmGrid g;
  g.resize(topo);
  const auto ps = random_particles(500, 0.0, 32.0, 2);
  MpmStats st;
  p2g(ps, g, elastic(), 1.0, st);
  double gm = 0.0;
  for (double m : g.mass) gm += m;
  EXPECT_NEAR(gm, total_mass(ps), 1e-12 * total_mass(ps));
  EXPECT_EQ(st.violations, 0);
}

TEST(P2G, ParticleOnNode) {
  GridTopology topo = dense(16, 16, true);
  MpmGrid g;
  g.resize(topo);
  Particle p;
  p.x = {7.0, 9.0};
  p.v = {0.2, -0.1};
  p.m = 2.0;
  MpmStats st;
  p2g({p}, g, elastic(), 1.0, st);
  const double w1[3] = {0.125, 0.75, 0.125};
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) {
      const int c = topo.find_cell(0, {6 + i, 8 + j});
      EXPECT_DOUBLE_EQ(g.mass[static_cast<std::size_t>(c)], 2.0 * w1[i] * w1[j]);
      EXPECT_NEAR(g.momentum[static_cast<std::size_t>(c)][0], 0.4 * w1[i] * w1[j], 1e-16);
    }
  EXPECT_NEAR(grid_momentum(g)[1], -0.2, 1e-15);
}

TEST(P2G, GridMomentumMatchesParticles) {
  GridTopology topo = dense(32, 32, true);
  MpmGrid g;
  g.resize(topo);
  SandParams sp;
  sp.E = 0.05;
  const auto ps = random_particles(2000, 0.0, 32.0, 3);
  MpmStats st;
  p2g(ps, g, sp, 1.0, st);
  // Brute-force sum of the affine and stress contributions.
  const Vec2d ref = total_momentum(ps);
  EXPECT_NEAR((grid_momentum(g) - ref).norm(), 0.0, 1e-13);
}

TEST(P2G, PeriodicSeamAndMultiThreadBitwise) {
  GridTopology topo = dense(32, 32, true);
  const auto ps = random_particles(3000, 0.0, 32.0, 4);
  MpmGrid a, b;
  a.resize(topo);
  b.resize(topo);
  MpmStats st;
  set_thread_count(1);
  p2g(ps, a, elastic(), 1.0, st);
  set_thread_count(4);
  p2g(ps, b, elastic(), 1.0, st);
  set_thread_count(1);
  for (int i = 0; i < a.nodes(); ++i) {
    ASSERT_EQ(a.mass[static_cast<std::size_t>(i)], b.mass[static_cast<std::size_t>(i)]);
    ASSERT_EQ(a.momentum[static_cast<std::size_t>(i)], b.momentum[static_cast<std::size_t>(i)]);
  }
}

TEST(P2G, StencilOutsideTilesIsReported) {
  GridDomain dom;
  dom.extent = {64, 64};
  dom.levels = 2;
  RefineDriver drv;
  drv.particles.push_back({30.0, 30.0});
  GridTopology topo = brute_force_grid(dom, drv, BoundarySpec{});
  MpmGrid g;
  g.resize(topo);
  Particle far;
  far.x = {2.0, 2.0};
  MpmStats st;
  p2g({far}, g, elastic(), 1.0, st);
  EXPECT_EQ(st.violations, 1);
}

TEST(GridUpdate, NoForcesAndGravity) {
  GridTopology topo = dense(16, 16, true);
  MpmGrid g;
  g.resize(topo);
  const auto ps = random_particles(200, 0.0, 16.0, 5, false);
  MpmStats st;
  p2g(ps, g, elastic(), 0.0, st);
  grid_update(g, 1.0, Vec2d::Zero(), BoundarySpec{}, elastic());
  for (int i = 0; i < g.nodes(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (g.mass[k] > 0.0) EXPECT_NEAR((g.velocity[k] - g.momentum[k] / g.mass[k]).norm(), 0.0, 1e-16);
    else EXPECT_EQ(g.velocity[k], Vec2d::Zero());
  }
  const Vec2d gr{0.0, -1e-3};
  const auto v0 = g.velocity;
  grid_update(g, 0.5, gr, BoundarySpec{}, elastic());
  for (int i = 0; i < g.nodes(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (g.mass[k] > 0.0) EXPECT_NEAR((g.velocity[k] - v0[k] - 0.5 * gr).norm(), 0.0, 1e-16);
  }
}

TEST(GridUpdate, WallStopsNormalMotion) {
  GridTopology topo = dense(16, 16, false);
  BoundarySpec bc;
  for (auto& f : bc.faces) f.kind = FaceKind::wall;
  MpmGrid g;
  g.resize(topo);
  Particle p;
  p.x = {8.0, 1.2};
  p.v = {0.0, -0.1};
  MpmStats st;
  p2g({p}, g, elastic(), 0.0, st);
  grid_update(g, 1.0, Vec2d::Zero(), bc, elastic());
  for (int x = 6; x < 10; ++x) EXPECT_GE(g.velocity[static_cast<std::size_t>(topo.find_cell(0, {x, 1}))][1], 0.0);
}

TEST(G2P, UniformFieldGivesUniformVelocity) {
  GridTopology topo = dense(16, 16, true);
  MpmGrid g;
  g.resize(topo);
  std::fill(g.velocity.begin(), g.velocity.end(), Vec2d{0.03, -0.02});
  auto ps = random_particles(100, 0.0, 16.0, 6);
  const auto before = ps;
  MpmStats st;
  g2p(ps, g, elastic(), 1.0, st);
  for (std::size_t k = 0; k < ps.size(); ++k) {
    EXPECT_NEAR((ps[k].v - Vec2d{0.03, -0.02}).norm(), 0.0, 1e-15);
    EXPECT_NEAR(ps[k].C.norm(), 0.0, 1e-14);
    Vec2d expect = before[k].x + Vec2d{0.03, -0.02};
    for (int a = 0; a < 2; ++a) expect[a] = std::fmod(expect[a] + 16.0, 16.0);
    EXPECT_NEAR((ps[k].x - expect).norm(), 0.0, 1e-13);
  }
}

TEST(G2P, ZeroVelocityKeepsPositions) {
  GridTopology topo = dense(16, 16, true);
  MpmGrid g;
  g.resize(topo);
  auto ps = random_particles(100, 0.0, 16.0, 7);
  const auto before = ps;
  MpmStats st;
  g2p(ps, g, elastic(), 1.0, st);
  for (std::size_t k = 0; k < ps.size(); ++k) EXPECT_EQ(ps[k].x, before[k].x);
}

TEST(G2P, RigidRotation) {
  GridTopology topo = dense(32, 32, true);
  MpmGrid g;
  g.resize(topo);
  const double w = 1e-3;
  const Vec2d c{16.0, 16.0};
  for (int i = 0; i < g.nodes(); ++i) {
    const auto p = topo.position(0, i);
    g.velocity[static_cast<std::size_t>(i)] = {-w * (p[1] - c[1]), w * (p[0] - c[0])};
  }
  for (double dt : {1.0, 0.5}) {
    auto ps = random_particles(50, 10.0, 22.0, 8, false);
    for (auto& p : ps) p.F.setIdentity();
    MpmStats st;
    g2p(ps, g, elastic(), dt, st);
    for (const auto& p : ps) {
      EXPECT_NEAR(p.C(0, 1), -w, 1e-14);
      EXPECT_NEAR(p.C(1, 0), w, 1e-14);
      EXPECT_NEAR(p.C(0, 0), 0.0, 1e-14);
      EXPECT_NEAR(p.F.determinant() - 1.0, (w * dt) * (w * dt), 1e-14);
    }
  }
}

TEST(Plasticity, ElasticUnchanged) {
  SandParams p;
  Mat2 F;
  F << 0.99, 0.002, -0.001, 0.995;
  double vc = 0.0;
  const Mat2 out = plasticity_project(F, vc, p);
  EXPECT_EQ(out, F);
  EXPECT_EQ(vc, 0.0);
}

TEST(Plasticity, ExpansionGoesToTip) {
  SandParams p;
  double vc = 0.0;
  const Mat2 out = plasticity_project(1.1 * Mat2::Identity(), vc, p);
  EXPECT_NEAR((out - Mat2::Identity()).norm(), 0.0, 1e-14);
  EXPECT_NEAR(vc, 2.0 * std::log(1.1), 1e-14);
  EXPECT_NEAR(kirchhoff_stress(out, p).norm(), 0.0, 1e-9);
  // A later compression first consumes the stored volume.
  const Mat2 back = plasticity_project(Mat2::Identity() / 1.05, vc, p);
  EXPECT_NEAR(vc, 2.0 * std::log(1.1 / 1.05), 1e-14);
  EXPECT_NEAR((back - Mat2::Identity()).norm(), 0.0, 1e-14);
  const Mat2 loaded = plasticity_project(Mat2::Identity() / 1.1, vc, p);
  EXPECT_EQ(vc, 0.0);
  EXPECT_NEAR(loaded.determinant(), 1.0 / (1.05 * 1.05), 1e-12);
}

TEST(Plasticity, ShearMatchesBruteForceReturn) {
  SandParams p;
  p.E = 1.0;
  const double mu = p.mu(), la = p.lambda(), alpha = p.alpha();
  CounterRng rng(9);
  for (int n = 0; n < 20; ++n) {
    const double tr = -rng.uniform(0.001, 0.05);
    const double d = rng.uniform(0.05, 0.3);
    const Vec2d e{0.5 * tr + d, 0.5 * tr - d};
    const double th = rng.uniform(0.0, 3.0), ph = rng.uniform(0.0, 3.0);
    Mat2 U, V;
    U << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    V << std::cos(ph), -std::sin(ph), std::sin(ph), std::cos(ph);
    const Mat2 F = U * Vec2d(e.array().exp()).asDiagonal() * V.transpose();

    // Oracle: the largest deviatoric scale s in [0, 1] whose Kirchhoff stress
    // satisfies |dev tau| + alpha tr tau <= 0, found by scanning and bisection.
    const double dev_norm = std::sqrt(2.0) * d;
    auto yield = [&](double s) { return 2.0 * mu * s * dev_norm + alpha * (2.0 * mu + 2.0 * la) * tr; };
    double lo = 0.0, hi = 1.0;
    ASSERT_GT(yield(1.0), 0.0);
    for (int k = 1; k <= 1000; ++k)
      if (yield(k / 1000.0) > 0.0) {
        lo = (k - 1) / 1000.0;
        hi = k / 1000.0;
        break;
      }
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      (yield(mid) <= 0.0 ? lo : hi) = mid;
    }
    const Vec2d expect{0.5 * tr + lo * d, 0.5 * tr - lo * d};

    double vc = 0.0;
    const Mat2 out = plasticity_project(F, vc, p);
    const Vec2d got = principal_log(out);
    EXPECT_NEAR(got[0], expect[0], 1e-12);
    EXPECT_NEAR(got[1], expect[1], 1e-12);
    const Mat2 tau = kirchhoff_stress(out, p);
    const Mat2 dev = tau - 0.5 * tau.trace() * Mat2::Identity();
    EXPECT_NEAR(dev.norm() + alpha * tau.trace(), 0.0, 1e-10);
  }
}

TEST(Plasticity, DegenerateInputFails) {
  SandParams p;
  double vc = 0.3;
  bool failed = false;
  Mat2 F = Mat2::Zero();
  F(0, 0) = 1.0;
  plasticity_project(F, vc, p, &failed);
  EXPECT_TRUE(failed);
}

TEST(Mpm, ChainConservesMomentum) {
  GridTopology topo = dense(32, 32, true);
  MpmGrid g;
  g.resize(topo);
  SandParams sp;
  sp.E = 0.05;
  auto ps = random_particles(1000, 0.0, 32.0, 10);
  const Vec2d p0 = total_momentum(ps);
  MpmStats st;
  for (int n = 0; n < 10; ++n) {
    p2g(ps, g, sp, 1.0, st);
    grid_update(g, 1.0, Vec2d::Zero(), BoundarySpec{}, sp);
    g2p(ps, g, sp, 1.0, st);
  }
  EXPECT_NEAR((total_momentum(ps) - p0).norm(), 0.0, 1e-12);
}

TEST(Mpm, ElasticBlockTranslatesRigidly) {
  GridTopology topo = dense(64, 64, true);
  MpmGrid g;
  g.resize(topo);
  CounterRng rng(11);
  auto ps = seed_block({{20.0, 20.0}, {30.0, 28.0}}, 2, 1.0, rng);
  for (auto& p : ps) p.v = {0.05, 0.02};
  MpmStats st;
  for (int n = 0; n < 100; ++n) {
    p2g(ps, g, elastic(), 1.0, st);
    grid_update(g, 1.0, Vec2d::Zero(), BoundarySpec{}, elastic());
    g2p(ps, g, elastic(), 1.0, st);
  }
  double dev = 0.0;
  for (const auto& p : ps) dev = std::max(dev, (p.v - Vec2d{0.05, 0.02}).norm());
  EXPECT_LT(dev, 1e-12);
}

TEST(ParticleIo, RoundTrip) {
  auto ps = random_particles(37, 0.0, 10.0, 12);
  std::stringstream ss;
  write_particles(ss, ps);
  EXPECT_EQ(ss.str().size(), 16u + 37u * 40u);
  EXPECT_EQ(ss.str().substr(0, 8), "GLBMPART");
  const auto back = read_particles(ss);
  ASSERT_EQ(back.size(), ps.size());
  for (std::size_t k = 0; k < ps.size(); ++k) {
    EXPECT_EQ(back[k].x, ps[k].x);
    EXPECT_EQ(back[k].v, ps[k].v);
    EXPECT_EQ(back[k].m, ps[k].m);
  }
  std::stringstream bad("NOTAFILE........");
  EXPECT_THROW(read_particles(bad), IoError);
}

TEST(SandCollapse, SmallColumnSettlesBelowFrictionSlope) {
  SandCollapseOptions o;
  o.column_width = 20;
  o.column_height = 20;
  const auto r = run_sand_collapse(o);
  EXPECT_TRUE(r.mass_exact);
  EXPECT_TRUE(r.settled);
  EXPECT_LE(std::max(r.left_slope, r.right_slope), std::tan(30.0 * std::numbers::pi / 180.0) + 0.05);
  EXPECT_GT(r.runout, 1.0);
}
