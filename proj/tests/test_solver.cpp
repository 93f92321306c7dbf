#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "glbm/adapt.hpp"
#include "glbm/errors.hpp"
#include "glbm/solver.hpp"
#include "glbm/validation.hpp"
#include "naive_reference.hpp"

using namespace glbm;

namespace {

GridTopology patch_topology(int res, int levels, double lo, double hi, BoundarySpec bc = {}) {
  GridDomain dom;
  dom.extent = {res, res};
  dom.periodic = {bc.periodic(0), bc.periodic(1)};
  dom.levels = levels;
  RefineDriver drv;
  drv.refine_mask.push_back({{lo, lo}, {hi, hi}});
  return brute_force_grid(dom, drv, bc);
}

Sym2 neq(const Sym2& s, const Vec2& u) {
  const Sym2 e = seq<Lat>(u);
  return {s[0] - e[0], s[1] - e[1], s[2] - e[2]};
}

FieldLevel blank(const GridTopology& topo, int l) {
  FieldLevel f;
  f.cells = topo.level(l).cells();
  for (int c = 0; c < kMomentComps; ++c) f.comp[static_cast<std::size_t>(c)].assign(static_cast<std::size_t>(f.cells), 0.0);
  return f;
}

}  // namespace

TEST(Rescale, TauExamples) {
  EXPECT_DOUBLE_EQ(rescale_tau(0.8, 1), 0.65);
  EXPECT_DOUBLE_EQ(rescale_tau(0.8, 2), 0.575);
  EXPECT_DOUBLE_EQ(rescale_tau(0.8, 0), 0.8);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> t(0.51, 3.0);
  for (int n = 0; n < 1000; ++n) {
    const double tau = t(rng);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) EXPECT_NEAR(rescale_tau(rescale_tau(tau, a), b), rescale_tau(tau, a + b), 1e-15);
  }
}

TEST(Rescale, KappaValues) {
  EXPECT_DOUBLE_EQ(kappa_up(0.8, 0.65, RescaleConvention::derived), 1.625);
  EXPECT_DOUBLE_EQ(kappa_down(0.8, 0.65, RescaleConvention::derived), 1.0 / 1.625);
  EXPECT_NEAR(kappa_up(0.8, 0.65, RescaleConvention::post_collision), 3.5, 1e-14);
  EXPECT_DOUBLE_EQ(kappa_up(0.8, 0.65, RescaleConvention::paper_literal), 0.65 / 1.6);
  EXPECT_DOUBLE_EQ(kappa_down(0.8, 0.65, RescaleConvention::paper_literal), 1.625);

  const Vec2 u{0.03, -0.01};
  const Sym2 s{0.004, -0.002, 0.001};
  const Sym2 up = rescale_S_up(s, u, 0.8, 0.65, RescaleConvention::derived);
  const Sym2 a = neq(s, u), b = neq(up, u);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(b[static_cast<std::size_t>(k)], 1.625 * a[static_cast<std::size_t>(k)], 1e-16);
}

TEST(Rescale, RoundTrip) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> uu(-0.1, 0.1), ss(-0.01, 0.01), t(0.51, 2.0);
  double worst_derived = 0.0, worst_post = 0.0, worst_literal = 0.0;
  for (int n = 0; n < 10000; ++n) {
    const Vec2 u{uu(rng), uu(rng)};
    const Sym2 s{ss(rng), ss(rng), ss(rng)};
    const double tau = t(rng), tau1 = rescale_tau(tau, 1);
    for (auto [c, worst] : {std::pair{RescaleConvention::derived, &worst_derived},
                            std::pair{RescaleConvention::paper_literal, &worst_literal}}) {
      const Sym2 r = rescale_S_down(rescale_S_up(s, u, tau, tau1, c), u, tau, tau1, c);
      for (int k = 0; k < 3; ++k) *worst = std::max(*worst, std::abs(r[static_cast<std::size_t>(k)] - s[static_cast<std::size_t>(k)]));
    }
    if (std::abs(tau - 1.0) > 0.05 && std::abs(tau1 - 1.0) > 0.05) {
      const auto c = RescaleConvention::post_collision;
      const Sym2 r = rescale_S_down(rescale_S_up(s, u, tau, tau1, c), u, tau, tau1, c);
      for (int k = 0; k < 3; ++k) worst_post = std::max(worst_post, std::abs(r[static_cast<std::size_t>(k)] - s[static_cast<std::size_t>(k)]));
    }
  }
  EXPECT_LT(worst_derived, 1e-14);
  EXPECT_LT(worst_post, 1e-14);
  EXPECT_GT(worst_literal, 1e-4);
}

TEST(SolverParams, Validation) {
  SolverParams p;
  EXPECT_NO_THROW(p.validate());
  p.tau0 = 0.5;
  EXPECT_THROW(p.validate(), ConfigError);
  p.tau0 = 1.5;
  p.levels = 2;
  EXPECT_THROW(p.validate(), ConfigError);  // level 1 has tau = 1
  p.rescale = RescaleConvention::derived;
  EXPECT_NO_THROW(p.validate());
  p.levels = 0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Collision, EquilibriumIsFixedPoint) {
  Moments<Lat> m;
  m.rho = 1.02;
  m.u = {0.04, -0.03};
  m.S = seq<Lat>(m.u);
  const Moments<Lat> out = collide(m, {0.0, 0.0}, 0.7);
  EXPECT_EQ(out.rho, m.rho);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(out.S[static_cast<std::size_t>(k)], m.S[static_cast<std::size_t>(k)], 1e-17);
}

TEST(Collision, UnitTauGivesEquilibrium) {
  Moments<Lat> m;
  m.rho = 0.98;
  m.u = {0.02, 0.05};
  m.S = {0.3, -0.2, 0.1};
  const Moments<Lat> out = collide(m, {0.0, 0.0}, 1.0);
  const Sym2 e = seq<Lat>(m.u);
  for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(out.S[static_cast<std::size_t>(k)], e[static_cast<std::size_t>(k)]);
}

TEST(Collision, ForceShiftsVelocity) {
  Moments<Lat> m;
  m.rho = 2.0;
  m.u = {0.0, 0.0};
  m.S = {0.0, 0.0, 0.0};
  const Moments<Lat> out = collide(m, {0.004, -0.002}, 0.8);
  EXPECT_DOUBLE_EQ(out.u[0], 0.001);
  EXPECT_DOUBLE_EQ(out.u[1], -0.0005);
}

TEST(StreamCollide, MatchesPopulationShift) {
  GridDomain dom;
  dom.extent = {16, 16};
  dom.levels = 1;
  GridTopology topo = brute_force_grid(dom, RefineDriver{}, BoundarySpec{});
  SolverParams sp;
  MultiLevelSolver s(topo, BoundarySpec{}, sp);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> r(-1.0, 1.0);
  std::vector<Moments<Lat>> init(256);
  for (auto& m : init) {
    m.rho = 1.0 + 0.01 * r(rng);
    m.u = {0.05 * r(rng), 0.05 * r(rng)};
    m.S = seq<Lat>(m.u);
    for (auto& v : m.S) v += 0.002 * r(rng);
  }
  auto at = [&](int x, int y) -> const Moments<Lat>& { return init[static_cast<std::size_t>(((y + 16) % 16) * 16 + (x + 16) % 16)]; };
  s.initialize([&](int, const Vec2& p) { return at(static_cast<int>(p[0]), static_cast<int>(p[1])); });
  s.step();
  double worst = 0.0;
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      Populations<Lat> f{};
      for (int i = 0; i < Lat::q; ++i) f[static_cast<std::size_t>(i)] = reconstruct_one(at(x - Lat::c[i][0], y - Lat::c[i][1]), i);
      const Moments<Lat> ref = collide(compute_moments<Lat>(f, {0.0, 0.0}), {0.0, 0.0}, sp.tau0);
      const Moments<Lat> got = load(s.current(0), topo.find_cell(0, {x, y}));
      worst = std::max({worst, std::abs(got.rho - ref.rho), std::abs(got.u[0] - ref.u[0]), std::abs(got.u[1] - ref.u[1])});
      for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(got.S[static_cast<std::size_t>(k)] - ref.S[static_cast<std::size_t>(k)]));
    }
  }
  EXPECT_LT(worst, 1e-14);
}

TEST(MultiLevel, KernelCounts) {
  GridTopology topo = patch_topology(128, 3, 56, 71);
  SolverParams sp;
  sp.levels = 3;
  MultiLevelSolver s(topo, BoundarySpec{}, sp);
  s.initialize([](int, const Vec2&) { return Moments<Lat>{}; });
  s.step();
  EXPECT_EQ(s.kernel_counts(), (std::vector<long>{4, 2, 1}));
  EXPECT_EQ(s.finest_steps(), 4);
  EXPECT_EQ(s.top_steps(), 1);
}

TEST(MultiLevel, PingPongMatchesNaiveReference) {
  GridTopology topo = patch_topology(128, 3, 56, 71);
  SolverParams sp;
  sp.levels = 3;
  MultiLevelSolver s(topo, BoundarySpec{}, sp);
  reference::NaiveSolver ref(topo, BoundarySpec{}, sp);
  const double nu = Lat::cs2 * (sp.tau0 - 0.5);
  const auto lp = s.level_params();
  auto init = [&](int l, const Vec2& p) {
    return taylor_green_state(p, 0.0, 128, 0.05, nu, lp[static_cast<std::size_t>(l)].tau, lp[static_cast<std::size_t>(l)].dx);
  };
  s.initialize(init);
  ref.initialize(init);
  for (int n = 0; n < 5; ++n) {
    s.step();
    ref.step();
  }
  double worst = 0.0;
  for (int l = 0; l < 3; ++l) {
    const auto& lv = topo.level(l);
    for (int c = 0; c < lv.cells(); ++c) {
      if (lv.roles[static_cast<std::size_t>(c)] == CellRole::downward) continue;
      for (int k = 0; k < kMomentComps; ++k) {
        const auto comp = static_cast<Comp>(k);
        worst = std::max(worst, std::abs(s.current(l)(comp, c) - ref.current(l)(comp, c)));
      }
    }
  }
  EXPECT_LT(worst, 1e-14);
}

TEST(Transfer, DownwardConstantLinearAndMidpoint) {
  GridTopology topo = patch_topology(64, 2, 24, 39);
  SolverParams sp;
  sp.levels = 2;
  const auto lp = make_level_params(sp);
  const auto& down = topo.interfaces().down[0];
  ASSERT_FALSE(down.empty());

  FieldLevel old_c = blank(topo, 1), new_c = blank(topo, 1), fine = blank(topo, 0);
  const Vec2 u{0.02, 0.01};
  for (int c = 0; c < old_c.cells; ++c) {
    Moments<Lat> m;
    const Vec2 p = topo.position(1, c);
    m.rho = 1.0 + 1e-3 * p[0] - 2e-3 * p[1];
    m.u = u;
    m.S = seq<Lat>(u);
    store(old_c, c, m);
    m.rho += 0.5;
    store(new_c, c, m);
  }
  downward_transfer(topo, 0, 1, sp, lp, old_c, new_c, fine);
  for (const auto& d : down) {
    const Vec2 p = topo.position(0, d.cell);
    EXPECT_NEAR(fine(kRho, d.cell), 1.0 + 1e-3 * p[0] - 2e-3 * p[1], 1e-14);
    EXPECT_NEAR(fine(kUx, d.cell), u[0], 1e-16);
    EXPECT_NEAR(fine(kSxy, d.cell), u[0] * u[1], 1e-16);
  }
  downward_transfer(topo, 0, 2, sp, lp, old_c, new_c, fine);
  for (const auto& d : down) {
    const Vec2 p = topo.position(0, d.cell);
    EXPECT_NEAR(fine(kRho, d.cell), 1.25 + 1e-3 * p[0] - 2e-3 * p[1], 1e-14);
  }
}

TEST(Transfer, UpwardCopiesAndRescales) {
  GridTopology topo = patch_topology(64, 2, 24, 39);
  for (auto conv : {RescaleConvention::derived, RescaleConvention::post_collision}) {
    SolverParams sp;
    sp.levels = 2;
    sp.rescale = conv;
    const auto lp = make_level_params(sp);
    const double kappa = kappa_up(lp[0].tau, lp[1].tau, conv);
    FieldLevel fine = blank(topo, 0), coarse = blank(topo, 1);
    const Vec2 u{0.01, -0.02};
    for (int c = 0; c < fine.cells; ++c) {
      Moments<Lat> m;
      m.rho = 1.0 + 1e-4 * c;
      m.u = u;
      m.S = seq<Lat>(u);
      m.S[1] += 1e-3;  // shear
      store(fine, c, m);
    }
    upward_transfer(topo, 0, sp, lp, fine, coarse);
    const auto& up = topo.interfaces().up[1];
    ASSERT_FALSE(up.empty());
    for (const auto& e : up) {
      EXPECT_EQ(coarse(kRho, e.cell), fine(kRho, e.src[0]));
      EXPECT_EQ(coarse(kUx, e.cell), u[0]);
      EXPECT_NEAR(coarse(kSxy, e.cell) - u[0] * u[1], kappa * 1e-3, 1e-15);
    }
  }
}

TEST(Transfer, UniformFlowPreserved) {
  EXPECT_LT(uniform_flow_deviation(2, 100), 1e-12);
  EXPECT_LT(uniform_flow_deviation(3, 30), 1e-12);
}

TEST(Boundaries, OutletNoOps) {
  BoundarySpec bc;
  bc.faces[kXMin].kind = FaceKind::wall;
  bc.faces[kXMax].kind = FaceKind::outlet;
  GridDomain dom;
  dom.extent = {32, 16};
  dom.periodic = {false, true};
  dom.levels = 1;
  GridTopology topo = brute_force_grid(dom, RefineDriver{}, bc);
  const auto cells = build_boundary_cells(topo, bc);
  ASSERT_EQ(cells[0].outlets.size(), 16u);
  SolverParams sp;

  FieldLevel in = blank(topo, 0);
  for (int c = 0; c < in.cells; ++c) {
    Moments<Lat> m;
    m.rho = 1.0 + 0.01 * std::sin(c);
    m.u = {0.0, 0.0};
    m.S = {0.001 * std::cos(c), 0.0, 0.0};
    store(in, c, m);
  }
  FieldLevel out = in;
  apply_boundaries(cells[0], sp, in, out);
  for (const auto& o : cells[0].outlets)
    for (int k = 0; k < kMomentComps; ++k) EXPECT_EQ(out(static_cast<Comp>(k), o.cell), in(static_cast<Comp>(k), o.cell));

  Moments<Lat> m;
  m.rho = 1.01;
  m.u = {0.04, 0.01};
  m.S = seq<Lat>(m.u);
  for (int c = 0; c < in.cells; ++c) store(in, c, m);
  out = blank(topo, 0);
  apply_boundaries(cells[0], sp, in, out);
  for (const auto& o : cells[0].outlets)
    for (int k = 0; k < kMomentComps; ++k) EXPECT_EQ(out(static_cast<Comp>(k), o.cell), in(static_cast<Comp>(k), o.cell));
}

TEST(Boundaries, LogInlet) {
  BoundarySpec bc;
  bc.faces[kXMin].kind = FaceKind::inlet;
  bc.faces[kXMin].inlet = {0.05, 0.5, 4.0};
  bc.faces[kXMax].kind = FaceKind::outlet;
  GridDomain dom;
  dom.extent = {32, 16};
  dom.periodic = {false, true};
  dom.levels = 1;
  GridTopology topo = brute_force_grid(dom, RefineDriver{}, bc);
  const auto cells = build_boundary_cells(topo, bc);
  ASSERT_EQ(cells[0].inlets.size(), 16u);
  SolverParams sp;
  FieldLevel in = blank(topo, 0), out = blank(topo, 0);
  apply_boundaries(cells[0], sp, in, out);
  for (const auto& i : cells[0].inlets) {
    const double v = out(kUx, i.cell);
    if (i.y <= 4.0) EXPECT_EQ(v, 0.0);
    else EXPECT_DOUBLE_EQ(v, 0.05 * std::log(1.0 + 0.5 * (i.y - 4.0)));
    EXPECT_EQ(out(kRho, i.cell), 1.0);
    EXPECT_EQ(out(kSxx, i.cell), v * v);
  }
  EXPECT_EQ(bc.faces[kXMin].inlet.velocity(4.0), 0.0);
}

TEST(Conservation, SingleLevelMass) { EXPECT_LT(mass_drift(1, 1000), 1e-12); }

TEST(Conservation, MultiLevelMassBounded) { EXPECT_LT(mass_drift(2, 200), 1e-4); }

TEST(Validation, TaylorGreenCoarse) {
  TaylorGreenOptions o;
  o.res = 32;
  const auto r = run_taylor_green(o);
  EXPECT_LT(r.l2_error, 0.02);
  EXPECT_LT(r.ke_rate_error, 0.02);
  EXPECT_TRUE(r.ke_monotone);
}

TEST(Validation, PoiseuilleNarrow) {
  const auto r = run_poiseuille(16, 0.8, 0.02);
  EXPECT_LT(r.max_rel_error, 0.01);
}

TEST(Solver, DivergenceIsReported) {
  GridDomain dom;
  dom.extent = {16, 16};
  dom.levels = 1;
  GridTopology topo = brute_force_grid(dom, RefineDriver{}, BoundarySpec{});
  MultiLevelSolver s(topo, BoundarySpec{}, SolverParams{});
  s.initialize([](int, const Vec2& p) {
    Moments<Lat> m;
    m.rho = p[0] < 8 ? -1.0 : 1.0;
    return m;
  });
  EXPECT_THROW(s.step(), DivergenceError);
}
