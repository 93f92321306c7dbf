#include "glbm/validation.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "glbm/adapt.hpp"
#include "glbm/granular.hpp"
#include "glbm/rng.hpp"

namespace glbm {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

GridTopology central_patch(int res, int levels, double lo, double hi, bool periodic = true) {
  GridDomain dom;
  dom.extent = {res, res};
  dom.periodic = {periodic, periodic};
  dom.levels = levels;
  RefineDriver drv;
  if (levels > 1) drv.refine_mask.push_back({{lo, lo}, {hi - 1.0, hi - 1.0}});
  return brute_force_grid(dom, drv, BoundarySpec{});
}

// Sum over owned cells of w * |u - ref|^2 and w * |ref|^2.
template <class Ref>
std::pair<double, double> l2_sums(const MultiLevelSolver& s, Ref ref) {
  double num = 0.0, den = 0.0;
  const auto& topo = s.topology();
  for (int l = 0; l < topo.levels(); ++l) {
    const double w = std::ldexp(1.0, 2 * l);
    const FieldLevel& f = s.current(l);
    for (int c : owned_cells(topo, l)) {
      const Vec2 r = ref(l, c);
      const double dx = f(kUx, c) - r[0], dy = f(kUy, c) - r[1];
      num += w * (dx * dx + dy * dy);
      den += w * (r[0] * r[0] + r[1] * r[1]);
    }
  }
  return {num, den};
}

}  // namespace

Moments<Lat> taylor_green_state(const Vec2& pos, double t, int res, double u0, double nu, double tau_l,
                                double dx) {
  const double k = 2.0 * std::numbers::pi / res;
  const double d = std::exp(-2.0 * nu * k * k * t);
  const double sx = std::sin(k * pos[0]), cx = std::cos(k * pos[0]);
  const double sy = std::sin(k * pos[1]), cy = std::cos(k * pos[1]);
  Moments<Lat> m;
  m.u = {-u0 * cx * sy * d, u0 * sx * cy * d};
  m.rho = 1.0 - 0.75 * u0 * u0 * d * d * (std::cos(2.0 * k * pos[0]) + std::cos(2.0 * k * pos[1]));
  const double dux_dx = u0 * k * sx * sy * d;
  const double dux_dy = -u0 * k * cx * cy * d;
  const double duy_dx = u0 * k * cx * cy * d;
  const double duy_dy = -u0 * k * sx * sy * d;
  const double c = -Lat::cs2 * (tau_l - 1.0) * dx;
  m.S = {m.u[0] * m.u[0] + c * 2.0 * dux_dx, m.u[0] * m.u[1] + c * (dux_dy + duy_dx),
         m.u[1] * m.u[1] + c * 2.0 * duy_dy};
  return m;
}

TaylorGreenResult run_taylor_green(const TaylorGreenOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  const bool refine = opt.levels > 1 && opt.refine_center;
  GridTopology topo = central_patch(opt.res, refine ? opt.levels : 1, opt.res / 4.0, 3.0 * opt.res / 4.0);
  SolverParams sp;
  sp.levels = topo.levels();
  sp.tau0 = opt.tau;
  sp.rescale = opt.rescale;
  MultiLevelSolver s(topo, BoundarySpec{}, sp);
  const double nu = Lat::cs2 * (opt.tau - 0.5);
  const auto& lp = s.level_params();
  s.initialize([&](int l, const Vec2& p) {
    return taylor_green_state(p, 0.0, opt.res, opt.u0, nu, lp[static_cast<std::size_t>(l)].tau,
                              lp[static_cast<std::size_t>(l)].dx);
  });

  const double k = 2.0 * std::numbers::pi / opt.res;
  const double t_end = opt.decay_times / (2.0 * nu * k * k);
  const long per_top = 1L << (topo.levels() - 1);
  const long tops = std::max(1L, std::lround(t_end / static_cast<double>(per_top)));
  const double ke0 = s.kinetic_energy();
  double prev = ke0;
  TaylorGreenResult r;
  for (long n = 0; n < tops; ++n) {
    s.step();
    if (n % 50 == 49 || n + 1 == tops) {
      const double ke = s.kinetic_energy();
      if (ke > prev) r.ke_monotone = false;
      prev = ke;
    }
  }
  const double t = s.time();
  const auto [num, den] = l2_sums(s, [&](int l, int c) {
    return taylor_green_state(topo.position(l, c), t, opt.res, opt.u0, nu, 1.0, 1.0).u;
  });
  r.steps = s.finest_steps();
  r.l2_error = std::sqrt(num / den);
  const double rate = -std::log(s.kinetic_energy() / ke0) / t;
  r.ke_rate_error = std::abs(rate / (4.0 * nu * k * k) - 1.0);
  r.seconds = seconds_since(t0);
  return r;
}

ConsistencyResult multilevel_consistency(int res, double tau, double u0, RescaleConvention rescale,
                                         double decay_times) {
  const auto t0 = std::chrono::steady_clock::now();
  const double nu = Lat::cs2 * (tau - 0.5);
  const double k = 2.0 * std::numbers::pi / res;
  const long tops = std::max(1L, std::lround(decay_times / (2.0 * nu * k * k) / 2.0));

  GridTopology ref_topo = central_patch(res, 1, 0, 0);
  SolverParams rp;
  rp.tau0 = tau;
  MultiLevelSolver ref(ref_topo, BoundarySpec{}, rp);
  ref.initialize([&](int, const Vec2& p) { return taylor_green_state(p, 0.0, res, u0, nu, tau, 1.0); });

  GridTopology ml_topo = central_patch(res, 2, res / 4.0, 3.0 * res / 4.0);
  SolverParams mp = rp;
  mp.levels = 2;
  mp.rescale = rescale;
  MultiLevelSolver ml(ml_topo, BoundarySpec{}, mp);
  const auto& lp = ml.level_params();
  ml.initialize([&](int l, const Vec2& p) {
    return taylor_green_state(p, 0.0, res, u0, nu, lp[static_cast<std::size_t>(l)].tau,
                              lp[static_cast<std::size_t>(l)].dx);
  });

  for (long n = 0; n < tops; ++n) {
    ml.step();
    ref.step();
    ref.step();
  }
  const FieldLevel& rf = ref.current(0);
  const auto [num, den] = l2_sums(ml, [&](int l, int c) {
    const Index2 n = ml_topo.node_of(l, c);
    const int rc = ref_topo.find_cell(0, {n[0] << l, n[1] << l});
    return Vec2{rf(kUx, rc), rf(kUy, rc)};
  });
  return {std::sqrt(num / den), seconds_since(t0)};
}

double uniform_flow_deviation(int levels, int top_steps, RescaleConvention rescale) {
  const int res = 16 << levels;
  GridTopology topo = central_patch(res, levels, 3.0 * res / 8.0, 5.0 * res / 8.0);
  SolverParams sp;
  sp.levels = levels;
  sp.tau0 = 0.8;
  sp.rescale = rescale;
  MultiLevelSolver s(topo, BoundarySpec{}, sp);
  Moments<Lat> m0;
  m0.rho = 1.0;
  m0.u = {0.05, 0.02};
  m0.S = seq<Lat>(m0.u);
  s.initialize([&](int, const Vec2&) { return m0; });
  for (int n = 0; n < top_steps; ++n) s.step();
  double dev = 0.0;
  for (int l = 0; l < levels; ++l) {
    const FieldLevel& f = s.current(l);
    for (int c = 0; c < f.cells; ++c) {
      dev = std::max(dev, std::abs(f(kRho, c) - m0.rho));
      dev = std::max({dev, std::abs(f(kUx, c) - m0.u[0]), std::abs(f(kUy, c) - m0.u[1])});
      dev = std::max({dev, std::abs(f(kSxx, c) - m0.S[0]), std::abs(f(kSxy, c) - m0.S[1]),
                      std::abs(f(kSyy, c) - m0.S[2])});
    }
  }
  return dev;
}

PoiseuilleResult run_poiseuille(int width, double tau, double u_max) {
  GridDomain dom;
  dom.extent = {16, width};
  dom.periodic = {true, false};
  dom.levels = 1;
  BoundarySpec bc;
  bc.faces[kYMin].kind = FaceKind::wall;
  bc.faces[kYMax].kind = FaceKind::wall;
  GridTopology topo = brute_force_grid(dom, RefineDriver{}, bc);
  const double nu = Lat::cs2 * (tau - 0.5);
  const double g = 8.0 * nu * u_max / (static_cast<double>(width) * width);
  SolverParams sp;
  sp.tau0 = tau;
  sp.gravity = {g, 0.0};
  MultiLevelSolver s(topo, bc, sp);
  s.initialize([](int, const Vec2&) { return Moments<Lat>{}; });

  auto profile_error = [&] {
    double err = 0.0;
    const FieldLevel& f = s.current(0);
    for (int c = 0; c < f.cells; ++c) {
      const double y = topo.position(0, c)[1];
      const double ua = g / (2.0 * nu) * (y + 0.5) * (width - 0.5 - y);
      const double u = f(kUx, c) - 0.5 * g;  // stored velocity carries the full force
      err = std::max(err, std::abs(u - ua) / u_max);
    }
    return err;
  };
  PoiseuilleResult r;
  double prev = 1e300;
  const long cap = 200000;
  for (long n = 1; n <= cap; ++n) {
    s.step();
    if (n % 2000 == 0) {
      const double e = profile_error();
      r.steps = n;
      r.max_rel_error = e;
      if (std::abs(e - prev) < 1e-7) break;
      prev = e;
    }
  }
  return r;
}

double mass_drift(int levels, int steps) {
  const int res = 64;
  GridTopology topo = central_patch(res, levels, res / 4.0, 3.0 * res / 4.0);
  SolverParams sp;
  sp.levels = levels;
  sp.tau0 = 0.8;
  MultiLevelSolver s(topo, BoundarySpec{}, sp);
  const double nu = Lat::cs2 * (sp.tau0 - 0.5);
  const auto& lp = s.level_params();
  s.initialize([&](int l, const Vec2& p) {
    return taylor_green_state(p, 0.0, res, 0.05, nu, lp[static_cast<std::size_t>(l)].tau,
                              lp[static_cast<std::size_t>(l)].dx);
  });
  const double m0 = s.total_mass();
  for (int n = 0; n < steps; ++n) s.step();
  return std::abs(s.total_mass() - m0) / m0;
}

namespace {

// |slope| of the least-squares line through (x, h) samples.
double fit_slope(const std::vector<std::pair<double, double>>& pts) {
  if (pts.size() < 2) return 0.0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [x, y] : pts) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(pts.size());
  const double den = n * sxx - sx * sx;
  return den == 0.0 ? 0.0 : std::abs((n * sxy - sx * sy) / den);
}

}  // namespace

SandCollapseResult run_sand_collapse(const SandCollapseOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  const double floor_y = 2.0;
  const int W = opt.column_width, H = opt.column_height;
  GridDomain dom;
  dom.extent = {std::max(64, ((6 * W + 63) / 64) * 64), ((H + 16 + 15) / 16) * 16};
  dom.periodic = {false, false};
  dom.levels = 1;
  BoundarySpec bc;
  for (auto& f : bc.faces) f.kind = FaceKind::wall;
  GridTopology topo = brute_force_grid(dom, RefineDriver{}, bc);

  SandParams sand;
  sand.E = opt.E;
  sand.friction_deg = opt.friction_deg;
  sand.floor_friction = opt.floor_friction;
  const double cx = 0.5 * dom.extent[0];
  CounterRng rng(opt.seed);
  Box column{{cx - 0.5 * W, floor_y}, {cx + 0.5 * W, floor_y + H}};
  std::vector<Particle> ps = seed_block(column, opt.particles_per_axis, 1.0, rng);

  MpmGrid grid;
  grid.resize(topo);
  MpmStats stats;
  SandCollapseResult r;
  r.particles = ps.size();
  const double m0 = total_mass(ps);
  const Vec2d g{0.0, -opt.gravity};
  const double v_ref = std::sqrt(opt.gravity * H);
  long quiet = 0;
  for (long n = 1; n <= opt.max_steps; ++n) {
    stats.max_speed = 0.0;
    p2g(ps, grid, sand, 1.0, stats);
    grid_update(grid, 1.0, g, bc, sand);
    g2p(ps, grid, sand, 1.0, stats);
    r.steps = n;
    // At rest once the fastest particle stays below 1% of the free-fall scale.
    if (n > 1000 && stats.max_speed < 0.01 * v_ref) {
      if (++quiet >= 200) {
        r.settled = true;
        break;
      }
    } else {
      quiet = 0;
    }
  }
  r.failures = stats.failures;
  r.mass_exact = ps.size() == r.particles && total_mass(ps) == m0;

  // Surface height per unit-wide bin.
  std::vector<double> h(static_cast<std::size_t>(dom.extent[0]), 0.0);
  for (const auto& p : ps) {
    auto& b = h[static_cast<std::size_t>(std::clamp(static_cast<int>(p.x[0]), 0, dom.extent[0] - 1))];
    b = std::max(b, p.x[1] - floor_y + 0.5 / opt.particles_per_axis);
  }
  const double hmax = *std::max_element(h.begin(), h.end());
  r.final_height = hmax;
  std::vector<std::pair<double, double>> left, right;
  int first = -1, last = -1;
  for (int x = 0; x < dom.extent[0]; ++x) {
    const double v = h[static_cast<std::size_t>(x)];
    if (v > 0.0) {
      if (first < 0) first = x;
      last = x;
    }
    if (v < 0.2 * hmax || v > 0.8 * hmax) continue;
    (x + 0.5 < cx ? left : right).push_back({x + 0.5, v});
  }
  r.left_slope = fit_slope(left);
  r.right_slope = fit_slope(right);
  r.runout = 0.5 * (last - first + 1) / (0.5 * W);
  r.seconds = seconds_since(t0);
  return r;
}

double rescale_roundtrip_error(RescaleConvention c, int samples, std::uint64_t seed) {
  CounterRng rng(seed);
  double worst = 0.0;
  for (int n = 0; n < samples; ++n) {
    const Vec2 u{rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
    const Sym2 s{rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01)};
    const double tau = rng.uniform(0.51, 2.0), tau1 = rescale_tau(tau, 1);
    if (c == RescaleConvention::post_collision && (std::abs(tau - 1.0) < 0.05 || std::abs(tau1 - 1.0) < 0.05))
      continue;
    const Sym2 r = rescale_S_down(rescale_S_up(s, u, tau, tau1, c), u, tau, tau1, c);
    for (std::size_t k = 0; k < 3; ++k) worst = std::max(worst, std::abs(r[k] - s[k]));
  }
  return worst;
}

double rescale_tau_composition_error(int samples, std::uint64_t seed) {
  CounterRng rng(seed);
  double worst = 0.0;
  for (int n = 0; n < samples; ++n) {
    const double tau = rng.uniform(0.51, 3.0);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        worst = std::max(worst, std::abs(rescale_tau(rescale_tau(tau, a), b) - rescale_tau(tau, a + b)));
  }
  return worst;
}

BoundaryCheckResult boundary_checks() {
  BoundaryCheckResult r;
  BoundarySpec bc;
  bc.faces[kXMin].kind = FaceKind::inlet;
  bc.faces[kXMin].inlet = {0.05, 0.5, 4.0};
  bc.faces[kXMax].kind = FaceKind::outlet;
  GridDomain dom;
  dom.extent = {32, 16};
  dom.periodic = {false, true};
  GridTopology topo = brute_force_grid(dom, RefineDriver{}, bc);
  const auto cells = build_boundary_cells(topo, bc);
  const SolverParams sp;

  FieldLevel in;
  in.cells = topo.level(0).cells();
  for (int k = 0; k < kMomentComps; ++k) in.comp[static_cast<std::size_t>(k)].assign(static_cast<std::size_t>(in.cells), 0.0);
  auto outlet_change = [&](const FieldLevel& a) {
    FieldLevel out = a;
    for (auto& v : out.comp) std::fill(v.begin(), v.end(), 0.0);
    apply_boundaries(cells[0], sp, a, out);
    double d = 0.0;
    for (const auto& o : cells[0].outlets)
      for (int k = 0; k < kMomentComps; ++k)
        d = std::max(d, std::abs(out(static_cast<Comp>(k), o.cell) - a(static_cast<Comp>(k), o.cell)));
    return d;
  };
  for (int c = 0; c < in.cells; ++c) {
    Moments<Lat> m;
    m.rho = 1.0 + 0.01 * std::sin(c);
    m.S = {0.001 * std::cos(c), 0.0, 0.0};
    store(in, c, m);
  }
  r.outlet_rest = outlet_change(in);
  Moments<Lat> m;
  m.rho = 1.01;
  m.u = {0.04, 0.01};
  m.S = seq<Lat>(m.u);
  for (int c = 0; c < in.cells; ++c) store(in, c, m);
  r.outlet_uniform = outlet_change(in);

  FieldLevel out = in;
  apply_boundaries(cells[0], sp, in, out);
  r.inlet_at_y0 = std::abs(bc.faces[kXMin].inlet.velocity(bc.faces[kXMin].inlet.y0));
  for (const auto& i : cells[0].inlets)
    if (i.y == bc.faces[kXMin].inlet.y0) r.inlet_at_y0 = std::max(r.inlet_at_y0, std::abs(out(kUx, i.cell)));
  return r;
}

}  // namespace glbm
