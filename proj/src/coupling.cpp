#include "glbm/coupling.hpp"

#include <algorithm>
#include <cmath>

#include "glbm/errors.hpp"
#include "glbm/parallel.hpp"

namespace glbm {

void UnitScale::validate() const {
  auto positive = [](double v, const char* key) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(key) + ": must be positive and finite");
  };
  positive(dx_phys, "domain.dx");
  positive(dt_phys, "domain.dt");
  positive(rho_phys, "domain.rho");
}

void CouplingParams::validate() const {
  if (!(eps_min > 0.0 && eps_min < 1.0)) throw ConfigError("eps_min: must lie in (0, 1)");
  if (!(nu > 0.0)) throw ConfigError("coupling.nu: must be positive");
  if (!(d_p > 0.0)) throw ConfigError("coupling.d_p: must be positive");
  if (!(re_min > 0.0)) throw ConfigError("coupling.re_min: must be positive");
  if (!(eta_surface > 0.0 && eta_surface <= 1.0)) throw ConfigError("coupling.eta_surface: must lie in (0, 1]");
  if (entrainment < 0.0) throw ConfigError("powder.E: must be non-negative");
  if (diffusion < 0.0) throw ConfigError("powder.D: must be non-negative");
  if (diffusion > 0.25) throw ConfigError("powder.D: D dt / dx^2 exceeds the forward-Euler limit 0.25");
  if (diffusion_sign != 1.0 && diffusion_sign != -1.0) throw ConfigError("powder.diffusion_sign: must be +1 or -1");
}

void CouplingFields::resize(const GridTopology& topo) {
  const int n = topo.level(0).cells();
  const auto N = static_cast<std::size_t>(n);
  eta.assign(N, 0.0);
  eps_raw.assign(N, 1.0);
  eps.assign(N, 1.0);
  area.assign(N, 0.0);
  mass.assign(N, 0.0);
  v_cell.assign(N, Vec2d::Zero());
  sigma.assign(N, {0.0, 0.0, 0.0});
  drag_s.assign(N, Vec2d::Zero());
  drag_f.assign(N, Vec2d::Zero());
  grad_term.assign(N, Vec2d::Zero());
  force.assign(N, Vec2d::Zero());
  nbr.assign(N, {-1, -1, -1, -1});
  const auto& roles = topo.level(0).roles;
  for (int c = 0; c < n; ++c) {
    if (roles[static_cast<std::size_t>(c)] == CellRole::solid) continue;
    const Index2 p = topo.node_of(0, c);
    const Index2 off[4] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
    for (int k = 0; k < 4; ++k) {
      const int o = topo.find_cell(0, {p[0] + off[k][0], p[1] + off[k][1]});
      if (o >= 0 && roles[static_cast<std::size_t>(o)] != CellRole::solid) nbr[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] = o;
    }
  }
}

void update_fractions(CouplingFields& f, const std::vector<double>& phi, double eps_min) {
  for (int c = 0; c < f.cells(); ++c) {
    const auto i = static_cast<std::size_t>(c);
    f.eps_raw[i] = 1.0 - f.eta[i] - (phi.empty() ? 0.0 : phi[i]);
    f.eps[i] = std::clamp(f.eps_raw[i], eps_min, 1.0);
  }
}

void rasterize_fractions(const MpmGrid& grid, const std::vector<double>& phi, double eps_min, CouplingFields& f) {
  for (int c = 0; c < grid.nodes(); ++c) {
    const auto i = static_cast<std::size_t>(c);
    f.eta[i] = grid.volume[i];
    f.area[i] = grid.area[i];
    f.mass[i] = grid.mass[i];
    f.v_cell[i] = grid.mass[i] > 0.0 ? Vec2d(grid.mass_vel[i] / grid.mass[i]) : Vec2d::Zero();
    if (grid.volume[i] > 0.0) {
      for (int k = 0; k < 3; ++k) f.sigma[i][static_cast<std::size_t>(k)] = grid.stress[i][static_cast<std::size_t>(k)] / grid.volume[i];
    } else {
      f.sigma[i] = {0.0, 0.0, 0.0};
    }
  }
  update_fractions(f, phi, eps_min);
}

void rasterize_fractions(const std::vector<Particle>& particles, const GridTopology& topo,
                         const std::vector<double>& phi, double eps_min, CouplingFields& f) {
  MpmGrid g;
  g.resize(topo);
  MpmStats st;
  p2g(particles, g, SandParams{}, 0.0, st);
  if (f.cells() != g.nodes()) f.resize(topo);
  rasterize_fractions(g, phi, eps_min, f);
}

double difelice_cd(double re) {
  const double a = 0.63 + 4.8 / std::sqrt(re);
  return a * a;
}

double difelice_chi(double re) {
  const double d = 1.5 - std::log10(re);
  return 3.7 - 0.65 * std::exp(-0.5 * d * d);
}

DragPair difelice_drag(const Vec2d& u, const Vec2d& v, double eps, double rho_f, double area, const CouplingParams& p) {
  DragPair out;
  const Vec2d w = u - v;
  const double wn = w.norm();
  if (wn == 0.0 || area == 0.0) return out;
  const double re = std::max(eps * wn * p.d_p / p.nu, p.re_min);
  out.sediment = 0.5 * difelice_cd(re) * std::pow(eps, -difelice_chi(re)) * rho_f * area * wn * w;
  out.fluid = -out.sediment;
  return out;
}

void compute_drag(const std::vector<int>& cells, const std::vector<Vec2d>& u, const std::vector<double>& rho,
                  double dt, const CouplingParams& p, CouplingFields& f) {
  parallel_for(static_cast<int>(cells.size()), [&](int b, int e) {
    for (int k = b; k < e; ++k) {
      const auto i = static_cast<std::size_t>(cells[static_cast<std::size_t>(k)]);
      if (f.area[i] == 0.0 || !(f.mass[i] > 0.0)) {
        f.drag_s[i] = Vec2d::Zero();
        f.drag_f[i] = Vec2d::Zero();
        continue;
      }
      const DragPair d = difelice_drag(u[i], f.v_cell[i], f.eps[i], rho[i], f.area[i], p);
      Vec2d fs = d.sediment;
      if (p.implicit_drag) {
        const double wn = (u[i] - f.v_cell[i]).norm();
        if (wn > 0.0) {
          const double K = fs.norm() / wn;
          const double x = K * dt * (1.0 / rho[i] + 1.0 / f.mass[i]);
          if (x > 1e-12) fs *= -std::expm1(-x) / x;
        }
      }
      f.drag_s[i] = fs;
      f.drag_f[i] = -fs;
    }
  });
}

Vec2d eps_gradient(const CouplingFields& f, int cell) {
  const auto i = static_cast<std::size_t>(cell);
  Vec2d g = Vec2d::Zero();
  for (int a = 0; a < 2; ++a) {
    const int m = f.nbr[i][static_cast<std::size_t>(2 * a)];
    const int p = f.nbr[i][static_cast<std::size_t>(2 * a + 1)];
    if (m >= 0 && p >= 0) g[a] = 0.5 * (f.eps[static_cast<std::size_t>(p)] - f.eps[static_cast<std::size_t>(m)]);
    else if (p >= 0) g[a] = f.eps[static_cast<std::size_t>(p)] - f.eps[i];
    else if (m >= 0) g[a] = f.eps[i] - f.eps[static_cast<std::size_t>(m)];
  }
  return g;
}

Vec2d mixture_force(CouplingFields& f, int cell, double rho, const Vec2& gravity, double rho0) {
  const auto i = static_cast<std::size_t>(cell);
  Vec2d F{rho * gravity[0], rho * gravity[1]};
  const Vec2d g = eps_gradient(f, cell);
  if (g[0] != 0.0 || g[1] != 0.0) {
    f.grad_term[i] = ((rho - rho0) / f.eps[i]) * g;
    F += f.grad_term[i];
  } else {
    f.grad_term[i] = Vec2d::Zero();
  }
  if (f.area[i] != 0.0) F += f.drag_f[i];
  f.force[i] = F;
  return F;
}

double entrainment_rate(const Vec2d& v, const std::array<double, 3>& s, double E) {
  const double vn = v.norm();
  if (vn == 0.0) return 0.0;
  const double vsv = v[0] * (s[0] * v[0] + s[1] * v[1]) + v[1] * (s[1] * v[0] + s[2] * v[1]);
  return E * std::abs(vsv) / vn;
}

bool surface_cell(const CouplingFields& f, int cell, const CouplingParams& p) {
  const auto i = static_cast<std::size_t>(cell);
  if (!(f.eta[i] > 0.0 && f.eta[i] < p.eta_surface)) return false;
  for (int n : f.nbr[i])
    if (n >= 0 && f.eta[static_cast<std::size_t>(n)] < p.eta_empty) return true;
  return false;
}

namespace {

// Bilinear sample of a level-0 cell field; missing cells contribute zero.
template <class T, class Get>
T sample(const GridTopology& topo, Vec2d x, const Get& get, T zero) {
  const auto& dom = topo.domain();
  for (int a = 0; a < 2; ++a)
    if (!dom.periodic[static_cast<std::size_t>(a)]) x[a] = std::clamp(x[a], 0.0, dom.nodes(0, a) - 1.0);
  const int i0 = static_cast<int>(std::floor(x[0]));
  const int j0 = static_cast<int>(std::floor(x[1]));
  const double fx = x[0] - i0, fy = x[1] - j0;
  T out = zero;
  const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  for (int k = 0; k < 4; ++k) {
    if (w[k] == 0.0) continue;
    const int c = topo.find_cell(0, {i0 + (k & 1), j0 + (k >> 1)});
    if (c >= 0) out += w[k] * get(c);
  }
  return out;
}

}  // namespace

double powder_step(const GridTopology& topo, const std::vector<double>& phi_in, const std::vector<Vec2d>& u,
                   double dt, const CouplingParams& p, CouplingFields& f, std::vector<double>& phi_out,
                   bool entrain) {
  const auto& roles = topo.level(0).roles;
  const int n = topo.level(0).cells();
  std::vector<double> adv(static_cast<std::size_t>(n), 0.0);
  auto vel = [&](int c) { return u[static_cast<std::size_t>(c)]; };
  auto phi = [&](int c) { return phi_in[static_cast<std::size_t>(c)]; };
  parallel_for(n, [&](int b, int e) {
    for (int c = b; c < e; ++c) {
      if (roles[static_cast<std::size_t>(c)] == CellRole::solid) continue;
      const Index2 nd = topo.node_of(0, c);
      const Vec2d x{static_cast<double>(nd[0]), static_cast<double>(nd[1])};
      const Vec2d k1 = u[static_cast<std::size_t>(c)];
      const Vec2d k2 = sample(topo, Vec2d(x - 0.5 * dt * k1), vel, Vec2d(Vec2d::Zero()));
      const Vec2d k3 = sample(topo, Vec2d(x - 0.75 * dt * k2), vel, Vec2d(Vec2d::Zero()));
      const Vec2d xb = x - dt * (2.0 * k1 + 3.0 * k2 + 4.0 * k3) / 9.0;
      adv[static_cast<std::size_t>(c)] = sample(topo, xb, phi, 0.0);
    }
  });
  const double k = p.diffusion_sign * p.diffusion * dt;
  parallel_for(n, [&](int b, int e) {
    for (int c = b; c < e; ++c) {
      const auto i = static_cast<std::size_t>(c);
      double lap = 0.0;
      for (int nb : f.nbr[i])
        if (nb >= 0) lap += adv[static_cast<std::size_t>(nb)] - adv[i];
      phi_out[i] = (roles[i] == CellRole::solid) ? 0.0 : adv[i] + k * lap;
    }
  });
  if (!entrain || p.entrainment == 0.0) return 0.0;
  std::vector<int> surface;
  for (int c = 0; c < n; ++c)
    if (roles[static_cast<std::size_t>(c)] == CellRole::active && surface_cell(f, c, p)) surface.push_back(c);
  double total = 0.0;
  for (int c : surface) {
    const auto i = static_cast<std::size_t>(c);
    const double d = std::min(entrainment_rate(f.v_cell[i], f.sigma[i], p.entrainment) * dt, f.eta[i]);
    f.eta[i] -= d;
    phi_out[i] += d;
    total += d;
  }
  return total;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<int> active_cells(const GridTopology& topo) {
  std::vector<int> out;
  const auto& roles = topo.level(0).roles;
  for (int c = 0; c < topo.level(0).cells(); ++c)
    if (roles[static_cast<std::size_t>(c)] == CellRole::active) out.push_back(c);
  return out;
}

RefineDriver make_driver(const std::vector<Particle>& ps, const std::vector<Box>& mask) {
  RefineDriver d;
  d.particles.reserve(ps.size());
  for (const auto& p : ps) d.particles.push_back({p.x[0], p.x[1]});
  d.refine_mask = mask;
  return d;
}

}  // namespace

CoupledSimulation::CoupledSimulation(const GridDomain& dom, CoupledConfig cfg, std::vector<Particle> particles,
                                     bool coupling)
    : cfg_(std::move(cfg)),
      topo_(brute_force_grid(dom, make_driver(particles, cfg_.refine_mask), cfg_.bc)),
      solver_(topo_, cfg_.bc, cfg_.solver, coupling),
      coupling_(coupling),
      particles_(std::move(particles)),
      adapter_(cfg_.hysteresis) {
  cfg_.coupling.eps_min = cfg_.solver.eps_min;
  cfg_.coupling.rho0 = cfg_.solver.rho0;
  cfg_.coupling.nu = solver_.level_params()[0].nu;
  cfg_.coupling.validate();
  cfg_.sand.validate();
  grid_.resize(topo_);
  fields_.resize(topo_);
  active0_ = active_cells(topo_);
  if (coupling_) solver_.set_hook(this);
  // Seed the hysteresis memory with the initial request set.
  if (cfg_.adapt) adapter_.update(topo_, cfg_.bc, driver());
}

RefineDriver CoupledSimulation::driver() const { return make_driver(particles_, cfg_.refine_mask); }

void CoupledSimulation::initialize(const InitField& init) { solver_.initialize(init); }

void CoupledSimulation::exchange(const FieldLevel& read, FieldLevel& write) {
  const int cadence = cfg_.solver.mpm_cadence;
  const double dt_mpm = cadence;
  const auto& cp = cfg_.coupling;
  const Vec2& g = solver_.level_params()[0].gravity;
  const int n = topo_.level(0).cells();
  const auto N = static_cast<std::size_t>(n);

  if (mpm_phase_ % cadence == 0 && !particles_.empty()) p2g(particles_, grid_, cfg_.sand, dt_mpm, stats_);
  rasterize_fractions(grid_, {}, cp.eps_min, fields_);

  std::vector<double>& phi_out = write.comp[kPhi];
  if (cp.powder) {
    std::vector<Vec2d> u(N, Vec2d::Zero());
    for (std::size_t i = 0; i < N; ++i) {
      const double r = read.comp[kRho][i];
      if (r > 0.0) u[i] = {(r * read.comp[kUx][i] - 0.5 * read.comp[kFx][i]) / r,
                           (r * read.comp[kUy][i] - 0.5 * read.comp[kFy][i]) / r};
    }
    entrained_ += powder_step(topo_, read.comp[kPhi], u, 1.0, cp, fields_, phi_out);
  } else {
    std::fill(phi_out.begin(), phi_out.end(), 0.0);
  }
  update_fractions(fields_, phi_out, cp.eps_min);

  // Drag from the streamed, pre-force fluid velocity.
  std::vector<Vec2d> u(N, Vec2d::Zero());
  std::vector<double> rho(N, 1.0);
  for (int c : active0_) {
    const auto i = static_cast<std::size_t>(c);
    rho[i] = write.comp[kRho][i];
    u[i] = {write.comp[kUx][i] / rho[i], write.comp[kUy][i] / rho[i]};
  }
  compute_drag(active0_, u, rho, 1.0, cp, fields_);

  const auto& roles = topo_.level(0).roles;
  for (int c = 0; c < n; ++c) {
    const auto i = static_cast<std::size_t>(c);
    if (roles[i] != CellRole::active) continue;
    const double r = write.comp[kRho][i];
    const Vec2d F = mixture_force(fields_, c, r, g, cp.rho0);
    write.comp[kFx][i] = F[0];
    write.comp[kFy][i] = F[1];
    write.comp[kEps][i] = fields_.eps[i];
    audit_.gravity_impulse += Vec2d{r * g[0], r * g[1]};
    audit_.gradient_impulse += fields_.grad_term[i];
    if (fields_.area[i] != 0.0) {
      grid_.impulse[i] += fields_.drag_s[i];
      audit_.drag_impulse += fields_.drag_s[i];
      max_pair_error_ = std::max(max_pair_error_, (fields_.drag_f[i] + fields_.drag_s[i]).cwiseAbs().maxCoeff());
    }
  }

  if (++mpm_phase_ % cadence == 0 && !particles_.empty()) {
    const Vec2d gv{g[0], g[1]};
    grid_update(grid_, dt_mpm, gv, cfg_.bc, cfg_.sand);
    g2p(particles_, grid_, cfg_.sand, dt_mpm, stats_);
    audit_.gravity_impulse += total_mass(particles_) * dt_mpm * gv;
  }
}

void CoupledSimulation::step() {
  const Vec2 j0 = solver_.total_momentum();
  const Vec2d p0 = total_momentum(particles_);
  audit_ = MomentumAudit{};
  max_pair_error_ = 0.0;
  solver_.step();
  const Vec2 j1 = solver_.total_momentum();
  audit_.fluid_change = {j1[0] - j0[0], j1[1] - j0[1]};
  audit_.sediment_change = total_momentum(particles_) - p0;
  if (cfg_.adapt && coupling_ && mpm_phase_ % cfg_.solver.mpm_cadence == 0) adapt();
}

void CoupledSimulation::adapt() {
  const AdaptReport rep = adapter_.update(solver_, driver());
  if (!rep.violations.empty()) throw TopologyError("adaptation failed: " + rep.violations.front());
  if (!rep.changed) return;
  ++adapt_changes_;
  grid_.resize(topo_);
  fields_.resize(topo_);
  active0_ = active_cells(topo_);
}

StepDiagnostics CoupledSimulation::diagnostics() const {
  StepDiagnostics d;
  d.step = solver_.top_steps();
  d.fluid_momentum = solver_.total_momentum();
  d.sediment_momentum = total_momentum(particles_);
  d.drag_impulse = audit_.drag_impulse;
  const FieldLevel& f0 = solver_.current(0);
  if (!f0.comp[kPhi].empty())
    for (int c : active0_) d.phi_sum += f0(kPhi, c);
  for (int l = 0; l < topo_.levels(); ++l) d.tiles.push_back(topo_.tiles(l).size());
  for (int c : active0_) d.eps_min = std::min(d.eps_min, fields_.eps[static_cast<std::size_t>(c)]);
  d.max_drag_pair_error = max_pair_error_;
  return d;
}

}  // namespace glbm
