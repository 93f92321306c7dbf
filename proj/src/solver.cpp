#include "glbm/solver.hpp"

#include <algorithm>
#include <cmath>

#include "glbm/errors.hpp"
#include "glbm/parallel.hpp"

namespace glbm {

std::string to_string(RescaleConvention c) {
  switch (c) {
    case RescaleConvention::derived: return "derived";
    case RescaleConvention::paper_literal: return "paper_literal";
    case RescaleConvention::post_collision: return "post_collision";
  }
  return "?";
}

RescaleConvention rescale_convention_from_string(const std::string& s) {
  if (s == "derived") return RescaleConvention::derived;
  if (s == "paper_literal") return RescaleConvention::paper_literal;
  if (s == "post_collision") return RescaleConvention::post_collision;
  throw ConfigError("unknown rescale_convention '" + s + "'");
}

double rescale_tau(double tau, int k) {
  const double p = std::ldexp(1.0, k);
  return tau / p + (p - 1.0) / (2.0 * p);
}

double kappa_up(double tau_l, double tau_l1, RescaleConvention c) {
  switch (c) {
    case RescaleConvention::derived: return 2.0 * tau_l1 / tau_l;
    case RescaleConvention::paper_literal: return tau_l1 / (2.0 * tau_l);
    case RescaleConvention::post_collision: return 2.0 * (tau_l1 - 1.0) / (tau_l - 1.0);
  }
  return 1.0;
}

double kappa_down(double tau_l, double tau_l1, RescaleConvention c) {
  switch (c) {
    case RescaleConvention::derived: return tau_l / (2.0 * tau_l1);
    case RescaleConvention::paper_literal: return 2.0 * tau_l1 / tau_l;
    case RescaleConvention::post_collision: return (tau_l - 1.0) / (2.0 * (tau_l1 - 1.0));
  }
  return 1.0;
}

namespace {

Sym2 rescale(const Sym2& s, const Vec2& u, double kappa) {
  const Sym2 eq = seq<Lat>(u);
  Sym2 out;
  for (int k = 0; k < 3; ++k) out[k] = eq[k] + kappa * (s[k] - eq[k]);
  return out;
}

}  // namespace

Sym2 rescale_S_up(const Sym2& s_fine, const Vec2& u, double tau_l, double tau_l1, RescaleConvention c) {
  return rescale(s_fine, u, kappa_up(tau_l, tau_l1, c));
}

Sym2 rescale_S_down(const Sym2& s_coarse, const Vec2& u, double tau_l, double tau_l1,
                    RescaleConvention c) {
  return rescale(s_coarse, u, kappa_down(tau_l, tau_l1, c));
}

void SolverParams::validate() const {
  if (levels < 1) throw ConfigError("levels: must be >= 1");
  if (!(tau0 > 0.5)) throw ConfigError("tau0: must be > 0.5");
  if (!(rho0 > 0.0)) throw ConfigError("rho0: must be positive");
  if (!(eps_min > 0.0 && eps_min < 1.0)) throw ConfigError("eps_min: must lie in (0, 1)");
  if (!(tau_floor > 0.5)) throw ConfigError("tau_floor: must be > 0.5");
  if (mpm_cadence < 1) throw ConfigError("mpm_cadence: must be >= 1");
  if (rescale == RescaleConvention::post_collision && levels > 1) {
    for (int l = 0; l < levels; ++l)
      if (std::abs(rescale_tau(tau0, l) - 1.0) < 1e-9)
        throw ConfigError("rescale_convention: post_collision is singular at tau = 1");
  }
}

std::vector<LevelParams> make_level_params(const SolverParams& p) {
  std::vector<LevelParams> out(static_cast<std::size_t>(p.levels));
  for (int l = 0; l < p.levels; ++l) {
    auto& lp = out[static_cast<std::size_t>(l)];
    lp.dx = std::ldexp(1.0, l);
    lp.dt = lp.dx;
    lp.tau = rescale_tau(p.tau0, l);
    lp.nu = Lat::cs2 * (lp.tau - 0.5);
    lp.gravity = {p.gravity[0] * lp.dx, p.gravity[1] * lp.dx};
  }
  return out;
}

std::vector<BoundaryCells> build_boundary_cells(const GridTopology& topo, const BoundarySpec& bc) {
  std::vector<BoundaryCells> out(static_cast<std::size_t>(topo.levels()));
  const auto& dom = topo.domain();
  for (int l = 0; l < topo.levels(); ++l) {
    const auto& lv = topo.level(l);
    auto& bl = out[static_cast<std::size_t>(l)];
    for (int cell = 0; cell < lv.cells(); ++cell) {
      const CellRole role = lv.roles[static_cast<std::size_t>(cell)];
      const Index2 n = topo.node_of(l, cell);
      if (role == CellRole::inlet) {
        const FaceSpec* face = nullptr;
        for (int f = 0; f < 4 && !face; ++f) {
          const int a = f / 2;
          const int edge = (f % 2 == 0) ? 0 : dom.nodes(l, a) - 1;
          if (bc.faces[f].kind == FaceKind::inlet && !dom.periodic[a] && n[a] == edge) face = &bc.faces[f];
        }
        bl.inlets.push_back({cell, topo.position(l, cell)[1], face ? face->inlet : LogInlet{}});
      } else if (role == CellRole::outlet) {
        for (int f = 0; f < 4; ++f) {
          const int a = f / 2;
          if (dom.periodic[a] || bc.faces[f].kind != FaceKind::outlet) continue;
          const bool hi = f % 2 == 1;
          if (n[a] != (hi ? dom.nodes(l, a) - 1 : 0)) continue;
          Index2 in = n;
          in[a] += hi ? -1 : 1;
          const int inner = topo.find_cell(l, in);
          if (inner < 0) throw TopologyError("outlet cell without an inner neighbour");
          bl.outlets.push_back({cell, inner, a, hi ? 1.0 : -1.0});
          break;
        }
      }
    }
  }
  return out;
}

Moments<Lat> collide(const Moments<Lat>& m, const Vec2& force, double tau) {
  Moments<Lat> out;
  out.rho = m.rho;
  out.u = {m.u[0] + force[0] / (2.0 * m.rho), m.u[1] + force[1] / (2.0 * m.rho)};
  const double inv = 1.0 / tau;
  const double fc = (2.0 * tau - 1.0) / (2.0 * tau * m.rho);
  const Sym2 uu = seq<Lat>(m.u);
  const Sym2 fu{2.0 * force[0] * m.u[0], force[0] * m.u[1] + m.u[0] * force[1],
                2.0 * force[1] * m.u[1]};
  for (int k = 0; k < 3; ++k) out.S[k] = (1.0 - inv) * m.S[k] + inv * uu[k] + fc * fu[k];
  return out;
}

namespace {

RawMoments<Lat> pull(const LevelTopology& lv, const FieldLevel& in, int cell) {
  RawMoments<Lat> r;
  const int* src = &lv.stream_src[static_cast<std::size_t>(cell) * 9];
  const Moments<Lat> self = load(in, cell);
  for (int i = 0; i < Lat::q; ++i) {
    double fi;
    if (src[i] >= 0) {
      fi = reconstruct_one(load(in, src[i]), i);
    } else if (src[i] == kSrcBounce) {
      fi = reconstruct_one(self, Lat::opposite[static_cast<std::size_t>(i)]);
    } else {
      throw TopologyError("streaming source missing for an active cell");
    }
    accumulate(r, i, fi);
  }
  return r;
}

[[noreturn]] void diverged(const GridTopology& topo, int l, int cell, const char* what) {
  const Index2 n = topo.node_of(l, cell);
  throw DivergenceError(std::string(what) + " at level " + std::to_string(l) + " node (" +
                        std::to_string(n[0]) + "," + std::to_string(n[1]) + ")");
}

void check(const GridTopology& topo, int l, int cell, const Moments<Lat>& m) {
  if (!(m.rho > 0.0) || !std::isfinite(m.rho)) diverged(topo, l, cell, "non-positive density");
  if (!std::isfinite(m.u[0] + m.u[1] + m.S[0] + m.S[1] + m.S[2]))
    diverged(topo, l, cell, "non-finite moments");
}

void copy_cell(const FieldLevel& in, FieldLevel& out, int cell) {
  for (int c = 0; c < kMomentComps; ++c)
    out.comp[static_cast<std::size_t>(c)][static_cast<std::size_t>(cell)] =
        in.comp[static_cast<std::size_t>(c)][static_cast<std::size_t>(cell)];
}

}  // namespace

void stream_collide(const GridTopology& topo, int l, const LevelParams& lp, const FieldLevel& in,
                    FieldLevel& out) {
  const auto& lv = topo.level(l);
  parallel_for(lv.tiles.size(), [&](int b, int e) {
    for (int cell = b * kTileCells; cell < e * kTileCells; ++cell) {
      const CellRole role = lv.roles[static_cast<std::size_t>(cell)];
      if (role == CellRole::solid) copy_cell(in, out, cell);
      if (role != CellRole::active) continue;
      const RawMoments<Lat> r = pull(lv, in, cell);
      if (!(r.rho > 0.0)) diverged(topo, l, cell, "non-positive density");
      const Vec2 force{r.rho * lp.gravity[0], r.rho * lp.gravity[1]};
      const Moments<Lat> m = collide(from_raw(r, force), force, lp.tau);
      check(topo, l, cell, m);
      store(out, cell, m);
    }
  });
}

void stream_only(const GridTopology& topo, int l, const FieldLevel& in, FieldLevel& out) {
  const auto& lv = topo.level(l);
  parallel_for(lv.tiles.size(), [&](int b, int e) {
    for (int cell = b * kTileCells; cell < e * kTileCells; ++cell) {
      const CellRole role = lv.roles[static_cast<std::size_t>(cell)];
      if (role == CellRole::solid) copy_cell(in, out, cell);
      if (role != CellRole::active) continue;
      const RawMoments<Lat> r = pull(lv, in, cell);
      if (!(r.rho > 0.0)) diverged(topo, l, cell, "non-positive density");
      out(kRho, cell) = r.rho;
      out(kUx, cell) = r.j[0];
      out(kUy, cell) = r.j[1];
      out(kSxx, cell) = r.pi[0];
      out(kSxy, cell) = r.pi[1];
      out(kSyy, cell) = r.pi[2];
    }
  });
}

void collide_coupled(const GridTopology& topo, int l, const LevelParams& lp, const SolverParams& sp,
                     FieldLevel& io) {
  const auto& lv = topo.level(l);
  parallel_for(lv.tiles.size(), [&](int b, int e) {
    for (int cell = b * kTileCells; cell < e * kTileCells; ++cell) {
      if (lv.roles[static_cast<std::size_t>(cell)] != CellRole::active) continue;
      RawMoments<Lat> r;
      r.rho = io(kRho, cell);
      r.j = {io(kUx, cell), io(kUy, cell)};
      r.pi = {io(kSxx, cell), io(kSxy, cell), io(kSyy, cell)};
      const Vec2 force{io(kFx, cell), io(kFy, cell)};
      const double eps = std::clamp(io(kEps, cell), sp.eps_min, 1.0);
      const double tau = std::max(eps * lp.tau, sp.tau_floor);
      const Moments<Lat> m = collide(from_raw(r, force), force, tau);
      check(topo, l, cell, m);
      store(io, cell, m);
    }
  });
}

void downward_transfer(const GridTopology& topo, int l, int s, const SolverParams& sp,
                       const std::vector<LevelParams>& lp, const FieldLevel& coarse_old,
                       const FieldLevel& coarse_new, FieldLevel& fine) {
  const auto& entries = topo.interfaces().down[static_cast<std::size_t>(l)];
  const double tau_l = lp[static_cast<std::size_t>(l)].tau;
  const double tau_l1 = lp[static_cast<std::size_t>(l) + 1].tau;
  parallel_for(static_cast<int>(entries.size()), [&](int b, int e) {
    for (int k = b; k < e; ++k) {
      const DownwardEntry& d = entries[static_cast<std::size_t>(k)];
      double rho = 0.0;
      Vec2 u{};
      Sym2 S{};
      for (int j = 0; j < 4; ++j) {
        const double w = d.weight[static_cast<std::size_t>(j)];
        if (w == 0.0) continue;
        Moments<Lat> m = load(coarse_old, d.src[static_cast<std::size_t>(j)]);
        if (s == 2) {
          const Moments<Lat> n = load(coarse_new, d.src[static_cast<std::size_t>(j)]);
          m.rho = 0.5 * (m.rho + n.rho);
          for (int a = 0; a < 2; ++a) m.u[a] = 0.5 * (m.u[a] + n.u[a]);
          for (int c = 0; c < 3; ++c) m.S[c] = 0.5 * (m.S[c] + n.S[c]);
        }
        rho += w * m.rho;
        for (int a = 0; a < 2; ++a) u[a] += w * m.u[a];
        for (int c = 0; c < 3; ++c) S[c] += w * m.S[c];
      }
      Moments<Lat> out;
      out.rho = rho;
      out.u = u;
      out.S = rescale_S_down(S, u, tau_l, tau_l1, sp.rescale);
      store(fine, d.cell, out);
    }
  });
}

void upward_transfer(const GridTopology& topo, int l, const SolverParams& sp,
                     const std::vector<LevelParams>& lp, const FieldLevel& fine, FieldLevel& coarse) {
  const auto& entries = topo.interfaces().up[static_cast<std::size_t>(l) + 1];
  const double tau_l = lp[static_cast<std::size_t>(l)].tau;
  const double tau_l1 = lp[static_cast<std::size_t>(l) + 1].tau;
  parallel_for(static_cast<int>(entries.size()), [&](int b, int e) {
    for (int k = b; k < e; ++k) {
      const UpwardEntry& up = entries[static_cast<std::size_t>(k)];
      Moments<Lat> m = load(fine, up.src[0]);
      if (sp.upward == UpwardMode::average && up.count > 1) {
        for (int j = 1; j < up.count; ++j) {
          const Moments<Lat> n = load(fine, up.src[static_cast<std::size_t>(j)]);
          m.rho += n.rho;
          for (int a = 0; a < 2; ++a) m.u[a] += n.u[a];
          for (int c = 0; c < 3; ++c) m.S[c] += n.S[c];
        }
        const double inv = 1.0 / up.count;
        m.rho *= inv;
        for (int a = 0; a < 2; ++a) m.u[a] *= inv;
        for (int c = 0; c < 3; ++c) m.S[c] *= inv;
      }
      m.S = rescale_S_up(m.S, m.u, tau_l, tau_l1, sp.rescale);
      store(coarse, up.cell, m);
    }
  });
}

void apply_boundaries(const BoundaryCells& cells, const SolverParams& sp, const FieldLevel& in,
                      FieldLevel& out) {
  for (const auto& o : cells.outlets) {
    const Moments<Lat> b = load(in, o.cell);
    const Moments<Lat> i = load(in, o.inner);
    const double un = std::clamp(o.sign * i.u[static_cast<std::size_t>(o.axis)], 0.0, 1.0);
    Moments<Lat> m;
    m.rho = b.rho - un * (b.rho - i.rho);
    for (int a = 0; a < 2; ++a) m.u[a] = b.u[a] - un * (b.u[a] - i.u[a]);
    for (int c = 0; c < 3; ++c) m.S[c] = b.S[c] - un * (b.S[c] - i.S[c]);
    store(out, o.cell, m);
  }
  for (const auto& in_cell : cells.inlets) {
    Moments<Lat> m;
    m.rho = sp.rho0;
    m.u = {in_cell.profile.velocity(in_cell.y), 0.0};
    m.S = seq<Lat>(m.u);
    store(out, in_cell.cell, m);
  }
}

std::vector<int> owned_cells(const GridTopology& topo, int l) {
  std::vector<int> out;
  const auto& lv = topo.level(l);
  for (int s = 0; s < lv.tiles.size(); ++s) {
    if (topo.has_children(lv.tiles.key(s))) continue;
    for (int c = s * kTileCells; c < (s + 1) * kTileCells; ++c)
      if (lv.roles[static_cast<std::size_t>(c)] != CellRole::solid) out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------

MultiLevelSolver::MultiLevelSolver(GridTopology& topo, BoundarySpec bc, SolverParams p, bool coupling)
    : topo_(topo), bc_(std::move(bc)), params_(p), coupling_(coupling) {
  params_.validate();
  if (params_.levels != topo_.levels()) throw ConfigError("levels: solver and topology disagree");
  lp_ = make_level_params(params_);
  counts_.assign(static_cast<std::size_t>(params_.levels), 0);
  topology_changed();
}

void MultiLevelSolver::topology_changed() {
  bcells_ = build_boundary_cells(topo_, bc_);
  pp_.resize(topo_, coupling_);
}

void MultiLevelSolver::initialize(const InitField& init) {
  for (int l = 0; l < topo_.levels(); ++l) {
    FieldLevel& a = pp_.tree[0].level(l);
    FieldLevel& b = pp_.tree[1].level(l);
    for (int cell = 0; cell < topo_.level(l).cells(); ++cell) {
      const Moments<Lat> m = init(l, topo_.position(l, cell));
      store(a, cell, m);
      store(b, cell, m);
    }
  }
}

void MultiLevelSolver::step() {
  advance(topo_.levels() - 1, 1);
  ++top_steps_;
}

void MultiLevelSolver::advance(int l, int s) {
  const int L = topo_.levels();
  if (l < L - 1) downward_transfer(topo_, l, s, params_, lp_, pp_.write(l + 1), pp_.read(l + 1), pp_.read(l));
  FieldLevel& in = pp_.read(l);
  FieldLevel& out = pp_.write(l);
  if (l == 0 && hook_) {
    stream_only(topo_, 0, in, out);
    hook_->exchange(in, out);
    collide_coupled(topo_, 0, lp_[0], params_, out);
  } else {
    stream_collide(topo_, l, lp_[static_cast<std::size_t>(l)], in, out);
  }
  apply_boundaries(bcells_[static_cast<std::size_t>(l)], params_, in, out);
  ++pp_.bounce[static_cast<std::size_t>(l)];
  ++counts_[static_cast<std::size_t>(l)];
  if (l == 0) ++finest_steps_;
  if (l < L - 1 && s == 2) upward_transfer(topo_, l, params_, lp_, pp_.read(l), pp_.read(l + 1));
  if (l > 0) {
    advance(l - 1, 1);
    advance(l - 1, 2);
  }
}

double MultiLevelSolver::total_mass() const {
  double m = 0.0;
  for (int l = 0; l < topo_.levels(); ++l) {
    const double w = std::ldexp(1.0, 2 * l);
    const FieldLevel& f = pp_.read(l);
    for (int c : owned_cells(topo_, l)) m += w * f(kRho, c);
  }
  return m;
}

Vec2 MultiLevelSolver::total_momentum() const {
  Vec2 p{};
  for (int l = 0; l < topo_.levels(); ++l) {
    const double w = std::ldexp(1.0, 2 * l);
    const FieldLevel& f = pp_.read(l);
    for (int c : owned_cells(topo_, l)) {
      p[0] += w * f(kRho, c) * f(kUx, c);
      p[1] += w * f(kRho, c) * f(kUy, c);
    }
  }
  return p;
}

double MultiLevelSolver::kinetic_energy() const {
  double e = 0.0;
  for (int l = 0; l < topo_.levels(); ++l) {
    const double w = std::ldexp(1.0, 2 * l);
    const FieldLevel& f = pp_.read(l);
    for (int c : owned_cells(topo_, l))
      e += 0.5 * w * f(kRho, c) * (f(kUx, c) * f(kUx, c) + f(kUy, c) * f(kUy, c));
  }
  return e;
}

}  // namespace glbm
