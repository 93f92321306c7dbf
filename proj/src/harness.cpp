#include "glbm/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "glbm/adapt.hpp"
#include "glbm/adapt_fuzz.hpp"
#include "glbm/errors.hpp"
#include "glbm/parallel.hpp"
#include "glbm/rng.hpp"
#include "glbm/toml.hpp"
#include "glbm/validation.hpp"

namespace glbm {

namespace fs = std::filesystem;

double DuneSpec::surface(double x) const {
  const double d = std::abs(x - center);
  if (d >= half_width) return base;
  const double c = std::cos(0.5 * std::numbers::pi * d / half_width);
  return base + height * c * c;
}

int edit_distance(const std::string& a, const std::string& b) {
  std::vector<int> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    int diag = row[0];
    row[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

namespace {

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// ---------------------------------------------------------------------------
// Scene reading

class Section {
 public:
  Section(const toml::Table* t, std::string path, std::vector<std::string>& errs)
      : t_(t), path_(std::move(path)), errs_(&errs) {}

  bool present() const { return t_ != nullptr; }
  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  void error(const std::string& key, const std::string& what) { errs_->push_back(key_path(key) + ": " + what); }

  const toml::Value* get(const std::string& key) {
    known_.insert(key);
    if (!t_) return nullptr;
    auto it = t_->find(key);
    return it == t_->end() ? nullptr : &it->second;
  }

  bool number(const std::string& key, double& out) {
    const toml::Value* v = get(key);
    if (!v) return false;
    if (!v->is_number()) return type_error(key, "a number", *v);
    if (!std::isfinite(v->as_double())) {
      error(key, "must be finite");
      return false;
    }
    out = v->as_double();
    return true;
  }

  bool integer(const std::string& key, long& out) {
    const toml::Value* v = get(key);
    if (!v) return false;
    if (!v->is_int()) return type_error(key, "an integer", *v);
    out = static_cast<long>(v->as_int());
    return true;
  }

  bool boolean(const std::string& key, bool& out) {
    const toml::Value* v = get(key);
    if (!v) return false;
    if (!v->is_bool()) return type_error(key, "a boolean", *v);
    out = v->as_bool();
    return true;
  }

  bool string(const std::string& key, std::string& out) {
    const toml::Value* v = get(key);
    if (!v) return false;
    if (!v->is_string()) return type_error(key, "a string", *v);
    out = v->as_string();
    return true;
  }

  bool numbers(const std::string& key, std::vector<double>& out, std::size_t n) {
    const toml::Value* v = get(key);
    if (!v) return false;
    return numbers_of(key, *v, out, n);
  }

  bool vec2(const std::string& key, Vec2& out) {
    std::vector<double> v;
    if (!numbers(key, v, 2)) return false;
    out = {v[0], v[1]};
    return true;
  }

  bool strings(const std::string& key, std::vector<std::string>& out) {
    const toml::Value* v = get(key);
    if (!v) return false;
    if (!v->is_array()) return type_error(key, "an array of strings", *v);
    out.clear();
    for (const auto& x : v->as_array()) {
      if (!x.is_string()) return type_error(key, "an array of strings", x);
      out.push_back(x.as_string());
    }
    return true;
  }

  /// Array of [x0, y0, x1, y1] boxes.
  bool boxes(const std::string& key, std::vector<Box>& out) {
    const toml::Value* v = get(key);
    if (!v) return false;
    if (!v->is_array()) return type_error(key, "an array of [x0, y0, x1, y1] boxes", *v);
    out.clear();
    bool ok = true;
    for (std::size_t i = 0; i < v->as_array().size(); ++i) {
      std::vector<double> b;
      const std::string k = key + "[" + std::to_string(i) + "]";
      if (!numbers_of(k, v->as_array()[i], b, 4)) {
        ok = false;
        continue;
      }
      if (!(b[0] < b[2] && b[1] < b[3])) {
        error(k, "box needs x0 < x1 and y0 < y1");
        ok = false;
        continue;
      }
      out.push_back({{b[0], b[1]}, {b[2], b[3]}});
    }
    return ok;
  }

  Section sub(const std::string& key) {
    const toml::Value* v = get(key);
    if (v && !v->is_table()) {
      type_error(key, "a table", *v);
      v = nullptr;
    }
    return Section(v ? &v->as_table() : nullptr, key_path(key), *errs_);
  }

  std::vector<Section> tables(const std::string& key) {
    std::vector<Section> out;
    const toml::Value* v = get(key);
    if (!v) return out;
    if (!v->is_array()) {
      type_error(key, "an array of tables", *v);
      return out;
    }
    for (std::size_t i = 0; i < v->as_array().size(); ++i) {
      const auto& x = v->as_array()[i];
      if (!x.is_table()) {
        type_error(key, "an array of tables", x);
        continue;
      }
      out.emplace_back(&x.as_table(), key_path(key) + "[" + std::to_string(i) + "]", *errs_);
    }
    return out;
  }

  /// Reports keys that no getter asked for.
  void finish() {
    if (!t_) return;
    for (const auto& [k, v] : *t_) {
      if (known_.count(k)) continue;
      std::string best;
      int best_d = 1 << 30;
      for (const auto& c : known_) {
        const int d = edit_distance(k, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      std::string msg = "unknown key";
      const int limit = std::max(2, static_cast<int>(k.size()) / 3);
      if (!best.empty() && best_d <= limit) msg += " (did you mean '" + key_path(best) + "'?)";
      errs_->push_back(key_path(k) + ": " + msg + " [line " + std::to_string(v.line) + "]");
    }
  }

 private:
  bool type_error(const std::string& key, const std::string& want, const toml::Value& v) {
    error(key, "expected " + want + ", got " + v.type_name());
    return false;
  }

  bool numbers_of(const std::string& key, const toml::Value& v, std::vector<double>& out, std::size_t n) {
    const std::string want = "an array of " + std::to_string(n) + " numbers";
    if (!v.is_array() || v.as_array().size() != n) return type_error(key, want, v);
    out.clear();
    for (const auto& x : v.as_array()) {
      if (!x.is_number()) return type_error(key, want, x);
      out.push_back(x.as_double());
    }
    return true;
  }

  const toml::Table* t_;
  std::string path_;
  std::vector<std::string>* errs_;
  std::set<std::string> known_;
};

std::string resolve_path(const std::string& dir, const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  return path.is_absolute() ? p : (fs::path(dir) / path).lexically_normal().string();
}

std::vector<double> read_numbers_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  std::vector<double> out;
  std::string tok;
  while (is >> tok) {
    if (tok[0] == '#') {
      std::getline(is, tok);
      continue;
    }
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError(path + ": not a number: '" + tok + "'");
    }
  }
  return out;
}

const char* upward_name(UpwardMode m) { return m == UpwardMode::average ? "average" : "coincident"; }

}  // namespace

SceneConfig parse_scene(const std::string& text, const std::string& source_dir) {
  const toml::Table root = toml::parse(text);
  std::vector<std::string> errs;
  SceneConfig c;
  c.source_dir = source_dir;
  Section top(&root, "", errs);

  top.string("name", c.name);
  if (long seed = 0; top.integer("seed", seed)) {
    if (seed < 0) top.error("seed", "must be non-negative");
    else c.seed = static_cast<std::uint64_t>(seed);
  }
  long levels = 1;
  top.integer("levels", levels);
  if (levels < 1 || levels > 8) top.error("levels", "must lie in [1, 8]");
  c.solver.levels = static_cast<int>(std::clamp(levels, 1L, 8L));
  c.domain.levels = c.solver.levels;
  top.number("tau0", c.solver.tau0);
  if (!(c.solver.tau0 > 0.5)) top.error("tau0", "must be > 0.5 (viscosity cs^2 (tau0 - 1/2) must be positive)");

  // [domain]
  Section dom = top.sub("domain");
  std::vector<double> ext{64, 64};
  if (dom.numbers("extent", ext, 2)) {
    for (double e : ext)
      if (e != std::floor(e) || e <= 0 || e > 1 << 20) dom.error("extent", "must be positive integers");
  }
  c.domain.extent = {static_cast<int>(ext[0]), static_cast<int>(ext[1])};
  dom.number("dx", c.scale.dx_phys);
  dom.number("dt", c.scale.dt_phys);
  dom.number("rho", c.scale.rho_phys);
  bool scale_ok = true;
  for (auto [key, v] : {std::pair{"dx", c.scale.dx_phys}, {"dt", c.scale.dt_phys}, {"rho", c.scale.rho_phys}})
    if (!(v > 0.0)) {
      dom.error(key, "must be positive");
      scale_ok = false;
    }
  if (Vec2 r{}; dom.vec2("u_ref", r)) {
    c.u_ref = std::pair{r[0], r[1]};
    if (scale_ok) {
      const double expect = c.scale.velocity(r[0]);
      if (!(std::abs(expect - r[1]) <= 1e-9 * std::max(std::abs(expect), 1e-300)))
        dom.error("u_ref", "lattice velocity " + fmt(r[1]) + " is inconsistent with dx and dt, which give " +
                               fmt(expect) + " for " + fmt(r[0]) + " m/s");
    }
  }
  dom.finish();
  if (!scale_ok) c.scale = UnitScale{};

  // [solver]
  Section sol = top.sub("solver");
  sol.number("rho0", c.solver.rho0);
  if (!(c.solver.rho0 > 0.0)) sol.error("rho0", "must be positive");
  sol.vec2("gravity", c.gravity_phys);
  sol.number("tau_floor", c.solver.tau_floor);
  if (!(c.solver.tau_floor > 0.5)) sol.error("tau_floor", "must be > 0.5");
  if (std::string up; sol.string("upward", up)) {
    if (up == "coincident") c.solver.upward = UpwardMode::coincident;
    else if (up == "average") c.solver.upward = UpwardMode::average;
    else sol.error("upward", "must be 'coincident' or 'average'");
  }
  sol.finish();

  // [runtime]
  Section run = top.sub("runtime");
  run.integer("steps", c.steps);
  if (c.steps < 0) run.error("steps", "must be >= 0");
  if (long t = 1; run.integer("threads", t)) {
    if (t < 1 || t > 1024) run.error("threads", "must lie in [1, 1024]");
    else c.threads = static_cast<int>(t);
  }
  if (std::string rc; run.string("rescale_convention", rc)) {
    try {
      c.solver.rescale = rescale_convention_from_string(rc);
    } catch (const ConfigError&) {
      run.error("rescale_convention", "must be one of derived, paper_literal, post_collision");
    }
  }
  if (long k = 1; run.integer("mpm_cadence", k)) {
    if (k < 1) run.error("mpm_cadence", "must be >= 1");
    else c.solver.mpm_cadence = static_cast<int>(k);
  }
  run.number("eps_min", c.solver.eps_min);
  if (!(c.solver.eps_min > 0.0 && c.solver.eps_min < 1.0)) run.error("eps_min", "must lie in (0, 1)");
  run.finish();
  if (c.solver.rescale == RescaleConvention::post_collision && c.solver.tau0 > 0.5)
    for (int l = 1; l < c.solver.levels; ++l)
      if (std::abs(rescale_tau(c.solver.tau0, l) - 1.0) < 1e-9)
        run.error("rescale_convention", "post_collision is singular because level " + std::to_string(l) + " has tau = 1");

  // [boundaries]
  Section bnd = top.sub("boundaries");
  const char* face_keys[4] = {"x_min", "x_max", "y_min", "y_max"};
  for (int f = 0; f < 4; ++f) {
    std::string kind;
    if (!bnd.string(face_keys[f], kind)) continue;
    try {
      c.bc.faces[static_cast<std::size_t>(f)].kind = face_kind_from_string(kind);
    } catch (const ConfigError&) {
      bnd.error(face_keys[f], "must be one of periodic, wall, outlet, inlet");
    }
  }
  for (int a = 0; a < 2; ++a) {
    const bool lo = c.bc.faces[static_cast<std::size_t>(2 * a)].kind == FaceKind::periodic;
    const bool hi = c.bc.faces[static_cast<std::size_t>(2 * a + 1)].kind == FaceKind::periodic;
    if (lo != hi) bnd.error(face_keys[2 * a + 1], std::string("must be periodic exactly when ") + face_keys[2 * a] + " is");
    c.domain.periodic[static_cast<std::size_t>(a)] = lo && hi;
  }
  bnd.boxes("solids", c.bc.solids);
  bool has_inlet = false;
  for (const auto& f : c.bc.faces) has_inlet = has_inlet || f.kind == FaceKind::inlet;
  Section inl = bnd.sub("inlet");
  LogInlet inlet;
  if (inl.present() || has_inlet) {
    if (!inl.number("u0", c.inlet_u0_phys) && has_inlet) inl.error("u0", "required by an inlet face");
    inl.number("beta", inlet.beta);
    inl.number("y0", inlet.y0);
    if (!(inlet.beta > 0.0)) inl.error("beta", "must be positive");
    if (inlet.y0 < 0.0 || inlet.y0 > c.domain.extent[1]) inl.error("y0", "must lie inside the domain height");
    if (!has_inlet) inl.error("u0", "given but no face is an inlet");
  }
  inl.finish();
  if (bnd.string("terrain_file", c.terrain_file)) {
    c.terrain_file = resolve_path(source_dir, c.terrain_file);
    if (!fs::is_regular_file(c.terrain_file)) {
      bnd.error("terrain_file", "file not found: " + c.terrain_file);
    } else {
      try {
        c.bc.terrain.height = read_numbers_file(c.terrain_file);
        if (c.bc.terrain.height.size() != static_cast<std::size_t>(c.domain.extent[0]))
          bnd.error("terrain_file", "needs one height per finest column (" + std::to_string(c.domain.extent[0]) +
                                        "), found " + std::to_string(c.bc.terrain.height.size()));
      } catch (const std::exception& e) {
        bnd.error("terrain_file", e.what());
      }
    }
  }
  bnd.finish();

  // [materials]
  Section mat = top.sub("materials");
  mat.number("density_ratio", c.density_ratio);
  if (!(c.density_ratio > 0.0)) mat.error("density_ratio", "must be positive");
  mat.number("friction_angle", c.sand.friction_deg);
  if (!(c.sand.friction_deg > 0.0 && c.sand.friction_deg < 90.0)) mat.error("friction_angle", "must lie in (0, 90) degrees");
  mat.number("E", c.E_phys);
  if (!(c.E_phys > 0.0)) mat.error("E", "must be positive");
  mat.number("poisson", c.sand.poisson);
  if (!(c.sand.poisson > -1.0 && c.sand.poisson < 0.5)) mat.error("poisson", "must lie in (-1, 0.5)");
  mat.number("floor_friction", c.sand.floor_friction);
  if (!(c.sand.floor_friction >= 0.0)) mat.error("floor_friction", "must be >= 0");
  mat.boolean("plasticity", c.sand.plasticity);
  mat.finish();

  // [particles]
  Section par = top.sub("particles");
  if (long n = 2; par.integer("per_axis", n)) {
    if (n < 1 || n > 8) par.error("per_axis", "must lie in [1, 8]");
    else c.particles_per_axis = static_cast<int>(n);
  }
  par.number("jitter", c.jitter);
  if (!(c.jitter >= 0.0 && c.jitter < 0.5)) par.error("jitter", "must lie in [0, 0.5)");
  par.boxes("blocks", c.blocks);
  for (std::size_t i = 0; i < c.blocks.size(); ++i) {
    const Box& b = c.blocks[i];
    if (b.lo[0] < 0 || b.lo[1] < 0 || b.hi[0] > c.domain.extent[0] || b.hi[1] > c.domain.extent[1])
      par.error("blocks[" + std::to_string(i) + "]", "must lie inside the domain");
  }
  par.vec2("velocity", c.particle_velocity_phys);
  if (par.string("heightfield_file", c.heightfield_file)) {
    c.heightfield_file = resolve_path(source_dir, c.heightfield_file);
    if (!fs::is_regular_file(c.heightfield_file)) {
      par.error("heightfield_file", "file not found: " + c.heightfield_file);
    } else {
      try {
        c.particle_heights = read_numbers_file(c.heightfield_file);
        if (c.particle_heights.size() != static_cast<std::size_t>(c.domain.extent[0]))
          par.error("heightfield_file", "needs one height per finest column (" + std::to_string(c.domain.extent[0]) +
                                            "), found " + std::to_string(c.particle_heights.size()));
      } catch (const std::exception& e) {
        par.error("heightfield_file", e.what());
      }
    }
  }
  for (auto& d : par.tables("dune")) {
    DuneSpec s;
    if (!d.number("center", s.center)) d.error("center", "required");
    if (!d.number("half_width", s.half_width)) d.error("half_width", "required");
    if (!d.number("height", s.height)) d.error("height", "required");
    d.number("base", s.base);
    if (!(s.half_width > 0.0)) d.error("half_width", "must be positive");
    if (!(s.height > 0.0)) d.error("height", "must be positive");
    if (s.base < 0.0 || s.base + s.height > c.domain.extent[1]) d.error("height", "dune must fit inside the domain height");
    d.finish();
    c.dunes.push_back(s);
  }
  par.finish();

  // [powder]
  Section pow = top.sub("powder");
  pow.boolean("enabled", c.coupling.powder);
  pow.number("E", c.coupling.entrainment);
  if (c.coupling.entrainment < 0.0) pow.error("E", "must be non-negative");
  double D_phys = 0.0;
  pow.number("D", D_phys);
  if (D_phys < 0.0) pow.error("D", "must be non-negative");
  c.coupling.diffusion = c.scale.viscosity(D_phys);
  if (c.coupling.diffusion > 0.25)
    pow.error("D", "lattice diffusivity " + fmt(c.coupling.diffusion) + " exceeds the explicit limit 0.25");
  pow.number("diffusion_sign", c.coupling.diffusion_sign);
  if (c.coupling.diffusion_sign != 1.0 && c.coupling.diffusion_sign != -1.0) pow.error("diffusion_sign", "must be +1 or -1");
  pow.finish();

  // [coupling]
  Section cpl = top.sub("coupling");
  cpl.boolean("enabled", c.coupling_enabled);
  cpl.number("re_min", c.coupling.re_min);
  if (!(c.coupling.re_min > 0.0)) cpl.error("re_min", "must be positive");
  cpl.number("eta_surface", c.coupling.eta_surface);
  if (!(c.coupling.eta_surface > 0.0 && c.coupling.eta_surface <= 1.0)) cpl.error("eta_surface", "must lie in (0, 1]");
  cpl.number("eta_empty", c.coupling.eta_empty);
  if (!(c.coupling.eta_empty >= 0.0)) cpl.error("eta_empty", "must be >= 0");
  cpl.boolean("implicit_drag", c.coupling.implicit_drag);
  cpl.finish();

  // [refine]
  Section ref = top.sub("refine");
  ref.boolean("adapt", c.adapt);
  ref.boolean("hysteresis", c.hysteresis);
  ref.boxes("mask", c.refine_mask);
  ref.finish();

  // [init]
  Section ini = top.sub("init");
  ini.string("type", c.init.type);
  static const std::set<std::string> init_types{"rest", "uniform", "hydrostatic", "taylor_green"};
  if (!init_types.count(c.init.type)) ini.error("type", "must be one of rest, uniform, hydrostatic, taylor_green");
  double tg_u0 = c.init.u0;
  ini.number("u0", tg_u0);
  Vec2 vel{};
  ini.vec2("velocity", vel);
  c.init.u0 = c.scale.velocity(tg_u0);
  c.init.velocity = {c.scale.velocity(vel[0]), c.scale.velocity(vel[1])};
  if (c.init.type == "taylor_green" &&
      (c.domain.extent[0] != c.domain.extent[1] || !c.domain.periodic[0] || !c.domain.periodic[1]))
    ini.error("type", "taylor_green needs a square, fully periodic domain");
  if (std::abs(c.init.u0) > 0.3) ini.error("u0", "lattice amplitude " + fmt(c.init.u0) + " exceeds 0.3");
  if (std::hypot(c.init.velocity[0], c.init.velocity[1]) > 0.3)
    ini.error("velocity", "lattice speed exceeds 0.3");
  ini.finish();

  // [output]
  Section out = top.sub("output");
  out.string("directory", c.output.directory);
  out.integer("cadence", c.output.cadence);
  if (c.output.cadence < 0) out.error("cadence", "must be >= 0");
  if (std::vector<std::string> formats; out.strings("formats", formats)) {
    c.output.vtk = c.output.ppm = c.output.particles = c.output.csv = false;
    for (const auto& f : formats) {
      if (f == "vtk") c.output.vtk = true;
      else if (f == "ppm") c.output.ppm = true;
      else if (f == "particles") c.output.particles = true;
      else if (f == "csv") c.output.csv = true;
      else out.error("formats", "unknown format '" + f + "' (vtk, ppm, particles, csv)");
    }
  }
  out.finish();
  top.finish();

  // Lattice conversions.
  c.solver.gravity = {c.scale.acceleration(c.gravity_phys[0]), c.scale.acceleration(c.gravity_phys[1])};
  c.sand.E = c.scale.stress(c.E_phys);
  inlet.u0 = c.scale.velocity(c.inlet_u0_phys);
  if (std::abs(inlet.u0) * std::log1p(inlet.beta * c.domain.extent[1]) > 0.3)
    errs.push_back("boundaries.inlet.u0: inlet lattice speed exceeds 0.3 inside the domain");
  for (auto& f : c.bc.faces)
    if (f.kind == FaceKind::inlet) f.inlet = inlet;
  c.particle_velocity = {c.scale.velocity(c.particle_velocity_phys[0]), c.scale.velocity(c.particle_velocity_phys[1])};

  const int tile = kTileSize << (c.solver.levels - 1);
  for (int a = 0; a < 2; ++a)
    if (c.domain.extent[static_cast<std::size_t>(a)] % tile != 0)
      errs.push_back("domain.extent: " + std::to_string(c.domain.extent[static_cast<std::size_t>(a)]) +
                     " is not a multiple of the top-level tile width " + std::to_string(tile));

  if (!errs.empty()) {
    std::string msg = "invalid scene '" + c.name + "':";
    for (const auto& e : errs) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

SceneConfig load_scene(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read scene " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  if (is.bad()) throw IoError("cannot read scene " + path);
  const std::string dir = fs::path(path).parent_path().string();
  return parse_scene(ss.str(), dir.empty() ? "." : dir);
}

namespace {

toml::Value tv(double v) { return toml::Value{v, 0}; }
toml::Value tv(long v) { return toml::Value{static_cast<std::int64_t>(v), 0}; }
toml::Value tv(int v) { return toml::Value{static_cast<std::int64_t>(v), 0}; }
toml::Value tv(bool v) { return toml::Value{v, 0}; }
toml::Value tv(const std::string& v) { return toml::Value{v, 0}; }
toml::Value tv(const char* v) { return toml::Value{std::string(v), 0}; }
toml::Value tv(const Vec2& v) { return toml::Value{toml::Array{tv(v[0]), tv(v[1])}, 0}; }
toml::Value tv(const std::vector<Box>& bs) {
  toml::Array a;
  for (const auto& b : bs) a.push_back(toml::Value{toml::Array{tv(b.lo[0]), tv(b.lo[1]), tv(b.hi[0]), tv(b.hi[1])}, 0});
  return toml::Value{a, 0};
}

}  // namespace

std::string describe(const SceneConfig& c) {
  toml::Table root;
  root["name"] = tv(c.name);
  root["seed"] = tv(static_cast<long>(c.seed));
  root["levels"] = tv(c.solver.levels);
  root["tau0"] = tv(c.solver.tau0);

  toml::Table dom;
  dom["extent"] = toml::Value{toml::Array{tv(c.domain.extent[0]), tv(c.domain.extent[1])}, 0};
  dom["dx"] = tv(c.scale.dx_phys);
  dom["dt"] = tv(c.scale.dt_phys);
  dom["rho"] = tv(c.scale.rho_phys);
  if (c.u_ref) dom["u_ref"] = tv(Vec2{c.u_ref->first, c.u_ref->second});
  root["domain"] = toml::Value{dom, 0};

  toml::Table sol;
  sol["rho0"] = tv(c.solver.rho0);
  sol["gravity"] = tv(c.gravity_phys);
  sol["tau_floor"] = tv(c.solver.tau_floor);
  sol["upward"] = tv(upward_name(c.solver.upward));
  root["solver"] = toml::Value{sol, 0};

  toml::Table run;
  run["steps"] = tv(c.steps);
  run["threads"] = tv(c.threads);
  run["rescale_convention"] = tv(to_string(c.solver.rescale));
  run["mpm_cadence"] = tv(c.solver.mpm_cadence);
  run["eps_min"] = tv(c.solver.eps_min);
  root["runtime"] = toml::Value{run, 0};

  toml::Table bnd;
  const char* face_keys[4] = {"x_min", "x_max", "y_min", "y_max"};
  bool has_inlet = false;
  for (int f = 0; f < 4; ++f) {
    bnd[face_keys[f]] = tv(to_string(c.bc.faces[static_cast<std::size_t>(f)].kind));
    has_inlet = has_inlet || c.bc.faces[static_cast<std::size_t>(f)].kind == FaceKind::inlet;
  }
  bnd["solids"] = tv(c.bc.solids);
  if (!c.terrain_file.empty()) bnd["terrain_file"] = tv(c.terrain_file);
  if (has_inlet) {
    const LogInlet* in = nullptr;
    for (const auto& f : c.bc.faces)
      if (f.kind == FaceKind::inlet) in = &f.inlet;
    toml::Table t;
    t["u0"] = tv(c.inlet_u0_phys);
    t["beta"] = tv(in->beta);
    t["y0"] = tv(in->y0);
    bnd["inlet"] = toml::Value{t, 0};
  }
  root["boundaries"] = toml::Value{bnd, 0};

  toml::Table mat;
  mat["density_ratio"] = tv(c.density_ratio);
  mat["friction_angle"] = tv(c.sand.friction_deg);
  mat["E"] = tv(c.E_phys);
  mat["poisson"] = tv(c.sand.poisson);
  mat["floor_friction"] = tv(c.sand.floor_friction);
  mat["plasticity"] = tv(c.sand.plasticity);
  root["materials"] = toml::Value{mat, 0};

  toml::Table par;
  par["per_axis"] = tv(c.particles_per_axis);
  par["jitter"] = tv(c.jitter);
  par["blocks"] = tv(c.blocks);
  par["velocity"] = tv(c.particle_velocity_phys);
  if (!c.heightfield_file.empty()) par["heightfield_file"] = tv(c.heightfield_file);
  if (!c.dunes.empty()) {
    toml::Array a;
    for (const auto& d : c.dunes) {
      toml::Table t;
      t["center"] = tv(d.center);
      t["half_width"] = tv(d.half_width);
      t["height"] = tv(d.height);
      t["base"] = tv(d.base);
      a.push_back(toml::Value{t, 0});
    }
    par["dune"] = toml::Value{a, 0};
  }
  root["particles"] = toml::Value{par, 0};

  toml::Table pow;
  pow["enabled"] = tv(c.coupling.powder);
  pow["E"] = tv(c.coupling.entrainment);
  pow["D"] = tv(c.coupling.diffusion * c.scale.dx_phys * c.scale.dx_phys / c.scale.dt_phys);
  pow["diffusion_sign"] = tv(c.coupling.diffusion_sign);
  root["powder"] = toml::Value{pow, 0};

  toml::Table cpl;
  cpl["enabled"] = tv(c.coupling_enabled);
  cpl["re_min"] = tv(c.coupling.re_min);
  cpl["eta_surface"] = tv(c.coupling.eta_surface);
  cpl["eta_empty"] = tv(c.coupling.eta_empty);
  cpl["implicit_drag"] = tv(c.coupling.implicit_drag);
  root["coupling"] = toml::Value{cpl, 0};

  toml::Table ref;
  ref["adapt"] = tv(c.adapt);
  ref["hysteresis"] = tv(c.hysteresis);
  ref["mask"] = tv(c.refine_mask);
  root["refine"] = toml::Value{ref, 0};

  toml::Table ini;
  ini["type"] = tv(c.init.type);
  ini["u0"] = tv(c.init.u0 * c.scale.dx_phys / c.scale.dt_phys);
  ini["velocity"] = tv(Vec2{c.init.velocity[0] * c.scale.dx_phys / c.scale.dt_phys,
                            c.init.velocity[1] * c.scale.dx_phys / c.scale.dt_phys});
  root["init"] = toml::Value{ini, 0};

  toml::Table out;
  out["directory"] = tv(c.output.directory);
  out["cadence"] = tv(c.output.cadence);
  toml::Array formats;
  if (c.output.vtk) formats.push_back(tv("vtk"));
  if (c.output.ppm) formats.push_back(tv("ppm"));
  if (c.output.particles) formats.push_back(tv("particles"));
  if (c.output.csv) formats.push_back(tv("csv"));
  out["formats"] = toml::Value{formats, 0};
  root["output"] = toml::Value{out, 0};

  const auto lp = make_level_params(c.solver);
  std::ostringstream os;
  os << "# resolved scene, lattice units:\n";
  os << "#   nu = " << fmt(lp[0].nu) << " (physical " << fmt(lp[0].nu * c.scale.dx_phys * c.scale.dx_phys / c.scale.dt_phys)
     << " m^2/s)\n";
  os << "#   gravity = [" << fmt(c.solver.gravity[0]) << ", " << fmt(c.solver.gravity[1]) << "]\n";
  os << "#   E = " << fmt(c.sand.E) << ", C = " << fmt(c.scale.C()) << "\n";
  for (int l = 0; l < c.solver.levels; ++l)
    os << "#   level " << l << ": tau = " << fmt(lp[static_cast<std::size_t>(l)].tau) << "\n";
  os << toml::dump(root);
  return os.str();
}

// ---------------------------------------------------------------------------
// Scene construction

std::vector<Particle> make_particles(const SceneConfig& c) {
  CounterRng rng(c.seed);
  const double density = c.density_ratio * c.solver.rho0;
  const int n = c.particles_per_axis;
  const double h = 1.0 / n;
  std::vector<Particle> out;
  auto keep = [&](const Particle& p) {
    return p.x[0] >= 0.0 && p.x[1] >= 0.0 && p.x[0] < c.domain.extent[0] && p.x[1] < c.domain.extent[1] &&
           !c.bc.solid_at(p.x[0], p.x[1]);
  };
  for (const Box& b : c.blocks)
    for (const auto& p : seed_block(b, n, density, rng, c.jitter))
      if (keep(p)) out.push_back(p);

  // Sub-lattice fill between base and a surface over columns [x0, x1).
  auto fill = [&](int x0, int x1, const std::function<double(double)>& base, const std::function<double(double)>& top) {
    x0 = std::max(x0, 0);
    x1 = std::min(x1, c.domain.extent[0]);
    for (int i = x0; i < x1; ++i) {
      const double xc = i + 0.5;
      const int j0 = std::max(0, static_cast<int>(std::floor(base(xc))));
      const int j1 = std::min(c.domain.extent[1], static_cast<int>(std::ceil(top(xc))));
      for (int j = j0; j < j1; ++j)
        for (int b = 0; b < n; ++b)
          for (int a = 0; a < n; ++a) {
            Particle p;
            p.x = {i + (a + 0.5 + c.jitter * (2.0 * rng.uniform() - 1.0)) * h,
                   j + (b + 0.5 + c.jitter * (2.0 * rng.uniform() - 1.0)) * h};
            p.V0 = h * h;
            p.m = density * p.V0;
            const double xs = i + (a + 0.5) * h, ys = j + (b + 0.5) * h;
            if (ys < base(xs) || ys >= top(xs) || !keep(p)) continue;
            out.push_back(p);
          }
    }
  };
  for (const DuneSpec& d : c.dunes)
    fill(static_cast<int>(std::floor(d.center - d.half_width)), static_cast<int>(std::ceil(d.center + d.half_width)),
         [&](double) { return d.base; }, [&](double x) { return d.surface(x); });
  if (!c.particle_heights.empty())
    fill(0, c.domain.extent[0], [](double) { return 0.0; }, [&](double x) {
      const auto i = static_cast<std::size_t>(std::clamp(static_cast<int>(x), 0, c.domain.extent[0] - 1));
      return c.particle_heights[i];
    });
  for (auto& p : out) p.v = {c.particle_velocity[0], c.particle_velocity[1]};
  return out;
}

CoupledConfig make_coupled_config(const SceneConfig& c) {
  CoupledConfig cc;
  cc.solver = c.solver;
  cc.bc = c.bc;
  cc.coupling = c.coupling;
  cc.coupling.d_p = 2.0 / c.particles_per_axis / std::sqrt(std::numbers::pi);
  cc.sand = c.sand;
  cc.adapt = c.adapt;
  cc.hysteresis = c.hysteresis;
  cc.refine_mask = c.refine_mask;
  return cc;
}

InitField make_init(const SceneConfig& c, const std::vector<LevelParams>& lp) {
  const double rho0 = c.solver.rho0;
  if (c.init.type == "uniform") {
    const Vec2 u = c.init.velocity;
    return [rho0, u](int, const Vec2&) {
      Moments<Lat> m;
      m.rho = rho0;
      m.u = u;
      m.S = seq<Lat>(u);
      return m;
    };
  }
  if (c.init.type == "hydrostatic") {
    // rho = rho0 at the origin, so the floor carries the reference density.
    const Vec2 g = c.solver.gravity;
    return [rho0, g](int, const Vec2& p) {
      Moments<Lat> m;
      m.rho = rho0 * std::exp((g[0] * p[0] + g[1] * p[1]) / Lat::cs2);
      return m;
    };
  }
  if (c.init.type == "taylor_green") {
    const int res = c.domain.extent[0];
    const double u0 = c.init.u0;
    const double nu = lp[0].nu;
    return [res, u0, nu, lp](int l, const Vec2& p) {
      const auto& q = lp[static_cast<std::size_t>(l)];
      return taylor_green_state(p, 0.0, res, u0, nu, q.tau, q.dx);
    };
  }
  return [rho0](int, const Vec2&) {
    Moments<Lat> m;
    m.rho = rho0;
    return m;
  };
}

SceneConfig uniform_reference(const SceneConfig& cfg) {
  SceneConfig r = cfg;
  r.solver.levels = 1;
  r.domain.levels = 1;
  r.refine_mask.clear();
  return r;
}

FinestField sample_finest(const MultiLevelSolver& s) {
  const auto& topo = s.topology();
  const auto& dom = topo.domain();
  FinestField f;
  f.extent = dom.extent;
  const auto N = static_cast<std::size_t>(dom.extent[0]) * static_cast<std::size_t>(dom.extent[1]);
  f.rho.assign(N, 0.0);
  f.ux.assign(N, 0.0);
  f.uy.assign(N, 0.0);
  const Vec2 g = s.level_params()[0].gravity;
  const FieldLevel& f0 = s.current(0);
  const bool forces = !f0.comp[kFx].empty();
  for (int y = 0; y < dom.extent[1]; ++y)
    for (int x = 0; x < dom.extent[0]; ++x) {
      const auto i = static_cast<std::size_t>(y) * static_cast<std::size_t>(dom.extent[0]) + static_cast<std::size_t>(x);
      const int c = topo.find_cell(0, {x, y});
      if (c >= 0 && topo.level(0).roles[static_cast<std::size_t>(c)] == CellRole::solid) continue;
      const Moments<Lat> m = resolve_moments(topo, s.buffers(), s.params(), s.level_params(), 0, {x, y});
      Vec2 half{0.5 * g[0], 0.5 * g[1]};
      if (c >= 0 && forces) half = {0.5 * f0(kFx, c) / m.rho, 0.5 * f0(kFy, c) / m.rho};
      f.rho[i] = m.rho;
      f.ux[i] = m.u[0] - half[0];
      f.uy[i] = m.u[1] - half[1];
    }
  return f;
}

FinestField run_fields(const SceneConfig& cfg, long steps) {
  const long per_top = 1L << (cfg.solver.levels - 1);
  if (steps % per_top != 0)
    throw ConfigError("run_fields: " + std::to_string(steps) + " finest steps is not a whole number of top steps");
  CoupledSimulation sim(cfg.domain, make_coupled_config(cfg), make_particles(cfg), cfg.coupling_enabled);
  sim.initialize(make_init(cfg, sim.solver().level_params()));
  for (long n = 0; n < steps / per_top; ++n) sim.step();
  return sample_finest(sim.solver());
}

// ---------------------------------------------------------------------------
// Frame files

VtkImage level_image(const MultiLevelSolver& s, int level) {
  const auto& topo = s.topology();
  const auto& dom = topo.domain();
  VtkImage img;
  img.dims = {dom.nodes(level, 0), dom.nodes(level, 1)};
  img.spacing = std::ldexp(1.0, level);
  const auto N = static_cast<std::size_t>(img.dims[0]) * static_cast<std::size_t>(img.dims[1]);
  for (const char* k : {"rho", "eps", "phi", "stored"}) img.scalars[k].assign(N, 0.0);
  img.velocity.assign(N, {0.0, 0.0});
  const FieldLevel& f = s.current(level);
  const Vec2 g = s.level_params()[static_cast<std::size_t>(level)].gravity;
  const bool coupled = !f.comp[kEps].empty();
  for (int y = 0; y < img.dims[1]; ++y)
    for (int x = 0; x < img.dims[0]; ++x) {
      const int c = topo.find_cell(level, {x, y});
      if (c < 0) continue;
      const auto i = static_cast<std::size_t>(y) * static_cast<std::size_t>(img.dims[0]) + static_cast<std::size_t>(x);
      const double rho = f(kRho, c);
      img.scalars["stored"][i] = 1.0;
      img.scalars["rho"][i] = rho;
      img.scalars["eps"][i] = coupled ? f(kEps, c) : 1.0;
      img.scalars["phi"][i] = coupled ? f(kPhi, c) : 0.0;
      const Vec2 half = coupled ? Vec2{0.5 * f(kFx, c) / rho, 0.5 * f(kFy, c) / rho} : Vec2{0.5 * g[0], 0.5 * g[1]};
      img.velocity[i] = {f(kUx, c) - half[0], f(kUy, c) - half[1]};
    }
  return img;
}

void write_vtk(std::ostream& os, const VtkImage& img) {
  const std::size_t N = img.velocity.size();
  os << "# vtk DataFile Version 3.0\nglbm level frame\nASCII\nDATASET STRUCTURED_POINTS\n";
  os << "DIMENSIONS " << img.dims[0] << " " << img.dims[1] << " 1\n";
  os << "ORIGIN 0 0 0\nSPACING " << fmt(img.spacing) << " " << fmt(img.spacing) << " 1\n";
  os << "POINT_DATA " << N << "\n";
  for (const auto& [name, v] : img.scalars) {
    os << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
    for (double x : v) os << fmt(x) << "\n";
  }
  os << "VECTORS velocity double\n";
  for (const auto& u : img.velocity) os << fmt(u[0]) << " " << fmt(u[1]) << " 0\n";
}

VtkImage read_vtk(std::istream& is) {
  auto bad = [](const std::string& w) { throw IoError("vtk: " + w); };
  std::string line;
  if (!std::getline(is, line) || line.rfind("# vtk DataFile", 0) != 0) bad("missing header");
  std::getline(is, line);
  std::string word;
  VtkImage img;
  std::size_t N = 0;
  if (!(is >> word) || word != "ASCII") bad("only ASCII files are supported");
  while (is >> word) {
    if (word == "DATASET") {
      is >> word;
      if (word != "STRUCTURED_POINTS") bad("unsupported dataset " + word);
    } else if (word == "DIMENSIONS") {
      int z = 0;
      is >> img.dims[0] >> img.dims[1] >> z;
    } else if (word == "ORIGIN") {
      double a, b, c;
      is >> a >> b >> c;
    } else if (word == "SPACING") {
      double b, c;
      is >> img.spacing >> b >> c;
    } else if (word == "POINT_DATA") {
      is >> N;
    } else if (word == "SCALARS") {
      std::string name, type, lt, table;
      int comps = 0;
      is >> name >> type >> comps >> lt >> table;
      auto& v = img.scalars[name];
      v.resize(N);
      for (auto& x : v)
        if (!(is >> x)) bad("truncated scalars " + name);
    } else if (word == "VECTORS") {
      std::string name, type;
      is >> name >> type;
      img.velocity.resize(N);
      for (auto& u : img.velocity) {
        double z = 0;
        if (!(is >> u[0] >> u[1] >> z)) bad("truncated vectors");
      }
    } else {
      bad("unexpected token " + word);
    }
  }
  if (N != static_cast<std::size_t>(img.dims[0]) * static_cast<std::size_t>(img.dims[1])) bad("point count mismatch");
  return img;
}

namespace {

std::array<std::uint8_t, 3> ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); };
  return {q(1.5 * t - 0.25), q(1.0 - std::abs(2.0 * t - 1.0)), q(1.25 - 1.5 * t)};
}

}  // namespace

PpmImage speed_image(const FinestField& f, double u_max) {
  PpmImage img;
  img.width = f.extent[0];
  img.height = f.extent[1];
  img.rgb.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto i = static_cast<std::size_t>(y) * static_cast<std::size_t>(img.width) + static_cast<std::size_t>(x);
      const auto o = (static_cast<std::size_t>(img.height - 1 - y) * static_cast<std::size_t>(img.width) + static_cast<std::size_t>(x)) * 3;
      const auto c = ramp(std::hypot(f.ux[i], f.uy[i]) / u_max);
      std::copy(c.begin(), c.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(o));
    }
  return img;
}

PpmImage particle_image(const std::vector<Particle>& ps, Index2 extent, int per_cell) {
  PpmImage img;
  img.width = extent[0];
  img.height = extent[1];
  std::vector<int> count(static_cast<std::size_t>(extent[0]) * static_cast<std::size_t>(extent[1]), 0);
  for (const auto& p : ps) {
    const int x = static_cast<int>(std::floor(p.x[0])), y = static_cast<int>(std::floor(p.x[1]));
    if (x < 0 || y < 0 || x >= extent[0] || y >= extent[1]) continue;
    ++count[static_cast<std::size_t>(img.height - 1 - y) * static_cast<std::size_t>(extent[0]) + static_cast<std::size_t>(x)];
  }
  img.rgb.reserve(count.size() * 3);
  for (int n : count) {
    const auto v = static_cast<std::uint8_t>(std::lround(255.0 * std::min(1.0, static_cast<double>(n) / per_cell)));
    img.rgb.insert(img.rgb.end(), {v, v, v});
  }
  return img;
}

void write_ppm(std::ostream& os, const PpmImage& img) {
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
}

PpmImage read_ppm(std::istream& is) {
  std::string magic;
  PpmImage img;
  int maxval = 0;
  if (!(is >> magic >> img.width >> img.height >> maxval) || magic != "P6" || maxval != 255 || img.width < 0 ||
      img.height < 0)
    throw IoError("ppm: unsupported header");
  is.get();
  img.rgb.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) * 3);
  if (!is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size())))
    throw IoError("ppm: truncated pixel data");
  return img;
}

void write_csv(std::ostream& os, const CsvTable& t) {
  for (std::size_t i = 0; i < t.header.size(); ++i) os << (i ? "," : "") << t.header[i];
  os << "\n";
  for (const auto& r : t.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << fmt(r[i]);
    os << "\n";
  }
}

CsvTable read_csv(std::istream& is) {
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw IoError("csv: empty file");
  std::stringstream hs(line);
  for (std::string h; std::getline(hs, h, ',');) t.header.push_back(h);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream rs(line);
    for (std::string v; std::getline(rs, v, ',');) {
      try {
        row.push_back(std::stod(v));
      } catch (const std::exception&) {
        throw IoError("csv: not a number: '" + v + "'");
      }
    }
    if (row.size() != t.header.size()) throw IoError("csv: row width differs from header");
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Running

namespace {

template <class Fn>
void write_file(const fs::path& p, std::ios::openmode mode, Fn&& fn, RunSummary& sum) {
  std::ofstream os(p, mode);
  if (!os) throw IoError("cannot write " + p.string());
  fn(os);
  os.flush();
  if (!os) throw IoError("write failed for " + p.string());
  sum.files.push_back(p.string());
}

std::string frame_tag(long step) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%06ld", step);
  return buf;
}

}  // namespace

RunSummary run_scene(const SceneConfig& cfg, const RunOptions& opt) {
  const long steps = opt.steps.value_or(cfg.steps);
  if (steps < 0) throw ConfigError("steps: must be >= 0");
  const int threads = opt.threads.value_or(cfg.threads);
  if (threads < 1) throw ConfigError("threads: must be >= 1");
  set_thread_count(threads);
  const fs::path dir = opt.out_dir.value_or(cfg.output.directory);
  const bool files = opt.write_files;
  if (files) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  }

  RunSummary sum;
  std::vector<Particle> particles = make_particles(cfg);
  double pvol = 0.0;
  for (const auto& p : particles) pvol += p.V0;
  const double area = static_cast<double>(cfg.domain.extent[0]) * cfg.domain.extent[1];
  sum.particle_fraction = pvol / area;

  CoupledSimulation sim(cfg.domain, make_coupled_config(cfg), std::move(particles), cfg.coupling_enabled);
  sim.initialize(make_init(cfg, sim.solver().level_params()));
  const int L = cfg.solver.levels;

  CsvTable csv;
  csv.header = {"step", "time", "fluid_px", "fluid_py", "sediment_px", "sediment_py", "drag_x", "drag_y", "phi_sum"};
  for (int l = 0; l < L; ++l) csv.header.push_back("tiles_l" + std::to_string(l));
  for (const char* h : {"cells", "eps_min", "kinetic_energy", "fluid_mass", "particle_mass", "audit_residual"})
    csv.header.push_back(h);

  double last_ke = 0.0;
  auto record = [&]() {
    const StepDiagnostics d = sim.diagnostics();
    const double ke = sim.solver().kinetic_energy() + kinetic_energy(sim.particles());
    const double cells = static_cast<double>(sim.topology().total_cells());
    if (!csv.rows.empty() && ke > last_ke) sum.ke_monotone = false;
    last_ke = ke;
    sum.max_cell_ratio = std::max(sum.max_cell_ratio, cells / area);
    const double res = sim.solver().top_steps() > 0 ? sim.last_audit().residual() : 0.0;
    sum.max_audit_residual = std::max(sum.max_audit_residual, res);
    std::vector<double> row{static_cast<double>(d.step), sim.solver().time() * cfg.scale.dt_phys,
                            d.fluid_momentum[0], d.fluid_momentum[1], d.sediment_momentum[0], d.sediment_momentum[1],
                            d.drag_impulse[0], d.drag_impulse[1], d.phi_sum};
    for (int t : d.tiles) row.push_back(t);
    for (double v : {cells, d.eps_min, ke, sim.solver().total_mass(), total_mass(sim.particles()), res})
      row.push_back(v);
    csv.rows.push_back(std::move(row));
    sum.last = d;
    return std::isfinite(ke) && std::isfinite(sim.solver().total_mass());
  };

  // A stored speed at or above the lattice speed has no physical meaning.
  auto check_speed = [&](long n) {
    for (int l = 0; l < L; ++l) {
      const FieldLevel& f = sim.solver().current(l);
      for (int c = 0; c < f.cells; ++c)
        if (!(std::hypot(f(kUx, c), f(kUy, c)) < 1.0))
          throw DivergenceError("lattice speed reached 1 at level " + std::to_string(l) + " after step " +
                                std::to_string(n));
    }
  };

  auto frame = [&](const std::string& tag) {
    ++sum.frames;
    if (!files) return;
    if (cfg.output.vtk)
      for (int l = 0; l < L; ++l)
        write_file(dir / ("frame_" + tag + "_l" + std::to_string(l) + ".vtk"), std::ios::out,
                   [&](std::ostream& os) { write_vtk(os, level_image(sim.solver(), l)); }, sum);
    if (cfg.output.ppm) {
      write_file(dir / ("speed_" + tag + ".ppm"), std::ios::binary,
                 [&](std::ostream& os) { write_ppm(os, speed_image(sample_finest(sim.solver()), 0.1)); }, sum);
      write_file(dir / ("density_" + tag + ".ppm"), std::ios::binary, [&](std::ostream& os) {
        write_ppm(os, particle_image(sim.particles(), cfg.domain.extent, cfg.particles_per_axis * cfg.particles_per_axis));
      }, sum);
    }
    if (cfg.output.particles)
      write_file(dir / ("particles_" + tag + ".bin"), std::ios::binary,
                 [&](std::ostream& os) { write_particles(os, sim.particles()); }, sum);
  };
  auto flush_csv = [&]() {
    if (files && cfg.output.csv)
      write_file(dir / "diagnostics.csv", std::ios::out, [&](std::ostream& os) { write_csv(os, csv); }, sum);
  };

  record();
  frame(frame_tag(0));
  for (long n = 1; n <= steps; ++n) {
    try {
      sim.step();
      bool finite = record();
      for (const auto& p : sim.particles()) finite = finite && p.x.allFinite() && p.v.allFinite();
      if (!finite) throw DivergenceError("non-finite state after step " + std::to_string(n));
      check_speed(n);
    } catch (const DivergenceError&) {
      sum.finite = false;
      if (files) {
        try {
          frame("divergence_" + frame_tag(n));
          flush_csv();
        } catch (const IoError&) {
        }
      }
      throw;
    }
    sum.steps = n;
    const bool at_cadence = cfg.output.cadence > 0 && n % cfg.output.cadence == 0;
    const bool last = n == steps && (cfg.output.cadence == 0 || n % cfg.output.cadence != 0);
    if (at_cadence || last) frame(frame_tag(n));
  }
  sum.mpm_violations = sim.mpm_stats().violations;
  flush_csv();
  return sum;
}

// ---------------------------------------------------------------------------
// Validation cases

std::string ValidationReport::json() const {
  nlohmann::ordered_json j;
  j["case"] = name;
  j["pass"] = pass;
  nlohmann::ordered_json v = nlohmann::ordered_json::object();
  for (const auto& [k, x] : values) v[k] = x;
  j["values"] = v;
  return j.dump(2);
}

std::vector<std::string> validation_cases() {
  return {"taylor-green", "poiseuille", "multilevel-consistency", "sand-collapse",
          "conservation", "adapt-fuzz", "rescale-roundtrip"};
}

namespace {

class Options {
 public:
  Options(std::string name, const std::map<std::string, double>& given) : name_(std::move(name)), given_(given) {}

  double get(const std::string& key, double def) {
    known_.push_back(key);
    auto it = given_.find(key);
    return it == given_.end() ? def : it->second;
  }
  long integer(const std::string& key, long def) {
    const double v = get(key, static_cast<double>(def));
    if (v != std::floor(v)) throw ConfigError("validate " + name_ + ": option " + key + " must be an integer");
    return static_cast<long>(v);
  }
  void finish() const {
    for (const auto& [k, v] : given_)
      if (std::find(known_.begin(), known_.end(), k) == known_.end()) {
        std::string list;
        for (const auto& n : known_) list += (list.empty() ? "" : ", ") + n;
        throw ConfigError("validate " + name_ + ": unknown option '" + k + "' (known: " + list + ")");
      }
  }

 private:
  std::string name_;
  const std::map<std::string, double>& given_;
  std::vector<std::string> known_;
};

}  // namespace

ValidationReport validate_case(const std::string& name, const std::map<std::string, double>& options) {
  ValidationReport r;
  r.name = name;
  Options o(name, options);
  auto add = [&](const std::string& k, double v) { r.values.emplace_back(k, v); };

  if (name == "taylor-green") {
    TaylorGreenOptions t;
    t.res = static_cast<int>(o.integer("res", 128));
    t.tau = o.get("tau", 0.8);
    t.u0 = o.get("u0", 0.05);
    o.finish();
    const auto res = run_taylor_green(t);
    add("l2_error", res.l2_error);
    add("ke_rate_error", res.ke_rate_error);
    add("steps", static_cast<double>(res.steps));
    add("seconds", res.seconds);
    r.pass = res.l2_error < 0.02 && res.ke_rate_error < 0.02;
  } else if (name == "poiseuille") {
    const int width = static_cast<int>(o.integer("width", 64));
    const double tau = o.get("tau", 0.8), u_max = o.get("u_max", 0.02);
    o.finish();
    const auto res = run_poiseuille(width, tau, u_max);
    add("max_rel_error", res.max_rel_error);
    add("steps", static_cast<double>(res.steps));
    r.pass = res.max_rel_error < 0.01;
  } else if (name == "multilevel-consistency") {
    const int res = static_cast<int>(o.integer("res", 128));
    const double tau = o.get("tau", 0.8), u0 = o.get("u0", 0.05);
    const long flow_steps = o.integer("flow_steps", 100);
    o.finish();
    const auto c = multilevel_consistency(res, tau, u0, RescaleConvention::post_collision);
    const double dev2 = uniform_flow_deviation(2, static_cast<int>(flow_steps));
    const double dev3 = uniform_flow_deviation(3, static_cast<int>(flow_steps));
    add("rel_l2", c.rel_l2);
    add("uniform_flow_l2", dev2);
    add("uniform_flow_l3", dev3);
    r.pass = c.rel_l2 < 0.02 && dev2 < 1e-12 && dev3 < 1e-12;
  } else if (name == "sand-collapse") {
    SandCollapseOptions s;
    s.column_width = static_cast<int>(o.integer("width", s.column_width));
    s.column_height = static_cast<int>(o.integer("height", s.column_height));
    s.seed = static_cast<std::uint64_t>(o.integer("seed", static_cast<long>(s.seed)));
    o.finish();
    const auto res = run_sand_collapse(s);
    const double limit = std::tan(30.0 * std::numbers::pi / 180.0) + 0.05;
    add("particles", static_cast<double>(res.particles));
    add("left_slope", res.left_slope);
    add("right_slope", res.right_slope);
    add("slope_limit", limit);
    add("mass_exact", res.mass_exact ? 1.0 : 0.0);
    add("settled", res.settled ? 1.0 : 0.0);
    add("seconds", res.seconds);
    r.pass = res.settled && res.left_slope <= limit && res.right_slope <= limit && res.mass_exact && res.seconds < 120.0;
  } else if (name == "conservation") {
    const int steps = static_cast<int>(o.integer("steps", 1000));
    o.finish();
    const double single = mass_drift(1, steps), multi = mass_drift(2, steps);
    add("single_level_drift", single);
    add("multi_level_drift", multi);
    r.pass = single < 1e-12 && multi < 1e-4;
  } else if (name == "adapt-fuzz") {
    const long walks = o.integer("walks", 200), updates = o.integer("updates", 500);
    const long seed = o.integer("seed", 1);
    o.finish();
    reference::FuzzStats st;
    for (long w = 0; w < walks; ++w) reference::fuzz_walk(static_cast<std::uint64_t>(seed + w), static_cast<int>(updates), st);
    add("updates", static_cast<double>(st.updates));
    add("settled_checks", static_cast<double>(st.settled_checks));
    add("mismatches", static_cast<double>(st.mismatches));
    add("violations", static_cast<double>(st.violations));
    add("noop_changes", static_cast<double>(st.noop_changes));
    r.pass = st.mismatches == 0 && st.violations == 0 && st.noop_changes == 0 && st.updates == walks * updates;
  } else if (name == "rescale-roundtrip") {
    const int samples = static_cast<int>(o.integer("samples", 10000));
    const auto seed = static_cast<std::uint64_t>(o.integer("seed", 4));
    o.finish();
    const double comp = rescale_tau_composition_error(samples / 10 + 1, seed);
    const double derived = rescale_roundtrip_error(RescaleConvention::derived, samples, seed);
    const double post = rescale_roundtrip_error(RescaleConvention::post_collision, samples, seed);
    const double literal = rescale_roundtrip_error(RescaleConvention::paper_literal, samples, seed);
    add("tau_composition", comp);
    add("derived", derived);
    add("post_collision", post);
    add("paper_literal", literal);
    r.pass = comp < 1e-14 && derived < 1e-14 && post < 1e-14 && literal >= 1e-14;
  } else {
    std::string list;
    for (const auto& c : validation_cases()) list += (list.empty() ? "" : ", ") + c;
    throw ConfigError("unknown validation case '" + name + "' (known: " + list + ")");
  }
  return r;
}

}  // namespace glbm
