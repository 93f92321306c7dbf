#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "glbm/coupling.hpp"

namespace glbm {

struct DuneSpec {
  double center = 0.0;
  double half_width = 1.0;
  double height = 1.0;
  double base = 0.0;

  /// Surface height of the cos^2 profile at x (base outside the dune).
  double surface(double x) const;
};

struct InitSpec {
  std::string type = "rest";  ///< rest, uniform, hydrostatic, taylor_green
  double u0 = 0.05;           ///< Taylor-Green amplitude (lattice)
  Vec2 velocity{};            ///< uniform velocity (lattice)
};

struct OutputSpec {
  std::string directory = "out";
  long cadence = 0;  ///< top steps between frames; 0 writes only the first and last
  bool vtk = true;
  bool ppm = true;
  bool particles = true;
  bool csv = true;
};

/// Resolved scene: physical inputs as given plus their lattice conversions.
struct SceneConfig {
  std::string name = "scene";
  std::uint64_t seed = 1;
  std::string source_dir = ".";

  GridDomain domain;
  UnitScale scale;
  std::optional<std::pair<double, double>> u_ref;  ///< (physical, lattice)

  SolverParams solver;   ///< lattice units
  Vec2 gravity_phys{};
  BoundarySpec bc;
  double inlet_u0_phys = 0.0;
  std::string terrain_file;

  double density_ratio = 2.0;
  double E_phys = 0.1;
  SandParams sand;  ///< E in lattice units

  int particles_per_axis = 2;
  double jitter = 0.25;
  std::vector<Box> blocks;
  std::vector<DuneSpec> dunes;
  std::string heightfield_file;
  std::vector<double> particle_heights;
  Vec2 particle_velocity_phys{};
  Vec2 particle_velocity{};  ///< lattice

  CouplingParams coupling;
  bool coupling_enabled = true;
  bool adapt = true;
  bool hysteresis = true;
  std::vector<Box> refine_mask;

  InitSpec init;
  OutputSpec output;
  long steps = 100;
  int threads = 1;
};

/// Parses and validates scene text. `source_dir` resolves relative file paths.
/// Throws ParseError for malformed text and ConfigError (one line per
/// violation, each naming its key path) for invalid content.
SceneConfig parse_scene(const std::string& text, const std::string& source_dir = ".");
/// Reads and parses a scene file; IoError when unreadable.
SceneConfig load_scene(const std::string& path);
/// Resolved configuration as TOML text.
std::string describe(const SceneConfig& cfg);

/// Levenshtein distance, used for unknown-key suggestions.
int edit_distance(const std::string& a, const std::string& b);

std::vector<Particle> make_particles(const SceneConfig& cfg);
CoupledConfig make_coupled_config(const SceneConfig& cfg);
InitField make_init(const SceneConfig& cfg, const std::vector<LevelParams>& lp);

/// Same physics at L = 1 on the finest resolution everywhere.
SceneConfig uniform_reference(const SceneConfig& cfg);

/// Moments of every finest-level node, resolved through the hierarchy.
struct FinestField {
  Index2 extent{};
  std::vector<double> rho, ux, uy;
};
FinestField sample_finest(const MultiLevelSolver& s);
/// Runs `finest_steps` finest-level steps (a whole number of top steps) and
/// samples the finest field.
FinestField run_fields(const SceneConfig& cfg, long finest_steps);

// ---------------------------------------------------------------------------
// Frame files

/// Legacy VTK ASCII structured points of one level; unstored nodes carry
/// stored = 0 and zero fields.
struct VtkImage {
  Index2 dims{};
  double spacing = 1.0;
  std::map<std::string, std::vector<double>> scalars;  ///< rho, eps, phi, stored
  std::vector<std::array<double, 2>> velocity;
};
VtkImage level_image(const MultiLevelSolver& s, int level);
void write_vtk(std::ostream& os, const VtkImage& img);
VtkImage read_vtk(std::istream& is);

struct PpmImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};
/// |u| on the finest grid with a fixed ramp saturating at `u_max`.
PpmImage speed_image(const FinestField& f, double u_max);
/// Particle count per finest cell, saturating at `per_cell`.
PpmImage particle_image(const std::vector<Particle>& ps, Index2 extent, int per_cell);
void write_ppm(std::ostream& os, const PpmImage& img);
PpmImage read_ppm(std::istream& is);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};
void write_csv(std::ostream& os, const CsvTable& t);
CsvTable read_csv(std::istream& is);

// ---------------------------------------------------------------------------
// Running

struct RunOptions {
  std::optional<long> steps;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  bool write_files = true;
};

struct RunSummary {
  long steps = 0;
  int frames = 0;
  bool ke_monotone = true;
  double max_cell_ratio = 0.0;     ///< stored cells / uniform finest cells (max over the run)
  double particle_fraction = 0.0;  ///< particle volume / domain area at start
  double max_audit_residual = 0.0;
  bool finite = true;
  long mpm_violations = 0;
  StepDiagnostics last;
  std::vector<std::string> files;
};

/// Executes the scene. Throws DivergenceError after writing a diagnostic
/// snapshot, IoError on output failure.
RunSummary run_scene(const SceneConfig& cfg, const RunOptions& opt = {});

// ---------------------------------------------------------------------------
// Validation cases

struct ValidationReport {
  std::string name;
  bool pass = false;
  std::vector<std::pair<std::string, double>> values;
  std::string json() const;
};

std::vector<std::string> validation_cases();
/// Runs one acceptance experiment. Options are case-specific numbers
/// (e.g. res, tau, walks); unknown cases or options throw ConfigError.
ValidationReport validate_case(const std::string& name, const std::map<std::string, double>& options = {});

}  // namespace glbm
