#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "glbm/errors.hpp"
#include "glbm/harness.hpp"
#include "glbm/toml.hpp"

using namespace glbm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("glbm_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string config_error(const std::string& text) {
  try {
    parse_scene(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Small coupled scene: fluid plus a sand block under gravity.
const char* kBlockScene = R"(
name = "block"
seed = 5
levels = 1
tau0 = 0.8
[domain]
extent = [32, 32]
[solver]
gravity = [0.0, -1e-5]
[runtime]
steps = 20
[boundaries]
x_min = "wall"
x_max = "wall"
y_min = "wall"
y_max = "wall"
[particles]
blocks = [[12.0, 2.0, 20.0, 10.0]]
[materials]
E = 0.1
[output]
cadence = 0
)";

int run_cli(const std::string& args, std::string* out = nullptr, const std::string& env = "") {
  const fs::path log = fs::temp_directory_path() / "glbm_cli_out.txt";
  const std::string cmd = env + " " + std::string(GLBM_SIM_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (out) *out = slurp(log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Toml, ParsesSupportedSubset) {
  const auto t = toml::parse(R"(
# comment
a = 1_000
b = -2.5e-3   # trailing comment
c = "x\ty\"z"
d = 'C:\raw'
e = [1, 2.5,
     3]
f = { p = true, q.r = "s" }
g = inf
[sec.sub]
k = false
[[arr]]
v = 1
[[arr]]
v = 2
[arr.inner]
w = 3
)");
  EXPECT_EQ(t.at("a").as_int(), 1000);
  EXPECT_DOUBLE_EQ(t.at("b").as_double(), -2.5e-3);
  EXPECT_EQ(t.at("c").as_string(), "x\ty\"z");
  EXPECT_EQ(t.at("d").as_string(), "C:\\raw");
  ASSERT_EQ(t.at("e").as_array().size(), 3u);
  EXPECT_EQ(t.at("e").as_array()[1].as_double(), 2.5);
  EXPECT_TRUE(t.at("f").as_table().at("p").as_bool());
  EXPECT_EQ(t.at("f").as_table().at("q").as_table().at("r").as_string(), "s");
  EXPECT_TRUE(std::isinf(t.at("g").as_double()));
  EXPECT_FALSE(t.at("sec").as_table().at("sub").as_table().at("k").as_bool());
  const auto& arr = t.at("arr").as_array();
  ASSERT_EQ(arr.size(), 2u);
  EXPECT_EQ(arr[1].as_table().at("v").as_int(), 2);
  EXPECT_EQ(arr[1].as_table().at("inner").as_table().at("w").as_int(), 3);
  EXPECT_EQ(t.at("b").line, 4);
}

TEST(Toml, ErrorsCarryLineNumbers) {
  auto message = [](const std::string& s) {
    try {
      toml::parse(s);
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_EQ(message("a = 1\na = 2\n").rfind("line 2:", 0), 0u);
  EXPECT_NE(message("a = \"open\n").find("unterminated"), std::string::npos);
  EXPECT_NE(message("x = 1.2.3\n").find("invalid"), std::string::npos);
  EXPECT_NE(message("[t]\n[t]\n").find("defined twice"), std::string::npos);
  EXPECT_NE(message("a = 1 b = 2\n").find("unexpected"), std::string::npos);
  EXPECT_NE(message("a = [1, 2\n").find("line"), std::string::npos);
  EXPECT_NE(message("= 3\n").find("expected a key"), std::string::npos);
}

TEST(Toml, DumpRoundTrips) {
  const auto t = toml::parse("z = 0.1\ns = \"q\\\"\"\n[a]\nx = [1, 2]\n[a.b]\ny = -3.25e-7\n");
  const std::string d = toml::dump(t);
  EXPECT_EQ(toml::dump(toml::parse(d)), d);
  EXPECT_EQ(toml::parse(d).at("a").as_table().at("b").as_table().at("y").as_double(), -3.25e-7);
}

TEST(Scene, EditDistance) {
  EXPECT_EQ(edit_distance("tau0", "tau0"), 0);
  EXPECT_EQ(edit_distance("tua0", "tau0"), 2);
  EXPECT_EQ(edit_distance("", "abc"), 3);
  EXPECT_EQ(edit_distance("kitten", "sitting"), 3);
}

TEST(Scene, MinimalSceneGetsDefaults) {
  const SceneConfig c = parse_scene("");
  EXPECT_EQ(c.solver.levels, 1);
  EXPECT_DOUBLE_EQ(c.solver.tau0, 0.8);
  EXPECT_EQ(c.domain.extent, (Index2{64, 64}));
  EXPECT_TRUE(c.domain.periodic[0] && c.domain.periodic[1]);
  EXPECT_EQ(c.solver.rescale, RescaleConvention::post_collision);
  EXPECT_EQ(c.steps, 100);
  EXPECT_TRUE(make_particles(c).empty());
}

TEST(Scene, TauAtHalfNamesTau0) {
  const std::string e = config_error("tau0 = 0.5\n");
  EXPECT_NE(e.find("tau0"), std::string::npos) << e;
}

TEST(Scene, UnknownKeySuggestsNearest) {
  std::string e = config_error("tua0 = 0.8\n");
  EXPECT_NE(e.find("tua0: unknown key (did you mean 'tau0'?)"), std::string::npos) << e;
  e = config_error("[domain]\nextnt = [64, 64]\n");
  EXPECT_NE(e.find("domain.extnt: unknown key (did you mean 'domain.extent'?)"), std::string::npos) << e;
  e = config_error("[nonsense]\nx = 1\n");
  EXPECT_NE(e.find("nonsense: unknown key"), std::string::npos) << e;
}

TEST(Scene, AllViolationsReported) {
  const std::string e = config_error(R"(
tau0 = 0.4
[runtime]
steps = -1
threads = "four"
[boundaries]
x_min = "wall"
[init]
type = "vortex"
)");
  for (const char* k : {"tau0:", "runtime.steps:", "runtime.threads: expected an integer, got string",
                        "boundaries.x_max:", "init.type:"})
    EXPECT_NE(e.find(k), std::string::npos) << k << "\n" << e;
}

TEST(Scene, DomainAndUnitChecks) {
  EXPECT_NE(config_error("levels = 3\n[domain]\nextent = [40, 64]\n").find("domain.extent"), std::string::npos);
  EXPECT_NE(config_error("[domain]\ndx = 0.0\n").find("domain.dx"), std::string::npos);
  EXPECT_NE(config_error("[domain]\ndx = 0.01\ndt = 0.001\nu_ref = [1.0, 0.2]\n").find("domain.u_ref"),
            std::string::npos);
  EXPECT_NO_THROW(parse_scene("[domain]\ndx = 0.01\ndt = 0.001\nu_ref = [1.0, 0.1]\n"));
  EXPECT_NE(config_error("[powder]\nD = 0.3\n").find("powder.D"), std::string::npos);
  EXPECT_NE(config_error("[boundaries]\nx_min = \"inlet\"\nx_max = \"outlet\"\n").find("boundaries.inlet.u0"),
            std::string::npos);
}

TEST(Scene, UnitConversion) {
  const SceneConfig c = parse_scene(R"(
[domain]
dx = 0.01
dt = 1e-4
rho = 1000.0
[solver]
gravity = [0.0, -9.81]
[materials]
E = 1e6
[init]
type = "uniform"
velocity = [2.0, 0.0]
)");
  EXPECT_NEAR(c.solver.gravity[1], -9.81e-6, 1e-18);
  EXPECT_NEAR(c.sand.E, 0.1, 1e-15);
  EXPECT_NEAR(c.init.velocity[0], 0.02, 1e-16);
}

TEST(Scene, ReferencedFilesMustExist) {
  const fs::path dir = temp_dir("files");
  std::string e = config_error("[boundaries]\nterrain_file = \"/nonexistent/terrain.txt\"\n");
  EXPECT_NE(e.find("boundaries.terrain_file: file not found"), std::string::npos) << e;

  {
    std::ofstream os(dir / "terrain.txt");
    os << "# floor height per column\n";
    for (int i = 0; i < 64; ++i) os << (i < 32 ? 2 : 3) << "\n";
  }
  std::ofstream(dir / "scene.toml") << "[boundaries]\nterrain_file = \"terrain.txt\"\n"
                                       "x_min = \"wall\"\nx_max = \"wall\"\ny_min = \"wall\"\ny_max = \"wall\"\n";
  const SceneConfig c = load_scene((dir / "scene.toml").string());
  ASSERT_EQ(c.bc.terrain.height.size(), 64u);
  EXPECT_EQ(c.bc.terrain.height[40], 3.0);
  EXPECT_THROW(load_scene((dir / "missing.toml").string()), IoError);
}

TEST(Scene, ParseAndConfigErrorsAreDistinct) {
  EXPECT_THROW(parse_scene("tau0 = = 1\n"), ParseError);
  EXPECT_THROW(parse_scene("tau0 = 0.1\n"), ConfigError);
}

TEST(Scene, DescribeRoundTrips) {
  for (const char* name : {"taylor_green.toml", "dune2d.toml", "sand_column.toml"}) {
    const SceneConfig c = load_scene(std::string(GLBM_SOURCE_DIR) + "/scenes/" + name);
    const std::string d = describe(c);
    EXPECT_EQ(describe(parse_scene(d)), d) << name;
  }
}

TEST(Scene, ParticlesAreSeededDeterministically) {
  SceneConfig c = parse_scene(R"(
seed = 9
[domain]
extent = [64, 32]
[particles]
per_axis = 2
blocks = [[4.0, 4.0, 8.0, 8.0]]
[[particles.dune]]
center = 40.0
half_width = 10.0
height = 6.0
base = 2.0
)");
  const auto a = make_particles(c), b = make_particles(c);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].x, b[i].x);
  // Block: 4x4 cells, 4 particles each. Dune: area height * half_width.
  EXPECT_NEAR(static_cast<double>(a.size()), 64.0 + 4.0 * 60.0, 16.0);
  for (const auto& p : a)
    if (p.x[0] > 20.0) EXPECT_LE(p.x[1], c.dunes[0].surface(p.x[0]) + 0.5);
  c.seed = 10;
  EXPECT_NE(make_particles(c)[0].x, a[0].x);
}

TEST(Frames, VtkRoundTrip) {
  SceneConfig c = parse_scene(kBlockScene);
  c.solver.levels = c.domain.levels = 2;
  c.refine_mask = {{{8.0, 8.0}, {12.0, 12.0}}};
  CoupledSimulation sim(c.domain, make_coupled_config(c), make_particles(c));
  sim.initialize(make_init(c, sim.solver().level_params()));
  for (int n = 0; n < 3; ++n) sim.step();
  for (int l = 0; l < 2; ++l) {
    const VtkImage img = level_image(sim.solver(), l);
    std::stringstream ss;
    write_vtk(ss, img);
    const VtkImage back = read_vtk(ss);
    EXPECT_EQ(back.dims, img.dims);
    EXPECT_EQ(back.spacing, img.spacing);
    EXPECT_EQ(back.scalars, img.scalars);
    EXPECT_EQ(back.velocity, img.velocity);
  }
  // Level 0 is sparse: some nodes are not stored.
  const VtkImage img0 = level_image(sim.solver(), 0);
  double stored = 0.0;
  for (double s : img0.scalars.at("stored")) stored += s;
  EXPECT_GT(stored, 0.0);
  EXPECT_LT(stored, 32.0 * 32.0);
}

TEST(Frames, PpmAndCsvRoundTrip) {
  FinestField f;
  f.extent = {5, 3};
  for (int i = 0; i < 15; ++i) {
    f.rho.push_back(1.0);
    f.ux.push_back(0.01 * i);
    f.uy.push_back(0.0);
  }
  const PpmImage img = speed_image(f, 0.1);
  std::stringstream ss;
  write_ppm(ss, img);
  const PpmImage back = read_ppm(ss);
  EXPECT_EQ(back.width, 5);
  EXPECT_EQ(back.height, 3);
  EXPECT_EQ(back.rgb, img.rgb);
  // Row 0 of the image is the top of the domain.
  EXPECT_EQ(img.rgb[0], speed_image(f, 0.1).rgb[0]);
  EXPECT_NE(img.rgb[0 * 3 + 2], img.rgb[(2 * 5) * 3 + 2]);

  CsvTable t;
  t.header = {"a", "b"};
  t.rows = {{0.1, -1e-300}, {1.0 / 3.0, 12345.678}};
  std::stringstream cs;
  write_csv(cs, t);
  const CsvTable tb = read_csv(cs);
  EXPECT_EQ(tb.header, t.header);
  EXPECT_EQ(tb.rows, t.rows);
  std::stringstream bad("P3\n1 1\n255\n");
  EXPECT_THROW(read_ppm(bad), IoError);
}

TEST(Run, ZeroStepsWritesFrameZeroOnly) {
  const fs::path dir = temp_dir("zero");
  SceneConfig c = parse_scene(kBlockScene);
  RunOptions o;
  o.steps = 0;
  o.out_dir = dir.string();
  const RunSummary s = run_scene(c, o);
  EXPECT_EQ(s.frames, 1);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  EXPECT_EQ(names, (std::vector<std::string>{"density_000000.ppm", "diagnostics.csv", "frame_000000_l0.vtk",
                                             "particles_000000.bin", "speed_000000.ppm"}));
  std::ifstream is(dir / "diagnostics.csv");
  EXPECT_EQ(read_csv(is).rows.size(), 1u);
}

TEST(Run, FramesRoundTripAndRunIsDeterministic) {
  const fs::path a = temp_dir("det_a"), b = temp_dir("det_b");
  SceneConfig c = parse_scene(kBlockScene);
  c.output.cadence = 10;
  RunOptions o;
  o.out_dir = a.string();
  const RunSummary s = run_scene(c, o);
  EXPECT_EQ(s.steps, 20);
  EXPECT_EQ(s.frames, 3);
  EXPECT_TRUE(s.finite);
  o.out_dir = b.string();
  run_scene(c, o);
  for (const auto& e : fs::directory_iterator(a))
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();

  std::ifstream ps(a / "particles_000020.bin", std::ios::binary);
  const auto back = read_particles(ps);
  EXPECT_EQ(back.size(), make_particles(c).size());
  std::ifstream vs(a / "frame_000010_l0.vtk");
  EXPECT_EQ(read_vtk(vs).dims, (Index2{32, 32}));
  std::ifstream cs(a / "diagnostics.csv");
  const CsvTable t = read_csv(cs);
  ASSERT_EQ(t.rows.size(), 21u);
  const auto col = std::find(t.header.begin(), t.header.end(), "particle_mass") - t.header.begin();
  EXPECT_EQ(t.rows.front()[static_cast<std::size_t>(col)], t.rows.back()[static_cast<std::size_t>(col)]);
}

TEST(Run, DivergenceWritesSnapshotAndThrows) {
  const fs::path dir = temp_dir("diverge");
  SceneConfig c = parse_scene(R"(
[domain]
extent = [16, 16]
[solver]
gravity = [0.05, 0.02]
[runtime]
steps = 500
)");
  RunOptions o;
  o.out_dir = dir.string();
  EXPECT_THROW(run_scene(c, o), DivergenceError);
  bool snapshot = false;
  for (const auto& e : fs::directory_iterator(dir))
    snapshot = snapshot || e.path().filename().string().rfind("frame_divergence_", 0) == 0;
  EXPECT_TRUE(snapshot);
  EXPECT_TRUE(fs::exists(dir / "diagnostics.csv"));
}

TEST(Run, TaylorGreenSceneDecaysMonotonically) {
  SceneConfig c = load_scene(std::string(GLBM_SOURCE_DIR) + "/scenes/taylor_green.toml");
  const fs::path dir = temp_dir("tg");
  RunOptions o;
  o.out_dir = dir.string();
  const RunSummary s = run_scene(c, o);
  EXPECT_EQ(s.steps, 2000);
  EXPECT_TRUE(s.ke_monotone);
  std::ifstream is(dir / "diagnostics.csv");
  const CsvTable t = read_csv(is);
  const auto col = static_cast<std::size_t>(std::find(t.header.begin(), t.header.end(), "kinetic_energy") - t.header.begin());
  ASSERT_EQ(t.rows.size(), 2001u);
  for (std::size_t i = 1; i < t.rows.size(); ++i) ASSERT_LT(t.rows[i][col], t.rows[i - 1][col]) << i;
}

TEST(UniformReference, SingleLevelIsBitwiseIdentical) {
  SceneConfig c = parse_scene(kBlockScene);
  const FinestField a = run_fields(c, 12), b = run_fields(uniform_reference(c), 12);
  EXPECT_EQ(a.rho, b.rho);
  EXPECT_EQ(a.ux, b.ux);
  EXPECT_EQ(a.uy, b.uy);
}

TEST(UniformReference, UniformFlowThreeLevels) {
  SceneConfig c = parse_scene(R"(
levels = 3
[domain]
extent = [64, 64]
[refine]
mask = [[20.0, 20.0, 40.0, 40.0]]
[init]
type = "uniform"
velocity = [0.03, -0.02]
)");
  const FinestField a = run_fields(c, 40), b = run_fields(uniform_reference(c), 40);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.rho.size(); ++i)
    worst = std::max({worst, std::abs(a.rho[i] - b.rho[i]), std::abs(a.ux[i] - b.ux[i]), std::abs(a.uy[i] - b.uy[i])});
  EXPECT_LT(worst, 1e-12);
}

TEST(UniformReference, TaylorGreenTwoLevels) {
  SceneConfig c = parse_scene(R"(
levels = 2
[domain]
extent = [64, 64]
[refine]
mask = [[16.0, 16.0, 47.0, 47.0]]
[init]
type = "taylor_green"
u0 = 0.05
)");
  c.coupling_enabled = false;
  const FinestField a = run_fields(c, 200), b = run_fields(uniform_reference(c), 200);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.ux.size(); ++i) {
    num += std::pow(a.ux[i] - b.ux[i], 2) + std::pow(a.uy[i] - b.uy[i], 2);
    den += b.ux[i] * b.ux[i] + b.uy[i] * b.uy[i];
  }
  EXPECT_LT(std::sqrt(num / den), 0.02);
}

TEST(Validate, ReportsAndOptions) {
  const ValidationReport r = validate_case("rescale-roundtrip", {{"samples", 2000}});
  EXPECT_TRUE(r.pass);
  const auto j = nlohmann::json::parse(r.json());
  EXPECT_EQ(j["case"], "rescale-roundtrip");
  EXPECT_TRUE(j["pass"].get<bool>());
  EXPECT_GE(j["values"]["paper_literal"].get<double>(), 1e-14);
  EXPECT_LT(j["values"]["derived"].get<double>(), 1e-14);

  EXPECT_TRUE(validate_case("adapt-fuzz", {{"walks", 3}, {"updates", 30}}).pass);
  EXPECT_THROW(validate_case("rescale-roundtrip", {{"bogus", 1}}), ConfigError);
  EXPECT_THROW(validate_case("no-such-case"), ConfigError);
  EXPECT_EQ(validation_cases().size(), 7u);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = temp_dir("cli");
  const std::string scenes = std::string(GLBM_SOURCE_DIR) + "/scenes/";
  std::string out;
  EXPECT_EQ(run_cli("info " + scenes + "taylor_green.toml", &out), 0);
  EXPECT_NE(out.find("tau0 = 0.8"), std::string::npos);

  std::ofstream(dir / "bad.toml") << "tau0 = 0.5\n";
  EXPECT_EQ(run_cli("info " + (dir / "bad.toml").string(), &out), 2);
  EXPECT_NE(out.find("tau0"), std::string::npos);
  std::ofstream(dir / "broken.toml") << "tau0 = \n";
  EXPECT_EQ(run_cli("info " + (dir / "broken.toml").string()), 5);
  EXPECT_EQ(run_cli("info " + (dir / "absent.toml").string()), 4);

  std::ofstream(dir / "div.toml") << "[domain]\nextent = [16, 16]\n[solver]\ngravity = [0.05, 0.02]\n";
  EXPECT_EQ(run_cli("run " + (dir / "div.toml").string() + " --out " + (dir / "div").string()), 3);

  std::ofstream(dir / "ok.toml") << "[domain]\nextent = [16, 16]\n";
  EXPECT_EQ(run_cli("run " + (dir / "ok.toml").string() + " --steps 3 --threads 2 --out " + (dir / "ok").string(), &out), 0);
  EXPECT_NE(out.find("steps            3"), std::string::npos) << out;
  EXPECT_EQ(run_cli("run " + (dir / "ok.toml").string() + " --steps 1 --out /proc/forbidden/x"), 4);
  EXPECT_EQ(run_cli("run " + (dir / "ok.toml").string() + " --steps 1 --out " + (dir / "ok").string(), nullptr, "SIM_THREADS=0"), 2);
  EXPECT_EQ(run_cli("run " + (dir / "ok.toml").string() + " --steps 1 --out " + (dir / "ok").string(), nullptr, "SIM_THREADS=3"), 0);

  EXPECT_EQ(run_cli("validate rescale-roundtrip --samples 500", &out), 0);
  EXPECT_TRUE(nlohmann::json::parse(out)["pass"].get<bool>());
  EXPECT_EQ(run_cli("validate nothing"), 2);
  EXPECT_EQ(run_cli("validate adapt-fuzz --walks x"), 2);
}
