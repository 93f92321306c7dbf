// Command-line front end: run scenes, run validation cases, print resolved configs.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "glbm/errors.hpp"
#include "glbm/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFail = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;
constexpr int kExitParse = 5;

std::optional<int> env_threads() {
  const char* s = std::getenv("SIM_THREADS");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const long v = std::strtol(s, &end, 10);
  if (*end != '\0' || v < 1 || v > 1024) throw glbm::ConfigError("SIM_THREADS: must be an integer in [1, 1024]");
  return static_cast<int>(v);
}

std::map<std::string, double> case_options(const std::vector<std::string>& extras) {
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string key = extras[i];
    if (key.rfind("--", 0) != 0) throw glbm::ConfigError("validate: expected --option, got '" + key + "'");
    key = key.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else if (i + 1 < extras.size()) {
      value = extras[++i];
    } else {
      throw glbm::ConfigError("validate: option --" + key + " needs a value");
    }
    for (char& c : key)
      if (c == '-') c = '_';
    try {
      std::size_t used = 0;
      out[key] = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw glbm::ConfigError("validate: option --" + key + " expects a number, got '" + value + "'");
    }
  }
  return out;
}

void print_summary(const glbm::RunSummary& s) {
  std::printf("steps            %ld\n", s.steps);
  std::printf("frames           %d\n", s.frames);
  std::printf("ke_monotone      %s\n", s.ke_monotone ? "yes" : "no");
  std::printf("max_cell_ratio   %.6f\n", s.max_cell_ratio);
  std::printf("particle_area    %.6f\n", s.particle_fraction);
  std::printf("audit_residual   %.3e\n", s.max_audit_residual);
  std::printf("mpm_violations   %ld\n", s.mpm_violations);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive multi-level lattice Boltzmann solver coupled to MPM sand"};
  app.require_subcommand(1);

  std::string scene;
  std::optional<long> steps;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  CLI::App* run = app.add_subcommand("run", "Run a scene file");
  run->add_option("scene", scene, "Scene TOML file")->required();
  run->add_option("--steps", steps, "Top-level steps (overrides runtime.steps)");
  run->add_option("--out", out_dir, "Output directory (overrides output.directory)");
  run->add_option("--threads", threads, "Worker threads (falls back to SIM_THREADS, then runtime.threads)");

  std::string case_name;
  CLI::App* validate = app.add_subcommand("validate", "Run one validation case and print a JSON report");
  validate->add_option("case", case_name, "Case name")->required();
  validate->allow_extras();
  validate->footer("Cases: taylor-green, poiseuille, multilevel-consistency, sand-collapse, conservation, "
                   "adapt-fuzz, rescale-roundtrip. Case options are given as --name value.");

  std::string info_scene;
  CLI::App* info = app.add_subcommand("info", "Print the resolved configuration of a scene");
  info->add_option("scene", info_scene, "Scene TOML file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) {
      glbm::SceneConfig cfg = glbm::load_scene(scene);
      glbm::RunOptions opt;
      opt.steps = steps;
      opt.out_dir = out_dir;
      opt.threads = threads ? threads : env_threads();
      print_summary(glbm::run_scene(cfg, opt));
      return kExitOk;
    }
    if (*validate) {
      const auto report = glbm::validate_case(case_name, case_options(validate->remaining()));
      std::cout << report.json() << std::endl;
      return report.pass ? kExitOk : kExitFail;
    }
    if (*info) {
      std::cout << glbm::describe(glbm::load_scene(info_scene));
      return kExitOk;
    }
  } catch (const glbm::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const glbm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const glbm::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const glbm::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}
