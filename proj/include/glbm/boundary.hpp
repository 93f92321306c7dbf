#pragma once

#include <array>
#include <string>
#include <vector>

namespace glbm {

enum class FaceKind { periodic, wall, outlet, inlet };

/// Domain faces in the order x-, x+, y-, y+.
enum Face : int { kXMin = 0, kXMax = 1, kYMin = 2, kYMax = 3 };

/// u_x(y) = u0 ln(1 + beta (y - y0)) above y0, zero below.
struct LogInlet {
  double u0 = 0.0;
  double beta = 1.0;
  double y0 = 0.0;

  double velocity(double y) const;
};

struct FaceSpec {
  FaceKind kind = FaceKind::periodic;
  LogInlet inlet{};
};

/// Axis-aligned box in finest-level lattice coordinates.
struct Box {
  std::array<double, 2> lo{};
  std::array<double, 2> hi{};

  bool contains(double x, double y) const {
    return x >= lo[0] && x <= hi[0] && y >= lo[1] && y <= hi[1];
  }
  bool intersects(const Box& o) const {
    return lo[0] <= o.hi[0] && o.lo[0] <= hi[0] && lo[1] <= o.hi[1] && o.lo[1] <= hi[1];
  }
};

/// Solid floor y <= height(x), sampled once per finest column.
struct Heightfield {
  std::vector<double> height;  // indexed by finest-level x node
  bool contains(double x, double y) const;
};

struct BoundarySpec {
  std::array<FaceSpec, 4> faces{};
  std::vector<Box> solids;
  Heightfield terrain;

  bool periodic(int axis) const { return faces[2 * axis].kind == FaceKind::periodic; }
  bool solid_at(double x, double y) const;

  /// Throws ConfigError when the face combination is inconsistent.
  void validate(double domain_height) const;
};

std::string to_string(FaceKind k);
FaceKind face_kind_from_string(const std::string& s);

}  // namespace glbm
