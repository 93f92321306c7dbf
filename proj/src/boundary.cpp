#include "glbm/boundary.hpp"

#include <cmath>

#include "glbm/errors.hpp"

namespace glbm {

double LogInlet::velocity(double y) const {
  if (y <= y0) return 0.0;
  return u0 * std::log(1.0 + beta * (y - y0));
}

bool Heightfield::contains(double x, double y) const {
  if (height.empty()) return false;
  long ix = std::lround(x);
  if (ix < 0) ix = 0;
  if (ix >= static_cast<long>(height.size())) ix = static_cast<long>(height.size()) - 1;
  return y <= height[static_cast<std::size_t>(ix)];
}

bool BoundarySpec::solid_at(double x, double y) const {
  for (const auto& b : solids)
    if (b.contains(x, y)) return true;
  return terrain.contains(x, y);
}

void BoundarySpec::validate(double domain_height) const {
  for (int axis = 0; axis < 2; ++axis) {
    const bool lo = faces[2 * axis].kind == FaceKind::periodic;
    const bool hi = faces[2 * axis + 1].kind == FaceKind::periodic;
    if (lo != hi)
      throw ConfigError("boundaries: opposite faces of axis " + std::to_string(axis) +
                        " must both be periodic or neither");
  }
  for (const auto& f : faces) {
    if (f.kind != FaceKind::inlet) continue;
    if (f.inlet.y0 < 0.0 || f.inlet.y0 > domain_height)
      throw ConfigError("boundaries: log inlet y0 outside the domain height");
    if (f.inlet.beta <= 0.0) throw ConfigError("boundaries: log inlet beta must be positive");
  }
}

std::string to_string(FaceKind k) {
  switch (k) {
    case FaceKind::periodic: return "periodic";
    case FaceKind::wall: return "wall";
    case FaceKind::outlet: return "outlet";
    case FaceKind::inlet: return "inlet";
  }
  return "?";
}

FaceKind face_kind_from_string(const std::string& s) {
  if (s == "periodic") return FaceKind::periodic;
  if (s == "wall") return FaceKind::wall;
  if (s == "outlet") return FaceKind::outlet;
  if (s == "inlet") return FaceKind::inlet;
  throw ConfigError("unknown face kind '" + s + "'");
}

}  // namespace glbm
