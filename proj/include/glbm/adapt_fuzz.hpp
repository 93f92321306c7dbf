#pragma once

// Random particle walks driving GridAdapter, checked against brute_force_grid.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "glbm/adapt.hpp"

namespace glbm::reference {

struct FuzzStats {
  long updates = 0;
  long settled_checks = 0;
  long mismatches = 0;
  long violations = 0;
  long noop_changes = 0;
  std::string first_failure;
};

inline double wrapped_gap(const GridDomain& dom, const Vec2& a, const Vec2& b) {
  double g = 0.0;
  for (int k = 0; k < 2; ++k) {
    double d = std::abs(a[static_cast<std::size_t>(k)] - b[static_cast<std::size_t>(k)]);
    if (dom.periodic[static_cast<std::size_t>(k)]) d = std::min(d, dom.extent[static_cast<std::size_t>(k)] - d);
    g = std::max(g, d);
  }
  return g;
}

/// Smallest Chebyshev distance (finest cells) between I^u_{l+1} and I^d_l.
inline double interface_gap(const GridTopology& topo) {
  double gap = 1e300;
  const auto& sets = topo.interfaces();
  for (int l = 0; l + 1 < topo.levels(); ++l)
    for (const auto& u : sets.up[static_cast<std::size_t>(l) + 1])
      for (const auto& d : sets.down[static_cast<std::size_t>(l)])
        gap = std::min(gap, wrapped_gap(topo.domain(), topo.position(l + 1, u.cell), topo.position(l, d.cell)));
  return gap;
}

/// One walk of `updates` adapter updates in cycles of three: particles move,
/// the next update settles (current and previous requests agree) and is compared
/// with the brute-force hierarchy, the third must be a no-op.
inline void fuzz_walk(std::uint64_t seed, int updates, FuzzStats& st, bool check_gap = false) {
  std::mt19937_64 rng(seed);
  GridDomain dom;
  const int L = 2 + static_cast<int>(rng() % 3);
  const int ext = 32 << (L - 1);
  dom.extent = {ext, ext};
  const bool periodic = rng() % 2 == 0;
  dom.periodic = {periodic, periodic};
  dom.levels = L;
  BoundarySpec bc;
  if (!periodic)
    for (auto& f : bc.faces) f.kind = FaceKind::wall;

  std::uniform_real_distribution<double> pos(0.0, ext - 1e-9), step(-3.0, 3.0);
  RefineDriver drv;
  const int np = 1 + static_cast<int>(rng() % 6);
  for (int i = 0; i < np; ++i) drv.particles.push_back({pos(rng), pos(rng)});

  GridTopology topo = brute_force_grid(dom, RefineDriver{}, bc);
  GridAdapter adapter;
  for (int n = 0; n < updates; ++n) {
    if (n % 3 == 0) {
      for (auto& p : drv.particles)
        for (auto& x : p) {
          x += step(rng);
          if (periodic) x = std::fmod(x + ext, static_cast<double>(ext));
          else x = std::clamp(x, 0.0, ext - 1e-9);
        }
    }
    const std::size_t before = topo.total_tiles();
    const AdaptReport rep = adapter.update(topo, bc, drv);
    ++st.updates;
    auto fail = [&](const std::string& what) {
      if (st.first_failure.empty())
        st.first_failure = "seed " + std::to_string(seed) + " update " + std::to_string(n) + ": " + what;
    };
    if (!rep.violations.empty()) {
      ++st.violations;
      fail(rep.violations.front());
      return;
    }
    const auto errs = check_adapted(topo, drv);
    if (!errs.empty()) {
      ++st.violations;
      fail(errs.front());
    }
    if (check_gap && interface_gap(topo) < 4.0) {
      ++st.violations;
      fail("interface gap below 4");
    }
    if (n % 3 == 1) {
      ++st.settled_checks;
      if (brute_force_grid(dom, drv, bc).snapshot() != topo.snapshot()) {
        ++st.mismatches;
        fail("topology differs from brute force");
      }
    } else if (n % 3 == 2 && (rep.changed || topo.total_tiles() != before)) {
      ++st.noop_changes;
      fail("no-op update changed the grid");
    }
  }
}

}  // namespace glbm::reference
