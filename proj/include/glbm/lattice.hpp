#pragma once

#include <array>
#include <cmath>
#include <cstddef>

#include "glbm/errors.hpp"

namespace glbm {

/// D2Q9 velocity set. Rest direction first, then the four axis directions,
/// then the four diagonals.
struct D2Q9 {
  static constexpr int d = 2;
  static constexpr int q = 9;
  static constexpr double cs2 = 1.0 / 3.0;

  static constexpr std::array<std::array<int, 2>, 9> c = {
      {{0, 0}, {1, 0}, {0, 1}, {-1, 0}, {0, -1}, {1, 1}, {-1, 1}, {-1, -1}, {1, -1}}};
  static constexpr std::array<double, 9> w = {4.0 / 9.0,  1.0 / 9.0,  1.0 / 9.0,
                                              1.0 / 9.0,  1.0 / 9.0,  1.0 / 36.0,
                                              1.0 / 36.0, 1.0 / 36.0, 1.0 / 36.0};
  static constexpr std::array<int, 9> opposite = {0, 3, 4, 1, 2, 7, 8, 5, 6};

  /// Third-order Hermite components that exist on this lattice: xxy, xyy.
  /// The remaining entries of the full index set (xxz, xzz, yzz, yyz, xyz)
  /// belong to three-dimensional velocity sets.
  static constexpr std::array<std::array<int, 3>, 2> third_order = {{{0, 0, 1}, {0, 1, 1}}};
};

/// Number of independent components of a symmetric d x d tensor.
constexpr int sym_size(int d) { return d * (d + 1) / 2; }

/// Packed index of S_ab in the upper-triangular row-major layout
/// (2D: xx, xy, yy).
constexpr int sym_index(int d, int a, int b) {
  if (a > b) {
    const int t = a;
    a = b;
    b = t;
  }
  // rows 0..a-1 contribute d, d-1, ... entries
  return a * d - a * (a - 1) / 2 + (b - a);
}

template <class Lattice>
struct Moments {
  static constexpr int d = Lattice::d;
  double rho = 1.0;
  std::array<double, d> u{};
  std::array<double, sym_size(d)> S{};

  double s(int a, int b) const { return S[sym_index(d, a, b)]; }
  double& s(int a, int b) { return S[sym_index(d, a, b)]; }
};

template <class Lattice>
using Populations = std::array<double, Lattice::q>;

namespace lattice_detail {

template <class Lattice>
constexpr double hermite2(int i, int a, int b) {
  return Lattice::c[i][a] * Lattice::c[i][b] - (a == b ? Lattice::cs2 : 0.0);
}

template <class Lattice>
constexpr double hermite3(int i, int a, int b, int g) {
  const auto& ci = Lattice::c[i];
  return ci[a] * ci[b] * ci[g] -
         Lattice::cs2 * (ci[a] * (b == g) + ci[b] * (a == g) + ci[g] * (a == b));
}

template <class Lattice>
struct Tables {
  static constexpr int q = Lattice::q;
  static constexpr int ns = sym_size(Lattice::d);
  static constexpr int n3 = static_cast<int>(Lattice::third_order.size());

  // H2 contracted with a packed symmetric tensor: off-diagonals appear twice.
  std::array<std::array<double, ns>, q> h2_contract{};
  std::array<std::array<double, ns>, q> h2{};
  std::array<std::array<double, n3>, q> h3{};

  constexpr Tables() {
    for (int i = 0; i < q; ++i) {
      for (int a = 0; a < Lattice::d; ++a) {
        for (int b = a; b < Lattice::d; ++b) {
          const int k = sym_index(Lattice::d, a, b);
          h2[i][k] = hermite2<Lattice>(i, a, b);
          h2_contract[i][k] = (a == b ? 1.0 : 2.0) * h2[i][k];
        }
      }
      for (int k = 0; k < n3; ++k) {
        const auto& idx = Lattice::third_order[k];
        h3[i][k] = hermite3<Lattice>(i, idx[0], idx[1], idx[2]);
      }
    }
  }
};

template <class Lattice>
inline constexpr Tables<Lattice> tables{};

}  // namespace lattice_detail

/// Value of H^[2]_ab at direction i.
template <class Lattice>
constexpr double hermite2(int i, int a, int b) {
  return lattice_detail::hermite2<Lattice>(i, a, b);
}

/// Value of H^[3]_abg at direction i.
template <class Lattice>
constexpr double hermite3(int i, int a, int b, int g) {
  return lattice_detail::hermite3<Lattice>(i, a, b, g);
}

/// Second-order equilibrium populations.
template <class Lattice>
Populations<Lattice> equilibrium(double rho, const std::array<double, Lattice::d>& u) {
  constexpr double cs2 = Lattice::cs2;
  double usq = 0.0;
  for (int a = 0; a < Lattice::d; ++a) usq += u[a] * u[a];
  Populations<Lattice> f{};
  for (int i = 0; i < Lattice::q; ++i) {
    double cu = 0.0;
    for (int a = 0; a < Lattice::d; ++a) cu += Lattice::c[i][a] * u[a];
    f[i] = rho * Lattice::w[i] *
           (1.0 + cu / cs2 + cu * cu / (2.0 * cs2 * cs2) - usq / (2.0 * cs2));
  }
  return f;
}

/// Equilibrium second moment, u (x) u. Independent of density.
template <class Lattice>
std::array<double, sym_size(Lattice::d)> seq(const std::array<double, Lattice::d>& u) {
  std::array<double, sym_size(Lattice::d)> s{};
  for (int a = 0; a < Lattice::d; ++a)
    for (int b = a; b < Lattice::d; ++b) s[sym_index(Lattice::d, a, b)] = u[a] * u[b];
  return s;
}

/// Third-order coefficient Gamma_abg = S_ab u_g + S_ag u_b + S_bg u_a - 2 u_a u_b u_g
/// for each supported component, already divided by 2 cs^6.
template <class Lattice>
std::array<double, Lattice::third_order.size()> third_order_coefficients(const Moments<Lattice>& m) {
  constexpr double cs2 = Lattice::cs2;
  constexpr double scale = 1.0 / (2.0 * cs2 * cs2 * cs2);
  std::array<double, Lattice::third_order.size()> g{};
  for (std::size_t k = 0; k < Lattice::third_order.size(); ++k) {
    const int a = Lattice::third_order[k][0];
    const int b = Lattice::third_order[k][1];
    const int c = Lattice::third_order[k][2];
    g[k] = scale * (m.s(a, b) * m.u[c] + m.s(a, c) * m.u[b] + m.s(b, c) * m.u[a] -
                    2.0 * m.u[a] * m.u[b] * m.u[c]);
  }
  return g;
}

/// One population of the third-order Hermite reconstruction.
template <class Lattice>
double reconstruct_one(const Moments<Lattice>& m, int i) {
  constexpr double cs2 = Lattice::cs2;
  constexpr double inv_cs2 = 1.0 / cs2;
  constexpr double inv_2cs4 = 1.0 / (2.0 * cs2 * cs2);
  const auto& t = lattice_detail::tables<Lattice>;
  double cu = 0.0;
  for (int a = 0; a < Lattice::d; ++a) cu += Lattice::c[i][a] * m.u[a];
  double h2s = 0.0;
  for (int k = 0; k < sym_size(Lattice::d); ++k) h2s += t.h2_contract[i][k] * m.S[k];
  const auto g = third_order_coefficients(m);
  double h3g = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) h3g += t.h3[i][k] * g[k];
  return m.rho * Lattice::w[i] * (1.0 + cu * inv_cs2 + h2s * inv_2cs4 + h3g);
}

/// All populations of the third-order Hermite reconstruction.
template <class Lattice>
Populations<Lattice> reconstruct(const Moments<Lattice>& m) {
  Populations<Lattice> f{};
  for (int i = 0; i < Lattice::q; ++i) f[i] = reconstruct_one(m, i);
  return f;
}

/// Raw moment sums of a population set: rho, sum c f, sum (cc - cs2 I) f.
template <class Lattice>
struct RawMoments {
  double rho = 0.0;
  std::array<double, Lattice::d> j{};
  std::array<double, sym_size(Lattice::d)> pi{};
};

template <class Lattice>
inline void accumulate(RawMoments<Lattice>& r, int i, double fi) {
  const auto& t = lattice_detail::tables<Lattice>;
  r.rho += fi;
  for (int a = 0; a < Lattice::d; ++a) r.j[a] += Lattice::c[i][a] * fi;
  for (int k = 0; k < sym_size(Lattice::d); ++k) r.pi[k] += t.h2[i][k] * fi;
}

/// Moments from raw sums with the half-force velocity shift.
/// Throws DivergenceError if the density is not positive.
template <class Lattice>
Moments<Lattice> from_raw(const RawMoments<Lattice>& r, const std::array<double, Lattice::d>& force) {
  if (!(r.rho > 0.0)) throw DivergenceError("non-positive density in moment recovery");
  Moments<Lattice> m;
  m.rho = r.rho;
  for (int a = 0; a < Lattice::d; ++a) m.u[a] = (r.j[a] + 0.5 * force[a]) / r.rho;
  for (int k = 0; k < sym_size(Lattice::d); ++k) m.S[k] = r.pi[k] / r.rho;
  return m;
}

/// Moments of a population set with the half-force velocity shift.
template <class Lattice>
Moments<Lattice> compute_moments(const Populations<Lattice>& f,
                                 const std::array<double, Lattice::d>& force) {
  RawMoments<Lattice> r;
  for (int i = 0; i < Lattice::q; ++i) accumulate(r, i, f[i]);
  return from_raw(r, force);
}

}  // namespace glbm
