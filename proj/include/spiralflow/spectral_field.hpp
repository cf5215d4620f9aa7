#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "spiralflow/common.hpp"
#include "spiralflow/grid.hpp"
#include "spiralflow/params.hpp"

namespace spiralflow {

// One Fourier mode's profile on the beta-grid plus its value at beta = inf.
// Profiles of nonzero modes that live in C^delta_0 carry a zero infinity
// slot; the slot is stored explicitly either way.
struct ModeFunction {
  int n = 0;
  Eigen::VectorXcd values;
  Complex value_at_infinity = 0.0;

  ModeFunction() = default;
  ModeFunction(int n_in, int grid_size) : n(n_in), values(Eigen::VectorXcd::Zero(grid_size)) {}

  Eigen::VectorXcd extended() const {
    Eigen::VectorXcd out(values.size() + 1);
    out.head(values.size()) = values;
    out(values.size()) = value_at_infinity;
    return out;
  }

  static ModeFunction from_extended(int n_in, const Eigen::VectorXcd& ext) {
    ModeFunction m;
    m.n = n_in;
    m.values = ext.head(ext.size() - 1);
    m.value_at_infinity = ext(ext.size() - 1);
    return m;
  }

  bool finite() const {
    for (int i = 0; i < values.size(); ++i)
      if (!std::isfinite(values(i).real()) || !std::isfinite(values(i).imag())) return false;
    return std::isfinite(value_at_infinity.real()) && std::isfinite(value_at_infinity.imag());
  }
};

enum class RoleTag { f, g, h, u, v, generic };

inline std::string role_name(RoleTag r) {
  switch (r) {
    case RoleTag::f: return "f";
    case RoleTag::g: return "g";
    case RoleTag::h: return "h";
    case RoleTag::u: return "u";
    case RoleTag::v: return "v";
    default: return "generic";
  }
}

// A full unknown as one ModeFunction per retained mode.
struct SpectralField {
  ModeSet mode_set;
  RoleTag role_tag = RoleTag::generic;
  std::vector<ModeFunction> modes;  // indexed n + n_max

  SpectralField() = default;
  SpectralField(const ModeSet& ms, int grid_size, RoleTag tag = RoleTag::generic)
      : mode_set(ms), role_tag(tag) {
    modes.reserve(ms.count());
    for (int n = -ms.n_max; n <= ms.n_max; ++n) modes.emplace_back(n, grid_size);
  }

  ModeFunction& mode(int n) { return modes[mode_set.index_of(n)]; }
  const ModeFunction& mode(int n) const { return modes[mode_set.index_of(n)]; }
  int grid_size() const { return modes.empty() ? 0 : static_cast<int>(modes[0].values.size()); }

  // conjugate pairing of a real-valued field, applied in place
  void enforce_conjugate_symmetry() {
    mode(0).values = 0.5 * (mode(0).values + mode(0).values.conjugate());
    mode(0).value_at_infinity = Complex(mode(0).value_at_infinity.real(), 0.0);
    for (int n = 1; n <= mode_set.n_max; ++n) {
      ModeFunction& pos = mode(n);
      ModeFunction& neg = mode(-n);
      Eigen::VectorXcd avg = 0.5 * (pos.values + neg.values.conjugate());
      pos.values = avg;
      neg.values = avg.conjugate();
      Complex vi = 0.5 * (pos.value_at_infinity + std::conj(neg.value_at_infinity));
      pos.value_at_infinity = vi;
      neg.value_at_infinity = std::conj(vi);
    }
  }

  bool finite() const {
    for (const auto& m : modes)
      if (!m.finite()) return false;
    return true;
  }

  SpectralField& operator+=(const SpectralField& o) {
    for (size_t i = 0; i < modes.size(); ++i) {
      modes[i].values += o.modes[i].values;
      modes[i].value_at_infinity += o.modes[i].value_at_infinity;
    }
    return *this;
  }
  SpectralField& operator-=(const SpectralField& o) {
    for (size_t i = 0; i < modes.size(); ++i) {
      modes[i].values -= o.modes[i].values;
      modes[i].value_at_infinity -= o.modes[i].value_at_infinity;
    }
    return *this;
  }
  SpectralField& operator*=(Real s) {
    for (auto& m : modes) {
      m.values *= s;
      m.value_at_infinity *= s;
    }
    return *this;
  }
};

struct NormReport {
  Real norm_A_half_Cdelta = 0.0;
  Real norm_sup = 0.0;
  std::map<int, Real> per_mode_Cdelta;
};

// Discrete surrogate of ||f||_{C^delta} = ||f||_sup + sup beta^delta |f - f(inf)|,
// suprema taken over grid nodes (plus the infinity slot for the sup part).
inline Real cdelta_norm(const ModeFunction& m, const BetaGrid& grid, Real delta) {
  if (!m.finite()) throw std::invalid_argument("cdelta_norm: non-finite mode function");
  Real sup = std::abs(m.value_at_infinity);
  Real weighted = 0.0;
  for (int i = 0; i < m.values.size(); ++i) {
    sup = std::max(sup, std::abs(m.values(i)));
    Real wterm = std::pow(grid.nodes[i], delta) * std::abs(m.values(i) - m.value_at_infinity);
    weighted = std::max(weighted, wterm);
  }
  return sup + weighted;
}

// || . ||_{A^alpha C^delta} = sum_n <n>^alpha ||mode n||_{C^delta},
// <n> = sqrt(1 + n^2). norm_sup is the collocation sup of the synthesized
// field, which the weighted sum dominates.
inline NormReport weighted_sum_norm(const SpectralField& s, const BetaGrid& grid, Real alpha,
                                    Real delta) {
  NormReport rep;
  for (const auto& m : s.modes) {
    Real c = cdelta_norm(m, grid, delta);
    rep.per_mode_Cdelta[m.n] = c;
    rep.norm_A_half_Cdelta += std::pow(1.0 + static_cast<Real>(m.n) * m.n, 0.5 * alpha) * c;
  }
  const int n_phi = std::max(3 * s.mode_set.n_max, 96);
  for (int i = 0; i < s.grid_size(); ++i) {
    for (int j = 0; j < n_phi; ++j) {
      Real phi = 2.0 * kPi * j / n_phi;
      Complex acc = 0.0;
      for (const auto& m : s.modes) acc += m.values(i) * std::polar(1.0, m.n * phi);
      rep.norm_sup = std::max(rep.norm_sup, std::abs(acc));
    }
  }
  return rep;
}

// Real-valued samples u(beta_i, phi_j) on the collocation grid,
// phi_j = 2 pi j / n_phi. n_phi >= 3 n_max guards the later dealiased
// analysis of nonlinear terms.
inline Eigen::MatrixXd to_collocation(const SpectralField& s, int n_phi) {
  if (n_phi < 3 * s.mode_set.n_max)
    throw ConfigError("to_collocation: n_phi must be at least 3*n_max");
  const int nb = s.grid_size();
  Eigen::MatrixXd out(nb, n_phi);
  std::vector<Complex> phase(n_phi);
  Eigen::MatrixXcd twiddle(s.mode_set.count(), n_phi);
  for (int j = 0; j < n_phi; ++j) {
    Real phi = 2.0 * kPi * j / n_phi;
    for (int n = -s.mode_set.n_max; n <= s.mode_set.n_max; ++n)
      twiddle(s.mode_set.index_of(n), j) = std::polar(1.0, n * phi);
  }
  for (int i = 0; i < nb; ++i) {
    for (int j = 0; j < n_phi; ++j) {
      Complex acc = 0.0;
      for (int idx = 0; idx < s.mode_set.count(); ++idx)
        acc += s.modes[idx].values(i) * twiddle(idx, j);
      out(i, j) = acc.real();
    }
  }
  return out;
}

// Discrete Fourier analysis, discarding modes beyond n_max (dealiasing by
// truncation). Adjoint of to_collocation on band-limited data.
inline SpectralField from_collocation(const Eigen::MatrixXd& values, const ModeSet& ms,
                                      RoleTag tag = RoleTag::generic) {
  const int nb = static_cast<int>(values.rows());
  const int n_phi = static_cast<int>(values.cols());
  if (n_phi < 3 * ms.n_max) throw ConfigError("from_collocation: n_phi must be at least 3*n_max");
  SpectralField s(ms, nb, tag);
  Eigen::MatrixXcd twiddle(ms.count(), n_phi);
  for (int j = 0; j < n_phi; ++j) {
    Real phi = 2.0 * kPi * j / n_phi;
    for (int n = -ms.n_max; n <= ms.n_max; ++n)
      twiddle(ms.index_of(n), j) = std::polar(1.0, -n * phi);
  }
  for (int i = 0; i < nb; ++i) {
    for (int idx = 0; idx < ms.count(); ++idx) {
      Complex acc = 0.0;
      for (int j = 0; j < n_phi; ++j) acc += values(i, j) * twiddle(idx, j);
      s.modes[idx].values(i) = acc / static_cast<Real>(n_phi);
    }
  }
  s.enforce_conjugate_symmetry();
  return s;
}

}  // namespace spiralflow
