#pragma once

#include <cmath>
#include <vector>

#include "spiralflow/common.hpp"

namespace spiralflow {

// Upper end of the admissible decay-exponent interval for a given mu.
// The bound is the slowest tail decay rate of the |n|=2 mode inverses.
inline Real delta_upper_bound(Real mu) {
  return std::min(std::sqrt(4.0 * mu * mu - 2.0 * mu + 1.0) - 2.0 * mu + 1.0, 1.0);
}

inline Real default_delta(Real mu) {
  if (!(mu > 1.0)) throw ConfigError("default_delta: requires mu > 1");
  return 0.5 * delta_upper_bound(mu);
}

struct Params {
  Real mu = 1.5;
  Real delta = default_delta(1.5);
  int n_max = 32;
  Real beta_inf_cut = 200.0;   // floor for where closed-form tail handling starts
  Real tol_quadrature = 1e-10;
  Real tol_fixed_point = 1e-9;
  int max_iters = 40;

  void validate() const {
    if (!(mu > 1.0)) throw ConfigError("Params: mu must be > 1");
    if (!(delta > 0.0) || !(delta < delta_upper_bound(mu)))
      throw ConfigError("Params: delta outside (0, min{sqrt(4mu^2-2mu+1)-2mu+1, 1})");
    if (n_max < 1) throw ConfigError("Params: n_max must be positive");
    if (!(beta_inf_cut >= 2.0)) throw ConfigError("Params: beta_inf_cut must be >= 2");
    if (!(tol_quadrature > 0.0) || !(tol_fixed_point > 0.0))
      throw ConfigError("Params: tolerances must be positive");
    if (max_iters < 1) throw ConfigError("Params: max_iters must be positive");
  }

  static Params with_mu(Real mu_in, int n_max_in = 32) {
    Params p;
    p.mu = mu_in;
    p.delta = default_delta(mu_in);
    p.n_max = n_max_in;
    p.validate();
    return p;
  }
};

// Retained Fourier modes n = -n_max..n_max. Real fields satisfy the
// conjugate pairing f_{-n} = conj(f_n).
struct ModeSet {
  int n_max = 0;
  bool hermitian_pairing = true;

  int count() const { return 2 * n_max + 1; }
  int index_of(int n) const { return n + n_max; }
  int mode_at(int idx) const { return idx - n_max; }
  bool contains(int n) const { return n >= -n_max && n <= n_max; }
  std::vector<int> modes() const {
    std::vector<int> out;
    out.reserve(count());
    for (int n = -n_max; n <= n_max; ++n) out.push_back(n);
    return out;
  }
};

}  // namespace spiralflow
