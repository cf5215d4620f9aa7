#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "spiralflow/common.hpp"
#include "spiralflow/grid.hpp"
#include "spiralflow/quadrature.hpp"

namespace spiralflow {

namespace detail {

// bump kernel on (1,2): psi(t) = exp(-1/((t-1)(2-t))), zero outside
inline Real bump(Real t) {
  if (t <= 1.0 || t >= 2.0) return 0.0;
  return std::exp(-1.0 / ((t - 1.0) * (2.0 - t)));
}

inline Real bump_prime(Real t) {
  if (t <= 1.0 || t >= 2.0) return 0.0;
  Real u = (t - 1.0) * (2.0 - t);
  return bump(t) * (3.0 - 2.0 * t) / (u * u);
}

inline Real bump_norm() {
  static const Real z = adaptive_quad([](Real t) { return bump(t); }, 1.0, 2.0, 1e-15);
  return z;
}

// Chebyshev-Lobatto antiderivative table of a smooth function on [lo,hi].
class ChebAntiderivative {
 public:
  ChebAntiderivative() = default;
  ChebAntiderivative(const std::function<Real(Real)>& f, Real lo, Real hi, int n = 96)
      : lo_(lo), hi_(hi), n_(n) {
    std::vector<Real> vals(n + 1);
    for (int j = 0; j <= n; ++j) {
      Real x = std::cos(kPi * j / n);
      vals[j] = f(lo + 0.5 * (hi - lo) * (x + 1.0));
    }
    std::vector<Real> c(n + 1, 0.0);
    for (int k = 0; k <= n; ++k) {
      Real acc = 0.0;
      for (int j = 0; j <= n; ++j) {
        Real term = vals[j] * std::cos(kPi * k * j / n);
        if (j == 0 || j == n) term *= 0.5;
        acc += term;
      }
      c[k] = 2.0 * acc / n;
    }
    c[0] *= 0.5;
    c[n] *= 0.5;
    // antiderivative coefficients, scaled to the physical half-width
    Real hw = 0.5 * (hi - lo);
    b_.assign(n + 2, 0.0);
    for (int k = 1; k <= n + 1; ++k) {
      Real ck1 = (k - 1 <= n) ? c[k - 1] : 0.0;
      Real ck3 = (k + 1 <= n) ? c[k + 1] : 0.0;
      if (k == 1) ck1 = 2.0 * c[0];
      b_[k] = hw * (ck1 - ck3) / (2.0 * k);
    }
  }

  // integral of f from lo to x
  Real operator()(Real x) const {
    Real t = 2.0 * (x - lo_) / (hi_ - lo_) - 1.0;
    return eval_at(t) - eval_at(-1.0);
  }

 private:
  Real eval_at(Real t) const {
    Real acc = 0.0, tk1 = t, tk0 = 1.0;
    for (int k = 1; k < static_cast<int>(b_.size()); ++k) {
      acc += b_[k] * tk1;
      Real tk2 = 2.0 * t * tk1 - tk0;
      tk0 = tk1;
      tk1 = tk2;
    }
    return acc;
  }

  Real lo_ = 0, hi_ = 1;
  int n_ = 0;
  std::vector<Real> b_;
};

}  // namespace detail

// Smooth monotone cutoff: 0 for beta <= 1, 1 for beta >= 2, bump-integral
// bridge in between. eta(1 + t) = 1 - eta(2 - t).
inline Real eta(Real beta) {
  if (beta <= 1.0) return 0.0;
  if (beta >= 2.0) return 1.0;
  static const detail::ChebAntiderivative anti(
      [](Real t) { return detail::bump(t); }, 1.0, 2.0, 96);
  return anti(beta) / detail::bump_norm();
}

inline Real eta_prime(Real beta) { return detail::bump(beta) / detail::bump_norm(); }

inline Real eta_second(Real beta) { return detail::bump_prime(beta) / detail::bump_norm(); }

inline Real dbeta_eta(Real beta) { return beta * eta_prime(beta); }

// D_beta^2 eta = beta d/dbeta (beta eta') = beta eta' + beta^2 eta''
inline Real dbeta2_eta(Real beta) {
  return beta * eta_prime(beta) + beta * beta * eta_second(beta);
}

// a_n from Eq (3.3): sqrt(n^2 mu^2 - (2mu-1) eta(beta)), zero for n = 0.
inline Real a_n(int n, Real beta, Real mu) {
  if (n == 0) return 0.0;
  return std::sqrt(static_cast<Real>(n) * n * mu * mu - (2.0 * mu - 1.0) * eta(beta));
}

inline Real a_n_infinity(int n, Real mu) {
  if (n == 0) return 0.0;
  return std::sqrt(static_cast<Real>(n) * n * mu * mu - 2.0 * mu + 1.0);
}

// analytic D_beta a_n via the chain rule on Eq (3.3)
inline Real dbeta_a_n(int n, Real beta, Real mu) {
  if (n == 0) return 0.0;
  return -(2.0 * mu - 1.0) * dbeta_eta(beta) / (2.0 * a_n(n, beta, mu));
}

// chi_n = eta - D_beta(eta) / (2 a_n); the effective cutoff of Eq (3.4).
inline Real chi_n(int n, Real beta, Real mu) {
  if (n == 0) return 0.0;
  if (beta <= 1.0) return 0.0;
  if (beta >= 2.0) return 1.0;
  return eta(beta) - dbeta_eta(beta) / (2.0 * a_n(n, beta, mu));
}

// Exact derivative of chi_n. Differentiating the closed form gives a cubic
// power of a_n in the last term.
inline Real dbeta_chi_n(int n, Real beta, Real mu) {
  if (n == 0) return 0.0;
  if (beta <= 1.0 || beta >= 2.0) return 0.0;
  Real a = a_n(n, beta, mu);
  Real de = dbeta_eta(beta);
  return de - dbeta2_eta(beta) / (2.0 * a) - (2.0 * mu - 1.0) * de * de / (4.0 * a * a * a);
}

// log W_n and C_n. The [1,2] bridge integral of a_n(b)/b is tabulated once
// per (n, mu) as a Chebyshev antiderivative; outside the bridge the closed
// forms hold exactly.
class WeightCache {
 public:
  WeightCache(int n, Real mu)
      : n_(std::abs(n)), mu_(mu), a_inf_(a_n_infinity(n, mu)) {
    if (n_ == 0) throw ConfigError("WeightCache: n must be nonzero");
    bridge_ = detail::ChebAntiderivative(
        [this](Real b) { return a_n(n_, b, mu_) / b; }, 1.0, 2.0, 96);
    log_c_ = bridge_(2.0) - a_inf_ * std::log(2.0);
  }

  int n() const { return n_; }
  Real a_infinity() const { return a_inf_; }
  Real c_n() const { return std::exp(log_c_); }

  Real log_w(Real beta) const {
    if (beta <= 0.0) throw std::invalid_argument("log_w: beta must be positive");
    if (beta <= 1.0) return n_ * mu_ * std::log(beta);
    if (beta >= 2.0) return log_c_ + a_inf_ * std::log(beta);
    return bridge_(beta);
  }

  Real w(Real beta) const { return std::exp(log_w(beta)); }

 private:
  int n_;
  Real mu_;
  Real a_inf_;
  Real log_c_;
  detail::ChebAntiderivative bridge_;
};

inline Real W_n(int n, Real beta, Real mu) { return WeightCache(n, mu).w(beta); }
inline Real C_n(int n, Real mu) { return WeightCache(n, mu).c_n(); }

// Per-run table of coefficient values on the grid, one row per retained
// nonnegative mode (values are even in n).
struct CoefficientTable {
  std::vector<std::vector<Real>> a;          // [n][node]
  std::vector<std::vector<Real>> chi;        // [n][node]
  std::vector<std::vector<Real>> dbeta_chi;  // [n][node]
  std::vector<std::vector<Real>> w;          // [n][node], n >= 1
  std::vector<Real> c;                       // [n], n >= 1 (c[0] unused)
  std::vector<std::shared_ptr<const WeightCache>> weight;  // [n], n >= 1

  static CoefficientTable build(const BetaGrid& grid, Real mu, int n_max) {
    CoefficientTable t;
    const int nn = static_cast<int>(grid.nodes.size());
    t.a.assign(n_max + 1, std::vector<Real>(nn, 0.0));
    t.chi.assign(n_max + 1, std::vector<Real>(nn, 0.0));
    t.dbeta_chi.assign(n_max + 1, std::vector<Real>(nn, 0.0));
    t.w.assign(n_max + 1, std::vector<Real>(nn, 0.0));
    t.c.assign(n_max + 1, 0.0);
    t.weight.assign(n_max + 1, nullptr);
    for (int n = 0; n <= n_max; ++n) {
      std::shared_ptr<const WeightCache> wc;
      if (n >= 1) {
        wc = std::make_shared<const WeightCache>(n, mu);
        t.weight[n] = wc;
        t.c[n] = wc->c_n();
      }
      for (int i = 0; i < nn; ++i) {
        Real b = grid.nodes[i];
        t.a[n][i] = a_n(n, b, mu);
        t.chi[n][i] = chi_n(n, b, mu);
        t.dbeta_chi[n][i] = dbeta_chi_n(n, b, mu);
        if (n >= 1) t.w[n][i] = wc->w(b);
      }
    }
    return t;
  }
};

}  // namespace spiralflow
