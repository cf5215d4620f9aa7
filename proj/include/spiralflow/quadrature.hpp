#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "spiralflow/common.hpp"

namespace spiralflow {

// Gauss-Legendre nodes/weights on [-1,1] by Newton iteration on P_n.
struct GaussLegendre {
  Eigen::VectorXd x;
  Eigen::VectorXd w;

  explicit GaussLegendre(int n) : x(n), w(n) {
    for (int i = 0; i < n; ++i) {
      Real xi = std::cos(kPi * (i + 0.75) / (n + 0.5));
      Real p0 = 0, p1 = 0;
      for (int it = 0; it < 100; ++it) {
        p0 = 1.0;
        p1 = xi;
        for (int k = 2; k <= n; ++k) {
          Real p2 = ((2.0 * k - 1.0) * xi * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        Real dp = n * (xi * p1 - p0) / (xi * xi - 1.0);
        Real dx = p1 / dp;
        xi -= dx;
        if (std::abs(dx) < 1e-15) break;
      }
      x(n - 1 - i) = xi;
      Real dp = n * (xi * p1 - p0) / (xi * xi - 1.0);
      w(n - 1 - i) = 2.0 / ((1.0 - xi * xi) * dp * dp);
    }
  }
};

// Legendre values P_0..P_{kmax}(t).
inline void legendre_values(Real t, int kmax, Real* out) {
  out[0] = 1.0;
  if (kmax >= 1) out[1] = t;
  for (int k = 2; k <= kmax; ++k)
    out[k] = ((2.0 * k - 1.0) * t * out[k - 1] - (k - 1.0) * out[k - 2]) / k;
}

// Spherical Bessel j_0..j_kmax(x), x >= 0. Upward recurrence when safe,
// Miller's downward normalization otherwise.
inline void spherical_bessel_j(Real xraw, int kmax, Real* out) {
  Real x = std::abs(xraw);
  if (x < 1e-10) {
    Real fact = 1.0;  // (2k+1)!!
    Real xp = 1.0;
    for (int k = 0; k <= kmax; ++k) {
      out[k] = xp / fact;
      xp *= x;
      fact *= (2.0 * k + 3.0);
    }
  } else if (x > kmax + 1) {
    Real j0 = std::sin(x) / x;
    out[0] = j0;
    if (kmax >= 1) out[1] = std::sin(x) / (x * x) - std::cos(x) / x;
    for (int k = 1; k < kmax; ++k)
      out[k + 1] = (2.0 * k + 1.0) / x * out[k] - out[k - 1];
  } else {
    int m = kmax + 30;
    std::vector<Real> tmp(m + 2, 0.0);
    tmp[m + 1] = 0.0;
    tmp[m] = 1e-280;
    for (int k = m; k >= 1; --k) {
      tmp[k - 1] = (2.0 * k + 1.0) / x * tmp[k] - tmp[k + 1];
      if (std::abs(tmp[k - 1]) > 1e250) {
        for (int l = k - 1; l <= m + 1; ++l) tmp[l] *= 1e-250;
      }
    }
    Real scale = (std::sin(x) / x) / tmp[0];
    for (int k = 0; k <= kmax; ++k) out[k] = tmp[k] * scale;
  }
  if (xraw < 0.0) {
    for (int k = 1; k <= kmax; k += 2) out[k] = -out[k];
  }
}

// Filon-Legendre product rule: complex weights W_g with
//   integral_{-1}^{1} phi(x) e^{i omega x} dx  ~=  sum_g W_g phi(x_g),
// exact for phi in P_{G-1} and any omega, using the closed Legendre moments
//   integral P_k(x) e^{i omega x} dx = 2 i^k j_k(omega).
class FilonPanel {
 public:
  explicit FilonPanel(int npts = 16) : gl_(npts), npts_(npts) {
    pk_.resize(npts_, npts_);
    std::vector<Real> pk(npts_);
    for (int g = 0; g < npts_; ++g) {
      legendre_values(gl_.x(g), npts_ - 1, pk.data());
      for (int k = 0; k < npts_; ++k) pk_(k, g) = pk[k];
    }
  }

  int size() const { return npts_; }
  const GaussLegendre& base() const { return gl_; }

  Eigen::VectorXcd weights(Real omega) const {
    Eigen::VectorXcd out(npts_);
    if (std::abs(omega) < 1e-12) {
      for (int g = 0; g < npts_; ++g) out(g) = gl_.w(g);
      return out;
    }
    std::vector<Real> jk(npts_);
    spherical_bessel_j(omega, npts_ - 1, jk.data());
    std::vector<Complex> mk(npts_);
    Complex ipow(1.0, 0.0);
    const Complex iunit(0.0, 1.0);
    for (int k = 0; k < npts_; ++k) {
      mk[k] = 2.0 * ipow * jk[k];
      ipow *= iunit;
    }
    for (int g = 0; g < npts_; ++g) {
      Complex acc = 0.0;
      for (int k = 0; k < npts_; ++k)
        acc += (2.0 * k + 1.0) * 0.5 * pk_(k, g) * mk[k];
      out(g) = gl_.w(g) * acc;
    }
    return out;
  }

 private:
  GaussLegendre gl_;
  int npts_;
  Eigen::MatrixXd pk_;
};

// Gauss-Jacobi rule for integral_0^L b^gamma f(b) db, gamma > -1, via
// Golub-Welsch on the weight (1+x)^gamma over [-1,1].
struct GaussJacobi {
  Eigen::VectorXd x;  // on [-1,1]
  Eigen::VectorXd w;

  GaussJacobi(int n, Real gamma) : x(n), w(n) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    auto diag = [gamma](int k) -> Real {
      Real s = 2.0 * k + gamma;
      if (k == 0 && gamma == 0.0) return 0.0;
      return gamma * gamma / (s * (s + 2.0));
    };
    auto offsq = [gamma](int k) -> Real {
      Real s = 2.0 * k + gamma;
      return 4.0 * k * k * (k + gamma) * (k + gamma) / (s * s * (s + 1.0) * (s - 1.0));
    };
    for (int k = 0; k < n; ++k) {
      J(k, k) = diag(k);
      if (k >= 1) {
        Real b = std::sqrt(offsq(k));
        J(k, k - 1) = b;
        J(k - 1, k) = b;
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    Real mu0 = std::pow(2.0, gamma + 1.0) / (gamma + 1.0);
    for (int k = 0; k < n; ++k) {
      x(k) = es.eigenvalues()(k);
      Real v = es.eigenvectors()(0, k);
      w(k) = mu0 * v * v;
    }
  }
};

// integral_B^inf b^{-m} e^{i nu b} db.  nu = 0 needs m > 1; otherwise the
// integration-by-parts series in 1/(nu B), truncated adaptively (error is
// bounded by the first omitted term).
inline Complex tail_power_osc(Real m, Real nu, Real B) {
  if (nu == 0.0) {
    if (!(m > 1.0)) throw std::invalid_argument("tail_power_osc: m must exceed 1 when nu = 0");
    return std::pow(B, 1.0 - m) / (m - 1.0);
  }
  const Complex inu(0.0, nu);
  Complex term = -std::exp(Complex(0.0, nu * B)) * std::pow(B, -m) / inu;
  Complex sum = term;
  Real prev = std::abs(term);
  for (int k = 0; k < 40; ++k) {
    term *= (m + k) / (inu * B);
    Real mag = std::abs(term);
    if (mag >= prev) break;  // asymptotic series started diverging
    sum += term;
    if (mag <= 1e-17 * std::abs(sum)) break;
    prev = mag;
  }
  return sum;
}

// B^m * integral_B^inf b^{-m} e^{i nu b} db, nu != 0. Every term of the IBP
// series is O(1), so this stays in range even when b^{-m} alone would
// overflow. For m <= 1 the plain integral diverges and the series value is
// the oscillatory (integration-by-parts) regularization.
inline Complex tail_power_osc_scaled(Real m, Real nu, Real B) {
  if (nu == 0.0) {
    if (!(m > 1.0)) throw std::invalid_argument("tail_power_osc_scaled: m must exceed 1 when nu = 0");
    return B / (m - 1.0);
  }
  const Complex inu(0.0, nu);
  Complex term = -std::exp(Complex(0.0, nu * B)) / inu;
  Complex sum = term;
  Real prev = std::abs(term);
  for (int k = 0; k < 40; ++k) {
    term *= (m + k) / (inu * B);
    Real mag = std::abs(term);
    if (mag >= prev) break;
    sum += term;
    if (mag <= 1e-17 * std::abs(sum)) break;
    prev = mag;
  }
  return sum;
}

// Adaptive panel-splitting quadrature (two-level Gauss comparison) for
// smooth scalar integrands; used for coefficient constants and test oracles.
namespace detail {
template <typename T>
T adaptive_gauss_impl(const std::function<T(Real)>& f, Real a, Real b, Real tol,
                      const GaussLegendre& rule, int depth) {
  auto eval = [&](Real p, Real q) {
    T acc = T{};
    Real c = 0.5 * (p + q), h = 0.5 * (q - p);
    for (int g = 0; g < rule.x.size(); ++g) acc += h * rule.w(g) * f(c + h * rule.x(g));
    return acc;
  };
  T whole = eval(a, b);
  Real c = 0.5 * (a + b);
  T left = eval(a, c), right = eval(c, b);
  Real err = std::abs(left + right - whole);
  if (err < tol || depth > 48) return left + right;
  return adaptive_gauss_impl(f, a, c, 0.5 * tol, rule, depth + 1) +
         adaptive_gauss_impl(f, c, b, 0.5 * tol, rule, depth + 1);
}
}  // namespace detail

inline Real adaptive_quad(const std::function<Real(Real)>& f, Real a, Real b, Real tol) {
  static const GaussLegendre rule(15);
  return detail::adaptive_gauss_impl<Real>(f, a, b, tol, rule, 0);
}

inline Complex adaptive_quad_c(const std::function<Complex(Real)>& f, Real a, Real b, Real tol) {
  static const GaussLegendre rule(15);
  return detail::adaptive_gauss_impl<Complex>(f, a, b, tol, rule, 0);
}

// Geometric breakpoints p = b_0 < ... < b_k = q with log(b_{j+1}/b_j)
// capped, so power-law kernel variation stays polynomial-friendly on each
// piece.
inline std::vector<Real> geometric_breakpoints(Real p, Real q, Real max_log_ratio) {
  std::vector<Real> out;
  out.push_back(p);
  if (q <= p) return out;
  if (p <= 0.0) throw std::invalid_argument("geometric_breakpoints: p must be positive");
  Real lr = std::log(q / p);
  int k = std::max(1, static_cast<int>(std::ceil(lr / max_log_ratio)));
  for (int j = 1; j < k; ++j) out.push_back(p * std::exp(lr * j / k));
  out.push_back(q);
  return out;
}

}  // namespace spiralflow
