#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "spiralflow/common.hpp"
#include "spiralflow/params.hpp"

namespace spiralflow {

// Collocation grid on the compactified half-line. The map s = beta/(beta+c)
// sends [0, inf] to [0, 1]; nodes are Chebyshev roots in s plus beta = 1 and
// beta = 2 inserted exactly (breakpoints of eta, a_n, chi_n, W_n). Function
// values at beta = inf live in a separate slot; the global interpolant
// includes s = 1 so profiles are defined on all of [0, inf].
class BetaGrid {
 public:
  Real map_scale = 1.0;
  bool has_infinity_node = true;
  std::vector<Real> nodes;    // beta values, strictly increasing, finite
  std::vector<Real> s_nodes;  // s = beta/(beta+c) per node

  Real beta_of_s(Real s) const { return map_scale * s / (1.0 - s); }
  Real s_of_beta(Real beta) const { return beta / (beta + map_scale); }

  int size() const { return static_cast<int>(nodes.size()); }
  // columns of operator matrices: finite nodes then the infinity slot
  int extended_size() const { return size() + 1; }

  Real beta_min() const { return nodes.front(); }
  Real beta_max() const { return nodes.back(); }

  // Barycentric weights over the extended s-set (finite nodes + s = 1).
  const std::vector<Real>& bary_weights() const { return bary_w_; }

  // Interpolation row l(s): f(s) ~ sum_j l_j(s) * [f_nodes; f_inf].
  Eigen::RowVectorXd interp_row(Real s) const {
    const int m = extended_size();
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(m);
    for (int j = 0; j < m; ++j) {
      Real xj = (j < size()) ? s_nodes[j] : 1.0;
      if (s == xj) {
        row.setZero();
        row(j) = 1.0;
        return row;
      }
    }
    Real denom = 0.0;
    for (int j = 0; j < m; ++j) {
      Real xj = (j < size()) ? s_nodes[j] : 1.0;
      Real t = bary_w_[j] / (s - xj);
      row(j) = t;
      denom += t;
    }
    row /= denom;
    return row;
  }

  Real interp_value(const Eigen::VectorXd& ext_values, Real beta) const {
    return interp_row(s_of_beta(beta)).dot(ext_values);
  }

  // d/ds over the extended node set, rows restricted to finite nodes.
  const Eigen::MatrixXd& ds_matrix() const { return ds_; }

  // D_beta = beta d/dbeta = s(1-s) d/ds. Rows: finite nodes. Columns include
  // the infinity slot. The (absent) infinity row is identically zero.
  const Eigen::MatrixXd& dbeta_matrix() const { return dbeta_; }

  static BetaGrid make(const Params& params, int n_nodes, Real map_scale = 1.0) {
    params.validate();
    if (n_nodes < 16) throw ConfigError("make_grid: n_nodes must be >= 16");
    if (!(map_scale > 0.0)) throw ConfigError("make_grid: map_scale must be > 0");

    BetaGrid g;
    g.map_scale = map_scale;
    std::vector<std::pair<Real, Real>> sb;  // (s, beta), each exact in its own variable
    sb.reserve(n_nodes + 2);
    for (int j = 0; j < n_nodes; ++j) {
      Real s = 0.5 * (1.0 - std::cos(kPi * (2.0 * j + 1.0) / (2.0 * n_nodes)));
      sb.emplace_back(s, g.beta_of_s(s));
    }
    // breakpoints beta = 1, 2 sampled exactly in beta
    sb.emplace_back(g.s_of_beta(1.0), 1.0);
    sb.emplace_back(g.s_of_beta(2.0), 2.0);
    std::sort(sb.begin(), sb.end());
    sb.erase(std::unique(sb.begin(), sb.end(),
                         [](auto a, auto b) { return std::abs(a.first - b.first) < 1e-13; }),
             sb.end());

    g.s_nodes.reserve(sb.size());
    g.nodes.reserve(sb.size());
    for (auto& [s, b] : sb) {
      g.s_nodes.push_back(s);
      g.nodes.push_back(b);
    }
    if (g.nodes.back() < params.beta_inf_cut)
      throw ConfigError("make_grid: largest node below beta_inf_cut; increase n_nodes");
    g.finalize();
    return g;
  }

 private:
  std::vector<Real> bary_w_;
  Eigen::MatrixXd ds_;
  Eigen::MatrixXd dbeta_;

  void finalize() {
    const int n = size();
    const int m = n + 1;
    std::vector<Real> x(s_nodes);
    x.push_back(1.0);

    // log-space products keep the weights in range (capacity scaling by 4)
    std::vector<Real> logw(m, 0.0);
    std::vector<int> sign(m, 1);
    for (int j = 0; j < m; ++j) {
      Real lw = 0.0;
      int sg = 1;
      for (int k = 0; k < m; ++k) {
        if (k == j) continue;
        Real d = 4.0 * (x[j] - x[k]);
        if (d < 0.0) sg = -sg;
        lw -= std::log(std::abs(d));
      }
      logw[j] = lw;
      sign[j] = sg;
    }
    Real lmax = *std::max_element(logw.begin(), logw.end());
    bary_w_.assign(m, 0.0);
    for (int j = 0; j < m; ++j) bary_w_[j] = sign[j] * std::exp(logw[j] - lmax);

    // Schneider-Werner differentiation from barycentric weights
    ds_.resize(n, m);
    for (int i = 0; i < n; ++i) {
      Real diag = 0.0;
      for (int j = 0; j < m; ++j) {
        if (j == i) continue;
        Real d = (bary_w_[j] / bary_w_[i]) / (x[i] - x[j]);
        ds_(i, j) = d;
        diag -= d;
      }
      ds_(i, i) = diag;
    }
    dbeta_.resize(n, m);
    for (int i = 0; i < n; ++i) {
      Real f = s_nodes[i] * (1.0 - s_nodes[i]);
      dbeta_.row(i) = f * ds_.row(i);
    }
  }
};

inline BetaGrid make_grid(const Params& params, int n_nodes) {
  return BetaGrid::make(params, n_nodes);
}

// Monotone piecewise-cubic (Fritsch-Carlson) evaluation of node data in the
// mapped coordinate. Used by reconstruction, where sample points fall
// between collocation nodes; locality keeps far-field wiggle out of the
// physical window.
class PchipInterpolant {
 public:
  PchipInterpolant() = default;
  PchipInterpolant(const std::vector<Real>& x, const std::vector<Real>& y) : x_(x), y_(y) {
    const int n = static_cast<int>(x.size());
    d_.assign(n, 0.0);
    if (n < 2) return;
    std::vector<Real> h(n - 1), del(n - 1);
    for (int i = 0; i + 1 < n; ++i) {
      h[i] = x[i + 1] - x[i];
      del[i] = (y[i + 1] - y[i]) / h[i];
    }
    if (n == 2) {
      d_[0] = d_[1] = del[0];
      return;
    }
    for (int i = 1; i + 1 < n; ++i) {
      if (del[i - 1] * del[i] <= 0.0) {
        d_[i] = 0.0;
      } else {
        Real w1 = 2.0 * h[i] + h[i - 1];
        Real w2 = h[i] + 2.0 * h[i - 1];
        d_[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
      }
    }
    d_[0] = edge_slope(h[0], h[1], del[0], del[1]);
    d_[n - 1] = edge_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
  }

  Real operator()(Real xq) const {
    const int n = static_cast<int>(x_.size());
    if (n == 0) return 0.0;
    if (n == 1) return y_[0];
    int i = static_cast<int>(std::upper_bound(x_.begin(), x_.end(), xq) - x_.begin()) - 1;
    i = std::clamp(i, 0, n - 2);
    Real h = x_[i + 1] - x_[i];
    Real t = (xq - x_[i]) / h;
    Real t2 = t * t, t3 = t2 * t;
    Real h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t;
    Real h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
    return h00 * y_[i] + h * h10 * d_[i] + h01 * y_[i + 1] + h * h11 * d_[i + 1];
  }

 private:
  static Real edge_slope(Real h0, Real h1, Real del0, Real del1) {
    Real d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if (d * del0 <= 0.0) return 0.0;
    if (del0 * del1 < 0.0 && std::abs(d) > 3.0 * std::abs(del0)) return 3.0 * del0;
    return d;
  }

  std::vector<Real> x_, y_, d_;
};

}  // namespace spiralflow
