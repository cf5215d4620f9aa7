#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "spiralflow/linear_ops.hpp"

using namespace spiralflow;

namespace {

struct Setup {
  Params p;
  BetaGrid g;
  LinearOps ops;
  Setup(Real mu, int n_max, int n_nodes)
      : p(Params::with_mu(mu, n_max)), g(make_grid(p, n_nodes)), ops(g, p) {}
};

ModeFunction sample(const BetaGrid& g, int n, const std::function<Complex(Real)>& f,
                    Complex f_inf) {
  ModeFunction m(n, g.size());
  for (int i = 0; i < g.size(); ++i) m.values(i) = f(g.nodes[i]);
  m.value_at_infinity = f_inf;
  return m;
}

// smooth decaying profile, polynomial in the mapped coordinate
ModeFunction smooth_profile(const BetaGrid& g, int n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<Real> u(-1.0, 1.0);
  Real a = u(rng), b = u(rng), c = u(rng);
  ModeFunction m(n, g.size());
  for (int i = 0; i < g.size(); ++i) {
    Real s = g.s_nodes[i];
    m.values(i) = Complex(a + b * s, c * s) * (1.0 - s);
  }
  m.value_at_infinity = 0.0;
  return m;
}

}  // namespace

TEST_CASE("(D_beta+1)^{-1} on closed-form profiles") {
  Setup su(1.5, 4, 96);
  const auto& g = su.g;

  ModeFunction c = sample(g, 0, [](Real) { return Complex(2.0, 0.0); }, 2.0);
  ModeFunction r = su.ops.dbeta_plus_one_inv(c);
  CHECK((r.values.array() - Complex(2.0, 0)).abs().maxCoeff() < 1e-11);
  CHECK(std::abs(r.value_at_infinity - Complex(2.0, 0)) < 1e-14);

  // g(beta) = beta/(1+beta)^2 = s(1-s): mean is (log(1+beta) + 1/(1+beta) - 1)/beta
  ModeFunction q = sample(g, 0, [](Real b) { return b / ((1 + b) * (1 + b)); }, 0.0);
  ModeFunction rq = su.ops.dbeta_plus_one_inv(q);
  for (int i = 0; i < g.size(); ++i) {
    Real b = g.nodes[i];
    Real expect = (std::log1p(b) + 1.0 / (1.0 + b) - 1.0) / b;
    CHECK(std::abs(rq.values(i) - expect) < 1e-10);
  }

  // g = 1/(1+beta): mean is log(1+beta)/beta
  ModeFunction h = sample(g, 0, [](Real b) { return 1.0 / (1.0 + b); }, 0.0);
  ModeFunction rh = su.ops.dbeta_plus_one_inv(h);
  for (int i = 0; i < g.size(); ++i) {
    Real b = g.nodes[i];
    CHECK(std::abs(rh.values(i) - std::log1p(b) / b) < 1e-10);
  }
}

TEST_CASE("L0 inverse of a constant and infinity slots") {
  Setup su(1.5, 2, 96);
  ModeFunction one = sample(su.g, 0, [](Real) { return Complex(1.0, 0); }, 1.0);
  ModeFunction r = su.ops.L_inv(0, +1, one);
  CHECK((r.values.array() - Complex(0.5, 0)).abs().maxCoeff() < 1e-10);  // 1/(2mu-1)
  CHECK(std::abs(r.value_at_infinity - Complex(0.5, 0)) < 1e-14);

  ModeFunction r2 = su.ops.L_inv(2, +1, sample(su.g, 2, [](Real b) { return 1.0 / (1 + b); }, 0.0));
  CHECK(std::abs(r2.value_at_infinity) == 0.0);
}

TEST_CASE("endpoint law at beta = 0 for all retained modes and both signs") {
  Setup su(1.5, 2, 96);
  const Real mu = su.p.mu;
  for (int n = 0; n <= 32; ++n) {
    for (int sign : {+1, -1}) {
      Complex v = su.ops.L_inv_at_zero(n, sign, 1.0);
      Real expect = 1.0 / (sign * n * mu + 2.0 * mu - 1.0);
      CHECK(std::abs(v - expect) < 1e-9);
    }
  }
}

TEST_CASE("L_{2,+}^{-1} of one approaches 1/5 toward the origin") {
  Setup su(1.5, 4, 160);
  ModeFunction one = sample(su.g, 2, [](Real) { return Complex(1.0, 0); }, 1.0);
  ModeFunction r = su.ops.L_inv(2, +1, one);
  // continuity toward the Eq 3.6 limit at the smallest node
  CHECK(std::abs(r.values(0) - Complex(0.2, 0)) < 1e-3);
  Complex at_zero = su.ops.L_inv_at_zero(2, +1, 1.0);
  CHECK(std::abs(at_zero - Complex(0.2, 0)) < 1e-10);
}

TEST_CASE("L_{1,-}^{-1} against a brute-force oscillatory quadrature oracle") {
  Setup su(1.5, 2, 128);
  const Real mu = su.p.mu;
  WeightCache w1(1, mu);
  auto f = [](Real b) { return 1.0 / (1.0 + b); };
  ModeFunction m = sample(su.g, 1, [&](Real b) { return Complex(f(b), 0); }, 0.0);
  ModeFunction r = su.ops.L_inv(1, -1, m);

  auto oracle = [&](Real beta) {
    // beta^{2mu-1} W_1(beta)^{-1} int_beta^inf W_1(b) b^{-2mu} e^{i(beta-b)} f db
    // truncated where the integrand envelope b^{-mu-2} leaves ~1e-9
    Complex acc = 0.0;
    Real lo = beta;
    const Real cap = 2500.0;
    Real chunk = 40.0;
    while (lo < cap) {
      Real hi = std::min(lo * 1.35 + chunk, cap);
      acc += adaptive_quad_c(
          [&](Real b) {
            return std::exp(w1.log_w(b) - 2.0 * mu * std::log(b)) *
                   std::polar(1.0, beta - b) * f(b);
          },
          lo, hi, 2e-12);
      lo = hi;
    }
    return std::exp((2.0 * mu - 1.0) * std::log(beta) - w1.log_w(beta)) * acc;
  };

  // ten sample points spread over the physically relevant window
  int checked = 0;
  for (int i = 10; i < su.g.size() && checked < 10; i += 9, ++checked) {
    Real beta = su.g.nodes[i];
    if (beta > 20.0) break;
    Complex expect = oracle(beta);
    CHECK(std::abs(r.values(i) - expect) < 1e-8);
  }
  CHECK(checked >= 6);
}

TEST_CASE("inverse-forward round trip on the smoke family (interior, default grid)") {
  Setup su(1.5, 6, 128);
  const Real delta = su.p.delta;
  std::vector<std::pair<std::function<Complex(Real)>, Complex>> family = {
      {[](Real) { return Complex(1.0, 0); }, 1.0},
      {[](Real b) { return Complex(1.0 / (1.0 + b), 0); }, 0.0},
      {[](Real b) { return Complex(std::exp(-b), 0); }, 0.0},
      {[delta](Real b) { return Complex(std::pow(1.0 + b, -delta), 0); }, 0.0}};
  for (int n : {0, 1, 2, 3, 5}) {
    for (int sign : {+1, -1}) {
      for (auto& [fn, finf] : family) {
        ModeFunction m = sample(su.g, n, fn, finf);
        ModeFunction inv = su.ops.L_inv(n, sign, m);
        ModeFunction back = su.ops.apply_L_forward(n, sign, inv);
        Real worst = 0;
        for (int i = 0; i < su.g.size(); ++i) {
          if (su.g.nodes[i] > 50.0) break;
          worst = std::max(worst, std::abs(back.values(i) - m.values(i)));
        }
        INFO("n=" << n << " sign=" << sign);
        CHECK(worst < 2e-4);
      }
    }
  }
}

TEST_CASE("callable route with pair-aware forward reproduces inputs tightly") {
  Setup su(1.5, 6, 256);
  const Real delta = su.p.delta;
  std::vector<CallableProfile> profiles;
  profiles.push_back({[](Real) { return Complex(1.0, 0); }, 1.0, {}});
  {
    CallableProfile cp;
    cp.f = [](Real b) { return Complex(1.0 / (1.0 + b), 0); };
    cp.f_inf = 0.0;
    // 1/(1+b) = sum_k (-1)^k b^{-1-k}
    Real sgn = 1.0;
    for (int k = 0; k < 8; ++k) {
      cp.tail_powers.push_back({1.0 + k, sgn});
      sgn = -sgn;
    }
    profiles.push_back(cp);
  }
  profiles.push_back({[](Real b) { return Complex(std::exp(-b), 0); }, 0.0, {}});
  {
    CallableProfile cp;
    cp.f = [delta](Real b) { return Complex(std::pow(1.0 + b, -delta), 0); };
    cp.f_inf = 0.0;
    // (1+b)^-delta = sum_k binom(-delta, k) b^{-delta-k}
    Real coef = 1.0;
    for (int k = 0; k < 8; ++k) {
      cp.tail_powers.push_back({delta + k, coef});
      coef *= (-delta - k) / (k + 1.0);
    }
    profiles.push_back(cp);
  }

  for (int n : {1, 2, 3, 5}) {
    for (int sign : {+1, -1}) {
      for (auto& prof : profiles) {
        auto inv = su.ops.L_inv_fn(n, sign, prof);
        Eigen::VectorXcd pext(su.g.size() + 1), qext(su.g.size() + 1);
        pext.head(su.g.size()) = inv.smooth;
        pext(su.g.size()) = inv.value_at_infinity;
        qext.head(su.g.size()) = inv.oscillatory;
        qext(su.g.size()) = 0.0;
        Eigen::VectorXcd back = su.ops.apply_L_forward_split(n, sign, pext, qext);
        Real worst = 0;
        for (int i = 0; i < su.g.size(); ++i)
          worst = std::max(worst, std::abs(back(i) - prof.f(su.g.nodes[i])));
        INFO("n=" << n << " sign=" << sign);
        CHECK(worst < 2e-5);
      }
    }
  }
}

TEST_CASE("K matrices: supports, decay, and assembly consistency") {
  Setup su(1.5, 12, 96);
  auto km2 = su.ops.K_n_matrices(2);
  const int nn = su.g.size();

  // K1 rows vanish where chi = 0 (beta <= 1)
  for (int i = 0; i < nn; ++i) {
    if (su.g.nodes[i] <= 1.0)
      CHECK(km2.k1.matrix.row(i).cwiseAbs().maxCoeff() < 1e-14);
  }
  // K3 output vanishes for beta >= 2
  ModeFunction u = smooth_profile(su.g, 2, 71);
  ModeFunction k3u = km2.k3.apply(u);
  for (int i = 0; i < nn; ++i) {
    if (su.g.nodes[i] >= 2.0) CHECK(std::abs(k3u.values(i)) < 1e-13);
  }
  CHECK_THROWS_AS(su.ops.K_n_matrices(0), ConfigError);

  // measured induced norm decays like C/|n| across retained modes
  Real c_bound = 0.0;
  std::vector<Real> norms;
  for (int n = 1; n <= 12; ++n) {
    Real kn = su.ops.k_norm_estimate(n);
    norms.push_back(kn);
    c_bound = std::max(c_bound, kn * n);
  }
  for (int n = 1; n <= 12; ++n) CHECK(norms[n - 1] <= c_bound / n + 1e-12);
  CHECK(norms[11] < norms[0]);
}

TEST_CASE("K_total equals the literal three-term assembly on smooth data") {
  Setup su(1.5, 10, 96);
  const Real mu = su.p.mu;
  for (int n : {2, 4, 10}) {
    auto km = su.ops.K_n_matrices(n);
    ModeFunction u = smooth_profile(su.g, n, 101 + n);
    ModeFunction k1u = km.k1.apply(u);
    ModeFunction k2u = km.k2.apply(u);
    ModeFunction k3u = km.k3.apply(u);
    // (D_rho - 1) K1 u via differentiation matrices on the intermediate
    Eigen::VectorXcd ext = k1u.extended();
    Eigen::VectorXd er = ext.real(), ei = ext.imag();
    Eigen::VectorXd dr = su.g.dbeta_matrix() * er, di = su.g.dbeta_matrix() * ei;
    Eigen::VectorXcd drho(su.g.size() + 1);
    for (int i = 0; i < su.g.size(); ++i) {
      Complex db(dr(i), di(i));
      drho(i) = -db + Complex(0.0, n * su.g.nodes[i]) * ext(i) - ext(i);
    }
    drho(su.g.size()) = -ext(su.g.size());
    ModeFunction t1 = su.ops.L_inv(n, +1, ModeFunction::from_extended(n, drho));
    ModeFunction t2 = su.ops.L_inv(n, +1, k2u);
    ModeFunction t3 = su.ops.L_inv(n, +1, k3u);
    ModeFunction direct = km.k_total.apply(u);
    Real worst = 0;
    for (int i = 0; i < su.g.size(); ++i) {
      if (su.g.nodes[i] > 10.0) break;
      Complex lit = (2.0 * mu - 1.0) * (t1.values(i) + t2.values(i) + t3.values(i));
      worst = std::max(worst, std::abs(lit - direct.values(i)));
    }
    INFO("n=" << n);
    CHECK(worst < 5e-6);
  }
}

TEST_CASE("solve_mode contracts: zero input, residual, Neumann agreement") {
  Setup su(1.5, 12, 96);
  ModeFunction zero(3, su.g.size());
  Real resid = -1;
  ModeFunction u0 = su.ops.solve_mode(3, zero, &resid);
  CHECK(u0.values.cwiseAbs().maxCoeff() == 0.0);

  ModeFunction v = smooth_profile(su.g, 5, 7);
  ModeFunction u = su.ops.solve_mode(5, v, &resid);
  CHECK(resid < 1e-9);
  REQUIRE(su.ops.k_norm_estimate(5) < 1.0);
  ModeFunction un = su.ops.solve_mode_neumann(5, v);
  CHECK((u.values - un.values).cwiseAbs().maxCoeff() < 1e-9 * v.values.cwiseAbs().maxCoeff());
}

TEST_CASE("factorization identity Eq 4.12 on interior nodes") {
  Setup su(1.5, 8, 128);
  for (int n : {1, 2, 5, 8}) {
    ModeFunction gsm = smooth_profile(su.g, n, 211 + n);
    Eigen::VectorXcd lhs = su.ops.apply_LpLm(n, gsm.extended());
    Eigen::VectorXcd rhs = su.ops.apply_factored_rhs(n, gsm.extended());
    Real worst = 0;
    for (int i = 2; i < su.g.size() - 2; ++i)
      worst = std::max(worst, std::abs(lhs(i) - rhs(i)));
    INFO("n=" << n);
    CHECK(worst < 1e-8);
  }
}

TEST_CASE("linearized inverse: zero, mode-0 oracle, and forward round trip") {
  Setup su(1.5, 6, 128);
  ModeSet ms{6, true};
  const int nn = su.g.size();

  SpectralField zero(ms, nn);
  auto rz = su.ops.linearized_inverse(zero);
  for (int n = -6; n <= 6; ++n) CHECK(rz.f.mode(n).values.cwiseAbs().maxCoeff() == 0.0);

  // mode-0 constant: forward factors map the output back to the constant
  SpectralField w0(ms, nn);
  w0.mode(0).values.setConstant(1.0);
  w0.mode(0).value_at_infinity = 1.0;
  auto r0 = su.ops.linearized_inverse(w0);
  // f should be the constant c/(2mu-1)^2
  Real c2 = std::pow(2.0 * su.p.mu - 1.0, -2);
  CHECK((r0.f.mode(0).values.array() - Complex(c2, 0)).abs().maxCoeff() < 1e-9);
  SpectralField back0 = su.ops.apply_script_L(r0.f);
  CHECK((back0.mode(0).values.array() - Complex(1.0, 0)).abs().maxCoeff() < 1e-8);

  // random smooth band-limited w: forward defect in the Z norm
  std::mt19937 rng(31);
  SpectralField w(ms, nn);
  for (int n = 0; n <= 6; ++n) {
    ModeFunction m = smooth_profile(su.g, n, 400 + n);
    w.mode(n) = m;
    if (n > 0) {
      ModeFunction mc = m;
      mc.n = -n;
      mc.values = m.values.conjugate();
      w.mode(-n) = mc;
    }
  }
  auto r = su.ops.linearized_inverse(w);
  CHECK(r.report.max_residual() < 1e-9);
  SpectralField back = su.ops.apply_script_L(r.f);
  back -= w;
  Real defect = su.ops.z_norm(back) / su.ops.z_norm(w);
  CHECK(defect < 1e-6);
}

TEST_CASE("operator norms of the inverses decay like 1/n") {
  Setup su(1.5, 16, 96);
  std::vector<Real> norms;
  const Real delta = su.p.delta;
  for (int n = 1; n <= 16; ++n) {
    ModeOperator lp = su.ops.mode_operator(n, OperatorKind::Linv_plus);
    Real worst = 0;
    for (int i = 0; i < su.g.size(); ++i) {
      Real wi = 1.0 + std::pow(su.g.nodes[i], delta);
      Real acc = 0;
      for (int j = 0; j < su.g.size(); ++j)
        acc += std::abs(lp.matrix(i, j)) * wi / (1.0 + std::pow(su.g.nodes[j], delta));
      worst = std::max(worst, acc);
    }
    norms.push_back(worst);
  }
  Real c_bound = 0;
  for (int n = 1; n <= 16; ++n) c_bound = std::max(c_bound, norms[n - 1] * n);
  for (int n = 1; n <= 16; ++n) CHECK(norms[n - 1] <= c_bound / n + 1e-12);
}
