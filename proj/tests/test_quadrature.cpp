#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "spiralflow/quadrature.hpp"

using namespace spiralflow;

TEST_CASE("Gauss-Legendre integrates polynomials exactly") {
  GaussLegendre gl(16);
  Real sum = 0, sum2 = 0;
  for (int g = 0; g < gl.x.size(); ++g) {
    sum += gl.w(g);
    sum2 += gl.w(g) * std::pow(gl.x(g), 30);
  }
  CHECK(sum == Catch::Approx(2.0).epsilon(1e-14));
  CHECK(sum2 == Catch::Approx(2.0 / 31.0).epsilon(1e-13));
}

TEST_CASE("spherical Bessel values against closed forms") {
  Real out[8];
  spherical_bessel_j(0.5, 7, out);
  CHECK(out[0] == Catch::Approx(std::sin(0.5) / 0.5).epsilon(1e-14));
  CHECK(out[1] == Catch::Approx(std::sin(0.5) / 0.25 - std::cos(0.5) / 0.5).epsilon(1e-12));
  spherical_bessel_j(20.0, 7, out);
  CHECK(out[0] == Catch::Approx(std::sin(20.0) / 20.0).epsilon(1e-13));
  // j_2 = (3/x^3 - 1/x) sin x - (3/x^2) cos x
  Real x = 20.0;
  Real j2 = (3 / (x * x * x) - 1 / x) * std::sin(x) - 3 / (x * x) * std::cos(x);
  CHECK(out[2] == Catch::Approx(j2).epsilon(1e-12));
  // tiny argument limit j_k ~ x^k/(2k+1)!!
  spherical_bessel_j(1e-12, 3, out);
  CHECK(out[0] == Catch::Approx(1.0).epsilon(1e-14));
  CHECK(out[1] == Catch::Approx(1e-12 / 3.0).epsilon(1e-9));
}

TEST_CASE("Filon panel weights integrate oscillatory integrands for any frequency") {
  FilonPanel fp(16);
  for (Real omega : {0.0, 0.3, 2.0, 11.0, 55.0, 400.0, -7.0, -300.0}) {
    // integral of (x^2 + 0.5 x) e^{i omega x} over [-1, 1], closed form via
    // integration by parts
    Eigen::VectorXcd w = fp.weights(omega);
    Complex acc = 0;
    for (int g = 0; g < fp.size(); ++g) {
      Real x = fp.base().x(g);
      acc += w(g) * (x * x + 0.5 * x);
    }
    Complex expect;
    if (omega == 0.0) {
      expect = 2.0 / 3.0;
    } else {
      const Complex iw(0.0, omega);
      auto antider = [&](Real x) {
        // integral x^2 e: e^{iwx}(x^2/iw - 2x/(iw)^2 + 2/(iw)^3)
        Complex e = std::polar(1.0, omega * x);
        Complex t2 = e * (x * x / iw - 2.0 * x / (iw * iw) + 2.0 / (iw * iw * iw));
        Complex t1 = e * (x / iw - 1.0 / (iw * iw));
        return t2 + 0.5 * t1;
      };
      expect = antider(1.0) - antider(-1.0);
    }
    CHECK(std::abs(acc - expect) < 1e-13);
  }
}

TEST_CASE("Gauss-Jacobi handles the endpoint power weight") {
  // integral_0^1 b^gamma (1 - b^2) db = 1/(gamma+1) - 1/(gamma+3)
  for (Real gamma : {0.0, 0.5, 3.25, 17.0, 45.0}) {
    GaussJacobi gj(16, gamma);
    Real acc = 0;
    for (int g = 0; g < gj.x.size(); ++g) {
      Real b = 0.5 * (1.0 + gj.x(g));
      acc += gj.w(g) * std::pow(0.5, gamma + 1.0) * (1.0 - b * b);
    }
    Real expect = 1.0 / (gamma + 1.0) - 1.0 / (gamma + 3.0);
    CHECK(acc == Catch::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("oscillatory power tail against adaptive quadrature") {
  // integral_B^inf b^-3 e^{2 i b} db, oracle by adaptive quadrature over a
  // long finite window plus an analytic remainder bound. The asymptotic
  // series bottoms out around e^{-nu B}, so nu B = 40 here.
  Real B = 20.0, nu = 2.0, m = 3.0;
  Complex series = tail_power_osc(m, nu, B);
  Complex brute = adaptive_quad_c(
      [&](Real b) { return std::pow(b, -m) * std::polar(1.0, nu * b); }, B, 4000.0, 1e-14);
  CHECK(std::abs(series - brute) < 1e-11);
  // scaled variant agrees after removing B^-m
  Complex scaled = tail_power_osc_scaled(m, nu, B);
  CHECK(std::abs(scaled * std::pow(B, -m) - series) < 1e-15);
  // nu = 0 closed form
  CHECK(std::abs(tail_power_osc(3.0, 0.0, 5.0) - Complex(std::pow(5.0, -2.0) / 2.0)) < 1e-16);
}

TEST_CASE("adaptive quadrature on a peaked integrand") {
  Real v = adaptive_quad([](Real t) { return std::exp(-50.0 * (t - 0.3) * (t - 0.3)); }, 0.0,
                         1.0, 1e-12);
  // erf-based closed form
  Real s = std::sqrt(50.0);
  Real expect = std::sqrt(kPi) / (2.0 * s) * (std::erf(s * 0.7) + std::erf(s * 0.3));
  CHECK(v == Catch::Approx(expect).epsilon(1e-11));
}

TEST_CASE("geometric breakpoints respect the ratio cap") {
  auto bp = geometric_breakpoints(0.5, 64.0, 1.0);
  REQUIRE(bp.size() >= 2);
  CHECK(bp.front() == 0.5);
  CHECK(bp.back() == Catch::Approx(64.0));
  for (size_t i = 0; i + 1 < bp.size(); ++i)
    CHECK(std::log(bp[i + 1] / bp[i]) <= 1.0 + 1e-9);
}
