#include <cmath>
#include <complex>

#include "doctest.h"
#include "droope/devices.hpp"
#include "droope/errors.hpp"

using namespace droope;
using doctest::Approx;

namespace {

double max_abs(const auto& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

GfmParams droop_e_gfm() {
  GfmParams g;
  g.s_rating = 50.0;
  g.s_base = 100.0;
  return g;
}

}  // namespace

TEST_SUITE("devices") {

TEST_CASE("SG initializes to an equilibrium") {
  SgParams p;
  const Complex v = std::polar(1.02, 0.1);
  const SgState s = sg_initialize(v, Complex(0.7, 0.2), p);
  CHECK(max_abs(sg_derivatives(s, v, p)) < 1e-8);
  // Terminal power reproduces the dispatch through the Norton form.
  const Complex i = sg_norton(s, p).current(v);
  const Complex sv = v * std::conj(i);
  CHECK(sv.real() == Approx(0.7).epsilon(1e-12));
  CHECK(sv.imag() == Approx(0.2).epsilon(1e-12));
}

TEST_CASE("SG power on its own base scales to the system base") {
  SgParams p;
  p.s_rating = 250.0;
  const Complex v = std::polar(1.0, -0.2);
  const SgState s = sg_initialize(v, Complex(1.5, 0.3), p);
  CHECK(sg_stator(s, v, p).electrical_power() * p.to_system() == Approx(1.5).epsilon(1e-12));
  CHECK(p.p_set == Approx(0.6).epsilon(1e-12));
}

TEST_CASE("SG governor: nominal speed gives no correction") {
  SgParams p;
  const Complex v(1.0, 0.0);
  SgState s = sg_initialize(v, Complex(0.5, 0.1), p);
  s.p_sv = p.p_set - 0.1;
  const auto dx = sg_derivatives(s, v, p);
  CHECK(dx[8] == Approx(0.1 / p.t_sv).epsilon(1e-12));
}

TEST_CASE("SG governor: -1% speed asks for +0.2 pu") {
  SgParams p;
  const Complex v(1.0, 0.0);
  SgState s = sg_initialize(v, Complex(0.5, 0.1), p);
  s.omega = 0.99 * p.omega_b;
  const auto dx = sg_derivatives(s, v, p);
  CHECK(dx[8] * p.t_sv == Approx(0.2).epsilon(1e-12));
}

TEST_CASE("SG saturation is positive and increasing") {
  SgParams p;
  double prev = 0.0;
  for (double e = 0.0; e <= 4.0; e += 0.25) {
    const double s = p.saturation(e);
    CHECK(s > prev);
    prev = s;
  }
  CHECK(p.saturation(0.0) == 0.0039);
}

TEST_CASE("SG Norton form agrees with the stator algebra") {
  SgParams p;
  const Complex v0 = std::polar(1.01, 0.05);
  SgState s = sg_initialize(v0, Complex(0.8, 0.25), p);
  s.e_d_p += 0.03;
  s.delta += 0.1;
  for (Complex v : {v0, Complex(0.9, -0.2), Complex(1.1, 0.3)}) {
    const SgStator st = sg_stator(s, v, p);
    const Complex i = std::polar(1.0, s.delta - std::numbers::pi / 2) * Complex(st.i_d, st.i_q);
    const Complex n = sg_norton(s, p).current(v);
    CHECK(std::abs(n - i * p.to_system()) < 1e-13);
  }
}

TEST_CASE("SG rejects non-finite states") {
  SgParams p;
  SgState s;
  s.omega = std::nan("");
  CHECK_THROWS(sg_derivatives(s, Complex(1.0, 0.0), p));
}

TEST_CASE("GFM initializes to an equilibrium") {
  GfmParams g = droop_e_gfm();
  const Complex v = std::polar(1.02, 0.08);
  const GfmState s = gfm_initialize(v, Complex(0.03, 0.07), g);
  CHECK(s.p == Approx(0.06).epsilon(1e-12));
  const auto dx = gfm_derivatives(s, v, PowerSharingState::at_rest(s.p), g);
  CHECK(max_abs(dx) < 1e-8);
  CHECK(g.v_set == Approx(g.e_mag + g.q_v_gain * 0.14).epsilon(1e-12));
}

TEST_CASE("GFM filter responds to a measured power step") {
  GfmParams g = droop_e_gfm();
  const Complex v = std::polar(1.0, 0.0);
  GfmState s = gfm_initialize(v, Complex(0.2, 0.0), g);
  s.p -= 0.1;  // measured power now exceeds the filtered value by 0.1
  const auto dx = gfm_derivatives(s, v, PowerSharingState::at_rest(s.p), g);
  CHECK(dx[1] == Approx(0.1 / g.t_fil).epsilon(1e-10));
}

TEST_CASE("GFM frequency falls as exported power rises") {
  GfmParams g = droop_e_gfm();
  g.p_set = 0.1;
  double prev = 1e9;
  for (double p = -1.0; p <= 1.0; p += 0.05) {
    const double w = gfm_frequency({0.0, p}, 0.0, g);
    CHECK(w < prev);
    prev = w;
  }
}

TEST_CASE("GFM effective inertia follows the tangent droop") {
  GfmParams g = droop_e_gfm();
  const auto& de = std::get<DroopEParams>(g.controller);
  const Complex v(1.0, 0.0);
  GfmState s = gfm_initialize(v, Complex(0.25, 0.0), g);
  s.delta += 0.02;  // measured power above the filtered value
  const auto dx = gfm_derivatives(s, v, PowerSharingState::at_rest(s.p), g);
  // d(omega)/dt by finite differences along the filtered-power trajectory.
  const double h = 1e-7;
  const double w0 = gfm_frequency(s, 0.0, g);
  const double w1 = gfm_frequency({s.delta, s.p + h * dx[1]}, 0.0, g);
  const double rocof = (w1 - w0) / h;
  const double p_meas = gfm_measured_power(s, v, g);
  const double expected = de.omega_b * tangent_droop(s.p, de) * (p_meas - s.p) / g.t_fil;
  CHECK(rocof == Approx(expected).epsilon(1e-5));
}

TEST_CASE("GFM linear droop matches its reference law") {
  GfmParams g = droop_e_gfm();
  LinearDroopParams lin;
  lin.m_d = 0.05;
  g.controller = lin;
  g.p_set = 0.2;
  CHECK(gfm_frequency({0.0, 0.4}, 0.0, g) == Approx(g.omega_b * (1.0 - 0.01)).epsilon(1e-14));
}

TEST_CASE("GFM dispatch outside the controller domain is rejected") {
  GfmParams g = droop_e_gfm();
  CHECK_THROWS_AS(gfm_initialize(Complex(1.0, 0.0), Complex(0.6, 0.0), g), DomainError);
}

TEST_CASE("GFM dispatch at the domain edge survives round-off") {
  GfmParams g = droop_e_gfm();
  const GfmState s = gfm_initialize(Complex(1.0, 0.0), Complex(0.5 + 1e-11, 0.0), g);
  CHECK(s.p == 1.0);
}

TEST_CASE("GFM validation catches a frame mismatch") {
  GfmParams g = droop_e_gfm();
  g.omega_b = kTwoPi * 50;
  CHECK_THROWS_AS(g.validate(), ParameterError);
}

TEST_CASE("device injection: equal EMF and terminal give zero current") {
  CHECK(device_injection(Complex(1.0, 0.2), Complex(0.0, 0.1), Complex(1.0, 0.2)) == Complex{});
  CHECK_THROWS_AS(device_injection(Complex(1.0, 0.0), Complex{}, Complex(0.9, 0.0)), DomainError);
}

TEST_CASE("device injection: complex division oracle") {
  // (1.02 e^{j0.1} - 1) / j0.15 evaluated by hand in rectangular form.
  const double er = 1.02 * std::cos(0.1);
  const double ei = 1.02 * std::sin(0.1);
  const double ir = ei / 0.15;
  const double ii = -(er - 1.0) / 0.15;
  const Complex i = device_injection(std::polar(1.02, 0.1), Complex(0.0, 0.15), Complex(1.0, 0.0));
  CHECK(i.real() == Approx(ir).epsilon(1e-14));
  CHECK(i.imag() == Approx(ii).epsilon(1e-14));
  // Lossless transfer identity.
  const Complex v(1.0, 0.0);
  CHECK((v * std::conj(i)).real() == Approx(1.02 * 1.0 / 0.15 * std::sin(0.1)).epsilon(1e-14));
}

TEST_CASE("GFM measured power matches the injection on its own base") {
  GfmParams g = droop_e_gfm();
  const Complex v = std::polar(0.98, -0.1);
  const GfmState s = gfm_initialize(v, Complex(0.3, 0.05), g);
  const Complex i = device_injection(s, g, v);
  CHECK((v * std::conj(i)).real() / g.to_system() ==
        Approx(gfm_measured_power(s, v, g)).epsilon(1e-13));
}

TEST_CASE("constant source holds its operating point") {
  ConstantSourceParams c;
  const Complex v = std::polar(1.0, 0.0);
  constant_source_initialize(v, Complex(0.4, 0.1), c);
  const Complex s = v * std::conj(constant_source_norton(c).current(v));
  CHECK(s.real() == Approx(0.4).epsilon(1e-12));
  CHECK(s.imag() == Approx(0.1).epsilon(1e-12));
}

}  // TEST_SUITE
