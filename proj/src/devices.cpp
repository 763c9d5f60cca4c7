#include "droope/devices.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "droope/errors.hpp"

namespace droope {

namespace {

void require_finite(std::span<const double> x, const char* who) {
  for (double v : x) {
    if (!std::isfinite(v)) throw DomainError(std::string(who) + ": non-finite state");
  }
}

// Complex admittance y as a real 2x2 acting on [Re V, Im V].
std::array<double, 4> as_real_matrix(Complex y) {
  return {y.real(), -y.imag(), y.imag(), y.real()};
}

}  // namespace

// --- synchronous generator -------------------------------------------------

void SgParams::validate() const {
  std::ostringstream os;
  if (!(h > 0.0)) os << "h must be > 0; ";
  for (double t : {t_do_p, t_qo_p, t_a, t_e, t_f, t_sv, t_ch}) {
    if (!(t > 0.0)) {
      os << "time constants must be > 0; ";
      break;
    }
  }
  if (!(m_d > 0.0)) os << "m_d must be > 0; ";
  if (!(x_d_p > 0.0 && x_q_p > 0.0)) os << "transient reactances must be > 0; ";
  if (!(s_rating > 0.0 && s_base > 0.0)) os << "ratings must be > 0; ";
  if (!os.str().empty()) throw ParameterError("SgParams: " + os.str());
}

double SgParams::saturation(double e_fd) const { return sat_gamma * std::exp(sat_epsilon * e_fd); }

std::array<double, SgState::kSize> SgState::to_array() const {
  return {delta, omega, e_q_p, e_d_p, e_fd, v_r, r_f, p_m, p_sv};
}

SgState SgState::from(std::span<const double> x) {
  return {x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7], x[8]};
}

SgStator sg_stator(const SgState& s, Complex terminal, const SgParams& p) {
  // Machine frame rotated by delta - pi/2: V_d + jV_q = V e^{-j(delta - pi/2)}.
  const Complex rot = std::polar(1.0, -(s.delta - std::numbers::pi / 2));
  const Complex vdq = terminal * rot;
  const double v_d = vdq.real();
  const double v_q = vdq.imag();
  const double i_d = (s.e_q_p - v_q) / p.x_d_p;
  const double i_q = (v_d - s.e_d_p) / p.x_q_p;
  return {i_d, i_q, v_d, v_q};
}

std::array<double, SgState::kSize> sg_derivatives(const SgState& s, Complex terminal,
                                                  const SgParams& p) {
  const auto arr = s.to_array();
  require_finite(arr, "sg_derivatives");
  const SgStator st = sg_stator(s, terminal, p);
  const double t_e = st.electrical_power();
  const double v_mag = std::abs(terminal);

  std::array<double, SgState::kSize> dx{};
  dx[0] = s.omega - p.omega_b;
  dx[1] = p.omega_b / (2.0 * p.h) * (s.p_m - t_e - p.d * (s.omega - p.omega_b));
  dx[2] = (-s.e_q_p - (p.x_d - p.x_d_p) * st.i_d + s.e_fd) / p.t_do_p;
  dx[3] = (-s.e_d_p + (p.x_q - p.x_q_p) * st.i_q) / p.t_qo_p;
  dx[4] = (-(p.k_e + p.saturation(s.e_fd)) * s.e_fd + s.v_r) / p.t_e;
  dx[5] = (-s.v_r + p.k_a * s.r_f - p.k_a * p.k_f / p.t_f * s.e_fd + p.k_a * (p.v_ref - v_mag)) /
          p.t_a;
  dx[6] = (-s.r_f + p.k_f / p.t_f * s.e_fd) / p.t_f;
  dx[7] = (-s.p_m + s.p_sv) / p.t_ch;
  const double speed_error = s.omega / (p.omega_b * p.omega_set) - 1.0;
  dx[8] = (-s.p_sv + p.p_set - speed_error / p.m_d) / p.t_sv;
  return dx;
}

NortonSource sg_norton(const SgState& s, const SgParams& p) {
  const double phi = s.delta - std::numbers::pi / 2;
  const double c = std::cos(phi);
  const double sn = std::sin(phi);
  const double scale = p.to_system();
  // i_d = (E'_q - V_q)/X'_d, i_q = (V_d - E'_d)/X'_q with
  // V_d = Vr c + Vi s, V_q = Vi c - Vr s; I = (i_d + j i_q) e^{j phi}.
  const double id0 = s.e_q_p / p.x_d_p;
  const double iq0 = -s.e_d_p / p.x_q_p;
  NortonSource n;
  n.i0 = scale * Complex(id0 * c - iq0 * sn, id0 * sn + iq0 * c);
  const double xd = p.x_d_p;
  const double xq = p.x_q_p;
  n.m = {scale * (c * sn / xd - sn * c / xq), scale * (-c * c / xd - sn * sn / xq),
         scale * (sn * sn / xd + c * c / xq), scale * (-sn * c / xd + c * sn / xq)};
  return n;
}

SgState sg_initialize(Complex terminal, Complex power_system_base, SgParams& p) {
  p.validate();
  if (!(std::abs(terminal) > 0.0)) throw DomainError("sg_initialize: zero terminal voltage");
  const Complex s_machine = power_system_base / p.to_system();
  const Complex current = std::conj(s_machine / terminal);
  const double delta = std::arg(terminal + Complex(0.0, p.x_q) * current);

  const Complex rot = std::polar(1.0, -(delta - std::numbers::pi / 2));
  const Complex idq = current * rot;
  const Complex vdq = terminal * rot;
  const double i_d = idq.real();
  const double i_q = idq.imag();

  SgState s;
  s.delta = delta;
  s.omega = p.omega_b;
  s.e_d_p = (p.x_q - p.x_q_p) * i_q;
  s.e_q_p = vdq.imag() + p.x_d_p * i_d;
  s.e_fd = s.e_q_p + (p.x_d - p.x_d_p) * i_d;
  s.v_r = (p.k_e + p.saturation(s.e_fd)) * s.e_fd;
  s.r_f = p.k_f / p.t_f * s.e_fd;
  const double p_e = vdq.real() * i_d + vdq.imag() * i_q;
  s.p_m = p_e;
  s.p_sv = p_e;
  p.v_ref = std::abs(terminal) + s.v_r / p.k_a;
  p.p_set = p_e;
  p.omega_set = 1.0;
  return s;
}

// --- grid-forming inverter -------------------------------------------------

void GfmParams::validate() const {
  std::ostringstream os;
  if (!(t_fil > 0.0)) os << "t_fil must be > 0; ";
  if (!(x_out > 0.0)) os << "x_out must be > 0; ";
  if (!(s_rating > 0.0 && s_base > 0.0)) os << "ratings must be > 0; ";
  if (!os.str().empty()) throw ParameterError("GfmParams: " + os.str());
  if (const auto* de = std::get_if<DroopEParams>(&controller)) {
    de->validate();
    if (std::abs(de->omega_b - omega_b) > 1e-9 * omega_b) {
      throw ParameterError("GfmParams: controller omega_b differs from the frame frequency");
    }
  } else {
    std::get<LinearDroopParams>(controller).validate();
  }
}

double gfm_frequency(const GfmState& s, double omega_ps, const GfmParams& p) {
  if (const auto* de = std::get_if<DroopEParams>(&p.controller)) {
    double p_meas = s.p;
    double p_set = p.p_set;
    if (p.positive_export_only) {
      p_meas = project_positive_export(p_meas);
      p_set = project_positive_export(p_set);
    }
    const double p_l = compute_p_l(*de);
    return de->omega_b * (de->omega_nom - detail::d_exp_extended(p_set, *de, p_l) +
                          detail::d_exp_extended(p_meas, *de, p_l) + omega_ps);
  }
  const auto& lin = std::get<LinearDroopParams>(p.controller);
  return p.omega_b * linear_droop_frequency(s.p, p.p_set, lin);
}

NortonSource gfm_norton(const GfmState& s, const GfmParams& p) {
  const Complex z = p.z_system();
  NortonSource n;
  n.i0 = std::polar(p.e_mag, s.delta) / z;
  n.m = as_real_matrix(-1.0 / z);
  return n;
}

double gfm_measured_power(const GfmState& s, Complex terminal, const GfmParams& p) {
  const Complex i = gfm_norton(s, p).current(terminal);
  return (terminal * std::conj(i)).real() / p.to_system();
}

std::array<double, GfmState::kSize> gfm_derivatives(const GfmState& s, Complex terminal,
                                                    const PowerSharingState& ps,
                                                    const GfmParams& p) {
  require_finite(s.to_array(), "gfm_derivatives");
  const double p_meas = gfm_measured_power(s, terminal, p);
  return {gfm_frequency(s, ps.omega_ps, p) - p.omega_b, (p_meas - s.p) / p.t_fil};
}

GfmState gfm_initialize(Complex terminal, Complex power_system_base, GfmParams& p) {
  p.validate();
  if (!(std::abs(terminal) > 0.0)) throw DomainError("gfm_initialize: zero terminal voltage");
  const Complex current = std::conj(power_system_base / terminal);
  const Complex emf = terminal + p.z_system() * current;
  GfmState s;
  s.delta = std::arg(emf);
  s.p = power_system_base.real() / p.to_system();
  // Power-flow round-off at the edge of the domain.
  const double edge = p.positive_export_only ? 0.5 : 0.0;
  if (std::abs(std::abs(s.p - edge) - (1.0 - edge)) < 1e-9) {
    s.p = s.p > edge ? 1.0 : 2.0 * edge - 1.0;
  }
  const double q = power_system_base.imag() / p.to_system();
  p.e_mag = std::abs(emf);
  p.v_set = p.e_mag + p.q_v_gain * q;
  p.p_set = s.p;
  const double p_ctrl = p.positive_export_only ? project_positive_export(s.p) : s.p;
  if (p.is_droop_e() && !(std::abs(p_ctrl) <= 1.0)) {
    std::ostringstream os;
    os << "gfm_initialize: dispatch " << s.p << " pu outside the controller domain";
    throw DomainError(os.str());
  }
  return s;
}

// --- constant source -------------------------------------------------------

NortonSource constant_source_norton(const ConstantSourceParams& p) {
  const Complex z = p.z();
  NortonSource n;
  n.i0 = p.emf / z;
  n.m = as_real_matrix(-1.0 / z);
  return n;
}

void constant_source_initialize(Complex terminal, Complex power_system_base,
                                ConstantSourceParams& p) {
  const Complex current = std::conj(power_system_base / terminal);
  p.emf = terminal + p.z() * current;
}

// ---------------------------------------------------------------------------

Complex device_injection(Complex emf, Complex z, Complex terminal) {
  if (z == Complex{}) throw DomainError("device_injection: zero coupling impedance");
  return (emf - terminal) / z;
}

Complex device_injection(const SgState& state, const SgParams& params, Complex terminal) {
  return sg_norton(state, params).current(terminal);
}

Complex device_injection(const GfmState& state, const GfmParams& params, Complex terminal) {
  return device_injection(std::polar(params.e_mag, state.delta), params.z_system(), terminal);
}

}  // namespace droope
