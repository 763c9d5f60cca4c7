#pragma once

#include <array>
#include <complex>
#include <span>
#include <variant>

#include "droope/droop_e.hpp"

namespace droope {

using Complex = std::complex<double>;

/// Current injection that is affine in the terminal voltage:
///   [Re I, Im I] = [Re i0, Im i0] + m * [Re V, Im V]
/// All quantities on the system base.
struct NortonSource {
  Complex i0{};
  std::array<double, 4> m{};  ///< row-major 2x2

  Complex current(Complex v) const {
    return i0 + Complex(m[0] * v.real() + m[1] * v.imag(), m[2] * v.real() + m[3] * v.imag());
  }
};

// ---------------------------------------------------------------------------
// Synchronous generator: two-axis machine, IEEE Type-1 exciter with
// exponential saturation, droop governor with valve and turbine lags.
// ---------------------------------------------------------------------------

struct SgParams {
  double h = 3.01;          ///< inertia constant (s), machine base
  double d = 0.0;           ///< damping (pu torque per rad/s deviation)
  double x_d = 1.3125;
  double x_q = 1.2578;
  double x_d_p = 0.1813;    ///< X'_d
  double x_q_p = 0.25;      ///< X'_q
  double t_do_p = 5.89;     ///< T'_do (s)
  double t_qo_p = 0.6;      ///< T'_qo (s)
  double k_a = 20.0;
  double t_a = 0.2;
  double k_e = 1.0;
  double t_e = 0.314;
  double k_f = 0.063;
  double t_f = 0.35;
  double sat_gamma = 0.0039;
  double sat_epsilon = 1.555;
  double m_d = 0.05;        ///< governor droop (pu/pu)
  double t_sv = 0.2;        ///< valve (steam-valve) lag (s)
  double t_ch = 0.3;        ///< turbine lag (s)
  double s_rating = 100.0;  ///< MVA
  double s_base = 100.0;    ///< system MVA base
  double omega_b = kTwoPi * 60;
  // Setpoints, filled in by initialization.
  double v_ref = 1.0;
  double p_set = 0.0;       ///< machine base
  double omega_set = 1.0;   ///< pu

  void validate() const;
  double saturation(double e_fd) const;  ///< S_E(E_fd) = gamma * exp(epsilon * E_fd)
  double to_system() const { return s_rating / s_base; }
};

/// State order: [delta, omega, E'_q, E'_d, E_fd, V_R, R_f, p_m, p_SV].
struct SgState {
  static constexpr std::size_t kSize = 9;
  double delta = 0.0;  ///< rad, relative to the synchronous frame
  double omega = 0.0;  ///< rad/s
  double e_q_p = 0.0;
  double e_d_p = 0.0;
  double e_fd = 0.0;
  double v_r = 0.0;
  double r_f = 0.0;
  double p_m = 0.0;
  double p_sv = 0.0;

  std::array<double, kSize> to_array() const;
  static SgState from(std::span<const double> x);
};

/// Stator currents and voltages in the machine dq frame (machine base).
struct SgStator {
  double i_d, i_q, v_d, v_q;
  double electrical_power() const { return v_d * i_d + v_q * i_q; }
};

SgStator sg_stator(const SgState& state, Complex terminal, const SgParams& params);

std::array<double, SgState::kSize> sg_derivatives(const SgState& state, Complex terminal,
                                                  const SgParams& params);

NortonSource sg_norton(const SgState& state, const SgParams& params);

/// Equilibrium state for a terminal operating point (power on the system base).
/// Also fixes v_ref, p_set and omega_set in `params`.
SgState sg_initialize(Complex terminal, Complex power_system_base, SgParams& params);

// ---------------------------------------------------------------------------
// Grid-forming inverter: voltage behind the coupling impedance, with either
// the exponential droop law or a linear droop for comparison runs.
// ---------------------------------------------------------------------------

struct GfmParams {
  std::variant<DroopEParams, LinearDroopParams> controller = DroopEParams{};
  double x_out = 0.15;      ///< coupling reactance, device base
  double r_out = 0.005;     ///< coupling resistance, device base
  double t_fil = 0.0167;    ///< power filter time constant (s)
  double s_rating = 50.0;   ///< MVA
  double s_base = 100.0;    ///< system MVA base
  double q_v_gain = 0.05;   ///< Q-V droop (pu/pu)
  double v_set = 1.0;       ///< Q-V voltage setpoint, fixed at initialization
  double e_mag = 1.0;       ///< internal EMF magnitude, fixed at initialization
  double p_set = 0.0;       ///< device base
  double omega_b = kTwoPi * 60;  ///< frame frequency; must match a Droop-e controller's base
  bool power_sharing = true;
  bool positive_export_only = false;  ///< apply p -> 2p-1 before the droop law

  void validate() const;
  bool is_droop_e() const { return std::holds_alternative<DroopEParams>(controller); }
  double to_system() const { return s_rating / s_base; }
  Complex z_system() const { return Complex(r_out, x_out) / to_system(); }
};

/// State order: [delta_I, p_I].
struct GfmState {
  static constexpr std::size_t kSize = 2;
  double delta = 0.0;  ///< rad, relative to the synchronous frame
  double p = 0.0;      ///< filtered active power, device base

  std::array<double, kSize> to_array() const { return {delta, p}; }
  static GfmState from(std::span<const double> x) { return {x[0], x[1]}; }
};

/// Controller output frequency (rad/s) for a filtered power and sharing offset.
double gfm_frequency(const GfmState& state, double omega_ps, const GfmParams& params);

/// Instantaneous active power at the terminal, device base.
double gfm_measured_power(const GfmState& state, Complex terminal, const GfmParams& params);

std::array<double, GfmState::kSize> gfm_derivatives(const GfmState& state, Complex terminal,
                                                    const PowerSharingState& ps_state,
                                                    const GfmParams& params);

NortonSource gfm_norton(const GfmState& state, const GfmParams& params);

/// Equilibrium state for a terminal operating point; fixes e_mag, v_set and p_set.
GfmState gfm_initialize(Complex terminal, Complex power_system_base, GfmParams& params);

// ---------------------------------------------------------------------------
// Stiff source (infinite bus): fixed EMF behind an impedance, no states.
// ---------------------------------------------------------------------------

struct ConstantSourceParams {
  double r = 0.0;
  double x = 1e-3;   ///< system base
  Complex emf{1.0, 0.0};

  Complex z() const { return {r, x}; }
};

NortonSource constant_source_norton(const ConstantSourceParams& params);
void constant_source_initialize(Complex terminal, Complex power_system_base,
                                ConstantSourceParams& params);

// ---------------------------------------------------------------------------

/// (E - V) / Z on the system base. Throws DomainError for Z == 0.
Complex device_injection(Complex emf, Complex z, Complex terminal);

Complex device_injection(const SgState& state, const SgParams& params, Complex terminal);
Complex device_injection(const GfmState& state, const GfmParams& params, Complex terminal);

}  // namespace droope
