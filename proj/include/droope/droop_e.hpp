#pragma once

#include <numbers>

namespace droope {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Constants of the exponential droop law and its power-sharing loop.
///
/// Defaults are the shipped controller tuning: alpha = 0.0012, beta = 3.2,
/// D_max = 6 %, M_D = 5 %, k = 0.2, eps_p = 0.01, eps_dp = 0.001.
struct DroopEParams {
  double alpha = 0.0012;         ///< linear scalar
  double beta = 3.2;             ///< argument scalar
  double d_max = 0.06;           ///< maximum tangent droop (pu/pu)
  double d_min = 0.0025;         ///< lower bound on alpha*beta (pu/pu)
  double m_d = 0.05;             ///< equitable power-sharing droop (pu/pu)
  double omega_nom = 1.0;        ///< nominal frequency (pu)
  double omega_b = kTwoPi * 60;  ///< base angular frequency (rad/s)
  double k = 0.2;                ///< sharing integrator gain (1/s)
  double eps_p = 0.01;           ///< disturbance power tolerance (pu)
  double eps_dp = 0.001;         ///< power-rate tolerance (pu/s)
  double dpdt_tau_s = 0.1;       ///< smoothing time constant of the dp/dt estimate
  double gate_dwell_s = 0.5;     ///< time the latch condition must hold without interruption

  /// Throws ParameterError when an invariant is violated.
  void validate() const;
};

/// Integrator and disturbance-latch state of the autonomous power-sharing loop.
struct PowerSharingState {
  double omega_ps = 0.0;   ///< accumulated frequency offset (pu)
  bool latched = false;    ///< disturbance detected, integrator released
  double last_p = 0.0;     ///< previous filtered power sample (pu)
  double dp_dt_est = 0.0;  ///< smoothed power-rate estimate (pu/s)
  double gate_held_s = 0.0;  ///< how long the latch condition has held so far

  /// Quiescent state anchored at the current filtered power.
  static PowerSharingState at_rest(double p) { return {0.0, false, p, 0.0, 0.0}; }
};

/// Reference linear droop: omega = M_D (p_set - p) + omega_set.
struct LinearDroopParams {
  double m_d = 0.05;          ///< droop gain (pu/pu)
  double omega_fil = 1.0 / 0.0167;  ///< power-measurement cutoff (rad/s)
  double omega_set = 1.0;     ///< frequency setpoint (pu)

  void validate() const;
};

/// Power magnitude where the exponential slope reaches d_max.
double compute_p_l(const DroopEParams& params);

/// Core odd-symmetric exponential response, linear beyond +-p_l. Requires |p| <= 1.
double d_exp(double p, const DroopEParams& params);

/// d(d_exp)/dp. Strictly negative; equals -d_max for |p| >= p_l. Requires |p| <= 1.
double tangent_droop(double p, const DroopEParams& params);

/// Frequency offset that places the device at nominal frequency when p == p_set.
double omega_setpoint(double p_set, const DroopEParams& params);

/// Output angular frequency in rad/s: omega_b * (omega_nom + omega_set(p_set) + d_exp(p) + omega_ps).
double droop_e_frequency(double p, double p_set, double omega_ps, const DroopEParams& params);

/// Frequency deviation a linear M_D droop would produce: (p_set - p) * M_D.
double sharing_target(double p, double p_set, const DroopEParams& params);

/// Error fed to the sharing integrator; zero once the device sits on the M_D line.
double sharing_error(double p, double p_set, double omega_ps, const DroopEParams& params);

/// omega_ps at which sharing_error vanishes.
double sharing_fixpoint(double p, double p_set, const DroopEParams& params);

/// Advances the sharing loop by one sample of length dt.
PowerSharingState power_sharing_step(PowerSharingState state, double p, double p_set, double dt,
                                     const DroopEParams& params);

/// Linear droop frequency in pu (multiply by the base to get rad/s).
double linear_droop_frequency(double p, double p_set, const LinearDroopParams& params);

/// Rate of change of the linear-droop frequency given filtered and measured power (pu/s).
double linear_droop_rocof(double p, double p_meas, const LinearDroopParams& params);

/// Maps a unipolar output p in [0, 1] onto the control domain [-1, 1].
inline double project_positive_export(double p) { return 2.0 * p - 1.0; }

namespace detail {
// Unchecked kernels: the law extended linearly past |p| = 1. Used inside
// Newton iterations where trial points may leave the physical domain.
double d_exp_extended(double p, const DroopEParams& params, double p_l);
double tangent_extended(double p, const DroopEParams& params, double p_l);
}  // namespace detail

}  // namespace droope
