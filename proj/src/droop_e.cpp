#include "droope/droop_e.hpp"

#include <cmath>
#include <sstream>

#include "droope/errors.hpp"

namespace droope {

namespace {

void require_domain(double p, const char* name) {
  if (!(std::abs(p) <= 1.0)) {
    std::ostringstream os;
    os << name << " = " << p << " outside [-1, 1]";
    throw DomainError(os.str());
  }
}

// S(x): +1 for x >= 0, -1 otherwise.
double sign_of(double x) { return x >= 0.0 ? 1.0 : -1.0; }

}  // namespace

void DroopEParams::validate() const {
  std::ostringstream os;
  if (!(alpha > 0.0)) os << "alpha must be > 0; ";
  if (!(beta > 0.0)) os << "beta must be > 0; ";
  if (!(d_max > 0.0)) os << "d_max must be > 0; ";
  if (!(omega_b > 0.0)) os << "omega_b must be > 0; ";
  const double ab = alpha * beta;
  if (!(d_min <= ab)) os << "d_min must be <= alpha*beta (" << ab << "); ";
  if (!(ab < m_d)) os << "alpha*beta (" << ab << ") must be < m_d; ";
  if (!(ab < d_max)) os << "alpha*beta (" << ab << ") must be < d_max; ";
  if (!(k >= 0.0)) os << "k must be >= 0; ";
  if (!(eps_p >= 0.0 && eps_dp >= 0.0)) os << "tolerances must be >= 0; ";
  if (!(dpdt_tau_s > 0.0)) os << "dpdt_tau_s must be > 0; ";
  if (!(gate_dwell_s >= 0.0)) os << "gate_dwell_s must be >= 0; ";
  if (!os.str().empty()) throw ParameterError("DroopEParams: " + os.str());
}

void LinearDroopParams::validate() const {
  if (!(m_d > 0.0)) throw ParameterError("LinearDroopParams: m_d must be > 0");
  if (!(omega_fil > 0.0)) throw ParameterError("LinearDroopParams: omega_fil must be > 0");
}

double compute_p_l(const DroopEParams& params) {
  const double ab = params.alpha * params.beta;
  if (!(ab < params.d_max) || !(params.beta > 0.0) || !(params.alpha > 0.0)) {
    throw ParameterError("p_l undefined: alpha*beta must be below d_max");
  }
  return std::log(params.d_max / ab) / params.beta;
}

namespace detail {

double d_exp_extended(double p, const DroopEParams& params, double p_l) {
  const double mag = std::abs(p);
  if (mag < p_l) return -sign_of(p) * params.alpha * std::expm1(params.beta * mag);
  return -sign_of(p) *
         (params.alpha * std::expm1(params.beta * p_l) + params.d_max * (mag - p_l));
}

double tangent_extended(double p, const DroopEParams& params, double p_l) {
  const double mag = std::abs(p);
  if (mag < p_l) return -params.alpha * params.beta * std::exp(params.beta * mag);
  return -params.d_max;
}

}  // namespace detail

double d_exp(double p, const DroopEParams& params) {
  require_domain(p, "p");
  return detail::d_exp_extended(p, params, compute_p_l(params));
}

double tangent_droop(double p, const DroopEParams& params) {
  require_domain(p, "p");
  return detail::tangent_extended(p, params, compute_p_l(params));
}

double omega_setpoint(double p_set, const DroopEParams& params) {
  require_domain(p_set, "p_set");
  return -detail::d_exp_extended(p_set, params, compute_p_l(params));
}

double droop_e_frequency(double p, double p_set, double omega_ps, const DroopEParams& params) {
  return params.omega_b *
         (params.omega_nom + omega_setpoint(p_set, params) + d_exp(p, params) + omega_ps);
}

double sharing_target(double p, double p_set, const DroopEParams& params) {
  return (p_set - p) * params.m_d;
}

// The integrator drives the device's total deviation from nominal,
// omega_set(p_set) + d_exp(p) + omega_ps, onto the M_D line. This is the
// form whose closed loop is (d_exp*s + k*M_D*dp)/(s + k).
double sharing_error(double p, double p_set, double omega_ps, const DroopEParams& params) {
  return sharing_target(p, p_set, params) - omega_setpoint(p_set, params) - d_exp(p, params) -
         omega_ps;
}

double sharing_fixpoint(double p, double p_set, const DroopEParams& params) {
  return sharing_target(p, p_set, params) - omega_setpoint(p_set, params) - d_exp(p, params);
}

PowerSharingState power_sharing_step(PowerSharingState state, double p, double p_set, double dt,
                                     const DroopEParams& params) {
  if (!(dt > 0.0)) throw DomainError("power_sharing_step: dt must be > 0");
  const double raw_rate = (p - state.last_p) / dt;
  const double blend = -std::expm1(-dt / params.dpdt_tau_s);
  state.dp_dt_est += blend * (raw_rate - state.dp_dt_est);
  state.last_p = p;

  const double dp = p_set - p;
  if (!state.latched) {
    const bool gate = std::abs(dp) > params.eps_p && std::abs(state.dp_dt_est) < params.eps_dp;
    state.gate_held_s = gate ? state.gate_held_s + dt : 0.0;
    // A slow power swing passes dp/dt = 0 at its peak; only a sustained quiet
    // period counts as the end of the transient.
    if (gate && state.gate_held_s >= params.gate_dwell_s - 0.5 * dt) state.latched = true;
  }
  if (state.latched) {
    state.omega_ps += params.k * sharing_error(p, p_set, state.omega_ps, params) * dt;
  }
  return state;
}

double linear_droop_frequency(double p, double p_set, const LinearDroopParams& params) {
  return params.m_d * (p_set - p) + params.omega_set;
}

double linear_droop_rocof(double p, double p_meas, const LinearDroopParams& params) {
  return -params.m_d * params.omega_fil * (p - p_meas);
}

}  // namespace droope
