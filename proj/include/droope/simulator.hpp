#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "droope/devices.hpp"
#include "droope/network.hpp"

namespace droope {

// ---------------------------------------------------------------------------
// Semi-explicit DAE  x' = f(x, y),  0 = g(x, y)  and its trapezoidal integrator.
// ---------------------------------------------------------------------------

class DaeModel {
 public:
  virtual ~DaeModel() = default;
  virtual std::size_t n_diff() const = 0;
  virtual std::size_t n_alg() const = 0;
  virtual void residuals(const Eigen::VectorXd& x, const Eigen::VectorXd& y, Eigen::VectorXd& f,
                         Eigen::VectorXd& g) const = 0;
  /// Full Jacobian [[f_x, f_y], [g_x, g_y]] of size (n_diff + n_alg)^2.
  virtual Eigen::MatrixXd jacobian(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const = 0;
};

struct IntegratorOptions {
  double tol = 1e-10;           ///< max-norm of the step residual
  int max_iter = 12;
  int refresh_after = 3;        ///< iterations before the Jacobian is re-factored
};

/// Implicit trapezoidal rule with a simultaneous Newton solve of the
/// differential and algebraic unknowns. The factorized iteration matrix is
/// reused across steps until convergence slows, dt changes or `invalidate()`.
class TrapezoidalIntegrator {
 public:
  explicit TrapezoidalIntegrator(IntegratorOptions opts = {}) : opts_(opts) {}

  /// Advances (x, y) by dt in place. Throws ConvergenceError.
  void step(const DaeModel& model, Eigen::VectorXd& x, Eigen::VectorXd& y, double dt);
  void invalidate() { have_lu_ = false; }
  int factorizations() const { return factorizations_; }
  int last_iterations() const { return last_iterations_; }

 private:
  void refactor(const DaeModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                double dt);

  IntegratorOptions opts_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  bool have_lu_ = false;
  double lu_dt_ = 0.0;
  int factorizations_ = 0;
  int last_iterations_ = 0;
};

// ---------------------------------------------------------------------------
// Scenario description.
// ---------------------------------------------------------------------------

struct LoadStep {
  int bus = 0;
  double delta_p = 0.0;  ///< system base
  double delta_q = 0.0;
  std::optional<double> fraction;  ///< of the bus's initial load; overrides delta_p/delta_q
};

struct GenTrip {
  std::string device;
};

struct Event {
  double time_s = 0.0;
  std::variant<LoadStep, GenTrip> kind;
};

using DeviceModel = std::variant<SgParams, GfmParams, ConstantSourceParams>;

struct DeviceSpec {
  std::string id;
  int bus = 0;
  DeviceModel model;
  double p_dispatch = 0.0;  ///< scheduled P on the system base; ignored at the slack bus
};

struct OutputOptions {
  bool reactive_power = true;
  bool bus_voltages = false;
  int sample_every = 1;  ///< record every n-th step
};

struct Scenario {
  std::string name;
  Network network;
  std::vector<DeviceSpec> devices;
  std::vector<Event> events;
  double t_end = 60.0;
  double dt = 1e-3;
  double hold_s = 0.5;  ///< pre-event window verified to be stationary
  OutputOptions output;

  /// Throws CaseError listing every violated invariant.
  void validate() const;
  std::size_t device_index(const std::string& id) const;
};

struct SharingActivation {
  std::string device;
  double time_s = 0.0;
};

struct TimeSeries {
  std::vector<double> time;
  std::vector<std::string> names;
  std::vector<std::vector<double>> channels;
  std::vector<SharingActivation> activations;

  bool has(const std::string& name) const;
  const std::vector<double>& channel(const std::string& name) const;  ///< throws Error
  std::size_t add_channel(const std::string& name);
};

// ---------------------------------------------------------------------------
// The assembled power system.
// ---------------------------------------------------------------------------

/// Network plus devices as a DAE with algebraic unknowns [Re V; Im V].
/// Construction runs the power flow and back-solves every device to equilibrium.
class PowerSystem final : public DaeModel {
 public:
  explicit PowerSystem(const Scenario& scenario);

  std::size_t n_diff() const override { return n_states_; }
  std::size_t n_alg() const override { return 2 * ybus_.rows(); }
  void residuals(const Eigen::VectorXd& x, const Eigen::VectorXd& y, Eigen::VectorXd& f,
                 Eigen::VectorXd& g) const override;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const override;

  Eigen::VectorXd derivatives(const Eigen::VectorXd& x, const ComplexVector& v) const;
  ComplexVector solve_network(const Eigen::VectorXd& x, const ComplexVector& v_guess) const;
  std::vector<BusSource> sources(const Eigen::VectorXd& x) const;

  const Eigen::VectorXd& initial_state() const { return x0_; }
  const ComplexVector& initial_voltage() const { return v0_; }
  const PowerFlowSolution& power_flow() const { return pf_; }
  std::vector<std::string> state_labels() const;

  std::size_t device_count() const { return devices_.size(); }
  const DeviceSpec& device(std::size_t d) const { return devices_[d]; }
  std::size_t state_offset(std::size_t d) const { return offset_[d]; }
  std::size_t bus_of(std::size_t d) const { return bus_[d]; }
  bool online(std::size_t d) const { return online_[d]; }
  const PowerSharingState& sharing(std::size_t d) const { return ps_[d]; }
  const ComplexVector& loads() const { return loads_; }
  const ComplexMatrix& ybus() const { return ybus_; }

  /// Injection of device d on the system base.
  Complex device_current(std::size_t d, const Eigen::VectorXd& x, const ComplexVector& v) const;
  /// Device frequency in Hz (rotor speed or controller output).
  double device_frequency_hz(std::size_t d, const Eigen::VectorXd& x) const;

  /// Mutates loads or the online mask. Throws CaseError for unknown targets.
  void apply_event(const Event& event);
  /// Advances the discrete sharing loops after an accepted step. Returns the
  /// indices of devices whose loop latched during this call.
  std::vector<std::size_t> update_sharing(const Eigen::VectorXd& x, double dt);

 private:
  void local_eval(std::size_t d, const double* xl, Complex v, double* f_out, Complex& i_out) const;

  std::vector<DeviceSpec> devices_;  // parameters completed by initialization
  std::vector<std::size_t> offset_, size_, bus_;
  std::vector<bool> online_;
  std::vector<PowerSharingState> ps_;
  std::size_t n_states_ = 0;
  ComplexMatrix ybus_;
  ComplexVector loads_, base_loads_;
  Network network_;
  PowerFlowSolution pf_;
  Eigen::VectorXd x0_;
  ComplexVector v0_;
};

/// Applies one event to a running system (load step or generator trip).
void apply_event(PowerSystem& system, const Event& event);

/// Runs the scenario from its power-flow equilibrium. Throws SimulationError.
TimeSeries run(const Scenario& scenario, IntegratorOptions opts = {});

}  // namespace droope
