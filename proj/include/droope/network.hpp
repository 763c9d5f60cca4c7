#pragma once

#include <Eigen/Dense>
#include <complex>
#include <string>
#include <vector>

#include "droope/devices.hpp"

namespace droope {

using ComplexVector = Eigen::VectorXcd;
using ComplexMatrix = Eigen::MatrixXcd;

enum class BusType { slack, pv, pq };

BusType parse_bus_type(const std::string& s);  ///< "device" is accepted as pv
std::string to_string(BusType t);

struct Bus {
  int id = 0;
  BusType type = BusType::pq;
  double v_setpoint = 1.0;  ///< pu, slack and pv buses
  double load_p = 0.0;      ///< constant-power load, system base
  double load_q = 0.0;
};

/// Pi-model branch. A nonzero `tap` is an off-nominal ratio on the from side.
struct Branch {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b = 0.0;    ///< total line charging
  double tap = 0.0;  ///< 0 means 1
};

struct Network {
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  double s_base = 100.0;  ///< MVA
  double v_base = 230.0;  ///< kV
  double f_base = 60.0;   ///< Hz

  /// Throws CaseError on duplicate ids, dangling branch ends, zero
  /// impedance, a missing slack bus or an islanded bus.
  void validate() const;
  std::size_t index_of(int bus_id) const;  ///< throws CaseError when unknown
  std::size_t size() const { return buses.size(); }
  ComplexVector loads() const;  ///< P + jQ per bus
};

ComplexMatrix build_ybus(const Network& network);

struct PowerFlowSolution {
  ComplexVector v;           ///< bus voltages
  ComplexVector generation;  ///< S injected by sources at each bus (load added back)
  double mismatch = 0.0;     ///< max |ΔP|, |ΔQ| over the scheduled quantities
  int iterations = 0;
};

/// Newton-Raphson power flow in polar form. `p_generation` holds the
/// scheduled source active power at each bus (system base, indexed like
/// `network.buses`); it is ignored at the slack bus.
PowerFlowSolution power_flow_init(const Network& network, const std::vector<double>& p_generation,
                                  double tol = 1e-10, int max_iter = 30);

/// A voltage-dependent source attached to a bus (index into the bus list).
struct BusSource {
  std::size_t bus = 0;
  NortonSource norton;
};

/// Real form of the network constraint, unknowns stacked as [Re V; Im V]:
///   g(V) = Y V - sum I_src(V) + conj(S_load / V) = 0.
Eigen::VectorXd network_residual(const ComplexMatrix& ybus, const std::vector<BusSource>& sources,
                                 const ComplexVector& loads, const ComplexVector& v);

/// d g / d [Re V; Im V].
Eigen::MatrixXd network_jacobian(const ComplexMatrix& ybus, const std::vector<BusSource>& sources,
                                 const ComplexVector& loads, const ComplexVector& v);

struct NetworkSolution {
  ComplexVector v;
  double residual = 0.0;  ///< max |g|
  int iterations = 0;
};

/// Solves g(V) = 0 by Newton from `v_guess`. Throws ConvergenceError.
NetworkSolution network_solve(const ComplexMatrix& ybus, const std::vector<BusSource>& sources,
                              const ComplexVector& loads, const ComplexVector& v_guess,
                              double tol = 1e-12, int max_iter = 30);

Eigen::VectorXd stack(const ComplexVector& v);
ComplexVector unstack(const Eigen::VectorXd& x);

}  // namespace droope
