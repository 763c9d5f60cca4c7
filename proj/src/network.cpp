#include "droope/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "droope/errors.hpp"

namespace droope {

BusType parse_bus_type(const std::string& s) {
  if (s == "slack") return BusType::slack;
  if (s == "pv" || s == "device") return BusType::pv;
  if (s == "pq") return BusType::pq;
  throw CaseError("unknown bus type '" + s + "'");
}

std::string to_string(BusType t) {
  switch (t) {
    case BusType::slack:
      return "slack";
    case BusType::pv:
      return "pv";
    case BusType::pq:
      return "pq";
  }
  return "pq";
}

void Network::validate() const {
  std::vector<std::string> problems;
  std::set<int> ids;
  int slack_count = 0;
  for (const Bus& b : buses) {
    if (!ids.insert(b.id).second) problems.push_back("duplicate bus id " + std::to_string(b.id));
    if (b.type == BusType::slack) ++slack_count;
    if (b.type != BusType::pq && !(b.v_setpoint > 0.0)) {
      problems.push_back("bus " + std::to_string(b.id) + ": v_setpoint must be > 0");
    }
  }
  if (buses.empty()) problems.push_back("no buses");
  if (slack_count != 1) problems.push_back("exactly one slack bus required");
  for (std::size_t k = 0; k < branches.size(); ++k) {
    const Branch& br = branches[k];
    const std::string tag = "branch " + std::to_string(k) + " (" + std::to_string(br.from) + "-" +
                            std::to_string(br.to) + ")";
    if (!ids.count(br.from) || !ids.count(br.to)) problems.push_back(tag + ": unknown bus");
    if (br.from == br.to) problems.push_back(tag + ": self loop");
    if (br.r == 0.0 && br.x == 0.0) problems.push_back(tag + ": zero impedance");
    if (br.x == 0.0) problems.push_back(tag + ": zero reactance");
    if (br.tap < 0.0) problems.push_back(tag + ": negative tap");
  }
  if (!(s_base > 0.0)) problems.push_back("s_base must be > 0");

  if (problems.empty()) {
    // Connectivity by union-find over bus positions.
    std::vector<std::size_t> parent(buses.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t i) {
      while (parent[i] != i) i = parent[i] = parent[parent[i]];
      return i;
    };
    for (const Branch& br : branches) parent[find(index_of(br.from))] = find(index_of(br.to));
    for (std::size_t i = 0; i < buses.size(); ++i) {
      if (find(i) != find(0)) problems.push_back("bus " + std::to_string(buses[i].id) + " is islanded");
    }
  }
  if (!problems.empty()) {
    std::ostringstream os;
    os << "invalid network:";
    for (const auto& p : problems) os << "\n  - " << p;
    throw CaseError(os.str());
  }
}

std::size_t Network::index_of(int bus_id) const {
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (buses[i].id == bus_id) return i;
  }
  throw CaseError("unknown bus id " + std::to_string(bus_id));
}

ComplexVector Network::loads() const {
  ComplexVector s(buses.size());
  for (std::size_t i = 0; i < buses.size(); ++i) s[i] = {buses[i].load_p, buses[i].load_q};
  return s;
}

ComplexMatrix build_ybus(const Network& network) {
  const auto n = static_cast<Eigen::Index>(network.size());
  ComplexMatrix y = ComplexMatrix::Zero(n, n);
  for (const Branch& br : network.branches) {
    const Complex z(br.r, br.x);
    if (z == Complex{}) throw CaseError("zero-impedance branch");
    const Complex ys = 1.0 / z;
    const Complex ysh(0.0, br.b / 2.0);
    const double t = br.tap == 0.0 ? 1.0 : br.tap;
    const auto f = static_cast<Eigen::Index>(network.index_of(br.from));
    const auto k = static_cast<Eigen::Index>(network.index_of(br.to));
    y(f, f) += (ys + ysh) / (t * t);
    y(k, k) += ys + ysh;
    y(f, k) -= ys / t;
    y(k, f) -= ys / t;
  }
  return y;
}

// --- power flow ------------------------------------------------------------

PowerFlowSolution power_flow_init(const Network& network, const std::vector<double>& p_generation,
                                  double tol, int max_iter) {
  network.validate();
  const std::size_t n = network.size();
  if (p_generation.size() != n) throw CaseError("power_flow_init: generation vector size mismatch");
  const ComplexMatrix y = build_ybus(network);

  std::vector<Eigen::Index> pvpq, pq;
  Eigen::VectorXd vm(n), va = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::VectorXd p_spec(n), q_spec(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Bus& b = network.buses[i];
    const auto ii = static_cast<Eigen::Index>(i);
    vm[ii] = b.type == BusType::pq ? 1.0 : b.v_setpoint;
    p_spec[ii] = p_generation[i] - b.load_p;
    q_spec[ii] = -b.load_q;
    if (b.type != BusType::slack) pvpq.push_back(ii);
    if (b.type == BusType::pq) pq.push_back(ii);
  }
  const auto npvpq = static_cast<Eigen::Index>(pvpq.size());
  const auto npq = static_cast<Eigen::Index>(pq.size());

  auto voltages = [&]() {
    ComplexVector v(n);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) v[i] = std::polar(vm[i], va[i]);
    return v;
  };
  auto mismatch = [&](const ComplexVector& v) {
    const ComplexVector s = v.cwiseProduct((y * v).conjugate());
    Eigen::VectorXd f(npvpq + npq);
    for (Eigen::Index k = 0; k < npvpq; ++k) f[k] = s[pvpq[k]].real() - p_spec[pvpq[k]];
    for (Eigen::Index k = 0; k < npq; ++k) f[npvpq + k] = s[pq[k]].imag() - q_spec[pq[k]];
    return f;
  };

  ComplexVector v = voltages();
  Eigen::VectorXd f = mismatch(v);
  double norm = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
  int it = 0;
  while (norm > tol && it < max_iter) {
    ++it;
    // dS/dVa and dS/dVm in complex form.
    const ComplexVector ibus = y * v;
    const ComplexVector vnorm = v.cwiseQuotient(v.cwiseAbs().cast<Complex>());
    const ComplexMatrix dva = Complex(0, 1) * v.asDiagonal() *
                              (ibus.asDiagonal().toDenseMatrix() - y * v.asDiagonal()).conjugate();
    const ComplexMatrix dvm = v.asDiagonal() * (y * vnorm.asDiagonal()).conjugate() +
                              ComplexMatrix(ibus.conjugate().asDiagonal()) * vnorm.asDiagonal();
    Eigen::MatrixXd j(npvpq + npq, npvpq + npq);
    for (Eigen::Index r = 0; r < npvpq; ++r) {
      for (Eigen::Index c = 0; c < npvpq; ++c) j(r, c) = dva(pvpq[r], pvpq[c]).real();
      for (Eigen::Index c = 0; c < npq; ++c) j(r, npvpq + c) = dvm(pvpq[r], pq[c]).real();
    }
    for (Eigen::Index r = 0; r < npq; ++r) {
      for (Eigen::Index c = 0; c < npvpq; ++c) j(npvpq + r, c) = dva(pq[r], pvpq[c]).imag();
      for (Eigen::Index c = 0; c < npq; ++c) j(npvpq + r, npvpq + c) = dvm(pq[r], pq[c]).imag();
    }
    const Eigen::VectorXd dx = j.partialPivLu().solve(-f);
    for (Eigen::Index k = 0; k < npvpq; ++k) va[pvpq[k]] += dx[k];
    for (Eigen::Index k = 0; k < npq; ++k) vm[pq[k]] += dx[npvpq + k];
    v = voltages();
    f = mismatch(v);
    norm = f.cwiseAbs().maxCoeff();
    if (!std::isfinite(norm)) break;
  }
  if (!(norm <= tol)) {
    std::ostringstream os;
    os << "power flow did not converge after " << it << " iterations (mismatch " << norm << ")";
    throw ConvergenceError(os.str(), norm);
  }

  PowerFlowSolution sol;
  sol.v = v;
  sol.generation = v.cwiseProduct((y * v).conjugate()) + network.loads();
  sol.mismatch = norm;
  sol.iterations = it;
  return sol;
}

// --- per-step network solution ---------------------------------------------

Eigen::VectorXd stack(const ComplexVector& v) {
  const auto n = v.size();
  Eigen::VectorXd x(2 * n);
  x.head(n) = v.real();
  x.tail(n) = v.imag();
  return x;
}

ComplexVector unstack(const Eigen::VectorXd& x) {
  const auto n = x.size() / 2;
  ComplexVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = {x[i], x[n + i]};
  return v;
}

Eigen::VectorXd network_residual(const ComplexMatrix& ybus, const std::vector<BusSource>& sources,
                                 const ComplexVector& loads, const ComplexVector& v) {
  ComplexVector r = ybus * v;
  for (const BusSource& s : sources) {
    const auto i = static_cast<Eigen::Index>(s.bus);
    r[i] -= s.norton.current(v[i]);
  }
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (loads[i] != Complex{}) r[i] += std::conj(loads[i] / v[i]);
  }
  return stack(r);
}

Eigen::MatrixXd network_jacobian(const ComplexMatrix& ybus, const std::vector<BusSource>& sources,
                                 const ComplexVector& loads, const ComplexVector& v) {
  const auto n = v.size();
  Eigen::MatrixXd j(2 * n, 2 * n);
  j.topLeftCorner(n, n) = ybus.real();
  j.topRightCorner(n, n) = -ybus.imag();
  j.bottomLeftCorner(n, n) = ybus.imag();
  j.bottomRightCorner(n, n) = ybus.real();
  for (const BusSource& s : sources) {
    const auto i = static_cast<Eigen::Index>(s.bus);
    const auto& m = s.norton.m;
    j(i, i) -= m[0];
    j(i, n + i) -= m[1];
    j(n + i, i) -= m[2];
    j(n + i, n + i) -= m[3];
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (loads[i] == Complex{}) continue;
    // I = c / w with c = P - jQ, w = conj(V).
    const Complex c = std::conj(loads[i]);
    const Complex w = std::conj(v[i]);
    const Complex d_re = -c / (w * w);
    const Complex d_im = Complex(0, 1) * c / (w * w);
    j(i, i) += d_re.real();
    j(n + i, i) += d_re.imag();
    j(i, n + i) += d_im.real();
    j(n + i, n + i) += d_im.imag();
  }
  return j;
}

NetworkSolution network_solve(const ComplexMatrix& ybus, const std::vector<BusSource>& sources,
                              const ComplexVector& loads, const ComplexVector& v_guess, double tol,
                              int max_iter) {
  Eigen::VectorXd x = stack(v_guess);
  Eigen::VectorXd g = network_residual(ybus, sources, loads, v_guess);
  double norm = g.cwiseAbs().maxCoeff();
  int it = 0;
  while (norm > tol && it < max_iter) {
    ++it;
    const Eigen::MatrixXd j = network_jacobian(ybus, sources, loads, unstack(x));
    x -= j.partialPivLu().solve(g);
    g = network_residual(ybus, sources, loads, unstack(x));
    const double next = g.cwiseAbs().maxCoeff();
    if (!std::isfinite(next)) {
      norm = next;
      break;
    }
    // Stalled at round-off level.
    if (next >= norm && next < 1e3 * tol) {
      norm = next;
      break;
    }
    norm = next;
  }
  if (!(norm <= tol) && !(std::isfinite(norm) && norm < 1e3 * tol)) {
    std::ostringstream os;
    os << "network solution did not converge after " << it << " iterations (residual " << norm
       << ")";
    throw ConvergenceError(os.str(), norm);
  }
  return {unstack(x), norm, it};
}

}  // namespace droope
