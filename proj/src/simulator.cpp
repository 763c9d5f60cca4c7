#include "droope/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "droope/errors.hpp"

namespace droope {

// --- integrator ------------------------------------------------------------

void TrapezoidalIntegrator::refactor(const DaeModel& model, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& y, double dt) {
  const auto nx = static_cast<Eigen::Index>(model.n_diff());
  Eigen::MatrixXd m = model.jacobian(x, y);
  m.topRows(nx) *= -0.5 * dt;
  m.topLeftCorner(nx, nx).diagonal().array() += 1.0;
  lu_.compute(m);
  have_lu_ = true;
  lu_dt_ = dt;
  ++factorizations_;
}

void TrapezoidalIntegrator::step(const DaeModel& model, Eigen::VectorXd& x, Eigen::VectorXd& y,
                                 double dt) {
  const auto nx = static_cast<Eigen::Index>(model.n_diff());
  const auto ny = static_cast<Eigen::Index>(model.n_alg());
  Eigen::VectorXd f_n(nx), g(ny), f(nx);
  model.residuals(x, y, f_n, g);

  for (int attempt = 0; attempt < 2; ++attempt) {
    bool fresh = false;
    if (!have_lu_ || lu_dt_ != dt || attempt > 0) {
      refactor(model, x, y, dt);
      fresh = true;
    }
    Eigen::VectorXd xk = x;
    Eigen::VectorXd yk = y;
    Eigen::VectorXd r(nx + ny);
    double norm = 0.0;
    for (int it = 1; it <= opts_.max_iter; ++it) {
      model.residuals(xk, yk, f, g);
      r.head(nx) = xk - x - 0.5 * dt * (f + f_n);
      r.tail(ny) = g;
      norm = r.cwiseAbs().maxCoeff();
      if (!std::isfinite(norm)) break;
      if (norm <= opts_.tol) {
        x = xk;
        y = yk;
        last_iterations_ = it - 1;
        if (it - 1 > opts_.refresh_after) have_lu_ = false;
        return;
      }
      if (it > opts_.refresh_after && !fresh) {
        refactor(model, xk, yk, dt);
        fresh = true;
      }
      const Eigen::VectorXd dz = lu_.solve(-r);
      xk += dz.head(nx);
      yk += dz.tail(ny);
    }
    if (attempt == 1 || fresh) {
      std::ostringstream os;
      os << "trapezoidal step did not converge (residual " << norm << ")";
      throw ConvergenceError(os.str(), norm);
    }
  }
}

// --- scenario --------------------------------------------------------------

void Scenario::validate() const {
  std::vector<std::string> problems;
  try {
    network.validate();
  } catch (const CaseError& e) {
    problems.emplace_back(e.what());
  }
  if (!(dt > 0.0)) problems.emplace_back("dt must be > 0");
  if (!(t_end > dt)) problems.emplace_back("t_end must exceed dt");
  if (!(hold_s >= 0.0)) problems.emplace_back("hold must be >= 0");
  if (output.sample_every < 1) problems.emplace_back("sample_every must be >= 1");

  std::set<std::string> ids;
  std::set<int> bus_ids;
  for (const Bus& b : network.buses) bus_ids.insert(b.id);
  std::set<int> device_buses;
  for (const DeviceSpec& d : devices) {
    if (d.id.empty()) problems.emplace_back("device with empty id");
    if (!ids.insert(d.id).second) problems.push_back("duplicate device id '" + d.id + "'");
    if (!bus_ids.count(d.bus)) {
      problems.push_back("device '" + d.id + "' references unknown bus " + std::to_string(d.bus));
    }
    device_buses.insert(d.bus);
    try {
      if (const auto* sg = std::get_if<SgParams>(&d.model)) sg->validate();
      if (const auto* gfm = std::get_if<GfmParams>(&d.model)) gfm->validate();
    } catch (const Error& e) {
      problems.push_back("device '" + d.id + "': " + e.what());
    }
  }
  for (const Bus& b : network.buses) {
    if (b.type != BusType::pq && !device_buses.count(b.id)) {
      problems.push_back("bus " + std::to_string(b.id) + " (" + to_string(b.type) +
                         ") hosts no device");
    }
    if (b.type == BusType::pq && device_buses.count(b.id)) {
      problems.push_back("bus " + std::to_string(b.id) + " hosts a device but is pq");
    }
  }
  for (const Event& e : events) {
    if (!(e.time_s > 0.0 && e.time_s < t_end)) {
      problems.push_back("event at t = " + std::to_string(e.time_s) + " s outside (0, t_end)");
    }
    if (const auto* ls = std::get_if<LoadStep>(&e.kind)) {
      if (!bus_ids.count(ls->bus)) {
        problems.push_back("load_step references unknown bus " + std::to_string(ls->bus));
      }
    } else {
      const auto& trip = std::get<GenTrip>(e.kind);
      if (!ids.count(trip.device)) {
        problems.push_back("gen_trip references unknown device '" + trip.device + "'");
      }
    }
  }
  if (!problems.empty()) {
    std::ostringstream os;
    os << "invalid scenario '" << name << "':";
    for (const auto& p : problems) os << "\n  - " << p;
    throw CaseError(os.str());
  }
}

std::size_t Scenario::device_index(const std::string& id) const {
  for (std::size_t i = 0; i < devices.size(); ++i) {
    if (devices[i].id == id) return i;
  }
  throw CaseError("unknown device '" + id + "'");
}

// --- time series -----------------------------------------------------------

bool TimeSeries::has(const std::string& name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

const std::vector<double>& TimeSeries::channel(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error("no channel '" + name + "'");
  return channels[static_cast<std::size_t>(it - names.begin())];
}

std::size_t TimeSeries::add_channel(const std::string& name) {
  names.push_back(name);
  channels.emplace_back();
  return names.size() - 1;
}

// --- power system ----------------------------------------------------------

namespace {

double rating_of(const DeviceModel& m, double s_base) {
  if (const auto* sg = std::get_if<SgParams>(&m)) return sg->s_rating;
  if (const auto* gfm = std::get_if<GfmParams>(&m)) return gfm->s_rating;
  return s_base;
}

std::size_t states_of(const DeviceModel& m) {
  if (std::holds_alternative<SgParams>(m)) return SgState::kSize;
  if (std::holds_alternative<GfmParams>(m)) return GfmState::kSize;
  return 0;
}

const char* const kSgLabels[] = {"delta", "omega", "e_q_p", "e_d_p", "e_fd",
                                 "v_r",   "r_f",   "p_m",   "p_sv"};
const char* const kGfmLabels[] = {"delta", "p"};

}  // namespace

PowerSystem::PowerSystem(const Scenario& scenario)
    : devices_(scenario.devices), network_(scenario.network) {
  scenario.validate();
  const std::size_t nb = network_.size();
  const double s_base = network_.s_base;

  for (auto& d : devices_) {
    if (auto* sg = std::get_if<SgParams>(&d.model)) sg->s_base = s_base;
    if (auto* gfm = std::get_if<GfmParams>(&d.model)) gfm->s_base = s_base;
    bus_.push_back(network_.index_of(d.bus));
    offset_.push_back(n_states_);
    size_.push_back(states_of(d.model));
    n_states_ += size_.back();
  }
  online_.assign(devices_.size(), true);
  ps_.assign(devices_.size(), PowerSharingState{});

  std::vector<double> p_gen(nb, 0.0);
  for (std::size_t d = 0; d < devices_.size(); ++d) p_gen[bus_[d]] += devices_[d].p_dispatch;
  pf_ = power_flow_init(network_, p_gen);
  ybus_ = build_ybus(network_);
  loads_ = network_.loads();
  base_loads_ = loads_;
  v0_ = pf_.v;

  // Split each bus's generation among its devices: P by dispatch (by rating
  // at the slack or when no dispatch is given), Q by rating.
  std::map<std::size_t, std::vector<std::size_t>> at_bus;
  for (std::size_t d = 0; d < devices_.size(); ++d) at_bus[bus_[d]].push_back(d);
  x0_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_states_));
  for (const auto& [b, list] : at_bus) {
    double rating_sum = 0.0, dispatch_sum = 0.0;
    for (std::size_t d : list) {
      rating_sum += rating_of(devices_[d].model, s_base);
      dispatch_sum += devices_[d].p_dispatch;
    }
    const bool by_rating = network_.buses[b].type == BusType::slack || dispatch_sum == 0.0;
    const Complex s_bus = pf_.generation[static_cast<Eigen::Index>(b)];
    const Complex v = pf_.v[static_cast<Eigen::Index>(b)];
    for (std::size_t d : list) {
      DeviceSpec& dev = devices_[d];
      const double share_q = rating_of(dev.model, s_base) / rating_sum;
      const double share_p = by_rating ? share_q : dev.p_dispatch / dispatch_sum;
      const Complex s(s_bus.real() * share_p, s_bus.imag() * share_q);
      double* xl = x0_.data() + offset_[d];
      try {
        if (auto* sg = std::get_if<SgParams>(&dev.model)) {
          const auto a = sg_initialize(v, s, *sg).to_array();
          std::copy(a.begin(), a.end(), xl);
        } else if (auto* gfm = std::get_if<GfmParams>(&dev.model)) {
          const GfmState st = gfm_initialize(v, s, *gfm);
          xl[0] = st.delta;
          xl[1] = st.p;
          ps_[d] = PowerSharingState::at_rest(gfm->positive_export_only
                                                  ? project_positive_export(st.p)
                                                  : st.p);
        } else {
          constant_source_initialize(v, s, std::get<ConstantSourceParams>(dev.model));
        }
      } catch (const Error& e) {
        throw CaseError("device '" + dev.id + "': " + e.what());
      }
    }
  }
}

void PowerSystem::local_eval(std::size_t d, const double* xl, Complex v, double* f_out,
                             Complex& i_out) const {
  const std::size_t k = size_[d];
  if (!online_[d]) {
    std::fill(f_out, f_out + k, 0.0);
    i_out = {};
    return;
  }
  const DeviceModel& m = devices_[d].model;
  if (const auto* sg = std::get_if<SgParams>(&m)) {
    const SgState s = SgState::from(std::span<const double>(xl, k));
    const auto dx = sg_derivatives(s, v, *sg);
    std::copy(dx.begin(), dx.end(), f_out);
    i_out = sg_norton(s, *sg).current(v);
  } else if (const auto* gfm = std::get_if<GfmParams>(&m)) {
    const GfmState s = GfmState::from(std::span<const double>(xl, k));
    const auto dx = gfm_derivatives(s, v, ps_[d], *gfm);
    std::copy(dx.begin(), dx.end(), f_out);
    i_out = gfm_norton(s, *gfm).current(v);
  } else {
    i_out = constant_source_norton(std::get<ConstantSourceParams>(m)).current(v);
  }
}

std::vector<BusSource> PowerSystem::sources(const Eigen::VectorXd& x) const {
  std::vector<BusSource> out;
  for (std::size_t d = 0; d < devices_.size(); ++d) {
    if (!online_[d]) continue;
    const DeviceModel& m = devices_[d].model;
    const std::span<const double> xl(x.data() + offset_[d], size_[d]);
    NortonSource n;
    if (const auto* sg = std::get_if<SgParams>(&m)) {
      n = sg_norton(SgState::from(xl), *sg);
    } else if (const auto* gfm = std::get_if<GfmParams>(&m)) {
      n = gfm_norton(GfmState::from(xl), *gfm);
    } else {
      n = constant_source_norton(std::get<ConstantSourceParams>(m));
    }
    out.push_back({bus_[d], n});
  }
  return out;
}

Eigen::VectorXd PowerSystem::derivatives(const Eigen::VectorXd& x, const ComplexVector& v) const {
  Eigen::VectorXd f(static_cast<Eigen::Index>(n_states_));
  for (std::size_t d = 0; d < devices_.size(); ++d) {
    Complex i;
    local_eval(d, x.data() + offset_[d], v[static_cast<Eigen::Index>(bus_[d])],
               f.data() + offset_[d], i);
  }
  return f;
}

void PowerSystem::residuals(const Eigen::VectorXd& x, const Eigen::VectorXd& y, Eigen::VectorXd& f,
                            Eigen::VectorXd& g) const {
  const ComplexVector v = unstack(y);
  f = derivatives(x, v);
  g = network_residual(ybus_, sources(x), loads_, v);
}

Eigen::MatrixXd PowerSystem::jacobian(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
  const auto nx = static_cast<Eigen::Index>(n_states_);
  const Eigen::Index nb = ybus_.rows();
  const ComplexVector v = unstack(y);
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(nx + 2 * nb, nx + 2 * nb);
  j.bottomRightCorner(2 * nb, 2 * nb) = network_jacobian(ybus_, sources(x), loads_, v);

  std::vector<double> xl, fp, fm;
  for (std::size_t d = 0; d < devices_.size(); ++d) {
    if (!online_[d]) continue;
    const std::size_t k = size_[d];
    const auto off = static_cast<Eigen::Index>(offset_[d]);
    const auto b = static_cast<Eigen::Index>(bus_[d]);
    const Complex vb = v[b];
    xl.assign(x.data() + offset_[d], x.data() + offset_[d] + k);
    fp.resize(k);
    fm.resize(k);
    Complex ip, im;
    // States.
    for (std::size_t c = 0; c < k; ++c) {
      const double h = 1e-7 * std::max(1.0, std::abs(xl[c]));
      const double saved = xl[c];
      xl[c] = saved + h;
      local_eval(d, xl.data(), vb, fp.data(), ip);
      xl[c] = saved - h;
      local_eval(d, xl.data(), vb, fm.data(), im);
      xl[c] = saved;
      const auto col = off + static_cast<Eigen::Index>(c);
      for (std::size_t r = 0; r < k; ++r) {
        j(off + static_cast<Eigen::Index>(r), col) = (fp[r] - fm[r]) / (2 * h);
      }
      const Complex di = (ip - im) / (2 * h);
      j(nx + b, col) -= di.real();
      j(nx + nb + b, col) -= di.imag();
    }
    // Terminal voltage.
    for (int part = 0; part < 2; ++part) {
      const double h = 1e-7;
      const Complex dv = part == 0 ? Complex(h, 0) : Complex(0, h);
      local_eval(d, xl.data(), vb + dv, fp.data(), ip);
      local_eval(d, xl.data(), vb - dv, fm.data(), im);
      const Eigen::Index col = nx + (part == 0 ? b : nb + b);
      for (std::size_t r = 0; r < k; ++r) {
        j(off + static_cast<Eigen::Index>(r), col) += (fp[r] - fm[r]) / (2 * h);
      }
    }
  }
  return j;
}

ComplexVector PowerSystem::solve_network(const Eigen::VectorXd& x,
                                         const ComplexVector& v_guess) const {
  return network_solve(ybus_, sources(x), loads_, v_guess).v;
}

std::vector<std::string> PowerSystem::state_labels() const {
  std::vector<std::string> out;
  for (const DeviceSpec& d : devices_) {
    if (std::holds_alternative<SgParams>(d.model)) {
      for (const char* l : kSgLabels) out.push_back(d.id + "." + l);
    } else if (std::holds_alternative<GfmParams>(d.model)) {
      for (const char* l : kGfmLabels) out.push_back(d.id + "." + l);
    }
  }
  return out;
}

Complex PowerSystem::device_current(std::size_t d, const Eigen::VectorXd& x,
                                    const ComplexVector& v) const {
  if (!online_[d]) return {};
  std::vector<double> f(size_[d]);
  Complex i;
  local_eval(d, x.data() + offset_[d], v[static_cast<Eigen::Index>(bus_[d])], f.data(), i);
  return i;
}

double PowerSystem::device_frequency_hz(std::size_t d, const Eigen::VectorXd& x) const {
  const DeviceModel& m = devices_[d].model;
  const std::span<const double> xl(x.data() + offset_[d], size_[d]);
  if (std::holds_alternative<SgParams>(m)) return SgState::from(xl).omega / kTwoPi;
  if (const auto* gfm = std::get_if<GfmParams>(&m)) {
    return gfm_frequency(GfmState::from(xl), ps_[d].omega_ps, *gfm) / kTwoPi;
  }
  return network_.f_base;
}

void PowerSystem::apply_event(const Event& event) {
  if (const auto* ls = std::get_if<LoadStep>(&event.kind)) {
    const auto i = static_cast<Eigen::Index>(network_.index_of(ls->bus));
    if (ls->fraction) {
      loads_[i] += *ls->fraction * base_loads_[i];
    } else {
      loads_[i] += Complex(ls->delta_p, ls->delta_q);
    }
    return;
  }
  const auto& trip = std::get<GenTrip>(event.kind);
  for (std::size_t d = 0; d < devices_.size(); ++d) {
    if (devices_[d].id == trip.device) {
      online_[d] = false;
      return;
    }
  }
  throw CaseError("gen_trip: unknown device '" + trip.device + "'");
}

std::vector<std::size_t> PowerSystem::update_sharing(const Eigen::VectorXd& x, double dt) {
  std::vector<std::size_t> latched;
  for (std::size_t d = 0; d < devices_.size(); ++d) {
    const auto* gfm = std::get_if<GfmParams>(&devices_[d].model);
    if (!gfm || !online_[d]) continue;
    const auto* de = std::get_if<DroopEParams>(&gfm->controller);
    double p = x[static_cast<Eigen::Index>(offset_[d] + 1)];
    double p_set = gfm->p_set;
    if (gfm->positive_export_only) {
      p = project_positive_export(p);
      p_set = project_positive_export(p_set);
    }
    if (de && !(std::abs(p) <= 1.0)) {
      std::ostringstream os;
      os << "device '" << devices_[d].id << "' left the controller domain (p = " << p << ")";
      throw DomainError(os.str());
    }
    if (!de || !gfm->power_sharing) continue;
    const bool before = ps_[d].latched;
    ps_[d] = power_sharing_step(ps_[d], p, p_set, dt, *de);
    if (!before && ps_[d].latched) latched.push_back(d);
  }
  return latched;
}

void apply_event(PowerSystem& system, const Event& event) { system.apply_event(event); }

// --- run -------------------------------------------------------------------

TimeSeries run(const Scenario& scenario, IntegratorOptions opts) {
  PowerSystem sys(scenario);
  const double dt = scenario.dt;
  const auto n_steps = static_cast<long>(std::llround(scenario.t_end / dt));
  const ComplexVector& v_init = sys.initial_voltage();

  std::vector<std::pair<long, const Event*>> events;
  for (const Event& e : scenario.events) events.emplace_back(std::llround(e.time_s / dt), &e);
  std::stable_sort(events.begin(), events.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  const double first_event = events.empty() ? scenario.t_end : events.front().first * dt;
  const double hold_end = std::min(scenario.hold_s, first_event);

  TimeSeries ts;
  struct Probe {
    std::size_t device;
    std::size_t f, p, q, ps;
  };
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<Probe> probes;
  for (std::size_t d = 0; d < sys.device_count(); ++d) {
    const DeviceSpec& dev = sys.device(d);
    Probe pr{d, ts.add_channel("f_" + dev.id + "_hz"), ts.add_channel("p_" + dev.id + "_pu"),
             kNone, kNone};
    if (scenario.output.reactive_power) pr.q = ts.add_channel("q_" + dev.id + "_pu");
    if (const auto* gfm = std::get_if<GfmParams>(&dev.model); gfm && gfm->is_droop_e()) {
      pr.ps = ts.add_channel("omega_ps_" + dev.id + "_pu");
    }
    probes.push_back(pr);
  }
  std::vector<std::size_t> v_channels;
  if (scenario.output.bus_voltages) {
    for (const Bus& b : scenario.network.buses) {
      v_channels.push_back(ts.add_channel("v_" + std::to_string(b.id) + "_pu"));
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> online_channels;
  for (const auto& [k, e] : events) {
    if (const auto* trip = std::get_if<GenTrip>(&e->kind)) {
      const std::string name = "online_" + trip->device;
      if (!ts.has(name)) {
        online_channels.emplace_back(scenario.device_index(trip->device), ts.add_channel(name));
      }
    }
  }

  Eigen::VectorXd x = sys.initial_state();
  Eigen::VectorXd y = stack(v_init);
  TrapezoidalIntegrator integrator(opts);

  auto record = [&](double t) {
    const ComplexVector v = unstack(y);
    ts.time.push_back(t);
    for (const Probe& pr : probes) {
      const Complex i = sys.device_current(pr.device, x, v);
      const Complex s = v[static_cast<Eigen::Index>(sys.bus_of(pr.device))] * std::conj(i);
      ts.channels[pr.f].push_back(sys.device_frequency_hz(pr.device, x));
      ts.channels[pr.p].push_back(s.real());
      if (pr.q != kNone) ts.channels[pr.q].push_back(s.imag());
      if (pr.ps != kNone) ts.channels[pr.ps].push_back(sys.sharing(pr.device).omega_ps);
    }
    for (std::size_t b = 0; b < v_channels.size(); ++b) {
      ts.channels[v_channels[b]].push_back(std::abs(v[static_cast<Eigen::Index>(b)]));
    }
    for (const auto& [d, c] : online_channels) ts.channels[c].push_back(sys.online(d) ? 1.0 : 0.0);
  };

  auto verify_hold = [&]() {
    for (std::size_t c = 0; c < ts.channels.size(); ++c) {
      const auto& ch = ts.channels[c];
      const auto [lo, hi] = std::minmax_element(ch.begin(), ch.end());
      if (*hi - *lo > 1e-6) {
        std::ostringstream os;
        os << "initial state is not stationary: channel " << ts.names[c] << " drifts by "
           << (*hi - *lo);
        throw SimulationError(os.str(), ts.time.back());
      }
    }
  };

  std::size_t next_event = 0;
  bool hold_checked = hold_end <= 0.0;
  for (long k = 0;; ++k) {
    const double t = static_cast<double>(k) * dt;
    if (!hold_checked && t >= hold_end - 0.5 * dt) {
      verify_hold();
      hold_checked = true;
    }
    bool fired = false;
    while (next_event < events.size() && events[next_event].first == k) {
      sys.apply_event(*events[next_event].second);
      ++next_event;
      fired = true;
    }
    if (fired) {
      try {
        y = stack(sys.solve_network(x, unstack(y)));
      } catch (const Error& e) {
        throw SimulationError(std::string("post-event network solution failed: ") + e.what(), t);
      }
      integrator.invalidate();
    }
    if (k % scenario.output.sample_every == 0 || k == n_steps) record(t);
    if (k == n_steps) break;

    try {
      integrator.step(sys, x, y, dt);
      if (!x.allFinite() || !y.allFinite()) throw Error("non-finite state");
      for (std::size_t d : sys.update_sharing(x, dt)) {
        ts.activations.push_back({sys.device(d).id, static_cast<double>(k + 1) * dt});
      }
    } catch (const SimulationError&) {
      throw;
    } catch (const Error& e) {
      throw SimulationError(e.what(), t + dt);
    }
  }
  return ts;
}

}  // namespace droope
