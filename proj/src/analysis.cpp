#include "droope/analysis.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <tuple>

#include "droope/errors.hpp"

namespace droope {

namespace {

bool ends_with(const std::string& s, const std::string& tail) {
  return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}

}  // namespace

// --- linearization ---------------------------------------------------------

StateMatrix linearize(const PowerSystem& system, double h) {
  if (!(h > 0.0)) throw DomainError("linearize: perturbation must be > 0");
  const Eigen::VectorXd& x0 = system.initial_state();
  const ComplexVector& v0 = system.initial_voltage();
  const Eigen::VectorXd f0 = system.derivatives(x0, v0);
  const double residual = f0.size() ? f0.cwiseAbs().maxCoeff() : 0.0;
  if (!(residual < 1e-8)) {
    std::ostringstream os;
    os << "linearize: operating point is not an equilibrium (residual " << residual << ")";
    throw Error(os.str());
  }

  const auto n = x0.size();
  StateMatrix out;
  out.a.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double step = h * std::max(1.0, std::abs(x0[i]));
    Eigen::VectorXd xp = x0, xm = x0;
    xp[i] += step;
    xm[i] -= step;
    const Eigen::VectorXd fp = system.derivatives(xp, system.solve_network(xp, v0));
    const Eigen::VectorXd fm = system.derivatives(xm, system.solve_network(xm, v0));
    out.a.col(i) = (fp - fm) / (2.0 * step);
  }
  out.labels = system.state_labels();
  for (std::size_t d = 0; d < system.device_count(); ++d) {
    const DeviceModel& m = system.device(d).model;
    if (std::holds_alternative<SgParams>(m)) {
      out.owner.insert(out.owner.end(), SgState::kSize, StateOwner::sg);
    } else if (std::holds_alternative<GfmParams>(m)) {
      out.owner.insert(out.owner.end(), GfmState::kSize, StateOwner::gfm);
    } else {
      out.has_angle_reference = true;
    }
  }
  if (!out.a.allFinite()) throw Error("linearize: non-finite state matrix");
  return out;
}

StateMatrix linearize(const Scenario& scenario, double h) {
  PowerSystem system(scenario);
  StateMatrix m = linearize(system, h);
  m.descriptor = scenario.name;
  return m;
}

// --- modal report ----------------------------------------------------------

bool ModalReport::is_complex(std::size_t i) const {
  const auto& l = eigenvalues[i];
  return std::abs(l.imag()) > 1e-10 * std::max(1.0, std::abs(l));
}

double ModalReport::gfm_participation(std::size_t i) const {
  double best = 0.0;
  for (std::size_t k = 0; k < owner.size(); ++k) {
    if (owner[k] == StateOwner::gfm) {
      best = std::max(best, participation(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)));
    }
  }
  return best;
}

double ModalReport::sg_electromechanical_participation(std::size_t i) const {
  double best = 0.0;
  for (std::size_t k = 0; k < owner.size(); ++k) {
    if (owner[k] == StateOwner::sg && (ends_with(labels[k], ".delta") || ends_with(labels[k], ".omega"))) {
      best = std::max(best, participation(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)));
    }
  }
  return best;
}

double ModalReport::max_real_part() const {
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < eigenvalues.size(); ++i) {
    if (!reference[i]) worst = std::max(worst, eigenvalues[i].real());
  }
  return worst;
}

ModalReport eigen_report(const StateMatrix& sm) {
  if (sm.a.rows() != sm.a.cols()) throw DomainError("eigen_report: matrix is not square");
  if (!sm.a.allFinite()) throw DomainError("eigen_report: non-finite matrix");
  Eigen::EigenSolver<Eigen::MatrixXd> es(sm.a, true);
  if (es.info() != Eigen::Success) throw ConvergenceError("eigen_report: eigensolver failed", 0.0);

  ModalReport r;
  const auto n = sm.a.rows();
  const Eigen::VectorXcd lambda = es.eigenvalues();
  r.right = es.eigenvectors();
  const Eigen::MatrixXcd left = r.right.inverse();
  r.labels = sm.labels;
  r.owner = sm.owner;
  r.participation.resize(n, n);
  double scale = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) scale = std::max(scale, std::abs(lambda[i]));

  for (Eigen::Index i = 0; i < n; ++i) {
    const std::complex<double> l = lambda[i];
    r.eigenvalues.push_back(l);
    const double mag = std::abs(l);
    r.damping.push_back(mag > 0.0 ? -l.real() / mag : 1.0);
    r.freq_hz.push_back(std::abs(l.imag()) / kTwoPi);
    for (Eigen::Index k = 0; k < n; ++k) r.participation(k, i) = std::abs(r.right(k, i) * left(i, k));
    const double peak = r.participation.col(i).maxCoeff();
    if (peak > 0.0) r.participation.col(i) /= peak;
  }

  r.reference.assign(static_cast<std::size_t>(n), false);
  if (!sm.has_angle_reference) {
    std::optional<Eigen::Index> best;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(lambda[i]) > 1e-5 * std::max(1.0, scale)) continue;
      double angle = 0.0;
      for (std::size_t k = 0; k < sm.labels.size(); ++k) {
        if (ends_with(sm.labels[k], ".delta")) {
          angle += std::norm(r.right(static_cast<Eigen::Index>(k), i));
        }
      }
      if (angle < 0.9 * r.right.col(i).squaredNorm()) continue;
      if (!best || std::abs(lambda[i]) < std::abs(lambda[*best])) best = i;
    }
    if (best) r.reference[static_cast<std::size_t>(*best)] = true;
  }
  return r;
}

// --- dispatch sweep --------------------------------------------------------

SweepResult dispatch_sweep(const Scenario& scenario, const std::string& gfm_id,
                           const std::vector<double>& grid, double h) {
  const std::size_t gi = scenario.device_index(gfm_id);
  const auto* gfm = std::get_if<GfmParams>(&scenario.devices[gi].model);
  if (!gfm) throw CaseError("dispatch_sweep: device '" + gfm_id + "' is not grid-forming");
  const double to_system = gfm->s_rating / scenario.network.s_base;

  SweepResult out;
  for (double p : grid) {
    Scenario sc = scenario;
    sc.devices[gi].p_dispatch = p * to_system;
    try {
      PowerSystem sys(sc);
      StateMatrix sm = linearize(sys, h);
      sm.p_set = p;
      sm.descriptor = scenario.name;
      out.reports.push_back(eigen_report(sm));
      out.p_set.push_back(p);
    } catch (const Error& e) {
      std::ostringstream os;
      os << "p_set = " << p << " skipped: " << e.what();
      out.skipped.push_back(os.str());
    }
  }
  if (out.reports.empty()) return out;

  const std::size_t m = out.reports.front().size();
  out.tracks.assign(m, std::vector<std::size_t>(out.reports.size()));
  out.overlap.assign(m, std::vector<double>(out.reports.size(), 1.0));
  for (std::size_t t = 0; t < m; ++t) out.tracks[t][0] = t;

  for (std::size_t k = 1; k < out.reports.size(); ++k) {
    const Eigen::MatrixXcd& a = out.reports[k - 1].right;
    const Eigen::MatrixXcd& b = out.reports[k].right;
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t t = 0; t < m; ++t) {
      const auto i = static_cast<Eigen::Index>(out.tracks[t][k - 1]);
      for (std::size_t j = 0; j < m; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const double ov = std::abs(a.col(i).dot(b.col(jj))) / (a.col(i).norm() * b.col(jj).norm());
        pairs.emplace_back(ov, t, j);
      }
    }
    std::stable_sort(pairs.begin(), pairs.end(),
                     [](const auto& x, const auto& y) { return std::get<0>(x) > std::get<0>(y); });
    std::vector<bool> track_done(m, false), mode_used(m, false);
    for (const auto& [ov, t, j] : pairs) {
      if (track_done[t] || mode_used[j]) continue;
      track_done[t] = mode_used[j] = true;
      out.tracks[t][k] = j;
      out.overlap[t][k] = ov;
    }
  }

  for (std::size_t t = 0; t < m; ++t) {
    for (std::size_t k = 1; k < out.reports.size(); ++k) {
      const ModalReport& ra = out.reports[k - 1];
      const ModalReport& rb = out.reports[k];
      const std::size_t ia = out.tracks[t][k - 1];
      const std::size_t ib = out.tracks[t][k];
      const bool ca = ra.is_complex(ia);
      const bool cb = rb.is_complex(ib);
      if (ca == cb) continue;
      // Report each conjugate pair once, through its upper member.
      const auto& on_complex_side = ca ? ra.eigenvalues[ia] : rb.eigenvalues[ib];
      if (on_complex_side.imag() < 0.0) continue;
      Bifurcation bif;
      bif.track = t;
      bif.p_from = out.p_set[k - 1];
      bif.p_to = out.p_set[k];
      bif.becomes_complex = cb;
      bif.gfm_participating = ra.gfm_participation(ia) > kGfmParticipationThreshold ||
                              rb.gfm_participation(ib) > kGfmParticipationThreshold;
      out.bifurcations.push_back(bif);
    }
  }
  return out;
}

std::optional<std::size_t> gfm_sg_mode(const ModalReport& report, double f_lo, double f_hi) {
  std::optional<std::size_t> best;
  double best_part = 0.0;
  for (std::size_t i = 0; i < report.size(); ++i) {
    if (report.reference[i] || report.eigenvalues[i].imag() <= 0.0 || !report.is_complex(i)) continue;
    if (report.freq_hz[i] < f_lo || report.freq_hz[i] > f_hi) continue;
    const double g = report.gfm_participation(i);
    if (g <= kGfmParticipationThreshold) continue;
    if (report.sg_electromechanical_participation(i) <= kGfmParticipationThreshold) continue;
    if (!best || g > best_part) {
      best = i;
      best_part = g;
    }
  }
  return best;
}

// --- matrix pencil ---------------------------------------------------------

std::vector<PencilMode> matrix_pencil(const std::vector<double>& signal, double dt,
                                      std::size_t max_order, PencilOptions opts) {
  if (!(dt > 0.0)) throw DomainError("matrix_pencil: dt must be > 0");
  if (max_order == 0) throw DomainError("matrix_pencil: order bound must be >= 1");
  const std::size_t n = signal.size();
  if (n < 4 * max_order) throw DomainError("matrix_pencil: need at least 4 samples per order");

  const auto [lo, hi] = std::minmax_element(signal.begin(), signal.end());
  const double level = std::max(std::abs(*lo), std::abs(*hi));
  if (*hi - *lo <= 1e-12 * std::max(1.0, level)) return {};

  const auto pencil = static_cast<Eigen::Index>(std::clamp<std::size_t>(
      static_cast<std::size_t>(static_cast<double>(n) * opts.pencil_fraction), max_order, n - 2));
  const Eigen::Index rows = static_cast<Eigen::Index>(n) - pencil;
  Eigen::MatrixXd y(rows, pencil + 1);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j <= pencil; ++j) y(i, j) = signal[static_cast<std::size_t>(i + j)];
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(y, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  Eigen::Index order = 0;
  while (order < sv.size() && sv[order] > opts.sv_cutoff * sv[0]) ++order;
  order = std::min<Eigen::Index>(order, static_cast<Eigen::Index>(max_order));
  if (order == 0) return {};

  const Eigen::MatrixXd v = svd.matrixV().leftCols(order);
  const Eigen::MatrixXd v1 = v.topRows(pencil);
  const Eigen::MatrixXd v2 = v.bottomRows(pencil);
  // Nonzero eigenvalues of pinv(V1^T) V2^T, as the order x order product V2^T pinv(V1^T).
  const Eigen::MatrixXd gram = v1.transpose() * v1;
  const Eigen::MatrixXd a = gram.ldlt().solve(v1.transpose() * v2).transpose();
  Eigen::EigenSolver<Eigen::MatrixXd> es(a, false);
  if (es.info() != Eigen::Success) throw ConvergenceError("matrix_pencil: eigensolver failed", 0.0);
  const Eigen::VectorXcd z = es.eigenvalues();

  Eigen::MatrixXcd vander(static_cast<Eigen::Index>(n), order);
  for (Eigen::Index i = 0; i < order; ++i) {
    std::complex<double> p = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
      vander(static_cast<Eigen::Index>(k), i) = p;
      p *= z[i];
    }
  }
  Eigen::VectorXcd rhs(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) rhs[static_cast<Eigen::Index>(k)] = signal[k];
  const Eigen::VectorXcd residue = vander.colPivHouseholderQr().solve(rhs);

  std::vector<PencilMode> modes;
  for (Eigen::Index i = 0; i < order; ++i) {
    const std::complex<double> s = std::log(z[i]) / dt;
    const bool pair = std::abs(s.imag()) > 1e-9 * std::max(1.0, std::abs(s));
    if (pair && s.imag() < 0.0) continue;
    PencilMode m;
    m.sigma = s.real();
    m.freq_hz = pair ? s.imag() / kTwoPi : 0.0;
    const double mag = std::abs(s);
    m.damping = mag > 0.0 ? -s.real() / mag : 0.0;
    m.amplitude = (pair ? 2.0 : 1.0) * std::abs(residue[i]);
    m.phase = std::arg(residue[i]);
    m.energy = (pair ? 2.0 : 1.0) * vander.col(i).cwiseAbs2().sum() * std::norm(residue[i]);
    modes.push_back(m);
  }
  std::stable_sort(modes.begin(), modes.end(),
                   [](const PencilMode& x, const PencilMode& y) { return x.energy > y.energy; });
  return modes;
}

// --- metrics ---------------------------------------------------------------

FrequencyMetrics frequency_metrics(const std::vector<double>& time, const std::vector<double>& f_hz,
                                   double t_event, double window_s, std::optional<double> t_stop) {
  if (time.size() != f_hz.size() || time.size() < 2) {
    throw DomainError("frequency_metrics: time and frequency must align (>= 2 samples)");
  }
  if (!(window_s > 0.0)) throw DomainError("frequency_metrics: window must be > 0");
  const double dt = time[1] - time[0];
  const double stop = t_stop.value_or(time.back());
  const double eps = 1e-6 * dt;
  std::size_t i0 = 0;
  while (i0 < time.size() && time[i0] < t_event - eps) ++i0;
  std::size_t i1 = time.size() - 1;
  while (i1 > i0 && time[i1] > stop + eps) --i1;
  const auto w = static_cast<std::size_t>(std::llround(window_s / dt));
  if (i0 >= time.size() || w == 0 || i0 + w > i1) {
    throw DomainError("frequency_metrics: window longer than the analysed series");
  }

  FrequencyMetrics m;
  const auto [lo, hi] = std::minmax_element(f_hz.begin() + static_cast<long>(i0),
                                            f_hz.begin() + static_cast<long>(i1) + 1);
  m.nadir_hz = *lo;
  m.peak_hz = *hi;
  m.settling_hz = f_hz[i1];
  for (std::size_t i = i0; i + w <= i1; ++i) {
    m.max_rocof_hz_s = std::max(m.max_rocof_hz_s, std::abs(f_hz[i + w] - f_hz[i]) / (time[i + w] - time[i]));
  }

  constexpr std::size_t kOrder = 10;
  constexpr double kPencilStep = 0.05;
  const std::size_t stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(kPencilStep / dt)));
  std::vector<double> seg;
  for (std::size_t i = i0; i <= i1; i += stride) seg.push_back(f_hz[i]);
  if (seg.size() >= 4 * kOrder) {
    const double mean = std::accumulate(seg.begin(), seg.end(), 0.0) / static_cast<double>(seg.size());
    for (double& s : seg) s -= mean;
    for (const PencilMode& mode : matrix_pencil(seg, dt * static_cast<double>(stride), kOrder)) {
      if (mode.freq_hz > 0.0) {
        m.dominant = mode;
        break;
      }
    }
  }
  return m;
}

std::vector<double> weighted_frequency(const std::vector<std::vector<double>>& f_hz,
                                       const std::vector<double>& ratings_mva,
                                       const std::vector<std::vector<double>>* online) {
  if (f_hz.empty() || f_hz.size() != ratings_mva.size()) {
    throw DomainError("weighted_frequency: one rating per series required");
  }
  if (online && online->size() != f_hz.size()) {
    throw DomainError("weighted_frequency: one online mask per series required");
  }
  const std::size_t n = f_hz.front().size();
  for (std::size_t d = 0; d < f_hz.size(); ++d) {
    if (f_hz[d].size() != n || (online && (*online)[d].size() != n)) {
      throw DomainError("weighted_frequency: series are not aligned");
    }
    if (!(ratings_mva[d] > 0.0)) throw DomainError("weighted_frequency: ratings must be > 0");
  }
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    double num = 0.0, den = 0.0;
    for (std::size_t d = 0; d < f_hz.size(); ++d) {
      const double w = online ? ratings_mva[d] * (*online)[d][k] : ratings_mva[d];
      num += w * f_hz[d][k];
      den += w;
    }
    if (!(den > 0.0)) throw DomainError("weighted_frequency: no device online");
    out[k] = num / den;
  }
  return out;
}

double aggregate_inertia(const std::vector<DeviceSpec>& devices) {
  double num = 0.0, den = 0.0;
  for (const DeviceSpec& d : devices) {
    if (const auto* sg = std::get_if<SgParams>(&d.model)) {
      num += sg->h * sg->s_rating;
      den += sg->s_rating;
    } else if (const auto* gfm = std::get_if<GfmParams>(&d.model)) {
      den += gfm->s_rating;
    }
  }
  if (!(den > 0.0)) throw DomainError("aggregate_inertia: zero total rating");
  return num / den;
}

}  // namespace droope
