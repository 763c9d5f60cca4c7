#pragma once

#include <Eigen/Dense>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "droope/simulator.hpp"

namespace droope {

// ---------------------------------------------------------------------------
// Small-signal analysis
// ---------------------------------------------------------------------------

enum class StateOwner { sg, gfm };

struct StateMatrix {
  Eigen::MatrixXd a;
  std::vector<std::string> labels;  ///< "<device>.<state>"
  std::vector<StateOwner> owner;
  std::string descriptor;
  double p_set = 0.0;               ///< GFM dispatch (device base) when produced by a sweep
  bool has_angle_reference = false;  ///< a constant source pins the absolute angle
};

/// A_sys of the network-reduced map x' = f(x, V(x)) by central differences
/// (step h scaled by max(1, |x_i|)) around the system's initial equilibrium.
/// Throws Error when the equilibrium residual exceeds 1e-8.
StateMatrix linearize(const PowerSystem& system, double h = 1e-6);
StateMatrix linearize(const Scenario& scenario, double h = 1e-6);

struct ModalReport {
  std::vector<std::complex<double>> eigenvalues;
  std::vector<double> damping;  ///< -Re / |lambda|; 1 for a zero eigenvalue
  std::vector<double> freq_hz;  ///< |Im| / 2 pi
  Eigen::MatrixXd participation;  ///< states x modes, each column scaled to max 1
  Eigen::MatrixXcd right;         ///< right eigenvectors (columns)
  /// Rotational-invariance mode: exact zero eigenvalue carried by the angle
  /// states when no constant source fixes the reference.
  std::vector<bool> reference;
  std::vector<std::string> labels;
  std::vector<StateOwner> owner;

  std::size_t size() const { return eigenvalues.size(); }
  bool is_complex(std::size_t i) const;
  double gfm_participation(std::size_t i) const;
  double sg_electromechanical_participation(std::size_t i) const;  ///< SG delta/omega states
  /// Largest real part over the non-reference modes.
  double max_real_part() const;
};

ModalReport eigen_report(const StateMatrix& a);

inline constexpr double kGfmParticipationThreshold = 0.1;
inline constexpr double kTrackingOverlapThreshold = 0.8;

struct Bifurcation {
  std::size_t track = 0;
  double p_from = 0.0;
  double p_to = 0.0;
  bool becomes_complex = false;
  bool gfm_participating = false;
  double p_set() const { return 0.5 * (p_from + p_to); }
};

struct SweepResult {
  std::vector<double> p_set;
  std::vector<ModalReport> reports;
  std::vector<std::string> skipped;  ///< notices for infeasible grid points
  /// tracks[t][k]: mode index of track t at grid point k.
  std::vector<std::vector<std::size_t>> tracks;
  /// overlap[t][k]: eigenvector overlap of track t between points k-1 and k (k >= 1).
  std::vector<std::vector<double>> overlap;
  std::vector<Bifurcation> bifurcations;
};

/// Re-dispatches the named GFM over `grid` (device base; the slack absorbs
/// the difference), linearizes each point and tracks modes across the grid.
SweepResult dispatch_sweep(const Scenario& scenario, const std::string& gfm_id,
                           const std::vector<double>& grid, double h = 1e-6);

/// Low-frequency mode shared by GFM and SG states: oscillatory, within the
/// band, with both participations above the threshold. Picks the one with
/// the largest GFM participation.
std::optional<std::size_t> gfm_sg_mode(const ModalReport& report, double f_lo = 0.05,
                                       double f_hi = 0.8);

// ---------------------------------------------------------------------------
// Signal analysis
// ---------------------------------------------------------------------------

struct PencilMode {
  double freq_hz = 0.0;
  double damping = 0.0;
  double sigma = 0.0;  ///< real part of s (1/s)
  double amplitude = 0.0;
  double phase = 0.0;
  double energy = 0.0;
};

struct PencilOptions {
  double pencil_fraction = 1.0 / 3.0;  ///< L = N * fraction
  double sv_cutoff = 1e-8;             ///< relative to the largest singular value
};

/// Damped-exponential fit via the Hankel matrix pencil. Conjugate pairs are
/// reported once with amplitude 2|R|. Sorted by energy, largest first.
std::vector<PencilMode> matrix_pencil(const std::vector<double>& signal, double dt,
                                      std::size_t max_order, PencilOptions opts = {});

struct FrequencyMetrics {
  double nadir_hz = 0.0;
  double peak_hz = 0.0;
  double max_rocof_hz_s = 0.0;
  double settling_hz = 0.0;
  std::optional<PencilMode> dominant;
};

/// Metrics over [t_event, t_stop] (t_stop defaults to the end of the series).
/// ROCOF is max |f(t + T_w) - f(t)| / T_w over the window.
FrequencyMetrics frequency_metrics(const std::vector<double>& time, const std::vector<double>& f_hz,
                                   double t_event, double window_s = 0.1,
                                   std::optional<double> t_stop = std::nullopt);

/// sum(S_i f_i) / sum(S_i) per sample, over devices marked online.
std::vector<double> weighted_frequency(const std::vector<std::vector<double>>& f_hz,
                                       const std::vector<double>& ratings_mva,
                                       const std::vector<std::vector<double>>* online = nullptr);

/// sum(H_i S_i) / sum(S_i) with H = 0 for grid-forming devices.
double aggregate_inertia(const std::vector<DeviceSpec>& devices);

}  // namespace droope
