// Command-line front end: simulate, sweep, metrics, curves, validate.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "droope/analysis.hpp"
#include "droope/case_io.hpp"
#include "droope/errors.hpp"

namespace fs = std::filesystem;
using namespace droope;

namespace {

struct Options {
  std::string case_arg;
  std::string case_flag;
  std::string out_dir = ".";
  std::optional<double> dt;
  std::optional<double> t_end;
  std::string grid;
  double window = 0.1;
  bool seedless = false;
  std::vector<std::string> channels;
  std::optional<double> t_event;
  std::optional<double> t_stop;
  double p_set = 0.0;
  std::string input;
};

std::string case_name(const Options& o) {
  const std::string& c = o.case_flag.empty() ? o.case_arg : o.case_flag;
  if (c.empty()) throw CaseError("no case given (positional or --case)");
  return c;
}

/// Default columns: every device frequency, every device power, then the
/// sharing offsets; f_avg_hz for weighted cases; extra channels on request.
std::vector<std::string> default_columns(TimeSeries& ts, const CaseFile& c,
                                         const std::vector<std::string>& extra) {
  const Scenario& sc = c.scenario;
  std::vector<std::string> cols;
  for (const DeviceSpec& d : sc.devices) cols.push_back("f_" + d.id + "_hz");
  for (const DeviceSpec& d : sc.devices) cols.push_back("p_" + d.id + "_pu");
  std::vector<std::string> ps;
  for (const DeviceSpec& d : sc.devices) {
    if (ts.has("omega_ps_" + d.id + "_pu")) ps.push_back("omega_ps_" + d.id + "_pu");
  }
  if (ps.size() == 1) {
    ts.add_channel("omega_ps_pu");
    ts.channels.back() = ts.channel(ps.front());
    cols.push_back("omega_ps_pu");
  } else {
    cols.insert(cols.end(), ps.begin(), ps.end());
  }
  if (ts.has("f_avg_hz")) cols.push_back("f_avg_hz");
  for (const auto& e : extra) {
    if (std::find(cols.begin(), cols.end(), e) == cols.end()) cols.push_back(e);
  }
  return cols;
}

std::string options_fingerprint(const std::string& command, const Options& o) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["dt"] = o.dt ? nlohmann::ordered_json(*o.dt) : nlohmann::ordered_json(nullptr);
  j["t_end"] = o.t_end ? nlohmann::ordered_json(*o.t_end) : nlohmann::ordered_json(nullptr);
  j["grid"] = o.grid;
  j["window"] = o.window;
  j["channels"] = o.channels;
  j["p_set"] = o.p_set;
  return j.dump();
}

struct Output {
  fs::path dir;
  Manifest manifest;

  void put(const std::string& name, const std::string& bytes) {
    write_file(dir / name, bytes);
    manifest.outputs.emplace_back(name, sha256_hex(bytes));
  }
  void finish(std::chrono::steady_clock::time_point start) {
    manifest.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_file(dir / "manifest.json", manifest.to_json());
  }
};

Output open_output(const Options& o, const std::string& command, const std::string& input_bytes) {
  Output out;
  out.dir = o.out_dir;
  fs::create_directories(out.dir);
  out.manifest.command = command;
  out.manifest.inputs_sha256 = sha256_hex(input_bytes + "\n" + options_fingerprint(command, o));
  return out;
}

int cmd_simulate(const Options& o) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path path = resolve_case(case_name(o));
  const std::string bytes = read_file(path);
  CaseFile c = parse_case(bytes, path.string());
  if (o.dt) c.scenario.dt = *o.dt;
  if (o.t_end) c.scenario.t_end = *o.t_end;

  CaseRun result = run_case(c);
  TimeSeries& ts = result.series;
  const auto cols = default_columns(ts, c, o.channels);
  const std::string csv = timeseries_csv(ts, cols);
  if (o.seedless) {
    CaseRun again = run_case(c);
    const auto cols2 = default_columns(again.series, c, o.channels);
    if (timeseries_csv(again.series, cols2) != csv) throw Error("determinism check failed: reruns differ");
  }

  Output out = open_output(o, "simulate", bytes);
  out.manifest.defaults_applied = c.defaults_applied;
  out.put("timeseries.csv", csv);

  std::vector<std::pair<std::string, FrequencyMetrics>> rows;
  if (result.metrics) {
    rows.emplace_back(result.metrics_channel, *result.metrics);
    out.put("metrics.csv", metrics_csv(rows));
  }
  std::string activations = "device,time_s\n";
  for (const auto& a : ts.activations) activations += a.device + "," + format_number(a.time_s) + "\n";
  out.put("sharing.csv", activations);
  out.finish(start);

  std::cout << c.scenario.name << ": " << ts.time.size() << " samples written to "
            << (out.dir / "timeseries.csv").string() << "\n";
  for (const auto& [name, m] : rows) {
    std::printf("%s: nadir %.4f Hz, peak %.4f Hz, max ROCOF %.4f Hz/s, settling %.4f Hz", name.c_str(),
                m.nadir_hz, m.peak_hz, m.max_rocof_hz_s, m.settling_hz);
    if (m.dominant) std::printf(", mode %.3f Hz (zeta %.3f)", m.dominant->freq_hz, m.dominant->damping);
    std::printf("\n");
  }
  for (const auto& a : ts.activations) std::printf("sharing engaged on %s at %.3f s\n", a.device.c_str(), a.time_s);
  return 0;
}

int cmd_sweep(const Options& o) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path path = resolve_case(case_name(o));
  const std::string bytes = read_file(path);
  const CaseFile c = parse_case(bytes, path.string());
  if (c.analysis.sweep_device.empty()) throw CaseError("case has no grid-forming device to sweep");
  const std::string grid = o.grid.empty() ? c.analysis.sweep_grid : o.grid;
  const SweepResult sweep = dispatch_sweep(c.scenario, c.analysis.sweep_device, parse_grid(grid));

  Output out = open_output(o, "sweep", bytes);
  out.manifest.defaults_applied = c.defaults_applied;
  out.put("modal.csv", modal_csv(sweep));
  out.finish(start);
  std::cout << modal_table(sweep);
  return 0;
}

int cmd_metrics(const Options& o) {
  const auto start = std::chrono::steady_clock::now();
  if (o.input.empty()) throw Error("metrics needs a time-series CSV");
  const TimeSeries ts = read_timeseries_csv(o.input);
  std::vector<std::string> channels = o.channels;
  if (channels.empty()) {
    if (ts.has("f_avg_hz")) {
      channels.push_back("f_avg_hz");
    } else {
      for (const auto& n : ts.names) {
        if (n.rfind("f_", 0) == 0) {
          channels.push_back(n);
          break;
        }
      }
    }
  }
  if (channels.empty()) throw Error("no frequency channel in " + o.input);
  // Without --t-stop the window ends at the first sample with a nonzero sharing offset.
  std::optional<double> t_stop = o.t_stop;
  if (!t_stop) {
    for (std::size_t c = 0; c < ts.names.size(); ++c) {
      if (ts.names[c].rfind("omega_ps_", 0) != 0) continue;
      const auto& ps = ts.channels[c];
      for (std::size_t k = 0; k < ps.size(); ++k) {
        if (ps[k] != 0.0) {
          if (k > 0 && (!t_stop || ts.time[k] < *t_stop)) t_stop = ts.time[k];
          break;
        }
      }
    }
  }
  std::vector<std::pair<std::string, FrequencyMetrics>> rows;
  for (const auto& name : channels) {
    const auto& f = ts.channel(name);
    double t_event = ts.time.front();
    if (o.t_event) {
      t_event = *o.t_event;
    } else {
      for (std::size_t k = 1; k < f.size(); ++k) {
        if (std::abs(f[k] - f[0]) > 1e-9) {
          t_event = ts.time[k - 1];
          break;
        }
      }
    }
    rows.emplace_back(name, frequency_metrics(ts.time, f, t_event, o.window, t_stop));
  }
  const std::string csv = metrics_csv(rows);
  Output out = open_output(o, "metrics", read_file(o.input));
  out.put("metrics.csv", csv);
  out.finish(start);
  std::cout << csv;
  return 0;
}

int cmd_curves(const Options& o) {
  const auto start = std::chrono::steady_clock::now();
  DroopEParams params;
  std::string input = "defaults";
  if (!o.case_arg.empty() || !o.case_flag.empty()) {
    const fs::path path = resolve_case(case_name(o));
    input = read_file(path);
    const CaseFile c = parse_case(input, path.string());
    for (const DeviceSpec& d : c.scenario.devices) {
      const auto* gfm = std::get_if<GfmParams>(&d.model);
      if (gfm && gfm->is_droop_e()) {
        params = std::get<DroopEParams>(gfm->controller);
        break;
      }
    }
  }
  const std::string csv = emit_curve_tables(params, parse_grid(o.grid.empty() ? "-1:0.01:1" : o.grid), o.p_set);
  Output out = open_output(o, "curves", input);
  out.put("curves.csv", csv);
  out.finish(start);
  std::cout << "p_l = " << format_number(compute_p_l(params)) << " pu; curve table written to "
            << (out.dir / "curves.csv").string() << "\n";
  return 0;
}

int cmd_validate(const Options& o) {
  const fs::path path = resolve_case(case_name(o));
  const CaseFile c = load_case(path);
  std::cout << c.scenario.name << ": ok (" << c.scenario.network.size() << " buses, "
            << c.scenario.devices.size() << " devices, " << c.scenario.events.size() << " events)\n";
  for (const auto& d : c.defaults_applied) std::cout << "  default " << d << "\n";
  return 0;
}

int report_error(const std::string& kind, const std::string& what, int code) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = what;
  std::cerr << j.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Droop-e grid-forming control: simulation and small-signal analysis"};
  app.require_subcommand(1);
  Options o;

  auto add_case = [&](CLI::App* sub) {
    sub->add_option("target", o.case_arg, "case name or path");
    sub->add_option("--case", o.case_flag, "case name or path");
  };
  auto add_out = [&](CLI::App* sub) { sub->add_option("--out-dir", o.out_dir, "output directory"); };

  auto* simulate = app.add_subcommand("simulate", "time-domain run of a case");
  add_case(simulate);
  add_out(simulate);
  simulate->add_option("--dt", o.dt, "step size (s)");
  simulate->add_option("--t-end", o.t_end, "end time (s)");
  simulate->add_option("--channel", o.channels, "extra channels to write");
  simulate->add_flag("--seedless", o.seedless, "run twice and require identical output");

  auto* sweep = app.add_subcommand("sweep", "eigenvalues over the GFM dispatch range");
  add_case(sweep);
  add_out(sweep);
  sweep->add_option("--grid", o.grid, "start:step:stop in device pu");

  auto* metrics = app.add_subcommand("metrics", "frequency metrics of a time-series CSV");
  metrics->add_option("input", o.input, "time-series CSV")->required();
  add_out(metrics);
  metrics->add_option("--window", o.window, "ROCOF window (s)");
  metrics->add_option("--channel", o.channels, "frequency channels");
  metrics->add_option("--t-event", o.t_event, "disturbance time (s)");
  metrics->add_option("--t-stop", o.t_stop, "end of the analysed window (s); defaults to sharing activation");

  auto* curves = app.add_subcommand("curves", "Droop-e curve table");
  add_case(curves);
  add_out(curves);
  curves->add_option("--grid", o.grid, "start:step:stop");
  curves->add_option("--p-set", o.p_set, "power setpoint (pu)");

  auto* validate = app.add_subcommand("validate", "parse and validate a case");
  add_case(validate);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*simulate) return cmd_simulate(o);
    if (*sweep) return cmd_sweep(o);
    if (*metrics) return cmd_metrics(o);
    if (*curves) return cmd_curves(o);
    if (*validate) return cmd_validate(o);
  } catch (const CaseError& e) {
    return report_error("case", e.what(), 2);
  } catch (const SimulationError& e) {
    return report_error("simulation", e.what(), 3);
  } catch (const Error& e) {
    return report_error("runtime", e.what(), 1);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), 1);
  }
  return 0;
}
