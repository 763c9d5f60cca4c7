#include "droope/case_io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>

#include "droope/errors.hpp"

#ifndef DROOPE_CASE_DIR
#define DROOPE_CASE_DIR "cases"
#endif

namespace droope {

using json = nlohmann::ordered_json;

namespace {

struct Ctx {
  std::vector<std::string> errors;
  std::vector<std::string> defaults;
};

std::string show(const json& j) { return j.dump(); }

template <class T>
bool convert(const json& j, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) return false;
    out = j.get<bool>();
  } else if constexpr (std::is_same_v<T, int>) {
    if (!j.is_number_integer()) return false;
    out = j.get<int>();
  } else if constexpr (std::is_same_v<T, double>) {
    if (!j.is_number()) return false;
    out = j.get<double>();
    if (!std::isfinite(out)) return false;
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) return false;
    out = j.get<std::string>();
  }
  return true;
}

template <class T>
const char* type_name() {
  if constexpr (std::is_same_v<T, bool>) return "a boolean";
  if constexpr (std::is_same_v<T, int>) return "an integer";
  if constexpr (std::is_same_v<T, double>) return "a number";
  return "a string";
}

/// Field access on one JSON object; tracks consumed keys so that unknown
/// ones can be reported.
class Fields {
 public:
  Fields(const json& j, std::string path, Ctx& ctx) : j_(j), path_(std::move(path)), ctx_(ctx) {
    if (!j_.is_object()) ctx_.errors.push_back(path_ + ": expected an object");
  }
  ~Fields() {
    if (!j_.is_object()) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) ctx_.errors.push_back(where(key) + ": unknown key");
    }
  }
  Fields(const Fields&) = delete;
  Fields& operator=(const Fields&) = delete;

  template <class T>
  void opt(const char* key, T& out) {
    seen_.insert(key);
    if (j_.is_object() && j_.contains(key)) {
      read(key, out);
    } else {
      ctx_.defaults.push_back(where(key) + " = " + show(json(out)));
    }
  }

  /// Like opt() but silent when absent.
  template <class T>
  bool quiet(const char* key, T& out) {
    seen_.insert(key);
    if (j_.is_object() && j_.contains(key)) return read(key, out);
    return false;
  }

  template <class T>
  bool req(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) {
      ctx_.errors.push_back(where(key) + ": required");
      return false;
    }
    return read(key, out);
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    if (j_.is_object() && j_.contains(key)) return &j_.at(key);
    return nullptr;
  }

  std::string where(const std::string& key) const { return path_ + "." + key; }
  void error(const std::string& key, const std::string& msg) {
    ctx_.errors.push_back(where(key) + ": " + msg);
  }

 private:
  template <class T>
  bool read(const char* key, T& out) {
    if (!convert(j_.at(key), out)) {
      ctx_.errors.push_back(where(key) + ": expected " + type_name<T>());
      return false;
    }
    return true;
  }

  const json& j_;
  std::string path_;
  Ctx& ctx_;
  std::set<std::string> seen_;
};

void read_sg(const json* j, const std::string& path, SgParams& p, Ctx& ctx) {
  static const json empty = json::object();
  Fields f(j ? *j : empty, path, ctx);
  f.opt("h_s", p.h);
  f.opt("d_pu", p.d);
  f.opt("x_d_pu", p.x_d);
  f.opt("x_q_pu", p.x_q);
  f.opt("x_d_prime_pu", p.x_d_p);
  f.opt("x_q_prime_pu", p.x_q_p);
  f.opt("t_do_prime_s", p.t_do_p);
  f.opt("t_qo_prime_s", p.t_qo_p);
  f.opt("k_a", p.k_a);
  f.opt("t_a_s", p.t_a);
  f.opt("k_e", p.k_e);
  f.opt("t_e_s", p.t_e);
  f.opt("k_f", p.k_f);
  f.opt("t_f_s", p.t_f);
  f.opt("sat_gamma", p.sat_gamma);
  f.opt("sat_epsilon", p.sat_epsilon);
  f.opt("m_d_pu", p.m_d);
  f.opt("t_sv_s", p.t_sv);
  f.opt("t_ch_s", p.t_ch);
  f.opt("s_rating_mva", p.s_rating);
}

void read_droop_e(const json* j, const std::string& path, DroopEParams& p, Ctx& ctx) {
  static const json empty = json::object();
  Fields f(j ? *j : empty, path, ctx);
  f.opt("alpha_pu", p.alpha);
  f.opt("beta_per_pu", p.beta);
  f.opt("d_max_pu", p.d_max);
  f.opt("d_min_pu", p.d_min);
  f.opt("m_d_pu", p.m_d);
  f.opt("omega_nom_pu", p.omega_nom);
  f.opt("k_per_s", p.k);
  f.opt("eps_p_pu", p.eps_p);
  f.opt("eps_dp_pu_per_s", p.eps_dp);
  f.opt("dpdt_tau_s", p.dpdt_tau_s);
  f.opt("gate_dwell_s", p.gate_dwell_s);
}

void read_linear(const json* j, const std::string& path, LinearDroopParams& p, Ctx& ctx) {
  static const json empty = json::object();
  Fields f(j ? *j : empty, path, ctx);
  f.opt("m_d_pu", p.m_d);
  f.opt("omega_set_pu", p.omega_set);
}

void read_gfm(const json* j, const std::string& path, GfmParams& p, Ctx& ctx) {
  static const json empty = json::object();
  Fields f(j ? *j : empty, path, ctx);
  f.opt("x_out_pu", p.x_out);
  f.opt("r_out_pu", p.r_out);
  f.opt("t_fil_s", p.t_fil);
  f.opt("s_rating_mva", p.s_rating);
  f.opt("q_v_gain_pu", p.q_v_gain);
  f.opt("power_sharing", p.power_sharing);
  f.opt("positive_export_only", p.positive_export_only);
}

template <class Fn>
void each(const json* arr, const std::string& path, Ctx& ctx, Fn fn) {
  if (!arr) return;
  if (!arr->is_array()) {
    ctx.errors.push_back(path + ": expected an array");
    return;
  }
  for (std::size_t i = 0; i < arr->size(); ++i) {
    fn((*arr)[i], path + "[" + std::to_string(i) + "]");
  }
}

std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

// --- parse -----------------------------------------------------------------

CaseFile parse_case(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_col(text, e.byte > 0 ? e.byte - 1 : 0);
    std::ostringstream os;
    os << source << ":" << line << ":" << col << ": syntax error: " << e.what();
    throw CaseError(os.str());
  }

  CaseFile c;
  Ctx ctx;
  Scenario& sc = c.scenario;
  {
    Fields top(doc, "$", ctx);
    top.opt("schema_version", c.schema_version);
    if (c.schema_version != kSchemaVersion) {
      top.error("schema_version", "unsupported version " + std::to_string(c.schema_version));
    }
    top.req("name", sc.name);
    top.quiet("notes", c.notes);
    top.quiet("provenance", c.provenance);

    // network
    if (const json* nj = top.sub("network")) {
      Fields nf(*nj, "$.network", ctx);
      nf.opt("s_base_mva", sc.network.s_base);
      nf.opt("v_base_kv", sc.network.v_base);
      nf.opt("f_base_hz", sc.network.f_base);
      const json* buses = nf.sub("buses");
      if (!buses) nf.error("buses", "required");
      each(buses, "$.network.buses", ctx, [&](const json& bj, const std::string& path) {
        Fields bf(bj, path, ctx);
        Bus b;
        std::string type;
        bf.req("id", b.id);
        if (bf.req("type", type)) {
          try {
            b.type = parse_bus_type(type);
          } catch (const CaseError& e) {
            bf.error("type", e.what());
          }
        }
        if (b.type != BusType::pq) {
          bf.opt("v_setpoint_pu", b.v_setpoint);
        } else {
          bf.quiet("v_setpoint_pu", b.v_setpoint);
        }
        bf.quiet("load_p_pu", b.load_p);
        bf.quiet("load_q_pu", b.load_q);
        sc.network.buses.push_back(b);
      });
      const json* branches = nf.sub("branches");
      if (!branches) nf.error("branches", "required");
      each(branches, "$.network.branches", ctx, [&](const json& bj, const std::string& path) {
        Fields bf(bj, path, ctx);
        Branch br;
        bf.req("from", br.from);
        bf.req("to", br.to);
        bf.quiet("r_pu", br.r);
        bf.req("x_pu", br.x);
        bf.quiet("b_pu", br.b);
        bf.quiet("tap_ratio", br.tap);
        sc.network.branches.push_back(br);
      });
    } else {
      top.error("network", "required");
    }
    const double omega_b = kTwoPi * sc.network.f_base;

    // devices
    const json* devices = top.sub("devices");
    if (!devices) top.error("devices", "required");
    each(devices, "$.devices", ctx, [&](const json& dj, const std::string& path) {
      Fields df(dj, path, ctx);
      DeviceSpec d;
      std::string type;
      df.req("id", d.id);
      df.req("bus", d.bus);
      df.req("type", type);
      const json* params = df.sub("params");
      if (type == "sg") {
        SgParams p;
        p.omega_b = omega_b;
        read_sg(params, path + ".params", p, ctx);
        d.model = p;
      } else if (type == "gfm") {
        GfmParams p;
        p.omega_b = omega_b;
        read_gfm(params, path + ".params", p, ctx);
        std::string controller = "droop_e";
        df.opt("controller", controller);
        const json* cp = df.sub("controller_params");
        if (controller == "droop_e") {
          DroopEParams de;
          de.omega_b = omega_b;
          read_droop_e(cp, path + ".controller_params", de, ctx);
          p.controller = de;
        } else if (controller == "linear_droop") {
          LinearDroopParams lin;
          read_linear(cp, path + ".controller_params", lin, ctx);
          lin.omega_fil = 1.0 / p.t_fil;
          p.controller = lin;
        } else {
          df.error("controller", "expected \"droop_e\" or \"linear_droop\"");
        }
        d.model = p;
      } else if (type == "constant_source") {
        ConstantSourceParams p;
        static const json empty = json::object();
        Fields pf(params ? *params : empty, path + ".params", ctx);
        pf.opt("r_pu", p.r);
        pf.opt("x_pu", p.x);
        d.model = p;
      } else if (!type.empty()) {
        df.error("type", "expected \"sg\", \"gfm\" or \"constant_source\"");
      }
      sc.devices.push_back(std::move(d));
    });

    // dispatch
    std::set<std::string> dispatched;
    each(top.sub("dispatch"), "$.dispatch", ctx, [&](const json& j, const std::string& path) {
      Fields f(j, path, ctx);
      std::string id;
      double p = 0.0;
      if (!f.req("device", id) || !f.req("p_pu", p)) return;
      bool found = false;
      for (DeviceSpec& d : sc.devices) {
        if (d.id == id) {
          d.p_dispatch = p;
          found = true;
        }
      }
      if (!found) f.error("device", "unknown device '" + id + "'");
      if (!dispatched.insert(id).second) f.error("device", "dispatched twice");
    });

    // events
    each(top.sub("events"), "$.events", ctx, [&](const json& j, const std::string& path) {
      Fields f(j, path, ctx);
      Event e;
      std::string kind;
      f.req("time_s", e.time_s);
      f.req("kind", kind);
      if (kind == "load_step") {
        LoadStep ls;
        f.req("bus", ls.bus);
        double fraction = 0.0;
        if (f.quiet("fraction", fraction)) ls.fraction = fraction;
        const bool dp = f.quiet("delta_p_pu", ls.delta_p);
        const bool dq = f.quiet("delta_q_pu", ls.delta_q);
        if (ls.fraction && (dp || dq)) {
          f.error("fraction", "give either fraction or delta_p_pu/delta_q_pu");
        }
        e.kind = ls;
      } else if (kind == "gen_trip") {
        GenTrip trip;
        f.req("device", trip.device);
        e.kind = trip;
      } else if (!kind.empty()) {
        f.error("kind", "expected \"load_step\" or \"gen_trip\"");
      }
      sc.events.push_back(e);
    });

    // simulation
    {
      static const json empty = json::object();
      const json* sj = top.sub("simulation");
      Fields f(sj ? *sj : empty, "$.simulation", ctx);
      f.opt("t_end_s", sc.t_end);
      f.opt("dt_s", sc.dt);
      f.opt("hold_s", sc.hold_s);
      f.opt("sample_every", sc.output.sample_every);
      f.opt("record_reactive_power", sc.output.reactive_power);
      f.opt("record_bus_voltages", sc.output.bus_voltages);
    }
    // analysis
    {
      static const json empty = json::object();
      const json* aj = top.sub("analysis");
      Fields f(aj ? *aj : empty, "$.analysis", ctx);
      AnalysisDirectives& a = c.analysis;
      for (const DeviceSpec& d : sc.devices) {
        if (std::holds_alternative<GfmParams>(d.model)) {
          a.sweep_device = d.id;
          break;
        }
      }
      f.quiet("sweep_device", a.sweep_device);
      f.opt("sweep_grid", a.sweep_grid);
      f.opt("metrics_window_s", a.metrics_window_s);
      f.quiet("metrics_channel", a.metrics_channel);
      f.opt("metrics_until_sharing", a.metrics_until_sharing);
      f.opt("weighted_frequency", a.weighted_frequency);
      try {
        parse_grid(a.sweep_grid);
      } catch (const Error& e) {
        f.error("sweep_grid", e.what());
      }
    }
  }

  if (ctx.errors.empty()) {
    try {
      sc.validate();
    } catch (const CaseError& e) {
      ctx.errors.emplace_back(e.what());
    }
  }
  if (!ctx.errors.empty()) {
    std::ostringstream os;
    os << source << ": invalid case";
    for (const auto& e : ctx.errors) os << "\n  " << e;
    throw CaseError(os.str());
  }
  c.defaults_applied = std::move(ctx.defaults);
  return c;
}

CaseFile load_case(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw CaseError(e.what());
  }
  return parse_case(text, path.string());
}

// --- emit ------------------------------------------------------------------

std::string emit_case(const CaseFile& c) {
  const Scenario& sc = c.scenario;
  json doc;
  doc["schema_version"] = c.schema_version;
  doc["name"] = sc.name;
  if (!c.notes.empty()) doc["notes"] = c.notes;
  if (!c.provenance.empty()) doc["provenance"] = c.provenance;

  json net;
  net["s_base_mva"] = sc.network.s_base;
  net["v_base_kv"] = sc.network.v_base;
  net["f_base_hz"] = sc.network.f_base;
  net["buses"] = json::array();
  for (const Bus& b : sc.network.buses) {
    net["buses"].push_back({{"id", b.id},
                            {"type", to_string(b.type)},
                            {"v_setpoint_pu", b.v_setpoint},
                            {"load_p_pu", b.load_p},
                            {"load_q_pu", b.load_q}});
  }
  net["branches"] = json::array();
  for (const Branch& br : sc.network.branches) {
    net["branches"].push_back({{"from", br.from},
                               {"to", br.to},
                               {"r_pu", br.r},
                               {"x_pu", br.x},
                               {"b_pu", br.b},
                               {"tap_ratio", br.tap}});
  }
  doc["network"] = net;

  doc["devices"] = json::array();
  doc["dispatch"] = json::array();
  for (const DeviceSpec& d : sc.devices) {
    json dj;
    dj["id"] = d.id;
    dj["bus"] = d.bus;
    if (const auto* p = std::get_if<SgParams>(&d.model)) {
      dj["type"] = "sg";
      dj["params"] = {{"h_s", p->h},
                      {"d_pu", p->d},
                      {"x_d_pu", p->x_d},
                      {"x_q_pu", p->x_q},
                      {"x_d_prime_pu", p->x_d_p},
                      {"x_q_prime_pu", p->x_q_p},
                      {"t_do_prime_s", p->t_do_p},
                      {"t_qo_prime_s", p->t_qo_p},
                      {"k_a", p->k_a},
                      {"t_a_s", p->t_a},
                      {"k_e", p->k_e},
                      {"t_e_s", p->t_e},
                      {"k_f", p->k_f},
                      {"t_f_s", p->t_f},
                      {"sat_gamma", p->sat_gamma},
                      {"sat_epsilon", p->sat_epsilon},
                      {"m_d_pu", p->m_d},
                      {"t_sv_s", p->t_sv},
                      {"t_ch_s", p->t_ch},
                      {"s_rating_mva", p->s_rating}};
    } else if (const auto* p = std::get_if<GfmParams>(&d.model)) {
      dj["type"] = "gfm";
      dj["params"] = {{"x_out_pu", p->x_out},
                      {"r_out_pu", p->r_out},
                      {"t_fil_s", p->t_fil},
                      {"s_rating_mva", p->s_rating},
                      {"q_v_gain_pu", p->q_v_gain},
                      {"power_sharing", p->power_sharing},
                      {"positive_export_only", p->positive_export_only}};
      if (const auto* de = std::get_if<DroopEParams>(&p->controller)) {
        dj["controller"] = "droop_e";
        dj["controller_params"] = {{"alpha_pu", de->alpha},
                                   {"beta_per_pu", de->beta},
                                   {"d_max_pu", de->d_max},
                                   {"d_min_pu", de->d_min},
                                   {"m_d_pu", de->m_d},
                                   {"omega_nom_pu", de->omega_nom},
                                   {"k_per_s", de->k},
                                   {"eps_p_pu", de->eps_p},
                                   {"eps_dp_pu_per_s", de->eps_dp},
                                   {"dpdt_tau_s", de->dpdt_tau_s},
                                   {"gate_dwell_s", de->gate_dwell_s}};
      } else {
        const auto& lin = std::get<LinearDroopParams>(p->controller);
        dj["controller"] = "linear_droop";
        dj["controller_params"] = {{"m_d_pu", lin.m_d}, {"omega_set_pu", lin.omega_set}};
      }
    } else {
      const auto& cs = std::get<ConstantSourceParams>(d.model);
      dj["type"] = "constant_source";
      dj["params"] = {{"r_pu", cs.r}, {"x_pu", cs.x}};
    }
    doc["devices"].push_back(dj);
    doc["dispatch"].push_back({{"device", d.id}, {"p_pu", d.p_dispatch}});
  }

  doc["events"] = json::array();
  for (const Event& e : sc.events) {
    json ej;
    ej["time_s"] = e.time_s;
    if (const auto* ls = std::get_if<LoadStep>(&e.kind)) {
      ej["kind"] = "load_step";
      ej["bus"] = ls->bus;
      if (ls->fraction) {
        ej["fraction"] = *ls->fraction;
      } else {
        ej["delta_p_pu"] = ls->delta_p;
        ej["delta_q_pu"] = ls->delta_q;
      }
    } else {
      ej["kind"] = "gen_trip";
      ej["device"] = std::get<GenTrip>(e.kind).device;
    }
    doc["events"].push_back(ej);
  }

  doc["simulation"] = {{"t_end_s", sc.t_end},
                       {"dt_s", sc.dt},
                       {"hold_s", sc.hold_s},
                       {"sample_every", sc.output.sample_every},
                       {"record_reactive_power", sc.output.reactive_power},
                       {"record_bus_voltages", sc.output.bus_voltages}};
  json an;
  if (!c.analysis.sweep_device.empty()) an["sweep_device"] = c.analysis.sweep_device;
  an["sweep_grid"] = c.analysis.sweep_grid;
  an["metrics_window_s"] = c.analysis.metrics_window_s;
  if (!c.analysis.metrics_channel.empty()) an["metrics_channel"] = c.analysis.metrics_channel;
  an["metrics_until_sharing"] = c.analysis.metrics_until_sharing;
  an["weighted_frequency"] = c.analysis.weighted_frequency;
  doc["analysis"] = an;
  return doc.dump(2) + "\n";
}

std::filesystem::path bundled_case_dir() { return DROOPE_CASE_DIR; }

std::filesystem::path resolve_case(const std::string& name_or_path) {
  const std::filesystem::path p(name_or_path);
  if (std::filesystem::exists(p)) return p;
  for (const auto& candidate : {bundled_case_dir() / p, bundled_case_dir() / (name_or_path + ".json")}) {
    if (std::filesystem::exists(candidate)) return candidate;
  }
  throw CaseError("case not found: " + name_or_path);
}

std::vector<double> parse_grid(const std::string& spec) {
  double v[3];
  std::size_t pos = 0;
  for (int k = 0; k < 3; ++k) {
    const std::size_t end = k < 2 ? spec.find(':', pos) : spec.size();
    if (end == std::string::npos) throw DomainError("grid must look like start:step:stop");
    const char* b = spec.data() + pos;
    const char* e = spec.data() + end;
    if (b != e && *b == '+') ++b;
    const auto res = std::from_chars(b, e, v[k]);
    if (res.ec != std::errc() || res.ptr != e) throw DomainError("bad number in grid '" + spec + "'");
    pos = end + 1;
  }
  const double start = v[0], step = v[1], stop = v[2];
  if (!(step > 0.0) || stop < start) throw DomainError("grid needs step > 0 and stop >= start");
  const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-9));
  std::vector<double> out;
  for (long i = 0; i <= n; ++i) {
    double x = start + static_cast<double>(i) * step;
    // Snap to the printed precision of the step so that 0.05-grids hit 0.4 exactly.
    x = std::round(x * 1e12) / 1e12;
    out.push_back(x);
  }
  return out;
}

// --- case runs -------------------------------------------------------------

double first_event_time(const Scenario& scenario) {
  double t = scenario.t_end;
  for (const Event& e : scenario.events) t = std::min(t, e.time_s);
  return t;
}

void add_weighted_frequency(TimeSeries& ts, const Scenario& scenario) {
  std::vector<std::vector<double>> f, online;
  std::vector<double> ratings;
  for (const DeviceSpec& d : scenario.devices) {
    double rating = 0.0;
    if (const auto* sg = std::get_if<SgParams>(&d.model)) rating = sg->s_rating;
    if (const auto* gfm = std::get_if<GfmParams>(&d.model)) rating = gfm->s_rating;
    if (rating <= 0.0) continue;
    f.push_back(ts.channel("f_" + d.id + "_hz"));
    ratings.push_back(rating);
    const std::string mask = "online_" + d.id;
    online.push_back(ts.has(mask) ? ts.channel(mask) : std::vector<double>(ts.time.size(), 1.0));
  }
  const auto avg = weighted_frequency(f, ratings, &online);
  ts.add_channel("f_avg_hz");
  ts.channels.back() = avg;
}

CaseRun run_case(const CaseFile& c, IntegratorOptions opts) {
  CaseRun r;
  r.series = run(c.scenario, opts);
  TimeSeries& ts = r.series;
  if (c.analysis.weighted_frequency) add_weighted_frequency(ts, c.scenario);

  if (!c.analysis.metrics_channel.empty()) {
    r.metrics_channel = c.analysis.metrics_channel;
  } else if (ts.has("f_avg_hz")) {
    r.metrics_channel = "f_avg_hz";
  } else {
    r.metrics_channel = "f_" + c.scenario.devices.front().id + "_hz";
    for (const DeviceSpec& d : c.scenario.devices) {
      if (std::holds_alternative<SgParams>(d.model)) {
        r.metrics_channel = "f_" + d.id + "_hz";
        break;
      }
    }
  }
  if (c.scenario.events.empty()) return r;

  std::optional<double> stop;
  if (c.analysis.metrics_until_sharing) {
    for (const auto& a : ts.activations) stop = stop ? std::min(*stop, a.time_s) : a.time_s;
  }
  r.metrics = frequency_metrics(ts.time, ts.channel(r.metrics_channel), first_event_time(c.scenario),
                                c.analysis.metrics_window_s, stop);
  return r;
}

// --- CSV -------------------------------------------------------------------

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string timeseries_csv(const TimeSeries& ts, const std::vector<std::string>& columns) {
  std::vector<const std::vector<double>*> cols;
  for (const auto& c : columns) cols.push_back(&ts.channel(c));
  std::string out = "time_s";
  for (const auto& c : columns) out += "," + c;
  out += "\n";
  for (std::size_t k = 0; k < ts.time.size(); ++k) {
    out += format_number(ts.time[k]);
    for (const auto* c : cols) {
      out += ',';
      out += format_number((*c)[k]);
    }
    out += '\n';
  }
  return out;
}

std::string modal_csv(const SweepResult& sweep) {
  std::ostringstream os;
  os << "p_set_pu,mode,track,real_per_s,imag_rad_per_s,freq_hz,damping,gfm_participation,"
        "sg_participation,overlap,reference\n";
  for (std::size_t k = 0; k < sweep.reports.size(); ++k) {
    const ModalReport& r = sweep.reports[k];
    std::vector<std::size_t> track_of(r.size(), 0);
    for (std::size_t t = 0; t < sweep.tracks.size(); ++t) track_of[sweep.tracks[t][k]] = t;
    for (std::size_t i = 0; i < r.size(); ++i) {
      const std::size_t t = track_of[i];
      os << format_number(sweep.p_set[k]) << ',' << i << ',' << t << ','
         << format_number(r.eigenvalues[i].real()) << ',' << format_number(r.eigenvalues[i].imag())
         << ',' << format_number(r.freq_hz[i]) << ',' << format_number(r.damping[i]) << ','
         << format_number(r.gfm_participation(i)) << ','
         << format_number(r.sg_electromechanical_participation(i)) << ','
         << format_number(sweep.overlap[t][k]) << ',' << (r.reference[i] ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

std::string modal_table(const SweepResult& sweep) {
  std::ostringstream os;
  os << std::fixed;
  os << "  p_set   max Re(l)   low-freq GFM+SG mode\n";
  for (std::size_t k = 0; k < sweep.reports.size(); ++k) {
    const ModalReport& r = sweep.reports[k];
    os << std::setw(7) << std::setprecision(2) << sweep.p_set[k] << "  " << std::setw(10)
       << std::setprecision(4) << r.max_real_part();
    if (const auto m = gfm_sg_mode(r)) {
      os << "   " << std::setprecision(3) << r.freq_hz[*m] << " Hz, zeta " << r.damping[*m];
    } else {
      os << "   -";
    }
    os << '\n';
  }
  for (const Bifurcation& b : sweep.bifurcations) {
    os << "bifurcation on track " << b.track << " between p_set " << std::setprecision(2)
       << b.p_from << " and " << b.p_to << (b.becomes_complex ? " (real -> complex)" : " (complex -> real)")
       << (b.gfm_participating ? ", GFM participating" : "") << '\n';
  }
  std::size_t weak = 0;
  for (const auto& track : sweep.overlap) {
    for (double ov : track) weak += ov < kTrackingOverlapThreshold ? 1 : 0;
  }
  if (weak) os << weak << " tracking steps below overlap " << kTrackingOverlapThreshold << '\n';
  for (const auto& s : sweep.skipped) os << s << '\n';
  return os.str();
}

std::string metrics_csv(const std::vector<std::pair<std::string, FrequencyMetrics>>& rows) {
  std::string out = "channel,nadir_hz,peak_hz,max_rocof_hz_s,settling_hz,mode_freq_hz,mode_damping\n";
  for (const auto& [name, m] : rows) {
    out += name + "," + format_number(m.nadir_hz) + "," + format_number(m.peak_hz) + "," +
           format_number(m.max_rocof_hz_s) + "," + format_number(m.settling_hz) + ",";
    if (m.dominant) {
      out += format_number(m.dominant->freq_hz) + "," + format_number(m.dominant->damping);
    } else {
      out += ",";
    }
    out += "\n";
  }
  return out;
}

std::string emit_curve_tables(const DroopEParams& params, const std::vector<double>& grid,
                              double p_set) {
  std::string out = "p_pu,d_exp_pu,freq_hz,tangent_droop_pu\n";
  for (double p : grid) {
    out += format_number(p) + "," + format_number(d_exp(p, params)) + "," +
           format_number(droop_e_frequency(p, p_set, 0.0, params) / kTwoPi) + "," +
           format_number(tangent_droop(p, params)) + "\n";
  }
  return out;
}

TimeSeries read_timeseries_csv(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(path.string() + ": empty file");
  std::vector<std::string> header;
  {
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) header.push_back(cell);
  }
  if (header.empty() || header.front() != "time_s") {
    throw Error(path.string() + ": first column must be time_s");
  }
  TimeSeries ts;
  for (std::size_t c = 1; c < header.size(); ++c) ts.add_channel(header[c]);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::size_t pos = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      std::size_t end = line.find(',', pos);
      if (end == std::string::npos) end = line.size();
      double v = 0.0;
      const auto res = std::from_chars(line.data() + pos, line.data() + end, v);
      if (res.ec != std::errc() || res.ptr != line.data() + end) {
        throw Error(path.string() + ":" + std::to_string(row) + ": bad number in column " + header[c]);
      }
      (c == 0 ? ts.time : ts.channels[c - 1]).push_back(v);
      pos = end + 1;
    }
  }
  return ts;
}

// --- manifest --------------------------------------------------------------

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

std::string Manifest::to_json() const {
  json j;
  j["command"] = command;
  j["inputs_sha256"] = inputs_sha256;
  j["tool_version"] = "1.0.0";
  j["defaults_applied"] = defaults_applied;
  json outs = json::array();
  for (const auto& [name, hash] : outputs) outs.push_back({{"file", name}, {"sha256", hash}});
  j["outputs"] = outs;
  j["wall_time_s"] = wall_time_s;
  return j.dump(2) + "\n";
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << bytes;
  if (!out) throw Error("write failed for " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace droope
