#pragma once

// Experiment runner: strict JSON configuration, orchestration of solver,
// observables and verdicts, and persistence of series, reports, kernel
// snapshots and an atomically written manifest.

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gplab/blowup.hpp"
#include "gplab/hierarchy.hpp"
#include "gplab/marginals.hpp"
#include "gplab/nls.hpp"
#include "gplab/observables.hpp"

namespace gplab {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kCodeVersion = "gplab 1.0.0";
inline constexpr const char* kOutRootEnv = "GPLAB_OUT_ROOT";

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitConfig = 2,
  kExitBreakdown = 3,
  kExitVerification = 4,
  kExitIo = 5,
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration

enum class Kind { simulate_nls, simulate_hierarchy, verify_conservation, verify_virial, blowup_experiment };

inline const std::map<std::string, Kind>& kind_names() {
  static const std::map<std::string, Kind> m{{"simulate-nls", Kind::simulate_nls},
                                             {"simulate-hierarchy", Kind::simulate_hierarchy},
                                             {"verify-conservation", Kind::verify_conservation},
                                             {"verify-virial", Kind::verify_virial},
                                             {"blowup-experiment", Kind::blowup_experiment}};
  return m;
}

inline std::string to_string(Kind k) {
  for (const auto& [name, v] : kind_names())
    if (v == k) return name;
  return "unknown";
}

struct InitialData {
  std::string type = "gaussian";  // gaussian | soliton | plane-wave | file
  double amplitude = 1.0, width = 1.0;
  std::array<double, 2> center{0.0, 0.0};
  double scale = 1.0;
  std::array<long long, 2> modes{0, 0};
  std::string path;
  double noise = 0.0;      // seeded complex perturbation under a Gaussian envelope
  bool normalize = false;  // rescale to discrete mass amplitude^2
};

struct HierarchySetup {
  std::size_t K = 2;
  Closure closure = Closure::factorized;
  bool use_symmetry = true;
  double admissibility_tol = 1e-10;
};

struct CheckLimits {
  double energy_rel = 1e-6;
  double mass_rel = 1e-12;
  bool refine = false;
  double refine_lo = 3.5, refine_hi = 4.5;
  double virial_rel = 1e-3;
  double virial_window = 0.8;  // fraction of the breakdown (or final) time
};

struct ExperimentConfig {
  Kind kind = Kind::simulate_nls;
  int d = 1;
  std::size_t n = 256;
  double L = 32.0;
  InitialData initial;
  SimParams sim;
  HierarchySetup hierarchy;
  double cadence = 1e-2;
  std::size_t norm_orders = 2;
  bool record_adaptive_steps = false;
  double xi = 0.5, alpha = 1.0, detection_factor = kDefaultDetectionFactor;
  CheckLimits checks;
  std::string output_name;  // run directory below the output root
  std::uint64_t seed = 0;

  Grid grid() const { return make_grid(d, n, L); }
};

namespace detail {

/// Read access to one JSON object that rejects unknown keys on finish().
class StrictObject {
 public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  double number(const std::string& key, double def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(path(key) + " must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(path(key) + " must be finite");
    return x;
  }

  long long integer(const std::string& key, long long def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(path(key) + " must be an integer");
    return v.get<long long>();
  }

  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(path(key) + " must be true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(path(key) + " must be a string");
    return v.get<std::string>();
  }

  template <class T, std::size_t N>
  std::array<T, N> array(const std::string& key, std::array<T, N> def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_array() || v.size() < 1 || v.size() > N) throw ConfigError(path(key) + " must be an array of up to " + std::to_string(N) + " numbers");
    std::array<T, N> out{};
    for (std::size_t i = 0; i < v.size(); ++i) {
      if constexpr (std::is_integral_v<T>) {
        if (!v[i].is_number_integer()) throw ConfigError(path(key) + " entries must be integers");
      } else if (!v[i].is_number()) {
        throw ConfigError(path(key) + " entries must be numbers");
      }
      out[i] = v[i].get<T>();
    }
    return out;
  }

  std::optional<StrictObject> object(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return StrictObject(j_.at(key), path(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + path(it.key()) + "'");
  }

 private:
  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline Closure parse_closure(const std::string& s) {
  if (s == "factorized") return Closure::factorized;
  if (s == "zero") return Closure::zero;
  throw ConfigError("hierarchy.closure must be \"factorized\" or \"zero\"");
}

inline std::string closure_name(Closure c) {
  switch (c) {
    case Closure::factorized: return "factorized";
    case Closure::zero: return "zero";
    case Closure::none: return "none";
  }
  return "none";
}

}  // namespace detail

/// Builds the initial wave function; the config must already be validated.
inline WaveFunction initial_state(const ExperimentConfig& c) {
  const Grid g = c.grid();
  const InitialData& in = c.initial;
  WaveFunction phi;
  if (in.type == "gaussian") {
    phi = gaussian(g, in.amplitude, in.width, in.center);
  } else if (in.type == "soliton") {
    phi = soliton(g, in.scale, in.center[0]);
  } else if (in.type == "plane-wave") {
    phi = plane_wave(g, in.modes);
  } else {
    const Marginal m = read_snapshot(in.path);
    const auto* f = std::get_if<FactorizedMarginal>(&m);
    if (!f || f->order() != 1) throw ConfigError("initial snapshot must hold a factorized order-1 state");
    if (!(f->grid() == g)) throw ConfigError("initial snapshot grid does not match the configured grid");
    phi = f->phi();
  }
  if (in.noise > 0.0) {
    std::mt19937_64 rng(c.seed);
    std::normal_distribution<double> nd;
    for (std::size_t i = 0; i < phi.values.size(); ++i) {
      const double env = std::exp(-0.5 * g.x2(i));
      phi.values[i] += in.noise * env * cplx(nd(rng), nd(rng));
    }
  }
  if (in.normalize) {
    const double s = in.amplitude / std::sqrt(mass(phi));
    for (cplx& v : phi.values) v *= s;
  }
  return phi;
}

/// Range checks that need no large allocation.
inline void validate(const ExperimentConfig& c) {
  const Grid g = c.grid();
  c.sim.validate();
  if (!(c.cadence > 0.0)) throw ConfigError("observe.cadence must be positive");
  if (c.norm_orders < 1 || c.norm_orders > kMaxOrder) throw ConfigError("observe.norm_orders out of range");
  if (!(c.xi > 0.0 && c.xi < 1.0)) throw ConfigError("analysis.xi must lie in (0, 1)");
  if (!(c.alpha >= 0.0)) throw ConfigError("analysis.alpha must be >= 0");
  if (!(c.detection_factor > 1.0)) throw ConfigError("analysis.detection_factor must exceed 1");
  const InitialData& in = c.initial;
  static const std::set<std::string> types{"gaussian", "soliton", "plane-wave", "file"};
  if (!types.count(in.type)) throw ConfigError("initial.type must be gaussian, soliton, plane-wave or file");
  if (!(in.amplitude > 0.0)) throw ConfigError("initial.amplitude must be positive");
  if (!(in.width > 0.0)) throw ConfigError("initial.width must be positive");
  if (!(in.noise >= 0.0)) throw ConfigError("initial.noise must be >= 0");
  if (in.type == "soliton" && c.d != 1) throw ConfigError("soliton initial data requires d = 1");
  if (in.type == "file" && !fs::is_regular_file(in.path)) throw ConfigError("initial file not found: " + in.path);
  const bool verify = c.kind == Kind::verify_conservation || c.kind == Kind::verify_virial;
  if (verify && !(c.sim.t_end > 0.0)) throw ConfigError("verification runs need t_end > 0");
  if (c.kind == Kind::verify_virial && !(c.checks.virial_window > 0.0 && c.checks.virial_window <= 1.0))
    throw ConfigError("checks.virial_window must lie in (0, 1]");
  if (!(c.checks.refine_lo > 0.0 && c.checks.refine_hi > c.checks.refine_lo))
    throw ConfigError("checks.refine_lo/refine_hi must satisfy 0 < lo < hi");
  if (c.kind == Kind::simulate_hierarchy) {
    const HierarchySetup& h = c.hierarchy;
    if (h.K < 1 || h.K > 3) throw ConfigError("hierarchy.K must be 1, 2 or 3");
    try {
      dense_entries(g, h.K);
    } catch (const CapacityError& e) {
      throw ConfigError(std::string("hierarchy state too large: ") + e.what());
    }
    if (c.sim.dt > rk4_stable_dt(g, h.K))
      throw ConfigError("nls.dt exceeds the RK4 stability bound " + format_number(rk4_stable_dt(g, h.K)));
    if (c.sim.adapt || c.sim.dealias || !c.sim.nonlinear)
      throw ConfigError("hierarchy runs do not support adapt, dealias or nonlinear = false");
    if (c.norm_orders > h.K) throw ConfigError("observe.norm_orders cannot exceed hierarchy.K");
  }
}

inline ExperimentConfig parse_config(const json& j) {
  detail::StrictObject root(j, "");
  ExperimentConfig c;
  const std::string kind = root.string("kind", "");
  if (!kind_names().count(kind))
    throw ConfigError("kind must be one of simulate-nls, simulate-hierarchy, verify-conservation, verify-virial, blowup-experiment");
  c.kind = kind_names().at(kind);

  if (auto g = root.object("grid")) {
    c.d = static_cast<int>(g->integer("d", c.d));
    const long long n = g->integer("n", static_cast<long long>(c.n));
    if (n < 1) throw ConfigError("grid.n must be positive");
    c.n = static_cast<std::size_t>(n);
    c.L = g->number("L", c.L);
    g->finish();
  }
  if (auto in = root.object("initial")) {
    InitialData& s = c.initial;
    s.type = in->string("type", s.type);
    s.amplitude = in->number("amplitude", s.amplitude);
    s.width = in->number("width", s.width);
    s.center = in->array<double, 2>("center", s.center);
    s.scale = in->number("scale", s.scale);
    s.modes = in->array<long long, 2>("modes", s.modes);
    s.path = in->string("path", s.path);
    s.noise = in->number("noise", s.noise);
    s.normalize = in->boolean("normalize", s.normalize);
    in->finish();
  }
  if (auto s = root.object("nls")) {
    SimParams& p = c.sim;
    p.p = static_cast<int>(s->integer("p", p.p));
    p.mu = static_cast<int>(s->integer("mu", p.mu));
    p.dt = s->number("dt", p.dt);
    p.t_end = s->number("t_end", p.t_end);
    p.nonlinear = s->boolean("nonlinear", p.nonlinear);
    p.dealias = s->boolean("dealias", p.dealias);
    p.adapt = s->boolean("adapt", p.adapt);
    p.adapt_c = s->number("adapt_c", p.adapt_c);
    p.tail_tol = s->number("tail_tol", p.tail_tol);
    p.dt_min = s->number("dt_min", p.dt_min);
    s->finish();
  }
  if (auto h = root.object("hierarchy")) {
    const long long K = h->integer("K", static_cast<long long>(c.hierarchy.K));
    if (K < 1) throw ConfigError("hierarchy.K must be positive");
    c.hierarchy.K = static_cast<std::size_t>(K);
    c.hierarchy.closure = detail::parse_closure(h->string("closure", "factorized"));
    c.hierarchy.use_symmetry = h->boolean("use_symmetry", c.hierarchy.use_symmetry);
    c.hierarchy.admissibility_tol = h->number("admissibility_tol", c.hierarchy.admissibility_tol);
    h->finish();
  }
  if (auto o = root.object("observe")) {
    c.cadence = o->number("cadence", c.cadence);
    const long long k = o->integer("norm_orders", static_cast<long long>(c.norm_orders));
    if (k < 1) throw ConfigError("observe.norm_orders must be positive");
    c.norm_orders = static_cast<std::size_t>(k);
    c.record_adaptive_steps = o->boolean("record_adaptive_steps", c.record_adaptive_steps);
    o->finish();
  }
  if (auto a = root.object("analysis")) {
    c.xi = a->number("xi", c.xi);
    c.alpha = a->number("alpha", c.alpha);
    c.detection_factor = a->number("detection_factor", c.detection_factor);
    a->finish();
  }
  if (auto k = root.object("checks")) {
    CheckLimits& s = c.checks;
    s.energy_rel = k->number("energy_rel", s.energy_rel);
    s.mass_rel = k->number("mass_rel", s.mass_rel);
    s.refine = k->boolean("refine", s.refine);
    s.refine_lo = k->number("refine_lo", s.refine_lo);
    s.refine_hi = k->number("refine_hi", s.refine_hi);
    s.virial_rel = k->number("virial_rel", s.virial_rel);
    s.virial_window = k->number("virial_window", s.virial_window);
    k->finish();
  }
  if (auto o = root.object("output")) {
    c.output_name = o->string("name", "");
    o->finish();
  }
  const long long seed = root.integer("seed", 0);
  if (seed < 0) throw ConfigError("seed must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  root.finish();
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

/// Fully resolved configuration; the output section is left out so that it
/// does not enter the hash.
inline json canonical(const ExperimentConfig& c) {
  json j;
  j["kind"] = to_string(c.kind);
  j["grid"] = {{"d", c.d}, {"n", c.n}, {"L", c.L}};
  const InitialData& in = c.initial;
  j["initial"] = {{"type", in.type}, {"amplitude", in.amplitude}, {"width", in.width},
                  {"center", {in.center[0], in.center[1]}}, {"scale", in.scale},
                  {"modes", {in.modes[0], in.modes[1]}}, {"path", in.path}, {"noise", in.noise},
                  {"normalize", in.normalize}};
  const SimParams& s = c.sim;
  j["nls"] = {{"p", s.p}, {"mu", s.mu}, {"dt", s.dt}, {"t_end", s.t_end}, {"nonlinear", s.nonlinear},
              {"dealias", s.dealias}, {"adapt", s.adapt}, {"adapt_c", s.adapt_c}, {"tail_tol", s.tail_tol},
              {"dt_min", s.dt_min}};
  j["hierarchy"] = {{"K", c.hierarchy.K}, {"closure", detail::closure_name(c.hierarchy.closure)},
                    {"use_symmetry", c.hierarchy.use_symmetry}, {"admissibility_tol", c.hierarchy.admissibility_tol}};
  j["observe"] = {{"cadence", c.cadence}, {"norm_orders", c.norm_orders}, {"record_adaptive_steps", c.record_adaptive_steps}};
  j["analysis"] = {{"xi", c.xi}, {"alpha", c.alpha}, {"detection_factor", c.detection_factor}};
  const CheckLimits& k = c.checks;
  j["checks"] = {{"energy_rel", k.energy_rel}, {"mass_rel", k.mass_rel}, {"refine", k.refine},
                 {"refine_lo", k.refine_lo}, {"refine_hi", k.refine_hi}, {"virial_rel", k.virial_rel},
                 {"virial_window", k.virial_window}};
  j["seed"] = c.seed;
  return j;
}

/// FNV-1a 64.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const ExperimentConfig& c) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(canonical(c).dump());
  return os.str();
}

// ---------------------------------------------------------------------------
// Drivers

struct NlsRun {
  ObservableSeries series;
  Trajectory traj;
  WaveFunction initial, final_state;
};

/// NLS run with an observable row at every emitted sample.
inline NlsRun run_nls(const WaveFunction& phi0, const SimParams& sp, double cadence, const ObserveConfig& oc,
                      bool record_adaptive_steps = false) {
  NlsRun r{ObservableSeries(oc.norm_orders), {}, phi0, phi0};
  std::vector<Observer> obs{[&](const Sample& s, const WaveFunction& phi) {
    ObservableRow row = observe(phi, oc);
    row.t = s.t;
    row.dt_eff = s.dt_eff;
    row.on_cadence = s.on_cadence;
    r.series.push(std::move(row));
    r.final_state = phi;
    return ObserverAction::proceed;
  }};
  ObserveOptions opts;
  opts.cadence = cadence;
  opts.keep_states = false;
  opts.record_adaptive_steps = record_adaptive_steps;
  r.traj = solve(phi0, sp, opts, obs);
  return r;
}

struct HierarchyRun {
  ObservableSeries series;
  HierarchyTrajectory traj;
};

inline HierarchyRun run_hierarchy(const MarginalSequence& gamma0, const HierarchyParams& hp, const ObserveConfig& oc) {
  HierarchyRun r{ObservableSeries(oc.norm_orders), {}};
  r.traj = integrate_truncated(gamma0, hp, [&](double t, const HierarchyState& s) {
    ObservableRow row = observe(s, hp.closure, oc);
    row.t = t;
    row.dt_eff = hp.dt;
    r.series.push(std::move(row));
    return ObserverAction::proceed;
  });
  return r;
}

inline std::string stop_token(StopReason r) {
  switch (r) {
    case StopReason::completed: return "completed";
    case StopReason::observer: return "observer";
    case StopReason::breakdown_nonfinite: return "breakdown-nonfinite";
    case StopReason::breakdown_resolution: return "breakdown-resolution";
    case StopReason::breakdown_step_underflow: return "breakdown-step-underflow";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// JSON output

/// Replaces non-finite numbers by null so no output ever carries NaN.
inline void scrub(json& j) {
  if (j.is_number_float() && !std::isfinite(j.get<double>())) {
    j = nullptr;
  } else if (j.is_structured()) {
    for (auto& v : j) scrub(v);
  }
}

inline json to_json(const ObservableSeries& s) {
  json rows = json::array();
  for (const ObservableRow& r : s.rows()) rows.push_back(s.values(r));
  json j = {{"schema", kSeriesSchema}, {"columns", s.columns()}, {"rows", std::move(rows)}};
  scrub(j);
  return j;
}

inline json to_json(const BlowupVerdict& v) {
  json j;
  j["applicable"] = v.applicable;
  j["verdict"] = !v.applicable ? "inapplicable" : (v.detection ? "blow-up detected" : "no blow-up detected");
  j["input"] = {{"E1_0", v.input.E1_0}, {"V1_0", v.input.V1_0}, {"V1dot_0", v.input.V1dot_0},
                {"p", v.input.p}, {"d", v.input.d}, {"mu", v.input.mu}};
  j["t_star_upper"] = v.t_star_upper ? json(*v.t_star_upper) : json(nullptr);
  j["detection"] = v.detection ? json{{"t", v.detection->t}, {"av", v.detection->av}} : json(nullptr);
  j["t_breakdown"] = v.t_breakdown ? json(*v.t_breakdown) : json(nullptr);
  j["t_star_est"] = v.t_star_est ? json(*v.t_star_est) : json(nullptr);
  if (v.rate) {
    j["rate"] = {{"exponent", v.rate->exponent}, {"margin", v.rate->margin}, {"t", v.rate->t}, {"value", v.rate->value}};
  } else {
    j["rate"] = nullptr;
  }
  j["hardy_min"] = v.hardy_min;
  scrub(j);
  return j;
}

// ---------------------------------------------------------------------------
// Files

/// Writes through a temporary sibling and renames it into place.
inline void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os << content;
    os.flush();
    if (!os) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

inline std::string utc_timestamp(std::chrono::system_clock::time_point tp) {
  const std::time_t t = std::chrono::system_clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// --out beats the environment variable, which beats "runs".
inline fs::path output_root(const std::optional<fs::path>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv(kOutRootEnv); env && *env) return env;
  return "runs";
}

// ---------------------------------------------------------------------------
// run

struct RunOutcome {
  int exit_code = kExitOk;
  fs::path dir;
  std::string stop;
  json report;
};

namespace detail {

inline double rel_drift(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

struct Writer {
  fs::path dir;
  std::vector<std::string> files;

  void text(const std::string& name, const std::string& content) {
    write_atomic(dir / name, content);
    files.push_back(name);
  }
  void json_file(const std::string& name, const json& j) { text(name, j.dump(2) + "\n"); }
  void snapshot(const std::string& name, const Marginal& m) {
    std::ostringstream os(std::ios::binary);
    write_snapshot(os, m);
    text(name, os.str());
  }
  void series(const ObservableSeries& s) {
    std::ostringstream os;
    s.write_csv(os);
    text("series.csv", os.str());
    json_file("series.json", to_json(s));
  }
};

inline ObserveConfig observe_config(const ExperimentConfig& c) {
  ObserveConfig oc;
  oc.p = c.sim.p;
  oc.mu = c.sim.mu;
  oc.norm_orders = c.norm_orders;
  return oc;
}

inline json base_report(const ExperimentConfig& c, const WaveFunction& phi0, const ObservableSeries& s) {
  json r;
  r["kind"] = to_string(c.kind);
  const double e1 = s.empty() ? 0.0 : s[0].E1;
  double weight = 0.0, pw = 1.0;
  for (std::size_t k = 1; k <= c.norm_orders; ++k) {
    pw *= c.xi;
    weight += static_cast<double>(k) * pw;
  }
  const MarginalSequence seq = factorized_sequence(phi0, c.norm_orders, c.sim.p);
  r["initial"] = {{"E1", e1},
                  {"mass", mass(phi0)},
                  {"xi", c.xi},
                  {"En_xi_closed_form", weight * e1},
                  {"alpha", c.alpha},
                  {"alpha_in_regularity_set", regularity_contains(c.d, c.sim.p, c.alpha)},
                  {"Av_H_alpha", av_h_alpha(seq, c.alpha).value},
                  {"script_H_alpha_xi", script_h_norm(seq, c.xi, c.alpha)},
                  {"boundary_mass", boundary_mass(phi0)}};
  r["samples"] = s.size();
  return r;
}

inline json drift_report(const ObservableSeries& s) {
  const ObservableRow& a = s[0];
  const ObservableRow& b = s.back();
  return {{"t_final", b.t}, {"E1_rel_drift", rel_drift(b.E1, a.E1)}, {"mass_rel_drift", rel_drift(b.mass, a.mass)}};
}

inline SimParams halved(SimParams sp) {
  sp.dt *= 0.5;
  return sp;
}

}  // namespace detail

/// Executes one experiment and writes its outputs below root. Configuration
/// errors surface as exceptions before anything is written.
inline RunOutcome run_experiment(const ExperimentConfig& c, const fs::path& root) {
  const auto started = std::chrono::system_clock::now();
  const std::string hash = config_hash(c);
  const WaveFunction phi0 = initial_state(c);
  require_box_adequate(phi0);

  RunOutcome out;
  out.dir = root / (c.output_name.empty() ? to_string(c.kind) + "-" + hash.substr(0, 8) : c.output_name);
  std::error_code ec;
  fs::create_directories(out.dir, ec);
  if (ec || !fs::is_directory(out.dir)) throw IoError("cannot create output directory " + out.dir.string());
  detail::Writer w{out.dir, {}};
  w.json_file("config.json", canonical(c));

  const ObserveConfig oc = detail::observe_config(c);
  json& rep = out.report;

  if (c.kind == Kind::simulate_hierarchy) {
    HierarchyParams hp;
    hp.p = c.sim.p;
    hp.mu = c.sim.mu;
    hp.dt = c.sim.dt;
    hp.t_end = c.sim.t_end;
    hp.cadence = c.cadence;
    hp.closure = c.hierarchy.closure;
    hp.use_symmetry = c.hierarchy.use_symmetry;
    hp.admissibility_tol = c.hierarchy.admissibility_tol;
    const HierarchyRun run = run_hierarchy(factorized_sequence(phi0, c.hierarchy.K, c.sim.p), hp, oc);
    w.series(run.series);
    rep = detail::base_report(c, phi0, run.series);
    rep["drift"] = detail::drift_report(run.series);
    json per_k = json::array();
    for (const DenseKernel& gk : run.traj.final_state)
      per_k.push_back({{"order", gk.order()},
                       {"trace", trace(gk).real()},
                       {"hermiticity_defect", hermiticity_defect(gk)},
                       {"symmetry_defect", symmetry_defect(gk)}});
    rep["final_kernels"] = per_k;
    rep["min_eigenvalue_gamma1"] = min_eigenvalue(run.traj.final_state[0]);
    if (run.traj.final_state.size() >= 2)
      rep["admissibility_deviation"] = check_admissible(to_sequence(run.traj.final_state, c.sim.p), 0.0).deviation;
    for (const DenseKernel& gk : run.traj.final_state)
      w.snapshot("gamma" + std::to_string(gk.order()) + ".kernel", gk);
    out.stop = stop_token(run.traj.reason);
    if (is_breakdown(run.traj.reason)) out.exit_code = kExitBreakdown;
  } else {
    const NlsRun run = run_nls(phi0, c.sim, c.cadence, oc, c.record_adaptive_steps);
    const bool broke = is_breakdown(run.traj.reason);
    out.stop = stop_token(run.traj.reason);
    w.series(run.series);
    w.snapshot("final.kernel", FactorizedMarginal(run.final_state, 1));
    rep = detail::base_report(c, phi0, run.series);
    rep["drift"] = detail::drift_report(run.series);
    rep["t_last"] = run.traj.t_last;
    json checks = json::object();
    bool ok = true;

    if (c.kind == Kind::verify_conservation) {
      const double de = rep["drift"]["E1_rel_drift"].get<double>(), dm = rep["drift"]["mass_rel_drift"].get<double>();
      checks["energy"] = {{"value", de}, {"limit", c.checks.energy_rel}, {"pass", de <= c.checks.energy_rel}};
      checks["mass"] = {{"value", dm}, {"limit", c.checks.mass_rel}, {"pass", dm <= c.checks.mass_rel}};
      ok = de <= c.checks.energy_rel && dm <= c.checks.mass_rel && !broke;
      if (c.checks.refine) {
        const NlsRun fine = run_nls(phi0, detail::halved(c.sim), c.cadence, oc);
        const double fe = detail::rel_drift(fine.series.back().E1, fine.series[0].E1);
        const double ratio = de / fe;
        const bool pass = ratio >= c.checks.refine_lo && ratio <= c.checks.refine_hi;
        checks["refinement"] = {{"drift_half_dt", fe}, {"ratio", ratio}, {"lo", c.checks.refine_lo},
                                {"hi", c.checks.refine_hi}, {"pass", pass}};
        ok = ok && pass;
      }
    } else if (c.kind == Kind::verify_virial) {
      const double t_max = c.checks.virial_window * run.traj.t_last;
      const auto vr = virial_residual(run.series, c.sim.mu, c.sim.p, c.d);
      const double sup = sup_residual(vr, t_max);
      const double scale = std::abs(16.0 * run.series[0].E1);
      const double limit = c.checks.virial_rel * scale;
      checks["virial"] = {{"sup_residual", sup}, {"limit", limit}, {"t_max", t_max}, {"pass", sup <= limit}};
      ok = sup <= limit;
      if (c.checks.refine) {
        const NlsRun fine = run_nls(phi0, detail::halved(c.sim), 0.5 * c.cadence, oc);
        const double sup_fine = sup_residual(virial_residual(fine.series, c.sim.mu, c.sim.p, c.d), t_max);
        const double ratio = sup / sup_fine;
        const bool pass = ratio >= c.checks.refine_lo && ratio <= c.checks.refine_hi;
        checks["refinement"] = {{"sup_residual_half_dt", sup_fine}, {"ratio", ratio}, {"lo", c.checks.refine_lo},
                                {"hi", c.checks.refine_hi}, {"pass", pass}};
        ok = ok && pass;
      }
    } else if (c.kind == Kind::blowup_experiment) {
      const std::optional<double> tb = broke ? std::optional<double>(run.traj.t_last) : std::nullopt;
      const BlowupVerdict v = assess_blowup(run.series, c.sim.p, c.d, c.sim.mu, tb, c.sim.dt, c.detection_factor);
      w.json_file("verdict.json", to_json(v));
      rep["verdict"] = to_json(v)["verdict"];
    }
    if (!checks.empty()) {
      rep["checks"] = checks;
      rep["pass"] = ok;
    }
    const bool breakdown_expected = c.kind == Kind::blowup_experiment || c.kind == Kind::verify_virial;
    if (broke && !breakdown_expected) out.exit_code = kExitBreakdown;
    if (!ok && out.exit_code == kExitOk) out.exit_code = kExitVerification;
  }
  rep["stop_reason"] = out.stop;
  scrub(rep);
  w.json_file("report.json", rep);

  const auto finished = std::chrono::system_clock::now();
  json manifest = {{"config_hash", hash},
                   {"code_version", kCodeVersion},
                   {"kind", to_string(c.kind)},
                   {"started", utc_timestamp(started)},
                   {"finished", utc_timestamp(finished)},
                   {"wall_seconds", std::chrono::duration<double>(finished - started).count()},
                   {"threads", threads()},
                   {"stop_reason", out.stop},
                   {"exit_code", out.exit_code},
                   {"files", w.files}};
  scrub(manifest);
  write_atomic(out.dir / "manifest.json", manifest.dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------------------
// report

struct SummaryRow {
  std::string dir, kind, hash, stop, verdict;
  int exit_code = 0;
  std::optional<double> e1_drift, mass_drift, virial, t_detect, t_star_upper, t_breakdown;
};

struct Summary {
  std::vector<SummaryRow> rows;
  std::vector<std::pair<std::string, std::string>> unreadable;  // dir, reason
};

namespace detail {

inline json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("missing " + p.filename().string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw IoError("corrupt " + p.filename().string() + ": " + e.what());
  }
}

inline std::optional<double> opt_number(const json& j, std::initializer_list<const char*> path) {
  const json* cur = &j;
  for (const char* k : path) {
    if (!cur->is_object() || !cur->contains(k)) return std::nullopt;
    cur = &(*cur)[k];
  }
  if (!cur->is_number()) return std::nullopt;
  return cur->get<double>();
}

inline std::string cell(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

}  // namespace detail

inline Summary summarize(const std::vector<fs::path>& dirs) {
  Summary s;
  for (const fs::path& d : dirs) {
    try {
      const json m = detail::read_json(d / "manifest.json");
      const json r = detail::read_json(d / "report.json");
      SummaryRow row;
      row.dir = d.string();
      row.kind = m.at("kind").get<std::string>();
      row.hash = m.at("config_hash").get<std::string>();
      row.stop = m.at("stop_reason").get<std::string>();
      row.exit_code = m.at("exit_code").get<int>();
      row.e1_drift = detail::opt_number(r, {"drift", "E1_rel_drift"});
      row.mass_drift = detail::opt_number(r, {"drift", "mass_rel_drift"});
      row.virial = detail::opt_number(r, {"checks", "virial", "sup_residual"});
      row.verdict = r.contains("verdict") ? r["verdict"].get<std::string>() : "";
      if (fs::exists(d / "verdict.json")) {
        const json v = detail::read_json(d / "verdict.json");
        row.t_detect = detail::opt_number(v, {"detection", "t"});
        row.t_star_upper = detail::opt_number(v, {"t_star_upper"});
        row.t_breakdown = detail::opt_number(v, {"t_breakdown"});
      }
      s.rows.push_back(std::move(row));
    } catch (const std::exception& e) {
      s.unreadable.emplace_back(d.string(), e.what());
    }
  }
  return s;
}

inline std::vector<std::string> summary_columns() {
  return {"dir", "kind", "config_hash", "stop_reason", "exit_code", "E1_rel_drift", "mass_rel_drift",
          "virial_sup_residual", "verdict", "t_detect", "t_star_upper", "t_breakdown"};
}

inline std::vector<std::string> summary_cells(const SummaryRow& r) {
  return {r.dir, r.kind, r.hash, r.stop, std::to_string(r.exit_code), detail::cell(r.e1_drift),
          detail::cell(r.mass_drift), detail::cell(r.virial), r.verdict, detail::cell(r.t_detect),
          detail::cell(r.t_star_upper), detail::cell(r.t_breakdown)};
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

inline std::string summary_csv(const Summary& s) {
  std::ostringstream os;
  os << "# gplab-summary schema=1\n";
  const auto cols = summary_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const SummaryRow& r : s.rows) {
    const auto cells = summary_cells(r);
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << csv_field(cells[i]);
    os << '\n';
  }
  return os.str();
}

/// Fixed-width table for the terminal.
inline std::string summary_table(const Summary& s) {
  const auto cols = summary_columns();
  std::vector<std::vector<std::string>> grid{cols};
  for (const SummaryRow& r : s.rows) grid.push_back(summary_cells(r));
  std::vector<std::size_t> width(cols.size(), 0);
  for (const auto& row : grid)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream os;
  for (const auto& row : grid) {
    for (std::size_t i = 0; i < row.size(); ++i) os << std::left << std::setw(static_cast<int>(width[i]) + 2) << row[i];
    os << '\n';
  }
  for (const auto& [dir, why] : s.unreadable) os << "unreadable: " << dir << " (" << why << ")\n";
  return os.str();
}

/// Long-format plot columns (run, t, E1, V1, Av_H1) from every readable series.
inline std::string plot_csv(const Summary& s) {
  std::ostringstream os;
  os << "# gplab-plot schema=1\nrun,t,E1,V1,Av_H1\n";
  for (const SummaryRow& r : s.rows) {
    std::ifstream is(fs::path(r.dir) / "series.csv");
    std::string line;
    if (!std::getline(is, line) || !std::getline(is, line)) continue;
    std::vector<std::string> header;
    std::stringstream hs(line);
    for (std::string c; std::getline(hs, c, ',');) header.push_back(c);
    auto col = [&](const std::string& name) {
      return static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
    };
    const std::size_t it = col("t"), ie = col("E1"), iv = col("V1"), ia = col("Av_H1");
    while (std::getline(is, line)) {
      std::vector<std::string> f;
      std::stringstream ls(line);
      for (std::string c; std::getline(ls, c, ',');) f.push_back(c);
      if (f.size() != header.size()) continue;
      os << csv_field(r.dir) << ',' << f[it] << ',' << f[ie] << ',' << f[iv] << ',' << f[ia] << '\n';
    }
  }
  return os.str();
}

}  // namespace gplab
