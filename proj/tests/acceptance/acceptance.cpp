// Acceptance suite: one PASS/FAIL line per criterion, tolerances fixed below.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include "gplab/harness.hpp"
#include "oracles.hpp"

using namespace gplab;

namespace tol {
constexpr double partial_trace = 1e-12;
constexpr double unit_trace = 1e-10;
constexpr double energy_ratio = 1e-10;
constexpr double en_xi = 1e-12;
constexpr double energy_drift = 1e-6;
constexpr double mass_drift = 1e-12;
constexpr double refine_lo = 3.5, refine_hi = 4.5;
constexpr double virial_rel = 1e-3;
constexpr double virial_window = 0.8;
constexpr double glassey_energy = -0.9603, glassey_energy_tol = 1e-3;
constexpr double glassey_time = 0.510, glassey_time_tol = 1e-3;
constexpr double blowup_deadline = 0.52;
constexpr double detection_factor = 10.0;
constexpr double rate_margin_min = 0.05;
constexpr double rate_drop_factor = 2.0;
constexpr double hierarchy_sup = 1e-6;
constexpr double hermiticity = 1e-10;
constexpr double trace_drift = 1e-8;
constexpr double defocus_growth = 3.0;
}  // namespace tol

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

bool in_window(double ratio) { return ratio >= tol::refine_lo && ratio <= tol::refine_hi; }

WaveFunction unit_gaussian(const Grid& g) { return gaussian(g, 1.0); }

WaveFunction twisted(const Grid& g, double k0) {
  WaveFunction phi = gaussian(g, 1.0);
  for (std::size_t i = 0; i < phi.values.size(); ++i) phi.values[i] *= std::polar(1.0, k0 * g.coord(i));
  return phi;
}

ObserveConfig observe_cfg(int p, int mu) {
  ObserveConfig oc;
  oc.p = p;
  oc.mu = mu;
  oc.norm_orders = 1;
  return oc;
}

SimParams quintic_params(int mu, double dt) {
  SimParams sp;
  sp.p = 4;
  sp.mu = mu;
  sp.dt = dt;
  sp.t_end = 1.0;
  sp.dealias = true;
  sp.adapt = true;
  sp.adapt_c = 0.1;
  sp.tail_tol = 1e-6;
  return sp;
}

// Focusing quintic, A = 2, shared by the virial, Glassey and rate criteria.
struct BlowupRuns {
  NlsRun coarse, fine;
  double dt = 2.5e-4, cadence = 1e-3;
};

const BlowupRuns& blowup_runs() {
  static const BlowupRuns runs = [] {
    BlowupRuns r{NlsRun{ObservableSeries(1), {}, {}, {}}, NlsRun{ObservableSeries(1), {}, {}, {}}};
    const Grid g = make_grid(1, 16384, 32.0);
    const WaveFunction phi0 = gaussian(g, 2.0);
    r.coarse = run_nls(phi0, quintic_params(-1, r.dt), r.cadence, observe_cfg(4, -1), true);
    r.fine = run_nls(phi0, quintic_params(-1, 0.5 * r.dt), 0.5 * r.cadence, observe_cfg(4, -1), true);
    return r;
  }();
  return runs;
}

Outcome admissibility() {
  const Grid g = make_grid(1, 64, 16.0);
  const MarginalSequence seq = factorized_sequence(unit_gaussian(g), 3, 2);
  const AdmissibilityReport adm = check_admissible(seq, tol::partial_trace);
  double worst = 0.0;
  for (std::size_t k = 1; k <= 3; ++k) {
    const cplx t = seq.visit(k, [](const auto& v) { return trace(v); });
    worst = std::max(worst, std::abs(t - 1.0));
  }
  return {adm.pass && worst <= tol::unit_trace,
          "partial-trace deviation " + num(adm.deviation) + " (<= " + num(tol::partial_trace) + "), max |Tr - 1| " +
              num(worst) + " (<= " + num(tol::unit_trace) + ")"};
}

Outcome energy_reduction() {
  const Grid g = make_grid(1, 32, 12.0);
  const WaveFunction phi = unit_gaussian(g);
  double worst_k = 0.0, worst_xi = 0.0;
  for (int p : {2, 4})
    for (int mu : {1, -1}) {
      const MarginalSequence seq = factorized_sequence(phi, 3, p);
      const double e1 = energy_k(seq, 1, mu, p).total;
      for (std::size_t k = 1; k <= 3; ++k)
        worst_k = std::max(worst_k, std::abs(energy_k(seq, k, mu, p).total - k * e1) / std::abs(k * e1));
      for (double xi : {0.25, 0.5}) {
        const EnXi r = en_xi(seq, xi, mu, p);
        worst_xi = std::max(worst_xi, std::abs(r.value / r.weight - e1));
      }
    }
  return {worst_k <= tol::energy_ratio && worst_xi <= tol::en_xi,
          "max |E_k - k E_1|/|k E_1| " + num(worst_k) + " (<= " + num(tol::energy_ratio) + "), max |En_xi/w - E_1| " +
              num(worst_xi) + " (<= " + num(tol::en_xi) + ")"};
}

Outcome conservation() {
  const Grid g = make_grid(1, 256, 32.0);
  bool ok = true;
  std::string detail;
  for (int mu : {1, -1}) {
    double drift[2], mass_drift = 0.0;
    for (int i = 0; i < 2; ++i) {
      SimParams sp;
      sp.p = 2;
      sp.mu = mu;
      sp.dt = i == 0 ? 1e-3 : 5e-4;
      sp.t_end = 1.0;
      const NlsRun r = run_nls(unit_gaussian(g), sp, 0.1, observe_cfg(2, mu));
      drift[i] = std::abs(r.series.back().E1 - r.series[0].E1) / std::abs(r.series[0].E1);
      if (i == 0) mass_drift = std::abs(r.series.back().mass - r.series[0].mass) / r.series[0].mass;
      ok = ok && r.traj.reason == StopReason::completed;
    }
    const double ratio = drift[0] / drift[1];
    ok = ok && drift[0] <= tol::energy_drift && mass_drift <= tol::mass_drift && in_window(ratio);
    detail += std::string(mu > 0 ? "defocusing" : "; focusing") + " E drift " + num(drift[0]) + ", mass drift " +
              num(mass_drift) + ", halving ratio " + num(ratio);
  }
  return {ok, detail + " (E <= " + num(tol::energy_drift) + ", mass <= " + num(tol::mass_drift) + ", ratio in [" +
                  num(tol::refine_lo) + ", " + num(tol::refine_hi) + "])"};
}

Outcome virial() {
  const BlowupRuns& r = blowup_runs();
  if (!is_breakdown(r.coarse.traj.reason)) return {false, "run did not break down"};
  const double t_max = tol::virial_window * r.coarse.traj.t_last;
  const double sup = sup_residual(virial_residual(r.coarse.series, -1, 4, 1), t_max);
  const double sup_fine = sup_residual(virial_residual(r.fine.series, -1, 4, 1), t_max);
  const double limit = tol::virial_rel * std::abs(16.0 * r.coarse.series[0].E1);
  const double ratio = sup / sup_fine;
  return {sup <= limit && in_window(ratio), "sup residual " + num(sup) + " on t <= " + num(t_max) + " (<= " +
                                                num(limit) + "), halving ratio " + num(ratio)};
}

Outcome glassey() {
  const BlowupRuns& r = blowup_runs();
  const BlowupVerdict v = assess_blowup(r.coarse.series, 4, 1, -1, r.coarse.traj.t_last, r.dt, tol::detection_factor);
  const double e0 = v.input.E1_0;
  const double oracle_t = oracle::glassey_root(v.input.V1_0, v.input.V1dot_0, e0);
  const bool broke = is_breakdown(r.coarse.traj.reason) && r.coarse.traj.t_last < tol::blowup_deadline;
  const bool detected = v.detection && v.detection->t < tol::blowup_deadline;
  const bool ok = std::abs(e0 - tol::glassey_energy) <= tol::glassey_energy_tol && v.t_star_upper &&
                  std::abs(*v.t_star_upper - tol::glassey_time) <= tol::glassey_time_tol &&
                  std::abs(*v.t_star_upper - oracle_t) <= 1e-12 && broke && detected;
  return {ok, "E1(0) " + num(e0) + ", bound " + (v.t_star_upper ? num(*v.t_star_upper) : "none") + ", breakdown " +
                  num(r.coarse.traj.t_last) + ", detection " + (v.detection ? num(v.detection->t) : "none") +
                  " (all < " + num(tol::blowup_deadline) + ")"};
}

Outcome rate() {
  const BlowupRuns& r = blowup_runs();
  const BlowupVerdict v = assess_blowup(r.coarse.series, 4, 1, -1, r.coarse.traj.t_last, r.dt, tol::detection_factor);
  if (!v.rate) return {false, "rate margin not applicable"};
  const RateMargin& m = *v.rate;
  // Stability: no later sample falls below half of an earlier one.
  double running_max = 0.0;
  bool stable = true;
  for (double x : m.value) {
    running_max = std::max(running_max, x);
    stable = stable && x * tol::rate_drop_factor >= running_max;
  }
  bool monotone = true;
  for (std::size_t i = 1; i < m.value.size(); ++i) monotone = monotone && m.value[i] >= m.value[i - 1];
  return {m.exponent == 0.5 && m.margin >= tol::rate_margin_min && stable,
          "exponent " + num(m.exponent) + ", " + std::to_string(m.value.size()) + " samples, min margin " +
              num(m.margin) + " (>= " + num(tol::rate_margin_min) + "), " +
              (monotone ? "non-decreasing" : "within factor " + num(tol::rate_drop_factor))};
}

Outcome hierarchy_equivalence() {
  const Grid g = make_grid(1, 32, 12.0);
  WaveFunction phi = unit_gaussian(g);
  const double s = 1.0 / std::sqrt(mass(phi));
  for (cplx& v : phi.values) v *= s;
  HierarchyParams hp;
  hp.p = 2;
  hp.mu = -1;
  hp.dt = 1e-3;
  hp.t_end = 0.1;
  hp.cadence = 0.1;
  const HierarchyTrajectory tr = integrate_truncated(factorized_sequence(phi, 2, 2), hp);

  SimParams sp;
  sp.p = 2;
  sp.mu = -1;
  sp.dt = 1e-5;
  sp.t_end = 0.1;
  ObserveOptions opts;
  opts.cadence = 0.1;
  const Trajectory ref = solve(phi, sp, opts);
  const DenseKernel exact = densify(factorized(ref.states.back(), 1));
  double err = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i)
    err = std::max(err, std::abs(exact.values()[i] - tr.final_state[0].values()[i]));
  double herm = 0.0, drift = 0.0;
  for (const DenseKernel& gk : tr.final_state) {
    herm = std::max(herm, hermiticity_defect(gk));
    drift = std::max(drift, std::abs(trace(gk) - 1.0));
  }
  return {tr.reason == StopReason::completed && err <= tol::hierarchy_sup && herm <= tol::hermiticity &&
              drift <= tol::trace_drift,
          "sup |gamma1 - |phi><phi|| " + num(err) + " (<= " + num(tol::hierarchy_sup) + "), hermiticity " + num(herm) +
              " (<= " + num(tol::hermiticity) + "), trace drift " + num(drift) + " (<= " + num(tol::trace_drift) + ")"};
}

// Largest residuals of the continuity and Morawetz identities on one run.
std::pair<double, double> local_residuals(const WaveFunction& phi0, int mu, double dt) {
  const Grid& g = phi0.grid;
  SimParams sp;
  sp.p = 2;
  sp.mu = mu;
  sp.dt = dt;
  sp.t_end = 0.5;
  ObserveOptions opts;
  opts.cadence = dt;
  const Trajectory tr = solve(phi0, sp, opts);
  const double coeff = mu * 2.0 * g.d * sp.p / (sp.p + 2.0);
  double cont = 0.0, mor = 0.0;
  for (std::size_t s = 1; s + 1 < tr.states.size(); ++s) {
    const WaveFunction& mid = tr.states[s];
    const VectorField P = momentum(mid);
    const std::vector<double> div = divergence(g, P);
    for (std::size_t i = 0; i < g.points(); ++i) {
      const double drho = (std::norm(tr.states[s + 1].values[i]) - std::norm(tr.states[s - 1].values[i])) / (2 * dt);
      cont = std::max(cont, std::abs(drho + div[i]));
    }
    const double dM = (morawetz(tr.states[s + 1]) - morawetz(tr.states[s - 1])) / (2 * dt);
    const double rhs = 4.0 * gradient_norm_squared(mid) + coeff * lebesgue_integral(mid, sp.p + 2.0);
    mor = std::max(mor, std::abs(dM - rhs));
  }
  return {cont, mor};
}

Outcome local_identities() {
  const Grid g = make_grid(1, 256, 32.0);
  bool ok = true;
  std::string detail;
  for (int mu : {1, -1}) {
    const auto [c1, m1] = local_residuals(twisted(g, 0.5), mu, 2e-3);
    const auto [c2, m2] = local_residuals(twisted(g, 0.5), mu, 1e-3);
    ok = ok && in_window(c1 / c2) && in_window(m1 / m2);
    detail += std::string(mu > 0 ? "defocusing" : "; focusing") + " continuity ratio " + num(c1 / c2) + " (" +
              num(c2) + "), Morawetz ratio " + num(m1 / m2) + " (" + num(m2) + ")";
  }
  return {ok, detail};
}

Outcome defocusing_control() {
  const Grid g = make_grid(1, 2048, 32.0);
  const NlsRun r = run_nls(gaussian(g, 2.0), quintic_params(1, 1e-3), 1e-2, observe_cfg(4, 1));
  const auto det = detect_blowup(r.series, tol::detection_factor);
  double growth = 0.0;
  for (const ObservableRow& row : r.series.rows()) growth = std::max(growth, row.Av_H1 / r.series[0].Av_H1);
  const bool ok = r.traj.reason == StopReason::completed && r.traj.t_last >= 1.0 - 1e-12 && !det &&
                  growth <= tol::defocus_growth;
  return {ok, std::string("stop ") + to_string(r.traj.reason) + ", detection " + (det ? num(det->t) : "none") +
                  ", max Av/Av(0) " + num(growth) + " (<= " + num(tol::defocus_growth) + ")"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"admissibility and traces", admissibility},
      {"energy reduction", energy_reduction},
      {"conservation", conservation},
      {"virial identity", virial},
      {"Glassey blow-up", glassey},
      {"rate lower bound", rate},
      {"hierarchy-NLS equivalence", hierarchy_equivalence},
      {"continuity and Morawetz", local_identities},
      {"defocusing control", defocusing_control},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %zu %-26s %s  %s [%.1fs]\n", i + 1, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
