#pragma once

// Strang split-step integration of  i d_t phi = -Delta phi + mu |phi|^p phi.

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gplab/core.hpp"
#include "gplab/spectral.hpp"

namespace gplab {

/// One-particle state of a factorized marginal sequence.
using WaveFunction = Field;

struct SimParams {
  int p = 2;          // 2 cubic, 4 quintic
  int mu = 1;         // +1 defocusing, -1 focusing
  double dt = 1e-3;
  double t_end = 0.0;
  bool nonlinear = true;  // false switches the |phi|^p phase off
  bool dealias = false;   // 2/3-rule filter after every linear substep
  bool adapt = false;     // dt_eff = min(dt, adapt_c / max|phi|^p)
  double adapt_c = 0.1;
  double tail_tol = 0.0;   // spectral tail fraction that counts as lost resolution; 0 disables
  double dt_min = 1e-12;   // adaptive steps below this are a breakdown

  void validate() const {
    if (p != 2 && p != 4) throw ConfigError("p must be 2 or 4");
    if (mu != 1 && mu != -1) throw ConfigError("mu must be +1 or -1");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be positive");
    if (!(t_end >= 0.0) || !std::isfinite(t_end)) throw ConfigError("t_end must be >= 0");
    if (!(adapt_c > 0.0)) throw ConfigError("adapt_c must be positive");
    if (!(tail_tol >= 0.0)) throw ConfigError("tail_tol must be >= 0");
    if (!(dt_min > 0.0)) throw ConfigError("dt_min must be positive");
  }
};

struct StepInfo {
  double dt = 0.0;
  double tail_fraction = 0.0;  // spectral power in the upper half of the retained band
  double max_amplitude = 0.0;
};

inline double max_amplitude(const WaveFunction& phi) {
  double m = 0.0;
  for (const cplx& v : phi.values) m = std::max(m, std::abs(v));
  return m;
}

/// Reusable Strang stepper bound to one grid and parameter set.
class NlsStepper {
 public:
  NlsStepper(const Grid& grid, const SimParams& params) : grid_(grid), params_(params) {
    params_.validate();
    const std::size_t N = grid.points();
    u2_ = wavenumbers_squared(grid);
    keep_.assign(N, 1);
    tail_.assign(N, 0);
    const long long n = static_cast<long long>(grid.n);
    const long long keep_limit = params_.dealias ? n / 3 : n / 2;
    for (std::size_t i = 0; i < N; ++i) {
      const auto a = grid.axes(i);
      long long m = std::llabs(grid.mode(a[0]));
      if (grid.d == 2) m = std::max(m, std::llabs(grid.mode(a[1])));
      if (params_.dealias && m > keep_limit) keep_[i] = 0;
      if (m > keep_limit / 2 && keep_[i]) tail_[i] = 1;
    }
  }

  const SimParams& params() const { return params_; }
  const Grid& grid() const { return grid_; }

  /// Step size the adaptive rule allows for the current state.
  double effective_dt(const WaveFunction& phi) const {
    if (!params_.adapt || !params_.nonlinear) return params_.dt;
    const double m = max_amplitude(phi);
    const double scale = std::pow(m, params_.p);
    return scale > 0.0 ? std::min(params_.dt, params_.adapt_c / scale) : params_.dt;
  }

  /// One Strang step of size dt: half nonlinear phase, exact linear flow, half
  /// nonlinear phase. Throws SolverBreakdown on non-finite output.
  StepInfo advance(WaveFunction& phi, double dt) {
    nonlinear_phase(phi, 0.5 * dt);
    forward_slots(phi.values, grid_, 1);
    if (dt != cached_dt_) {
      propagator_.resize(u2_.size());
      for (std::size_t i = 0; i < u2_.size(); ++i) propagator_[i] = std::polar(1.0, -u2_[i] * dt);
      cached_dt_ = dt;
    }
    double total = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < u2_.size(); ++i) {
      cplx& c = phi.values[i];
      c = keep_[i] ? c * propagator_[i] : cplx{};
      const double pw = std::norm(c);
      total += pw;
      if (tail_[i]) tail += pw;
    }
    inverse_slots(phi.values, grid_, 1);
    nonlinear_phase(phi, 0.5 * dt);
    StepInfo info{dt, total > 0.0 ? tail / total : 0.0, max_amplitude(phi)};
    if (!std::isfinite(info.max_amplitude) || !std::isfinite(total))
      throw SolverBreakdown("non-finite values in wave function", 0.0);
    return info;
  }

 private:
  void nonlinear_phase(WaveFunction& phi, double tau) const {
    if (!params_.nonlinear) return;
    const double coef = -static_cast<double>(params_.mu) * tau;
    for (cplx& v : phi.values) {
      const double a2 = std::norm(v);
      const double ap = params_.p == 2 ? a2 : a2 * a2;
      v *= std::polar(1.0, coef * ap);
    }
  }

  Grid grid_;
  SimParams params_;
  std::vector<double> u2_;
  std::vector<unsigned char> keep_, tail_;
  std::vector<cplx> propagator_;
  double cached_dt_ = std::numeric_limits<double>::quiet_NaN();
};

/// One Strang step of size params.dt.
inline WaveFunction step(const WaveFunction& phi, const SimParams& params) {
  NlsStepper stepper(phi.grid, params);
  WaveFunction out = phi;
  stepper.advance(out, params.dt);
  return out;
}

// ---------------------------------------------------------------------------
// Trajectories

enum class StopReason { completed, observer, breakdown_nonfinite, breakdown_resolution, breakdown_step_underflow };

inline std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::completed: return "completed";
    case StopReason::observer: return "blow-up detector";
    case StopReason::breakdown_nonfinite: return "solver breakdown: non-finite values";
    case StopReason::breakdown_resolution: return "solver breakdown: spectral resolution lost";
    case StopReason::breakdown_step_underflow: return "solver breakdown: step size underflow";
  }
  return "unknown";
}

inline bool is_breakdown(StopReason r) {
  return r == StopReason::breakdown_nonfinite || r == StopReason::breakdown_resolution ||
         r == StopReason::breakdown_step_underflow;
}

struct Sample {
  double t = 0.0;
  bool on_cadence = true;  // false for extra samples taken in the adaptive regime
  double dt_eff = 0.0;
  double tail_fraction = 0.0;
};

enum class ObserverAction { proceed, stop };
using Observer = std::function<ObserverAction(const Sample&, const WaveFunction&)>;

struct ObserveOptions {
  double cadence = 0.0;  // <= 0 means every params.dt
  bool record_adaptive_steps = false;
  bool keep_states = true;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<WaveFunction> states;  // empty unless keep_states
  StopReason reason = StopReason::completed;
  double t_last = 0.0;      // last time with a valid state
  double dt_last = 0.0;     // last step taken
};

/// Integrates phi0 to params.t_end, sampling at the observer cadence.
inline Trajectory solve(const WaveFunction& phi0, const SimParams& params, const ObserveOptions& opts,
                        std::span<const Observer> observers = {}) {
  params.validate();
  require_box_adequate(phi0);
  NlsStepper stepper(phi0.grid, params);
  const double cadence = opts.cadence > 0.0 ? opts.cadence : params.dt;

  Trajectory traj;
  WaveFunction phi = phi0;
  double t = 0.0;
  std::size_t sample_index = 0;

  auto emit = [&](const Sample& s) {
    if (s.on_cadence) {
      traj.times.push_back(s.t);
      if (opts.keep_states) traj.states.push_back(phi);
    }
    bool stop = false;
    for (const Observer& obs : observers)
      if (obs && obs(s, phi) == ObserverAction::stop) stop = true;
    return stop;
  };

  if (emit(Sample{0.0, true, stepper.effective_dt(phi), 0.0})) {
    traj.reason = StopReason::observer;
    return traj;
  }
  const double tiny = 1e-12 * cadence;
  while (t < params.t_end - tiny) {
    const double next = std::min(params.t_end, static_cast<double>(sample_index + 1) * cadence);
    const double dt_eff = stepper.effective_dt(phi);
    if (dt_eff < params.dt_min) {
      traj.reason = StopReason::breakdown_step_underflow;
      break;
    }
    const bool lands = dt_eff >= next - t - tiny;
    const double h = lands ? next - t : dt_eff;
    WaveFunction backup = phi;  // advance mutates in place
    StepInfo info;
    try {
      info = stepper.advance(phi, h);
    } catch (const SolverBreakdown&) {
      traj.reason = StopReason::breakdown_nonfinite;
      phi = std::move(backup);
      break;
    }
    t = lands ? next : t + h;
    if (lands) ++sample_index;
    traj.dt_last = h;
    if (params.tail_tol > 0.0 && info.tail_fraction > params.tail_tol) {
      traj.t_last = t;
      traj.reason = StopReason::breakdown_resolution;
      break;
    }
    traj.t_last = t;
    const bool adaptive_regime = dt_eff < params.dt;
    if (lands || (opts.record_adaptive_steps && adaptive_regime)) {
      if (emit(Sample{t, lands, dt_eff, info.tail_fraction})) {
        traj.reason = StopReason::observer;
        break;
      }
    }
  }
  return traj;
}

/// (1/2) ||grad phi||^2 + mu/(p+2) ||phi||_{p+2}^{p+2}
inline double nls_energy(const WaveFunction& phi, int p, int mu) {
  double pot = 0.0;
  for (const cplx& v : phi.values) pot += std::pow(std::norm(v), 0.5 * (p + 2));
  pot *= phi.grid.cell_volume();
  return 0.5 * gradient_norm_squared(phi) + static_cast<double>(mu) / (p + 2) * pot;
}

// ---------------------------------------------------------------------------
// Initial data

/// A (pi w^2)^{-d/4} exp(-|x-c|^2 / (2 w^2)); mass A^2 on R^d.
inline WaveFunction gaussian(const Grid& g, double amplitude, double width = 1.0, std::array<double, 2> center = {0, 0}) {
  if (!(width > 0.0)) throw ConfigError("gaussian width must be positive");
  WaveFunction phi(g);
  const double norm = amplitude * std::pow(kPi * width * width, -0.25 * g.d);
  for (std::size_t i = 0; i < phi.values.size(); ++i) {
    const auto x = g.position(i);
    const double dx = x[0] - center[0], dy = g.d == 2 ? x[1] - center[1] : 0.0;
    phi.values[i] = norm * std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
  }
  return phi;
}

/// sqrt(2) s sech(s (x - c)): stationary profile of the focusing cubic NLS in d = 1.
inline WaveFunction soliton(const Grid& g, double scale = 1.0, double center = 0.0) {
  if (g.d != 1) throw ConfigError("soliton initial data requires d = 1");
  WaveFunction phi(g);
  for (std::size_t i = 0; i < phi.values.size(); ++i)
    phi.values[i] = std::sqrt(2.0) * scale / std::cosh(scale * (g.coord(i) - center));
  return phi;
}

/// exp(i u0 . x) for the integer mode vector (m0, m1).
inline WaveFunction plane_wave(const Grid& g, std::array<long long, 2> modes) {
  WaveFunction phi(g);
  const double k0 = 2.0 * kPi * static_cast<double>(modes[0]) / g.L;
  const double k1 = 2.0 * kPi * static_cast<double>(modes[1]) / g.L;
  for (std::size_t i = 0; i < phi.values.size(); ++i) {
    const auto x = g.position(i);
    phi.values[i] = std::polar(1.0, k0 * x[0] + (g.d == 2 ? k1 * x[1] : 0.0));
  }
  return phi;
}

}  // namespace gplab
