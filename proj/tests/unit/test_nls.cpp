#include <catch_amalgamated.hpp>

#include "gplab/nls.hpp"
#include "oracles.hpp"

using namespace gplab;
using Catch::Approx;

TEST_CASE("plane wave advances by the exact linear phase", "[nls]") {
  const Grid g = make_grid(1, 64, 10.0);
  const WaveFunction w = plane_wave(g, {3, 0});
  const double u0 = 2 * kPi * 3 / 10.0;
  for (int mu : {1, -1}) {
    SimParams sp;
    sp.mu = mu;
    sp.dt = 1e-2;
    const WaveFunction out = step(w, sp);
    // |phi| = 1 everywhere, so the nonlinear phase is a global rotation by -mu dt.
    const cplx global = std::polar(1.0, -mu * sp.dt);
    for (std::size_t i = 0; i < w.values.size(); ++i)
      CHECK(std::abs(out.values[i] - global * w.values[i] * std::polar(1.0, -u0 * u0 * sp.dt)) < 1e-12);
  }
}

TEST_CASE("step preserves mass", "[nls]") {
  const Grid g = make_grid(1, 128, 24.0);
  const WaveFunction phi = gaussian(g, 2.0);
  SimParams sp;
  sp.p = 4;
  sp.mu = -1;
  sp.dt = 1e-3;
  WaveFunction cur = phi;
  for (int i = 0; i < 20; ++i) cur = step(cur, sp);
  CHECK(std::abs(mass(cur) - mass(phi)) <= 1e-13 * mass(phi));
}

TEST_CASE("soliton profile is stationary", "[nls]") {
  const Grid g = make_grid(1, 512, 40.0);
  const WaveFunction phi0 = soliton(g);
  SimParams sp;
  sp.p = 2;
  sp.mu = -1;
  sp.dt = 1e-3;
  sp.t_end = 1.0;
  ObserveOptions opts;
  opts.cadence = 1.0;
  opts.keep_states = true;
  const Trajectory tr = solve(phi0, sp, opts);
  REQUIRE(tr.reason == StopReason::completed);
  REQUIRE(tr.states.size() == 2);
  double err = 0.0;
  for (std::size_t i = 0; i < g.n; ++i)
    err = std::max(err, std::abs(std::abs(tr.states.back().values[i]) - std::sqrt(2.0) / std::cosh(g.coord(i))));
  CHECK(err <= 1e-4);
}

TEST_CASE("solve with t_end = 0 returns the initial state", "[nls]") {
  const Grid g = make_grid(1, 128, 24.0);
  SimParams sp;
  sp.t_end = 0.0;
  const Trajectory tr = solve(gaussian(g, 1.0), sp, {});
  CHECK(tr.times.size() == 1);
  CHECK(tr.states.size() == 1);
  CHECK(tr.reason == StopReason::completed);
}

TEST_CASE("free flow of a Gaussian matches the closed form", "[nls]") {
  const Grid g = make_grid(1, 256, 48.0);
  const WaveFunction phi0 = gaussian(g, 1.0);
  SimParams sp;
  sp.nonlinear = false;
  sp.dt = 0.05;
  sp.t_end = 1.0;
  ObserveOptions opts;
  opts.cadence = 0.5;
  const Trajectory tr = solve(phi0, sp, opts);
  const oracle::Gaussian ref{1.0, 1.0, 1};
  double err = 0.0;
  for (std::size_t i = 0; i < g.n; ++i)
    err = std::max(err, std::abs(tr.states.back().values[i] - oracle::free_gaussian(ref, g.coord(i), 1.0)));
  CHECK(err < 1e-10);
  CHECK(std::abs(mass(tr.states.back()) - 1.0) < 1e-10);
  CHECK(std::abs(mass(tr.states.back()) - mass(phi0)) <= 1e-13);
}

TEST_CASE("nls_energy on Gaussians", "[nls]") {
  const Grid g = make_grid(1, 256, 32.0);
  const WaveFunction phi = gaussian(g, 1.0);
  const oracle::Gaussian ref{1.0, 1.0, 1};
  CHECK(nls_energy(phi, 2, 1) == Approx(ref.energy(2, 1)).margin(1e-6));
  CHECK(nls_energy(phi, 2, 1) == Approx(0.349736).margin(1e-6));
  CHECK(nls_energy(phi, 2, -1) == Approx(0.150264).margin(1e-6));

  const WaveFunction phi2 = gaussian(g, 2.0);
  // Quadrature oracle for int |phi|^6, independent of the closed form.
  const double l6 = oracle::integrate_line([](double x) {
    const double v = 2.0 * std::pow(oracle::pi, -0.25) * std::exp(-x * x / 2);
    return std::pow(v, 6);
  });
  const double expected = 1.0 - l6 / 6.0;
  CHECK(expected == Approx(-0.9603).margin(1e-4));
  CHECK(nls_energy(phi2, 4, -1) == Approx(expected).margin(1e-10));
}

TEST_CASE("energy drift is second order in dt", "[nls]") {
  const Grid g = make_grid(1, 256, 32.0);
  const WaveFunction phi0 = gaussian(g, 1.0);
  for (int mu : {1, -1}) {
    std::vector<double> drift;
    for (double dt : {2e-3, 1e-3}) {
      SimParams sp;
      sp.mu = mu;
      sp.dt = dt;
      sp.t_end = 1.0;
      ObserveOptions opts;
      opts.cadence = 1.0;
      const Trajectory tr = solve(phi0, sp, opts);
      drift.push_back(std::abs(nls_energy(tr.states.back(), 2, mu) - nls_energy(phi0, 2, mu)));
    }
    const double ratio = drift[0] / drift[1];
    CHECK(ratio >= 3.5);
    CHECK(ratio <= 4.5);
  }
}

TEST_CASE("solve samples on cadence and reports breakdown", "[nls]") {
  const Grid g = make_grid(1, 1024, 32.0);
  SimParams sp;
  sp.p = 4;
  sp.mu = -1;
  sp.dt = 1e-3;
  sp.t_end = 1.0;
  sp.dealias = true;
  sp.adapt = true;
  sp.tail_tol = 1e-6;
  ObserveOptions opts;
  opts.cadence = 1e-2;
  opts.keep_states = false;
  const Trajectory tr = solve(gaussian(g, 2.0), sp, opts);
  CHECK(is_breakdown(tr.reason));
  CHECK(tr.t_last < 0.52);
  for (std::size_t i = 1; i < tr.times.size(); ++i) CHECK(tr.times[i] > tr.times[i - 1]);
}

TEST_CASE("observer can stop a run", "[nls]") {
  const Grid g = make_grid(1, 128, 24.0);
  SimParams sp;
  sp.t_end = 1.0;
  sp.dt = 1e-2;
  std::vector<Observer> obs{[](const Sample& s, const WaveFunction&) {
    return s.t >= 0.3 - 1e-12 ? ObserverAction::stop : ObserverAction::proceed;
  }};
  ObserveOptions opts;
  opts.cadence = 0.1;
  const Trajectory tr = solve(gaussian(g, 1.0), sp, opts, obs);
  CHECK(tr.reason == StopReason::observer);
  CHECK(to_string(tr.reason) == "blow-up detector");
  CHECK(tr.times.back() == Approx(0.3));
}

TEST_CASE("invalid parameters are configuration errors", "[nls]") {
  SimParams sp;
  sp.dt = 0.0;
  CHECK_THROWS_AS(sp.validate(), ConfigError);
  sp.dt = 1e-3;
  sp.p = 3;
  CHECK_THROWS_AS(sp.validate(), ConfigError);
}
