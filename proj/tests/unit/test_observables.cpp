#include <catch_amalgamated.hpp>

#include <sstream>

#include "gplab/observables.hpp"
#include "oracles.hpp"

using namespace gplab;
using Catch::Approx;

namespace {

WaveFunction twisted(const Grid& g, double amp, double k0 = 0.4) {
  WaveFunction phi = gaussian(g, amp);
  for (std::size_t i = 0; i < phi.values.size(); ++i) phi.values[i] *= std::polar(1.0, k0 * g.coord(i));
  return phi;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

// Hides a dense kernel behind the generic view interface.
struct Opaque {
  KernelRef ref;
  std::size_t order() const { return ref.order(); }
  const Grid& grid() const { return ref.grid(); }
  cplx at(const std::size_t* x, const std::size_t* xp) const { return ref.at(x, xp); }
};

}  // namespace

TEST_CASE("E1 of the unit Gaussian", "[observables]") {
  const Grid g = make_grid(1, 256, 32.0);
  const WaveFunction phi = gaussian(g, 1.0);
  const MarginalSequence seq = factorized_sequence(phi, 2, 2);
  const EnergyParts e1 = energy_k(seq, 1, -1, 2);
  CHECK(e1.total == Approx(0.150264).margin(1e-6));
  CHECK(std::abs(e1.total - nls_energy(phi, 2, -1)) < 1e-12);
  CHECK(std::abs(e1.kinetic + e1.potential - e1.total) <= 1e-13);
  CHECK_FALSE(e1.imag_flag);

  WaveFunction zero(make_grid(1, 16, 8.0));
  const EnergyParts ez = energy_k(factorized_sequence(zero, 1, 4), 1, -1, 4);
  CHECK(ez.total == 0.0);
}

TEST_CASE("E_k reduces to k E_1 on factorized sequences", "[observables]") {
  const Grid g = make_grid(1, 32, 12.0);
  WaveFunction phi = twisted(g, 1.0);
  const double s = 1.0 / std::sqrt(mass(phi));
  for (auto& v : phi.values) v *= s;
  for (int p : {2, 4})
    for (int mu : {1, -1}) {
      const MarginalSequence seq = factorized_sequence(phi, 3, p);
      const double e1 = energy_k(seq, 1, mu, p).total;
      for (std::size_t k = 2; k <= 3; ++k) CHECK(rel(energy_k(seq, k, mu, p).total, k * e1) <= 1e-10);
    }
}

TEST_CASE("energy needs the order k + p/2", "[observables]") {
  const Grid g = make_grid(1, 16, 12.0);
  const HierarchyState s = dense_state(factorized_sequence(gaussian(g, 1.0), 2, 2));
  const MarginalSequence dense = to_sequence(s, 2);
  CHECK_NOTHROW(energy_k(dense, 1, 1, 2));
  CHECK_THROWS_AS(energy_k(dense, 2, 1, 2), ConfigError);
  CHECK_THROWS_AS(energy_k(dense, 1, 1, 4), ConfigError);
}

TEST_CASE("dense and lazy kinetic traces agree", "[observables]") {
  const Grid g = make_grid(1, 16, 10.0);
  const WaveFunction phi = twisted(g, 1.3);
  const FactorizedMarginal f2 = factorized(phi, 2);
  const DenseKernel d2 = densify(f2);
  CHECK(std::abs(kinetic_trace(f2) - kinetic_trace(d2)) < 1e-11);
  CHECK(kinetic_trace(factorized(phi, 1)).real() == Approx(gradient_norm_squared(phi)).epsilon(1e-12));

  const DenseKernel h(g, 1, oracle::random_hermitian(16, 3));
  CHECK(std::abs(kinetic_trace(h) - kinetic_trace(Opaque{h.view()})) < 1e-10);
  const DenseKernel h2 = symmetrize(densify(tensor_product(h.view(), factorized(phi, 1))));
  CHECK(std::abs(kinetic_trace(h2) - kinetic_trace(Opaque{h2.view()})) < 1e-10);
}

TEST_CASE("En_xi matches the closed form", "[observables]") {
  const Grid g = make_grid(1, 32, 12.0);
  const MarginalSequence seq = factorized_sequence(gaussian(g, 1.0), 3, 2);
  const double e1 = energy_k(seq, 1, -1, 2).total;
  const EnXi r = en_xi(seq, 0.5, -1, 2);
  CHECK(r.weight == 11.0 / 8.0);
  CHECK(std::abs(r.value - 11.0 / 8.0 * e1) <= 1e-10);
  CHECK(std::abs(r.value / r.weight - e1) <= 1e-12);
  CHECK_THROWS_AS(en_xi(seq, 1.0, -1, 2), ConfigError);
  CHECK_THROWS_AS(en_xi(seq, 0.0, -1, 2), ConfigError);

  WaveFunction zero(g);
  CHECK(en_xi(factorized_sequence(zero, 3, 2), 0.25, 1, 2).value == 0.0);

  const EnergyReport rep = energy_report(seq, -1, 2, 0.25);
  CHECK(rep.Ek.size() == 3);
  CHECK(std::abs(rep.E1 - rep.E1_kinetic - rep.E1_potential) <= 1e-13);
}

TEST_CASE("variance of Gaussians", "[observables]") {
  const Grid g = make_grid(1, 256, 32.0);
  CHECK(variance(gaussian(g, 1.0)) == Approx(0.5).margin(1e-8));
  CHECK(variance(gaussian(g, 2.0)) == Approx(2.0).margin(1e-7));
  const double x0 = 0.375;
  CHECK(variance(gaussian(g, 1.0, 1.0, {x0, 0})) == Approx(0.5 + x0 * x0).margin(1e-8));
  CHECK(variance(factorized(gaussian(g, 1.0), 1)) == Approx(0.5).margin(1e-8));

  const Grid g2 = make_grid(2, 64, 16.0);
  const oracle::Gaussian ref{1.0, 1.0, 2};
  CHECK(variance(gaussian(g2, 1.0)) == Approx(ref.variance()).margin(1e-8));
}

TEST_CASE("momentum density", "[observables]") {
  const Grid g = make_grid(1, 64, 20.0);
  for (const auto& row : momentum(gaussian(g, 1.3)))
    for (double v : row) CHECK(std::abs(v) < 1e-12);

  const WaveFunction pw = plane_wave(g, {3, 0});
  const double u0 = 2 * kPi * 3 / 20.0;
  const VectorField P = momentum(densify(factorized(pw, 1)));
  for (std::size_t i = 0; i < g.n; ++i) CHECK(P[0][i] == Approx(2.0 * u0 * std::norm(pw.values[i])).margin(1e-12));

  // Frequency formula on the dense kernel against the factorized closed form.
  const WaveFunction tw = twisted(g, 1.0, 0.7);
  const VectorField a = momentum(tw), b = momentum(densify(factorized(tw, 1)));
  for (std::size_t i = 0; i < g.n; ++i) CHECK(std::abs(a[0][i] - b[0][i]) < 1e-10);

  const Grid g2 = make_grid(2, 16, 8.0);
  const WaveFunction pw2 = plane_wave(g2, {1, -2});
  const VectorField P2 = momentum(densify(factorized(pw2, 1)));
  for (std::size_t i = 0; i < g2.points(); ++i) {
    CHECK(P2[0][i] == Approx(2.0 * (2 * kPi / 8.0) * std::norm(pw2.values[i])).margin(1e-12));
    CHECK(P2[1][i] == Approx(-2.0 * (4 * kPi / 8.0) * std::norm(pw2.values[i])).margin(1e-12));
  }
}

TEST_CASE("continuity residual shrinks with dt", "[observables]") {
  const Grid g = make_grid(1, 256, 32.0);
  const WaveFunction phi0 = twisted(g, 1.0, 0.5);
  std::vector<double> res;
  for (double dt : {2e-3, 1e-3}) {
    SimParams sp;
    sp.mu = -1;
    sp.dt = dt;
    sp.t_end = 0.1 + dt;
    ObserveOptions opts;
    opts.cadence = dt;
    const Trajectory tr = solve(phi0, sp, opts);
    // Centered difference of rho around t = 0.1.
    const std::size_t i0 = tr.states.size() - 2;
    REQUIRE(tr.times[i0] == Approx(0.1));
    const WaveFunction& mid = tr.states[i0];
    const WaveFunction& after = tr.states[i0 + 1];
    const WaveFunction& before = tr.states[i0 - 1];
    const std::vector<double> div = divergence(g, momentum(mid));
    double worst = 0.0;
    for (std::size_t i = 0; i < g.n; ++i) {
      const double drho = (std::norm(after.values[i]) - std::norm(before.values[i])) / (2 * dt);
      worst = std::max(worst, std::abs(drho + div[i]));
    }
    res.push_back(worst);
  }
  CHECK(res[0] / res[1] >= 3.5);
  CHECK(res[0] / res[1] <= 4.5);
}

TEST_CASE("Morawetz action", "[observables]") {
  const Grid g = make_grid(1, 256, 48.0);
  CHECK(std::abs(morawetz(gaussian(g, 1.0))) < 1e-12);

  // Free flow: M(t) = 8 E^K t.
  const WaveFunction phi0 = gaussian(g, 1.0);
  const double ek = 0.5 * gradient_norm_squared(phi0);
  SimParams sp;
  sp.nonlinear = false;
  sp.dt = 0.05;
  sp.t_end = 1.0;
  ObserveOptions opts;
  opts.cadence = 0.25;
  const Trajectory tr = solve(phi0, sp, opts);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    sxy += tr.times[i] * morawetz(tr.states[i]);
    sxx += tr.times[i] * tr.times[i];
  }
  CHECK(std::abs(sxy / sxx - 8.0 * ek) <= 1e-4);
  CHECK(morawetz(densify(factorized(tr.states.back(), 1))) == Approx(morawetz(tr.states.back())).epsilon(1e-10));
}

TEST_CASE("graded Sobolev norms", "[observables]") {
  const Grid g = make_grid(1, 64, 16.0);
  WaveFunction phi = gaussian(g, 1.0);
  const double s = 1.0 / std::sqrt(mass(phi));
  for (auto& v : phi.values) v *= s;
  for (std::size_t k = 1; k <= 3; ++k) CHECK(h_alpha_norm(factorized(phi, k), 0.0) == Approx(1.0).epsilon(1e-13));

  const Grid gs = make_grid(1, 8, 6.0);
  const WaveFunction tw = twisted(gs, 1.1);
  for (double alpha : {0.0, 0.5, 1.0, 2.0})
    for (std::size_t k = 1; k <= 3; ++k)
      CHECK(rel(h_alpha_norm(densify(factorized(tw, k)), alpha), h_alpha_norm(factorized(tw, k), alpha)) <= 1e-10);

  // Direct summation with the naive transform applied slot by slot.
  const DenseKernel h(gs, 1, oracle::random_hermitian(8, 5));
  std::vector<cplx> rowt(64), both(64);
  for (std::size_t x = 0; x < 8; ++x) {
    const auto r = oracle::naive_dft(std::span<const cplx>(h.values().data() + x * 8, 8), gs);
    for (std::size_t m = 0; m < 8; ++m) rowt[x * 8 + m] = r[m];
  }
  for (std::size_t m2 = 0; m2 < 8; ++m2) {
    std::vector<cplx> col(8);
    for (std::size_t x = 0; x < 8; ++x) col[x] = rowt[x * 8 + m2];
    const auto c = oracle::naive_dft(col, gs);
    for (std::size_t m1 = 0; m1 < 8; ++m1) both[m1 * 8 + m2] = c[m1];
  }
  double acc = 0.0;
  for (std::size_t m1 = 0; m1 < 8; ++m1)
    for (std::size_t m2 = 0; m2 < 8; ++m2) acc += (1 + gs.u2(m1)) * (1 + gs.u2(m2)) * std::norm(both[m1 * 8 + m2]);
  CHECK(h_alpha_norm(h, 1.0) == Approx(std::sqrt(acc) * gs.h).epsilon(1e-12));
  CHECK_THROWS_AS(h_alpha_norm(h, -1.0), ConfigError);
}

TEST_CASE("script H norm of a geometric sequence", "[observables]") {
  const Grid g = make_grid(1, 64, 16.0);
  const WaveFunction phi = gaussian(g, 1.0);
  const double n2 = sobolev_norm_squared(phi, 1.0);
  const double xi = 0.5 / n2;
  const MarginalSequence seq = factorized_sequence(phi, 20, 2);
  CHECK(std::abs(script_h_norm(seq, xi, 1.0) - (1.0 - std::pow(2.0, -20))) <= 1e-12);
}

TEST_CASE("Av estimators", "[observables]") {
  const Grid g = make_grid(1, 256, 32.0);
  const oracle::Gaussian ref{1.0, 1.0, 1};
  const AvEstimate a = av_h_alpha(factorized_sequence(gaussian(g, 1.0), 2, 2), 1.0);
  CHECK(a.exact);
  CHECK(a.value == Approx(ref.h1_squared()).margin(1e-6));
  CHECK(a.value == Approx(1.5).margin(1e-6));

  const Grid gs = make_grid(1, 16, 12.0);
  const WaveFunction tw = twisted(gs, 1.2);
  const HierarchyState s = dense_state(factorized_sequence(tw, 2, 2));
  const AvEstimate d = av_h_alpha(to_sequence(s, 2), 1.0);
  CHECK_FALSE(d.exact);
  CHECK(std::abs(d.root - d.ratio) <= 1e-8 * d.root);
  CHECK(d.root == Approx(sobolev_norm_squared(tw, 1.0)).epsilon(1e-10));

  HierarchyState scaled = s;
  const double c = 1.7;
  scaled[0] *= c;
  scaled[1] *= c * c;
  CHECK(av_h_alpha(to_sequence(scaled, 2), 1.0).value == Approx(c * d.value).epsilon(1e-13));

  HierarchyState one{s[0]};
  CHECK_THROWS_AS(av_h_alpha(to_sequence(one, 2), 1.0), ConfigError);
  CHECK(av_lr_factorized(gaussian(g, 1.0), 2.0) == Approx(1.0).margin(1e-10));
}

TEST_CASE("trace identities for gradients", "[observables]") {
  const Grid g = make_grid(1, 16, 10.0);
  for (unsigned seed : {11u, 12u, 13u}) {
    // Random hermitian kernel without Nyquist content, where the first
    // derivative symbol is not odd.
    CVector raw(256);
    const auto h = oracle::random_hermitian(16, seed);
    std::copy(h.begin(), h.end(), raw.begin());
    forward_slots(raw, g, 2);
    for (std::size_t m = 0; m < 16; ++m) raw[8 * 16 + m] = raw[m * 16 + 8] = 0.0;
    inverse_slots(raw, g, 2);
    const DenseKernel A(g, 1, raw);
    CHECK(hermiticity_defect(A) < 1e-14);
    const cplx mixed = trace_mixed_gradient(A);
    const cplx lx = trace_laplacian(A, 0), lxp = trace_laplacian(A, 1);
    const double scale = std::abs(lx);
    CHECK(std::abs(lx - lxp) <= 1e-11 * scale);
    // The mixed-gradient trace equals minus the Laplacian trace.
    CHECK(std::abs(mixed + lx) <= 1e-11 * scale);
  }
  const Grid gw = make_grid(1, 32, 16.0);
  const WaveFunction phi = twisted(gw, 1.0);
  const DenseKernel f = densify(factorized(phi, 1));
  CHECK(trace_mixed_gradient(f).real() == Approx(gradient_norm_squared(phi)).epsilon(1e-12));
  CHECK(trace_laplacian(f, 0).real() == Approx(-gradient_norm_squared(phi)).epsilon(1e-12));
}

TEST_CASE("interaction norm of factorized states", "[observables]") {
  const Grid g = make_grid(1, 16, 10.0);
  const WaveFunction phi = twisted(g, 1.2);
  for (int p : {2, 4}) {
    const DenseKernel b = full_B(factorized(phi, 1 + p / 2), p);
    double acc = 0.0;
    for (const cplx& c : b.values()) acc += std::norm(c);
    CHECK(b_norm(phi, p) == Approx(std::sqrt(acc) * g.h).epsilon(1e-12));
  }
}

TEST_CASE("wave and dense observation rows agree", "[observables]") {
  const Grid g = make_grid(1, 16, 12.0);
  const WaveFunction phi = twisted(g, 1.0);
  ObserveConfig oc;
  oc.p = 2;
  oc.mu = -1;
  const ObservableRow a = observe(phi, oc);
  const ObservableRow b = observe(dense_state(factorized_sequence(phi, 2, 2)), Closure::none, oc);
  CHECK(b.E1 == Approx(a.E1).epsilon(1e-11));
  CHECK(b.E1K == Approx(a.E1K).epsilon(1e-11));
  CHECK(b.V1 == Approx(a.V1).epsilon(1e-12));
  CHECK(b.mass == Approx(a.mass).epsilon(1e-12));
  CHECK(b.Av_H1 == Approx(a.Av_H1).epsilon(1e-10));
  CHECK(std::abs(b.M - a.M) < 1e-10);
  CHECK(b.rho_int == Approx(a.rho_int).epsilon(1e-12));
  CHECK(b.B_norm == Approx(a.B_norm).epsilon(1e-10));
  for (std::size_t k = 0; k < 2; ++k) CHECK(b.H1[k] == Approx(a.H1[k]).epsilon(1e-10));

  oc.p = 4;
  const ObservableRow c = observe(dense_state(factorized_sequence(phi, 2, 4)), Closure::factorized, oc);
  CHECK(c.E1 == Approx(observe(phi, oc).E1).epsilon(1e-10));
  const ObservableRow z = observe(dense_state(factorized_sequence(phi, 2, 4)), Closure::zero, oc);
  CHECK(z.E1P == 0.0);
}

TEST_CASE("series rows and CSV layout", "[observables]") {
  ObservableSeries s(2);
  ObservableRow r;
  r.H1 = {1.0, 1.0};
  r.B_norm = 2.0;
  s.push(r);
  r.t = 0.5;
  s.push(r);
  CHECK(s.back().B_int == 1.0);
  CHECK_THROWS_AS(s.push(r), ConfigError);
  r.t = 1.0;
  r.H1 = {1.0};
  CHECK_THROWS_AS(s.push(r), ConfigError);

  std::ostringstream os;
  s.write_csv(os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "# gplab-series schema=1");
  std::getline(is, line);
  CHECK(line ==
        "t,E1,E1K,E1P,V1,mass,Av_H1,H1_k1,H1_k2,M,boundary_mass,rho_int,B_norm,B_int,dt_eff,on_cadence");
  std::getline(is, line);
  CHECK(line == "0,0,0,0,0,0,0,1,1,0,0,0,2,0,0,1");
  std::getline(is, line);
  CHECK(line == "0.5,0,0,0,0,0,0,1,1,0,0,0,2,1,0,1");
}
