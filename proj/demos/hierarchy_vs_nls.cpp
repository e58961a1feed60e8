// Evolves a factorized cubic state through the truncated hierarchy (K = 2)
// and through the NLS, printing the sup distance between gamma^(1) and
// |phi><phi| for the factorized and zero closures.

#include <cstdio>

#include "gplab/harness.hpp"

using namespace gplab;

int main() {
  const Grid g = make_grid(1, 16, 10.0);
  WaveFunction phi = gaussian(g, 1.0);
  const double s = 1.0 / std::sqrt(mass(phi));
  for (cplx& v : phi.values) v *= s;

  SimParams sp;
  sp.p = 2;
  sp.mu = -1;
  sp.dt = 1e-5;
  sp.t_end = 0.5;
  ObserveOptions opts;
  opts.cadence = 0.1;
  const Trajectory ref = solve(phi, sp, opts);

  std::printf("%6s %14s %14s\n", "t", "factorized", "zero");
  std::vector<std::vector<double>> err(2);
  int c = 0;
  for (Closure closure : {Closure::factorized, Closure::zero}) {
    HierarchyParams hp;
    hp.p = 2;
    hp.mu = -1;
    hp.dt = 1e-3;
    hp.t_end = 0.5;
    hp.cadence = 0.1;
    hp.closure = closure;
    std::size_t i = 0;
    integrate_truncated(factorized_sequence(phi, 2, 2), hp, [&](double, const HierarchyState& st) {
      const DenseKernel exact = densify(factorized(ref.states[i++], 1));
      double e = 0.0;
      for (std::size_t j = 0; j < exact.size(); ++j) e = std::max(e, std::abs(exact.values()[j] - st[0].values()[j]));
      err[c].push_back(e);
      return ObserverAction::proceed;
    });
    ++c;
  }
  for (std::size_t i = 0; i < err[0].size(); ++i)
    std::printf("%6.2f %14.3e %14.3e\n", ref.times[i], err[0][i], err[1][i]);
}
