// Scans the amplitude of a Gaussian under the focusing quintic NLS in d = 1
// and prints E1(0), the Glassey bound, the breakdown time and the detection
// time for each amplitude.

#include <cstdio>

#include "gplab/harness.hpp"

using namespace gplab;

int main() {
  const Grid g = make_grid(1, 4096, 32.0);
  SimParams sp;
  sp.p = 4;
  sp.mu = -1;
  sp.dt = 5e-4;
  sp.t_end = 1.5;
  sp.dealias = true;
  sp.adapt = true;
  sp.tail_tol = 1e-6;
  ObserveConfig oc;
  oc.p = 4;
  oc.mu = -1;
  oc.norm_orders = 1;

  std::printf("%6s %10s %10s %12s %10s\n", "A", "E1(0)", "glassey", "breakdown", "detect");
  for (double A : {1.0, 1.25, 1.5, 1.75, 2.0, 2.5}) {
    const NlsRun r = run_nls(gaussian(g, A), sp, 2e-3, oc);
    const bool broke = is_breakdown(r.traj.reason);
    const BlowupVerdict v =
        assess_blowup(r.series, 4, 1, -1, broke ? std::optional(r.traj.t_last) : std::nullopt, sp.dt);
    auto cell = [](std::optional<double> v) { return v ? format_number(std::round(*v * 1e4) / 1e4) : std::string("-"); };
    std::printf("%6.2f %10.4f %10s %12s %10s\n", A, v.input.E1_0, cell(v.t_star_upper).c_str(),
                cell(v.t_breakdown).c_str(), cell(v.detection ? std::optional(v.detection->t) : std::nullopt).c_str());
  }
}
