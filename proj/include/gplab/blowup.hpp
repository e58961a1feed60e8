#pragma once

// Finite-time blow-up diagnostics: criticality and regularity predicates,
// the Glassey upper bound on T*, detection by growth of Av_{H^1}, the
// blow-up rate margin and the virial residual.

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "gplab/observables.hpp"

namespace gplab {

/// p_{L^2} = 4/d.
inline double l2_critical(int d) {
  if (d < 1) throw ConfigError("dimension must be >= 1");
  return 4.0 / d;
}

/// p >= 4/d, the critical case included.
inline bool is_supercritical(int p, int d) { return p >= l2_critical(d); }

/// Membership of alpha in the regularity set A(d, p).
inline bool regularity_contains(int d, int p, double alpha) {
  if (d < 1) throw ConfigError("dimension must be >= 1");
  if (p != 2 && p != 4) throw ConfigError("p must be 2 or 4");
  if (d == 1) return alpha > 0.5;
  if (d == 3 && p == 2) return alpha >= 1.0;
  return alpha > 0.5 * d - 1.0 / (2.0 * (p - 1));
}

struct GlasseyInput {
  double E1_0 = 0.0;
  double V1_0 = 0.0;
  double V1dot_0 = 0.0;  // 2 M(0)
  int p = 2, d = 1, mu = 1;

  void validate() const {
    if (!std::isfinite(E1_0) || !std::isfinite(V1_0) || !std::isfinite(V1dot_0))
      throw ConfigError("Glassey input must be finite");
    if (V1_0 < 0.0) throw ConfigError("V1 must be nonnegative");
  }
  /// Focusing, at least L^2-critical and negative energy.
  bool applicable() const { return mu == -1 && is_supercritical(p, d) && E1_0 < 0.0; }
};

/// First positive zero of V1_0 + V1dot_0 t + 8 E1_0 t^2, which bounds T*.
inline std::optional<double> glassey_bound(const GlasseyInput& in) {
  in.validate();
  if (!in.applicable()) return std::nullopt;
  const double a = 8.0 * in.E1_0, b = in.V1dot_0, c = in.V1_0;
  if (c == 0.0 && b <= 0.0) return 0.0;
  const double root = std::sqrt(b * b - 4.0 * a * c);
  // Both forms equal the positive root; pick the one without cancellation.
  return b >= 0.0 ? (b + root) / (-2.0 * a) : 2.0 * c / (root - b);
}

struct Detection {
  double t = 0.0;
  double av = 0.0;
};

inline constexpr double kDefaultDetectionFactor = 10.0;

/// First sample where Av_{H^1} reaches factor times its initial value.
inline std::optional<Detection> detect_blowup(const ObservableSeries& s, double factor = kDefaultDetectionFactor) {
  if (!(factor > 1.0)) throw ConfigError("detection factor must exceed 1");
  if (s.empty()) return std::nullopt;
  const double threshold = factor * s[0].Av_H1;
  for (const ObservableRow& r : s.rows())
    if (r.Av_H1 >= threshold) return Detection{r.t, r.Av_H1};
  return std::nullopt;
}

/// (2 alpha - d + 4/p) / 4.
inline double rate_exponent(double alpha, int p, int d) { return (2.0 * alpha - d + 4.0 / p) / 4.0; }

/// 4/d <= p < 4/(d - 2 alpha), the upper end open when d <= 2 alpha.
inline bool rate_hypothesis_holds(double alpha, int p, int d) {
  if (p < l2_critical(d)) return false;
  const double gap = d - 2.0 * alpha;
  return gap <= 0.0 || p < 4.0 / gap;
}

struct RateMargin {
  bool applicable = false;
  double exponent = 0.0;
  double margin = 0.0;  // minimum over the samples
  std::vector<double> t, value;
};

/// (Av(t))^{1/2} (t* - t)^e over samples t < t*, Av being Av_{H^alpha}.
inline RateMargin rate_margin(std::span<const double> t, std::span<const double> av, double t_star, double alpha,
                              int p, int d) {
  RateMargin r;
  r.exponent = rate_exponent(alpha, p, d);
  if (!rate_hypothesis_holds(alpha, p, d) || t.empty() || !(t_star > t.back())) return r;
  r.applicable = true;
  r.margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = std::sqrt(av[i]) * std::pow(t_star - t[i], r.exponent);
    r.t.push_back(t[i]);
    r.value.push_back(v);
    r.margin = std::min(r.margin, v);
  }
  return r;
}

/// Series form for alpha = 1, over rows [first, size).
inline RateMargin rate_margin(const ObservableSeries& s, double t_star, int p, int d, std::size_t first = 0) {
  std::vector<double> t, av;
  for (std::size_t i = first; i < s.size(); ++i) {
    t.push_back(s[i].t);
    av.push_back(s[i].Av_H1);
  }
  return rate_margin(t, av, t_star, 1.0, p, d);
}

/// First row of the final decade of Av_{H^1} growth: from there on Av stays
/// within a factor 10 of its last value.
inline std::size_t last_decade_start(const ObservableSeries& s) {
  if (s.empty()) return 0;
  const double floor = s.back().Av_H1 / 10.0;
  std::size_t i = s.size();
  while (i > 0 && s[i - 1].Av_H1 >= floor) --i;
  return i;
}

struct VirialSample {
  double t = 0.0;
  double fd2 = 0.0;  // centered second difference of V1
  double rhs = 0.0;  // 16 E1(0) + 4 d mu (p - 4/d)/(p+2) int rho^{p/2+1}
  double residual = 0.0;
};

/// Interior residuals of the virial identity over the on-cadence rows,
/// which must be uniformly spaced.
inline std::vector<VirialSample> virial_residual(const ObservableSeries& s, int mu, int p, int d) {
  std::vector<const ObservableRow*> rows;
  for (const ObservableRow& r : s.rows())
    if (r.on_cadence) rows.push_back(&r);
  if (rows.size() < 3) throw ConfigError("virial residual needs at least 3 samples");
  const double step = rows[1]->t - rows[0]->t;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (std::abs(rows[i]->t - rows[i - 1]->t - step) > 1e-9 * step)
      throw ConfigError("virial residual needs a uniform sampling cadence");
  const double e0 = rows[0]->E1;
  const double coeff = 4.0 * d * mu * (p - l2_critical(d)) / (p + 2.0);
  std::vector<VirialSample> out;
  for (std::size_t i = 1; i + 1 < rows.size(); ++i) {
    VirialSample v;
    v.t = rows[i]->t;
    v.fd2 = (rows[i + 1]->V1 - 2.0 * rows[i]->V1 + rows[i - 1]->V1) / (step * step);
    v.rhs = 16.0 * e0 + coeff * rows[i]->rho_int;
    v.residual = v.fd2 - v.rhs;
    out.push_back(v);
  }
  return out;
}

/// Largest |residual| over samples with t <= t_max.
inline double sup_residual(std::span<const VirialSample> v, double t_max = std::numeric_limits<double>::infinity()) {
  double worst = 0.0;
  for (const VirialSample& s : v)
    if (s.t <= t_max) worst = std::max(worst, std::abs(s.residual));
  return worst;
}

/// min over rows of Tr(-Delta gamma^(1)) V1, positive along blow-up runs.
inline double hardy_product_min(const ObservableSeries& s) {
  double c0 = std::numeric_limits<double>::infinity();
  for (const ObservableRow& r : s.rows()) c0 = std::min(c0, 2.0 * r.E1K * r.V1);
  return c0;
}

struct BlowupVerdict {
  bool applicable = false;
  GlasseyInput input;
  std::optional<double> t_star_upper;
  std::optional<Detection> detection;
  std::optional<double> t_breakdown;
  std::optional<double> t_star_est;
  std::optional<RateMargin> rate;
  double hardy_min = 0.0;
};

inline GlasseyInput glassey_input(const ObservableSeries& s, int p, int d, int mu) {
  if (s.empty()) throw ConfigError("empty series");
  return GlasseyInput{s[0].E1, s[0].V1, 2.0 * s[0].M, p, d, mu};
}

/// Verdict for one run. t_breakdown is the last valid time when the solver
/// stopped on a breakdown; T* is then estimated as t_breakdown + dt.
inline BlowupVerdict assess_blowup(const ObservableSeries& s, int p, int d, int mu, std::optional<double> t_breakdown,
                                   double dt, double factor = kDefaultDetectionFactor) {
  BlowupVerdict v;
  v.input = glassey_input(s, p, d, mu);
  v.applicable = v.input.applicable();
  v.t_star_upper = glassey_bound(v.input);
  v.detection = detect_blowup(s, factor);
  v.t_breakdown = t_breakdown;
  v.hardy_min = hardy_product_min(s);
  if (t_breakdown) {
    v.t_star_est = *t_breakdown + dt;
    RateMargin r = rate_margin(s, *v.t_star_est, p, d, last_decade_start(s));
    if (r.applicable) v.rate = std::move(r);
  }
  return v;
}

}  // namespace gplab
