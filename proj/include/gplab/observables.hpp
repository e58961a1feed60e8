#pragma once

// Functionals of marginals and wave functions: energies, moments, graded
// Sobolev norms and the Av estimators, plus the per-sample observable rows
// written by the harness.
//
// <grad>^alpha is the multiplier (1 + |u|^2)^{alpha/2}. Position moments use
// box-centered coordinates.

#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gplab/hierarchy.hpp"
#include "gplab/marginals.hpp"
#include "gplab/nls.hpp"
#include "gplab/spectral.hpp"

namespace gplab {

// ---------------------------------------------------------------------------
// Energies

namespace detail {
/// Row of the spectral -d^2/dx^2 matrix along one axis: entry c couples
/// points c apart.
inline std::vector<double> laplacian_row(const Grid& g) {
  std::vector<double> row(g.n, 0.0);
  for (std::size_t c = 0; c < g.n; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < g.n; ++i) {
      const double u = g.wavenumber(i);
      acc += u * u * std::cos(u * static_cast<double>(c) * g.h);
    }
    row[c] = acc / static_cast<double>(g.n);
  }
  return row;
}

inline double weight(const Grid& g, std::size_t k) { return std::pow(g.cell_volume(), static_cast<double>(k)); }
}  // namespace detail

/// Tr(sum_j -Delta_{x_j} gamma^(k)) for a dense kernel: the multiplier
/// sum_j |u_j|^2 on the unprimed slots followed by the diagonal trace.
inline cplx kinetic_trace(const KernelRef& v) {
  const Grid& g = v.grid();
  const std::size_t k = v.order(), N = g.points();
  CVector buf(v.data(), v.data() + dense_entries(g, k));
  cube_fft(g.n, 2 * k * static_cast<std::size_t>(g.d)).filter(buf, [&](std::span<cplx> c, double norm) {
    std::vector<double> u2 = wavenumbers_squared(g);
    for (double& x : u2) x *= norm;
    std::vector<std::vector<double>> per_slot(2 * k, std::vector<double>(N, 0.0));
    for (std::size_t i = 0; i < k; ++i) per_slot[i] = u2;
    scale_by_slot_sum(c, N, per_slot);
  });
  return trace(DenseKernel(g, k, std::move(buf)));
}

inline cplx kinetic_trace(const DenseKernel& v) { return kinetic_trace(v.view()); }

/// Same trace for any lazy view, applying the spectral Laplacian as a
/// circulant matrix in position space.
template <KernelView V>
cplx kinetic_trace(const V& v) {
  const Grid& g = v.grid();
  const std::size_t k = v.order(), N = g.points(), n = g.n;
  const std::vector<double> row = detail::laplacian_row(g);
  std::array<std::size_t, kMaxOrder> X{}, Y{};
  cplx acc = 0.0;
  do {
    for (std::size_t j = 0; j < k; ++j) {
      Y = X;
      const auto a = g.axes(X[j]);
      for (int axis = 0; axis < g.d; ++axis) {
        for (std::size_t y = 0; y < n; ++y) {
          const std::size_t c = (a[axis] + n - y) % n;
          Y[j] = g.d == 1 ? y : (axis == 0 ? y * n + a[1] : a[0] * n + y);
          acc += row[c] * v.at(Y.data(), X.data());
        }
      }
    }
  } while (detail::increment(X.data(), N, k));
  return acc * detail::weight(g, k);
}

/// sum_j Tr(B1_j gamma^(k+p/2)).
template <KernelView V>
cplx interaction_trace(const V& src, int p) {
  const std::size_t k = src.order() - static_cast<std::size_t>(p / 2);
  cplx acc = 0.0;
  for (std::size_t j = 1; j <= k; ++j) acc += trace(contract_B1(src, p, j));
  return acc;
}

inline constexpr double kImaginaryFlag = 1e-11;

struct EnergyParts {
  double kinetic = 0.0;    // (1/2) Tr(sum -Delta gamma^(k))
  double potential = 0.0;  // mu/(p+2) Tr(sum B1 gamma^(k+p/2))
  double total = 0.0;
  double imag = 0.0;       // largest discarded imaginary part
  bool imag_flag = false;  // imag above kImaginaryFlag
};

/// E_k of a sequence providing orders k and k + p/2.
inline EnergyParts energy_k(const MarginalSequence& seq, std::size_t k, int mu, int p) {
  if (p != 2 && p != 4) throw ConfigError("p must be 2 or 4");
  const std::size_t top = k + static_cast<std::size_t>(p / 2);
  if (!seq.has_order(k) || !seq.has_order(top))
    throw ConfigError("E_" + std::to_string(k) + " needs gamma^(" + std::to_string(top) + ")");
  const cplx kin = seq.visit(k, [](const auto& v) { return kinetic_trace(v); });
  const cplx pot = seq.visit(top, [p](const auto& v) { return interaction_trace(v, p); });
  EnergyParts e;
  e.kinetic = 0.5 * kin.real();
  e.potential = mu * pot.real() / (p + 2.0);
  e.total = e.kinetic + e.potential;
  e.imag = std::max(0.5 * std::abs(kin.imag()), std::abs(pot.imag()) / (p + 2.0));
  e.imag_flag = e.imag > kImaginaryFlag;
  return e;
}

struct EnXi {
  double value = 0.0;        // sum_{k<=K} xi^k E_k
  double weight = 0.0;       // sum_{k<=K} k xi^k
  double closed_form = 0.0;  // weight * E_1
};

inline EnXi en_xi(const MarginalSequence& seq, double xi, int mu, int p) {
  if (!(xi > 0.0 && xi < 1.0)) throw ConfigError("xi must lie in (0, 1)");
  EnXi r;
  const double e1 = energy_k(seq, 1, mu, p).total;
  double pw = 1.0;
  for (std::size_t k = 1; k <= seq.depth(); ++k) {
    pw *= xi;
    r.value += pw * (k == 1 ? e1 : energy_k(seq, k, mu, p).total);
    r.weight += static_cast<double>(k) * pw;
  }
  r.closed_form = r.weight * e1;
  return r;
}

struct EnergyReport {
  double E1_kinetic = 0.0, E1_potential = 0.0, E1 = 0.0;
  std::vector<double> Ek;  // Ek[k-1] = E_k
  double xi = 0.0;
  EnXi En_xi;
};

inline EnergyReport energy_report(const MarginalSequence& seq, int mu, int p, double xi) {
  EnergyReport r;
  const EnergyParts e1 = energy_k(seq, 1, mu, p);
  r.E1_kinetic = e1.kinetic;
  r.E1_potential = e1.potential;
  r.E1 = e1.total;
  for (std::size_t k = 1; k <= seq.depth(); ++k) r.Ek.push_back(k == 1 ? e1.total : energy_k(seq, k, mu, p).total);
  r.xi = xi;
  r.En_xi = en_xi(seq, xi, mu, p);
  return r;
}

// ---------------------------------------------------------------------------
// Densities and moments of gamma^(1)

template <KernelView V>
std::vector<double> density(const V& v) {
  if (v.order() != 1) throw ConfigError("density needs an order-1 kernel");
  std::vector<double> rho(v.grid().points());
  for (std::size_t x = 0; x < rho.size(); ++x) rho[x] = v.at(&x, &x).real();
  return rho;
}

inline std::vector<double> density(const WaveFunction& phi) {
  std::vector<double> rho(phi.values.size());
  for (std::size_t i = 0; i < rho.size(); ++i) rho[i] = std::norm(phi.values[i]);
  return rho;
}

/// V_1 = Tr(x^2 gamma^(1)).
inline double variance(const Grid& g, std::span<const double> rho) {
  double acc = 0.0;
  for (std::size_t i = 0; i < rho.size(); ++i) acc += g.x2(i) * rho[i];
  return acc * g.cell_volume();
}

template <KernelView V>
double variance(const V& v) {
  return variance(v.grid(), density(v));
}

inline double variance(const WaveFunction& phi) { return variance(phi.grid, density(phi)); }

/// Momentum density P[axis][x].
using VectorField = std::vector<std::vector<double>>;

/// P = 2 Im(conj(phi) grad phi).
inline VectorField momentum(const WaveFunction& phi) {
  VectorField P(static_cast<std::size_t>(phi.grid.d));
  for (int a = 0; a < phi.grid.d; ++a) {
    const WaveFunction dphi = derivative(phi, a);
    P[a].resize(phi.values.size());
    for (std::size_t i = 0; i < phi.values.size(); ++i) P[a][i] = 2.0 * std::imag(std::conj(phi.values[i]) * dphi.values[i]);
  }
  return P;
}

inline VectorField momentum(const FactorizedMarginal& f) {
  if (f.order() != 1) throw ConfigError("momentum needs an order-1 kernel");
  return momentum(f.phi());
}

/// Frequency-space form: the symbol u - u' on the two slots, then the diagonal.
inline VectorField momentum(const DenseKernel& gamma) {
  if (gamma.order() != 1) throw ConfigError("momentum needs an order-1 kernel");
  const Grid& g = gamma.grid();
  const std::size_t N = g.points();
  VectorField P(static_cast<std::size_t>(g.d));
  for (int a = 0; a < g.d; ++a) {
    CVector buf(gamma.values().begin(), gamma.values().end());
    forward_slots(buf, g, 2);
    std::vector<std::vector<double>> per_slot(2, std::vector<double>(N));
    for (std::size_t m = 0; m < N; ++m) {
      per_slot[0][m] = g.frequency(m)[a];
      per_slot[1][m] = -g.frequency(m)[a];
    }
    scale_by_slot_sum(buf, N, per_slot);
    inverse_slots(buf, g, 2);
    P[a].resize(N);
    for (std::size_t x = 0; x < N; ++x) P[a][x] = buf[x * N + x].real();
  }
  return P;
}

/// Spectral divergence of a vector field.
inline std::vector<double> divergence(const Grid& g, const VectorField& P) {
  std::vector<double> out(g.points(), 0.0);
  for (int a = 0; a < g.d; ++a) {
    Field f(g);
    for (std::size_t i = 0; i < out.size(); ++i) f.values[i] = P[a][i];
    const Field df = derivative(f, a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += df.values[i].real();
  }
  return out;
}

/// M = int x . P.
inline double morawetz(const Grid& g, const VectorField& P) {
  double acc = 0.0;
  for (std::size_t i = 0; i < g.points(); ++i) {
    const auto x = g.position(i);
    for (int a = 0; a < g.d; ++a) acc += x[a] * P[a][i];
  }
  return acc * g.cell_volume();
}

template <class T>
double morawetz(const T& gamma_or_phi) {
  const VectorField P = momentum(gamma_or_phi);
  if constexpr (std::is_same_v<T, WaveFunction>) return morawetz(gamma_or_phi.grid, P);
  else return morawetz(gamma_or_phi.grid(), P);
}

/// int gamma^(m)(x..x; x..x) dx, which is int rho^{m} for factorized states.
template <KernelView V>
double coincidence_integral(const V& v) {
  const Grid& g = v.grid();
  std::array<std::size_t, kMaxOrder> X{};
  cplx acc = 0.0;
  for (std::size_t x = 0; x < g.points(); ++x) {
    std::fill(X.begin(), X.begin() + v.order(), x);
    acc += v.at(X.data(), X.data());
  }
  return acc.real() * g.cell_volume();
}

inline double lebesgue_integral(const WaveFunction& phi, double q) {
  double acc = 0.0;
  for (const cplx& v : phi.values) acc += std::pow(std::abs(v), q);
  return acc * phi.grid.cell_volume();
}

/// Tr(delta(x - x') grad_x . grad_x' A) for an order-1 kernel.
inline cplx trace_mixed_gradient(const DenseKernel& A) {
  if (A.order() != 1) throw ConfigError("needs an order-1 kernel");
  const Grid& g = A.grid();
  const std::size_t N = g.points();
  cplx acc = 0.0;
  for (int a = 0; a < g.d; ++a) {
    CVector buf(A.values().begin(), A.values().end());
    forward_slots(buf, g, 2);
    std::vector<std::vector<double>> per_slot(2, std::vector<double>(N));
    for (std::size_t m = 0; m < N; ++m) per_slot[0][m] = per_slot[1][m] = g.frequency(m)[a];
    // (i u)(i u') = -u u'
    scale_by_slot_product(buf, N, per_slot);
    inverse_slots(buf, g, 2);
    for (std::size_t x = 0; x < N; ++x) acc -= buf[x * N + x];
  }
  return acc * g.cell_volume();
}

/// Tr(delta(x - x') Delta A) with the Laplacian on the unprimed (slot 0) or
/// primed (slot 1) variable.
inline cplx trace_laplacian(const DenseKernel& A, std::size_t slot) {
  if (A.order() != 1 || slot > 1) throw ConfigError("needs an order-1 kernel and slot 0 or 1");
  const Grid& g = A.grid();
  const std::size_t N = g.points();
  CVector buf(A.values().begin(), A.values().end());
  cube_fft(g.n, 2 * static_cast<std::size_t>(g.d)).filter(buf, [&](std::span<cplx> c, double norm) {
    std::vector<std::vector<double>> per_slot(2, std::vector<double>(N, 0.0));
    for (std::size_t m = 0; m < N; ++m) per_slot[slot][m] = -g.u2(m) * norm;
    scale_by_slot_sum(c, N, per_slot);
  });
  cplx acc = 0.0;
  for (std::size_t x = 0; x < N; ++x) acc += buf[x * N + x];
  return acc * g.cell_volume();
}

// ---------------------------------------------------------------------------
// Graded Sobolev norms

/// ||prod <grad>^alpha over all 2k slots gamma^(k)||_{L^2}.
inline double h_alpha_norm(const KernelRef& v, double alpha) {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  const Grid& g = v.grid();
  const std::size_t k = v.order(), N = g.points();
  CVector buf(v.data(), v.data() + dense_entries(g, k));
  forward_slots(buf, g, 2 * k);
  std::vector<double> w(N);
  for (std::size_t m = 0; m < N; ++m) w[m] = std::pow(1.0 + g.u2(m), 0.5 * alpha);
  std::vector<std::vector<double>> per_slot(2 * k, w);
  scale_by_slot_product(buf, N, per_slot);
  double acc = 0.0;
  for (const cplx& c : buf) acc += std::norm(c);
  return std::sqrt(acc * detail::weight(g, 2 * k));
}

inline double h_alpha_norm(const DenseKernel& v, double alpha) { return h_alpha_norm(v.view(), alpha); }

/// Factorized kernels: (||phi||^2_{H^alpha})^k.
inline double h_alpha_norm(const FactorizedMarginal& f, double alpha) {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  return std::pow(sobolev_norm_squared(f.phi(), alpha), static_cast<double>(f.order()));
}

template <KernelView V>
double h_alpha_norm(const V& v, double alpha) {
  return h_alpha_norm(densify(v), alpha);
}

/// ||Gamma||_{H^alpha_xi} = sum_{k<=K} xi^k ||gamma^(k)||_{H^alpha_k}.
inline double script_h_norm(const MarginalSequence& seq, double xi, double alpha) {
  if (!(xi > 0.0)) throw ConfigError("xi must be positive");
  double acc = 0.0, pw = 1.0;
  for (std::size_t k = 1; k <= seq.depth(); ++k) {
    pw *= xi;
    acc += pw * seq.visit(k, [alpha](const auto& v) { return h_alpha_norm(v, alpha); });
  }
  return acc;
}

struct AvEstimate {
  double value = 0.0;  // reported estimate
  double root = 0.0;   // ||gamma^(K)||^{1/K}
  double ratio = 0.0;  // ||gamma^(K)|| / ||gamma^(K-1)||
  bool exact = false;  // factorized source, value is ||phi||^2
};

/// Av_{H^alpha}: reciprocal convergence radius of sum xi^k ||gamma^(k)||.
inline AvEstimate av_h_alpha(const MarginalSequence& seq, double alpha) {
  AvEstimate r;
  if (seq.factorized_source) {
    r.value = r.root = r.ratio = sobolev_norm_squared(*seq.factorized_source, alpha);
    r.exact = true;
    return r;
  }
  const std::size_t K = seq.depth();
  if (K < 2) throw ConfigError("Av estimate of a dense sequence needs K >= 2");
  const double top = seq.visit(K, [alpha](const auto& v) { return h_alpha_norm(v, alpha); });
  const double below = seq.visit(K - 1, [alpha](const auto& v) { return h_alpha_norm(v, alpha); });
  r.root = std::pow(top, 1.0 / static_cast<double>(K));
  r.ratio = top / below;
  r.value = r.root;
  return r;
}

/// Av_{L^r} for factorized states only: ||phi||^2_{L^r}.
inline double av_lr_factorized(const WaveFunction& phi, double r) {
  if (!(r >= 1.0)) throw ConfigError("r must be >= 1");
  return std::pow(lebesgue_integral(phi, r), 2.0 / r);
}

// ---------------------------------------------------------------------------
// Observable rows

inline constexpr int kSeriesSchema = 1;

struct ObservableRow {
  double t = 0.0;
  double E1 = 0.0, E1K = 0.0, E1P = 0.0;
  double V1 = 0.0, mass = 0.0, Av_H1 = 0.0;
  std::vector<double> H1;  // ||gamma^(k)||_{H^1}, k = 1..K
  double M = 0.0, boundary_mass = 0.0;
  double rho_int = 0.0;  // int rho^{p/2+1}
  double B_norm = 0.0;   // ||full_B gamma^(1+p/2)||_{L^2}
  double B_int = 0.0;    // running time integral of B_norm, filled by the series
  double dt_eff = 0.0;
  bool on_cadence = true;
};

/// Rows in strictly increasing time, with a fixed column set for K norms.
class ObservableSeries {
 public:
  explicit ObservableSeries(std::size_t norm_orders = 2) : K_(norm_orders) {}

  std::size_t norm_orders() const { return K_; }
  const std::vector<ObservableRow>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }
  std::size_t size() const { return rows_.size(); }
  const ObservableRow& operator[](std::size_t i) const { return rows_[i]; }
  const ObservableRow& back() const { return rows_.back(); }

  void push(ObservableRow row) {
    if (!rows_.empty() && !(row.t > rows_.back().t)) throw ConfigError("series times must increase strictly");
    if (row.H1.size() != K_) throw ConfigError("row carries the wrong number of norm columns");
    row.B_int = rows_.empty() ? 0.0 : rows_.back().B_int + 0.5 * (row.t - rows_.back().t) * (row.B_norm + rows_.back().B_norm);
    rows_.push_back(std::move(row));
  }

  std::vector<std::string> columns() const {
    std::vector<std::string> c{"t", "E1", "E1K", "E1P", "V1", "mass", "Av_H1"};
    for (std::size_t k = 1; k <= K_; ++k) c.push_back("H1_k" + std::to_string(k));
    for (const char* s : {"M", "boundary_mass", "rho_int", "B_norm", "B_int", "dt_eff", "on_cadence"}) c.emplace_back(s);
    return c;
  }

  std::vector<double> values(const ObservableRow& r) const {
    std::vector<double> v{r.t, r.E1, r.E1K, r.E1P, r.V1, r.mass, r.Av_H1};
    v.insert(v.end(), r.H1.begin(), r.H1.end());
    v.insert(v.end(), {r.M, r.boundary_mass, r.rho_int, r.B_norm, r.B_int, r.dt_eff, r.on_cadence ? 1.0 : 0.0});
    return v;
  }

  /// Schema comment line, header row, then one line per sample.
  void write_csv(std::ostream& os) const {
    os << "# gplab-series schema=" << kSeriesSchema << '\n';
    const auto cols = columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    for (const ObservableRow& r : rows_) {
      const auto v = values(r);
      for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << format_number(v[i]);
      os << '\n';
    }
  }

 private:
  std::size_t K_;
  std::vector<ObservableRow> rows_;
};

struct ObserveConfig {
  int p = 2;
  int mu = 1;
  std::size_t norm_orders = 2;
};

/// ||full_B gamma^(1+p/2)||_{L^2} for a factorized state:
/// 2 (m int rho^{p+1} - (int rho^{p/2+1})^2) under the root.
inline double b_norm(const WaveFunction& phi, int p) {
  const double m = mass(phi);
  const double a = lebesgue_integral(phi, 2.0 * p + 2.0), b = lebesgue_integral(phi, p + 2.0);
  return std::sqrt(std::max(0.0, 2.0 * (m * a - b * b)));
}

/// Row for a factorized state gamma^(k) = |phi><phi|^{(x)k}, time left at 0.
inline ObservableRow observe(const WaveFunction& phi, const ObserveConfig& oc) {
  ObservableRow r;
  const std::vector<double> rho = density(phi);
  const double grad2 = gradient_norm_squared(phi);
  r.rho_int = lebesgue_integral(phi, oc.p + 2.0);
  r.E1K = 0.5 * grad2;
  r.E1P = oc.mu * r.rho_int / (oc.p + 2.0);
  r.E1 = r.E1K + r.E1P;
  r.V1 = variance(phi.grid, rho);
  r.mass = mass(phi);
  r.Av_H1 = r.mass + grad2;
  for (std::size_t k = 1; k <= oc.norm_orders; ++k) r.H1.push_back(std::pow(r.Av_H1, static_cast<double>(k)));
  r.M = morawetz(phi.grid, momentum(phi));
  r.boundary_mass = boundary_mass(rho, phi.grid);
  r.B_norm = b_norm(phi, oc.p);
  return r;
}

/// Row for a dense truncated state. Orders above K come from the closure;
/// the zero closure drops the interaction terms.
inline ObservableRow observe(const HierarchyState& s, Closure closure, const ObserveConfig& oc) {
  ObservableRow r;
  const DenseKernel& g1 = s[0];
  const Grid& g = g1.grid();
  const std::vector<double> rho = density(g1.view());
  r.E1K = 0.5 * kinetic_trace(g1).real();
  with_order(s, closure, 1 + static_cast<std::size_t>(oc.p / 2), [&](const auto& src) {
    r.E1P = oc.mu * interaction_trace(src, oc.p).real() / (oc.p + 2.0);
    r.rho_int = coincidence_integral(src);
    const DenseKernel b = full_B_symmetric(src, oc.p);
    double acc = 0.0;
    for (const cplx& c : b.values()) acc += std::norm(c);
    r.B_norm = std::sqrt(acc * detail::weight(g, 2));
  });
  r.E1 = r.E1K + r.E1P;
  r.V1 = variance(g, rho);
  r.mass = trace(g1).real();
  const MarginalSequence seq = to_sequence(s, oc.p);
  r.Av_H1 = s.size() >= 2 ? av_h_alpha(seq, 1.0).value : h_alpha_norm(g1, 1.0);
  for (std::size_t k = 1; k <= oc.norm_orders; ++k) r.H1.push_back(k <= s.size() ? h_alpha_norm(s[k - 1], 1.0) : 0.0);
  r.M = morawetz(g, momentum(g1));
  r.boundary_mass = boundary_mass(rho, g);
  return r;
}

}  // namespace gplab
