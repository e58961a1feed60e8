#pragma once

// Contraction operators and the truncated p-GP hierarchy
//
//   i d_t gamma^(k) = sum_j [-Delta_{x_j}, gamma^(k)] + mu B_{k+p/2} gamma^(k+p/2),
//   B = sum_j (B1_j - B2_j),
//
// with the coupling constant fixed to 1.

#include <functional>
#include <type_traits>
#include <optional>
#include <span>
#include <vector>

#include "gplab/marginals.hpp"
#include "gplab/nls.hpp"

namespace gplab {

enum class Pin { unprimed, primed };

/// B1_j (Pin::unprimed) or B2_j (Pin::primed) applied to a view of order
/// k + p/2: the trailing p/2 slot pairs are pinned to x_j (or x'_j). Pure
/// index restriction, no quadrature weight. j counts particles from 1.
template <KernelView V>
class Contraction {
 public:
  Contraction(V src, int p, std::size_t j, Pin pin) : src_(std::move(src)), extra_(static_cast<std::size_t>(p / 2)), j_(j), pin_(pin) {
    if (p != 2 && p != 4) throw ConfigError("p must be 2 or 4");
    if (src_.order() <= extra_) throw ConfigError("contraction needs a kernel of order > p/2");
    if (j < 1 || j > order()) throw ConfigError("contraction index j out of range");
  }

  std::size_t order() const { return src_.order() - extra_; }
  const Grid& grid() const { return src_.grid(); }

  cplx at(const std::size_t* x, const std::size_t* xp) const {
    const std::size_t k = order();
    std::array<std::size_t, kMaxOrder> X, Y;
    for (std::size_t i = 0; i < k; ++i) {
      X[i] = x[i];
      Y[i] = xp[i];
    }
    const std::size_t v = pin_ == Pin::unprimed ? x[j_ - 1] : xp[j_ - 1];
    for (std::size_t i = k; i < k + extra_; ++i) X[i] = Y[i] = v;
    return src_.at(X.data(), Y.data());
  }

 private:
  V src_;
  std::size_t extra_, j_;
  Pin pin_;
};

template <KernelView V>
Contraction<V> contract_B1(V src, int p, std::size_t j) {
  return Contraction<V>(std::move(src), p, j, Pin::unprimed);
}

template <KernelView V>
Contraction<V> contract_B2(V src, int p, std::size_t j) {
  return Contraction<V>(std::move(src), p, j, Pin::primed);
}

/// B1_j or B2_j of Sym(A (x) B) with dense A and B, accumulated term by term
/// as strided gathers. Same values as densify(Contraction(...)), much faster.
inline DenseKernel contract_dense(const SymmetrizedProduct<KernelRef, KernelRef>& src, int p, std::size_t j, Pin pin) {
  const Contraction<const SymmetrizedProduct<KernelRef, KernelRef>&> check(src, p, j, pin);
  const std::size_t K = src.order(), k = check.order(), N = src.grid().points();
  DenseKernel out(src.grid(), k);
  // Output digit carrying full-order slot s (unprimed s < K, primed s >= K).
  const std::size_t pinned = pin == Pin::unprimed ? j - 1 : k + j - 1;
  auto digit = [&](std::size_t s) {
    if (s < K) return s < k ? s : pinned;
    const std::size_t sp = s - K;
    return sp < k ? k + sp : pinned;
  };
  const std::size_t P = src.placements();
  for (std::size_t u = 0; u < P; ++u)
    for (std::size_t v = 0; v < P; ++v) {
      std::array<std::size_t, 2 * kMaxOrder> a{}, b{};
      for (std::size_t s = 0; s < K; ++s) {
        a[digit(s)] += src.left_stride(u, s);
        b[digit(s)] += src.right_stride(u, s);
        a[digit(K + s)] += src.left_stride(v, K + s);
        b[digit(K + s)] += src.right_stride(v, K + s);
      }
      detail::gather_product(out.values().data(), out.size(), N, 2 * k, a.data(), b.data(), src.left().data(),
                             src.right().data(), src.weight());
    }
  return out;
}

/// sum_j (B1_j - B2_j) as a lazy view.
template <KernelView V>
class FullB {
 public:
  FullB(V src, int p) : src_(std::move(src)), p_(p) {
    if (p != 2 && p != 4) throw ConfigError("p must be 2 or 4");
    if (src_.order() <= static_cast<std::size_t>(p / 2)) throw ConfigError("full_B needs a kernel of order > p/2");
  }
  std::size_t order() const { return src_.order() - static_cast<std::size_t>(p_ / 2); }
  const Grid& grid() const { return src_.grid(); }
  cplx at(const std::size_t* x, const std::size_t* xp) const {
    cplx acc = 0.0;
    for (std::size_t j = 1; j <= order(); ++j)
      acc += Contraction<const V&>(src_, p_, j, Pin::unprimed).at(x, xp) -
             Contraction<const V&>(src_, p_, j, Pin::primed).at(x, xp);
    return acc;
  }

 private:
  V src_;
  int p_;
};

/// Dense sum_j (B1_j - B2_j) gamma, evaluated term by term.
template <KernelView V>
DenseKernel full_B(const V& src, int p) {
  return densify(FullB<const V&>(src, p));
}

/// Same result for sources that are hermitian and symmetric under
/// independent permutations of primed and unprimed slots: only B1_1 is
/// evaluated, then B1_j follows by swapping slots 1 and j, and
/// B2_j(x;x') = conj(B1_j(x';x)). The output is exactly hermitian.
template <KernelView V>
DenseKernel full_B_symmetric(const V& src, int p) {
  DenseKernel b1;
  if constexpr (std::is_same_v<std::remove_cvref_t<V>, SymmetrizedProduct<KernelRef, KernelRef>>)
    b1 = contract_dense(src, p, 1, Pin::unprimed);
  else
    b1 = densify(contract_B1<const V&>(src, p, 1));
  const std::size_t k = b1.order(), N = b1.grid().points();
  // Stride tables of b1 with particles 1 and j exchanged on both sides.
  std::vector<std::array<std::size_t, 2 * kMaxOrder>> fwd(k), adj(k);
  std::array<std::size_t, 2 * kMaxOrder> base{};
  std::size_t st = 1;
  for (std::size_t i = 2 * k; i-- > 0;) {
    base[i] = st;
    st *= N;
  }
  for (std::size_t j = 0; j < k; ++j) {
    auto& f = fwd[j];
    f = base;
    std::swap(f[0], f[j]);
    std::swap(f[k], f[k + j]);
    // conj(b1(sigma x'; sigma x)): unprimed digits take the primed strides.
    for (std::size_t i = 0; i < k; ++i) {
      adj[j][i] = f[k + i];
      adj[j][k + i] = f[i];
    }
  }
  const cplx* t = b1.values().data();
  DenseKernel out(b1.grid(), k);
  cplx* dst = out.values().data();
  const std::size_t last = 2 * k - 1;
  parallel_for(out.size() / N, [&](std::size_t r0, std::size_t r1) {
    std::array<std::size_t, 2 * kMaxOrder> idx{};
    detail::decode(r0, N, last, idx.data());
    for (std::size_t r = r0; r < r1; ++r) {
      cplx* row = dst + r * N;
      for (std::size_t j = 0; j < k; ++j) {
        std::size_t o1 = 0, o2 = 0;
        for (std::size_t i = 0; i < last; ++i) {
          o1 += idx[i] * fwd[j][i];
          o2 += idx[i] * adj[j][i];
        }
        const std::size_t d1 = fwd[j][last], d2 = adj[j][last];
        for (std::size_t i = 0; i < N; ++i, o1 += d1, o2 += d2) row[i] += t[o1] - std::conj(t[o2]);
      }
      detail::increment(idx.data(), N, last);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Truncated dynamics

enum class Closure {
  factorized,  // gamma^(K+m) := Sym(gamma^(K) (x) gamma^(1)^{(x)m}), evaluated lazily
  zero,        // B term dropped where gamma^(k+p/2) is missing
  none,        // missing orders are an error
};

/// Dense kernels gamma^(1..K).
using HierarchyState = std::vector<DenseKernel>;

inline HierarchyState dense_state(const MarginalSequence& seq) {
  HierarchyState s;
  for (std::size_t k = 1; k <= seq.depth(); ++k) s.push_back(seq.visit(k, [](const auto& v) { return densify(v); }));
  return s;
}

inline MarginalSequence to_sequence(const HierarchyState& s, int p) {
  MarginalSequence seq;
  seq.p = p;
  for (const DenseKernel& g : s) seq.entries.emplace_back(g);
  return seq;
}

/// Calls fn with a view of gamma^(order), supplying missing orders from the
/// closure. Returns false when the zero closure drops the term.
template <class Fn>
bool with_order(const HierarchyState& s, Closure closure, std::size_t order, Fn&& fn) {
  const std::size_t K = s.size();
  if (order <= K) {
    fn(s[order - 1].view());
    return true;
  }
  switch (closure) {
    case Closure::zero:
      return false;
    case Closure::none:
      throw ConfigError("hierarchy needs gamma^(" + std::to_string(order) + ") but no closure was configured");
    case Closure::factorized:
      break;
  }
  const KernelRef top = s[K - 1].view(), one = s[0].view();
  const std::size_t m = order - K;
  if (m == 1) {
    fn(symmetrized_product(top, one));
  } else if (m == 2) {
    const DenseKernel pair = densify(symmetrized_product(one, one));
    fn(symmetrized_product(top, pair.view()));
  } else {
    throw ConfigError("closure supports at most two extra particles");
  }
  return true;
}

/// d gamma^(k)/dt = -i (sum_j |u_j|^2 - sum_j |u'_j|^2) gamma^(k) - i mu full_B(gamma^(k+p/2)).
inline DenseKernel gp_rhs(const HierarchyState& s, std::size_t k, int mu, int p, Closure closure,
                          bool use_symmetry = true) {
  if (k < 1 || k > s.size()) throw ConfigError("gp_rhs order out of range");
  if (p != 2 && p != 4) throw ConfigError("p must be 2 or 4");
  if (mu != 1 && mu != -1) throw ConfigError("mu must be +1 or -1");
  const Grid& g = s[0].grid();
  DenseKernel out = s[k - 1];
  // The commutator symbol is even in every index, so the unphased transform suffices.
  cube_fft(g.n, 2 * k * static_cast<std::size_t>(g.d)).filter(out.values(), [&](std::span<cplx> c, double norm) {
    std::vector<double> u2 = wavenumbers_squared(g);
    for (double& v : u2) v *= norm;
    std::vector<double> neg(u2.size());
    for (std::size_t i = 0; i < u2.size(); ++i) neg[i] = -u2[i];
    std::vector<std::vector<double>> per_slot(2 * k);
    for (std::size_t i = 0; i < k; ++i) {
      per_slot[i] = u2;
      per_slot[k + i] = neg;
    }
    scale_by_slot_sum(c, g.points(), per_slot);
  });

  const bool coupled = with_order(s, closure, k + static_cast<std::size_t>(p / 2), [&](const auto& src) {
    const DenseKernel b = use_symmetry ? full_B_symmetric(src, p) : full_B(src, p);
    const double m = static_cast<double>(mu);
    auto dst = out.values();
    auto add = b.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = cplx(0.0, -1.0) * (dst[i] + m * add[i]);
  });
  if (!coupled) out *= cplx(0.0, -1.0);
  return out;
}

struct HierarchyParams {
  int p = 2;
  int mu = 1;
  double dt = 1e-3;
  double t_end = 0.0;
  double cadence = 0.0;  // <= 0 means every step
  Closure closure = Closure::factorized;
  bool use_symmetry = true;
  bool keep_states = false;
  double admissibility_tol = 1e-10;

  void validate() const {
    if (p != 2 && p != 4) throw ConfigError("p must be 2 or 4");
    if (mu != 1 && mu != -1) throw ConfigError("mu must be +1 or -1");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be positive");
    if (!(t_end >= 0.0) || !std::isfinite(t_end)) throw ConfigError("t_end must be >= 0");
  }
};

/// Largest stable classical RK4 step for the free part: the commutator has
/// purely imaginary eigenvalues up to K d (pi/h)^2 in modulus and the RK4
/// stability region reaches 2 sqrt(2) on the imaginary axis.
inline double rk4_stable_dt(const Grid& g, std::size_t K) {
  const double lam = static_cast<double>(K) * g.d * g.nyquist() * g.nyquist();
  return 2.0 * std::sqrt(2.0) / lam;
}

using HierarchyObserver = std::function<ObserverAction(double t, const HierarchyState&)>;

struct HierarchyTrajectory {
  std::vector<double> times;
  std::vector<HierarchyState> states;  // empty unless keep_states
  HierarchyState final_state;
  StopReason reason = StopReason::completed;
  double t_last = 0.0;
};

namespace detail {
inline HierarchyState axpy(const HierarchyState& y, double a, const HierarchyState& k) {
  HierarchyState out = y;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto dst = out[i].values();
    auto src = k[i].values();
    for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += a * src[e];
  }
  return out;
}

inline bool finite(const HierarchyState& s) {
  for (const DenseKernel& g : s)
    for (const cplx& v : g.values())
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
  return true;
}
}  // namespace detail

inline HierarchyState hierarchy_rhs(const HierarchyState& s, const HierarchyParams& hp) {
  HierarchyState out;
  out.reserve(s.size());
  for (std::size_t k = 1; k <= s.size(); ++k) out.push_back(gp_rhs(s, k, hp.mu, hp.p, hp.closure, hp.use_symmetry));
  return out;
}

/// Classical RK4 on the coupled kernels, sampled at the cadence.
inline HierarchyTrajectory integrate_truncated(const MarginalSequence& gamma0, const HierarchyParams& hp,
                                               const HierarchyObserver& observer = {}) {
  hp.validate();
  if (gamma0.depth() < 1) throw ConfigError("empty marginal sequence");
  if (gamma0.p != hp.p) throw ConfigError("sequence p does not match hierarchy p");
  const Grid& g = gamma0.grid();
  if (hp.dt > rk4_stable_dt(g, gamma0.depth()))
    throw ConfigError("dt exceeds the RK4 stability bound " + std::to_string(rk4_stable_dt(g, gamma0.depth())));
  if (gamma0.depth() >= 2) {
    const AdmissibilityReport adm = check_admissible(gamma0, hp.admissibility_tol);
    if (!adm.pass)
      throw ConfigError("initial sequence is not admissible: deviation " + std::to_string(adm.deviation));
  }

  HierarchyTrajectory traj;
  HierarchyState y = dense_state(gamma0);
  const double cadence = hp.cadence > 0.0 ? hp.cadence : hp.dt;
  auto emit = [&](double t) {
    traj.times.push_back(t);
    if (hp.keep_states) traj.states.push_back(y);
    return observer && observer(t, y) == ObserverAction::stop;
  };

  double t = 0.0;
  std::size_t sample_index = 0;
  if (emit(0.0)) {
    traj.reason = StopReason::observer;
    traj.final_state = std::move(y);
    return traj;
  }
  const double tiny = 1e-12 * cadence;
  while (t < hp.t_end - tiny) {
    const double next = std::min(hp.t_end, static_cast<double>(sample_index + 1) * cadence);
    const bool lands = hp.dt >= next - t - tiny;
    const double h = lands ? next - t : hp.dt;
    const HierarchyState k1 = hierarchy_rhs(y, hp);
    const HierarchyState k2 = hierarchy_rhs(detail::axpy(y, 0.5 * h, k1), hp);
    const HierarchyState k3 = hierarchy_rhs(detail::axpy(y, 0.5 * h, k2), hp);
    const HierarchyState k4 = hierarchy_rhs(detail::axpy(y, h, k3), hp);
    HierarchyState next_y = y;
    for (std::size_t i = 0; i < y.size(); ++i) {
      auto dst = next_y[i].values();
      auto a = k1[i].values(), b = k2[i].values(), c = k3[i].values(), d = k4[i].values();
      for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += h / 6.0 * (a[e] + 2.0 * b[e] + 2.0 * c[e] + d[e]);
    }
    if (!detail::finite(next_y)) {
      traj.reason = StopReason::breakdown_nonfinite;
      break;
    }
    y = std::move(next_y);
    t = lands ? next : t + h;
    traj.t_last = t;
    if (lands) {
      ++sample_index;
      if (emit(t)) {
        traj.reason = StopReason::observer;
        break;
      }
    }
  }
  traj.final_state = std::move(y);
  return traj;
}

}  // namespace gplab
