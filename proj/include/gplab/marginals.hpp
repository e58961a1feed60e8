#pragma once

// k-particle marginal kernels gamma^(k)(x_1..x_k; x'_1..x'_k).
//
// Every representation models KernelView: order(), grid() and
// at(x, xp), where x and xp point to k flat grid-point indices. Dense kernels
// are stored row-major with the unprimed slots first, so slot s of 2k carries
// stride N^{2k-1-s}, N = n^d. Lazy views (factorized states, tensor products,
// contractions) are evaluated point by point and densified only on request,
// under kStorageBound.

#include <Eigen/Eigenvalues>

#include <array>
#include <bit>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gplab/core.hpp"
#include "gplab/nls.hpp"
#include "gplab/spectral.hpp"

namespace gplab {

inline constexpr std::size_t kMaxOrder = 32;

template <class V>
concept KernelView = requires(const V& v, const std::size_t* idx) {
  { v.order() } -> std::convertible_to<std::size_t>;
  { v.grid() } -> std::convertible_to<const Grid&>;
  { v.at(idx, idx) } -> std::convertible_to<cplx>;
};

/// Number of complex entries of a dense order-k kernel; throws past the bound.
inline std::size_t dense_entries(const Grid& g, std::size_t k) {
  std::size_t total = 0;
  try {
    total = checked_pow(g.points(), 2 * k);
  } catch (const CapacityError&) {
    throw CapacityError("dense kernel of order " + std::to_string(k) + " overflows size_t");
  }
  if (total > kStorageBound)
    throw CapacityError("dense kernel of order " + std::to_string(k) + " on n=" + std::to_string(g.n) +
                        ", d=" + std::to_string(g.d) + " needs " + std::to_string(total) +
                        " entries, above the storage bound");
  return total;
}

/// Non-owning view of dense kernel storage.
class KernelRef {
 public:
  KernelRef(const Grid& g, std::size_t k, const cplx* data) : grid_(&g), k_(k), N_(g.points()), data_(data) {}

  std::size_t order() const { return k_; }
  const Grid& grid() const { return *grid_; }
  const cplx* data() const { return data_; }

  cplx at(const std::size_t* x, const std::size_t* xp) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < k_; ++i) off = off * N_ + x[i];
    for (std::size_t i = 0; i < k_; ++i) off = off * N_ + xp[i];
    return data_[off];
  }

 private:
  const Grid* grid_;
  std::size_t k_, N_;
  const cplx* data_;
};

class DenseKernel {
 public:
  DenseKernel() = default;
  DenseKernel(const Grid& g, std::size_t k) : grid_(g), k_(k), values_(dense_entries(g, k)) { check_order(); }
  DenseKernel(const Grid& g, std::size_t k, CVector values) : grid_(g), k_(k), values_(std::move(values)) {
    check_order();
    if (values_.size() != dense_entries(g, k)) throw ConfigError("kernel payload size does not match order");
  }
  DenseKernel(const Grid& g, std::size_t k, std::span<const cplx> values)
      : DenseKernel(g, k, CVector(values.begin(), values.end())) {}

  std::size_t order() const { return k_; }
  const Grid& grid() const { return grid_; }
  std::span<const cplx> values() const { return values_; }
  std::span<cplx> values() { return values_; }
  std::size_t size() const { return values_.size(); }

  KernelRef view() const { return KernelRef(grid_, k_, values_.data()); }
  cplx at(const std::size_t* x, const std::size_t* xp) const { return view().at(x, xp); }

  DenseKernel& operator*=(cplx s) {
    for (cplx& v : values_) v *= s;
    return *this;
  }

 private:
  void check_order() const {
    if (k_ == 0 || k_ > kMaxOrder) throw ConfigError("marginal order out of range");
  }

  Grid grid_{};
  std::size_t k_ = 0;
  CVector values_;
};

/// gamma^(k) = |phi><phi|^{(x) k}, never stored densely.
class FactorizedMarginal {
 public:
  FactorizedMarginal(const WaveFunction& phi, std::size_t k)
      : phi_(std::make_shared<const WaveFunction>(phi)), k_(k) {
    if (k == 0 || k > kMaxOrder) throw ConfigError("marginal order out of range");
  }
  FactorizedMarginal(std::shared_ptr<const WaveFunction> phi, std::size_t k) : phi_(std::move(phi)), k_(k) {
    if (k == 0 || k > kMaxOrder) throw ConfigError("marginal order out of range");
  }

  std::size_t order() const { return k_; }
  const Grid& grid() const { return phi_->grid; }
  const WaveFunction& phi() const { return *phi_; }
  std::shared_ptr<const WaveFunction> shared_phi() const { return phi_; }

  cplx at(const std::size_t* x, const std::size_t* xp) const {
    const cplx* v = phi_->values.data();
    cplx acc = 1.0;
    for (std::size_t i = 0; i < k_; ++i) acc *= v[x[i]] * std::conj(v[xp[i]]);
    return acc;
  }

 private:
  std::shared_ptr<const WaveFunction> phi_;
  std::size_t k_;
};

inline FactorizedMarginal factorized(const WaveFunction& phi, std::size_t k) { return FactorizedMarginal(phi, k); }

inline KernelRef view_of(const DenseKernel& k) { return k.view(); }
inline const KernelRef& view_of(const KernelRef& k) { return k; }
inline const FactorizedMarginal& view_of(const FactorizedMarginal& f) { return f; }

// ---------------------------------------------------------------------------
// Iteration helpers

namespace detail {
/// Decodes a flat index of `digits` base-N digits, most significant first.
inline void decode(std::size_t flat, std::size_t N, std::size_t digits, std::size_t* out) {
  for (std::size_t i = digits; i-- > 0;) {
    out[i] = flat % N;
    flat /= N;
  }
}
/// Odometer increment; returns false on wrap-around.
inline bool increment(std::size_t* idx, std::size_t N, std::size_t digits) {
  for (std::size_t i = digits; i-- > 0;) {
    if (++idx[i] < N) return true;
    idx[i] = 0;
  }
  return false;
}
}  // namespace detail

namespace detail {
/// out[x] += w * A[a . x] * B[b . x] over all entries x of out, where x runs
/// over the base-N digits of the flat index and a, b are stride vectors.
inline void gather_product(cplx* out, std::size_t total, std::size_t N, std::size_t digits, const std::size_t* a,
                           const std::size_t* b, const cplx* A, const cplx* B, double w) {
  const std::size_t rows = total / N;
  const std::size_t da = a[digits - 1], db = b[digits - 1];
  parallel_for(rows, [&](std::size_t r0, std::size_t r1) {
    std::array<std::size_t, 2 * kMaxOrder> idx{};
    decode(r0, N, digits - 1, idx.data());
    for (std::size_t r = r0; r < r1; ++r) {
      std::size_t oa = 0, ob = 0;
      for (std::size_t i = 0; i + 1 < digits; ++i) {
        oa += idx[i] * a[i];
        ob += idx[i] * b[i];
      }
      cplx* row = out + r * N;
      for (std::size_t i = 0; i < N; ++i, oa += da, ob += db) row[i] += w * (A[oa] * B[ob]);
      increment(idx.data(), N, digits - 1);
    }
  });
}
}  // namespace detail

/// Materializes any view into dense storage.
template <KernelView V>
DenseKernel densify(const V& v) {
  const Grid& g = v.grid();
  const std::size_t k = v.order();
  DenseKernel out(g, k);
  const std::size_t N = g.points();
  cplx* dst = out.values().data();
  parallel_for(out.size(), [&](std::size_t b, std::size_t e) {
    std::array<std::size_t, 2 * kMaxOrder> idx{};
    detail::decode(b, N, 2 * k, idx.data());
    for (std::size_t f = b; f < e; ++f) {
      dst[f] = v.at(idx.data(), idx.data() + k);
      detail::increment(idx.data(), N, 2 * k);
    }
  });
  return out;
}

/// Tr gamma = sum over x_k = x'_k of the kernel, weight h^{dk}.
template <KernelView V>
cplx trace(const V& v) {
  const Grid& g = v.grid();
  const std::size_t k = v.order();
  const std::size_t N = g.points();
  std::array<std::size_t, kMaxOrder> x{};
  cplx acc = 0.0;
  do {
    acc += v.at(x.data(), x.data());
  } while (detail::increment(x.data(), N, k));
  return acc * std::pow(g.cell_volume(), static_cast<double>(k));
}

/// Integrates out the last m coordinate pairs on their diagonal.
template <KernelView V>
DenseKernel partial_trace(const V& v, std::size_t m) {
  const std::size_t k = v.order();
  if (m < 1 || m >= k) throw ConfigError("partial trace needs 1 <= m < k");
  const Grid& g = v.grid();
  const std::size_t r = k - m;
  DenseKernel out(g, r);
  const std::size_t N = g.points();
  const double w = std::pow(g.cell_volume(), static_cast<double>(m));
  cplx* dst = out.values().data();
  parallel_for(out.size(), [&](std::size_t b, std::size_t e) {
    std::array<std::size_t, kMaxOrder> x{}, xp{};
    std::array<std::size_t, 2 * kMaxOrder> idx{};
    detail::decode(b, N, 2 * r, idx.data());
    for (std::size_t f = b; f < e; ++f) {
      for (std::size_t i = 0; i < r; ++i) {
        x[i] = idx[i];
        xp[i] = idx[r + i];
      }
      std::fill(x.begin() + r, x.begin() + k, 0);
      cplx acc = 0.0;
      do {
        for (std::size_t i = r; i < k; ++i) xp[i] = x[i];
        acc += v.at(x.data(), xp.data());
      } while (detail::increment(x.data() + r, N, m));
      dst[f] = acc * w;
      detail::increment(idx.data(), N, 2 * r);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Tensor products

/// (A (x) B)(x_a, x_b; x'_a, x'_b) = A(x_a; x'_a) B(x_b; x'_b).
template <KernelView A, KernelView B>
class TensorProduct {
 public:
  TensorProduct(A a, B b) : a_(std::move(a)), b_(std::move(b)) {
    if (!(a_.grid() == b_.grid())) throw ConfigError("tensor product of kernels on different grids");
    if (a_.order() + b_.order() > kMaxOrder) throw ConfigError("tensor product order too large");
  }
  std::size_t order() const { return a_.order() + b_.order(); }
  const Grid& grid() const { return a_.grid(); }
  cplx at(const std::size_t* x, const std::size_t* xp) const {
    const std::size_t ka = a_.order();
    return a_.at(x, xp) * b_.at(x + ka, xp + ka);
  }

 private:
  A a_;
  B b_;
};

/// Average of A (x) B over independent permutations of the unprimed and the
/// primed slots. Sums over the C(a+b, a)^2 block placements, which equals the
/// full (a+b)!^2 orbit average whenever A and B are themselves symmetric.
template <KernelView A, KernelView B>
class SymmetrizedProduct {
 public:
  SymmetrizedProduct(A a, B b) : a_(std::move(a)), b_(std::move(b)) {
    if (!(a_.grid() == b_.grid())) throw ConfigError("tensor product of kernels on different grids");
    const std::size_t ka = a_.order(), kb = b_.order(), k = ka + kb;
    if (k > kMaxOrder) throw ConfigError("tensor product order too large");
    for (unsigned mask = 0; mask < (1U << k); ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != ka) continue;
      Placement p{};
      std::size_t ia = 0, ib = 0;
      for (std::size_t s = 0; s < k; ++s) {
        if (mask & (1U << s))
          p.a[ia++] = s;
        else
          p.b[ib++] = s;
      }
      placements_.push_back(p);
    }
    weight_ = 1.0 / static_cast<double>(placements_.size() * placements_.size());
  }

  std::size_t order() const { return a_.order() + b_.order(); }
  const Grid& grid() const { return a_.grid(); }

  cplx at(const std::size_t* x, const std::size_t* xp) const {
    const std::size_t ka = a_.order(), kb = b_.order();
    std::array<std::size_t, kMaxOrder> xa{}, xb{}, ya{}, yb{};
    cplx acc = 0.0;
    for (const Placement& pu : placements_) {
      for (std::size_t i = 0; i < ka; ++i) xa[i] = x[pu.a[i]];
      for (std::size_t i = 0; i < kb; ++i) xb[i] = x[pu.b[i]];
      for (const Placement& pp : placements_) {
        for (std::size_t i = 0; i < ka; ++i) ya[i] = xp[pp.a[i]];
        for (std::size_t i = 0; i < kb; ++i) yb[i] = xp[pp.b[i]];
        acc += a_.at(xa.data(), ya.data()) * b_.at(xb.data(), yb.data());
      }
    }
    return acc * weight_;
  }

 private:
  struct Placement {
    std::array<std::size_t, kMaxOrder> a, b;
  };
  A a_;
  B b_;
  std::vector<Placement> placements_;
  double weight_ = 1.0;
};

/// Dense blocks: every placement is reduced to precomputed stride tables, so
/// an entry costs two short dot products per placement plus the C(a+b,a)^2
/// multiply-adds. This is the closure's hot path.
template <>
class SymmetrizedProduct<KernelRef, KernelRef> {
 public:
  SymmetrizedProduct(KernelRef a, KernelRef b) : a_(a), b_(b) {
    if (!(a_.grid() == b_.grid())) throw ConfigError("tensor product of kernels on different grids");
    const std::size_t ka = a_.order(), kb = b_.order();
    k_ = ka + kb;
    if (k_ > kMaxOrder) throw ConfigError("tensor product order too large");
    const std::size_t N = a_.grid().points();
    // Strides of the unprimed slots; primed strides are these divided by N^k.
    auto strides = [N](std::size_t k) {
      std::vector<std::size_t> st(2 * k);
      std::size_t s = 1;
      for (std::size_t i = 2 * k; i-- > 0;) {
        st[i] = s;
        s *= N;
      }
      return st;
    };
    const auto sa = strides(ka), sb = strides(kb);
    for (unsigned mask = 0; mask < (1U << k_); ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != ka) continue;
      Table t{};
      std::size_t ia = 0, ib = 0;
      for (std::size_t s = 0; s < k_; ++s) {
        if (mask & (1U << s)) {
          t.a_unprimed[s] = sa[ia];
          t.a_primed[s] = sa[ka + ia];
          ++ia;
        } else {
          t.b_unprimed[s] = sb[ib];
          t.b_primed[s] = sb[kb + ib];
          ++ib;
        }
      }
      tables_.push_back(t);
    }
    weight_ = 1.0 / static_cast<double>(tables_.size() * tables_.size());
  }

  std::size_t order() const { return k_; }
  const Grid& grid() const { return a_.grid(); }
  const KernelRef& left() const { return a_; }
  const KernelRef& right() const { return b_; }
  double weight() const { return weight_; }

  /// Stride of full-order slot s (unprimed, then primed at s + order) in the
  /// left and right factor for placement t; 0 when the slot belongs to the other factor.
  std::size_t placements() const { return tables_.size(); }
  std::size_t left_stride(std::size_t t, std::size_t s) const {
    return s < k_ ? tables_[t].a_unprimed[s] : tables_[t].a_primed[s - k_];
  }
  std::size_t right_stride(std::size_t t, std::size_t s) const {
    return s < k_ ? tables_[t].b_unprimed[s] : tables_[t].b_primed[s - k_];
  }

  cplx at(const std::size_t* x, const std::size_t* xp) const {
    constexpr std::size_t kMaxPlacements = 70;  // C(8,4); larger orders fall back to heap
    const std::size_t P = tables_.size();
    std::array<std::size_t, kMaxPlacements> ou_a, ou_b, op_a, op_b;
    std::vector<std::size_t> heap;
    std::size_t *ua = ou_a.data(), *ub = ou_b.data(), *pa = op_a.data(), *pb = op_b.data();
    if (P > kMaxPlacements) {
      heap.resize(4 * P);
      ua = heap.data();
      ub = ua + P;
      pa = ub + P;
      pb = pa + P;
    }
    for (std::size_t t = 0; t < P; ++t) {
      const Table& tb = tables_[t];
      std::size_t a0 = 0, b0 = 0, a1 = 0, b1 = 0;
      for (std::size_t s = 0; s < k_; ++s) {
        a0 += x[s] * tb.a_unprimed[s];
        b0 += x[s] * tb.b_unprimed[s];
        a1 += xp[s] * tb.a_primed[s];
        b1 += xp[s] * tb.b_primed[s];
      }
      ua[t] = a0;
      ub[t] = b0;
      pa[t] = a1;
      pb[t] = b1;
    }
    const cplx* A = a_.data();
    const cplx* B = b_.data();
    cplx acc = 0.0;
    for (std::size_t u = 0; u < P; ++u)
      for (std::size_t v = 0; v < P; ++v) acc += A[ua[u] + pa[v]] * B[ub[u] + pb[v]];
    return acc * weight_;
  }

 private:
  struct Table {
    std::array<std::size_t, kMaxOrder> a_unprimed, a_primed, b_unprimed, b_primed;
  };
  KernelRef a_, b_;
  std::size_t k_ = 0;
  std::vector<Table> tables_;
  double weight_ = 1.0;
};

template <KernelView A, KernelView B>
TensorProduct<A, B> tensor_product(A a, B b) {
  return TensorProduct<A, B>(std::move(a), std::move(b));
}

template <KernelView A, KernelView B>
SymmetrizedProduct<A, B> symmetrized_product(A a, B b) {
  return SymmetrizedProduct<A, B>(std::move(a), std::move(b));
}

/// Dense product, optionally symmetrized.
template <KernelView A, KernelView B>
DenseKernel tensor_product(const A& a, const B& b, bool symmetrize) {
  if (symmetrize) return densify(symmetrized_product(a, b));
  return densify(tensor_product(a, b));
}

/// Full orbit average of a dense kernel over S_k x S_k.
inline DenseKernel symmetrize(const DenseKernel& g) {
  const std::size_t k = g.order();
  std::array<std::size_t, kMaxOrder> perm{};
  std::vector<std::array<std::size_t, kMaxOrder>> perms;
  for (std::size_t i = 0; i < k; ++i) perm[i] = i;
  do {
    perms.push_back(perm);
  } while (std::next_permutation(perm.begin(), perm.begin() + k));
  DenseKernel out(g.grid(), k);
  const std::size_t N = g.grid().points();
  const KernelRef src = g.view();
  const double w = 1.0 / static_cast<double>(perms.size() * perms.size());
  cplx* dst = out.values().data();
  parallel_for(out.size(), [&](std::size_t b, std::size_t e) {
    std::array<std::size_t, 2 * kMaxOrder> idx{};
    std::array<std::size_t, kMaxOrder> x{}, xp{};
    detail::decode(b, N, 2 * k, idx.data());
    for (std::size_t f = b; f < e; ++f) {
      cplx acc = 0.0;
      for (const auto& pu : perms) {
        for (std::size_t i = 0; i < k; ++i) x[i] = idx[pu[i]];
        for (const auto& pp : perms) {
          for (std::size_t i = 0; i < k; ++i) xp[i] = idx[k + pp[i]];
          acc += src.at(x.data(), xp.data());
        }
      }
      dst[f] = acc * w;
      detail::increment(idx.data(), N, 2 * k);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Structural diagnostics

/// max |gamma(x;x') - conj(gamma(x';x))|
inline double hermiticity_defect(const DenseKernel& g) {
  const std::size_t k = g.order(), N = g.grid().points();
  const KernelRef v = g.view();
  std::array<std::size_t, 2 * kMaxOrder> idx{};
  double worst = 0.0;
  for (std::size_t f = 0; f < g.size(); ++f) {
    worst = std::max(worst, std::abs(v.at(idx.data(), idx.data() + k) - std::conj(v.at(idx.data() + k, idx.data()))));
    detail::increment(idx.data(), N, 2 * k);
  }
  return worst;
}

/// max deviation under transposition of any two unprimed or any two primed slots.
inline double symmetry_defect(const DenseKernel& g) {
  const std::size_t k = g.order(), N = g.grid().points();
  const KernelRef v = g.view();
  std::array<std::size_t, 2 * kMaxOrder> idx{}, sw{};
  double worst = 0.0;
  for (std::size_t f = 0; f < g.size(); ++f) {
    const cplx base = v.at(idx.data(), idx.data() + k);
    for (std::size_t side = 0; side < 2; ++side)
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = a + 1; b < k; ++b) {
          sw = idx;
          std::swap(sw[side * k + a], sw[side * k + b]);
          worst = std::max(worst, std::abs(base - v.at(sw.data(), sw.data() + k)));
        }
    detail::increment(idx.data(), N, 2 * k);
  }
  return worst;
}

/// Smallest eigenvalue of the order-1 kernel as an operator (matrix gamma(x_i;x_j) h^d).
inline double min_eigenvalue(const DenseKernel& g) {
  if (g.order() != 1) throw ConfigError("positivity is reported for order-1 kernels only");
  const std::size_t N = g.grid().points();
  Eigen::MatrixXcd m(N, N);
  const double w = g.grid().cell_volume();
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) m(i, j) = g.values()[i * N + j] * w;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

// ---------------------------------------------------------------------------
// Sequences

using Marginal = std::variant<DenseKernel, FactorizedMarginal>;

inline std::size_t order_of(const Marginal& m) {
  return std::visit([](const auto& v) { return v.order(); }, m);
}
inline const Grid& grid_of(const Marginal& m) {
  return std::visit([](const auto& v) -> const Grid& { return v.grid(); }, m);
}

/// Truncated Gamma = (gamma^(1), ..., gamma^(K)).
struct MarginalSequence {
  int p = 2;
  std::vector<Marginal> entries;  // entries[k-1] holds gamma^(k)
  // Set for factorized sequences: orders beyond K are then available lazily.
  std::shared_ptr<const WaveFunction> factorized_source;

  std::size_t depth() const { return entries.size(); }
  const Grid& grid() const { return grid_of(entries.front()); }

  bool has_order(std::size_t k) const { return k >= 1 && (k <= depth() || factorized_source); }

  /// Calls fn with a KernelView of gamma^(k).
  template <class Fn>
  decltype(auto) visit(std::size_t k, Fn&& fn) const {
    if (k >= 1 && k <= depth())
      return std::visit([&](const auto& m) -> decltype(auto) { return fn(view_of(m)); }, entries[k - 1]);
    if (k >= 1 && factorized_source) return fn(FactorizedMarginal(factorized_source, k));
    throw ConfigError("marginal of order " + std::to_string(k) + " is not available (depth " +
                      std::to_string(depth()) + ")");
  }
};

inline MarginalSequence factorized_sequence(const WaveFunction& phi, std::size_t K, int p) {
  MarginalSequence seq;
  seq.p = p;
  seq.factorized_source = std::make_shared<const WaveFunction>(phi);
  for (std::size_t k = 1; k <= K; ++k) seq.entries.emplace_back(FactorizedMarginal(seq.factorized_source, k));
  return seq;
}

struct AdmissibilityReport {
  double deviation = 0.0;      // max over k < K of ||Tr_{k+1} gamma^(k+1) - gamma^(k)||_inf
  std::size_t worst_order = 0;  // k attaining it
  bool pass = false;
};

template <KernelView Lower, KernelView Upper>
double admissibility_deviation(const Lower& lower, const Upper& upper) {
  const DenseKernel traced = partial_trace(upper, 1);
  const std::size_t k = lower.order(), N = lower.grid().points();
  std::array<std::size_t, 2 * kMaxOrder> idx{};
  double worst = 0.0;
  for (cplx v : traced.values()) {
    worst = std::max(worst, std::abs(v - lower.at(idx.data(), idx.data() + k)));
    detail::increment(idx.data(), N, 2 * k);
  }
  return worst;
}

inline AdmissibilityReport check_admissible(const MarginalSequence& seq, double tol) {
  if (seq.depth() < 2) throw ConfigError("admissibility check needs K >= 2");
  AdmissibilityReport rep;
  for (std::size_t k = 1; k < seq.depth(); ++k) {
    const double dev = seq.visit(k, [&](const auto& lower) {
      return seq.visit(k + 1, [&](const auto& upper) { return admissibility_deviation(lower, upper); });
    });
    if (dev >= rep.deviation) {
      rep.deviation = dev;
      rep.worst_order = k;
    }
  }
  rep.pass = rep.deviation <= tol;
  return rep;
}

// ---------------------------------------------------------------------------
// Binary snapshots
//
// Little-endian layout, 48-byte header then payload:
//   0  char[8]  magic "GPLABKRN"
//   8  u32      format version (1)
//   12 u32      d
//   16 u32      n
//   20 u32      k
//   24 f64      L
//   32 u8       representation: 0 dense kernel, 1 factorized (payload is phi)
//   33 u8[7]    zero
//   40 u64      payload entry count
//   48 payload  entries as (f32 real, f32 imag)
// Dense payloads have N^{2k} entries in the row-major slot order above;
// factorized payloads hold the N values of phi.

inline constexpr char kSnapshotMagic[8] = {'G', 'P', 'L', 'A', 'B', 'K', 'R', 'N'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

namespace detail {
template <class T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}
template <class T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw ConfigError("truncated snapshot");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}
}  // namespace detail

inline void write_snapshot(std::ostream& os, const Marginal& m) {
  const Grid& g = grid_of(m);
  const bool dense = std::holds_alternative<DenseKernel>(m);
  std::span<const cplx> payload = dense ? std::get<DenseKernel>(m).values()
                                        : std::span<const cplx>(std::get<FactorizedMarginal>(m).phi().values);
  os.write(kSnapshotMagic, 8);
  detail::put_le<std::uint32_t>(os, kSnapshotVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(g.d));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(g.n));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(order_of(m)));
  detail::put_le<double>(os, g.L);
  detail::put_le<std::uint8_t>(os, dense ? 0 : 1);
  for (int i = 0; i < 7; ++i) detail::put_le<std::uint8_t>(os, 0);
  detail::put_le<std::uint64_t>(os, payload.size());
  for (const cplx& v : payload) {
    detail::put_le<float>(os, static_cast<float>(v.real()));
    detail::put_le<float>(os, static_cast<float>(v.imag()));
  }
}

inline Marginal read_snapshot(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kSnapshotMagic, 8) != 0) throw ConfigError("not a kernel snapshot");
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kSnapshotVersion) throw ConfigError("unsupported snapshot version " + std::to_string(version));
  const auto d = detail::get_le<std::uint32_t>(is);
  const auto n = detail::get_le<std::uint32_t>(is);
  const auto k = detail::get_le<std::uint32_t>(is);
  const auto L = detail::get_le<double>(is);
  const auto tag = detail::get_le<std::uint8_t>(is);
  for (int i = 0; i < 7; ++i) detail::get_le<std::uint8_t>(is);
  const auto count = detail::get_le<std::uint64_t>(is);
  const Grid g = make_grid(static_cast<int>(d), n, L);
  if (tag > 1) throw ConfigError("unknown snapshot representation tag");
  const std::size_t expected = tag == 0 ? dense_entries(g, k) : g.points();
  if (count != expected) throw ConfigError("snapshot payload count does not match header");
  CVector values(count);
  for (cplx& v : values) {
    const float re = detail::get_le<float>(is);
    const float im = detail::get_le<float>(is);
    v = cplx(re, im);
  }
  if (tag == 0) return DenseKernel(g, k, std::move(values));
  return FactorizedMarginal(WaveFunction(g, std::move(values)), k);
}

inline void write_snapshot(const std::string& path, const Marginal& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  write_snapshot(os, m);
  if (!os) throw ConfigError("write failed for " + path);
}

inline Marginal read_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open snapshot " + path);
  return read_snapshot(is);
}

}  // namespace gplab
