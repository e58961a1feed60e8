#pragma once

// Periodic grids, the unitary discrete Fourier transform, Fourier multipliers
// and quadrature.
//
// Transform convention. With centered coordinates x_j = (j - n/2) h and
// wavenumbers u_m = 2*pi*m/L, m in {-n/2, ..., n/2-1}, a field f on a grid of
// N = n^d points is synthesised as
//
//     f(x) = N^{-1/2} * sum_m F_m * exp(i u_m . x),
//
// i.e. the transform is unitary and uses the same e^{+iux} synthesis as the
// continuum convention gamma(x;x') = int du du' e^{iux - iu'x'} hat_gamma(u;u').
// A continuum coefficient is recovered per variable as
//
//     hat_f(u_m) = N^{-1/2} (L / 2pi)^d F_m .
//
// Kernels apply the same transform to every variable slot, primed ones
// included, so a primed slot's coefficient at m belongs to the continuum
// frequency u' = -u_m. Observables in this library are written in terms of
// quadrature sums and derivatives, so none of them depends on that constant.

#include <fftw3.h>

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gplab/core.hpp"

namespace gplab {

/// Uniform periodic grid on [-L/2, L/2)^d.
struct Grid {
  int d = 1;
  std::size_t n = 0;
  double L = 0.0;
  double h = 0.0;

  std::size_t points() const { return d == 1 ? n : n * n; }
  double cell_volume() const { return d == 1 ? h : h * h; }

  /// Coordinate of axis index i.
  double coord(std::size_t i) const { return (static_cast<double>(i) - static_cast<double>(n / 2)) * h; }

  /// Wavenumber of axis index i in FFT ordering.
  double wavenumber(std::size_t i) const {
    const auto m = static_cast<double>(i < n / 2 ? static_cast<long long>(i)
                                                 : static_cast<long long>(i) - static_cast<long long>(n));
    return 2.0 * kPi * m / L;
  }

  /// Signed mode number of axis index i.
  long long mode(std::size_t i) const {
    return i < n / 2 ? static_cast<long long>(i) : static_cast<long long>(i) - static_cast<long long>(n);
  }

  std::array<std::size_t, 2> axes(std::size_t flat) const {
    if (d == 1) return {flat, 0};
    return {flat / n, flat % n};
  }

  std::array<double, 2> position(std::size_t flat) const {
    const auto a = axes(flat);
    return {coord(a[0]), d == 2 ? coord(a[1]) : 0.0};
  }

  std::array<double, 2> frequency(std::size_t flat) const {
    const auto a = axes(flat);
    return {wavenumber(a[0]), d == 2 ? wavenumber(a[1]) : 0.0};
  }

  double x2(std::size_t flat) const {
    const auto x = position(flat);
    return x[0] * x[0] + x[1] * x[1];
  }

  double u2(std::size_t flat) const {
    const auto u = frequency(flat);
    return u[0] * u[0] + u[1] * u[1];
  }

  /// Largest resolved wavenumber pi/h.
  double nyquist() const { return kPi / h; }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.d == b.d && a.n == b.n && a.L == b.L;
  }
};

inline Grid make_grid(int d, std::size_t n, double L) {
  if (d != 1 && d != 2) throw ConfigError("grid dimension must be 1 or 2, got " + std::to_string(d));
  if (n < 8 || !is_power_of_two(n))
    throw ConfigError("points per axis must be a power of two >= 8, got " + std::to_string(n));
  if (!(L > 0.0) || !std::isfinite(L)) throw ConfigError("box length must be positive");
  return Grid{d, n, L, L / static_cast<double>(n)};
}

/// |u|^2 for every point of the grid, flat order.
inline std::vector<double> wavenumbers_squared(const Grid& g) {
  std::vector<double> out(g.points());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = g.u2(i);
  return out;
}

/// |x|^2 for every point of the grid, flat order.
inline std::vector<double> radius_squared(const Grid& g) {
  std::vector<double> out(g.points());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = g.x2(i);
  return out;
}

// ---------------------------------------------------------------------------
// FFT backend

/// In-place unitary transform over a rank-r cube with n points per axis.
/// Plans are created lazily from the first buffer seen and reused through
/// FFTW's new-array interface.
class CubeFft {
 public:
  CubeFft(std::size_t n, std::size_t rank) : n_(n), rank_(rank), total_(checked_pow(n, rank)) {}
  CubeFft(const CubeFft&) = delete;
  CubeFft& operator=(const CubeFft&) = delete;
  ~CubeFft() {
    std::lock_guard lock(planner_mutex());
    for (fftw_plan p : plans_)
      if (p) fftw_destroy_plan(p);
  }

  std::size_t size() const { return total_; }

  void forward(std::span<cplx> data) const {
    check(data);
    execute(data, FFTW_FORWARD);
    apply_phase(data);
  }

  void inverse(std::span<cplx> data) const {
    check(data);
    apply_phase(data);
    execute(data, FFTW_BACKWARD);
  }

  /// Applies a Fourier multiplier that is even in every index (such as |u|^2).
  /// The centering phases then cancel, so fn sees raw FFT-ordered
  /// coefficients times N^{1/2} and must fold in the factor 1/N it is given.
  template <class Fn>
  void filter(std::span<cplx> data, Fn&& fn) const {
    check(data);
    execute(data, FFTW_FORWARD);
    fn(data, 1.0 / static_cast<double>(total_));
    execute(data, FFTW_BACKWARD);
  }

  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

 private:
  static fftw_complex* as_fftw(std::span<cplx> d) { return reinterpret_cast<fftw_complex*>(d.data()); }

  void check(std::span<cplx> data) const {
    if (data.size() != total_) throw ConfigError("FFT buffer size mismatch");
  }

  // Plans built for SIMD-aligned buffers run several times faster, so both
  // variants are kept and picked per call.
  void execute(std::span<cplx> data, int sign) const {
    const bool aligned = fftw_alignment_of(reinterpret_cast<double*>(data.data())) == 0;
    fftw_execute_dft(plan(sign, aligned), as_fftw(data), as_fftw(data));
  }

  fftw_plan plan(int sign, bool aligned) const {
    std::lock_guard lock(planner_mutex());
    fftw_plan& p = plans_[(sign == FFTW_FORWARD ? 0 : 2) + (aligned ? 0 : 1)];
    if (!p) {
      std::vector<int> dims(rank_, static_cast<int>(n_));
      fftw_complex* scratch = fftw_alloc_complex(total_);
      p = fftw_plan_dft(static_cast<int>(rank_), dims.data(), scratch, scratch, sign,
                        FFTW_ESTIMATE | (aligned ? 0U : FFTW_UNALIGNED));
      fftw_free(scratch);
      if (!p) throw ConfigError("FFTW could not create a plan");
    }
    return p;
  }

  // Unitary scaling times the checkerboard (-1)^{sum of indices} that moves the
  // synthesis from index positions to centered coordinates.
  void apply_phase(std::span<cplx> data) const {
    const double s = 1.0 / std::sqrt(static_cast<double>(total_));
    const std::size_t outer = total_ / n_;
    parallel_for(outer, [&](std::size_t b, std::size_t e) {
      for (std::size_t o = b; o < e; ++o) {
        std::size_t rest = o, parity = 0;
        for (std::size_t r = 1; r < rank_; ++r) {
          parity += rest % n_;
          rest /= n_;
        }
        double sign = (parity & 1U) ? -s : s;
        cplx* row = data.data() + o * n_;
        for (std::size_t i = 0; i < n_; ++i, sign = -sign) row[i] *= sign;
      }
    });
  }

  std::size_t n_, rank_, total_;
  mutable std::array<fftw_plan, 4> plans_{};
};

/// Shared transform for a rank-r cube of side n.
inline const CubeFft& cube_fft(std::size_t n, std::size_t rank) {
  static std::mutex m;
  static std::map<std::pair<std::size_t, std::size_t>, std::unique_ptr<CubeFft>> cache;
  std::lock_guard lock(m);
  auto& slot = cache[{n, rank}];
  if (!slot) slot = std::make_unique<CubeFft>(n, rank);
  return *slot;
}

/// Transform of a kernel with `slots` variables of dimension d each.
inline void forward_slots(std::span<cplx> data, const Grid& g, std::size_t slots) {
  cube_fft(g.n, slots * static_cast<std::size_t>(g.d)).forward(data);
}
inline void inverse_slots(std::span<cplx> data, const Grid& g, std::size_t slots) {
  cube_fft(g.n, slots * static_cast<std::size_t>(g.d)).inverse(data);
}

// ---------------------------------------------------------------------------
// Fields

/// Complex field in position space.
struct Field {
  Grid grid;
  CVector values;

  Field() = default;
  explicit Field(const Grid& g) : grid(g), values(g.points()) {}
  Field(const Grid& g, CVector v) : grid(g), values(std::move(v)) {
    if (values.size() != g.points()) throw ConfigError("field size does not match grid");
  }
  Field(const Grid& g, std::span<const cplx> v) : Field(g, CVector(v.begin(), v.end())) {}
};

/// Unitary Fourier coefficients of a Field.
struct FourierField {
  Grid grid;
  CVector values;
};

inline FourierField forward(const Field& f) {
  FourierField out{f.grid, f.values};
  forward_slots(out.values, f.grid, 1);
  return out;
}

inline Field inverse(const FourierField& F) {
  Field out(F.grid, F.values);
  inverse_slots(out.values, F.grid, 1);
  return out;
}

/// Pointwise product in frequency space with m(u), u a d-vector.
template <class Symbol>
FourierField multiplier(FourierField F, Symbol&& m) {
  const Grid& g = F.grid;
  for (std::size_t i = 0; i < F.values.size(); ++i) {
    const auto u = g.frequency(i);
    F.values[i] *= m(std::span<const double>(u.data(), static_cast<std::size_t>(g.d)));
  }
  return F;
}

/// sum_x values(x) h^d.
template <class T>
T integrate(std::span<const T> values, const Grid& g) {
  T acc{};
  for (const T& v : values) acc += v;
  return acc * g.cell_volume();
}

inline cplx integrate(const Field& f) { return integrate<cplx>(f.values, f.grid); }

inline double mass(const Field& f) {
  double acc = 0.0;
  for (const cplx& v : f.values) acc += std::norm(v);
  return acc * f.grid.cell_volume();
}

/// -Delta f computed spectrally.
inline Field minus_laplacian(const Field& f) {
  return inverse(multiplier(forward(f), [](std::span<const double> u) {
    double s = 0.0;
    for (double c : u) s += c * c;
    return s;
  }));
}

/// Partial derivative along `axis`.
inline Field derivative(const Field& f, int axis) {
  return inverse(multiplier(forward(f), [axis](std::span<const double> u) { return cplx(0.0, u[axis]); }));
}

/// int |grad f|^2, evaluated from the coefficients.
inline double gradient_norm_squared(const Field& f) {
  const FourierField F = forward(f);
  double acc = 0.0;
  for (std::size_t i = 0; i < F.values.size(); ++i) acc += F.grid.u2(i) * std::norm(F.values[i]);
  return acc * f.grid.cell_volume();
}

/// ||f||^2_{H^alpha} = h^d sum (1+|u|^2)^alpha |F|^2.
inline double sobolev_norm_squared(const Field& f, double alpha) {
  const FourierField F = forward(f);
  double acc = 0.0;
  for (std::size_t i = 0; i < F.values.size(); ++i)
    acc += std::pow(1.0 + F.grid.u2(i), alpha) * std::norm(F.values[i]);
  return acc * f.grid.cell_volume();
}

/// Mass located in the outer 10% of the box along any axis.
inline double boundary_mass(std::span<const double> density, const Grid& g) {
  const double edge = 0.4 * g.L;
  double acc = 0.0;
  for (std::size_t i = 0; i < density.size(); ++i) {
    const auto x = g.position(i);
    if (std::abs(x[0]) >= edge || (g.d == 2 && std::abs(x[1]) >= edge)) acc += density[i];
  }
  return acc * g.cell_volume();
}

inline double boundary_mass(const Field& f) {
  std::vector<double> rho(f.values.size());
  for (std::size_t i = 0; i < rho.size(); ++i) rho[i] = std::norm(f.values[i]);
  return boundary_mass(rho, f.grid);
}

inline constexpr double kBoundaryMassLimit = 1e-8;

/// Rejects initial data whose mass reaches the edge of the periodic box.
inline void require_box_adequate(const Field& f) {
  const double bm = boundary_mass(f);
  if (!(bm < kBoundaryMassLimit))
    throw ConfigError("initial data too wide for the box: boundary mass " + std::to_string(bm));
}

// ---------------------------------------------------------------------------
// Symbols on multi-slot kernels

namespace detail {
template <class Op>
void slot_recurse(cplx* data, std::size_t N, std::size_t slot, std::size_t slots,
                  std::span<const std::vector<double>> per_slot, double acc, Op op) {
  const std::vector<double>& s = per_slot[slot];
  const std::size_t stride = checked_pow(N, slots - slot - 1);
  if (slot + 1 == slots) {
    for (std::size_t m = 0; m < N; ++m) data[m] *= op(acc, s[m]);
    return;
  }
  for (std::size_t m = 0; m < N; ++m) slot_recurse(data + m * stride, N, slot + 1, slots, per_slot, op(acc, s[m]), op);
}
}  // namespace detail

/// Multiplies each coefficient by sum_s per_slot[s][m_s].
inline void scale_by_slot_sum(std::span<cplx> coeffs, std::size_t points, std::span<const std::vector<double>> per_slot) {
  detail::slot_recurse(coeffs.data(), points, 0, per_slot.size(), per_slot, 0.0,
                       [](double a, double b) { return a + b; });
}

/// Multiplies each coefficient by prod_s per_slot[s][m_s].
inline void scale_by_slot_product(std::span<cplx> coeffs, std::size_t points,
                                  std::span<const std::vector<double>> per_slot) {
  detail::slot_recurse(coeffs.data(), points, 0, per_slot.size(), per_slot, 1.0,
                       [](double a, double b) { return a * b; });
}

}  // namespace gplab
