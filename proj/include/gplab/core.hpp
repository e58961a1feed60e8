#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <complex>
#include <cstdlib>
#include <new>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace gplab {

using cplx = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;

/// 64-byte aligned storage so every buffer meets the FFT's SIMD alignment and
/// takes the same code path, which keeps results reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    const std::size_t bytes = ((n * sizeof(T) + 63) / 64) * 64;
    void* p = std::aligned_alloc(64, bytes == 0 ? 64 : bytes);
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept { std::free(p); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using CVector = std::vector<cplx, AlignedAllocator<cplx>>;

/// Invalid parameters or missing inputs. Raised before any large allocation.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A dense object would exceed the storage bound.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values appeared during time integration.
class SolverBreakdown : public std::runtime_error {
 public:
  SolverBreakdown(const std::string& what, double last_valid_time)
      : std::runtime_error(what), last_valid_time_(last_valid_time) {}
  double last_valid_time() const noexcept { return last_valid_time_; }

 private:
  double last_valid_time_;
};

/// Maximum number of complex entries a dense kernel may hold (1 GiB).
inline constexpr std::size_t kStorageBound = std::size_t{1} << 26;

namespace detail {
inline std::atomic<unsigned>& thread_setting() {
  static std::atomic<unsigned> threads{1};
  return threads;
}
}  // namespace detail

/// Worker threads used by the bulk kernel loops. 1 is the reproducible default.
inline unsigned threads() { return detail::thread_setting().load(); }
inline void set_threads(unsigned n) { detail::thread_setting().store(std::max(1u, n)); }

/// Runs fn(begin, end) over [0, count) split into contiguous chunks.
/// Each index is handled by exactly one call, so results do not depend on the
/// thread count as long as fn writes only to its own range.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const unsigned nt = threads();
  if (nt <= 1 || count < 4096) {
    fn(std::size_t{0}, count);
    return;
  }
  const std::size_t chunk = (count + nt - 1) / nt;
  std::vector<std::jthread> pool;
  pool.reserve(nt);
  for (unsigned t = 0; t < nt; ++t) {
    const std::size_t b = std::min(count, t * chunk);
    const std::size_t e = std::min(count, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
}

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t checked_pow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) {
    if (base != 0 && r > (~std::size_t{0}) / base) throw CapacityError("size overflow");
    r *= base;
  }
  return r;
}

/// Shortest round-trip decimal form, locale independent.
inline std::string format_number(double v) {
  std::array<char, 32> buf;
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), r.ptr);
}

}  // namespace gplab
