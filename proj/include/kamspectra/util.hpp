#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace kamspectra {

using cplx = std::complex<double>;

constexpr double two_pi = 6.283185307179586476925286766559;

// 2-vector with the handful of operations the lattice geometry needs.
struct Vec2 {
  double x = 0.0, y = 0.0;

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}

  Vec2 operator+(const Vec2 &o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2 &o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator-() const { return {-x, -y}; }
  bool operator==(const Vec2 &o) const { return x == o.x && y == o.y; }

  double dot(const Vec2 &o) const { return x * o.x + y * o.y; }
  double norm2() const { return x * x + y * y; }
  double norm() const { return std::sqrt(norm2()); }
};

inline Vec2 operator*(double s, const Vec2 &v) { return v * s; }

// Unit direction and its derivative for the angle variable.
inline Vec2 nu_of(double phi) { return {std::cos(phi), std::sin(phi)}; }
inline Vec2 mu_of(double phi) { return {-std::sin(phi), std::cos(phi)}; }

// Quantity carried in log space.  The super-exponential scales of the
// construction underflow long before the ordering relations between them stop
// mattering, so comparisons run on ln() and value() only materializes a
// double when a concrete number is needed (contour radii, band widths),
// clamped below by a configurable floor.
class LogValue {
public:
  LogValue() : ln_(-std::numeric_limits<double>::infinity()) {}
  explicit LogValue(double ln_val) : ln_(ln_val) {}

  static LogValue from_value(double v) {
    if (v <= 0.0)
      throw std::invalid_argument("LogValue: nonpositive value");
    return LogValue(std::log(v));
  }

  double ln() const { return ln_; }
  double value(double floor = 1e-300) const {
    double v = std::exp(ln_);
    return v > floor ? v : floor;
  }

  LogValue operator*(const LogValue &o) const { return LogValue(ln_ + o.ln_); }
  LogValue pow(double e) const { return LogValue(ln_ * e); }
  bool operator<(const LogValue &o) const { return ln_ < o.ln_; }

private:
  double ln_;
};

// Deterministic parallel map: out[i] = fn(i).  Results land in pre-sized
// slots, so the numbers do not depend on the thread count.
template <typename T>
void parallel_map(std::size_t n, int threads, std::vector<T> &out,
                  const std::function<T(std::size_t)> &fn) {
  out.resize(n);
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i)
      out[i] = fn(i);
    return;
  }
  std::size_t nt = std::min<std::size_t>(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(nt);
  std::atomic<std::size_t> next{0};
  for (std::size_t t = 0; t < nt; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n)
          return;
        out[i] = fn(i);
      }
    });
  }
  for (auto &th : pool)
    th.join();
}

// 17 significant digits: enough to round-trip any double, used by every
// serializer so that identical runs produce identical bytes.
std::string fmt_g17(double v);

// FNV-1a over a byte string; the config hash embedded in artifacts.
std::uint64_t fnv1a(const std::string &bytes);

// Deterministic uniform double in [0,1) from a 64-bit generator draw.
inline double uniform01(std::uint64_t draw) {
  return static_cast<double>(draw >> 11) * 0x1.0p-53;
}

} // namespace kamspectra
