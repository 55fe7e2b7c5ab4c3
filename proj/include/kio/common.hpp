#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace kio {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat = Eigen::MatrixXd;
using CMat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXd;
using CVec = Eigen::VectorXcd;
using Complex = std::complex<double>;

constexpr double kPi = 3.14159265358979323846;

/// Thrown on invalid configuration or precondition violations (exit code 1).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Thrown when a computation fails numerically (exit code 2).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Thrown on file I/O or parse failures (exit code 3).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace runtime {

inline int& thread_count_ref() {
  static int n = 0;  // 0 = library default
  return n;
}

inline void set_threads(int n) {
  thread_count_ref() = n;
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#endif
}

}  // namespace runtime

/// SplitMix64 step; used to derive independent stream seeds.
inline std::uint64_t split_seed(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
  split_seed(s);
  return split_seed(s);
}

/// Deterministic RNG with explicit distributions. std::mt19937_64 draws are
/// fully specified by the standard; the distribution transforms are written
/// out here so results do not depend on the standard library in use.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ^ 0x853c49e6748fea9bULL) {
    // warm up
    for (int i = 0; i < 4; ++i) split_seed(state_);
  }

  std::uint64_t next_u64() { return split_seed(state_); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (pairs cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// FNV-1a 64-bit hash.
inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s) {
  return fnv1a(s.data(), s.size());
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

/// Exact GeLU (Gaussian CDF form) and its derivative.
inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
  return cdf + x * pdf;
}

inline double softsign(double x) { return x / (1.0 + std::abs(x)); }

inline double softsign_grad(double x) {
  const double t = 1.0 + std::abs(x);
  return 1.0 / (t * t);
}

/// Index permutation sorting points lexicographically by coordinates.
/// Used as a storage-order-independent reduction order, so that sums over
/// points are bit-identical under any permutation of the input.
inline std::vector<int> canonical_order(const Mat& points) {
  std::vector<int> idx(static_cast<std::size_t>(points.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  const int d = static_cast<int>(points.cols());
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    for (int c = 0; c < d; ++c) {
      if (points(a, c) != points(b, c)) return points(a, c) < points(b, c);
    }
    return a < b;
  });
  return idx;
}

}  // namespace kio
