#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace fmgp {

// Dense double-precision containers used across the library. Matrices are
// row-major so that in-memory layout matches the on-disk container format.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};
struct NotPositiveDefinite : Error {
  using Error::Error;
};
struct NonFiniteGradient : Error {
  using Error::Error;
};
struct EmptyInput : Error {
  using Error::Error;
};
struct ClassOutOfRange : Error {
  using Error::Error;
};
struct DomainError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ModeMismatch : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

enum class Mode { Regression, Classification };

inline std::string mode_name(Mode m) {
  return m == Mode::Regression ? "regression" : "classification";
}

/// Mirrors the lower triangle onto the upper one, so A_ij == A_ji holds
/// bit-exactly for the result.
inline Mat symmetrize_from_lower(const Mat& a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("symmetrize_from_lower: square matrix required");
  Mat s = a;
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    for (Eigen::Index j = i + 1; j < s.cols(); ++j) s(i, j) = s(j, i);
  return s;
}

inline bool all_finite(const Mat& a) { return a.allFinite(); }
inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline Mat scalar_mat(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return m;
}

/// Deterministic random stream. All draws are built from raw mt19937_64
/// output with fixed arithmetic, so sequences do not depend on the standard
/// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64() {
    // splitmix64; small, fast and reproducible everywhere.
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform draw in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform draw in (0, 1]; safe as a log() argument.
  double uniform_pos() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  /// Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw DomainError("Rng::uniform_int: n must be positive");
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// FNV-1a 64-bit digest, used for content hashes of serialized artifacts.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Shortest text form that round-trips an IEEE double (17 significant digits).
std::string format_double(double v);

}  // namespace fmgp
