#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace sentex {

/// Dense row-major matrix of doubles. The only numeric container in the
/// library; plain std::vector<double> is used for 1-d quantities.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c) {
    if (r < 0 || c < 0) throw std::invalid_argument("Mat: negative shape");
    data.assign(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0);
  }

  double& at(int r, int c) {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  double at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }

  std::span<double> row(int r) {
    return {data.data() + static_cast<std::size_t>(r) * cols,
            static_cast<std::size_t>(cols)};
  }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols,
            static_cast<std::size_t>(cols)};
  }

  std::vector<double> col(int c) const {
    std::vector<double> out(rows);
    for (int r = 0; r < rows; ++r) out[r] = at(r, c);
    return out;
  }
  void set_col(int c, std::span<const double> v) {
    for (int r = 0; r < rows; ++r) at(r, c) = v[static_cast<std::size_t>(r)];
  }

  bool same_shape(const Mat& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline bool all_finite(const Mat& m) { return all_finite(std::span<const double>{m.data}); }

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// FNV-1a 64-bit hash; used to fingerprint vocabularies and configs so
/// pipeline artifacts can be checked for compatibility.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Deterministic RNG. mt19937_64 output is fully specified by the standard
/// and the draws below are hand-rolled, so streams are identical across
/// platforms and standard-library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return (gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n), n >= 1. Rejection sampling.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n == 0");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  /// Fisher-Yates; std::shuffle is implementation-defined, this is not.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

/// Stable stream split: derive an independent child seed from a parent seed
/// and a stream tag (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace sentex
