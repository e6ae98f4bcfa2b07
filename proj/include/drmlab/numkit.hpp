#pragma once

#include "drmlab/core.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace drmlab {

/// PCG32 (XSH-RR 64/32) generator. The stream is a pure function of its
/// (initstate, initseq) pair, matching the reference pcg32_srandom_r.
class Rng {
 public:
  static constexpr std::uint64_t kDefaultStream = 0xda3e39cb94b95bdbULL;

  Rng(std::uint64_t initstate, std::uint64_t initseq) : seed_(initstate) {
    state_ = 0;
    inc_ = (initseq << 1u) | 1u;
    next_u32();
    state_ += initstate;
    next_u32();
  }

  std::uint32_t next_u32() {
    const std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32u) | next_u32();
  }

  /// Uniform in [0, 1) with 53 random bits; consumes two 32-bit draws.
  double uniform() { return static_cast<double>(next_u64() >> 11u) * 0x1.0p-53; }

  /// Uniform integer in [0, bound), unbiased by rejection.
  std::uint32_t below(std::uint32_t bound) {
    const std::uint32_t threshold = (-bound) % bound;
    for (;;) {
      const std::uint32_t r = next_u32();
      if (r >= threshold) return r % bound;
    }
  }

  /// Standard normal by Box-Muller; always consumes exactly two uniforms.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Child generator on a distinct PCG stream chosen by the parent's next draws.
  Rng split() {
    const std::uint64_t s = next_u64();
    const std::uint64_t q = next_u64();
    return Rng(s, q);
  }

  std::uint64_t seed() const { return seed_; }

  bool operator==(const Rng& other) const {
    return state_ == other.state_ && inc_ == other.inc_;
  }

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
  std::uint64_t seed_;
};

inline Rng rng_create(std::uint64_t seed) { return Rng(seed, Rng::kDefaultStream); }

/// n draws from N(mean, I), one row per draw.
inline Matrix gaussian_sample(Rng& rng, const Vector& mean, Index n) {
  if (mean.size() < 1 || n < 1) throw ArgumentError("gaussian_sample: dim and n must be >= 1");
  Matrix out(n, mean.size());
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < mean.size(); ++j) out(i, j) = mean(j) + rng.normal();
  return out;
}

/// Seeded Fisher-Yates permutation of 0..n-1.
inline std::vector<Index> permutation(Rng& rng, Index n) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint32_t>(i + 1)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

template <typename Derived>
typename Derived::Scalar logsumexp(const Eigen::DenseBase<Derived>& values) {
  using Scalar = typename Derived::Scalar;
  if (values.size() == 0) throw ArgumentError("logsumexp: empty input");
  const Scalar m = values.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((values.derived().array() - m).exp().sum());
}

/// Max-shifted softmax of a vector (row or column).
template <typename Derived>
auto softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime> out =
      (logits.array() - logits.maxCoeff()).exp().matrix();
  out /= out.sum();
  return out;
}

/// Row-wise softmax of a batch of logits.
template <typename Scalar>
MatrixX<Scalar> softmax_rows(const MatrixX<Scalar>& logits) {
  MatrixX<Scalar> out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) out.row(i) = softmax(logits.row(i));
  return out;
}

/// Shannon entropy in nats; 0 log 0 = 0.
template <typename Derived>
typename Derived::Scalar entropy(const Eigen::MatrixBase<Derived>& probs) {
  using Scalar = typename Derived::Scalar;
  Scalar h = 0;
  for (Index i = 0; i < probs.size(); ++i) {
    const Scalar p = probs.derived().coeff(i);
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

/// Index of the largest entry, lowest index on ties.
template <typename Derived>
Index argmax(const Eigen::MatrixBase<Derived>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (v.derived().coeff(i) > v.derived().coeff(best)) best = i;
  return best;
}

template <typename Derived>
Index argmin(const Eigen::MatrixBase<Derived>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (v.derived().coeff(i) < v.derived().coeff(best)) best = i;
  return best;
}

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace drmlab
