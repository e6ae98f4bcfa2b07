#include "doctest.h"
#include "drmlab/numkit.hpp"

#include <array>

using namespace drmlab;

namespace {

// Reference pcg32_srandom_r / pcg32_random_r, transcribed from the C library.
struct RefPcg {
  std::uint64_t state = 0, inc = 0;
  std::uint32_t next() {
    std::uint64_t oldstate = state;
    state = oldstate * 6364136223846793005ULL + inc;
    std::uint32_t xorshifted = static_cast<std::uint32_t>(((oldstate >> 18u) ^ oldstate) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(oldstate >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31));
  }
  void seed(std::uint64_t initstate, std::uint64_t initseq) {
    state = 0U;
    inc = (initseq << 1u) | 1u;
    next();
    state += initstate;
    next();
  }
};

}  // namespace

TEST_CASE("pcg32 published vectors") {
  Rng rng(42, 54);
  const std::array<std::uint32_t, 6> expected{0xa15c02b7, 0x7b47f409, 0xba1d3330,
                                              0x83d2f293, 0xbfa4784b, 0xcbed606e};
  for (const auto e : expected) CHECK(rng.next_u32() == e);
}

TEST_CASE("seed 0 matches the reference generator") {
  RefPcg ref;
  ref.seed(0, Rng::kDefaultStream);
  Rng rng = rng_create(0);
  for (int i = 0; i < 1000; ++i) REQUIRE(rng.next_u32() == ref.next());
}

TEST_CASE("seed determinism and distinctness") {
  Rng a = rng_create(42), b = rng_create(42), c = rng_create(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    differs = differs || va != c.next_u64();
  }
  CHECK(differs);
}

TEST_CASE("split children are reproducible and distinct") {
  Rng p1 = rng_create(7), p2 = rng_create(7);
  Rng c1 = p1.split(), c2 = p2.split();
  CHECK(c1 == c2);
  Rng d1 = p1.split();
  CHECK_FALSE(c1 == d1);
  CHECK(c1.next_u64() != d1.next_u64());
}

TEST_CASE("uniform and below stay in range") {
  Rng rng = rng_create(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(rng.below(7) < 7u);
  }
}

TEST_CASE("gaussian mean and variance") {
  Rng rng = rng_create(11);
  const Matrix a = gaussian_sample(rng, Vector{{-3.0, 3.0}}, 10000);
  CHECK(a.rows() == 10000);
  CHECK(std::abs(a.col(0).mean() + 3.0) < 0.05);
  CHECK(std::abs(a.col(1).mean() - 3.0) < 0.05);

  const Matrix b = gaussian_sample(rng, Vector{{5.0, 5.0}}, 10000);
  for (Index j = 0; j < 2; ++j) {
    const double m = b.col(j).mean();
    const double var = (b.col(j).array() - m).square().sum() / (b.rows() - 1);
    CHECK(std::abs(var - 1.0) < 0.1);
  }

  Rng r1 = rng_create(5), r2 = rng_create(5);
  CHECK(gaussian_sample(r1, Vector::Zero(1), 1)(0, 0) == gaussian_sample(r2, Vector::Zero(1), 1)(0, 0));
}

TEST_CASE("gaussian mean test over 1e5 draws at 4 standard errors") {
  Rng rng = rng_create(2024);
  const Vector mean{{1.5, -0.5, 0.0}};
  const Matrix x = gaussian_sample(rng, mean, 100000);
  const double se = 1.0 / std::sqrt(100000.0);
  for (Index j = 0; j < 3; ++j) CHECK(std::abs(x.col(j).mean() - mean(j)) < 4.0 * se);
}

TEST_CASE("gaussian_sample rejects empty shapes") {
  Rng rng = rng_create(0);
  CHECK_THROWS_AS(gaussian_sample(rng, Vector(0), 3), ArgumentError);
  CHECK_THROWS_AS(gaussian_sample(rng, Vector::Zero(2), 0), ArgumentError);
}

TEST_CASE("softmax cases") {
  const Vector a = softmax(Vector{{0.0, 0.0}});
  CHECK(a(0) == doctest::Approx(0.5));
  CHECK(a(1) == doctest::Approx(0.5));

  const Vector b = softmax(Vector{{std::log(2.0), 0.0}});
  CHECK(b(0) == doctest::Approx(2.0 / 3.0));
  CHECK(b(1) == doctest::Approx(1.0 / 3.0));

  const Vector c = softmax(Vector{{1000.0, 0.0}});
  CHECK(std::isfinite(c(0)));
  CHECK(c(0) == 1.0);
  CHECK(c(1) == doctest::Approx(0.0));

  const Vector v{{0.3, -1.2, 2.5}};
  const Vector shifted = softmax(Vector((v.array() + 123.0).matrix()));
  CHECK((softmax(v) - shifted).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("softmax sums to one for long random inputs") {
  Rng rng = rng_create(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 1 + rng.below(1024);
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = (rng.uniform() - 0.5) * 2000.0;
    const Vector p = softmax(v);
    CHECK(p.minCoeff() >= 0.0);
    CHECK(std::abs(p.sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("logsumexp cases and bounds") {
  CHECK(logsumexp(Vector{{0.0}}) == 0.0);
  CHECK(logsumexp(Vector{{2.5, 2.5}}) == doctest::Approx(2.5 + std::log(2.0)));
  const double big = logsumexp(Vector{{1000.0, 1000.0}});
  CHECK(std::isfinite(big));
  CHECK(big == doctest::Approx(1000.0 + std::log(2.0)));
  CHECK_THROWS_AS(logsumexp(Vector(0)), ArgumentError);

  Rng rng = rng_create(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 1 + rng.below(64);
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = (rng.uniform() - 0.5) * 100.0;
    const double l = logsumexp(v);
    CHECK(l >= v.maxCoeff());
    CHECK(l <= v.maxCoeff() + std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST_CASE("entropy and argmax helpers") {
  CHECK(entropy(Vector{{1.0, 0.0}}) == 0.0);
  CHECK(entropy(Vector::Constant(4, 0.25)) == doctest::Approx(std::log(4.0)));
  CHECK(argmax(Vector{{1.0, 3.0, 3.0}}) == 1);
  CHECK(argmin(Vector{{2.0, 1.0, 1.0}}) == 1);
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5));
}

TEST_CASE("permutation is a seeded bijection") {
  Rng a = rng_create(1), b = rng_create(1);
  const auto p = permutation(a, 500);
  CHECK(p == permutation(b, 500));
  std::vector<int> seen(500, 0);
  for (const auto i : p) ++seen[static_cast<std::size_t>(i)];
  for (const int s : seen) CHECK(s == 1);
}
