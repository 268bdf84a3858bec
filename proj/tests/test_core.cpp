#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "anchorcal/core.hpp"
#include "anchorcal/error.hpp"
#include "anchorcal/random.hpp"

using namespace anchorcal;

TEST_CASE("zero perturbation is the identity") {
  const AnchorSizes s{1.9, 4.5, 1.6};
  const auto r = apply_perturbation(s, {0, 0, 0}, 0.1);
  CHECK(r.sizes == s);
  CHECK_FALSE(r.clamped);
}

TEST_CASE("perturbation adds componentwise") {
  const auto r = apply_perturbation({1.9, 4.5, 1.6}, {0.2, -0.3, 0.1}, 0.1);
  CHECK(r.sizes.w() == doctest::Approx(2.1));
  CHECK(r.sizes.l() == doctest::Approx(4.2));
  CHECK(r.sizes.h() == doctest::Approx(1.7));
  CHECK_FALSE(r.clamped);
}

TEST_CASE("positivity floor engages and is reported") {
  const auto r = apply_perturbation({0.3, 4.5, 1.6}, {-0.5, 0, 0}, 0.1);
  CHECK(r.sizes.w() == 0.1);
  CHECK(r.sizes.l() == 4.5);
  CHECK(r.sizes.h() == 1.6);
  CHECK(r.clamped);
}

TEST_CASE("floor must be positive") {
  CHECK_THROWS_AS(apply_perturbation({1, 1, 1}, {}, 0.0), Error);
  CHECK_THROWS_AS(apply_perturbation({1, 1, 1}, {}, -1.0), Error);
}

TEST_CASE("perturbation then its negation restores the sizes") {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const AnchorSizes s{uniform(rng, 1, 3), uniform(rng, 3, 6), uniform(rng, 1, 2)};
    const SizePerturbation eps{uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5)};
    const auto there = apply_perturbation(s, eps);
    REQUIRE_FALSE(there.clamped);
    const auto back = apply_perturbation(there.sizes, -eps);
    for (Axis a : kAllAxes) CHECK(back.sizes[a] == doctest::Approx(s[a]).epsilon(1e-15));
  }
}

TEST_CASE("perturbation is monotone in eps") {
  Rng rng(12);
  const AnchorSizes s{0.4, 4.0, 1.5};
  for (int i = 0; i < 1000; ++i) {
    SizePerturbation a{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
    SizePerturbation b{a.dw + uniform(rng, 0, 1), a.dl + uniform(rng, 0, 1), a.dh + uniform(rng, 0, 1)};
    const auto ra = apply_perturbation(s, a).sizes;
    const auto rb = apply_perturbation(s, b).sizes;
    for (Axis ax : kAllAxes) CHECK(ra[ax] <= rb[ax]);
  }
}

TEST_CASE("anchor sizes reject non-positive and non-finite components") {
  CHECK_THROWS_AS(AnchorSizes(0.0, 1.0, 1.0), Error);
  CHECK_THROWS_AS(AnchorSizes(1.0, -1.0, 1.0), Error);
  CHECK_THROWS_AS(AnchorSizes(1.0, 1.0, std::numeric_limits<double>::infinity()), Error);
  CHECK_THROWS_AS(AnchorSizes(std::nan(""), 1.0, 1.0), Error);
}

TEST_CASE("anchor yaw is normalized to [-pi, pi)") {
  constexpr double pi = std::numbers::pi;
  CHECK(Anchor(0, 0, 0, {1, 1, 1}, pi).theta() == doctest::Approx(-pi));
  CHECK(Anchor(0, 0, 0, {1, 1, 1}, -pi).theta() == doctest::Approx(-pi));
  CHECK(Anchor(0, 0, 0, {1, 1, 1}, 3 * pi / 2).theta() == doctest::Approx(-pi / 2));
  CHECK(Anchor(0, 0, 0, {1, 1, 1}, 0.25).theta() == 0.25);
  for (double t = -20; t < 20; t += 0.37) {
    const double n = normalize_angle(t);
    CHECK(n >= -pi);
    CHECK(n < pi);
    CHECK(std::cos(n) == doctest::Approx(std::cos(t)));
    CHECK(std::sin(n) == doctest::Approx(std::sin(t)));
  }
}

TEST_CASE("axis names round trip") {
  for (Axis a : kAllAxes) CHECK(parse_axis(axis_name(a)) == a);
  CHECK_THROWS_AS(parse_axis("x"), Error);
}

TEST_CASE("feature vectors must be finite") {
  CHECK_THROWS_AS(FeatureVector({1.0, std::nan("")}), Error);
  CHECK(FeatureVector({1.0, 2.0}).dim() == 2);
}

TEST_CASE("feature database enforces its dimension") {
  FeatureDatabase db(3);
  CHECK(db.empty());
  db.push_back(std::vector<double>{1, 2, 3});
  CHECK(db.size() == 1);
  try {
    db.push_back(std::vector<double>{1, 2});
    FAIL("expected a dimension mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DimensionMismatch);
  }
  try {
    db.push_back(std::vector<double>{1, std::numeric_limits<double>::infinity(), 2});
    FAIL("expected a non-finite error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonFiniteInput);
  }
  CHECK(db.size() == 1);
  CHECK_THROWS_AS(FeatureDatabase(0), Error);
}

TEST_CASE("feature database stores single precision") {
  FeatureDatabase db(1);
  db.push_back(std::vector<double>{0.1});
  CHECK(db.row(0)[0] == static_cast<double>(0.1f));
}

TEST_CASE("feature database append and truncate") {
  FeatureDatabase a(2), b(2);
  a.push_back(std::vector<double>{1, 2});
  b.push_back(std::vector<double>{3, 4});
  b.push_back(std::vector<double>{5, 6});
  a.append(b);
  CHECK(a.size() == 3);
  CHECK(a.row(2)[1] == 6);
  a.truncate(1);
  CHECK(a.size() == 1);
  CHECK_THROWS_AS(a.append(FeatureDatabase(3)), Error);
}

TEST_CASE("poisson sampler matches its mean and variance") {
  for (double mean : {0.5, 4.0, 25.0, 400.0}) {
    Rng rng(5);
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
      const double x = static_cast<double>(poisson(rng, mean));
      s += x;
      s2 += x * x;
    }
    const double m = s / n, v = s2 / n - m * m;
    // Five standard errors of the sample mean.
    CHECK(std::fabs(m - mean) < 5 * std::sqrt(mean / n));
    CHECK(v == doctest::Approx(mean).epsilon(0.03));
  }
}

TEST_CASE("standard normal sampler moments") {
  Rng rng(6);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = standard_normal(rng);
    s += x;
    s2 += x * x;
  }
  CHECK(std::fabs(s / n) < 5 / std::sqrt(n));
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));
}
