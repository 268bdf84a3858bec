#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "anchorcal/error.hpp"
#include "anchorcal/gmm.hpp"
#include "anchorcal/random.hpp"
#include "oracles.hpp"

using namespace anchorcal;

namespace {

Gmm standard_normal_2d() { return Gmm(2, {1.0}, {0.0, 0.0}, {1.0, 1.0}); }

oracle::Mixture random_mixture(std::size_t k, std::size_t d, Rng& rng) {
  oracle::Mixture m{d, {}, {}, {}};
  double total = 0;
  for (std::size_t i = 0; i < k; ++i) {
    m.weights.push_back(uniform(rng, 0.2, 1.0));
    total += m.weights.back();
    m.means.emplace_back();
    m.stddevs.emplace_back();
    for (std::size_t j = 0; j < d; ++j) {
      m.means.back().push_back(uniform(rng, -2, 2));
      m.stddevs.back().push_back(uniform(rng, 0.5, 1.5));
    }
  }
  for (auto& w : m.weights) w /= total;
  return m;
}

Gmm to_gmm(const oracle::Mixture& m) {
  std::vector<double> means, vars;
  for (std::size_t k = 0; k < m.weights.size(); ++k) {
    for (std::size_t d = 0; d < m.dim; ++d) {
      means.push_back(m.means[k][d]);
      vars.push_back(m.stddevs[k][d] * m.stddevs[k][d]);
    }
  }
  return Gmm(m.dim, m.weights, means, vars);
}

}  // namespace

TEST_CASE("standard normal at its mean") {
  const std::vector<double> f{0.0, 0.0};
  CHECK(standard_normal_2d().log_pdf(f) == doctest::Approx(-std::log(2 * std::numbers::pi)).epsilon(1e-14));
  CHECK(standard_normal_2d().log_pdf(f) == doctest::Approx(-1.837877).epsilon(1e-6));
}

TEST_CASE("mixture of duplicates equals the single component") {
  const Gmm one(3, {1.0}, {0.5, -1.0, 2.0}, {0.3, 1.2, 0.7});
  const Gmm two(3, {0.5, 0.5}, {0.5, -1.0, 2.0, 0.5, -1.0, 2.0}, {0.3, 1.2, 0.7, 0.3, 1.2, 0.7});
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> f{uniform(rng, -3, 3), uniform(rng, -3, 3), uniform(rng, -3, 3)};
    CHECK(two.log_pdf(f) == doctest::Approx(one.log_pdf(f)).epsilon(1e-13));
  }
}

TEST_CASE("log_pdf matches a naive extended-precision evaluation") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_mixture(3, 4, rng);
    const Gmm g = to_gmm(m);
    for (int i = 0; i < 20; ++i) {
      std::vector<double> f(4);
      for (auto& x : f) x = uniform(rng, -3, 3);
      const double expected = static_cast<double>(oracle::naive_log_pdf(m, f));
      CHECK(g.log_pdf(f) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("log_pdf stays finite far from every component") {
  const Gmm g(2, {1.0}, {0, 0}, {1e-6, 1e-6});
  const std::vector<double> f{1e3, -1e3};
  CHECK(std::isfinite(g.log_pdf(f)));
}

TEST_CASE("log_pdf rejects a dimension mismatch") {
  const std::vector<double> f{0.0, 0.0, 0.0};
  try {
    (void)standard_normal_2d().log_pdf(f);
    FAIL("expected a dimension mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DimensionMismatch);
  }
}

TEST_CASE("gmm constructor validates its parameters") {
  CHECK_THROWS_AS(Gmm(1, {0.5, 0.4}, {0, 1}, {1, 1}), Error);  // weights do not sum to 1
  CHECK_THROWS_AS(Gmm(1, {1.0}, {0}, {0}), Error);             // zero variance
  CHECK_THROWS_AS(Gmm(2, {1.0}, {0}, {1}), Error);             // shape
  CHECK_THROWS_AS(Gmm(1, {}, {}, {}), Error);                  // K = 0
}

TEST_CASE("K=1 fit is the closed-form Gaussian MLE") {
  Rng rng(3);
  FeatureDatabase db(3);
  for (int i = 0; i < 500; ++i) {
    db.push_back(std::vector<double>{normal(rng, 1, 2), normal(rng, -1, 0.5), uniform(rng, 0, 1)});
  }
  EmConfig cfg;
  cfg.k = 1;
  const Gmm g = fit_em(db, cfg);
  for (std::size_t d = 0; d < 3; ++d) {
    long double s = 0, s2 = 0;
    for (std::size_t i = 0; i < db.size(); ++i) s += db.row(i)[d];
    const long double mean = s / db.size();
    for (std::size_t i = 0; i < db.size(); ++i) s2 += (db.row(i)[d] - mean) * (db.row(i)[d] - mean);
    CHECK(g.mean(0)[d] == doctest::Approx(static_cast<double>(mean)).epsilon(1e-12));
    CHECK(g.variance(0)[d] == doctest::Approx(static_cast<double>(s2 / db.size())).epsilon(1e-10));
  }
  CHECK(g.weights()[0] == 1.0);
}

TEST_CASE("two-component mixture is recovered") {
  const oracle::Mixture truth{4,
                              {0.3, 0.7},
                              {std::vector<double>(4, -5.0), std::vector<double>(4, 5.0)},
                              {std::vector<double>(4, 1.0), std::vector<double>(4, 1.0)}};
  const auto db = oracle::sample(truth, 2000, 17);
  EmConfig cfg;
  cfg.k = 2;
  const auto fit = fit_em_detailed(db, cfg);
  const Gmm& g = fit.model;
  // Best permutation: component 0 is whichever mean is negative.
  const std::size_t neg = g.mean(0)[0] < 0 ? 0 : 1;
  const std::size_t order[2] = {neg, 1 - neg};
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t d = 0; d < 4; ++d) CHECK(std::fabs(g.mean(order[k])[d] - truth.means[k][d]) < 0.15);
    CHECK(std::fabs(g.weights()[order[k]] - truth.weights[k]) < 0.05);
  }
  for (const auto& trace : fit.ll_traces) {
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] >= trace[i - 1] - 1e-9);
  }
}

TEST_CASE("identical samples collapse to the variance floor") {
  FeatureDatabase db(3);
  for (int i = 0; i < 50; ++i) db.push_back(std::vector<double>{0.25, -1.5, 3.0});
  EmConfig cfg;
  cfg.k = 2;
  const Gmm g = fit_em(db, cfg);
  for (std::size_t k = 0; k < g.components(); ++k) {
    CHECK(g.mean(k)[0] == 0.25);
    CHECK(g.mean(k)[1] == -1.5);
    CHECK(g.mean(k)[2] == 3.0);
    for (double v : g.variance(k)) CHECK(v == cfg.variance_floor);
  }
}

TEST_CASE("fit_em needs at least k samples") {
  FeatureDatabase db(2);
  db.push_back(std::vector<double>{0, 0});
  EmConfig cfg;
  cfg.k = 2;
  try {
    fit_em(db, cfg);
    FAIL("expected insufficient samples");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InsufficientSamples);
  }
}

TEST_CASE("EM config validation names the field") {
  EmConfig cfg;
  cfg.k = 0;
  try {
    cfg.validate();
    FAIL("expected invalid config");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidConfig);
    CHECK(std::string(e.what()).find("em.k") != std::string::npos);
  }
}

TEST_CASE("EM log-likelihood never decreases within a restart") {
  Rng rng(4);
  const auto m = random_mixture(4, 6, rng);
  const auto db = oracle::sample(m, 3000, 5);
  EmConfig cfg;
  cfg.k = 5;
  cfg.restarts = 4;
  const auto fit = fit_em_detailed(db, cfg);
  REQUIRE(fit.ll_traces.size() == 4);
  for (const auto& trace : fit.ll_traces) {
    REQUIRE(trace.size() >= 2);
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] >= trace[i - 1] - 1e-9);
  }
  for (const auto& trace : fit.ll_traces) CHECK(fit.final_average_ll >= trace.back());
  CHECK(fit.final_average_ll == doctest::Approx(fitness(db, fit.model)).epsilon(1e-12));
}

TEST_CASE("fit_em ignores row order and thread count") {
  Rng rng(6);
  const auto m = random_mixture(3, 5, rng);
  const auto db = oracle::sample(m, 800, 7);
  FeatureDatabase shuffled(db.dim());
  std::vector<std::size_t> idx(db.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[uniform_index(rng, i + 1)]);
  for (auto i : idx) shuffled.push_back(db.row(i));
  EmConfig cfg;
  cfg.k = 3;
  cfg.seed = 99;
  const Gmm a = fit_em(db, cfg, 1);
  CHECK(fit_em(shuffled, cfg, 1) == a);
  CHECK(fit_em(db, cfg, 4) == a);
  CHECK(fitness(shuffled, a) == fitness(db, a));
  CHECK(fitness(db, a, 3) == fitness(db, a, 1));
}

TEST_CASE("fitness of a singleton is its log density") {
  FeatureDatabase db(2);
  db.push_back(std::vector<double>{0, 0});
  CHECK(fitness(db, standard_normal_2d()) == doctest::Approx(-std::log(2 * std::numbers::pi)).epsilon(1e-14));
}

TEST_CASE("fitness is invariant to duplicating the database") {
  Rng rng(8);
  const auto m = random_mixture(2, 3, rng);
  const Gmm g = to_gmm(m);
  const auto db = oracle::sample(m, 257, 9);
  FeatureDatabase tripled = db;
  tripled.append(db);
  tripled.append(db);
  CHECK(std::fabs(fitness(tripled, g) - fitness(db, g)) <= 1e-12);
}

TEST_CASE("fitness of an empty database is an error") {
  try {
    fitness(FeatureDatabase(2), standard_normal_2d());
    FAIL("expected zero features");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ZeroFeatures);
  }
}

TEST_CASE("fitness is bounded by the largest component peak") {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_mixture(3, 4, rng);
    const Gmm g = to_gmm(m);
    const auto db = oracle::sample(m, 200, 11 + trial);
    CHECK(fitness(db, g) <= g.peak_log_density());
  }
}

TEST_CASE("fitness converges to the expected log-likelihood") {
  Rng rng(12);
  const auto m = random_mixture(3, 4, rng);
  const Gmm g = to_gmm(m);
  const auto db = oracle::sample(m, 10000, 13);
  // Monte Carlo estimate of E[log p(f)] with the naive density.
  Rng mc(14);
  const std::size_t n = 1000000;
  long double sum = 0;
  std::vector<double> f(4);
  for (std::size_t i = 0; i < n; ++i) {
    double u = uniform01(mc);
    std::size_t k = 0;
    while (k + 1 < m.weights.size() && u >= m.weights[k]) u -= m.weights[k++];
    for (std::size_t d = 0; d < 4; ++d) f[d] = m.means[k][d] + m.stddevs[k][d] * standard_normal(mc);
    sum += oracle::naive_log_pdf(m, f);
  }
  const double expected = static_cast<double>(sum / n);
  CHECK(std::fabs(fitness(db, g) - expected) < 0.05);
}
