#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "deepmide/preprocess.hpp"

using namespace deepmide;
using namespace deepmide::preprocess;

TEST_CASE("box-cox closed forms") {
  CHECK(apply_box_cox(4.0, {0.5, 0.0}) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(apply_box_cox(7.25, {1.0, 0.0}) == doctest::Approx(6.25).epsilon(1e-15));
  CHECK(apply_box_cox(std::exp(1.5), {0.0, 0.0}) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(apply_box_cox(3.0, {0.0, 1.0}) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
}

TEST_CASE("box-cox inverse round trips and is monotone") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> v(0.01, 30.0);
  for (double lambda : {0.0, 0.25, 0.5, 1.0}) {
    const BoxCoxParam bc{lambda, 0.0};
    double prev_v = 0.0, prev_w = -1e300;
    for (int k = 1; k <= 300; ++k) {
      const double x = v(rng);
      CHECK(std::abs(invert_box_cox(apply_box_cox(x, bc), bc) - x) <= 1e-12 * std::max(1.0, x));
      const double grid = 0.1 * k;
      const double w = apply_box_cox(grid, bc);
      if (grid > prev_v) CHECK(w > prev_w);
      prev_v = grid;
      prev_w = w;
    }
  }
}

TEST_CASE("box-cox domain errors") {
  CHECK_THROWS_AS(apply_box_cox(-1.0, {0.5, 0.0}), DomainError);
  CHECK_THROWS_AS(apply_box_cox(0.0, {0.0, 0.0}), DomainError);
  CHECK(apply_box_cox(0.0, {0.5, 0.0}) == doctest::Approx(-2.0));
  CHECK_NOTHROW(apply_box_cox(0.0, {0.0, 0.5}));
  CHECK_THROWS_AS(invert_box_cox(-3.0, {0.5, 0.0}), DomainError);
  CHECK_THROWS_AS(invert_box_cox(std::nan(""), {0.5, 0.0}), DomainError);
  const std::vector<double> with_zero{0.0, 1.0, 2.0, 3.0};
  CHECK_THROWS_AS(fit_box_cox(with_zero, 0.0), PreconditionError);
  CHECK_NOTHROW(fit_box_cox(with_zero, 0.5));
}

TEST_CASE("box-cox power recovered on transformed-gaussian samples") {
  // Samples whose transform is exactly Gaussian; the profile maximum should
  // sit at the generating power.
  struct Case {
    double lambda, mu, sd;
  };
  for (const auto c : {Case{0.0, 1.5, 0.5}, Case{0.5, 2.0, 0.6}, Case{1.0, 4.0, 1.0}}) {
    std::mt19937_64 rng(100 + static_cast<int>(10 * c.lambda));
    std::normal_distribution<double> g(c.mu, c.sd);
    std::vector<double> v;
    while (v.size() < 20000) {
      const double w = g(rng);
      if (c.lambda > 0.0 && 1.0 + c.lambda * w <= 0.0) continue;
      v.push_back(invert_box_cox(w, {c.lambda, 0.0}));
    }
    CHECK(std::abs(fit_box_cox(v).lambda - c.lambda) <= 0.05);
  }
}

TEST_CASE("diurnal residuals are orthogonal to the regressors") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> noise(0.0, 0.4);
  std::vector<double> hours, values;
  for (int t = 0; t < 500; ++t) {
    const double h = 1'600'000.0 + t / 6.0;
    hours.push_back(h);
    values.push_back(t % 17 == 0 ? std::nan("") : 3.0 + 0.7 * std::sin(2 * std::numbers::pi * h / 24.0) + noise(rng));
  }
  const auto fit = fit_diurnal(hours, values);
  std::array<double, kDiurnalTerms> dot{};
  for (std::size_t t = 0; t < hours.size(); ++t) {
    if (std::isnan(values[t])) {
      CHECK(std::isnan(fit.residuals[t]));
      continue;
    }
    const auto x = diurnal_regressors(hours[t]);
    for (std::size_t k = 0; k < kDiurnalTerms; ++k) dot[k] += x[k] * fit.residuals[t];
  }
  for (double d : dot) CHECK(std::abs(d) <= 1e-8);
  CHECK(fit.coefficients[0] == doctest::Approx(3.0).epsilon(0.05));
  CHECK(fit.coefficients[1] == doctest::Approx(0.7).epsilon(0.15));
}

TEST_CASE("diurnal fit preconditions") {
  std::vector<double> hours{0, 1, 2, 3}, values{1, 2, 3, 4};
  CHECK_THROWS_AS(fit_diurnal(hours, values), PreconditionError);
  std::vector<double> h6{0, 2, 4, 6, 8, 10}, v6{1, 2, 1, 2, 1, 2};
  CHECK_THROWS_AS(fit_diurnal(h6, v6), PreconditionError);
  std::vector<double> same(10, 5.0), vals(10, 1.0);
  CHECK_THROWS(fit_diurnal(same, vals));
}

TEST_CASE("semivariogram definition and invariants") {
  const std::vector<double> a{1, 2, 3, 4, 5, 6};
  const std::vector<double> b{0, 0, 1, 1, 0, 0};
  // lag 1: t = 0..3, pairs (a[t+1], b[t]) = (2,0),(3,0),(4,1),(5,1)
  CHECK(semivariogram(a, b, 1) == doctest::Approx((4.0 + 9.0 + 9.0 + 16.0) / 8.0));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  std::vector<double> x(300), y(300), xs(300), ys(300);
  for (int t = 0; t < 300; ++t) {
    x[t] = g(rng);
    y[t] = g(rng);
    xs[t] = x[t] + 7.5;
    ys[t] = y[t] + 7.5;
  }
  for (std::size_t u = 0; u < 10; ++u) {
    CHECK(semivariogram(x, y, u) >= 0.0);
    CHECK(semivariogram(xs, ys, u) == doctest::Approx(semivariogram(x, y, u)).epsilon(1e-12));
    CHECK(asymmetry(x, y, u) == -asymmetry(y, x, u));
  }
  CHECK_THROWS_AS(semivariogram(a, b, 5), PreconditionError);
  const std::vector<std::uint8_t> none(6, 0);
  CHECK_THROWS_AS(semivariogram(a, b, 1, none), PreconditionError);
}

TEST_CASE("asymmetry sign follows the travel direction") {
  // j lags i by 3 steps: r_j[t] = r_i[t - 3].
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  std::vector<double> ri(2000), rj(2000);
  for (auto& v : ri) v = g(rng);
  for (std::size_t t = 0; t < rj.size(); ++t) rj[t] = t >= 3 ? ri[t - 3] + 0.1 * g(rng) : g(rng);
  // delta(j, i, 3) pairs r_j[t+3] with r_i[t], which nearly coincide.
  CHECK(asymmetry(ri, rj, 3) > 0.5);
}

TEST_CASE("regimes split at 8 m/s") {
  ObservationPanel raw({0, 600, 1200}, 600, 2, 1);
  raw.set(0, 0, 0, 7.0);
  raw.set(0, 1, 0, 9.0);  // mean exactly 8: ties go to strong
  raw.set(1, 0, 0, 8.0);
  const auto r = classify_regimes(raw);
  CHECK(*r[0] == Regime::strong);
  CHECK(*r[1] == Regime::strong);
  CHECK_FALSE(r[2].has_value());
  raw.set(0, 1, 0, 7.0);
  CHECK(*classify_regimes(raw)[0] == Regime::weak);
}
