#include <random>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "deepmide/kernel.hpp"
#include "deepmide/linalg.hpp"
#include "oracles.hpp"

using namespace deepmide;
using namespace deepmide::kernel;

namespace {

std::vector<Vec2> random_theta(std::mt19937_64& rng, std::size_t P, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<Vec2> out;
  for (std::size_t p = 0; p < P; ++p) out.emplace_back(g(rng), g(rng));
  return out;
}

double dense_spectral_radius(const Mat& k) {
  return Eigen::EigenSolver<Mat>(k, false).eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("kernel step index counts steps within the epoch") {
  CHECK(kernel_step_index(0, 600, 6) == 0);
  CHECK(kernel_step_index(600 * 7, 600, 6) == 1);
  CHECK(kernel_step_index(600 * 7 + 599, 600, 6) == 1);
  CHECK(kernel_step_index(-600, 600, 6) == 5);
  CHECK(kernel_step_index(-1, 600, 6) == 5);
  CHECK(kernel_step_index(123456, 600, 1) == 0);
  CHECK(kernel_step_index(123456, 600, 0) == 0);
}

TEST_CASE("propagator entries equal the scalar kernel") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rep % 4, P = 1 + rep % 3;
    const auto sites = oracle::random_sites(rng, n, 60.0);
    const auto theta = random_theta(rng, P, 5.0);
    const KernelParams kp{5.0 + 20.0 * u(rng), 5.0 + 20.0 * u(rng)};
    const double t = static_cast<double>(rep % 6);
    const Mat k = build_propagator(t, theta, sites, kp, false);
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t q = 0; q < P; ++q)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double want = oracle::kernel_value(p == q, sites[i], sites[j], t, theta[p], theta[q], kp.ell_same, kp.ell_cross);
            const double got = k(static_cast<Eigen::Index>(p * n + i), static_cast<Eigen::Index>(q * n + j));
            CHECK(oracle::rel_diff(got, want) <= 1e-12);
            CHECK(got > 0.0);
            CHECK(got <= 1.0);
            CHECK(oracle::rel_diff(eval_kernel(p, q, sites[i], sites[j], t, theta[p], theta[q], kp), want) <= 1e-12);
          }
  }
}

TEST_CASE("kernel equals one exactly at zero displacement") {
  const Vec2 tp(2.0, -1.0), tq(0.5, 3.0), x(10.0, 4.0);
  const double t = 3.0;
  const Vec2 s = x + tp * t - tq * (t + 1.0);
  CHECK(eval_kernel(0, 1, s, x, t, tp, tq, {10.0, 12.0}) == 1.0);
  CHECK(eval_kernel(0, 1, s + Vec2(0.1, 0.0), x, t, tp, tq, {10.0, 12.0}) < 1.0);
}

TEST_CASE("diagonal blocks do not depend on the step index when heights share theta") {
  std::mt19937_64 rng(12);
  const auto sites = oracle::random_sites(rng, 3, 40.0);
  const std::vector<Vec2> theta(3, Vec2(4.0, -2.5));
  const KernelParams kp{12.0, 7.0};
  const Mat a = build_propagator(0.0, theta, sites, kp, false);
  const Mat b = build_propagator(5.0, theta, sites, kp, false);
  for (int p = 0; p < 3; ++p) CHECK((a.block(3 * p, 3 * p, 3, 3) - b.block(3 * p, 3 * p, 3, 3)).norm() <= 1e-15);
}

TEST_CASE("normalized propagator rows sum to at most one") {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 100; ++rep) {
    const auto sites = oracle::random_sites(rng, 3, 20.0);
    const auto theta = random_theta(rng, 3, 3.0);
    const Mat k = build_propagator(static_cast<double>(rep % 6), theta, sites, {30.0, 30.0}, true);
    for (Eigen::Index r = 0; r < k.rows(); ++r) CHECK(k.row(r).sum() <= 1.0 + 1e-12);
    const double rho = dense_spectral_radius(k);
    CHECK(rho <= 1.0 + 1e-10);
    const auto sr = spectral_radius(k);
    CHECK(sr.converged);
    CHECK(std::abs(sr.value - rho) < 1e-6);
  }
}

TEST_CASE("spectral radius examples") {
  CHECK(spectral_radius(Mat::Identity(4, 4)).value == doctest::Approx(1.0).epsilon(1e-12));
  Mat d = Mat::Zero(2, 2);
  d(0, 0) = 0.5;
  d(1, 1) = 0.2;
  CHECK(spectral_radius(d).value == doctest::Approx(0.5).epsilon(1e-8));
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 30; ++rep) {
    Mat k(6, 6);
    for (int i = 0; i < 36; ++i) k.data()[i] = u(rng);
    CHECK(std::abs(spectral_radius(k).value - dense_spectral_radius(k)) < 1e-6);
  }
}

TEST_CASE("noise covariances are symmetric PSD with zero cross-height blocks") {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(0.05, 3.0);
  for (int rep = 0; rep < 100; ++rep) {
    const auto sites = oracle::random_sites(rng, 1 + rep % 6, 80.0);
    const NoiseCovParams np{u(rng), 10.0 * u(rng), u(rng), 10.0 * u(rng)};
    for (auto kind : {NoiseKind::epsilon, NoiseKind::eta}) {
      const Mat c = build_noise_cov(kind, np, sites, 2);
      CHECK((c - c.transpose()).norm() == 0.0);
      CHECK(linalg::min_eigenvalue(c) >= -1e-8 * c.trace() / static_cast<double>(c.rows()));
      const auto n = static_cast<Eigen::Index>(sites.size());
      CHECK(c.block(0, n, n, n).norm() == 0.0);
      const double sigma = kind == NoiseKind::epsilon ? np.sigma_eps : np.sigma_eta;
      CHECK(c(0, 0) == doctest::Approx(sigma * sigma));
    }
  }
}

TEST_CASE("propagator backward matches finite differences") {
  std::mt19937_64 rng(16);
  for (bool normalize : {false, true}) {
    const auto sites = oracle::random_sites(rng, 3, 25.0);
    auto theta = random_theta(rng, 2, 3.0);
    const KernelParams kp{9.0, 14.0};
    std::normal_distribution<double> g;
    Mat k_bar(6, 6);
    for (int i = 0; i < 36; ++i) k_bar.data()[i] = g(rng);
    const auto loss = [&](const std::vector<Vec2>& th, const KernelParams& p) {
      return (build_propagator(2.0, th, sites, p, normalize).array() * k_bar.array()).sum();
    };
    std::vector<Vec2> theta_bar(2, Vec2::Zero());
    double es = 0.0, ec = 0.0;
    propagator_backward(2.0, theta, sites, kp, normalize, k_bar, theta_bar, es, ec);
    const double h = 1e-6;
    for (std::size_t p = 0; p < 2; ++p)
      for (int c = 0; c < 2; ++c) {
        auto up = theta, dn = theta;
        up[p](c) += h;
        dn[p](c) -= h;
        CHECK(theta_bar[p](c) == doctest::Approx((loss(up, kp) - loss(dn, kp)) / (2 * h)).epsilon(1e-6));
      }
    CHECK(es == doctest::Approx((loss(theta, {kp.ell_same + h, kp.ell_cross}) - loss(theta, {kp.ell_same - h, kp.ell_cross})) / (2 * h)).epsilon(1e-6));
    CHECK(ec == doctest::Approx((loss(theta, {kp.ell_same, kp.ell_cross + h}) - loss(theta, {kp.ell_same, kp.ell_cross - h})) / (2 * h)).epsilon(1e-6));
  }
}
