#include <random>

#include "doctest.h"
#include "deepmide/linalg.hpp"
#include "deepmide/ssm.hpp"
#include "oracles.hpp"

using namespace deepmide;
using namespace deepmide::ssm;

namespace {

// Runs the library filter over an oracle chain problem.
std::vector<FilterState> run_filter(const oracle::ChainProblem& c) {
  std::vector<FilterState> out;
  FilterState s;
  s.belief = {c.m0, c.p0};
  const auto d = static_cast<std::size_t>(c.m0.size());
  for (std::size_t t = 0; t < c.k.size(); ++t) {
    s = filter_step(s, c.k[t], c.q, c.z[t], oracle::selection(c.cols[t], d), c.r);
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("filter matches joint-gaussian conditioning") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 60; ++rep) {
    const auto in = oracle::random_instance(rng, 1 + rep % 3, 1 + rep % 2, 1 + rep % 5);
    const auto want = oracle::solve_chain(in.chain);
    const auto got = run_filter(in.chain);
    for (std::size_t t = 0; t < got.size(); ++t) {
      CHECK(oracle::rel_diff(got[t].belief.mean, want.mean[t]) <= 1e-8);
      CHECK(oracle::rel_diff(got[t].belief.cov, want.cov[t]) <= 1e-8);
    }
    CHECK(oracle::rel_diff(got.back().loglik, want.loglik) <= 1e-8);
  }
}

TEST_CASE("filter covariances stay symmetric PSD and updates never add variance") {
  std::mt19937_64 rng(22);
  for (int rep = 0; rep < 40; ++rep) {
    const auto in = oracle::random_instance(rng, 3, 2, 5);
    const auto& c = in.chain;
    GaussianBelief b{c.m0, c.p0};
    for (std::size_t t = 0; t < c.k.size(); ++t) {
      const auto pred = kf_predict(b, c.k[t], c.q);
      const auto upd = kf_update(pred, c.z[t], oracle::selection(c.cols[t], 6), c.r);
      const double scale = pred.cov.trace() / 6.0;
      CHECK((upd.belief.cov - upd.belief.cov.transpose()).norm() <= 1e-12 * upd.belief.cov.norm());
      CHECK(linalg::min_eigenvalue(upd.belief.cov) >= -1e-8 * scale);
      CHECK(linalg::min_eigenvalue(pred.cov - upd.belief.cov) >= -1e-8 * scale);
      b = upd.belief;
    }
  }
}

TEST_CASE("sequential scalar updates equal the joint update with diagonal noise") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> g;
  for (int rep = 0; rep < 30; ++rep) {
    const Eigen::Index d = 5;
    Mat a(d, d);
    for (int i = 0; i < d * d; ++i) a.data()[i] = g(rng);
    const GaussianBelief prior{Vec::Random(d), a * a.transpose() + 0.2 * Mat::Identity(d, d)};
    Vec rdiag(d);
    for (int i = 0; i < d; ++i) rdiag(i) = 0.1 + std::abs(g(rng));
    const Mat r = rdiag.asDiagonal();
    const std::vector<std::size_t> cols{0, 2, 3};
    Vec z(3);
    z << g(rng), g(rng), g(rng);
    const auto joint = kf_update(prior, z, oracle::selection(cols, d), r);
    GaussianBelief b = prior;
    double ll = 0.0;
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const auto step = kf_update(b, z.segment(static_cast<Eigen::Index>(k), 1), oracle::selection({cols[k]}, d), r);
      b = step.belief;
      ll += step.loglik;
    }
    CHECK(std::abs(ll - joint.loglik) <= 1e-9 * std::max(1.0, std::abs(joint.loglik)));
    CHECK(oracle::rel_diff(b.mean, joint.belief.mean) <= 1e-9);
    CHECK(oracle::rel_diff(b.cov, joint.belief.cov) <= 1e-9);
  }
}

TEST_CASE("empty observation map leaves the belief alone") {
  const GaussianBelief b{Vec::Ones(3), Mat::Identity(3, 3)};
  const auto u = kf_update(b, Vec(), oracle::selection({}, 3), Mat::Identity(3, 3));
  CHECK(u.loglik == 0.0);
  CHECK(u.belief.mean == b.mean);
  CHECK_THROWS_AS(kf_update(b, Vec::Ones(2), oracle::selection({1}, 3), Mat::Identity(3, 3)), PreconditionError);
}

TEST_CASE("step log-likelihood is the gaussian density") {
  Vec v(2);
  v << 0.3, -1.2;
  Mat s(2, 2);
  s << 2.0, 0.4, 0.4, 1.0;
  const double want = -std::log(2 * std::numbers::pi) - 0.5 * std::log(s.determinant()) - 0.5 * v.dot(s.inverse() * v);
  CHECK(step_loglik(v, s) == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("forecast matches joint-gaussian marginalization") {
  std::mt19937_64 rng(24);
  for (int rep = 0; rep < 20; ++rep) {
    auto in = oracle::random_instance(rng, 2 + rep % 2, 2, 6);
    // The last three steps are the forecast steps: no observations there.
    auto& c = in.chain;
    std::vector<std::size_t> obs_cols(c.m0.size());
    for (std::size_t k = 0; k < obs_cols.size(); ++k) obs_cols[k] = k;
    for (std::size_t t = 3; t < 6; ++t) {
      c.cols[t].clear();
      c.z[t] = Vec();
    }
    const auto want = oracle::solve_chain(c);
    FilterState s;
    s.belief = {c.m0, c.p0};
    const auto d = static_cast<std::size_t>(c.m0.size());
    for (std::size_t t = 0; t < 3; ++t) s = filter_step(s, c.k[t], c.q, c.z[t], oracle::selection(c.cols[t], d), c.r);
    const std::vector<Mat> props(c.k.begin() + 3, c.k.end());
    const std::vector<ObservationMap> maps{oracle::selection(obs_cols, d)};
    const auto f = forecast(s.belief, props, c.q, c.r, maps);
    REQUIRE(f.steps.size() == 3);
    for (std::size_t h = 0; h < 3; ++h) {
      CHECK(oracle::rel_diff(f.steps[h].latent_mean, want.mean[3 + h]) <= 1e-10);
      CHECK(oracle::rel_diff(f.steps[h].latent_cov, want.cov[3 + h]) <= 1e-10);
      CHECK(oracle::rel_diff(f.steps[h].obs_cov, Mat(want.cov[3 + h] + c.r)) <= 1e-10);
    }
  }
}

TEST_CASE("identity dynamics: one-step forecast and growing variance") {
  const Eigen::Index d = 4;
  Mat pc(d, d);
  pc << 2, 0.3, 0, 0, 0.3, 1, 0.1, 0, 0, 0.1, 1.5, 0.2, 0, 0, 0.2, 1;
  const GaussianBelief b{Vec::LinSpaced(d, 1, 4), pc};
  const Mat eps = 0.25 * Mat::Identity(d, d);
  std::vector<std::size_t> all{0, 1, 2, 3};
  const std::vector<ObservationMap> maps{oracle::selection(all, d)};
  const std::vector<Mat> one{Mat::Identity(d, d)};
  const auto f1 = forecast(b, one, Mat::Zero(d, d), eps, maps);
  CHECK(f1.steps[0].obs_mean == b.mean);
  CHECK((f1.steps[0].obs_cov - (eps + pc)).norm() <= 1e-15);

  const std::vector<Mat> many(10, Mat::Identity(d, d));
  const auto f = forecast(b, many, 0.1 * Mat::Identity(d, d), eps, maps);
  for (std::size_t h = 1; h < f.steps.size(); ++h)
    for (Eigen::Index k = 0; k < d; ++k) CHECK(f.steps[h].latent_cov(k, k) >= f.steps[h - 1].latent_cov(k, k));
  const auto iv = central_interval(f.steps[0], 2.0);
  CHECK(iv.hi(0) - iv.lo(0) == doctest::Approx(4.0 * std::sqrt(f.steps[0].obs_cov(0, 0))));
}

TEST_CASE("normal quantile") {
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.001) == doctest::Approx(-3.090232306167813).epsilon(1e-12));
  for (double p : {0.01, 0.2, 0.6, 0.99}) {
    CHECK(0.5 * std::erfc(-normal_quantile(p) / std::sqrt(2.0)) == doctest::Approx(p).epsilon(1e-13));
  }
  CHECK_THROWS_AS(normal_quantile(0.0), DomainError);
  CHECK_THROWS_AS(normal_quantile(1.0), DomainError);
}
