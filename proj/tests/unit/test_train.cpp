#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

#include "doctest.h"
#include "deepmide/config.hpp"
#include "deepmide/gradcheck.hpp"
#include "deepmide/simulate.hpp"
#include "deepmide/train.hpp"
#include "oracles.hpp"

using namespace deepmide;
using namespace deepmide::train;

namespace {

LikelihoodInput input_for(const oracle::RandomInstance& in, std::size_t burn_in = 0) {
  LikelihoodInput li;
  li.sites = in.sites;
  li.n_heights = in.n_heights;
  li.residuals = &in.residuals;
  li.theta = &in.theta;
  li.init_variance = in.init_variance;
  li.kernel_epoch = in.kernel_epoch;
  li.normalize = in.normalize;
  li.burn_in = burn_in;
  return li;
}

std::string fixture(const std::string& name) { return std::string(DEEPMIDE_FIXTURE_DIR) + "/" + name; }

}  // namespace

TEST_CASE("likelihood equals the joint-gaussian marginal") {
  std::mt19937_64 rng(41);
  for (int rep = 0; rep < 40; ++rep) {
    const auto in = oracle::random_instance(rng, 1 + rep % 3, 1 + rep % 2, 1 + rep % 5);
    const auto want = oracle::solve_chain(in.chain);
    const auto got = kf_gradients(input_for(in), in.omega, false);
    CHECK(oracle::rel_diff(-got.nll, want.loglik) <= 1e-8);
  }
}

TEST_CASE("likelihood gradients match central differences") {
  std::mt19937_64 rng(42);
  for (int rep = 0; rep < 5; ++rep) {
    auto in = oracle::random_instance(rng, 2, 2, 4);
    const auto li = input_for(in, 1);
    const auto g = kf_gradients(li, in.omega, true);
    const auto base = in.omega.to_array();
    for (std::size_t k = 0; k < base.size(); ++k) {
      const double h = 1e-5 * base[k];
      auto up = base, dn = base;
      up[k] += h;
      dn[k] -= h;
      const double fd = (kf_gradients(li, StatParams::from_array(up), false).nll -
                         kf_gradients(li, StatParams::from_array(dn), false).nll) / (2 * h);
      CHECK(extractor::relative_error(g.omega_bar[k], fd) <= 1e-4);
    }
    for (std::size_t t = 1; t < in.theta.n_times(); ++t)
      for (std::size_t p = 0; p < 2; ++p)
        for (int c = 0; c < 2; ++c) {
          const double orig = in.theta.at(t, p)(c);
          const double h = 1e-5 * std::max(1.0, std::abs(orig));
          in.theta.at(t, p)(c) = orig + h;
          const double fu = kf_gradients(li, in.omega, false).nll;
          in.theta.at(t, p)(c) = orig - h;
          const double fdn = kf_gradients(li, in.omega, false).nll;
          in.theta.at(t, p)(c) = orig;
          CHECK(extractor::relative_error(g.theta_bar.at(t, p)(c), (fu - fdn) / (2 * h)) <= 1e-4);
        }
  }
}

TEST_CASE("measurement-noise derivative of a single scalar step") {
  // One site, one height, theta = 0 gives K = 1; sigma_eta ~ 0.
  oracle::RandomInstance in;
  in.sites = {Vec2(0, 0)};
  in.n_heights = 1;
  in.omega.sigma_eta = 1e-9;
  in.omega.sigma_eps = 0.7;
  in.residuals = ObservationPanel({0, 600}, 600, 1, 1);
  in.residuals.set(0, 0, 0, 0.4);
  in.residuals.set(1, 0, 0, 1.9);
  in.theta = kernel::AdvectionSet(2, 1);
  in.init_variance = Vec::Constant(1, 0.8);
  const auto g = kf_gradients(input_for(in), in.omega, true);
  const double s = 0.8 + 0.49, d = 1.5;
  CHECK(g.nll == doctest::Approx(0.5 * (std::log(2 * std::numbers::pi) + std::log(s) + d * d / s)).epsilon(1e-12));
  CHECK(g.omega_bar[2] == doctest::Approx(0.5 * (2 * 0.7 / s - d * d * 2 * 0.7 / (s * s))).epsilon(1e-10));
}

TEST_CASE("advection gradient vanishes for a flat kernel") {
  std::mt19937_64 rng(43);
  auto in = oracle::random_instance(rng, 2, 2, 4);
  in.omega.ell_same = in.omega.ell_cross = 1e6;
  const auto g = kf_gradients(input_for(in), in.omega, true);
  for (std::size_t t = 0; t < in.theta.n_times(); ++t)
    for (std::size_t p = 0; p < 2; ++p) CHECK(g.theta_bar.at(t, p).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("composite gradient check through the extractor") {
  const auto r = composite_gradient_check(7, 5, 40);
  CHECK(r.passed);
  CHECK(r.instances == 5);
  CHECK(r.coordinates >= 200);
  CHECK(r.max_rel_error <= 1e-3);
}

TEST_CASE("statistical parameters are positive through softplus") {
  FittedModel m;
  m.omega_raw.fill(-40.0);
  for (double v : m.omega().to_array()) CHECK(v > 0.0);
  StatParams p;
  p.ell_same = 3.5;
  p.sigma_eta = 0.02;
  m.set_omega(p);
  CHECK(m.omega().ell_same == doctest::Approx(3.5).epsilon(1e-12));
  CHECK(m.omega().sigma_eta == doctest::Approx(0.02).epsilon(1e-12));
}

TEST_CASE("training config validation") {
  TrainingConfig c;
  CHECK_NOTHROW(c.validate());
  c.burn_in = c.subsequence;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.clip_norm = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("omega recovered with the true advection supplied") {
  const auto fx = simulate::read_fixture(fixture("small-3x3"));
  const auto cfg = config::load_run_config(fixture("small-3x3.cfg"));
  ModelConfig mc = cfg.model;
  mc.extractor.in_channels = fx.maps.meta().channels.size();
  mc.extractor.height = fx.maps.meta().height;
  mc.extractor.width = fx.maps.meta().width;
  mc.extractor.n_heights = fx.heights.size();
  TrainingConfig tc = cfg.training;
  tc.max_epochs = 300;
  const auto m = offline_fit(fx.speeds, fx.sites, fx.heights, fx.maps, mc, tc, &fx.theta);
  const auto got = m.omega();
  CHECK(std::abs(got.sigma_eta / fx.omega.sigma_eta - 1.0) <= 0.2);
  CHECK(std::abs(got.ell_same / fx.omega.ell_same - 1.0) <= 0.2);
}

TEST_CASE("measurement-noise profile likelihood peaks at the truth") {
  // State-space draws from the kernel model with every other parameter fixed.
  std::mt19937_64 rng(44);
  std::normal_distribution<double> g;
  oracle::RandomInstance in;
  in.sites = {Vec2(0, 0), Vec2(25, 0), Vec2(10, 20)};
  in.n_heights = 2;
  in.omega = {12.0, 9.0, 0.5, 15.0, 0.6, 12.0};
  in.normalize = true;
  const std::size_t T = 3000, d = 6;
  std::vector<UnixSeconds> times;
  for (std::size_t t = 0; t < T; ++t) times.push_back(1'600'000'200 - 1'600'000'200 % 600 + 600 * static_cast<UnixSeconds>(t));
  in.residuals = ObservationPanel(times, 600, 3, 2);
  in.theta = kernel::AdvectionSet(T, 2);
  in.init_variance = Vec::Constant(d, 1.0);
  const Mat lq = oracle::sqrt_psd(kernel::build_noise_cov(kernel::NoiseKind::eta, in.omega.noise(), in.sites, 2));
  const Mat lr = oracle::sqrt_psd(kernel::build_noise_cov(kernel::NoiseKind::epsilon, in.omega.noise(), in.sites, 2));
  Vec y = Vec::Zero(d), w(d);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t p = 0; p < 2; ++p) in.theta.at(t, p) = Vec2(3.0, 1.0 + p);
    const Mat k = kernel::build_propagator(static_cast<double>(kernel::kernel_step_index(times[t], 600, 6)),
                                           in.theta.step(t), in.sites, in.omega.kernel(), true);
    for (auto& v : w) v = g(rng);
    y = k * y + lq * w;
    for (auto& v : w) v = g(rng);
    const Vec z = y + lr * w;
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t j = 0; j < 3; ++j) in.residuals.set(t, j, p, z(static_cast<Eigen::Index>(p * 3 + j)));
  }
  const auto li = input_for(in, 6);
  double best = 1e300, arg = 0.0;
  for (int k = 1; k <= 20; ++k) {
    auto om = in.omega;
    om.sigma_eps = 0.05 * k;
    const double nll = kf_gradients(li, om, false).nll;
    if (nll < best) best = nll, arg = om.sigma_eps;
  }
  CHECK(std::abs(arg - 0.5) <= 0.05 + 1e-12);
}

TEST_CASE("online update freezes the network and tracks a noise regime change") {
  simulate::SimulationConfig sc;
  sc.sites = {{"a", Vec2(0, 0)}, {"b", Vec2(30, 0)}, {"c", Vec2(15, 25)}};
  sc.heights = {100.0, 150.0};
  sc.n_times = 432;
  sc.seed = 5;
  sc.omega = {12.0, 2.0, 0.15, 20.0, 1.0, 25.0};  // sigma_eta doubled from 0.5
  sc.kernel_epoch = 1;
  sc.normalize_propagator = false;
  sc.advection.kind = simulate::AdvectionKind::constant;
  sc.advection.constant = Vec2(4.0, 1.0);
  sc.level = {4.0, 4.0};
  sc.box_cox = {1.0, 0.0};
  sc.raster_width = sc.raster_height = 9;
  const auto truth = simulate::simulate_process(sc);

  FittedModel m;
  m.structure.sites = truth.sites;
  m.structure.heights = truth.heights;
  m.structure.kernel_epoch = 1;
  extractor::ExtractorConfig ec;
  ec.height = ec.width = 9;
  ec.n_heights = 2;
  ec.context = 2;
  m.network = extractor::init_params(ec, 3);
  m.map_stats.mean.assign(3, 0.0);
  m.map_stats.stddev.assign(3, 1.0);
  StatParams old = sc.omega;
  old.sigma_eta = 0.5;
  m.set_omega(old);
  m.box_cox = sc.box_cox;
  m.diurnal = preprocess::DiurnalModel::fit(preprocess::transform_panel(truth.speeds, m.box_cox));
  m.init_variance = Vec::Constant(6, 1.0);
  const auto before = checksum(m.network);

  TrainingConfig tc;
  tc.lr_omega = 0.5;
  tc.online_iterations = 20;
  tc.online_refit_box_cox = false;

  const auto empty = truth.speeds.slice(0, 0);
  const auto same = online_update(m, empty, truth.maps, tc, &truth.theta);
  CHECK(same.omega_raw == m.omega_raw);

  const auto up = online_update(m, truth.speeds, truth.maps, tc, &truth.theta);
  CHECK(checksum(up.network) == before);
  CHECK(up.network.values == m.network.values);
  const double moved = (up.omega().sigma_eta - 0.5) / (1.0 - 0.5);
  CHECK(moved >= 0.3);
}

TEST_CASE("training is deterministic at a fixed seed and thread count") {
  const auto fx = simulate::read_fixture(fixture("small-3x3"));
  const auto cfg = config::load_run_config(fixture("small-3x3.cfg"));
  ModelConfig mc = cfg.model;
  mc.extractor.in_channels = fx.maps.meta().channels.size();
  mc.extractor.height = fx.maps.meta().height;
  mc.extractor.width = fx.maps.meta().width;
  mc.extractor.n_heights = fx.heights.size();
  mc.extractor.theta_max = 30.0;
  TrainingConfig tc = cfg.training;
  tc.max_epochs = 5;
  const auto panel = fx.speeds.slice(0, 600);
  for (std::size_t threads : {std::size_t{1}, std::size_t{3}}) {
    tc.threads = threads;
    const auto a = offline_fit(panel, fx.sites, fx.heights, fx.maps, mc, tc);
    const auto b = offline_fit(panel, fx.sites, fx.heights, fx.maps, mc, tc);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t e = 0; e < a.log.size(); ++e) {
      CHECK(std::memcmp(&a.log[e].train_nll, &b.log[e].train_nll, sizeof(double)) == 0);
      CHECK(std::memcmp(&a.log[e].val_nll, &b.log[e].val_nll, sizeof(double)) == 0);
    }
    CHECK(a.network.values == b.network.values);
    CHECK(a.omega_raw == b.omega_raw);
  }
}

// The per-epoch training loss averages randomly offset subsequences, so it
// fluctuates once the fit levels off. Reported, not enforced.
TEST_CASE("training loss is non-increasing in most epochs" * doctest::may_fail()) {
  const auto fx = simulate::read_fixture(fixture("small-3x3"));
  ModelConfig mc;
  mc.extractor.in_channels = fx.maps.meta().channels.size();
  mc.extractor.height = fx.maps.meta().height;
  mc.extractor.width = fx.maps.meta().width;
  mc.extractor.n_heights = fx.heights.size();
  const auto panel = fx.speeds.slice(0, 1400);
  const auto m = offline_fit(panel, fx.sites, fx.heights, fx.maps, mc, TrainingConfig{});
  std::size_t ok = 0;
  for (std::size_t e = 1; e < m.log.size(); ++e) ok += m.log[e].train_nll <= m.log[e - 1].train_nll;
  const double frac = static_cast<double>(ok) / static_cast<double>(m.log.size() - 1);
  MESSAGE("non-increasing epochs: " << ok << " of " << m.log.size() - 1);
  CHECK(frac >= 0.9);
}
