#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "deepmide/io.hpp"
#include "deepmide/preprocess.hpp"
#include "deepmide/simulate.hpp"

using namespace deepmide;
using namespace deepmide::simulate;

namespace {

SimulationConfig base_config() {
  SimulationConfig c;
  c.sites = {{"w", Vec2(0, 0)}, {"e", Vec2(30, 0)}, {"n", Vec2(15, 26)}};
  c.heights = {100.0, 140.0};
  c.n_times = 600;
  c.seed = 17;
  c.omega = {12.0, 3.0, 0.15, 20.0, 0.5, 25.0};
  c.kernel_epoch = 1;
  c.normalize_propagator = true;
  c.advection.kind = AdvectionKind::constant;
  c.advection.constant = Vec2(5.0, 0.0);
  c.level = {3.0, 3.0};
  c.raster_width = c.raster_height = 16;
  return c;
}

// Argmax over cyclic shifts d of sum_x b(x + d) a(x) for one raster plane.
std::pair<int, int> best_shift(const std::vector<float>& a, const std::vector<float>& b, int w, int h) {
  double best = -1e300;
  std::pair<int, int> arg{0, 0};
  for (int dy = -h / 2; dy < h / 2; ++dy)
    for (int dx = -w / 2; dx < w / 2; ++dx) {
      double s = 0.0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          s += static_cast<double>(b[static_cast<std::size_t>(((y + dy + h) % h) * w + (x + dx + w) % w)]) *
               a[static_cast<std::size_t>(y * w + x)];
      if (s > best) best = s, arg = {dx, dy};
    }
  return arg;
}

std::vector<float> plane(const extractor::WeatherMap& m, std::size_t c, std::size_t size) {
  return {m.data.begin() + static_cast<std::ptrdiff_t>(c * size), m.data.begin() + static_cast<std::ptrdiff_t>((c + 1) * size)};
}

}  // namespace

TEST_CASE("noiseless identity dynamics keep observations constant") {
  auto c = base_config();
  c.sites = {{"a", Vec2(0, 0)}, {"b", Vec2(500, 0)}};
  c.heights = {100.0};
  c.omega.sigma_eps = 0.0;
  c.omega.sigma_eta = 0.0;
  c.advection.kind = AdvectionKind::zero;
  c.diurnal_amplitude = {0.0};
  c.level = {3.0};
  c.initial_state = 0.7;
  const auto t = simulate_process(c);
  for (std::size_t r = 0; r < t.transformed.n_times(); ++r)
    for (std::size_t j = 0; j < 2; ++j) CHECK(t.transformed.value(r, j, 0) == doctest::Approx(3.7).epsilon(1e-15));
}

TEST_CASE("simulation is bit-reproducible") {
  const auto c = base_config();
  const auto a = simulate_process(c);
  const auto b = simulate_process(c);
  CHECK(a.latent == b.latent);
  for (std::size_t r = 0; r < a.speeds.n_times(); ++r)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t p = 0; p < 2; ++p) CHECK(a.speeds.value(r, j, p) == b.speeds.value(r, j, p));
  REQUIRE(a.maps.size() == b.maps.size());
  for (std::size_t m = 0; m < a.maps.size(); ++m) CHECK(a.maps[m].data == b.maps[m].data);
}

TEST_CASE("un-normalized unstable kernels are refused unless allowed") {
  auto c = base_config();
  c.normalize_propagator = false;
  c.omega.ell_same = 60.0;
  c.omega.ell_cross = 60.0;
  CHECK_THROWS_AS(simulate_process(c), PreconditionError);
  c.allow_unstable = true;
  c.n_times = 20;
  CHECK_NOTHROW(simulate_process(c));
}

TEST_CASE("static tracer without advection") {
  auto c = base_config();
  c.advection.kind = AdvectionKind::zero;
  c.map_noise = 0.0;
  const auto t = simulate_process(c);
  const auto size = c.raster_width * c.raster_height;
  for (std::size_t m = 1; m < t.maps.size(); ++m) CHECK(plane(t.maps[m], 0, size) == plane(t.maps[0], 0, size));
}

TEST_CASE("tracer moves by theta per map step") {
  auto c = base_config();
  c.map_noise = 0.0;
  // 6 observation steps per map and 10 km pixels: (10/3, -5/3) km per step
  // moves the field by (-2, +1) pixels per map.
  c.advection.constant = Vec2(10.0 / 3.0, -5.0 / 3.0);
  const auto t = simulate_process(c);
  const int w = static_cast<int>(c.raster_width), h = static_cast<int>(c.raster_height);
  const auto size = c.raster_width * c.raster_height;
  for (std::size_t m = c.context_pad + 1; m + 1 < t.maps.size(); m += 17) {
    const auto d = best_shift(plane(t.maps[m], 0, size), plane(t.maps[m + 1], 0, size), w, h);
    CHECK(d.first == -2);
    CHECK(d.second == 1);
  }
  // The proxy channels carry theta directly.
  CHECK(t.maps[t.maps.size() - 1].data[size] == doctest::Approx(10.0 / 3.0).epsilon(1e-6));
  CHECK(t.maps[t.maps.size() - 1].data[2 * size] == doctest::Approx(-5.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("measurement noise sample covariance converges") {
  auto c = base_config();
  c.n_times = 10000;
  c.box_cox = {1.0, 0.0};
  c.raster_width = c.raster_height = 8;
  const auto t = simulate_process(c);
  const std::size_t d = 6;
  Mat s = Mat::Zero(d, d);
  Vec e(d);
  for (std::size_t r = 0; r < c.n_times; ++r) {
    const double hours = preprocess::hours_since_epoch(t.transformed.time(r));
    const double trend = 0.3 * std::cos(2.0 * std::numbers::pi * (hours - c.diurnal_peak_hour) / 24.0);
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t j = 0; j < 3; ++j) {
        const auto k = static_cast<Eigen::Index>(p * 3 + j);
        e(k) = t.transformed.value(r, j, p) - 3.0 - trend - t.latent(static_cast<Eigen::Index>(r), k);
      }
    s += e * e.transpose();
  }
  s /= static_cast<double>(c.n_times);
  const Mat want = kernel::build_noise_cov(kernel::NoiseKind::epsilon, c.omega.noise(), t.sites.coords(), 2);
  CHECK((s - want).norm() / want.norm() < 0.1);
}

TEST_CASE("fixture files round trip") {
  auto c = base_config();
  c.n_times = 150;
  c.missing_rate = 0.05;
  const auto t = simulate_process(c);
  const auto dir = (std::filesystem::temp_directory_path() / "deepmide_fixture_rt").string();
  std::filesystem::remove_all(dir);
  write_fixture(t, dir);
  const auto back = read_fixture(dir);
  CHECK(back.seed == c.seed);
  CHECK(back.omega.to_array() == c.omega.to_array());
  REQUIRE(back.speeds.n_times() == t.speeds.n_times());
  for (std::size_t r = 0; r < t.speeds.n_times(); ++r)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t p = 0; p < 2; ++p) {
        CHECK(back.speeds.observed(r, j, p) == t.speeds.observed(r, j, p));
        if (t.speeds.observed(r, j, p)) CHECK(back.speeds.value(r, j, p) == t.speeds.value(r, j, p));
      }
  for (std::size_t r = 0; r < t.theta.n_times(); ++r)
    for (std::size_t p = 0; p < 2; ++p) CHECK(back.theta.at(r, p) == t.theta.at(r, p));
  REQUIRE(back.maps.size() == t.maps.size());
  for (std::size_t m = 0; m < t.maps.size(); ++m) {
    CHECK(back.maps[m].time == t.maps[m].time);
    CHECK(back.maps[m].data == t.maps[m].data);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("advection schedule respects its bounds") {
  auto c = base_config();
  c.n_times = 3000;
  c.advection.kind = AdvectionKind::piecewise;
  c.advection.norm_min = 2.0;
  c.advection.norm_max = 9.0;
  c.advection.height_scale = {1.0, 1.5};
  const auto t = simulate_process(c);
  for (std::size_t r = 0; r < c.n_times; ++r) {
    CHECK(t.theta.norm(r, 0) >= 2.0 - 1e-12);
    CHECK(t.theta.norm(r, 0) <= 9.0 + 1e-12);
    CHECK(t.theta.norm(r, 1) == doctest::Approx(1.5 * t.theta.norm(r, 0)));
  }
}

TEST_CASE("config validation") {
  auto c = base_config();
  c.level = {1.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = base_config();
  c.missing_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = base_config();
  c.sites.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
