#include <filesystem>
#include <numbers>
#include <string>

#include "doctest.h"
#include "deepmide/config.hpp"
#include "deepmide/io.hpp"
#include "deepmide/simulate.hpp"
#include "deepmide/train.hpp"

using namespace deepmide;

namespace {

std::string fixture(const std::string& name) { return std::string(DEEPMIDE_FIXTURE_DIR) + "/" + name; }

std::string scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "deepmide_io_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

std::string error_of(const std::string& text) {
  try {
    config::build_run_config(config::IniFile::parse(text, "test.cfg"));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("ISO-8601 timestamps") {
  CHECK(io::format_iso8601(0) == "1970-01-01T00:00:00Z");
  CHECK(io::parse_iso8601("2020-07-01T00:00:00Z") == 1'593'561'600);
  CHECK(io::parse_iso8601("2020-07-01T00:10:00+00:00") == 1'593'562'200);
  CHECK(io::parse_iso8601("2020-07-01T00:10:00") == 1'593'562'200);
  for (UnixSeconds t : {UnixSeconds{951'782'400}, UnixSeconds{1'600'000'200}, UnixSeconds{4'102'444'799}})
    CHECK(io::parse_iso8601(io::format_iso8601(t)) == t);
  CHECK_THROWS(io::parse_iso8601("2020-13-01T00:00:00Z"));
  CHECK_THROWS(io::parse_iso8601("yesterday"));
}

TEST_CASE("shortest double text reads back exactly") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 7.0})
    CHECK(std::stod(io::format_double(v)) == v);
  CHECK(io::format_double(7.0) == "7");
}

TEST_CASE("CSV field splitting") {
  const auto f = io::split_csv_line(" a, b ,,c\r");
  REQUIRE(f.size() == 4);
  CHECK(f[0] == "a");
  CHECK(f[1] == "b");
  CHECK(f[2].empty());
  CHECK(f[3] == "c");
}

TEST_CASE("lat/lon sites project about their centroid") {
  const auto xy = io::project_lat_lon({30.0, 31.0}, {10.0, 10.0});
  const double deg = 6371.0088 * std::numbers::pi / 180.0;
  CHECK(xy[1].y() - xy[0].y() == doctest::Approx(deg).epsilon(1e-12));
  CHECK(xy[0].x() == doctest::Approx(0.0));
  CHECK(xy[0].y() == doctest::Approx(-0.5 * deg).epsilon(1e-12));

  const auto path = scratch("sites_latlon.csv");
  io::write_text(path, "site_id,lat,lon\nA,30.5,10\nB,30.5,11\n");
  const auto sites = io::read_sites(path);
  CHECK(sites[1].coords.x() - sites[0].coords.x() == doctest::Approx(deg * std::cos(30.5 * std::numbers::pi / 180.0)));
  io::write_text(path, "id,a,b\nA,1,2\n");
  CHECK_THROWS_AS(io::read_sites(path), IoError);
}

TEST_CASE("observation, site and map files round trip") {
  const auto fx = simulate::read_fixture(fixture("small-3x3"));
  const auto panel = fx.speeds.slice(100, 260);
  const auto obs = scratch("obs.csv"), sites = scratch("sites.csv"), maps = scratch("maps");
  io::write_observations(panel, fx.sites, fx.heights, obs);
  io::write_sites_planar(fx.sites, sites);
  std::filesystem::remove_all(maps);
  io::write_map_stream(fx.maps, maps);

  const auto s2 = io::read_sites(sites);
  REQUIRE(s2.size() == fx.sites.size());
  for (std::size_t j = 0; j < s2.size(); ++j) {
    CHECK(s2[j].id == fx.sites[j].id);
    CHECK(s2[j].coords == fx.sites[j].coords);
  }
  const auto back = io::read_observations(obs, s2);
  CHECK(back.heights.values() == fx.heights.values());
  REQUIRE(back.panel.n_times() == panel.n_times());
  CHECK(back.panel.times() == panel.times());
  CHECK(back.panel.step_seconds() == 600);
  for (std::size_t t = 0; t < panel.n_times(); ++t)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t p = 0; p < 3; ++p) {
        CHECK(back.panel.observed(t, j, p) == panel.observed(t, j, p));
        if (panel.observed(t, j, p)) CHECK(back.panel.value(t, j, p) == panel.value(t, j, p));
      }

  const auto m2 = io::read_map_stream(maps);
  CHECK(m2.meta().channels == fx.maps.meta().channels);
  CHECK(m2.meta().bbox == fx.maps.meta().bbox);
  REQUIRE(m2.size() == fx.maps.size());
  for (std::size_t m = 0; m < m2.size(); ++m) {
    CHECK(m2[m].time == fx.maps[m].time);
    CHECK(m2[m].data == fx.maps[m].data);
  }
}

TEST_CASE("model files round trip byte for byte") {
  const auto fx = simulate::read_fixture(fixture("small-3x3"));
  train::ModelConfig mc;
  mc.extractor.in_channels = fx.maps.meta().channels.size();
  mc.extractor.height = fx.maps.meta().height;
  mc.extractor.width = fx.maps.meta().width;
  mc.extractor.n_heights = fx.heights.size();
  mc.extractor.conv1_channels = 2;
  mc.extractor.conv2_channels = 2;
  mc.extractor.features = 4;
  mc.extractor.theta_max = 30.0;
  train::TrainingConfig tc;
  tc.max_epochs = 1;
  const auto model = train::offline_fit(fx.speeds.slice(0, 300), fx.sites, fx.heights, fx.maps, mc, tc);
  const auto a = scratch("model_a.bin"), b = scratch("model_b.bin");
  io::save_model(model, a);
  const auto back = io::load_model(a);
  io::save_model(back, b);
  CHECK(io::read_text(a) == io::read_text(b));
  CHECK(back.network.values == model.network.values);
  CHECK(back.omega_raw == model.omega_raw);
  CHECK(back.init_variance == model.init_variance);
  CHECK(back.box_cox.lambda == model.box_cox.lambda);
  CHECK(back.structure.sites.size() == 3);
  CHECK(back.log.size() == model.log.size());

  io::write_text(b, "not a model");
  CHECK_THROWS(io::load_model(b));
}

TEST_CASE("fixture config loads") {
  const auto cfg = config::load_run_config(fixture("small-3x3.cfg"));
  CHECK(cfg.seed == 20200701);
  CHECK(cfg.has_simulation);
  CHECK(cfg.simulation.sites.size() == 3);
  CHECK(cfg.simulation.heights == std::vector<double>{100, 140, 180});
  CHECK(cfg.simulation.start_time == 1'593'561'600);
  CHECK(cfg.model.omega_init.sigma_eta == 0.3);
  CHECK(cfg.theta_max == 30.0);
  CHECK(cfg.training.clip_norm == 1.0);
  CHECK(cfg.protocol.stride == 36);
}

TEST_CASE("config errors name the key and line") {
  const auto unknown = error_of("seed = 3\n[training]\nlearning_rate = 0.1\n");
  CHECK(unknown.find("test.cfg:3") != std::string::npos);
  CHECK(unknown.find("training.learning_rate") != std::string::npos);

  const auto bad = error_of("\n[training]\nbatch = four\n");
  CHECK(bad.find("test.cfg:3") != std::string::npos);
  CHECK(bad.find("training.batch") != std::string::npos);

  CHECK(error_of("[model]\nsigma_eta = -1\n").find("sigma_eta") != std::string::npos);
  CHECK(error_of("seed = 1\nseed = 2\n").find("duplicate") != std::string::npos);
  CHECK(!error_of("[model\n").empty());
  CHECK(!error_of("just words\n").empty());
  CHECK(error_of("# comment\n; other\n[training]\nbatch = 2\n").empty());
  CHECK(error_of("training.batch = 2\n").empty());
}
