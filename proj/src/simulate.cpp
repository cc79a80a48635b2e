#include "deepmide/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "json.hpp"

#include "deepmide/io.hpp"
#include "deepmide/linalg.hpp"
#include "deepmide/pipeline.hpp"

namespace deepmide::simulate {

namespace {

using nlohmann::json;

// Independent generator per purpose, so e.g. changing the map noise leaves
// the simulated observations untouched.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

enum Purpose : std::uint64_t { kAdvection = 1, kProcess, kMeasurement, kMissing, kTracer, kMapNoise, kModelProcess, kModelMeasurement };

double per_height(const std::vector<double>& v, std::size_t p, double fallback) {
  return v.empty() ? fallback : v[p];
}

std::size_t map_ratio(const SimulationConfig& c) {
  return c.map_step_seconds % c.step_seconds == 0 ? static_cast<std::size_t>(c.map_step_seconds / c.step_seconds) : 1;
}

kernel::AdvectionSet make_schedule(const SimulationConfig& c) {
  const auto& a = c.advection;
  const auto P = c.heights.size();
  kernel::AdvectionSet theta(c.n_times, P);
  auto rng = stream(c.seed, kAdvection);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double deg = std::numbers::pi / 180.0;
  const auto draw_angle = [&] { return a.direction_deg ? *a.direction_deg * deg : 2.0 * std::numbers::pi * unit(rng); };
  const auto draw_norm = [&] { return a.norm_min + (a.norm_max - a.norm_min) * unit(rng); };

  std::vector<Vec2> base(c.n_times, Vec2::Zero());
  switch (a.kind) {
    case AdvectionKind::zero:
      break;
    case AdvectionKind::constant:
      std::fill(base.begin(), base.end(), a.constant);
      break;
    case AdvectionKind::piecewise: {
      // Segment lengths are whole map steps so every regime change lines up
      // with a map boundary.
      const auto r = map_ratio(c);
      std::size_t t = 0;
      while (t < c.n_times) {
        std::uniform_int_distribution<std::size_t> len(a.segment_min, a.segment_max);
        const auto n = std::max<std::size_t>(r, (len(rng) + r - 1) / r * r);
        const double ang = draw_angle();
        const double norm = draw_norm();
        const Vec2 v(norm * std::cos(ang), norm * std::sin(ang));
        for (std::size_t k = t; k < std::min(c.n_times, t + n); ++k) base[k] = v;
        t += n;
      }
      break;
    }
    case AdvectionKind::smooth: {
      const double mid = 0.5 * (a.norm_min + a.norm_max);
      const double phi = a.smooth_persistence;
      const double sd = 0.25 * (a.norm_max - a.norm_min) * std::sqrt(1.0 - phi * phi);
      std::normal_distribution<double> gauss(0.0, 1.0);
      double norm = draw_norm();
      double ang = draw_angle();
      for (std::size_t k = 0; k < c.n_times; ++k) {
        if (k > 0) {
          norm = std::clamp(mid + phi * (norm - mid) + sd * gauss(rng), a.norm_min, a.norm_max);
          if (!a.direction_deg) ang += a.smooth_turn_deg * deg * gauss(rng);
        }
        base[k] = Vec2(norm * std::cos(ang), norm * std::sin(ang));
      }
      break;
    }
  }
  for (std::size_t t = 0; t < c.n_times; ++t)
    for (std::size_t p = 0; p < P; ++p) theta.at(t, p) = per_height(a.height_scale, p, 1.0) * base[t];
  return theta;
}

// Lower Cholesky factor, or an empty matrix when the covariance is zero.
Mat noise_factor(double sigma, double ell, std::span<const Vec2> sites, std::size_t P) {
  if (sigma == 0.0) return {};
  const Mat cov = kernel::squared_exponential_cov(sigma, ell, sites, P);
  return linalg::robust_cholesky(cov, "simulation noise covariance").llt.matrixL();
}

Vec draw(const Mat& factor, Eigen::Index dim, std::mt19937_64& rng) {
  if (factor.size() == 0) return Vec::Zero(dim);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec z(dim);
  for (Eigen::Index k = 0; k < dim; ++k) z(k) = gauss(rng);
  return factor * z;
}

double speed_from(double w, const SimulationConfig& c) {
  const auto& bc = c.box_cox;
  if (bc.lambda != 0.0 && w <= -1.0 / bc.lambda) return c.min_speed;
  return std::max(c.min_speed, preprocess::invert_box_cox(w, bc));
}

}  // namespace

void SimulationConfig::validate() const {
  if (sites.empty() || heights.empty()) throw ConfigError("simulation needs sites and heights");
  SiteSet check_sites(sites);
  HeightLevels check_heights(heights);
  if (n_times < 2 || step_seconds <= 0 || map_step_seconds <= 0) throw ConfigError("simulation sizes must be positive");
  const auto w = omega.to_array();
  for (std::size_t k = 0; k < w.size(); ++k) {
    const bool is_sigma = k == 2 || k == 4;
    if (!std::isfinite(w[k]) || w[k] < 0.0 || (!is_sigma && w[k] == 0.0)) {
      throw ConfigError(std::string("simulate.") + StatParams::names()[k] + " is out of range");
    }
  }
  const auto P = heights.size();
  const auto check_len = [P](const std::vector<double>& v, const char* key) {
    if (!v.empty() && v.size() != P) throw ConfigError(std::string(key) + " needs one entry per height");
  };
  check_len(advection.height_scale, "simulate.height_scale");
  check_len(level, "simulate.level");
  check_len(diurnal_amplitude, "simulate.diurnal_amplitude");
  if (advection.norm_min < 0.0 || advection.norm_max < advection.norm_min) {
    throw ConfigError("advection norm range is invalid");
  }
  if (advection.segment_min == 0 || advection.segment_max < advection.segment_min) {
    throw ConfigError("advection segment range is invalid");
  }
  if (missing_rate < 0.0 || missing_rate >= 1.0) throw ConfigError("simulate.missing_rate must lie in [0, 1)");
  if (!(min_speed > 0.0)) throw ConfigError("simulate.min_speed must be positive");
  if (raster_width < 1 || raster_height < 1 || !(pixel_km > 0.0) || map_noise < 0.0) {
    throw ConfigError("raster geometry is invalid");
  }
}

extractor::MapStream render_weather_maps(const kernel::AdvectionSet& theta, const SimulationConfig& c) {
  const auto W = c.raster_width;
  const auto H = c.raster_height;
  const auto plane = W * H;
  Vec2 centre = Vec2::Zero();
  for (const auto& s : c.sites) centre += s.coords;
  centre /= static_cast<double>(c.sites.size());
  const double lx = static_cast<double>(W) * c.pixel_km;
  const double ly = static_cast<double>(H) * c.pixel_km;

  extractor::StreamMeta meta;
  meta.channels = {"tracer", "u_proxy", "v_proxy"};
  meta.width = W;
  meta.height = H;
  meta.bbox = {centre.x() - 0.5 * lx, centre.y() - 0.5 * ly, centre.x() + 0.5 * lx, centre.y() + 0.5 * ly};
  meta.step_seconds = c.map_step_seconds;

  // Tracer: random plane waves with whole periods across the raster, so a
  // displacement by whole pixels is an exact cyclic shift.
  struct Mode {
    double kx, ky, amp, phase;
  };
  auto trng = stream(c.seed, kTracer);
  std::uniform_int_distribution<int> wave(-2, 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Mode> modes;
  while (modes.size() < c.tracer_modes) {
    const int kx = wave(trng), ky = wave(trng);
    if (kx == 0 && ky == 0) continue;
    modes.push_back({static_cast<double>(kx), static_cast<double>(ky), 1.0 + unit(trng),
                     2.0 * std::numbers::pi * unit(trng)});
  }

  const UnixSeconds first = (c.start_time - c.start_time % c.map_step_seconds) -
                            static_cast<UnixSeconds>(c.context_pad) * c.map_step_seconds;
  const UnixSeconds last_obs = c.start_time + static_cast<UnixSeconds>(theta.n_times() - 1) * c.step_seconds;
  const auto n_maps = static_cast<std::size_t>((last_obs - first) / c.map_step_seconds) + 1;
  const double steps_per_map = static_cast<double>(c.map_step_seconds) / static_cast<double>(c.step_seconds);

  auto nrng = stream(c.seed, kMapNoise);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<extractor::WeatherMap> maps;
  maps.reserve(n_maps);
  Vec2 shift = Vec2::Zero();  // cumulative displacement of the tracer, km
  for (std::size_t m = 0; m < n_maps; ++m) {
    const UnixSeconds t = first + static_cast<UnixSeconds>(m) * c.map_step_seconds;
    const auto step = t <= c.start_time ? 0
                                        : std::min<std::size_t>(theta.n_times() - 1,
                                                                static_cast<std::size_t>((t - c.start_time) / c.step_seconds));
    const Vec2 th = theta.at(step, 0);
    // The field moves along -theta (a site draws its next value from s + theta).
    if (m > 0) shift -= th * steps_per_map;
    extractor::WeatherMap map;
    map.time = t;
    map.data.resize(3 * plane);
    for (std::size_t r = 0; r < H; ++r) {
      for (std::size_t col = 0; col < W; ++col) {
        const double x = (static_cast<double>(col) + 0.5) * c.pixel_km - shift.x();
        const double y = (static_cast<double>(r) + 0.5) * c.pixel_km - shift.y();
        double v = 0.0;
        for (const auto& md : modes) {
          v += md.amp * std::cos(2.0 * std::numbers::pi * (md.kx * x / lx + md.ky * y / ly) + md.phase);
        }
        const auto k = r * W + col;
        const double n0 = c.map_noise > 0.0 ? c.map_noise * gauss(nrng) : 0.0;
        const double n1 = c.map_noise > 0.0 ? c.map_noise * gauss(nrng) : 0.0;
        const double n2 = c.map_noise > 0.0 ? c.map_noise * gauss(nrng) : 0.0;
        map.data[k] = static_cast<float>(v + n0);
        map.data[plane + k] = static_cast<float>(th.x() + n1);
        map.data[2 * plane + k] = static_cast<float>(th.y() + n2);
      }
    }
    maps.push_back(std::move(map));
  }
  return extractor::MapStream(std::move(meta), std::move(maps));
}

SyntheticTruth simulate_process(const SimulationConfig& c) {
  c.validate();
  SyntheticTruth out;
  out.config = c;
  out.sites = SiteSet(c.sites);
  out.heights = HeightLevels(c.heights);
  const auto coords = out.sites.coords();
  const auto n = coords.size();
  const auto P = c.heights.size();
  const auto dim = static_cast<Eigen::Index>(n * P);
  const LatentIndexer indexer(n, P);

  out.theta = make_schedule(c);
  const auto kp = c.omega.kernel();
  const auto time_at = [&](std::size_t t) { return c.start_time + static_cast<UnixSeconds>(t) * c.step_seconds; };
  const auto propagator = [&](std::size_t t) {
    const auto k = kernel::kernel_step_index(time_at(t), c.step_seconds, c.kernel_epoch);
    return kernel::build_propagator(static_cast<double>(k), out.theta.step(t), coords, kp, c.normalize_propagator);
  };

  if (!c.normalize_propagator && !c.allow_unstable) {
    for (std::size_t t = 0; t < std::min<std::size_t>(c.n_times, static_cast<std::size_t>(c.kernel_epoch) + 1); ++t) {
      const auto rho = kernel::spectral_radius(propagator(t));
      if (rho.value > 1.0 + 1e-12) {
        throw PreconditionError("un-normalized propagator has spectral radius " + io::format_double(rho.value) +
                                " > 1 at step " + std::to_string(t) + "; enable normalization or allow_unstable");
      }
    }
  }

  const Mat l_eta = noise_factor(c.omega.sigma_eta, c.omega.ell_eta, coords, P);
  const Mat l_eps = noise_factor(c.omega.sigma_eps, c.omega.ell_eps, coords, P);
  auto prng = stream(c.seed, kProcess);
  auto mrng = stream(c.seed, kMeasurement);
  auto missing_rng = stream(c.seed, kMissing);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Vec y = Vec::Zero(dim);
  if (c.initial_state) {
    y.setConstant(*c.initial_state);
  } else {
    const Mat k0 = propagator(0);
    for (std::size_t s = 0; s < c.spinup; ++s) y = k0 * y + draw(l_eta, dim, prng);
  }

  std::vector<UnixSeconds> times(c.n_times);
  for (std::size_t t = 0; t < c.n_times; ++t) times[t] = time_at(t);
  out.latent.resize(static_cast<Eigen::Index>(c.n_times), dim);
  out.transformed = ObservationPanel(times, c.step_seconds, n, P);
  out.speeds = ObservationPanel(times, c.step_seconds, n, P);
  const double mid = 0.5 * (c.advection.norm_min + c.advection.norm_max);

  for (std::size_t t = 0; t < c.n_times; ++t) {
    if (t > 0) y = propagator(t) * y + draw(l_eta, dim, prng);
    out.latent.row(static_cast<Eigen::Index>(t)) = y.transpose();
    const Vec eps = draw(l_eps, dim, mrng);
    const double hours = preprocess::hours_since_epoch(times[t]);
    const double shift = c.speed_coupling * (out.theta.norm(t, 0) - mid);
    for (std::size_t p = 0; p < P; ++p) {
      const double trend = per_height(c.diurnal_amplitude, p, 0.3) *
                           std::cos(2.0 * std::numbers::pi * (hours - c.diurnal_peak_hour) / preprocess::kDayHours);
      for (std::size_t j = 0; j < n; ++j) {
        const auto k = static_cast<Eigen::Index>(indexer.flat(p, j));
        const double w = per_height(c.level, p, 4.0) + shift + trend + y(k) + eps(k);
        const bool missing = c.missing_rate > 0.0 && unit(missing_rng) < c.missing_rate;
        if (missing) continue;
        out.transformed.set(t, j, p, w);
        out.speeds.set(t, j, p, speed_from(w, c));
      }
    }
  }
  out.maps = render_weather_maps(out.theta, c);
  return out;
}

ObservationPanel sample_from_model(const FittedModel& model, const extractor::MapStream& maps, UnixSeconds start,
                                   std::size_t n_times, std::uint64_t seed, std::size_t spinup,
                                   double min_speed) {
  const auto& s = model.structure;
  const auto coords = s.coords();
  const auto n = coords.size();
  const auto P = s.n_heights();
  const auto dim = static_cast<Eigen::Index>(n * P);
  const LatentIndexer indexer(n, P);
  const auto omega = model.omega();
  const Mat l_eta = noise_factor(omega.sigma_eta, omega.ell_eta, coords, P);
  const Mat l_eps = noise_factor(omega.sigma_eps, omega.ell_eps, coords, P);
  auto prng = stream(seed, kModelProcess);
  auto mrng = stream(seed, kModelMeasurement);

  std::vector<UnixSeconds> times(n_times);
  for (std::size_t t = 0; t < n_times; ++t) times[t] = start + static_cast<UnixSeconds>(t) * s.step_seconds;
  pipeline::AdvectionEngine engine(model, maps);
  const auto theta = engine.series(times);

  ObservationPanel out(times, s.step_seconds, n, P);
  Vec y = Vec::Zero(dim);
  if (n_times > 0) {
    const Mat k0 = pipeline::propagator_at(model, times[0], theta.step(0));
    for (std::size_t i = 0; i < spinup; ++i) y = k0 * y + draw(l_eta, dim, prng);
  }
  for (std::size_t t = 0; t < n_times; ++t) {
    if (t > 0) y = pipeline::propagator_at(model, times[t], theta.step(t)) * y + draw(l_eta, dim, prng);
    const Vec eps = draw(l_eps, dim, mrng);
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t j = 0; j < n; ++j) {
        const auto k = static_cast<Eigen::Index>(indexer.flat(p, j));
        const double w = model.diurnal.trend(times[t], j, p) + y(k) + eps(k);
        out.set(t, j, p, std::max(min_speed, pipeline::to_speed(w, model.box_cox)));
      }
    }
  }
  return out;
}

void write_fixture(const SyntheticTruth& truth, const std::string& dir) {
  namespace fs = std::filesystem;
  io::ensure_directory(dir);
  io::write_sites_planar(truth.sites, (fs::path(dir) / "sites.csv").string());
  io::write_observations(truth.speeds, truth.sites, truth.heights, (fs::path(dir) / "obs.csv").string());
  io::write_map_stream(truth.maps, (fs::path(dir) / "maps").string());

  const auto& c = truth.config;
  json j;
  j["seed"] = c.seed;
  j["n_times"] = c.n_times;
  j["step_seconds"] = c.step_seconds;
  j["start_time"] = io::format_iso8601(c.start_time);
  json omega;
  const auto w = c.omega.to_array();
  for (std::size_t k = 0; k < w.size(); ++k) omega[StatParams::names()[k]] = w[k];
  j["omega"] = omega;
  j["box_cox"] = {{"lambda", c.box_cox.lambda}, {"offset", c.box_cox.offset}};
  j["kernel_epoch"] = c.kernel_epoch;
  j["normalize_propagator"] = c.normalize_propagator;
  j["heights"] = c.heights;
  json theta = json::array();
  for (std::size_t t = 0; t < truth.theta.n_times(); ++t) {
    json row = json::array();
    for (std::size_t p = 0; p < truth.theta.n_heights(); ++p) row.push_back({truth.theta.at(t, p).x(), truth.theta.at(t, p).y()});
    theta.push_back(row);
  }
  j["theta"] = theta;
  io::write_text((fs::path(dir) / "truth.json").string(), j.dump() + "\n");
}

FixtureData read_fixture(const std::string& dir) {
  namespace fs = std::filesystem;
  FixtureData out;
  out.sites = io::read_sites((fs::path(dir) / "sites.csv").string());
  auto obs = io::read_observations((fs::path(dir) / "obs.csv").string(), out.sites);
  out.heights = std::move(obs.heights);
  out.speeds = std::move(obs.panel);
  out.maps = io::read_map_stream((fs::path(dir) / "maps").string());
  const auto path = (fs::path(dir) / "truth.json").string();
  try {
    const auto j = json::parse(io::read_text(path));
    out.seed = j.at("seed");
    std::array<double, StatParams::kCount> w{};
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = j.at("omega").at(StatParams::names()[k]);
    out.omega = StatParams::from_array(w);
    const auto& theta = j.at("theta");
    const auto P = theta.empty() ? 0 : theta[0].size();
    out.theta = kernel::AdvectionSet(theta.size(), P);
    for (std::size_t t = 0; t < theta.size(); ++t)
      for (std::size_t p = 0; p < P; ++p) out.theta.at(t, p) = Vec2(theta[t][p][0], theta[t][p][1]);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed '" + path + "': " + e.what());
  }
  return out;
}

}  // namespace deepmide::simulate
