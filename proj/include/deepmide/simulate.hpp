#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "deepmide/domain.hpp"
#include "deepmide/extractor.hpp"
#include "deepmide/kernel.hpp"
#include "deepmide/model.hpp"
#include "deepmide/preprocess.hpp"

namespace deepmide::simulate {

enum class AdvectionKind { zero, constant, piecewise, smooth };

// How theta_true evolves. Norms refer to the lowest height and are scaled
// per height by `height_scale`; all heights share one direction.
struct AdvectionSchedule {
  AdvectionKind kind = AdvectionKind::piecewise;
  Vec2 constant = Vec2::Zero();   // km per step, used by `constant`
  double norm_min = 2.0;          // km per step
  double norm_max = 14.0;
  std::size_t segment_min = 36;   // steps, piecewise only
  std::size_t segment_max = 144;
  std::optional<double> direction_deg;  // fixed direction (0 = east, 90 = north)
  double smooth_persistence = 0.98;     // AR(1) coefficient of the smooth norm
  double smooth_turn_deg = 3.0;         // per-step direction random walk
  std::vector<double> height_scale;     // empty -> all ones
};

struct SimulationConfig {
  std::vector<Site> sites;
  std::vector<double> heights;
  std::size_t n_times = 2000;
  std::int64_t step_seconds = 600;
  UnixSeconds start_time = 1'593'561'600;  // 2020-07-01T00:00:00Z
  std::uint64_t seed = 1;

  StatParams omega;
  std::int64_t kernel_epoch = 6;
  bool normalize_propagator = true;
  bool allow_unstable = false;
  AdvectionSchedule advection;

  // Observation scale: Box-Cox transformed speed = level + diurnal + Y + eps.
  preprocess::BoxCoxParam box_cox{0.5, 0.0};
  std::vector<double> level;              // per height; empty -> 4.0
  std::vector<double> diurnal_amplitude;  // per height; empty -> 0.3
  double diurnal_peak_hour = 15.0;
  // Transformed-level shift per km/step of the lowest-height advection norm
  // above the schedule midpoint, which ties strong winds to fast transport.
  double speed_coupling = 0.0;
  double missing_rate = 0.0;
  double min_speed = 0.1;
  std::size_t spinup = 200;              // discarded steps before t = 0
  std::optional<double> initial_state;   // constant start, no spin-up

  // Rendered maps.
  std::size_t raster_width = 16;
  std::size_t raster_height = 16;
  double pixel_km = 10.0;
  std::int64_t map_step_seconds = 3600;
  std::size_t context_pad = 6;  // maps before start_time, for extractor windows
  double map_noise = 0.3;
  std::size_t tracer_modes = 6;

  // Noise standard deviations may be zero here (noiseless simulations).
  void validate() const;
};

struct SyntheticTruth {
  SimulationConfig config;
  SiteSet sites;
  HeightLevels heights;
  kernel::AdvectionSet theta;  // one row per observation step
  Mat latent;                  // n_times x nP, height-major columns
  ObservationPanel transformed;  // Box-Cox scale including trend and level
  ObservationPanel speeds;       // raw speeds in m/s
  extractor::MapStream maps;
};

SyntheticTruth simulate_process(const SimulationConfig& config);

// Draws raw speeds from a fitted model: the latent recursion with the
// model's propagators (advection read from `maps`) and noise covariances,
// plus its diurnal trend, inverted through its Box-Cox transform. The state
// starts from `spinup` steps of the first propagator applied to zero.
// Speeds are floored at `min_speed` like the simulator's.
ObservationPanel sample_from_model(const FittedModel& model, const extractor::MapStream& maps,
                                   UnixSeconds start, std::size_t n_times, std::uint64_t seed,
                                   std::size_t spinup = 200, double min_speed = 0.1);

// Renders the three map channels (advected tracer, u proxy, v proxy) for the
// observation steps of `theta`.
extractor::MapStream render_weather_maps(const kernel::AdvectionSet& theta, const SimulationConfig& config);

// Writes obs.csv, sites.csv, maps/ and truth.json under `dir`.
void write_fixture(const SyntheticTruth& truth, const std::string& dir);

// Reads what write_fixture wrote. The latent field is not stored.
struct FixtureData {
  SiteSet sites;
  HeightLevels heights;
  ObservationPanel speeds;
  extractor::MapStream maps;
  kernel::AdvectionSet theta;
  StatParams omega;
  std::uint64_t seed = 0;
};
FixtureData read_fixture(const std::string& dir);

}  // namespace deepmide::simulate
