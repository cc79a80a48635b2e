#pragma once

#include <map>
#include <span>
#include <vector>

#include "deepmide/domain.hpp"
#include "deepmide/extractor.hpp"
#include "deepmide/kernel.hpp"
#include "deepmide/model.hpp"
#include "deepmide/ssm.hpp"

namespace deepmide::pipeline {

// Box-Cox transform followed by removal of the fitted diurnal trend.
ObservationPanel residualize(const FittedModel& model, const ObservationPanel& raw);

// Observation-time view of a map stream through a frozen network. Encoded
// features are cached per stream index.
class AdvectionEngine {
 public:
  AdvectionEngine(const FittedModel& model, const extractor::MapStream& maps);

  // Stream indices of the L-map context ending at the map covering `t`,
  // oldest first, padded by repeating the first map of the stream. Throws
  // PreconditionError when no map covers `t`.
  std::vector<std::size_t> window_indices(UnixSeconds t) const;
  const std::vector<double>& input(std::size_t map_index);
  Vec theta_at(UnixSeconds t);
  kernel::AdvectionSet series(std::span<const UnixSeconds> times);

  const extractor::PhysicsExtractor& net() const { return net_; }

 private:
  const FittedModel& model_;
  const extractor::MapStream& maps_;
  extractor::PhysicsExtractor net_;
  std::map<std::size_t, std::vector<double>> inputs_;
  std::map<std::size_t, Vec> features_;
};

// Copies a flat theta vector [x1, y1, x2, y2, ...] into row `t` of `set`.
void store_theta(kernel::AdvectionSet& set, std::size_t t, const Vec& theta);

// Propagator for the transition into the step at `time`.
Mat propagator_at(const FittedModel& model, UnixSeconds time, std::span<const Vec2> theta);

struct FilterResult {
  GaussianBelief belief;
  double loglik = 0.0;
  std::size_t observations = 0;
};

// Filters a residual panel: row 0 initializes, rows 1.. are predicted and
// updated. Rows up to `burn_in` are excluded from the log-likelihood.
FilterResult filter_residuals(const FittedModel& model, const ObservationPanel& residuals,
                              const kernel::AdvectionSet& theta, std::size_t burn_in = 0);

struct IssuedForecast {
  UnixSeconds issue_time = 0;
  std::vector<UnixSeconds> times;  // valid time of each horizon step
  // Rows are horizon steps, columns latent (height-major) entries.
  Mat mean_mps;
  Mat lo_mps;
  Mat hi_mps;
  Mat mean_transformed;  // trend + latent mean on the Box-Cox scale
  Mat sd_transformed;
  kernel::AdvectionSet theta;  // advection used for each horizon step
};

// Filters `raw_history` (whose last row is the issue time) and forecasts
// `horizon` steps ahead with central `level` intervals back-transformed
// through the inverse Box-Cox.
IssuedForecast issue_forecast(const FittedModel& model, const ObservationPanel& raw_history,
                              const extractor::MapStream& maps, std::size_t horizon,
                              double level = 0.95);

// Inverse Box-Cox clamped to the transform range and to non-negative speeds.
double to_speed(double w, const preprocess::BoxCoxParam& param);

}  // namespace deepmide::pipeline
