#pragma once

#include <span>
#include <vector>

#include "deepmide/domain.hpp"

namespace deepmide::ssm {

// mean <- K mean; cov <- Q + K cov K^T, re-symmetrized.
GaussianBelief kf_predict(const GaussianBelief& belief, const Mat& propagator, const Mat& process_cov);

struct UpdateResult {
  GaussianBelief belief;
  Vec innovation;
  Mat innovation_cov;
  double loglik = 0.0;  // zero when nothing is observed
};

// Conditions on the observed entries. `obs_cov` is the full measurement
// covariance in latent order; it is restricted to the rows selected by `map`.
UpdateResult kf_update(const GaussianBelief& belief, const Vec& z, const ObservationMap& map,
                       const Mat& obs_cov);

// Gaussian log-density of the innovation, -d/2 log 2pi - 1/2 log|S| - 1/2 v^T S^-1 v.
double step_loglik(const Vec& innovation, const Mat& innovation_cov);

struct FilterState {
  GaussianBelief belief;
  std::size_t step = 0;
  double loglik = 0.0;
};

// One predict + update.
FilterState filter_step(const FilterState& state, const Mat& propagator, const Mat& process_cov,
                        const Vec& z, const ObservationMap& map, const Mat& obs_cov);

// Mean lifted from the observed entries (zero elsewhere) with a diagonal
// covariance.
GaussianBelief initial_belief(const Vec& z, const ObservationMap& map, const Vec& variance);

struct HorizonForecast {
  Vec latent_mean;
  Mat latent_cov;
  Vec obs_mean;
  Mat obs_cov;
};

struct ForecastDistribution {
  std::vector<HorizonForecast> steps;  // steps[h-1] is the h-step forecast
};

// Iterates the prediction without updates. `maps` may hold a single map used
// for every step or one per step.
ForecastDistribution forecast(const GaussianBelief& filtered, std::span<const Mat> propagators,
                              const Mat& process_cov, const Mat& obs_cov,
                              std::span<const ObservationMap> maps);

struct Interval {
  Vec lo;
  Vec hi;
};

// mean -/+ z * sqrt(diag(obs_cov)).
Interval central_interval(const HorizonForecast& step, double z_score);

// Standard normal quantile.
double normal_quantile(double p);

}  // namespace deepmide::ssm
