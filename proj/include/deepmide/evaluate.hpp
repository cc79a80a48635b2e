#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "deepmide/domain.hpp"
#include "deepmide/extractor.hpp"
#include "deepmide/model.hpp"
#include "deepmide/pipeline.hpp"
#include "deepmide/preprocess.hpp"
#include "deepmide/train.hpp"

namespace deepmide::evaluate {

struct RollingProtocol {
  std::size_t horizon = 144;
  std::size_t stride = 144;
  double offline_fraction = 0.7;
  double level = 0.95;
  std::size_t ar_max_order = 6;
  // Rows of history (ending at the issue time) used for the online update,
  // the filter and the benchmark fits.
  std::size_t history = 1008;
  bool online_update = true;

  void validate() const;
};

std::size_t offline_length(std::size_t n_times, double offline_fraction);
// floor((online_steps - horizon) / stride) + 1, or 0 when no roll fits.
std::size_t roll_count(std::size_t online_steps, std::size_t horizon, std::size_t stride);
std::size_t instance_count(std::size_t rolls, std::size_t horizon, std::size_t sites, std::size_t heights);

// horizon x nP (height-major) forecasts holding the value at row t; a
// missing value at t is replaced by the last earlier observation (NaN if
// there is none).
Mat persistence_forecast(const ObservationPanel& panel, std::size_t t, std::size_t horizon);

struct ArModel {
  std::size_t order = 0;
  double intercept = 0.0;
  std::vector<double> coef;  // coef[k] multiplies x[t - 1 - k]
  double sigma2 = 0.0;
  double aic = 0.0;
  bool degenerate = false;  // constant series: forecasts persist the last value
};

// Least-squares AR(p) for p = 0..max_order on a common sample, order by AIC.
// NaN entries drop every regression row that touches them.
ArModel fit_ar(std::span<const double> series, std::size_t max_order);
// Iterated multi-step prediction; NaNs in the history are carried forward.
std::vector<double> ar_predict(const ArModel& model, std::span<const double> history, std::size_t horizon);

// Per (site, height): Box-Cox and diurnal fits on the history, AR on the
// residuals, forecasts re-trended and back-transformed. horizon x nP, m/s.
Mat ar_forecast(const ObservationPanel& raw_history, std::size_t horizon, std::size_t max_order,
                double box_cox_offset = 0.0);

// Absolute-error sums by (method, height, horizon) and (method, site,
// horizon), plus interval hits of the first method.
class MetricTable {
 public:
  MetricTable() = default;
  MetricTable(std::vector<std::string> methods, std::size_t horizon, std::size_t n_sites, std::size_t n_heights);

  const std::vector<std::string>& methods() const { return methods_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t n_sites() const { return n_sites_; }
  std::size_t n_heights() const { return n_heights_; }

  // h is 1-based. NaN forecast or actual is skipped.
  void add(std::size_t method, std::size_t h, std::size_t site, std::size_t height, double forecast, double actual);
  void add_interval(std::size_t h, std::size_t site, std::size_t height, double lo, double hi, double actual);
  void merge(const MetricTable& other);

  std::optional<double> mae_by_height(std::size_t method, std::size_t height, std::size_t h) const;
  std::optional<double> mae_by_site(std::size_t method, std::size_t site, std::size_t h) const;
  std::optional<double> mae(std::size_t method, std::size_t h) const;
  // Mean of the per-horizon overall MAEs for h in [h_lo, h_hi].
  std::optional<double> mean_mae(std::size_t method, std::size_t h_lo, std::size_t h_hi) const;
  std::optional<double> coverage() const;
  std::size_t count(std::size_t method) const;

  // CSV `method,height_index,horizon_steps,mae,count` and the site analogue.
  std::string height_csv(const std::vector<double>& heights) const;
  std::string site_csv(const SiteSet& sites) const;
  // `method,benchmark,horizon_steps,imp_percent` for the first method against the rest.
  std::string improvement_csv() const;

 private:
  std::size_t hidx(std::size_t m, std::size_t p, std::size_t h) const { return (m * n_heights_ + p) * horizon_ + (h - 1); }
  std::size_t sidx(std::size_t m, std::size_t j, std::size_t h) const { return (m * n_sites_ + j) * horizon_ + (h - 1); }

  std::vector<std::string> methods_;
  std::size_t horizon_ = 0;
  std::size_t n_sites_ = 0;
  std::size_t n_heights_ = 0;
  std::vector<double> height_sum_;
  std::vector<std::size_t> height_count_;
  std::vector<double> site_sum_;
  std::vector<std::size_t> site_count_;
  std::size_t interval_hits_ = 0;
  std::size_t interval_count_ = 0;
};

// 100 * (1 - mae_star / mae_bench); absent when mae_bench is zero.
std::optional<double> improvement(double mae_star, double mae_bench);

struct ProtocolOptions {
  RollingProtocol protocol;
  train::TrainingConfig training;
  bool with_ar = true;
  std::size_t threads = 1;
};

struct RollOutcome {
  std::size_t origin = 0;  // panel row of the issue time
  pipeline::IssuedForecast forecast;
  Mat persistence;  // m/s
  Mat ar;           // m/s, empty when AR is off
  StatParams omega;
};

struct ProtocolResult {
  std::size_t offline_rows = 0;
  std::size_t rolls = 0;
  preprocess::BoxCoxParam reference;  // transform used for the transformed-scale table
  MetricTable mps;
  MetricTable transformed;
  std::vector<RollOutcome> outcomes;
};

// Methods are "DeepMIDE", "PER" and (optionally) "AR". Rolls start at the
// last offline row and advance by the stride; each one updates the
// statistical parameters on its history window (starting from `model`),
// forecasts the full horizon and scores every method against the panel.
ProtocolResult run_protocol(const FittedModel& model, const ObservationPanel& raw_panel,
                            const extractor::MapStream& maps, const ProtocolOptions& options);

// Forecast CSV `issue_time,horizon_steps,site_id,height_m,mean_mps,lo95_mps,hi95_mps`.
std::string forecast_csv(const FittedModel& model, std::span<const pipeline::IssuedForecast> forecasts);

// Power-law exponent ln(z_hi / z_lo) / ln(h_hi / h_lo).
double wind_shear(double z_hi, double z_lo, double h_hi, double h_lo);

// power = clip(100 * logistic((v - (a + b * shear)) / w), 0, 100).
struct PowerCurve {
  double a = 7.0;
  double b = 0.0;
  double w = 1.0;

  double operator()(double speed, double shear) const;
};

struct PowerFit {
  PowerCurve curve;
  double rmse = 0.0;
  std::vector<std::string> warnings;
};

// Levenberg-Marquardt least squares. Requires at least 50 rows.
PowerFit fit_power_curve(std::span<const double> speed, std::span<const double> shear, std::span<const double> power);

// Point power from mean hub and above-hub speeds.
double speed_to_power(const PowerCurve& curve, double hub_speed, double above_speed, double hub_height,
                      double above_height);
// Monte Carlo mean over `draws` independent Gaussian draws of the two
// transformed-scale forecasts, back-transformed before conversion.
double monte_carlo_power(const PowerCurve& curve, double hub_mean_t, double hub_sd_t, double above_mean_t,
                         double above_sd_t, double hub_height, double above_height,
                         const preprocess::BoxCoxParam& box_cox, std::mt19937_64& rng, std::size_t draws = 500);

}  // namespace deepmide::evaluate
