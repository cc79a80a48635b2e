#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "deepmide/domain.hpp"

namespace deepmide::preprocess {

struct BoxCoxParam {
  double lambda = 1.0;
  double offset = 0.0;
};

double apply_box_cox(double v, const BoxCoxParam& param);
double invert_box_cox(double w, const BoxCoxParam& param);

// Profile-likelihood estimate of a single power over the grid 0, 0.01, ..., 1.
BoxCoxParam fit_box_cox(std::span<const double> values, double offset = 0.0);
// Pools every observed entry of the panel.
BoxCoxParam fit_box_cox(const ObservationPanel& panel, double offset = 0.0);

// Applies the transform to every observed entry.
ObservationPanel transform_panel(const ObservationPanel& panel, const BoxCoxParam& param);

inline constexpr std::size_t kDiurnalTerms = 5;
inline constexpr double kDayHours = 24.0;

// Regressors {1, sin(2 pi t/24), cos(2 pi t/24), sin(4 pi t/24), cos(4 pi t/24)}.
std::array<double, kDiurnalTerms> diurnal_regressors(double hours);

struct DiurnalFit {
  std::array<double, kDiurnalTerms> coefficients{};
  std::vector<double> residuals;  // NaN where the input was missing

  double trend(double hours) const;
};

// Ordinary least squares on the diurnal harmonics. NaN values are treated
// as missing. Requires at least five points spanning a day.
DiurnalFit fit_diurnal(std::span<const double> hours, std::span<const double> values);
DiurnalFit fit_diurnal(const ObservationPanel& panel, std::size_t site, std::size_t height);

inline double hours_since_epoch(UnixSeconds t) { return static_cast<double>(t) / 3600.0; }

// Per (site, height) diurnal trends for a whole panel.
class DiurnalModel {
 public:
  DiurnalModel() = default;
  DiurnalModel(std::size_t n_sites, std::size_t n_heights);

  static DiurnalModel fit(const ObservationPanel& panel);

  std::size_t n_sites() const { return n_sites_; }
  std::size_t n_heights() const { return n_heights_; }
  std::array<double, kDiurnalTerms>& coefficients(std::size_t site, std::size_t height) {
    return coef_[site * n_heights_ + height];
  }
  const std::array<double, kDiurnalTerms>& coefficients(std::size_t site, std::size_t height) const {
    return coef_[site * n_heights_ + height];
  }
  double trend(UnixSeconds t, std::size_t site, std::size_t height) const;
  ObservationPanel detrend(const ObservationPanel& panel) const;

 private:
  std::size_t n_sites_ = 0;
  std::size_t n_heights_ = 0;
  std::vector<std::array<double, kDiurnalTerms>> coef_;
};

// Space-time semivariogram between residual series r_i and r_j at lag u:
//   sum over t of (r_i[t+u] - r_j[t])^2 / (2 * count)
// with t running over the first N-u-1 positions. Pairs with a NaN are
// skipped; `include`, when given, keeps only positions t with include[t].
double semivariogram(std::span<const double> r_i, std::span<const double> r_j, std::size_t lag,
                     std::span<const std::uint8_t> include = {});

enum class Regime { weak, strong };

inline constexpr double kRegimeThresholdMps = 8.0;

// Per time step: the average observed speed over sites and heights compared
// against 8 m/s, ties to strong. nullopt where nothing is observed.
std::vector<std::optional<Regime>> classify_regimes(const ObservationPanel& raw_panel);

// delta(i, j, u) - delta(j, i, u). Antisymmetric in (i, j) bitwise.
double asymmetry(std::span<const double> r_i, std::span<const double> r_j, std::size_t lag,
                 std::span<const std::uint8_t> include = {});

struct AsymmetryEstimate {
  std::size_t height = 0;
  std::size_t site_i = 0;
  std::size_t site_j = 0;
  std::size_t lag = 0;
  Regime regime = Regime::weak;
  double value = 0.0;
};

// Asymmetry for every height, ordered site pair (i < j), lag 1..max_lag and
// regime, on diurnally detrended residuals of `panel` (regimes come from
// `raw_panel`). Regimes with fewer than `max_lag + 2` qualifying steps are
// skipped.
std::vector<AsymmetryEstimate> asymmetry_curves(const ObservationPanel& panel,
                                                const ObservationPanel& raw_panel,
                                                std::size_t max_lag);

const char* regime_name(Regime r);

}  // namespace deepmide::preprocess
