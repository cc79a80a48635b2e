#include "deepmide/preprocess.hpp"

#include <Eigen/QR>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace deepmide::preprocess {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

double apply_box_cox(double v, const BoxCoxParam& param) {
  const double x = v + param.offset;
  // A positive power maps zero to -1/lambda; the log needs x > 0.
  if (!(x > 0.0) && !(x == 0.0 && param.lambda > 0.0)) {
    throw DomainError("box-cox input " + std::to_string(v) + " is not above -offset");
  }
  if (param.lambda == 0.0) return std::log(x);
  return (std::pow(x, param.lambda) - 1.0) / param.lambda;
}

double invert_box_cox(double w, const BoxCoxParam& param) {
  if (!std::isfinite(w)) throw DomainError("box-cox inverse of a non-finite value");
  if (param.lambda == 0.0) return std::exp(w) - param.offset;
  const double base = 1.0 + param.lambda * w;
  if (!(base > 0.0)) {
    throw DomainError("box-cox inverse: " + std::to_string(w) + " is outside the transform range");
  }
  return std::pow(base, 1.0 / param.lambda) - param.offset;
}

BoxCoxParam fit_box_cox(std::span<const double> values, double offset) {
  std::vector<double> shifted;
  shifted.reserve(values.size());
  double sum_log = 0.0;
  for (double v : values) {
    if (std::isnan(v)) continue;
    const double x = v + offset;
    if (!(x > 0.0)) {
      throw PreconditionError("box-cox fit needs data above -offset; got " + std::to_string(v) +
                              " with offset " + std::to_string(offset));
    }
    shifted.push_back(x);
    sum_log += std::log(x);
  }
  if (shifted.size() < 3) throw PreconditionError("box-cox fit needs at least 3 values");

  const auto n = static_cast<double>(shifted.size());
  BoxCoxParam best{0.0, offset};
  double best_ll = -std::numeric_limits<double>::infinity();
  std::vector<double> w(shifted.size());
  for (int k = 0; k <= 100; ++k) {
    const double lambda = k / 100.0;
    double mean = 0.0;
    for (std::size_t i = 0; i < shifted.size(); ++i) {
      w[i] = lambda == 0.0 ? std::log(shifted[i]) : (std::pow(shifted[i], lambda) - 1.0) / lambda;
      mean += w[i];
    }
    mean /= n;
    double ss = 0.0;
    for (double wi : w) ss += (wi - mean) * (wi - mean);
    const double var = ss / n;
    if (!(var > 0.0)) continue;
    const double ll = -0.5 * n * std::log(var) + (lambda - 1.0) * sum_log;
    if (ll > best_ll) {
      best_ll = ll;
      best.lambda = lambda;
    }
  }
  return best;
}

BoxCoxParam fit_box_cox(const ObservationPanel& panel, double offset) {
  std::vector<double> values;
  for (std::size_t t = 0; t < panel.n_times(); ++t)
    for (std::size_t j = 0; j < panel.n_sites(); ++j)
      for (std::size_t p = 0; p < panel.n_heights(); ++p)
        if (panel.observed(t, j, p)) values.push_back(panel.value(t, j, p));
  return fit_box_cox(values, offset);
}

ObservationPanel transform_panel(const ObservationPanel& panel, const BoxCoxParam& param) {
  ObservationPanel out = panel;
  for (std::size_t t = 0; t < panel.n_times(); ++t)
    for (std::size_t j = 0; j < panel.n_sites(); ++j)
      for (std::size_t p = 0; p < panel.n_heights(); ++p)
        if (panel.observed(t, j, p)) out.set(t, j, p, apply_box_cox(panel.value(t, j, p), param));
  return out;
}

std::array<double, kDiurnalTerms> diurnal_regressors(double hours) {
  constexpr double w = 2.0 * std::numbers::pi / kDayHours;
  return {1.0, std::sin(w * hours), std::cos(w * hours), std::sin(2.0 * w * hours),
          std::cos(2.0 * w * hours)};
}

double DiurnalFit::trend(double hours) const {
  const auto x = diurnal_regressors(hours);
  double s = 0.0;
  for (std::size_t k = 0; k < kDiurnalTerms; ++k) s += coefficients[k] * x[k];
  return s;
}

DiurnalFit fit_diurnal(std::span<const double> hours, std::span<const double> values) {
  if (hours.size() != values.size()) throw PreconditionError("hours and values differ in length");
  std::vector<std::size_t> rows;
  for (std::size_t t = 0; t < values.size(); ++t) {
    if (!std::isnan(values[t])) rows.push_back(t);
  }
  if (rows.size() < kDiurnalTerms) {
    throw PreconditionError("diurnal fit needs at least 5 observed points");
  }
  Mat X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kDiurnalTerms));
  Vec y(static_cast<Eigen::Index>(rows.size()));
  double t_min = hours[rows.front()];
  double t_max = t_min;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double h = hours[rows[r]];
    t_min = std::min(t_min, h);
    t_max = std::max(t_max, h);
    const auto x = diurnal_regressors(h);
    for (std::size_t k = 0; k < kDiurnalTerms; ++k) X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = x[k];
    y(static_cast<Eigen::Index>(r)) = values[rows[r]];
  }
  Eigen::ColPivHouseholderQR<Mat> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < static_cast<Eigen::Index>(kDiurnalTerms)) {
    throw NumericalError("diurnal fit: rank-deficient design");
  }
  if (t_max - t_min < kDayHours - 1e-9) {
    throw PreconditionError("diurnal fit: observations span less than 24 h");
  }
  const Vec beta = qr.solve(y);

  DiurnalFit fit;
  for (std::size_t k = 0; k < kDiurnalTerms; ++k) fit.coefficients[k] = beta(static_cast<Eigen::Index>(k));
  fit.residuals.assign(values.size(), kNaN);
  for (std::size_t t : rows) fit.residuals[t] = values[t] - fit.trend(hours[t]);
  return fit;
}

DiurnalFit fit_diurnal(const ObservationPanel& panel, std::size_t site, std::size_t height) {
  std::vector<double> hours(panel.n_times());
  std::vector<double> values(panel.n_times(), kNaN);
  for (std::size_t t = 0; t < panel.n_times(); ++t) {
    hours[t] = hours_since_epoch(panel.time(t));
    if (panel.observed(t, site, height)) values[t] = panel.value(t, site, height);
  }
  return fit_diurnal(hours, values);
}

DiurnalModel::DiurnalModel(std::size_t n_sites, std::size_t n_heights)
    : n_sites_(n_sites), n_heights_(n_heights), coef_(n_sites * n_heights) {}

DiurnalModel DiurnalModel::fit(const ObservationPanel& panel) {
  DiurnalModel model(panel.n_sites(), panel.n_heights());
  for (std::size_t j = 0; j < panel.n_sites(); ++j)
    for (std::size_t p = 0; p < panel.n_heights(); ++p)
      model.coefficients(j, p) = fit_diurnal(panel, j, p).coefficients;
  return model;
}

double DiurnalModel::trend(UnixSeconds t, std::size_t site, std::size_t height) const {
  const auto x = diurnal_regressors(hours_since_epoch(t));
  const auto& c = coefficients(site, height);
  double s = 0.0;
  for (std::size_t k = 0; k < kDiurnalTerms; ++k) s += c[k] * x[k];
  return s;
}

ObservationPanel DiurnalModel::detrend(const ObservationPanel& panel) const {
  ObservationPanel out = panel;
  for (std::size_t t = 0; t < panel.n_times(); ++t)
    for (std::size_t j = 0; j < panel.n_sites(); ++j)
      for (std::size_t p = 0; p < panel.n_heights(); ++p)
        if (panel.observed(t, j, p)) out.set(t, j, p, panel.value(t, j, p) - trend(panel.time(t), j, p));
  return out;
}

double semivariogram(std::span<const double> r_i, std::span<const double> r_j, std::size_t lag,
                     std::span<const std::uint8_t> include) {
  const std::size_t n = std::min(r_i.size(), r_j.size());
  if (n < lag + 2) {
    throw PreconditionError("semivariogram: lag " + std::to_string(lag) + " leaves no pairs in " +
                            std::to_string(n) + " points");
  }
  const std::size_t last = n - lag - 1;  // positions t = 0 .. last-1
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < last; ++t) {
    if (!include.empty() && !include[t]) continue;
    const double a = r_i[t + lag];
    const double b = r_j[t];
    if (std::isnan(a) || std::isnan(b)) continue;
    sum += (a - b) * (a - b);
    ++count;
  }
  if (count == 0) throw PreconditionError("semivariogram: no valid pairs");
  return sum / (2.0 * static_cast<double>(count));
}

double asymmetry(std::span<const double> r_i, std::span<const double> r_j, std::size_t lag,
                 std::span<const std::uint8_t> include) {
  return semivariogram(r_i, r_j, lag, include) - semivariogram(r_j, r_i, lag, include);
}

std::vector<std::optional<Regime>> classify_regimes(const ObservationPanel& raw_panel) {
  std::vector<std::optional<Regime>> out(raw_panel.n_times());
  for (std::size_t t = 0; t < raw_panel.n_times(); ++t) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t j = 0; j < raw_panel.n_sites(); ++j)
      for (std::size_t p = 0; p < raw_panel.n_heights(); ++p)
        if (raw_panel.observed(t, j, p)) {
          sum += raw_panel.value(t, j, p);
          ++count;
        }
    if (count == 0) continue;
    out[t] = sum / static_cast<double>(count) >= kRegimeThresholdMps ? Regime::strong : Regime::weak;
  }
  return out;
}

const char* regime_name(Regime r) { return r == Regime::weak ? "weak" : "strong"; }

std::vector<AsymmetryEstimate> asymmetry_curves(const ObservationPanel& panel,
                                                const ObservationPanel& raw_panel,
                                                std::size_t max_lag) {
  const auto regimes = classify_regimes(raw_panel);
  const auto n = panel.n_sites();
  std::vector<AsymmetryEstimate> out;
  for (std::size_t g = 0; g < panel.n_heights(); ++g) {
    std::vector<std::vector<double>> residuals(n);
    for (std::size_t j = 0; j < n; ++j) residuals[j] = fit_diurnal(panel, j, g).residuals;
    for (Regime regime : {Regime::weak, Regime::strong}) {
      std::vector<std::uint8_t> include(panel.n_times(), 0);
      std::size_t qualifying = 0;
      for (std::size_t t = 0; t < regimes.size(); ++t) {
        if (regimes[t] && *regimes[t] == regime) {
          include[t] = 1;
          ++qualifying;
        }
      }
      if (qualifying < max_lag + 2) continue;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          for (std::size_t u = 1; u <= max_lag; ++u) {
            double a = 0.0;
            try {
              a = asymmetry(residuals[i], residuals[j], u, include);
            } catch (const PreconditionError&) {
              continue;
            }
            out.push_back({g, i, j, u, regime, a});
          }
        }
      }
    }
  }
  return out;
}

}  // namespace deepmide::preprocess
