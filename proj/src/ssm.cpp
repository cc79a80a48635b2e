#include "deepmide/ssm.hpp"

#include <cmath>
#include <numbers>

#include "deepmide/linalg.hpp"

namespace deepmide::ssm {

namespace {

Mat restrict(const Mat& full, const std::vector<std::size_t>& idx) {
  const auto d = static_cast<Eigen::Index>(idx.size());
  Mat out(d, d);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b)
      out(a, b) = full(static_cast<Eigen::Index>(idx[a]), static_cast<Eigen::Index>(idx[b]));
  return out;
}

double gaussian_loglik(const Vec& innovation, const linalg::Cholesky& chol) {
  const double d = static_cast<double>(innovation.size());
  const Vec alpha = chol.llt.matrixL().solve(innovation);
  return -0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * chol.log_det() - 0.5 * alpha.squaredNorm();
}

}  // namespace

GaussianBelief kf_predict(const GaussianBelief& belief, const Mat& propagator, const Mat& process_cov) {
  GaussianBelief out;
  out.mean = propagator * belief.mean;
  out.cov = linalg::symmetrize(process_cov + propagator * belief.cov * propagator.transpose());
  return out;
}

UpdateResult kf_update(const GaussianBelief& belief, const Vec& z, const ObservationMap& map,
                       const Mat& obs_cov) {
  UpdateResult out;
  if (map.empty()) {
    out.belief = belief;
    return out;
  }
  if (z.size() != static_cast<Eigen::Index>(map.rows())) {
    throw PreconditionError("observation vector does not match the observation map");
  }
  const Mat& H = map.matrix;
  out.innovation = z - H * belief.mean;
  const Mat U = belief.cov * H.transpose();
  out.innovation_cov = linalg::symmetrize(H * U + restrict(obs_cov, map.columns));
  const auto chol = linalg::robust_cholesky(out.innovation_cov, "kalman update innovation covariance");
  const Mat gain = chol.llt.solve(U.transpose()).transpose();
  out.belief.mean = belief.mean + gain * out.innovation;
  out.belief.cov = linalg::symmetrize(belief.cov - gain * U.transpose());
  out.loglik = gaussian_loglik(out.innovation, chol);
  return out;
}

double step_loglik(const Vec& innovation, const Mat& innovation_cov) {
  if (innovation.size() == 0) return 0.0;
  return gaussian_loglik(innovation, linalg::robust_cholesky(innovation_cov, "step log-likelihood"));
}

FilterState filter_step(const FilterState& state, const Mat& propagator, const Mat& process_cov,
                        const Vec& z, const ObservationMap& map, const Mat& obs_cov) {
  const auto predicted = kf_predict(state.belief, propagator, process_cov);
  auto updated = kf_update(predicted, z, map, obs_cov);
  FilterState out;
  out.belief = std::move(updated.belief);
  out.step = state.step + 1;
  out.loglik = state.loglik + updated.loglik;
  return out;
}

GaussianBelief initial_belief(const Vec& z, const ObservationMap& map, const Vec& variance) {
  GaussianBelief out;
  out.mean = map.empty() ? Vec::Zero(variance.size()) : Vec(map.matrix.transpose() * z);
  out.cov = variance.asDiagonal();
  return out;
}

ForecastDistribution forecast(const GaussianBelief& filtered, std::span<const Mat> propagators,
                              const Mat& process_cov, const Mat& obs_cov,
                              std::span<const ObservationMap> maps) {
  if (maps.empty()) throw PreconditionError("forecast needs at least one observation map");
  if (maps.size() != 1 && maps.size() != propagators.size()) {
    throw PreconditionError("forecast needs one observation map per step");
  }
  ForecastDistribution out;
  GaussianBelief belief = filtered;
  for (std::size_t h = 0; h < propagators.size(); ++h) {
    belief = kf_predict(belief, propagators[h], process_cov);
    const auto& map = maps.size() == 1 ? maps[0] : maps[h];
    HorizonForecast step;
    step.latent_mean = belief.mean;
    step.latent_cov = belief.cov;
    step.obs_mean = map.matrix * belief.mean;
    step.obs_cov = linalg::symmetrize(restrict(obs_cov, map.columns) +
                                      map.matrix * belief.cov * map.matrix.transpose());
    out.steps.push_back(std::move(step));
  }
  return out;
}

Interval central_interval(const HorizonForecast& step, double z_score) {
  const Vec sd = step.obs_cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return {step.obs_mean - z_score * sd, step.obs_mean + z_score * sd};
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal quantile needs p in (0, 1)");
  // Acklam's rational approximation followed by one Halley refinement step.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x = 0.0;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

}  // namespace deepmide::ssm
