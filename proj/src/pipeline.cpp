#include "deepmide/pipeline.hpp"

#include <algorithm>
#include <cmath>

namespace deepmide::pipeline {

ObservationPanel residualize(const FittedModel& model, const ObservationPanel& raw) {
  return model.diurnal.detrend(preprocess::transform_panel(raw, model.box_cox));
}

AdvectionEngine::AdvectionEngine(const FittedModel& model, const extractor::MapStream& maps)
    : model_(model), maps_(maps), net_(model.network.config) {
  const auto& c = model.network.config;
  const auto& meta = maps.meta();
  if (meta.channels.size() != c.in_channels || meta.height != c.height || meta.width != c.width) {
    throw PreconditionError("map stream geometry does not match the extractor");
  }
}

std::vector<std::size_t> AdvectionEngine::window_indices(UnixSeconds t) const {
  const auto idx = maps_.index_at(t);
  if (!idx) {
    throw PreconditionError("no weather map covers time " + std::to_string(t));
  }
  const auto L = net_.config().context;
  std::vector<std::size_t> out(L);
  for (std::size_t i = 0; i < L; ++i) {
    const auto back = static_cast<std::ptrdiff_t>(L - 1 - i);
    out[i] = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(*idx) - back));
  }
  return out;
}

const std::vector<double>& AdvectionEngine::input(std::size_t map_index) {
  auto it = inputs_.find(map_index);
  if (it == inputs_.end()) {
    it = inputs_.emplace(map_index, model_.map_stats.apply(maps_.meta(), maps_[map_index].data)).first;
  }
  return it->second;
}

Vec AdvectionEngine::theta_at(UnixSeconds t) {
  const auto idx = window_indices(t);
  std::vector<Vec> window;
  window.reserve(idx.size());
  for (std::size_t m : idx) {
    auto it = features_.find(m);
    if (it == features_.end()) {
      it = features_.emplace(m, net_.encode(input(m), model_.network.values)).first;
    }
    window.push_back(it->second);
  }
  return net_.predict(window, model_.network.values);
}

kernel::AdvectionSet AdvectionEngine::series(std::span<const UnixSeconds> times) {
  kernel::AdvectionSet out(times.size(), model_.network.config.n_heights);
  for (std::size_t t = 0; t < times.size(); ++t) store_theta(out, t, theta_at(times[t]));
  return out;
}

void store_theta(kernel::AdvectionSet& set, std::size_t t, const Vec& theta) {
  for (std::size_t p = 0; p < set.n_heights(); ++p) {
    set.at(t, p) = Vec2(theta(static_cast<Eigen::Index>(2 * p)), theta(static_cast<Eigen::Index>(2 * p + 1)));
  }
}

Mat propagator_at(const FittedModel& model, UnixSeconds time, std::span<const Vec2> theta) {
  const auto& s = model.structure;
  const auto k = kernel::kernel_step_index(time, s.step_seconds, s.kernel_epoch);
  const auto coords = s.coords();
  return kernel::build_propagator(static_cast<double>(k), theta, coords, model.omega().kernel(),
                                  s.normalize_propagator);
}

FilterResult filter_residuals(const FittedModel& model, const ObservationPanel& residuals,
                              const kernel::AdvectionSet& theta, std::size_t burn_in) {
  const auto& s = model.structure;
  const auto indexer = build_indexer(s.sites, s.heights);
  const auto coords = s.coords();
  const auto omega = model.omega();
  const Mat q = kernel::build_noise_cov(kernel::NoiseKind::eta, omega.noise(), coords, s.n_heights());
  const Mat r = kernel::build_noise_cov(kernel::NoiseKind::epsilon, omega.noise(), coords, s.n_heights());

  FilterResult out;
  if (residuals.n_times() == 0) {
    out.belief.mean = Vec::Zero(static_cast<Eigen::Index>(indexer.dim()));
    out.belief.cov = model.init_variance.asDiagonal();
    return out;
  }
  const auto mask0 = residuals.mask_at(0);
  ssm::FilterState state;
  state.belief = ssm::initial_belief(residuals.observed_vector(0), observation_map(mask0, indexer),
                                     model.init_variance);
  for (std::size_t t = 1; t < residuals.n_times(); ++t) {
    const Mat k = propagator_at(model, residuals.time(t), theta.step(t));
    const auto mask = residuals.mask_at(t);
    const auto map = observation_map(mask, indexer);
    const auto predicted = ssm::kf_predict(state.belief, k, q);
    auto updated = ssm::kf_update(predicted, residuals.observed_vector(t), map, r);
    state.belief = std::move(updated.belief);
    if (t > burn_in) {
      state.loglik += updated.loglik;
      out.observations += map.rows();
    }
  }
  out.belief = std::move(state.belief);
  out.loglik = state.loglik;
  return out;
}

double to_speed(double w, const preprocess::BoxCoxParam& param) {
  if (param.lambda != 0.0) {
    const double floor = -1.0 / param.lambda;
    if (w <= floor) return std::max(0.0, -param.offset);
  }
  return std::max(0.0, preprocess::invert_box_cox(w, param));
}

IssuedForecast issue_forecast(const FittedModel& model, const ObservationPanel& raw_history,
                              const extractor::MapStream& maps, std::size_t horizon, double level) {
  if (raw_history.n_times() == 0) throw PreconditionError("forecast needs a non-empty history");
  const auto& s = model.structure;
  const auto indexer = build_indexer(s.sites, s.heights);
  const auto dim = static_cast<Eigen::Index>(indexer.dim());

  AdvectionEngine engine(model, maps);
  const auto residuals = residualize(model, raw_history);
  const auto theta_hist = engine.series(residuals.times());
  const auto filtered = filter_residuals(model, residuals, theta_hist);

  IssuedForecast out;
  out.issue_time = raw_history.time(raw_history.n_times() - 1);
  out.theta = kernel::AdvectionSet(horizon, s.n_heights());
  std::vector<Mat> props;
  props.reserve(horizon);
  for (std::size_t h = 1; h <= horizon; ++h) {
    const UnixSeconds t = out.issue_time + static_cast<UnixSeconds>(h) * s.step_seconds;
    out.times.push_back(t);
    store_theta(out.theta, h - 1, engine.theta_at(t));
    props.push_back(propagator_at(model, t, out.theta.step(h - 1)));
  }

  const auto omega = model.omega();
  const auto coords = s.coords();
  const Mat q = kernel::build_noise_cov(kernel::NoiseKind::eta, omega.noise(), coords, s.n_heights());
  const Mat r = kernel::build_noise_cov(kernel::NoiseKind::epsilon, omega.noise(), coords, s.n_heights());
  std::vector<std::uint8_t> full(indexer.dim(), 1);
  const std::vector<ObservationMap> maps_h{observation_map(full, indexer)};
  const auto dist = ssm::forecast(filtered.belief, props, q, r, maps_h);

  const double z = ssm::normal_quantile(0.5 + 0.5 * level);
  const auto H = static_cast<Eigen::Index>(horizon);
  out.mean_mps.resize(H, dim);
  out.lo_mps.resize(H, dim);
  out.hi_mps.resize(H, dim);
  out.mean_transformed.resize(H, dim);
  out.sd_transformed.resize(H, dim);
  for (Eigen::Index h = 0; h < H; ++h) {
    const auto& step = dist.steps[static_cast<std::size_t>(h)];
    for (Eigen::Index k = 0; k < dim; ++k) {
      const auto [p, j] = indexer.inverse(static_cast<std::size_t>(k));
      const double trend = model.diurnal.trend(out.times[static_cast<std::size_t>(h)], j, p);
      const double mu = step.obs_mean(k) + trend;
      const double sd = std::sqrt(std::max(0.0, step.obs_cov(k, k)));
      out.mean_transformed(h, k) = mu;
      out.sd_transformed(h, k) = sd;
      out.mean_mps(h, k) = to_speed(mu, model.box_cox);
      out.lo_mps(h, k) = to_speed(mu - z * sd, model.box_cox);
      out.hi_mps(h, k) = to_speed(mu + z * sd, model.box_cox);
    }
  }
  return out;
}

}  // namespace deepmide::pipeline
