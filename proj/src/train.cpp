#include "deepmide/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "deepmide/linalg.hpp"
#include "deepmide/pipeline.hpp"

namespace deepmide::train {

namespace {

using linalg::symmetrize;

struct StepTape {
  Mat k;
  Vec m_prev;
  Mat c_prev;
  Vec m_pred;
  Mat p_pred;
  std::vector<std::size_t> columns;
  Mat h;
  Mat u;
  Mat w;  // inverse innovation covariance
  Vec nu;
  Vec alpha;
  double weight = 0.0;
};

void scatter_add(Mat& full, const Mat& block, const std::vector<std::size_t>& idx) {
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = 0; b < idx.size(); ++b)
      full(static_cast<Eigen::Index>(idx[a]), static_cast<Eigen::Index>(idx[b])) +=
          block(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
}

Mat gather(const Mat& full, const std::vector<std::size_t>& idx) {
  const auto d = static_cast<Eigen::Index>(idx.size());
  Mat out(d, d);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b)
      out(a, b) = full(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(a)]),
                       static_cast<Eigen::Index>(idx[static_cast<std::size_t>(b)]));
  return out;
}

}  // namespace

LikelihoodGradient kf_gradients(const LikelihoodInput& in, const StatParams& omega, bool want_gradient) {
  const auto& res = *in.residuals;
  const auto& theta = *in.theta;
  const auto n = in.sites.size();
  const auto P = in.n_heights;
  const LatentIndexer indexer(n, P);
  const auto dim = static_cast<Eigen::Index>(indexer.dim());
  if (theta.n_times() != res.n_times()) throw PreconditionError("theta rows must match residual rows");

  const auto noise = omega.noise();
  const auto kp = omega.kernel();
  const Mat q = kernel::build_noise_cov(kernel::NoiseKind::eta, noise, in.sites, P);
  const Mat r = kernel::build_noise_cov(kernel::NoiseKind::epsilon, noise, in.sites, P);
  const double log2pi = std::log(2.0 * std::numbers::pi);

  LikelihoodGradient out;
  if (res.n_times() == 0) return out;

  const auto map0 = observation_map(res.mask_at(0), indexer);
  auto init = ssm::initial_belief(res.observed_vector(0), map0, in.init_variance);
  Vec m = init.mean;
  Mat c = init.cov;

  std::vector<StepTape> tape;
  tape.reserve(res.n_times());
  for (std::size_t t = 1; t < res.n_times(); ++t) {
    StepTape st;
    const double kidx = static_cast<double>(kernel::kernel_step_index(res.time(t), res.step_seconds(), in.kernel_epoch));
    st.k = kernel::build_propagator(kidx, theta.step(t), in.sites, kp, in.normalize);
    st.m_prev = m;
    st.c_prev = c;
    st.m_pred = st.k * m;
    st.p_pred = symmetrize(st.k * c * st.k.transpose() + q);
    const auto map = observation_map(res.mask_at(t), indexer);
    st.columns = map.columns;
    st.weight = t > in.burn_in ? 1.0 : 0.0;
    if (map.empty()) {
      m = st.m_pred;
      c = st.p_pred;
    } else {
      st.h = map.matrix;
      st.u = st.p_pred * st.h.transpose();
      const Mat s = symmetrize(st.h * st.u + gather(r, st.columns));
      const auto chol = linalg::robust_cholesky(s, "likelihood innovation covariance");
      st.w = chol.inverse();
      st.nu = res.observed_vector(t) - st.h * st.m_pred;
      st.alpha = st.w * st.nu;
      m = st.m_pred + st.u * st.alpha;
      c = symmetrize(st.p_pred - st.u * st.w * st.u.transpose());
      if (st.weight > 0.0) {
        const double d = static_cast<double>(st.columns.size());
        out.nll += 0.5 * (d * log2pi + chol.log_det() + st.nu.dot(st.alpha));
        out.observations += st.columns.size();
      }
    }
    tape.push_back(std::move(st));
  }
  if (!std::isfinite(out.nll)) {
    std::ostringstream msg;
    msg << "non-finite negative log-likelihood; omega =";
    for (double v : omega.to_array()) msg << ' ' << v;
    throw NumericalError(msg.str());
  }
  if (!want_gradient) return out;

  out.theta_bar = kernel::AdvectionSet(res.n_times(), P);
  Vec m_bar = Vec::Zero(dim);
  Mat c_bar = Mat::Zero(dim, dim);
  Mat q_bar = Mat::Zero(dim, dim);
  Mat r_bar = Mat::Zero(dim, dim);
  double ell_same_bar = 0.0;
  double ell_cross_bar = 0.0;

  for (std::size_t idx = tape.size(); idx-- > 0;) {
    const auto& st = tape[idx];
    const std::size_t t = idx + 1;
    Vec m_pred_bar;
    Mat p_pred_bar;
    if (st.columns.empty()) {
      m_pred_bar = m_bar;
      p_pred_bar = c_bar;
    } else {
      const Mat x_bar = symmetrize(c_bar);
      p_pred_bar = x_bar;
      Mat u_bar = -2.0 * x_bar * st.u * st.w;
      Mat w_bar = -st.u.transpose() * x_bar * st.u;

      m_pred_bar = m_bar;
      u_bar += m_bar * st.alpha.transpose();
      const Vec alpha_bar = st.u.transpose() * m_bar;

      Vec nu_bar = st.w * alpha_bar + st.weight * st.alpha;
      w_bar += alpha_bar * st.nu.transpose() + 0.5 * st.weight * st.nu * st.nu.transpose();

      Mat s_bar = -st.w * w_bar * st.w + 0.5 * st.weight * st.w;
      const Mat y_bar = symmetrize(s_bar);
      u_bar += st.h.transpose() * y_bar;
      scatter_add(r_bar, y_bar, st.columns);
      p_pred_bar += u_bar * st.h;
      m_pred_bar -= st.h.transpose() * nu_bar;
    }
    const Mat a_bar = symmetrize(p_pred_bar);
    Mat k_bar = 2.0 * a_bar * st.k * st.c_prev + m_pred_bar * st.m_prev.transpose();
    q_bar += a_bar;
    c_bar = st.k.transpose() * a_bar * st.k;
    m_bar = st.k.transpose() * m_pred_bar;

    const double kidx = static_cast<double>(kernel::kernel_step_index(res.time(t), res.step_seconds(), in.kernel_epoch));
    std::vector<Vec2> tb(P, Vec2::Zero());
    kernel::propagator_backward(kidx, theta.step(t), in.sites, kp, in.normalize, k_bar, tb, ell_same_bar,
                                ell_cross_bar);
    for (std::size_t p = 0; p < P; ++p) out.theta_bar.at(t, p) = tb[p];
  }

  double sigma_eps_bar = 0.0, ell_eps_bar = 0.0, sigma_eta_bar = 0.0, ell_eta_bar = 0.0;
  kernel::squared_exponential_backward(noise.sigma_eps, noise.ell_eps, in.sites, P, r_bar, sigma_eps_bar, ell_eps_bar);
  kernel::squared_exponential_backward(noise.sigma_eta, noise.ell_eta, in.sites, P, q_bar, sigma_eta_bar, ell_eta_bar);
  out.omega_bar = {ell_same_bar, ell_cross_bar, sigma_eps_bar, ell_eps_bar, sigma_eta_bar, ell_eta_bar};
  return out;
}

void TrainingConfig::validate() const {
  if (subsequence < 2 || batch == 0 || max_epochs == 0 || threads == 0) {
    throw ConfigError("training sizes must be positive (subsequence >= 2)");
  }
  if (!(lr_phi > 0.0) || !(lr_omega > 0.0) || momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("learning rates must be positive and momentum in [0, 1)");
  }
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in (0, 1)");
  }
  if (burn_in + 1 >= subsequence) throw ConfigError("burn-in must be shorter than the subsequence");
  if (clip_norm < 0.0 || !std::isfinite(clip_norm)) throw ConfigError("clip_norm must be non-negative");
}

std::uint64_t checksum(const extractor::NetworkParams& params) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(params.values.data());
  for (std::size_t i = 0; i < params.values.size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

// Standardized inputs for every map index touched by a panel, shared
// read-only between worker threads.
class InputStore {
 public:
  InputStore(const FittedModel& model, const extractor::MapStream& maps) : model_(model), maps_(maps) {}

  void prepare(std::span<const std::size_t> indices) {
    for (std::size_t m : indices) {
      if (!inputs_.count(m)) inputs_.emplace(m, model_.map_stats.apply(maps_.meta(), maps_[m].data));
    }
  }
  const std::vector<double>& at(std::size_t m) const { return inputs_.at(m); }

 private:
  const FittedModel& model_;
  const extractor::MapStream& maps_;
  std::map<std::size_t, std::vector<double>> inputs_;
};

std::vector<std::size_t> context_indices(const extractor::MapStream& maps, UnixSeconds t, std::size_t L) {
  const auto idx = maps.index_at(t);
  if (!idx) throw PreconditionError("no weather map covers time " + std::to_string(t));
  std::vector<std::size_t> out(L);
  for (std::size_t i = 0; i < L; ++i) {
    const auto back = static_cast<std::ptrdiff_t>(L - 1 - i);
    out[i] = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(*idx) - back));
  }
  return out;
}

struct SubsequenceResult {
  double nll = 0.0;
  std::size_t observations = 0;
  std::array<double, StatParams::kCount> omega_bar{};  // natural parameters
  std::vector<double> phi_bar;
};

// Likelihood and gradients of one residual subsequence through the network.
SubsequenceResult subsequence_gradient(const FittedModel& model, const ObservationPanel& residuals,
                                       const extractor::MapStream& maps, const InputStore& inputs,
                                       const kernel::AdvectionSet* fixed_theta, std::size_t fixed_offset,
                                       std::size_t burn_in, bool want_gradient, bool want_phi) {
  const auto& s = model.structure;
  const auto P = s.n_heights();
  const auto coords = s.coords();
  const extractor::PhysicsExtractor net(model.network.config);
  const auto& phi = model.network.values;
  const auto L = net.config().context;
  const auto T = residuals.n_times();

  kernel::AdvectionSet theta(T, P);
  std::map<std::size_t, extractor::EncodeCache> enc;
  std::vector<extractor::AttentionCache> att(T);
  std::vector<std::vector<std::size_t>> windows(T);
  if (fixed_theta) {
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t p = 0; p < P; ++p) theta.at(t, p) = fixed_theta->at(fixed_offset + t, p);
  } else {
    for (std::size_t t = 1; t < T; ++t) {
      windows[t] = context_indices(maps, residuals.time(t), L);
      std::vector<Vec> feats;
      feats.reserve(L);
      for (std::size_t m : windows[t]) {
        auto it = enc.find(m);
        if (it == enc.end()) {
          it = enc.emplace(m, extractor::EncodeCache{}).first;
          net.encode(inputs.at(m), phi, &it->second);
        }
        feats.push_back(it->second.features);
      }
      pipeline::store_theta(theta, t, net.predict(feats, phi, &att[t]));
    }
  }

  LikelihoodInput in;
  in.sites = coords;
  in.n_heights = P;
  in.residuals = &residuals;
  in.theta = &theta;
  in.init_variance = model.init_variance;
  in.kernel_epoch = s.kernel_epoch;
  in.normalize = s.normalize_propagator;
  in.burn_in = burn_in;
  auto g = kf_gradients(in, model.omega(), want_gradient);

  SubsequenceResult out;
  out.nll = g.nll;
  out.observations = g.observations;
  out.omega_bar = g.omega_bar;
  if (!want_gradient || !want_phi || fixed_theta) return out;

  out.phi_bar.assign(phi.size(), 0.0);
  std::map<std::size_t, Vec> feat_bar;
  Vec tb(static_cast<Eigen::Index>(2 * P));
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t p = 0; p < P; ++p) {
      tb(static_cast<Eigen::Index>(2 * p)) = g.theta_bar.at(t, p).x();
      tb(static_cast<Eigen::Index>(2 * p + 1)) = g.theta_bar.at(t, p).y();
    }
    const auto fb = net.predict_backward(att[t], phi, tb, out.phi_bar);
    for (std::size_t i = 0; i < L; ++i) {
      auto it = feat_bar.find(windows[t][i]);
      if (it == feat_bar.end()) {
        feat_bar.emplace(windows[t][i], fb[i]);
      } else {
        it->second += fb[i];
      }
    }
  }
  for (const auto& [m, fb] : feat_bar) net.encode_backward(enc.at(m), phi, fb, out.phi_bar);
  return out;
}

std::vector<std::size_t> map_indices_for(const ObservationPanel& panel, const extractor::MapStream& maps,
                                         std::size_t L) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < panel.n_times(); ++t) {
    for (std::size_t m : context_indices(maps, panel.time(t), L)) out.push_back(m);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Vec residual_variance(const ObservationPanel& residuals, const LatentIndexer& indexer) {
  Vec var = Vec::Ones(static_cast<Eigen::Index>(indexer.dim()));
  for (std::size_t p = 0; p < indexer.n_heights(); ++p) {
    for (std::size_t j = 0; j < indexer.n_sites(); ++j) {
      double sum = 0.0, sum2 = 0.0;
      std::size_t count = 0;
      for (std::size_t t = 0; t < residuals.n_times(); ++t) {
        if (!residuals.observed(t, j, p)) continue;
        const double v = residuals.value(t, j, p);
        sum += v;
        sum2 += v * v;
        ++count;
      }
      if (count > 1) {
        const double mean = sum / static_cast<double>(count);
        const double v = (sum2 - static_cast<double>(count) * mean * mean) / static_cast<double>(count - 1);
        if (v > 0.0) var(static_cast<Eigen::Index>(indexer.flat(p, j))) = v;
      }
    }
  }
  return var;
}

void check_finite(double loss, const FittedModel& model, std::size_t begin) {
  if (std::isfinite(loss)) return;
  std::ostringstream msg;
  msg << "non-finite training loss in subsequence starting at row " << begin << "; omega =";
  for (double v : model.omega().to_array()) msg << ' ' << v;
  throw NumericalError(msg.str());
}

}  // namespace

FittedModel offline_fit(const ObservationPanel& raw_panel, const SiteSet& sites, const HeightLevels& heights,
                        const extractor::MapStream& maps, const ModelConfig& model_config,
                        const TrainingConfig& config, const kernel::AdvectionSet* fixed_theta,
                        const EpochCallback& on_epoch) {
  config.validate();
  model_config.omega_init.validate();
  raw_panel.validate();
  if (raw_panel.n_sites() != sites.size() || raw_panel.n_heights() != heights.size()) {
    throw PreconditionError("panel shape does not match sites and heights");
  }
  if (fixed_theta && fixed_theta->n_times() != raw_panel.n_times()) {
    throw PreconditionError("fixed advection must have one row per panel row");
  }
  const auto T = raw_panel.n_times();
  const auto n_val = static_cast<std::size_t>(std::ceil(config.validation_fraction * static_cast<double>(T)));
  if (T < config.subsequence + 1 + n_val) throw PreconditionError("panel is too short for one training subsequence");
  const auto n_train = T - n_val;

  FittedModel model;
  model.structure.sites = sites;
  model.structure.heights = heights;
  model.structure.step_seconds = raw_panel.step_seconds();
  model.structure.kernel_epoch = model_config.kernel_epoch;
  model.structure.normalize_propagator = model_config.normalize_propagator;
  auto ecfg = model_config.extractor;
  ecfg.n_heights = heights.size();
  model.network = extractor::init_params(ecfg, config.seed);
  model.set_omega(model_config.omega_init);

  const auto offline_train = raw_panel.slice(0, n_train);
  model.box_cox = preprocess::fit_box_cox(offline_train, config.box_cox_offset);
  model.diurnal = preprocess::DiurnalModel::fit(preprocess::transform_panel(offline_train, model.box_cox));
  const auto residuals = pipeline::residualize(model, raw_panel);
  const auto indexer = build_indexer(sites, heights);
  model.init_variance = residual_variance(residuals.slice(0, n_train), indexer);

  InputStore inputs(model, maps);
  if (!fixed_theta) {
    const auto first = maps.index_at(raw_panel.time(0));
    const auto last = maps.index_at(raw_panel.time(n_train - 1));
    if (!first || !last) throw PreconditionError("weather maps do not cover the offline panel");
    model.map_stats = extractor::ChannelStats::estimate(maps, *first, *last + 1);
    inputs.prepare(map_indices_for(raw_panel, maps, ecfg.context));
  } else {
    model.map_stats.mean.assign(maps.meta().channels.size(), 0.0);
    model.map_stats.stddev.assign(maps.meta().channels.size(), 1.0);
  }

  const auto W = config.subsequence;
  const auto val_panel = residuals.slice(n_train, T);
  const auto evaluate_val = [&](const FittedModel& m) {
    const auto r = subsequence_gradient(m, val_panel, maps, inputs, fixed_theta, n_train, config.burn_in,
                                        false, false);
    return r.observations ? r.nll / static_cast<double>(r.observations) : 0.0;
  };

  std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<double> vel_phi(model.network.values.size(), 0.0);
  std::array<double, StatParams::kCount> vel_omega{};
  double lr_phi = config.lr_phi;
  double lr_omega = config.lr_omega;
  FittedModel best = model;
  double best_val = evaluate_val(model);
  std::size_t since_best = 0;
  const bool train_phi = fixed_theta == nullptr;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto offset = std::uniform_int_distribution<std::size_t>(0, W - 1)(rng);
    std::vector<std::size_t> starts;
    for (std::size_t s = offset; s + W + 1 <= n_train; s += W) starts.push_back(s);
    if (starts.empty()) starts.push_back(0);
    std::shuffle(starts.begin(), starts.end(), rng);

    double epoch_nll = 0.0;
    std::size_t epoch_obs = 0;
    for (std::size_t b0 = 0; b0 < starts.size(); b0 += config.batch) {
      const auto nb = std::min(config.batch, starts.size() - b0);
      std::vector<SubsequenceResult> results(nb);
      parallel_for(nb, config.threads, [&](std::size_t i) {
        const auto begin = starts[b0 + i];
        const auto sub = residuals.slice(begin, begin + W + 1);
        results[i] = subsequence_gradient(model, sub, maps, inputs, fixed_theta, begin, config.burn_in, true,
                                          train_phi);
      });

      double nll = 0.0;
      std::size_t obs = 0;
      std::array<double, StatParams::kCount> g_omega{};
      std::vector<double> g_phi(train_phi ? model.network.values.size() : 0, 0.0);
      for (std::size_t i = 0; i < nb; ++i) {
        check_finite(results[i].nll, model, starts[b0 + i]);
        nll += results[i].nll;
        obs += results[i].observations;
        for (std::size_t k = 0; k < g_omega.size(); ++k) g_omega[k] += results[i].omega_bar[k];
        for (std::size_t k = 0; k < g_phi.size(); ++k) g_phi[k] += results[i].phi_bar[k];
      }
      epoch_nll += nll;
      epoch_obs += obs;
      if (obs == 0) continue;
      const double scale = 1.0 / static_cast<double>(obs);
      for (std::size_t k = 0; k < g_omega.size(); ++k) {
        const double g = g_omega[k] * scale * sigmoid(model.omega_raw[k]);
        vel_omega[k] = config.momentum * vel_omega[k] + g;
        model.omega_raw[k] -= lr_omega * vel_omega[k];
      }
      double phi_scale = scale;
      if (config.clip_norm > 0.0 && !g_phi.empty()) {
        double sq = 0.0;
        for (double g : g_phi) sq += g * g;
        const double norm = std::sqrt(sq) * scale;
        if (norm > config.clip_norm) phi_scale *= config.clip_norm / norm;
      }
      for (std::size_t k = 0; k < g_phi.size(); ++k) {
        vel_phi[k] = config.momentum * vel_phi[k] + g_phi[k] * phi_scale;
        model.network.values[k] -= lr_phi * vel_phi[k];
      }
    }

    TrainLogRow row;
    row.epoch = static_cast<int>(epoch);
    row.train_nll = epoch_obs ? epoch_nll / static_cast<double>(epoch_obs) : 0.0;
    row.val_nll = evaluate_val(model);
    row.lr = lr_phi;
    if (!std::isfinite(row.val_nll)) check_finite(row.val_nll, model, n_train);
    model.log.push_back(row);

    if (row.val_nll < best_val) {
      best_val = row.val_nll;
      best = model;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best % config.plateau == 0) {
        lr_phi *= config.lr_decay;
        lr_omega *= config.lr_decay;
      }
    }
    if (on_epoch && !on_epoch(row)) break;
    if (since_best >= config.patience) break;
  }
  best.log = model.log;
  return best;
}

FittedModel online_update(const FittedModel& model, const ObservationPanel& raw_window,
                          const extractor::MapStream& maps, const TrainingConfig& config,
                          const kernel::AdvectionSet* fixed_theta) {
  if (raw_window.n_times() < 2) return model;
  FittedModel out = model;
  if (config.online_refit_box_cox) out.box_cox = preprocess::fit_box_cox(raw_window, config.box_cox_offset);
  if (config.online_refit_diurnal) {
    try {
      out.diurnal = preprocess::DiurnalModel::fit(preprocess::transform_panel(raw_window, out.box_cox));
    } catch (const Error&) {
      // Window too short for a diurnal fit; keep the previous trend.
    }
  }
  const auto residuals = pipeline::residualize(out, raw_window);

  kernel::AdvectionSet theta;
  if (fixed_theta) {
    theta = *fixed_theta;
  } else {
    pipeline::AdvectionEngine engine(out, maps);
    theta = engine.series(residuals.times());
  }
  const auto coords = out.structure.coords();
  LikelihoodInput in;
  in.sites = coords;
  in.n_heights = out.structure.n_heights();
  in.residuals = &residuals;
  in.theta = &theta;
  in.init_variance = out.init_variance;
  in.kernel_epoch = out.structure.kernel_epoch;
  in.normalize = out.structure.normalize_propagator;
  in.burn_in = std::min(config.burn_in, raw_window.n_times() - 1);

  std::array<double, StatParams::kCount> vel{};
  for (std::size_t it = 0; it < config.online_iterations; ++it) {
    const auto g = kf_gradients(in, out.omega(), true);
    if (g.observations == 0) break;
    const double scale = 1.0 / static_cast<double>(g.observations);
    for (std::size_t k = 0; k < vel.size(); ++k) {
      vel[k] = config.momentum * vel[k] + g.omega_bar[k] * scale * sigmoid(out.omega_raw[k]);
      out.omega_raw[k] -= config.lr_omega * vel[k];
    }
  }
  return out;
}

CompositeGradient composite_gradient(const FittedModel& model, const ObservationPanel& residuals,
                                     const extractor::MapStream& maps, std::size_t burn_in) {
  InputStore inputs(model, maps);
  inputs.prepare(map_indices_for(residuals, maps, model.network.config.context));
  const auto r = subsequence_gradient(model, residuals, maps, inputs, nullptr, 0, burn_in, true, true);
  return {r.nll, r.omega_bar, r.phi_bar};
}

}  // namespace deepmide::train
