#include "deepmide/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

#include <Eigen/QR>

#include "deepmide/io.hpp"

namespace deepmide::evaluate {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string opt(const std::optional<double>& v) { return v ? io::format_double(*v) : std::string(); }

// Box-Cox for scoring; non-positive speeds are nudged into the domain.
double score_transform(double v, const preprocess::BoxCoxParam& bc) {
  if (std::isnan(v)) return v;
  return preprocess::apply_box_cox(std::max(v + bc.offset, 1e-6) - bc.offset, bc);
}

}  // namespace

void RollingProtocol::validate() const {
  if (horizon < 1 || stride < 1) throw ConfigError("protocol.horizon and protocol.stride must be >= 1");
  if (!(offline_fraction > 0.0 && offline_fraction < 1.0)) {
    throw ConfigError("protocol.offline_fraction must lie in (0, 1)");
  }
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("protocol.level must lie in (0, 1)");
  if (history < 2) throw ConfigError("protocol.history must be >= 2");
}

std::size_t offline_length(std::size_t n_times, double offline_fraction) {
  return static_cast<std::size_t>(std::floor(offline_fraction * static_cast<double>(n_times)));
}

std::size_t roll_count(std::size_t online_steps, std::size_t horizon, std::size_t stride) {
  if (stride == 0) throw PreconditionError("stride must be positive");
  if (online_steps < horizon) return 0;
  return (online_steps - horizon) / stride + 1;
}

std::size_t instance_count(std::size_t rolls, std::size_t horizon, std::size_t sites, std::size_t heights) {
  return rolls * horizon * sites * heights;
}

Mat persistence_forecast(const ObservationPanel& panel, std::size_t t, std::size_t horizon) {
  const LatentIndexer indexer(panel.n_sites(), panel.n_heights());
  Mat out(static_cast<Eigen::Index>(horizon), static_cast<Eigen::Index>(indexer.dim()));
  for (std::size_t p = 0; p < panel.n_heights(); ++p) {
    for (std::size_t j = 0; j < panel.n_sites(); ++j) {
      double v = kNaN;
      for (std::size_t s = t + 1; s-- > 0;) {
        if (panel.observed(s, j, p)) {
          v = panel.value(s, j, p);
          break;
        }
      }
      out.col(static_cast<Eigen::Index>(indexer.flat(p, j))).setConstant(v);
    }
  }
  return out;
}

ArModel fit_ar(std::span<const double> x, std::size_t max_order) {
  const std::size_t need = 10 * std::max<std::size_t>(max_order, 1);
  if (x.size() < need) {
    throw PreconditionError("AR fit needs at least " + std::to_string(need) + " points, got " +
                            std::to_string(x.size()));
  }
  ArModel out;
  double sum = 0.0, sum2 = 0.0, last = kNaN;
  std::size_t n = 0;
  for (double v : x) {
    if (std::isnan(v)) continue;
    sum += v;
    sum2 += v * v;
    last = v;
    ++n;
  }
  const double mean = n ? sum / static_cast<double>(n) : 0.0;
  const double var = n ? sum2 / static_cast<double>(n) - mean * mean : 0.0;
  if (n < 2 || var <= 1e-12 * std::max(1.0, mean * mean)) {
    out.degenerate = true;
    out.intercept = std::isnan(last) ? 0.0 : last;
    return out;
  }

  std::vector<std::size_t> rows;
  for (std::size_t t = max_order; t < x.size(); ++t) {
    bool ok = !std::isnan(x[t]);
    for (std::size_t k = 1; ok && k <= max_order; ++k) ok = !std::isnan(x[t - k]);
    if (ok) rows.push_back(t);
  }
  const auto m = static_cast<Eigen::Index>(rows.size());
  if (m <= static_cast<Eigen::Index>(max_order + 1)) throw PreconditionError("AR fit has too few complete rows");
  Vec y(m);
  for (Eigen::Index r = 0; r < m; ++r) y(r) = x[rows[static_cast<std::size_t>(r)]];

  double best_aic = std::numeric_limits<double>::infinity();
  bool first = true;
  for (std::size_t p = 0; p <= max_order; ++p) {
    Mat a(m, static_cast<Eigen::Index>(p + 1));
    for (Eigen::Index r = 0; r < m; ++r) {
      const auto t = rows[static_cast<std::size_t>(r)];
      a(r, 0) = 1.0;
      for (std::size_t k = 1; k <= p; ++k) a(r, static_cast<Eigen::Index>(k)) = x[t - k];
    }
    const Vec beta = a.colPivHouseholderQr().solve(y);
    const double rss = (y - a * beta).squaredNorm();
    const double md = static_cast<double>(m);
    const double aic = md * std::log(std::max(rss / md, 1e-300)) + 2.0 * static_cast<double>(p + 1);
    if (first || aic < best_aic) {
      first = false;
      best_aic = aic;
      out.order = p;
      out.intercept = beta(0);
      out.coef.assign(beta.data() + 1, beta.data() + beta.size());
      out.sigma2 = rss / md;
      out.aic = aic;
    }
  }
  return out;
}

std::vector<double> ar_predict(const ArModel& model, std::span<const double> history, std::size_t horizon) {
  std::vector<double> buf;
  double carry = kNaN;
  for (double v : history) {
    if (!std::isnan(v)) carry = v;
    buf.push_back(carry);
  }
  std::vector<double> out;
  out.reserve(horizon);
  for (std::size_t h = 0; h < horizon; ++h) {
    double v;
    if (model.degenerate) {
      v = std::isnan(carry) ? model.intercept : carry;
    } else {
      v = model.intercept;
      for (std::size_t k = 0; k < model.order; ++k) {
        const double lag = buf.size() > k ? buf[buf.size() - 1 - k] : 0.0;
        v += model.coef[k] * (std::isnan(lag) ? 0.0 : lag);
      }
    }
    buf.push_back(v);
    out.push_back(v);
  }
  return out;
}

Mat ar_forecast(const ObservationPanel& raw_history, std::size_t horizon, std::size_t max_order,
                double box_cox_offset) {
  const auto bc = preprocess::fit_box_cox(raw_history, box_cox_offset);
  const auto transformed = preprocess::transform_panel(raw_history, bc);
  const auto diurnal = preprocess::DiurnalModel::fit(transformed);
  const auto residuals = diurnal.detrend(transformed);
  const LatentIndexer indexer(raw_history.n_sites(), raw_history.n_heights());
  const UnixSeconds issue = raw_history.time(raw_history.n_times() - 1);
  Mat out(static_cast<Eigen::Index>(horizon), static_cast<Eigen::Index>(indexer.dim()));
  std::vector<double> series(raw_history.n_times());
  for (std::size_t p = 0; p < raw_history.n_heights(); ++p) {
    for (std::size_t j = 0; j < raw_history.n_sites(); ++j) {
      for (std::size_t t = 0; t < series.size(); ++t) {
        series[t] = residuals.observed(t, j, p) ? residuals.value(t, j, p) : kNaN;
      }
      const auto model = fit_ar(series, max_order);
      const auto pred = ar_predict(model, series, horizon);
      for (std::size_t h = 0; h < horizon; ++h) {
        const UnixSeconds t = issue + static_cast<UnixSeconds>(h + 1) * raw_history.step_seconds();
        out(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(indexer.flat(p, j))) =
            pipeline::to_speed(pred[h] + diurnal.trend(t, j, p), bc);
      }
    }
  }
  return out;
}

MetricTable::MetricTable(std::vector<std::string> methods, std::size_t horizon, std::size_t n_sites,
                         std::size_t n_heights)
    : methods_(std::move(methods)), horizon_(horizon), n_sites_(n_sites), n_heights_(n_heights) {
  height_sum_.assign(methods_.size() * n_heights_ * horizon_, 0.0);
  height_count_.assign(height_sum_.size(), 0);
  site_sum_.assign(methods_.size() * n_sites_ * horizon_, 0.0);
  site_count_.assign(site_sum_.size(), 0);
}

void MetricTable::add(std::size_t method, std::size_t h, std::size_t site, std::size_t height, double forecast,
                      double actual) {
  if (std::isnan(forecast) || std::isnan(actual)) return;
  const double e = std::abs(actual - forecast);
  height_sum_[hidx(method, height, h)] += e;
  ++height_count_[hidx(method, height, h)];
  site_sum_[sidx(method, site, h)] += e;
  ++site_count_[sidx(method, site, h)];
}

void MetricTable::add_interval(std::size_t, std::size_t, std::size_t, double lo, double hi, double actual) {
  if (std::isnan(actual)) return;
  ++interval_count_;
  if (actual >= lo && actual <= hi) ++interval_hits_;
}

void MetricTable::merge(const MetricTable& o) {
  if (o.methods_ != methods_ || o.horizon_ != horizon_ || o.n_sites_ != n_sites_ || o.n_heights_ != n_heights_) {
    throw PreconditionError("cannot merge metric tables of different shapes");
  }
  for (std::size_t k = 0; k < height_sum_.size(); ++k) {
    height_sum_[k] += o.height_sum_[k];
    height_count_[k] += o.height_count_[k];
  }
  for (std::size_t k = 0; k < site_sum_.size(); ++k) {
    site_sum_[k] += o.site_sum_[k];
    site_count_[k] += o.site_count_[k];
  }
  interval_hits_ += o.interval_hits_;
  interval_count_ += o.interval_count_;
}

std::optional<double> MetricTable::mae_by_height(std::size_t m, std::size_t p, std::size_t h) const {
  const auto c = height_count_[hidx(m, p, h)];
  if (c == 0) return std::nullopt;
  return height_sum_[hidx(m, p, h)] / static_cast<double>(c);
}

std::optional<double> MetricTable::mae_by_site(std::size_t m, std::size_t j, std::size_t h) const {
  const auto c = site_count_[sidx(m, j, h)];
  if (c == 0) return std::nullopt;
  return site_sum_[sidx(m, j, h)] / static_cast<double>(c);
}

std::optional<double> MetricTable::mae(std::size_t m, std::size_t h) const {
  double s = 0.0;
  std::size_t c = 0;
  for (std::size_t p = 0; p < n_heights_; ++p) {
    s += height_sum_[hidx(m, p, h)];
    c += height_count_[hidx(m, p, h)];
  }
  if (c == 0) return std::nullopt;
  return s / static_cast<double>(c);
}

std::optional<double> MetricTable::mean_mae(std::size_t m, std::size_t h_lo, std::size_t h_hi) const {
  double s = 0.0;
  std::size_t c = 0;
  for (std::size_t h = h_lo; h <= std::min(h_hi, horizon_); ++h) {
    if (const auto v = mae(m, h)) {
      s += *v;
      ++c;
    }
  }
  if (c == 0) return std::nullopt;
  return s / static_cast<double>(c);
}

std::optional<double> MetricTable::coverage() const {
  if (interval_count_ == 0) return std::nullopt;
  return static_cast<double>(interval_hits_) / static_cast<double>(interval_count_);
}

std::size_t MetricTable::count(std::size_t m) const {
  std::size_t c = 0;
  for (std::size_t p = 0; p < n_heights_; ++p)
    for (std::size_t h = 1; h <= horizon_; ++h) c += height_count_[hidx(m, p, h)];
  return c;
}

std::string MetricTable::height_csv(const std::vector<double>& heights) const {
  std::ostringstream out;
  out << "method,height_m,horizon_steps,mae,count\n";
  for (std::size_t m = 0; m < methods_.size(); ++m)
    for (std::size_t p = 0; p < n_heights_; ++p)
      for (std::size_t h = 1; h <= horizon_; ++h)
        out << methods_[m] << ',' << io::format_double(heights[p]) << ',' << h << ',' << opt(mae_by_height(m, p, h))
            << ',' << height_count_[hidx(m, p, h)] << '\n';
  return out.str();
}

std::string MetricTable::site_csv(const SiteSet& sites) const {
  std::ostringstream out;
  out << "method,site_id,horizon_steps,mae,count\n";
  for (std::size_t m = 0; m < methods_.size(); ++m)
    for (std::size_t j = 0; j < n_sites_; ++j)
      for (std::size_t h = 1; h <= horizon_; ++h)
        out << methods_[m] << ',' << sites[j].id << ',' << h << ',' << opt(mae_by_site(m, j, h)) << ','
            << site_count_[sidx(m, j, h)] << '\n';
  return out.str();
}

std::string MetricTable::improvement_csv() const {
  std::ostringstream out;
  out << "method,benchmark,horizon_steps,imp_percent\n";
  for (std::size_t b = 1; b < methods_.size(); ++b) {
    for (std::size_t h = 1; h <= horizon_; ++h) {
      const auto star = mae(0, h);
      const auto bench = mae(b, h);
      std::optional<double> imp;
      if (star && bench) imp = improvement(*star, *bench);
      out << methods_[0] << ',' << methods_[b] << ',' << h << ',' << opt(imp) << '\n';
    }
  }
  return out.str();
}

std::optional<double> improvement(double mae_star, double mae_bench) {
  if (mae_bench == 0.0) return std::nullopt;
  return 100.0 * (1.0 - mae_star / mae_bench);
}

ProtocolResult run_protocol(const FittedModel& model, const ObservationPanel& raw_panel,
                            const extractor::MapStream& maps, const ProtocolOptions& options) {
  const auto& proto = options.protocol;
  proto.validate();
  ProtocolResult out;
  const auto T = raw_panel.n_times();
  out.offline_rows = offline_length(T, proto.offline_fraction);
  if (out.offline_rows == 0) throw PreconditionError("offline segment is empty");
  out.rolls = roll_count(T - out.offline_rows, proto.horizon, proto.stride);
  if (out.rolls == 0) throw PreconditionError("online segment is shorter than one forecast horizon");
  out.reference = model.box_cox;

  std::vector<std::string> methods{"DeepMIDE", "PER"};
  if (options.with_ar) methods.push_back("AR");
  const auto n = raw_panel.n_sites();
  const auto P = raw_panel.n_heights();
  out.mps = MetricTable(methods, proto.horizon, n, P);
  out.transformed = MetricTable(methods, proto.horizon, n, P);
  out.outcomes.resize(out.rolls);

  const auto run_roll = [&](std::size_t r) {
    auto& o = out.outcomes[r];
    o.origin = out.offline_rows - 1 + r * proto.stride;
    const auto begin = o.origin + 1 >= proto.history ? o.origin + 1 - proto.history : 0;
    const auto window = raw_panel.slice(begin, o.origin + 1);
    const auto updated = proto.online_update ? train::online_update(model, window, maps, options.training) : model;
    o.omega = updated.omega();
    o.forecast = pipeline::issue_forecast(updated, window, maps, proto.horizon, proto.level);
    o.persistence = persistence_forecast(raw_panel, o.origin, proto.horizon);
    if (options.with_ar) {
      try {
        o.ar = ar_forecast(window, proto.horizon, proto.ar_max_order, options.training.box_cox_offset);
      } catch (const PreconditionError&) {
        o.ar = Mat::Constant(static_cast<Eigen::Index>(proto.horizon), static_cast<Eigen::Index>(n * P), kNaN);
      }
    }
  };
  const auto threads = std::max<std::size_t>(1, std::min(options.threads, out.rolls));
  if (threads == 1) {
    for (std::size_t r = 0; r < out.rolls; ++r) run_roll(r);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t r = w; r < out.rolls; r += threads) run_roll(r);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  const LatentIndexer indexer(n, P);
  for (const auto& o : out.outcomes) {
    for (std::size_t h = 1; h <= proto.horizon; ++h) {
      const auto row = o.origin + h;
      const auto hr = static_cast<Eigen::Index>(h - 1);
      for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t j = 0; j < n; ++j) {
          const double actual = raw_panel.observed(row, j, p) ? raw_panel.value(row, j, p) : kNaN;
          const auto k = static_cast<Eigen::Index>(indexer.flat(p, j));
          std::vector<double> preds{o.forecast.mean_mps(hr, k), o.persistence(hr, k)};
          if (options.with_ar) preds.push_back(o.ar(hr, k));
          for (std::size_t m = 0; m < preds.size(); ++m) {
            out.mps.add(m, h, j, p, preds[m], actual);
            out.transformed.add(m, h, j, p, score_transform(preds[m], out.reference),
                                score_transform(actual, out.reference));
          }
          out.mps.add_interval(h, j, p, o.forecast.lo_mps(hr, k), o.forecast.hi_mps(hr, k), actual);
          out.transformed.add_interval(h, j, p, o.forecast.lo_mps(hr, k), o.forecast.hi_mps(hr, k), actual);
        }
      }
    }
  }
  return out;
}

std::string forecast_csv(const FittedModel& model, std::span<const pipeline::IssuedForecast> forecasts) {
  const auto& s = model.structure;
  const LatentIndexer indexer(s.n_sites(), s.n_heights());
  std::ostringstream out;
  out << "issue_time,horizon_steps,site_id,height_m,mean_mps,lo95_mps,hi95_mps\n";
  for (const auto& f : forecasts) {
    const auto issue = io::format_iso8601(f.issue_time);
    for (Eigen::Index h = 0; h < f.mean_mps.rows(); ++h)
      for (std::size_t j = 0; j < s.n_sites(); ++j)
        for (std::size_t p = 0; p < s.n_heights(); ++p) {
          const auto k = static_cast<Eigen::Index>(indexer.flat(p, j));
          out << issue << ',' << h + 1 << ',' << s.sites[j].id << ',' << io::format_double(s.heights[p]) << ','
              << io::format_double(f.mean_mps(h, k)) << ',' << io::format_double(f.lo_mps(h, k)) << ','
              << io::format_double(f.hi_mps(h, k)) << '\n';
        }
  }
  return out.str();
}

double wind_shear(double z_hi, double z_lo, double h_hi, double h_lo) {
  if (!(z_hi > 0.0 && z_lo > 0.0 && h_hi > 0.0 && h_lo > 0.0)) {
    throw DomainError("wind shear needs positive speeds and heights");
  }
  if (h_hi == h_lo) throw DomainError("wind shear needs two distinct heights");
  return std::log(z_hi / z_lo) / std::log(h_hi / h_lo);
}

double PowerCurve::operator()(double speed, double shear) const {
  const double z = (speed - (a + b * shear)) / w;
  return std::clamp(100.0 / (1.0 + std::exp(-z)), 0.0, 100.0);
}

PowerFit fit_power_curve(std::span<const double> v, std::span<const double> s, std::span<const double> y) {
  const auto n = v.size();
  if (s.size() != n || y.size() != n) throw PreconditionError("power curve columns differ in length");
  if (n < 50) throw PreconditionError("power curve fit needs at least 50 rows, got " + std::to_string(n));
  PowerFit out;
  const auto [vmin, vmax] = std::minmax_element(v.begin(), v.end());
  if (*vmin > 3.0 || *vmax < 11.0) out.warnings.push_back("training speeds do not span cut-in (3 m/s) to rated (11 m/s)");

  double a0 = 0.0;
  std::size_t mid = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] > 30.0 && y[i] < 70.0) {
      a0 += v[i];
      ++mid;
    }
  }
  a0 = mid ? a0 / static_cast<double>(mid) : 0.5 * (*vmin + *vmax);
  Eigen::Vector3d x(a0, 0.0, 1.0);

  const auto residuals = [&](const Eigen::Vector3d& q, Vec& r, Mat* jac) {
    r.resize(static_cast<Eigen::Index>(n));
    if (jac) jac->resize(static_cast<Eigen::Index>(n), 3);
    for (std::size_t i = 0; i < n; ++i) {
      const double z = (v[i] - (q(0) + q(1) * s[i])) / q(2);
      const double sig = 1.0 / (1.0 + std::exp(-z));
      const auto k = static_cast<Eigen::Index>(i);
      r(k) = 100.0 * sig - y[i];
      if (jac) {
        const double d = 100.0 * sig * (1.0 - sig);
        (*jac)(k, 0) = -d / q(2);
        (*jac)(k, 1) = -d * s[i] / q(2);
        (*jac)(k, 2) = -d * z / q(2);
      }
    }
  };

  Vec r;
  Mat jac;
  residuals(x, r, &jac);
  double cost = r.squaredNorm();
  double damping = 1e-3;
  for (int it = 0; it < 500; ++it) {
    const Eigen::Matrix3d jtj = jac.transpose() * jac;
    const Eigen::Vector3d g = jac.transpose() * r;
    Eigen::Matrix3d a = jtj;
    a.diagonal() += damping * jtj.diagonal().cwiseMax(1e-12);
    const Eigen::Vector3d step = a.ldlt().solve(-g);
    Eigen::Vector3d trial = x + step;
    if (trial(2) < 1e-3) trial(2) = 1e-3;
    Vec rt;
    residuals(trial, rt, nullptr);
    const double ct = rt.squaredNorm();
    if (ct < cost) {
      const bool done = (cost - ct) <= 1e-14 * std::max(1.0, cost);
      x = trial;
      cost = ct;
      residuals(x, r, &jac);
      damping = std::max(damping * 0.3, 1e-12);
      if (done) break;
    } else {
      damping *= 10.0;
      if (damping > 1e12) break;
    }
  }
  out.curve = {x(0), x(1), x(2)};
  out.rmse = std::sqrt(cost / static_cast<double>(n));
  return out;
}

double speed_to_power(const PowerCurve& curve, double hub_speed, double above_speed, double hub_height,
                      double above_height) {
  const double shear = hub_speed > 0.0 && above_speed > 0.0 ? wind_shear(above_speed, hub_speed, above_height, hub_height) : 0.0;
  return curve(hub_speed, shear);
}

double monte_carlo_power(const PowerCurve& curve, double hub_mean_t, double hub_sd_t, double above_mean_t,
                         double above_sd_t, double hub_height, double above_height,
                         const preprocess::BoxCoxParam& box_cox, std::mt19937_64& rng, std::size_t draws) {
  if (draws == 0) throw PreconditionError("Monte Carlo power needs at least one draw");
  std::normal_distribution<double> gauss(0.0, 1.0);
  double sum = 0.0;
  for (std::size_t d = 0; d < draws; ++d) {
    const double hub = pipeline::to_speed(hub_mean_t + hub_sd_t * gauss(rng), box_cox);
    const double above = pipeline::to_speed(above_mean_t + above_sd_t * gauss(rng), box_cox);
    sum += speed_to_power(curve, hub, above, hub_height, above_height);
  }
  return sum / static_cast<double>(draws);
}

}  // namespace deepmide::evaluate
