#include "deepmide/gradcheck.hpp"

#include <algorithm>
#include <map>
#include <random>

#include "deepmide/pipeline.hpp"
#include "deepmide/train.hpp"

namespace deepmide::train {

namespace {

struct Instance {
  FittedModel model;
  ObservationPanel residuals;
  extractor::MapStream maps;
};

Instance random_instance(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Instance in;
  const std::size_t n = 2 + static_cast<std::size_t>(unit(rng) * 2.0);
  const std::size_t P = 2;
  const std::size_t T = 7;
  std::vector<Site> sites;
  for (std::size_t j = 0; j < n; ++j) sites.push_back({"s" + std::to_string(j), Vec2(30.0 * unit(rng), 30.0 * unit(rng))});

  auto& m = in.model;
  m.structure.sites = SiteSet(sites);
  m.structure.heights = HeightLevels({100.0, 150.0});
  m.structure.step_seconds = 600;
  m.structure.kernel_epoch = 6;
  m.structure.normalize_propagator = unit(rng) < 0.5;
  StatParams omega;
  omega.ell_same = 8.0 + 10.0 * unit(rng);
  omega.ell_cross = 8.0 + 10.0 * unit(rng);
  omega.sigma_eps = 0.3 + 0.4 * unit(rng);
  omega.ell_eps = 5.0 + 10.0 * unit(rng);
  omega.sigma_eta = 0.5 + 0.5 * unit(rng);
  omega.ell_eta = 5.0 + 10.0 * unit(rng);
  m.set_omega(omega);

  extractor::ExtractorConfig cfg;
  cfg.in_channels = 3;
  cfg.height = 9;
  cfg.width = 9;
  cfg.conv1_channels = 4;
  cfg.conv2_channels = 5;
  cfg.features = 6;
  cfg.context = 3;
  cfg.n_heights = P;
  cfg.theta_max = 10.0;
  m.network = extractor::init_params(cfg, rng());
  // Non-zero biases so every block carries gradient signal.
  for (auto& v : m.network.values) v += 0.05 * gauss(rng);
  m.map_stats.mean.assign(cfg.in_channels, 0.0);
  m.map_stats.stddev.assign(cfg.in_channels, 1.0);
  m.init_variance = Vec::Constant(static_cast<Eigen::Index>(n * P), 1.0);

  const UnixSeconds start = 1'600'000'000 - 1'600'000'000 % 600;
  std::vector<UnixSeconds> times(T);
  for (std::size_t t = 0; t < T; ++t) times[t] = start + static_cast<UnixSeconds>(t) * 600;
  in.residuals = ObservationPanel(times, 600, n, P);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < P; ++p)
        if (t == 0 || unit(rng) > 0.15) in.residuals.set(t, j, p, gauss(rng));

  extractor::StreamMeta meta;
  meta.channels = {"a", "b", "c"};
  meta.width = cfg.width;
  meta.height = cfg.height;
  meta.bbox = {0.0, 0.0, 90.0, 90.0};
  meta.step_seconds = 600;
  std::vector<extractor::WeatherMap> maps;
  for (std::size_t k = 0; k < T + 2; ++k) {
    extractor::WeatherMap w;
    w.time = start + (static_cast<UnixSeconds>(k) - 2) * 600;
    w.data.resize(meta.values_per_map());
    for (auto& v : w.data) v = static_cast<float>(gauss(rng));
    maps.push_back(std::move(w));
  }
  in.maps = extractor::MapStream(meta, std::move(maps));
  return in;
}

double nll_of(const Instance& in) { return composite_gradient(in.model, in.residuals, in.maps, 1).nll; }

}  // namespace

CompositeCheckReport composite_gradient_check(std::uint64_t seed, std::size_t instances,
                                              std::size_t phi_coords_per_instance) {
  std::mt19937_64 rng(seed);
  CompositeCheckReport report;
  std::map<std::string, double> groups;
  const auto record = [&](const std::string& group, double analytic, double numeric) {
    const double err = extractor::relative_error(analytic, numeric);
    report.max_rel_error = std::max(report.max_rel_error, err);
    groups[group] = std::max(groups[group], err);
    ++report.coordinates;
  };

  for (std::size_t i = 0; i < instances; ++i) {
    auto in = random_instance(rng);
    const auto g = composite_gradient(in.model, in.residuals, in.maps, 1);

    // Statistical parameters, in natural units.
    const auto base = in.model.omega().to_array();
    for (std::size_t k = 0; k < base.size(); ++k) {
      const double h = 1e-5 * base[k];
      auto shifted = in;
      auto up = base, down = base;
      up[k] += h;
      down[k] -= h;
      shifted.model.set_omega(StatParams::from_array(up));
      const double fu = nll_of(shifted);
      shifted.model.set_omega(StatParams::from_array(down));
      const double fd = nll_of(shifted);
      record("omega", g.omega_bar[k], (fu - fd) / (2.0 * h));
    }

    // Advection vectors, with the network output held fixed.
    pipeline::AdvectionEngine engine(in.model, in.maps);
    auto theta = engine.series(in.residuals.times());
    const auto coords = in.model.structure.coords();
    LikelihoodInput li;
    li.sites = coords;
    li.n_heights = in.model.structure.n_heights();
    li.residuals = &in.residuals;
    li.theta = &theta;
    li.init_variance = in.model.init_variance;
    li.kernel_epoch = in.model.structure.kernel_epoch;
    li.normalize = in.model.structure.normalize_propagator;
    li.burn_in = 1;
    const auto lg = kf_gradients(li, in.model.omega(), true);
    for (std::size_t t = 1; t < theta.n_times(); ++t) {
      for (std::size_t p = 0; p < theta.n_heights(); ++p) {
        for (int c = 0; c < 2; ++c) {
          const double orig = theta.at(t, p)(c);
          const double h = 1e-5 * std::max(1.0, std::abs(orig));
          theta.at(t, p)(c) = orig + h;
          const double fu = kf_gradients(li, in.model.omega(), false).nll;
          theta.at(t, p)(c) = orig - h;
          const double fd = kf_gradients(li, in.model.omega(), false).nll;
          theta.at(t, p)(c) = orig;
          record("theta", lg.theta_bar.at(t, p)(c), (fu - fd) / (2.0 * h));
        }
      }
    }

    // Network coordinates: the first of every block, then random ones.
    const extractor::ParamLayout layout(in.model.network.config);
    std::vector<std::size_t> chosen;
    for (const auto& b : layout.blocks) chosen.push_back(b.offset);
    std::uniform_int_distribution<std::size_t> pick(0, layout.total - 1);
    while (chosen.size() < std::max(phi_coords_per_instance, layout.blocks.size())) {
      const auto k = pick(rng);
      if (std::find(chosen.begin(), chosen.end(), k) == chosen.end()) chosen.push_back(k);
    }
    for (std::size_t k : chosen) {
      auto& phi = in.model.network.values;
      const double orig = phi[k];
      const double h = 1e-5 * std::max(1.0, std::abs(orig));
      phi[k] = orig + h;
      const double fu = nll_of(in);
      phi[k] = orig - h;
      const double fd = nll_of(in);
      phi[k] = orig;
      std::string group;
      for (const auto& b : layout.blocks)
        if (k >= b.offset && k < b.offset + b.size) group = b.name;
      record(group, g.phi_bar[k], (fu - fd) / (2.0 * h));
    }
    ++report.instances;
  }
  report.per_group.assign(groups.begin(), groups.end());
  report.passed = report.max_rel_error <= 1e-3;
  return report;
}

}  // namespace deepmide::train
