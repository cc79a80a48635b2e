// deepmide command-line entry point.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "deepmide/config.hpp"
#include "deepmide/evaluate.hpp"
#include "deepmide/gradcheck.hpp"
#include "deepmide/io.hpp"
#include "deepmide/pipeline.hpp"
#include "deepmide/plot.hpp"
#include "deepmide/simulate.hpp"
#include "deepmide/train.hpp"

namespace fs = std::filesystem;
using namespace deepmide;

namespace {

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

std::string build_identity() {
  std::ostringstream s;
  s << "deepmide " << DEEPMIDE_VERSION;
#if defined(__clang__)
  s << " (clang " << __clang_major__ << "." << __clang_minor__ << ")";
#elif defined(__GNUC__)
  s << " (gcc " << __GNUC__ << "." << __GNUC_MINOR__ << ")";
#endif
  return s.str();
}

SiteSet resolve_sites(const std::string& flag, const config::RunConfig* cfg, const std::string& obs_path) {
  if (!flag.empty()) return io::read_sites(flag);
  if (cfg && !cfg->sites_path.empty()) return io::read_sites(cfg->sites_path);
  const auto guess = join(fs::path(obs_path).parent_path().string(), "sites.csv");
  if (!fs::exists(guess)) throw ConfigError("no site file given and '" + guess + "' does not exist");
  return io::read_sites(guess);
}

// Observations read against the model's sites, with heights checked.
ObservationPanel read_model_observations(const FittedModel& model, const std::string& path) {
  auto data = io::read_observations(path, model.structure.sites);
  if (data.heights.values() != model.structure.heights.values()) {
    throw PreconditionError("observation heights do not match the model's heights");
  }
  if (data.panel.step_seconds() != model.structure.step_seconds) {
    throw PreconditionError("observation time step does not match the model's");
  }
  return std::move(data.panel);
}

std::size_t row_of(const ObservationPanel& panel, UnixSeconds t) {
  if (panel.n_times() == 0 || t < panel.time(0) || (t - panel.time(0)) % panel.step_seconds() != 0) {
    throw PreconditionError("time " + io::format_iso8601(t) + " is not on the observation grid");
  }
  const auto row = static_cast<std::size_t>((t - panel.time(0)) / panel.step_seconds());
  if (row >= panel.n_times()) throw PreconditionError("time " + io::format_iso8601(t) + " is after the last observation");
  return row;
}

struct Common {
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
};

// ---- simulate --------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int run_simulate(const SimulateArgs& a) {
  auto cfg = config::load_run_config(a.config);
  if (!cfg.has_simulation) throw ConfigError(a.config + ": no simulate.* keys");
  if (a.seed) cfg.simulation.seed = *a.seed;
  const auto truth = simulate::simulate_process(cfg.simulation);
  simulate::write_fixture(truth, a.out);
  std::cout << "simulated " << truth.speeds.n_times() << " steps, " << truth.sites.size() << " sites, "
            << truth.heights.size() << " heights, " << truth.maps.size() << " maps -> " << a.out << "\n";
  return 0;
}

// ---- diagnose --------------------------------------------------------------

struct DiagnoseArgs {
  std::string obs;
  std::string sites;
  std::string out;
  std::size_t max_lag = 12;
};

int run_diagnose(const DiagnoseArgs& a) {
  const auto sites = resolve_sites(a.sites, nullptr, a.obs);
  const auto data = io::read_observations(a.obs, sites);
  const auto bc = preprocess::fit_box_cox(data.panel);
  const auto transformed = preprocess::transform_panel(data.panel, bc);
  const auto curves = preprocess::asymmetry_curves(transformed, data.panel, a.max_lag);

  io::ensure_directory(a.out);
  const double hours_per_step = static_cast<double>(data.panel.step_seconds()) / 3600.0;
  std::ostringstream csv;
  csv << "height,regime,pair,lag_hours,asymmetry\n";
  std::map<std::pair<std::size_t, int>, std::vector<std::pair<double, double>>> mean_abs;  // (height, regime) -> (sum, n) per lag
  for (const auto& e : curves) {
    csv << io::format_double(data.heights[e.height]) << ',' << preprocess::regime_name(e.regime) << ','
        << sites[e.site_i].id << '-' << sites[e.site_j].id << ',' << io::format_double(e.lag * hours_per_step) << ','
        << io::format_double(e.value) << '\n';
    auto& acc = mean_abs[{e.height, static_cast<int>(e.regime)}];
    acc.resize(a.max_lag, {0.0, 0.0});
    acc[e.lag - 1].first += std::abs(e.value);
    acc[e.lag - 1].second += 1.0;
  }
  io::write_text(join(a.out, "asymmetry.csv"), csv.str());

  std::vector<plot::Series> series;
  for (const auto& [key, acc] : mean_abs) {
    plot::Series s;
    s.name = io::format_double(data.heights[key.first]) + " m " + preprocess::regime_name(static_cast<preprocess::Regime>(key.second));
    for (std::size_t u = 0; u < acc.size(); ++u) {
      s.x.push_back(static_cast<double>(u + 1) * hours_per_step);
      s.y.push_back(acc[u].second > 0 ? acc[u].first / acc[u].second : std::nan(""));
    }
    series.push_back(std::move(s));
  }
  io::write_text(join(a.out, "asymmetry.svg"),
                 plot::line_chart("Mean |asymmetry| over site pairs", "lag (hours)", "mean |a|", series));
  std::cout << "Box-Cox lambda " << bc.lambda << "; " << curves.size() << " asymmetry estimates -> " << a.out << "\n";
  return 0;
}

// ---- fit -------------------------------------------------------------------

struct FitArgs {
  std::string obs;
  std::string maps;
  std::string config;
  std::string sites;
  std::string out;
  std::string log;
  std::optional<std::uint64_t> seed;
};

int run_fit(const FitArgs& a, const Common& common) {
  auto cfg = config::load_run_config(a.config);
  if (a.seed) cfg.seed = cfg.training.seed = *a.seed;
  cfg.training.threads = common.threads;
  const auto sites = resolve_sites(a.sites, &cfg, a.obs);
  const auto data = io::read_observations(a.obs, sites);
  const auto maps = io::read_map_stream(a.maps);

  auto model_cfg = cfg.model;
  const auto& meta = maps.meta();
  model_cfg.extractor.in_channels = meta.channels.size();
  model_cfg.extractor.height = meta.height;
  model_cfg.extractor.width = meta.width;
  model_cfg.extractor.n_heights = data.heights.size();
  model_cfg.extractor.theta_max = cfg.theta_max ? *cfg.theta_max : 1.5 * std::max(1.0, pairwise_distances(sites).maxCoeff());
  model_cfg.extractor.validate();

  const auto offline = evaluate::offline_length(data.panel.n_times(), cfg.protocol.offline_fraction);
  const auto panel = data.panel.slice(0, offline);
  std::cerr << "fitting on " << offline << " of " << data.panel.n_times() << " rows\n";
  const auto model = train::offline_fit(panel, sites, data.heights, maps, model_cfg, cfg.training, nullptr,
                                        [](const TrainLogRow& r) {
                                          std::cerr << "epoch " << r.epoch << " train " << r.train_nll << " val "
                                                    << r.val_nll << " lr " << r.lr << "\n";
                                          return true;
                                        });
  io::save_model(model, a.out);
  if (!a.log.empty()) {
    std::ostringstream log;
    log << "epoch,train_nll,val_nll,lr\n";
    for (const auto& r : model.log) {
      log << r.epoch << ',' << io::format_double(r.train_nll) << ',' << io::format_double(r.val_nll) << ','
          << io::format_double(r.lr) << '\n';
    }
    io::write_text(a.log, log.str());
  }
  const auto omega = model.omega().to_array();
  std::cout << "saved " << a.out << " (" << model.log.size() << " epochs); omega:";
  for (std::size_t k = 0; k < omega.size(); ++k) std::cout << ' ' << StatParams::names()[k] << '=' << omega[k];
  std::cout << "\n";
  return 0;
}

// ---- forecast --------------------------------------------------------------

struct ForecastArgs {
  std::string model;
  std::string obs;
  std::string maps;
  std::string out;
  std::string issue;
  std::size_t horizon = 144;
  std::size_t history = 1008;
  double level = 0.95;
  bool dump_kernel = false;
};

int run_forecast(const ForecastArgs& a) {
  const auto model = io::load_model(a.model);
  const auto panel = read_model_observations(model, a.obs);
  const auto maps = io::read_map_stream(a.maps);
  const auto issue_row = a.issue.empty() ? panel.n_times() - 1 : row_of(panel, io::parse_iso8601(a.issue));
  const auto begin = issue_row + 1 >= a.history ? issue_row + 1 - a.history : 0;
  const auto history = panel.slice(begin, issue_row + 1);
  const auto f = pipeline::issue_forecast(model, history, maps, a.horizon, a.level);

  io::ensure_directory(a.out);
  const std::vector<pipeline::IssuedForecast> all{f};
  io::write_text(join(a.out, "forecast.csv"), evaluate::forecast_csv(model, all));
  if (a.dump_kernel) {
    std::ostringstream k;
    k << "horizon_steps,row,col,value\n";
    for (std::size_t h = 0; h < f.times.size(); ++h) {
      const Mat kt = pipeline::propagator_at(model, f.times[h], f.theta.step(h));
      for (Eigen::Index r = 0; r < kt.rows(); ++r)
        for (Eigen::Index c = 0; c < kt.cols(); ++c)
          k << h + 1 << ',' << r << ',' << c << ',' << io::format_double(kt(r, c)) << '\n';
    }
    io::write_text(join(a.out, "kernel.csv"), k.str());
  }
  std::cout << "forecast issued at " << io::format_iso8601(f.issue_time) << " for " << a.horizon << " steps -> "
            << a.out << "\n";
  return 0;
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::string model;
  std::string obs;
  std::string maps;
  std::string protocol;
  std::string out;
  bool dump_advection = false;
  bool no_ar = false;
};

plot::Series mae_series(const evaluate::MetricTable& t, std::size_t m, const std::string& name, bool by_height,
                        std::size_t index) {
  plot::Series s;
  s.name = name;
  for (std::size_t h = 1; h <= t.horizon(); ++h) {
    const auto v = by_height ? t.mae_by_height(m, index, h) : t.mae_by_site(m, index, h);
    s.x.push_back(static_cast<double>(h));
    s.y.push_back(v ? *v : std::nan(""));
  }
  return s;
}

int run_evaluate(const EvaluateArgs& a, const Common& common) {
  const auto cfg = config::load_run_config(a.protocol);
  const auto model = io::load_model(a.model);
  const auto panel = read_model_observations(model, a.obs);
  const auto maps = io::read_map_stream(a.maps);

  evaluate::ProtocolOptions options;
  options.protocol = cfg.protocol;
  options.training = cfg.training;
  options.training.threads = 1;
  options.with_ar = !a.no_ar;
  options.threads = common.threads;
  const auto result = evaluate::run_protocol(model, panel, maps, options);
  const auto& s = model.structure;

  io::ensure_directory(a.out);
  for (const auto& [scale, table] : {std::pair<std::string, const evaluate::MetricTable*>{"mps", &result.mps},
                                     {"transformed", &result.transformed}}) {
    io::write_text(join(a.out, "mae_height_" + scale + ".csv"), table->height_csv(s.heights.values()));
    io::write_text(join(a.out, "mae_site_" + scale + ".csv"), table->site_csv(s.sites));
    io::write_text(join(a.out, "improvement_" + scale + ".csv"), table->improvement_csv());
  }

  const auto H = options.protocol.horizon;
  const auto lo = std::min<std::size_t>(6, H);
  std::ostringstream summary;
  summary << "key,value\n";
  summary << "rolls," << result.rolls << "\n";
  summary << "offline_rows," << result.offline_rows << "\n";
  summary << "instances," << evaluate::instance_count(result.rolls, H, s.n_sites(), s.n_heights()) << "\n";
  summary << "reference_lambda," << io::format_double(result.reference.lambda) << "\n";
  for (std::size_t m = 0; m < result.mps.methods().size(); ++m) {
    const auto& name = result.mps.methods()[m];
    for (const auto& [scale, table] : {std::pair<std::string, const evaluate::MetricTable*>{"mps", &result.mps},
                                       {"transformed", &result.transformed}}) {
      const auto v = table->mean_mae(m, lo, H);
      summary << "mean_mae_h" << lo << "_" << H << "_" << scale << "_" << name << ',' << (v ? io::format_double(*v) : "")
              << "\n";
    }
  }
  if (const auto c = result.mps.coverage()) summary << "interval_coverage," << io::format_double(*c) << "\n";
  io::write_text(join(a.out, "summary.csv"), summary.str());

  std::vector<pipeline::IssuedForecast> forecasts;
  std::ostringstream omega;
  omega << "issue_time";
  for (const auto* n : StatParams::names()) omega << ',' << n;
  omega << "\n";
  for (const auto& o : result.outcomes) {
    forecasts.push_back(o.forecast);
    omega << io::format_iso8601(o.forecast.issue_time);
    for (double v : o.omega.to_array()) omega << ',' << io::format_double(v);
    omega << "\n";
  }
  io::write_text(join(a.out, "forecasts.csv"), evaluate::forecast_csv(model, forecasts));
  io::write_text(join(a.out, "omega_by_roll.csv"), omega.str());

  std::vector<plot::Series> by_height, by_site;
  for (std::size_t m = 0; m < result.mps.methods().size(); ++m) {
    for (std::size_t p = 0; p < s.n_heights(); ++p)
      by_height.push_back(mae_series(result.mps, m, result.mps.methods()[m] + " " + io::format_double(s.heights[p]) + " m", true, p));
    for (std::size_t j = 0; j < s.n_sites(); ++j)
      by_site.push_back(mae_series(result.mps, m, result.mps.methods()[m] + " " + s.sites[j].id, false, j));
  }
  io::write_text(join(a.out, "mae_height.svg"), plot::line_chart("MAE by height", "horizon (steps)", "MAE (m/s)", by_height));
  io::write_text(join(a.out, "mae_site.svg"), plot::line_chart("MAE by site", "horizon (steps)", "MAE (m/s)", by_site));

  if (a.dump_advection) {
    pipeline::AdvectionEngine engine(model, maps);
    const auto online = panel.slice(result.offline_rows, panel.n_times());
    const auto theta = engine.series(online.times());
    std::ostringstream csv;
    csv << "timestamp,height_m,theta_x,theta_y,norm\n";
    std::vector<plot::Series> norms(s.n_heights());
    for (std::size_t p = 0; p < s.n_heights(); ++p) norms[p].name = io::format_double(s.heights[p]) + " m";
    for (std::size_t t = 0; t < theta.n_times(); ++t) {
      for (std::size_t p = 0; p < s.n_heights(); ++p) {
        const auto& v = theta.at(t, p);
        csv << io::format_iso8601(online.time(t)) << ',' << io::format_double(s.heights[p]) << ','
            << io::format_double(v.x()) << ',' << io::format_double(v.y()) << ',' << io::format_double(v.norm()) << '\n';
        norms[p].x.push_back(static_cast<double>(t));
        norms[p].y.push_back(v.norm());
      }
    }
    io::write_text(join(a.out, "advection.csv"), csv.str());
    io::write_text(join(a.out, "advection.svg"),
                   plot::line_chart("Advection norm", "online step", "norm (km/step)", norms));
  }
  std::cout << result.rolls << " rolls evaluated -> " << a.out << "\n";
  return 0;
}

// ---- power -----------------------------------------------------------------

struct PowerArgs {
  std::string train;
  std::string forecast;
  std::string model;
  std::string out;
  double hub_height = 140.0;
  double above_height = 180.0;
  double below_height = 100.0;
  std::size_t draws = 500;
  std::optional<std::uint64_t> seed;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const std::string& path) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IoError("'" + path + "' lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

CsvTable read_csv(const std::string& path) {
  std::istringstream in(io::read_text(path));
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path + "' is empty");
  t.header = io::split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto f = io::split_csv_line(line);
    if (f.size() != t.header.size()) throw IoError("'" + path + "': row with " + std::to_string(f.size()) + " fields");
    t.rows.push_back(std::move(f));
  }
  return t;
}

double to_number(const std::string& s, const std::string& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw IoError("'" + path + "': cannot parse number '" + s + "'");
}

int run_power(const PowerArgs& a) {
  const auto train = read_csv(a.train);
  const auto cv = train.column("speed_mps", a.train), cs = train.column("shear", a.train), cp = train.column("power", a.train);
  std::vector<double> v, s, p;
  for (const auto& r : train.rows) {
    v.push_back(to_number(r[cv], a.train));
    s.push_back(to_number(r[cs], a.train));
    p.push_back(to_number(r[cp], a.train));
  }
  const auto fit = evaluate::fit_power_curve(v, s, p);
  for (const auto& w : fit.warnings) std::cerr << "warning: " << w << "\n";
  io::ensure_directory(a.out);
  nlohmann::json j{{"a", fit.curve.a}, {"b", fit.curve.b}, {"w", fit.curve.w}, {"rmse", fit.rmse}, {"warnings", fit.warnings}};
  io::write_text(join(a.out, "power_curve.json"), j.dump(2) + "\n");

  std::optional<FittedModel> model;
  if (!a.model.empty()) model = io::load_model(a.model);
  const auto fc = read_csv(a.forecast);
  const auto c_issue = fc.column("issue_time", a.forecast), c_h = fc.column("horizon_steps", a.forecast),
             c_site = fc.column("site_id", a.forecast), c_height = fc.column("height_m", a.forecast),
             c_mean = fc.column("mean_mps", a.forecast), c_lo = fc.column("lo95_mps", a.forecast),
             c_hi = fc.column("hi95_mps", a.forecast);
  struct Levels {
    std::map<double, std::array<double, 3>> by_height;  // mean, lo, hi
  };
  std::map<std::tuple<std::string, long, std::string>, Levels> groups;
  for (const auto& r : fc.rows) {
    auto& g = groups[{r[c_issue], std::stol(r[c_h]), r[c_site]}];
    g.by_height[to_number(r[c_height], a.forecast)] = {to_number(r[c_mean], a.forecast), to_number(r[c_lo], a.forecast),
                                                       to_number(r[c_hi], a.forecast)};
  }
  std::mt19937_64 rng(a.seed.value_or(1));
  const double z = ssm::normal_quantile(0.975);
  std::ostringstream out;
  out << "issue_time,horizon_steps,site_id,shear_a,shear_b,power_point" << (model ? ",power_mc" : "") << "\n";
  for (const auto& [key, g] : groups) {
    const auto hub = g.by_height.find(a.hub_height);
    const auto above = g.by_height.find(a.above_height);
    if (hub == g.by_height.end() || above == g.by_height.end()) {
      throw PreconditionError("forecast lacks the hub or above-hub height");
    }
    const auto below = g.by_height.find(a.below_height);
    const auto shear_or_blank = [](double hi, double lo, double h_hi, double h_lo) {
      return hi > 0.0 && lo > 0.0 ? io::format_double(evaluate::wind_shear(hi, lo, h_hi, h_lo)) : std::string();
    };
    out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ','
        << shear_or_blank(above->second[0], hub->second[0], a.above_height, a.hub_height) << ','
        << (below == g.by_height.end() ? std::string() : shear_or_blank(hub->second[0], below->second[0], a.hub_height, a.below_height))
        << ',' << io::format_double(evaluate::speed_to_power(fit.curve, hub->second[0], above->second[0], a.hub_height, a.above_height));
    if (model) {
      const auto& bc = model->box_cox;
      const auto moments = [&](const std::array<double, 3>& m) {
        const auto t = [&](double x) { return preprocess::apply_box_cox(std::max(x, 1e-6), bc); };
        return std::pair{t(m[0]), (t(m[2]) - t(m[1])) / (2.0 * z)};
      };
      const auto [hm, hs] = moments(hub->second);
      const auto [am, as] = moments(above->second);
      out << ',' << io::format_double(evaluate::monte_carlo_power(fit.curve, hm, hs, am, as, a.hub_height, a.above_height, bc, rng, a.draws));
    }
    out << "\n";
  }
  io::write_text(join(a.out, "power_forecast.csv"), out.str());
  std::cout << "power curve a=" << fit.curve.a << " b=" << fit.curve.b << " w=" << fit.curve.w << " rmse=" << fit.rmse
            << " -> " << a.out << "\n";
  return 0;
}

// ---- gradcheck -------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 1;
  std::size_t instances = 5;
  std::size_t coords = 40;
};

int run_gradcheck(const GradcheckArgs& a) {
  const auto r = train::composite_gradient_check(a.seed, a.instances, a.coords);
  std::cout << "max relative gradient error: " << r.max_rel_error << " over " << r.coordinates << " coordinates ("
            << r.instances << " instances)\n";
  for (const auto& [g, e] : r.per_group) std::cout << "  " << g << ": " << e << "\n";
  std::cout << (r.passed ? "PASS" : "FAIL") << "\n";
  return r.passed ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-height wind speed forecasting with learned advection."};
  app.set_version_flag("--version", build_identity());
  Common common;
  app.add_option("--threads", common.threads, "Worker threads (default: all cores)")->check(CLI::PositiveNumber);
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Generate a synthetic fixture");
  c_sim->add_option("--config", sim.config, "Config file with simulate.* keys")->required()->check(CLI::ExistingFile);
  c_sim->add_option("--out", sim.out, "Output directory")->required();
  c_sim->add_option("--seed", sim.seed, "Override the config seed");

  DiagnoseArgs diag;
  auto* c_diag = app.add_subcommand("diagnose", "Space-time asymmetry of detrended residuals");
  c_diag->add_option("--obs", diag.obs, "Observation CSV")->required()->check(CLI::ExistingFile);
  c_diag->add_option("--sites", diag.sites, "Site CSV (default: sites.csv next to --obs)");
  c_diag->add_option("--out", diag.out, "Output directory")->required();
  c_diag->add_option("--max-lag", diag.max_lag, "Largest lag in steps")->check(CLI::PositiveNumber);

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Offline fit of the network and statistical parameters");
  c_fit->add_option("--obs", fit.obs, "Observation CSV")->required()->check(CLI::ExistingFile);
  c_fit->add_option("--maps", fit.maps, "Weather map directory")->required()->check(CLI::ExistingDirectory);
  c_fit->add_option("--config", fit.config, "Run config")->required()->check(CLI::ExistingFile);
  c_fit->add_option("--sites", fit.sites, "Site CSV (default: paths.sites or sites.csv next to --obs)");
  c_fit->add_option("--out", fit.out, "Model file to write")->required();
  c_fit->add_option("--log", fit.log, "Training log CSV to write");
  c_fit->add_option("--seed", fit.seed, "Override the config seed");

  ForecastArgs fc;
  auto* c_fc = app.add_subcommand("forecast", "Issue one forecast");
  c_fc->add_option("--model", fc.model, "Model file")->required()->check(CLI::ExistingFile);
  c_fc->add_option("--obs", fc.obs, "Observation CSV")->required()->check(CLI::ExistingFile);
  c_fc->add_option("--maps", fc.maps, "Weather map directory")->required()->check(CLI::ExistingDirectory);
  c_fc->add_option("--out", fc.out, "Output directory")->required();
  c_fc->add_option("--issue", fc.issue, "Issue time, ISO-8601 UTC (default: last observation)");
  c_fc->add_option("--horizon", fc.horizon, "Forecast steps")->check(CLI::PositiveNumber);
  c_fc->add_option("--history", fc.history, "Rows of history to filter")->check(CLI::PositiveNumber);
  c_fc->add_option("--level", fc.level, "Central interval level")->check(CLI::Range(0.01, 0.999));
  c_fc->add_flag("--dump-kernel", fc.dump_kernel, "Also write the propagators to kernel.csv");

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Rolling-origin evaluation against benchmarks");
  c_ev->add_option("--model", ev.model, "Model file")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--obs", ev.obs, "Observation CSV")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--maps", ev.maps, "Weather map directory")->required()->check(CLI::ExistingDirectory);
  c_ev->add_option("--protocol", ev.protocol, "Config with protocol.* and training.* keys")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--out", ev.out, "Output directory")->required();
  c_ev->add_flag("--dump-advection", ev.dump_advection, "Write the advection series of the online segment");
  c_ev->add_flag("--no-ar", ev.no_ar, "Skip the AR benchmark");

  PowerArgs pw;
  auto* c_pw = app.add_subcommand("power", "Fit a power curve and convert a forecast to power");
  c_pw->add_option("--train", pw.train, "CSV with speed_mps,shear,power")->required()->check(CLI::ExistingFile);
  c_pw->add_option("--forecast", pw.forecast, "Forecast CSV")->required()->check(CLI::ExistingFile);
  c_pw->add_option("--model", pw.model, "Model file, enables the Monte Carlo mean")->check(CLI::ExistingFile);
  c_pw->add_option("--out", pw.out, "Output directory")->required();
  c_pw->add_option("--hub-height", pw.hub_height, "Hub height (m)");
  c_pw->add_option("--above-height", pw.above_height, "Above-hub height (m)");
  c_pw->add_option("--below-height", pw.below_height, "Below-hub height (m)");
  c_pw->add_option("--draws", pw.draws, "Monte Carlo draws")->check(CLI::PositiveNumber);
  c_pw->add_option("--seed", pw.seed, "Monte Carlo seed");

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of the likelihood gradients");
  c_gc->add_option("--seed", gc.seed, "Instance seed");
  c_gc->add_option("--instances", gc.instances, "Random instances")->check(CLI::PositiveNumber);
  c_gc->add_option("--coords", gc.coords, "Network coordinates per instance")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << "\n" << app.help();
    return 1;
  }

  try {
    if (*c_sim) return run_simulate(sim);
    if (*c_diag) return run_diagnose(diag);
    if (*c_fit) return run_fit(fit, common);
    if (*c_fc) return run_forecast(fc);
    if (*c_ev) return run_evaluate(ev, common);
    if (*c_pw) return run_power(pw);
    if (*c_gc) return run_gradcheck(gc);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
