#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>

#include "deepmide/config.hpp"
#include "deepmide/evaluate.hpp"
#include "deepmide/gradcheck.hpp"
#include "deepmide/io.hpp"
#include "deepmide/kernel.hpp"
#include "deepmide/pipeline.hpp"
#include "deepmide/simulate.hpp"
#include "deepmide/train.hpp"

#define STRINGIFY(x) #x
#define MACRO_STRINGIFY(x) STRINGIFY(x)

namespace py = pybind11;
using namespace deepmide;

namespace {

std::vector<Vec2> rows_to_points(const Mat& m, const char* what) {
  if (m.cols() != 2) throw py::value_error(std::string(what) + " must have two columns");
  std::vector<Vec2> out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.emplace_back(m(r, 0), m(r, 1));
  return out;
}

py::array_t<double> panel_array(const ObservationPanel& p) {
  py::array_t<double> a({p.n_times(), p.n_sites(), p.n_heights()});
  auto v = a.mutable_unchecked<3>();
  for (std::size_t t = 0; t < p.n_times(); ++t)
    for (std::size_t j = 0; j < p.n_sites(); ++j)
      for (std::size_t k = 0; k < p.n_heights(); ++k)
        v(t, j, k) = p.observed(t, j, k) ? p.value(t, j, k) : std::nan("");
  return a;
}

py::array_t<double> theta_array(const kernel::AdvectionSet& th) {
  py::array_t<double> a({th.n_times(), th.n_heights(), std::size_t{2}});
  auto v = a.mutable_unchecked<3>();
  for (std::size_t t = 0; t < th.n_times(); ++t)
    for (std::size_t p = 0; p < th.n_heights(); ++p) {
      v(t, p, 0) = th.at(t, p).x();
      v(t, p, 1) = th.at(t, p).y();
    }
  return a;
}

py::dict omega_dict(const StatParams& o) {
  py::dict d;
  const auto a = o.to_array();
  for (std::size_t k = 0; k < a.size(); ++k) d[StatParams::names()[k]] = a[k];
  return d;
}

ObservationPanel model_panel(const FittedModel& model, const std::string& path) {
  auto data = io::read_observations(path, model.structure.sites);
  if (data.heights.values() != model.structure.heights.values()) {
    throw PreconditionError("observation heights do not match the model's heights");
  }
  return std::move(data.panel);
}

FittedModel fit_files(const std::string& obs, const std::string& maps_dir, const std::string& config_path,
                      const std::string& sites_path, std::size_t threads) {
  auto cfg = config::load_run_config(config_path);
  cfg.training.threads = threads;
  const auto site_file = !sites_path.empty()      ? sites_path
                         : !cfg.sites_path.empty() ? cfg.sites_path
                                                   : (std::filesystem::path(obs).parent_path() / "sites.csv").string();
  const auto sites = io::read_sites(site_file);
  const auto data = io::read_observations(obs, sites);
  const auto maps = io::read_map_stream(maps_dir);
  auto mc = cfg.model;
  mc.extractor.in_channels = maps.meta().channels.size();
  mc.extractor.height = maps.meta().height;
  mc.extractor.width = maps.meta().width;
  mc.extractor.n_heights = data.heights.size();
  mc.extractor.theta_max = cfg.theta_max ? *cfg.theta_max : 1.5 * std::max(1.0, pairwise_distances(sites).maxCoeff());
  const auto offline = evaluate::offline_length(data.panel.n_times(), cfg.protocol.offline_fraction);
  return train::offline_fit(data.panel.slice(0, offline), sites, data.heights, maps, mc, cfg.training);
}

py::dict forecast_files(const FittedModel& model, const std::string& obs, const std::string& maps_dir,
                        std::size_t horizon, const std::optional<std::string>& issue, std::size_t history,
                        double level) {
  const auto panel = model_panel(model, obs);
  const auto maps = io::read_map_stream(maps_dir);
  std::size_t row = panel.n_times() - 1;
  if (issue) {
    const auto t = io::parse_iso8601(*issue);
    if (t < panel.time(0) || (t - panel.time(0)) % panel.step_seconds() != 0) {
      throw PreconditionError("issue time " + *issue + " is not on the observation grid");
    }
    row = static_cast<std::size_t>((t - panel.time(0)) / panel.step_seconds());
    if (row >= panel.n_times()) throw PreconditionError("issue time " + *issue + " is after the last observation");
  }
  const auto begin = row + 1 >= history ? row + 1 - history : 0;
  pipeline::IssuedForecast f;
  {
    py::gil_scoped_release release;
    f = pipeline::issue_forecast(model, panel.slice(begin, row + 1), maps, horizon, level);
  }
  py::dict d;
  d["issue_time"] = io::format_iso8601(f.issue_time);
  d["times"] = f.times;
  d["mean"] = f.mean_mps;
  d["lo"] = f.lo_mps;
  d["hi"] = f.hi_mps;
  d["mean_transformed"] = f.mean_transformed;
  d["sd_transformed"] = f.sd_transformed;
  d["theta"] = theta_array(f.theta);
  return d;
}

}  // namespace

PYBIND11_MODULE(_deepmide, m) {
  m.doc() = "Advection-informed state-space wind forecasting (compiled core).";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("box_cox", py::vectorize([](double v, double lam, double offset) {
          return preprocess::apply_box_cox(v, {lam, offset});
        }),
        py::arg("values"), py::arg("lam"), py::arg("offset") = 0.0);
  m.def("inverse_box_cox", py::vectorize([](double w, double lam, double offset) {
          return preprocess::invert_box_cox(w, {lam, offset});
        }),
        py::arg("values"), py::arg("lam"), py::arg("offset") = 0.0);
  m.def("fit_box_cox", [](const std::vector<double>& v, double offset) {
          return preprocess::fit_box_cox(v, offset).lambda;
        },
        py::arg("values"), py::arg("offset") = 0.0, "Profile-likelihood Box-Cox power on the grid [0, 1].");

  m.def("propagator", [](double t, const Mat& theta, const Mat& sites, double ell_same, double ell_cross, bool normalize) {
          return kernel::build_propagator(t, rows_to_points(theta, "theta"), rows_to_points(sites, "sites"),
                                          {ell_same, ell_cross}, normalize);
        },
        py::arg("t"), py::arg("theta"), py::arg("sites"), py::arg("ell_same"), py::arg("ell_cross"),
        py::arg("normalize") = false,
        "Propagator over height-major latent entries; theta has one (x, y) row per height.");
  m.def("noise_covariance", [](const Mat& sites, std::size_t n_heights, double sigma, double ell) {
          return kernel::build_noise_cov(kernel::NoiseKind::epsilon, {sigma, ell, sigma, ell},
                                         rows_to_points(sites, "sites"), n_heights);
        },
        py::arg("sites"), py::arg("n_heights"), py::arg("sigma"), py::arg("ell"));
  m.def("spectral_radius", [](const Mat& k) { return kernel::spectral_radius(k).value; });

  m.def("wind_shear", &evaluate::wind_shear, py::arg("z_hi"), py::arg("z_lo"), py::arg("h_hi"), py::arg("h_lo"));
  m.def("improvement", &evaluate::improvement, py::arg("mae_star"), py::arg("mae_bench"));
  m.def("roll_count", &evaluate::roll_count, py::arg("online_steps"), py::arg("horizon"), py::arg("stride"));
  m.def("instance_count", &evaluate::instance_count, py::arg("rolls"), py::arg("horizon"), py::arg("sites"),
        py::arg("heights"));

  m.def("gradcheck", [](std::uint64_t seed, std::size_t instances, std::size_t coords) {
          train::CompositeCheckReport r;
          {
            py::gil_scoped_release release;
            r = train::composite_gradient_check(seed, instances, coords);
          }
          py::dict d;
          d["passed"] = r.passed;
          d["max_rel_error"] = r.max_rel_error;
          d["coordinates"] = r.coordinates;
          d["instances"] = r.instances;
          d["per_group"] = r.per_group;
          return d;
        },
        py::arg("seed") = 7, py::arg("instances") = 5, py::arg("coords") = 40);

  m.def("simulate", [](const std::string& config_path, std::optional<std::uint64_t> seed,
                       std::optional<std::string> out) {
          auto cfg = config::load_run_config(config_path);
          if (!cfg.has_simulation) throw ConfigError(config_path + ": no simulate.* keys");
          if (seed) cfg.simulation.seed = *seed;
          simulate::SyntheticTruth truth;
          {
            py::gil_scoped_release release;
            truth = simulate::simulate_process(cfg.simulation);
            if (out) simulate::write_fixture(truth, *out);
          }
          py::dict d;
          d["times"] = truth.speeds.times();
          d["speeds"] = panel_array(truth.speeds);
          d["theta"] = theta_array(truth.theta);
          d["latent"] = truth.latent;
          std::vector<std::string> ids;
          for (const auto& s : truth.sites.sites()) ids.push_back(s.id);
          d["site_ids"] = ids;
          d["heights"] = truth.heights.values();
          return d;
        },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none(),
        "Simulates from the simulate.* keys of a config file; optionally writes the fixture files.");

  py::class_<FittedModel>(m, "Model")
      .def_static("load", &io::load_model, py::arg("path"))
      .def("save", [](const FittedModel& self, const std::string& path) { io::save_model(self, path); },
           py::arg("path"))
      .def_property_readonly("omega", [](const FittedModel& self) { return omega_dict(self.omega()); })
      .def_property_readonly("box_cox_lambda", [](const FittedModel& self) { return self.box_cox.lambda; })
      .def_property_readonly("site_ids", [](const FittedModel& self) {
        std::vector<std::string> ids;
        for (const auto& s : self.structure.sites.sites()) ids.push_back(s.id);
        return ids;
      })
      .def_property_readonly("heights", [](const FittedModel& self) { return self.structure.heights.values(); })
      .def_property_readonly("epochs", [](const FittedModel& self) { return self.log.size(); })
      .def_property_readonly("checksum", [](const FittedModel& self) { return train::checksum(self.network); })
      .def("forecast", &forecast_files, py::arg("obs"), py::arg("maps"), py::arg("horizon") = 144,
           py::arg("issue") = py::none(), py::arg("history") = 1008, py::arg("level") = 0.95)
      .def("advection", [](FittedModel& self, const std::string& maps_dir, const std::vector<std::string>& times) {
        const auto maps = io::read_map_stream(maps_dir);
        std::vector<UnixSeconds> ts;
        for (const auto& t : times) ts.push_back(io::parse_iso8601(t));
        pipeline::AdvectionEngine engine(self, maps);
        return theta_array(engine.series(ts));
      },
           py::arg("maps"), py::arg("times"));

  m.def("fit", [](const std::string& obs, const std::string& maps, const std::string& config,
                  const std::string& sites, std::size_t threads) {
          py::gil_scoped_release release;
          return fit_files(obs, maps, config, sites, threads);
        },
        py::arg("obs"), py::arg("maps"), py::arg("config"), py::arg("sites") = "", py::arg("threads") = 1,
        "Offline fit on the offline fraction of the observations, as the CLI's fit does.");

#ifdef VERSION_INFO
  m.attr("__version__") = MACRO_STRINGIFY(VERSION_INFO);
#else
  m.attr("__version__") = "dev";
#endif
}
