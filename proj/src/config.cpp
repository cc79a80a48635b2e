#include "deepmide/config.hpp"

#include <charconv>
#include <filesystem>
#include <functional>
#include <sstream>

#include "deepmide/io.hpp"

namespace deepmide::config {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  for (std::size_t i = 0; i < line.size(); ++i) {
    if ((line[i] == '#' || line[i] == ';') && (i == 0 || line[i - 1] == ' ' || line[i - 1] == '\t')) {
      return line.substr(0, i);
    }
  }
  return line;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

// Value parsing with the key and line in every message.
struct Reader {
  const IniFile& ini;
  const std::string& key;
  const IniFile::Entry& entry;

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError(ini.source() + ":" + std::to_string(entry.line) + ": key '" + key + "': " + what);
  }
  double real() const {
    double v = 0.0;
    const auto& s = entry.value;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) fail("expected a number, got '" + s + "'");
    return v;
  }
  double positive() const {
    const double v = real();
    if (!(v > 0.0)) fail("must be positive");
    return v;
  }
  std::uint64_t count() const {
    std::uint64_t v = 0;
    const auto& s = entry.value;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) {
      fail("expected a non-negative integer, got '" + s + "'");
    }
    return v;
  }
  bool flag() const {
    const auto& s = entry.value;
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    fail("expected true or false, got '" + s + "'");
  }
  std::vector<double> reals() const {
    std::vector<double> out;
    for (const auto& part : split(entry.value, ',')) {
      double v = 0.0;
      const auto res = std::from_chars(part.data(), part.data() + part.size(), v);
      if (res.ec != std::errc() || res.ptr != part.data() + part.size() || part.empty()) {
        fail("expected a comma-separated list of numbers");
      }
      out.push_back(v);
    }
    return out;
  }
  std::string path(bool must_exist) const {
    fs::path p(entry.value);
    if (p.is_relative()) p = fs::path(ini.source()).parent_path() / p;
    if (must_exist && !fs::exists(p)) fail("path '" + p.string() + "' does not exist");
    return p.string();
  }
};

using Setter = std::function<void(RunConfig&, const Reader&)>;

const std::map<std::string, Setter>& schema() {
  static const std::map<std::string, Setter> s = [] {
    std::map<std::string, Setter> m;
    m["seed"] = [](RunConfig& c, const Reader& r) { c.seed = r.count(); };
    m["paths.obs"] = [](RunConfig& c, const Reader& r) { c.obs_path = r.path(true); };
    m["paths.sites"] = [](RunConfig& c, const Reader& r) { c.sites_path = r.path(true); };
    m["paths.maps"] = [](RunConfig& c, const Reader& r) { c.maps_path = r.path(true); };
    m["paths.model"] = [](RunConfig& c, const Reader& r) { c.model_path = r.path(false); };

    m["model.ell_same"] = [](RunConfig& c, const Reader& r) { c.model.omega_init.ell_same = r.positive(); };
    m["model.ell_cross"] = [](RunConfig& c, const Reader& r) { c.model.omega_init.ell_cross = r.positive(); };
    m["model.sigma_eps"] = [](RunConfig& c, const Reader& r) { c.model.omega_init.sigma_eps = r.positive(); };
    m["model.ell_eps"] = [](RunConfig& c, const Reader& r) { c.model.omega_init.ell_eps = r.positive(); };
    m["model.sigma_eta"] = [](RunConfig& c, const Reader& r) { c.model.omega_init.sigma_eta = r.positive(); };
    m["model.ell_eta"] = [](RunConfig& c, const Reader& r) { c.model.omega_init.ell_eta = r.positive(); };
    m["model.kernel_epoch"] = [](RunConfig& c, const Reader& r) {
      c.model.kernel_epoch = static_cast<std::int64_t>(r.count());
      if (c.model.kernel_epoch < 1) r.fail("must be >= 1");
    };
    m["model.normalize_propagator"] = [](RunConfig& c, const Reader& r) { c.model.normalize_propagator = r.flag(); };
    m["model.theta_max"] = [](RunConfig& c, const Reader& r) { c.theta_max = r.positive(); };

    m["extractor.conv1_channels"] = [](RunConfig& c, const Reader& r) { c.model.extractor.conv1_channels = r.count(); };
    m["extractor.conv2_channels"] = [](RunConfig& c, const Reader& r) { c.model.extractor.conv2_channels = r.count(); };
    m["extractor.kernel"] = [](RunConfig& c, const Reader& r) { c.model.extractor.kernel = r.count(); };
    m["extractor.stride"] = [](RunConfig& c, const Reader& r) { c.model.extractor.stride = r.count(); };
    m["extractor.features"] = [](RunConfig& c, const Reader& r) { c.model.extractor.features = r.count(); };
    m["extractor.context"] = [](RunConfig& c, const Reader& r) { c.model.extractor.context = r.count(); };

    m["training.subsequence"] = [](RunConfig& c, const Reader& r) { c.training.subsequence = r.count(); };
    m["training.batch"] = [](RunConfig& c, const Reader& r) { c.training.batch = r.count(); };
    m["training.lr_phi"] = [](RunConfig& c, const Reader& r) { c.training.lr_phi = r.positive(); };
    m["training.lr_omega"] = [](RunConfig& c, const Reader& r) { c.training.lr_omega = r.positive(); };
    m["training.momentum"] = [](RunConfig& c, const Reader& r) { c.training.momentum = r.real(); };
    m["training.max_epochs"] = [](RunConfig& c, const Reader& r) { c.training.max_epochs = r.count(); };
    m["training.patience"] = [](RunConfig& c, const Reader& r) { c.training.patience = r.count(); };
    m["training.plateau"] = [](RunConfig& c, const Reader& r) {
      c.training.plateau = r.count();
      if (c.training.plateau == 0) r.fail("must be >= 1");
    };
    m["training.lr_decay"] = [](RunConfig& c, const Reader& r) { c.training.lr_decay = r.positive(); };
    m["training.clip_norm"] = [](RunConfig& c, const Reader& r) { c.training.clip_norm = r.real(); };
    m["training.burn_in"] = [](RunConfig& c, const Reader& r) { c.training.burn_in = r.count(); };
    m["training.validation_fraction"] = [](RunConfig& c, const Reader& r) { c.training.validation_fraction = r.real(); };
    m["training.online_window"] = [](RunConfig& c, const Reader& r) { c.training.online_window = r.count(); };
    m["training.online_iterations"] = [](RunConfig& c, const Reader& r) { c.training.online_iterations = r.count(); };
    m["training.online_refit_box_cox"] = [](RunConfig& c, const Reader& r) { c.training.online_refit_box_cox = r.flag(); };
    m["training.online_refit_diurnal"] = [](RunConfig& c, const Reader& r) { c.training.online_refit_diurnal = r.flag(); };
    m["training.box_cox_offset"] = [](RunConfig& c, const Reader& r) { c.training.box_cox_offset = r.real(); };

    m["protocol.horizon"] = [](RunConfig& c, const Reader& r) { c.protocol.horizon = r.count(); };
    m["protocol.stride"] = [](RunConfig& c, const Reader& r) { c.protocol.stride = r.count(); };
    m["protocol.offline_fraction"] = [](RunConfig& c, const Reader& r) { c.protocol.offline_fraction = r.real(); };
    m["protocol.level"] = [](RunConfig& c, const Reader& r) { c.protocol.level = r.real(); };
    m["protocol.ar_max_order"] = [](RunConfig& c, const Reader& r) { c.protocol.ar_max_order = r.count(); };
    m["protocol.online_update"] = [](RunConfig& c, const Reader& r) { c.protocol.online_update = r.flag(); };
    m["protocol.history"] = [](RunConfig& c, const Reader& r) { c.protocol.history = r.count(); };

    const auto sim = [&m](const std::string& key, Setter f) {
      m["simulate." + key] = [f](RunConfig& c, const Reader& r) {
        c.has_simulation = true;
        f(c, r);
      };
    };
    sim("sites", [](RunConfig& c, const Reader& r) {
      c.simulation.sites.clear();
      for (const auto& item : split(r.entry.value, ';')) {
        std::istringstream in(item);
        Site s;
        double x = 0.0, y = 0.0;
        if (!(in >> s.id >> x >> y)) r.fail("expected entries 'id x_km y_km' separated by ';'");
        s.coords = Vec2(x, y);
        c.simulation.sites.push_back(s);
      }
    });
    sim("heights", [](RunConfig& c, const Reader& r) { c.simulation.heights = r.reals(); });
    sim("n_times", [](RunConfig& c, const Reader& r) { c.simulation.n_times = r.count(); });
    sim("step_seconds", [](RunConfig& c, const Reader& r) { c.simulation.step_seconds = static_cast<std::int64_t>(r.count()); });
    sim("start_time", [](RunConfig& c, const Reader& r) {
      try {
        c.simulation.start_time = io::parse_iso8601(r.entry.value);
      } catch (const IoError& e) {
        r.fail(e.what());
      }
    });
    sim("ell_same", [](RunConfig& c, const Reader& r) { c.simulation.omega.ell_same = r.real(); });
    sim("ell_cross", [](RunConfig& c, const Reader& r) { c.simulation.omega.ell_cross = r.real(); });
    sim("sigma_eps", [](RunConfig& c, const Reader& r) { c.simulation.omega.sigma_eps = r.real(); });
    sim("ell_eps", [](RunConfig& c, const Reader& r) { c.simulation.omega.ell_eps = r.real(); });
    sim("sigma_eta", [](RunConfig& c, const Reader& r) { c.simulation.omega.sigma_eta = r.real(); });
    sim("ell_eta", [](RunConfig& c, const Reader& r) { c.simulation.omega.ell_eta = r.real(); });
    sim("kernel_epoch", [](RunConfig& c, const Reader& r) { c.simulation.kernel_epoch = static_cast<std::int64_t>(r.count()); });
    sim("normalize_propagator", [](RunConfig& c, const Reader& r) { c.simulation.normalize_propagator = r.flag(); });
    sim("allow_unstable", [](RunConfig& c, const Reader& r) { c.simulation.allow_unstable = r.flag(); });
    sim("advection", [](RunConfig& c, const Reader& r) {
      const auto& v = r.entry.value;
      auto& kind = c.simulation.advection.kind;
      if (v == "zero") {
        kind = simulate::AdvectionKind::zero;
      } else if (v == "constant") {
        kind = simulate::AdvectionKind::constant;
      } else if (v == "piecewise") {
        kind = simulate::AdvectionKind::piecewise;
      } else if (v == "smooth") {
        kind = simulate::AdvectionKind::smooth;
      } else {
        r.fail("expected zero, constant, piecewise or smooth");
      }
    });
    sim("theta_constant", [](RunConfig& c, const Reader& r) {
      const auto v = r.reals();
      if (v.size() != 2) r.fail("expected 'x, y'");
      c.simulation.advection.constant = Vec2(v[0], v[1]);
    });
    sim("norm_min", [](RunConfig& c, const Reader& r) { c.simulation.advection.norm_min = r.real(); });
    sim("norm_max", [](RunConfig& c, const Reader& r) { c.simulation.advection.norm_max = r.real(); });
    sim("segment_min", [](RunConfig& c, const Reader& r) { c.simulation.advection.segment_min = r.count(); });
    sim("segment_max", [](RunConfig& c, const Reader& r) { c.simulation.advection.segment_max = r.count(); });
    sim("direction_deg", [](RunConfig& c, const Reader& r) { c.simulation.advection.direction_deg = r.real(); });
    sim("smooth_persistence", [](RunConfig& c, const Reader& r) { c.simulation.advection.smooth_persistence = r.real(); });
    sim("smooth_turn_deg", [](RunConfig& c, const Reader& r) { c.simulation.advection.smooth_turn_deg = r.real(); });
    sim("height_scale", [](RunConfig& c, const Reader& r) { c.simulation.advection.height_scale = r.reals(); });
    sim("box_cox_lambda", [](RunConfig& c, const Reader& r) { c.simulation.box_cox.lambda = r.real(); });
    sim("box_cox_offset", [](RunConfig& c, const Reader& r) { c.simulation.box_cox.offset = r.real(); });
    sim("level", [](RunConfig& c, const Reader& r) { c.simulation.level = r.reals(); });
    sim("diurnal_amplitude", [](RunConfig& c, const Reader& r) { c.simulation.diurnal_amplitude = r.reals(); });
    sim("diurnal_peak_hour", [](RunConfig& c, const Reader& r) { c.simulation.diurnal_peak_hour = r.real(); });
    sim("speed_coupling", [](RunConfig& c, const Reader& r) { c.simulation.speed_coupling = r.real(); });
    sim("missing_rate", [](RunConfig& c, const Reader& r) { c.simulation.missing_rate = r.real(); });
    sim("min_speed", [](RunConfig& c, const Reader& r) { c.simulation.min_speed = r.positive(); });
    sim("spinup", [](RunConfig& c, const Reader& r) { c.simulation.spinup = r.count(); });
    sim("initial_state", [](RunConfig& c, const Reader& r) { c.simulation.initial_state = r.real(); });
    sim("raster_width", [](RunConfig& c, const Reader& r) { c.simulation.raster_width = r.count(); });
    sim("raster_height", [](RunConfig& c, const Reader& r) { c.simulation.raster_height = r.count(); });
    sim("pixel_km", [](RunConfig& c, const Reader& r) { c.simulation.pixel_km = r.positive(); });
    sim("map_step_seconds", [](RunConfig& c, const Reader& r) { c.simulation.map_step_seconds = static_cast<std::int64_t>(r.count()); });
    sim("context_pad", [](RunConfig& c, const Reader& r) { c.simulation.context_pad = r.count(); });
    sim("map_noise", [](RunConfig& c, const Reader& r) { c.simulation.map_noise = r.real(); });
    sim("tracer_modes", [](RunConfig& c, const Reader& r) { c.simulation.tracer_modes = r.count(); });
    return m;
  }();
  return s;
}

}  // namespace

IniFile IniFile::parse(const std::string& text, const std::string& source) {
  IniFile out;
  out.source_ = source;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (!section.empty()) key = section + "." + key;
    if (out.entries_.count(key)) throw ConfigError(where + "duplicate key '" + key + "'");
    out.entries_[key] = {trim(line.substr(eq + 1)), lineno};
  }
  return out;
}

IniFile IniFile::load(const std::string& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse(text, path);
}

RunConfig build_run_config(const IniFile& ini) {
  RunConfig c;
  const auto& table = schema();
  for (const auto& [key, entry] : ini.entries()) {
    const auto it = table.find(key);
    if (it == table.end()) {
      throw ConfigError(ini.source() + ":" + std::to_string(entry.line) + ": unknown key '" + key + "'");
    }
    it->second(c, Reader{ini, key, entry});
  }
  c.simulation.seed = c.seed;
  c.training.seed = c.seed;
  c.protocol.history = c.training.online_window;
  c.training.validate();
  c.protocol.validate();
  if (c.has_simulation) c.simulation.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) { return build_run_config(IniFile::load(path)); }

}  // namespace deepmide::config
