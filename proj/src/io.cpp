#include "deepmide/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <tuple>

#include "json.hpp"

namespace deepmide::io {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

constexpr double kEarthRadiusKm = 6371.0088;

std::string format_iso8601(UnixSeconds t) {
  using namespace std::chrono;
  const auto days = static_cast<std::int64_t>(std::floor(static_cast<double>(t) / 86400.0));
  const sys_days d{std::chrono::days{days}};
  const year_month_day ymd{d};
  const auto rem = t - days * 86400;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lldZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long long>(rem / 3600), static_cast<long long>((rem / 60) % 60),
                static_cast<long long>(rem % 60));
  return buf;
}

UnixSeconds parse_iso8601(const std::string& text) {
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
  int consumed = 0;
  if (std::sscanf(text.c_str(), "%4d-%2u-%2uT%2u:%2u:%2u%n", &y, &mo, &d, &h, &mi, &s, &consumed) != 6) {
    throw IoError("malformed timestamp '" + text + "'");
  }
  const std::string zone = text.substr(static_cast<std::size_t>(consumed));
  if (!(zone.empty() || zone == "Z" || zone == "+00:00")) {
    throw IoError("timestamp '" + text + "' is not UTC");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{mo}, day{d}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 59) throw IoError("invalid timestamp '" + text + "'");
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<UnixSeconds>(days) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

namespace {

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw IoError("cannot parse " + what + " '" + s + "'");
  return v;
}

std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return in;
}

std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  const auto flush = [&] {
    const auto b = cur.find_first_not_of(" \t\r");
    const auto e = cur.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cur.substr(b, e - b + 1));
    cur.clear();
  };
  for (char c : line) {
    if (c == ',') {
      flush();
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

void write_text(const std::string& path, const std::string& content) {
  auto out = open_out(path, true);
  out << content;
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::string read_text(const std::string& path) {
  auto in = open_in(path, true);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ensure_directory(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

std::vector<Vec2> project_lat_lon(const std::vector<double>& lat, const std::vector<double>& lon) {
  double lat0 = 0.0, lon0 = 0.0;
  for (std::size_t i = 0; i < lat.size(); ++i) {
    lat0 += lat[i];
    lon0 += lon[i];
  }
  lat0 /= static_cast<double>(lat.size());
  lon0 /= static_cast<double>(lat.size());
  const double rad = std::numbers::pi / 180.0;
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < lat.size(); ++i) {
    out.emplace_back(kEarthRadiusKm * (lon[i] - lon0) * rad * std::cos(lat0 * rad),
                     kEarthRadiusKm * (lat[i] - lat0) * rad);
  }
  return out;
}

SiteSet read_sites(const std::string& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("site file '" + path + "' is empty");
  const auto header = split_csv_line(line);
  bool planar = false;
  if (header == std::vector<std::string>{"site_id", "x_km", "y_km"}) {
    planar = true;
  } else if (header != std::vector<std::string>{"site_id", "lat", "lon"}) {
    throw IoError("site file '" + path + "' must have header site_id,lat,lon or site_id,x_km,y_km");
  }
  std::vector<std::string> ids;
  std::vector<double> a, b;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 3) throw IoError(path + ":" + std::to_string(lineno) + ": expected 3 fields");
    ids.push_back(f[0]);
    a.push_back(parse_double(f[1], "coordinate"));
    b.push_back(parse_double(f[2], "coordinate"));
  }
  if (ids.empty()) throw IoError("site file '" + path + "' lists no sites");
  std::vector<Site> sites;
  if (planar) {
    for (std::size_t i = 0; i < ids.size(); ++i) sites.push_back({ids[i], Vec2(a[i], b[i])});
  } else {
    const auto xy = project_lat_lon(a, b);
    for (std::size_t i = 0; i < ids.size(); ++i) sites.push_back({ids[i], xy[i]});
  }
  return SiteSet(std::move(sites));
}

void write_sites_planar(const SiteSet& sites, const std::string& path) {
  std::ostringstream out;
  out << "site_id,x_km,y_km\n";
  for (const auto& s : sites.sites()) {
    out << s.id << ',' << format_double(s.coords.x()) << ',' << format_double(s.coords.y()) << '\n';
  }
  write_text(path, out.str());
}

ObservationData read_observations(const std::string& path, const SiteSet& sites) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("observation file '" + path + "' is empty");
  if (split_csv_line(line) != std::vector<std::string>{"timestamp", "site_id", "height_m", "wind_speed_mps"}) {
    throw IoError("observation file '" + path + "' must have header timestamp,site_id,height_m,wind_speed_mps");
  }
  struct Row {
    UnixSeconds t;
    std::size_t site;
    double height;
    double value;  // NaN when missing
  };
  std::vector<Row> rows;
  std::set<double> height_set;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    const auto where = path + ":" + std::to_string(lineno) + ": ";
    if (f.size() != 4) throw IoError(where + "expected 4 fields");
    const int site = sites.find(f[1]);
    if (site < 0) throw IoError(where + "unknown site id '" + f[1] + "'");
    Row r{};
    try {
      r.t = parse_iso8601(f[0]);
      r.height = parse_double(f[2], "height");
      r.value = f[3].empty() ? std::nan("") : parse_double(f[3], "wind speed");
    } catch (const IoError& e) {
      throw IoError(where + e.what());
    }
    r.site = static_cast<std::size_t>(site);
    height_set.insert(r.height);
    rows.push_back(r);
  }
  if (rows.empty()) throw IoError("observation file '" + path + "' has no rows");

  std::vector<UnixSeconds> stamps;
  for (const auto& r : rows) stamps.push_back(r.t);
  std::sort(stamps.begin(), stamps.end());
  stamps.erase(std::unique(stamps.begin(), stamps.end()), stamps.end());
  std::int64_t step = 0;
  for (std::size_t i = 1; i < stamps.size(); ++i) {
    const auto gap = stamps[i] - stamps[i - 1];
    step = step == 0 ? gap : std::min(step, gap);
  }
  if (step == 0) step = 600;
  for (std::size_t i = 1; i < stamps.size(); ++i) {
    if ((stamps[i] - stamps[0]) % step != 0) {
      throw PreconditionError("timestamp " + format_iso8601(stamps[i]) + " is off the " +
                              std::to_string(step) + " s grid");
    }
  }
  const auto n_times = static_cast<std::size_t>((stamps.back() - stamps.front()) / step) + 1;
  std::vector<UnixSeconds> grid(n_times);
  for (std::size_t t = 0; t < n_times; ++t) grid[t] = stamps.front() + static_cast<std::int64_t>(t) * step;

  HeightLevels heights(std::vector<double>(height_set.begin(), height_set.end()));
  ObservationPanel panel(grid, step, sites.size(), heights.size());
  std::vector<std::uint8_t> seen(n_times * sites.size() * heights.size(), 0);
  for (const auto& r : rows) {
    const auto t = static_cast<std::size_t>((r.t - stamps.front()) / step);
    const auto p = static_cast<std::size_t>(heights.find(r.height));
    auto& flag = seen[(t * sites.size() + r.site) * heights.size() + p];
    if (flag) {
      throw PreconditionError("duplicate observation for " + format_iso8601(r.t) + ", site " +
                              sites[r.site].id + ", height " + format_double(r.height));
    }
    flag = 1;
    if (!std::isnan(r.value)) panel.set(t, r.site, p, r.value);
  }
  panel.validate();
  return {std::move(heights), std::move(panel)};
}

void write_observations(const ObservationPanel& panel, const SiteSet& sites, const HeightLevels& heights,
                        const std::string& path) {
  std::ostringstream out;
  out << "timestamp,site_id,height_m,wind_speed_mps\n";
  for (std::size_t t = 0; t < panel.n_times(); ++t) {
    const auto stamp = format_iso8601(panel.time(t));
    for (std::size_t j = 0; j < panel.n_sites(); ++j) {
      for (std::size_t p = 0; p < panel.n_heights(); ++p) {
        out << stamp << ',' << sites[j].id << ',' << format_double(heights[p]) << ',';
        if (panel.observed(t, j, p)) out << format_double(panel.value(t, j, p));
        out << '\n';
      }
    }
  }
  write_text(path, out.str());
}

extractor::MapStream read_map_stream(const std::string& dir) {
  const auto meta_path = (fs::path(dir) / "stream.json").string();
  extractor::StreamMeta meta;
  try {
    const auto j = json::parse(read_text(meta_path));
    meta.channels = j.at("channels").get<std::vector<std::string>>();
    meta.width = j.at("width").get<std::size_t>();
    meta.height = j.at("height").get<std::size_t>();
    const auto bbox = j.at("bbox").get<std::vector<double>>();
    if (bbox.size() != 4) throw IoError("bbox must have four entries");
    std::copy(bbox.begin(), bbox.end(), meta.bbox.begin());
    meta.step_seconds = j.at("step_seconds").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw IoError("malformed '" + meta_path + "': " + e.what());
  }
  std::vector<std::pair<UnixSeconds, fs::path>> files;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.path().extension() != ".f32") continue;
    files.emplace_back(parse_iso8601(entry.path().stem().string()), entry.path());
  }
  if (ec) throw IoError("cannot list map directory '" + dir + "': " + ec.message());
  std::sort(files.begin(), files.end());
  std::vector<extractor::WeatherMap> maps;
  const auto n = meta.values_per_map();
  for (const auto& [t, p] : files) {
    extractor::WeatherMap m;
    m.time = t;
    m.data.resize(n);
    auto in = open_in(p.string(), true);
    in.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(n * sizeof(float)) || in.peek() != EOF) {
      throw IoError("map file '" + p.string() + "' does not hold " + std::to_string(n) + " float32 values");
    }
    maps.push_back(std::move(m));
  }
  if (maps.empty()) throw IoError("map directory '" + dir + "' holds no .f32 files");
  return extractor::MapStream(std::move(meta), std::move(maps));
}

void write_map_stream(const extractor::MapStream& stream, const std::string& dir) {
  ensure_directory(dir);
  const auto& meta = stream.meta();
  json j;
  j["channels"] = meta.channels;
  j["width"] = meta.width;
  j["height"] = meta.height;
  j["bbox"] = std::vector<double>(meta.bbox.begin(), meta.bbox.end());
  j["step_seconds"] = meta.step_seconds;
  write_text((fs::path(dir) / "stream.json").string(), j.dump(2) + "\n");
  for (const auto& m : stream.maps()) {
    const auto path = (fs::path(dir) / (format_iso8601(m.time) + ".f32")).string();
    auto out = open_out(path, true);
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(float)));
    if (!out) throw IoError("failed writing '" + path + "'");
  }
}

namespace {

json extractor_to_json(const extractor::ExtractorConfig& c) {
  return {{"in_channels", c.in_channels}, {"height", c.height},       {"width", c.width},
          {"conv1_channels", c.conv1_channels}, {"conv2_channels", c.conv2_channels},
          {"kernel", c.kernel},           {"stride", c.stride},       {"features", c.features},
          {"context", c.context},         {"n_heights", c.n_heights}, {"theta_max", c.theta_max}};
}

extractor::ExtractorConfig extractor_from_json(const json& j) {
  extractor::ExtractorConfig c;
  c.in_channels = j.at("in_channels");
  c.height = j.at("height");
  c.width = j.at("width");
  c.conv1_channels = j.at("conv1_channels");
  c.conv2_channels = j.at("conv2_channels");
  c.kernel = j.at("kernel");
  c.stride = j.at("stride");
  c.features = j.at("features");
  c.context = j.at("context");
  c.n_heights = j.at("n_heights");
  c.theta_max = j.at("theta_max");
  c.validate();
  return c;
}

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::istream& in, const std::string& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated model file '" + path + "'");
  return v;
}

}  // namespace

void save_model(const FittedModel& model, const std::string& path) {
  const auto& s = model.structure;
  json j;
  j["format"] = "deepmide-model";
  j["version"] = 1;
  j["extractor"] = extractor_to_json(model.network.config);
  json sites = json::array();
  for (const auto& site : s.sites.sites()) sites.push_back({{"id", site.id}, {"x_km", site.coords.x()}, {"y_km", site.coords.y()}});
  j["sites"] = sites;
  j["heights"] = s.heights.values();
  j["step_seconds"] = s.step_seconds;
  j["kernel_epoch"] = s.kernel_epoch;
  j["normalize_propagator"] = s.normalize_propagator;
  j["omega_raw"] = model.omega_raw;
  j["box_cox"] = {{"lambda", model.box_cox.lambda}, {"offset", model.box_cox.offset}};
  json diurnal = json::array();
  for (std::size_t site = 0; site < model.diurnal.n_sites(); ++site)
    for (std::size_t p = 0; p < model.diurnal.n_heights(); ++p) diurnal.push_back(model.diurnal.coefficients(site, p));
  j["diurnal"] = diurnal;
  j["map_mean"] = model.map_stats.mean;
  j["map_stddev"] = model.map_stats.stddev;
  j["init_variance"] = std::vector<double>(model.init_variance.data(), model.init_variance.data() + model.init_variance.size());
  json log = json::array();
  for (const auto& r : model.log) log.push_back({r.epoch, r.train_nll, r.val_nll, r.lr});
  j["log"] = log;

  const auto text = j.dump();
  std::ostringstream out;
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_u64(out, model.network.values.size());
  out.write(reinterpret_cast<const char*>(model.network.values.data()),
            static_cast<std::streamsize>(model.network.values.size() * sizeof(double)));
  write_text(path, out.str());
}

FittedModel load_model(const std::string& path) {
  auto in = open_in(path, true);
  const auto len = read_u64(in, path);
  if (len > (1ULL << 30)) throw IoError("model file '" + path + "' has an implausible header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw IoError("truncated model file '" + path + "'");
  FittedModel m;
  try {
    const auto j = json::parse(text);
    if (j.at("format") != "deepmide-model") throw IoError("'" + path + "' is not a model file");
    m.network.config = extractor_from_json(j.at("extractor"));
    std::vector<Site> sites;
    for (const auto& s : j.at("sites")) sites.push_back({s.at("id"), Vec2(s.at("x_km"), s.at("y_km"))});
    m.structure.sites = SiteSet(std::move(sites));
    m.structure.heights = HeightLevels(j.at("heights").get<std::vector<double>>());
    m.structure.step_seconds = j.at("step_seconds");
    m.structure.kernel_epoch = j.at("kernel_epoch");
    m.structure.normalize_propagator = j.at("normalize_propagator");
    m.omega_raw = j.at("omega_raw").get<std::array<double, StatParams::kCount>>();
    m.box_cox = {j.at("box_cox").at("lambda"), j.at("box_cox").at("offset")};
    const auto n = m.structure.n_sites();
    const auto P = m.structure.n_heights();
    m.diurnal = preprocess::DiurnalModel(n, P);
    const auto& diurnal = j.at("diurnal");
    if (diurnal.size() != n * P) throw IoError("diurnal block size mismatch");
    for (std::size_t site = 0; site < n; ++site)
      for (std::size_t p = 0; p < P; ++p)
        m.diurnal.coefficients(site, p) = diurnal[site * P + p].get<std::array<double, preprocess::kDiurnalTerms>>();
    m.map_stats.mean = j.at("map_mean").get<std::vector<double>>();
    m.map_stats.stddev = j.at("map_stddev").get<std::vector<double>>();
    const auto iv = j.at("init_variance").get<std::vector<double>>();
    m.init_variance = Eigen::Map<const Vec>(iv.data(), static_cast<Eigen::Index>(iv.size()));
    for (const auto& r : j.at("log")) m.log.push_back({r[0].get<int>(), r[1], r[2], r[3]});
  } catch (const json::exception& e) {
    throw IoError("malformed model descriptor in '" + path + "': " + e.what());
  }
  const auto count = read_u64(in, path);
  const extractor::ParamLayout layout(m.network.config);
  if (count != layout.total) throw IoError("model file '" + path + "' parameter count does not match its architecture");
  m.network.values.resize(count);
  if (!in.read(reinterpret_cast<char*>(m.network.values.data()), static_cast<std::streamsize>(count * sizeof(double)))) {
    throw IoError("truncated model file '" + path + "'");
  }
  return m;
}

}  // namespace deepmide::io
