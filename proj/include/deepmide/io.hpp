#pragma once

#include <string>
#include <vector>

#include "deepmide/domain.hpp"
#include "deepmide/extractor.hpp"
#include "deepmide/model.hpp"

namespace deepmide::io {

// "YYYY-MM-DDTHH:MM:SSZ". Parsing also accepts a "+00:00" suffix or no zone.
std::string format_iso8601(UnixSeconds t);
UnixSeconds parse_iso8601(const std::string& text);

// Shortest text that reads back to the same double.
std::string format_double(double v);

// Site CSV with either `site_id,lat,lon` (projected equirectangularly about
// the site centroid) or `site_id,x_km,y_km` (already planar).
SiteSet read_sites(const std::string& path);
void write_sites_planar(const SiteSet& sites, const std::string& path);
// Equirectangular projection about the centroid of the given coordinates.
std::vector<Vec2> project_lat_lon(const std::vector<double>& lat, const std::vector<double>& lon);

struct ObservationData {
  HeightLevels heights;
  ObservationPanel panel;
};

// Long-format CSV `timestamp,site_id,height_m,wind_speed_mps`. Rows may come
// in any order; missing rows and empty speed fields become missing entries.
// The time step is the smallest gap between distinct timestamps.
ObservationData read_observations(const std::string& path, const SiteSet& sites);
void write_observations(const ObservationPanel& panel, const SiteSet& sites, const HeightLevels& heights,
                        const std::string& path);

// Directory with `stream.json` and one `<ISO8601>.f32` file per map.
extractor::MapStream read_map_stream(const std::string& dir);
void write_map_stream(const extractor::MapStream& stream, const std::string& dir);

// uint64 descriptor length, JSON descriptor, uint64 parameter count,
// float64 parameters (all little-endian).
void save_model(const FittedModel& model, const std::string& path);
FittedModel load_model(const std::string& path);

void write_text(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);
void ensure_directory(const std::string& dir);

// Comma split with surrounding whitespace and a trailing CR removed.
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace deepmide::io
