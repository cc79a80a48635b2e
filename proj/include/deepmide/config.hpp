#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "deepmide/evaluate.hpp"
#include "deepmide/simulate.hpp"
#include "deepmide/train.hpp"

namespace deepmide::config {

// Flat key-value file. `[section]` headers prefix the keys that follow with
// "section."; keys may also be written fully dotted. `#` and `;` start
// comments. Duplicate keys are rejected.
class IniFile {
 public:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };

  static IniFile parse(const std::string& text, const std::string& source);
  static IniFile load(const std::string& path);

  const std::string& source() const { return source_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  std::string source_;
  std::map<std::string, Entry> entries_;
};

struct RunConfig {
  std::uint64_t seed = 1;
  // Relative paths are resolved against the config file's directory.
  std::string obs_path;
  std::string sites_path;
  std::string maps_path;
  std::string model_path;

  train::ModelConfig model;
  std::optional<double> theta_max;  // default: 1.5 x largest site distance
  train::TrainingConfig training;
  evaluate::RollingProtocol protocol;
  simulate::SimulationConfig simulation;
  bool has_simulation = false;
};

// Applies every entry of `ini` to a default RunConfig. Unknown keys and
// malformed values raise ConfigError naming the key and line; input paths
// that do not exist raise ConfigError too.
RunConfig build_run_config(const IniFile& ini);
RunConfig load_run_config(const std::string& path);

}  // namespace deepmide::config
