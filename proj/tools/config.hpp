#pragma once

// JSON configuration for the command-line tool. Sections: design, baseline,
// truth, frailty, fit, study. Every key has a default; unknown keys and
// type mismatches are rejected, and any key can be set from the command
// line as --set section.key=value.

#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "vecross/study.hpp"

namespace vecross::cli {

using nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KeyInfo {
  std::string key;  // dotted path
  json value;       // default
  std::string help;
};

/// Every leaf key with its default and a one-line description.
const std::vector<KeyInfo>& config_keys();

json default_config();

/// Defaults overlaid with `user`. Throws ConfigError on unknown keys or
/// values whose JSON type differs from the default's.
json merge_config(const json& user);

/// Reads and merges a config file; an empty path gives the defaults.
json load_config(const std::string& path);

/// "a.b=value". The value is parsed as JSON when possible, otherwise taken
/// as a string.
void apply_override(json& config, const std::string& assignment);

/// Key listing for --help.
std::string describe_config();

Scenario scenario_from(const json& config);
StudySpec study_from(const json& config);

struct FitSettings {
  ModelKind model = ModelKind::loglinear;
  Ties ties = Ties::breslow;
  bool stratified = false;
  double slope_unit_days = kDaysPerYear;
  PSplineSettings pspline;
  bool sandwich = false;
  std::vector<double> ve_grid;  // days since vaccination
};

FitSettings fit_from(const json& config);

ModelKind parse_model(const std::string& name);

/// "from:to:step" in days, inclusive of `to` when it falls on the grid.
std::vector<double> parse_grid(const std::string& spec);

}  // namespace vecross::cli
