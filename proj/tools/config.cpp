#include "config.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace vecross::cli {

namespace {

json::json_pointer pointer(const std::string& dotted) {
  std::string p;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) p += "/" + part;
  return json::json_pointer(p);
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

void overlay(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError("config: expected an object at '" + prefix + "'");
  for (const auto& [k, v] : user.items()) {
    const std::string path = prefix.empty() ? k : prefix + "." + k;
    if (!base.contains(k)) throw ConfigError("config: unknown key '" + path + "'");
    json& target = base[k];
    if (target.is_object()) {
      overlay(target, v, path);
      continue;
    }
    if (!same_kind(target, v)) {
      throw ConfigError("config: key '" + path + "' expects " + std::string(target.type_name()) +
                        ", got " + v.type_name());
    }
    if (target.is_array()) {
      for (const auto& e : v) {
        if (!target.empty() && !same_kind(target.front(), e)) {
          throw ConfigError("config: key '" + path + "' has an element of the wrong type");
        }
      }
    }
    target = v;
  }
}

template <class T>
T get(const json& c, const std::string& key) {
  try {
    return c.at(pointer(key)).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + key + "': " + e.what());
  }
}

std::vector<double> numbers(const json& c, const std::string& key) {
  const json& v = c.at(pointer(key));
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError("config: '" + key + "' must hold numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

}  // namespace

const std::vector<KeyInfo>& config_keys() {
  static const std::vector<KeyInfo> keys = {
      {"design.n_participants", 3000, "participants randomized"},
      {"design.allocation", 0.5, "fraction assigned to vaccine"},
      {"design.accrual_days", 90.0, "first doses uniform over [0, accrual_days]"},
      {"design.followup_days", 730.0, "follow-up from entry"},
      {"design.dose_to_count_days", 30.0, "lag from first dose to entry (per-protocol)"},
      {"design.blackout_days", 30.0, "crossover blackout: xend - xstart"},
      {"design.dropout_probability", 0.0, "chance of uniform dropout during follow-up"},
      {"design.seed", 1, "trial seed (simulate)"},
      {"design.interlude_order", "uniform", "uniform | enrollment | reverse_enrollment"},
      {"design.crossover.kind", "parallel", "parallel | at_time | at_cases | continuous_uniform"},
      {"design.crossover.day", 365.0, "at_time: interlude start day"},
      {"design.crossover.threshold", 150, "at_cases: counted cases that trigger crossover"},
      {"design.crossover.placebo_only", false, "at_cases: count placebo cases only"},
      {"design.crossover.interlude_days", 28.0, "at_time/at_cases: interlude length"},
      {"design.crossover.start_day", 0.0, "continuous_uniform: window start"},
      {"design.crossover.end_day", 730.0, "continuous_uniform: window end"},
      {"baseline.changepoints", json::array(), "explicit baseline: calendar changepoints"},
      {"baseline.rates", json::array(), "explicit baseline: per-day rates (one more than changepoints)"},
      {"baseline.calibrate.targets", json::array({50.0, 75.0, 50.0, 25.0}),
       "expected placebo cases per period; used when baseline.rates is empty"},
      {"baseline.calibrate.period_days", 91.25, "calibration period length"},
      {"baseline.calibrate.method", "exact", "exact | full_risk_set"},
      {"baseline.calibrate.repeat_factors", json::array({0.5}),
       "later blocks of periods at these multiples of the calibrated rates"},
      {"truth.form", "constant", "constant | loglinear | piecewise"},
      {"truth.log_hr", std::log(0.25), "constant: log(1 - VE)"},
      {"truth.intercept", 0.0, "loglinear: f(0)"},
      {"truth.slope", 0.0, "loglinear: change in f per year"},
      {"truth.values", json::array(), "piecewise: f on each segment"},
      {"truth.changepoints", json::array(), "piecewise: segment starts (days since vaccination)"},
      {"frailty.variance", 0.0, "gamma frailty variance (mean 1); 0 = none"},
      {"fit.model", "loglinear", "constant | loglinear | pspline"},
      {"fit.ties", "breslow", "breslow | efron"},
      {"fit.stratified", false, "use the stratum column as baseline strata"},
      {"fit.slope_unit_days", 365.0, "loglinear slope unit in days (1 = per day)"},
      {"fit.n_terms", 8, "pspline: basis terms L"},
      {"fit.target_df", 3.1, "pspline: effective df target"},
      {"fit.df_tolerance", 0.01, "pspline: df tolerance of the lambda search"},
      {"fit.lambda", -1.0, "pspline: fixed smoothing parameter; negative = use target_df"},
      {"fit.sandwich", false, "pspline: report sandwich instead of model-based SEs"},
      {"fit.ve_grid", "0:730:7", "VE curve grid, from:to:step in days"},
      {"study.n_replicates", 1000, "replicate trials"},
      {"study.models", json::array({"constant", "loglinear"}), "models fitted to each replicate"},
      {"study.eval_years", json::array({0.5, 1.0, 1.5, 2.0}), "evaluation times s in years"},
      {"study.analysis.kind", "end", "end | day | cases | crossover"},
      {"study.analysis.day", 730.0, "analysis.kind = day: calendar cut day"},
      {"study.analysis.cases", 150, "analysis.kind = cases: cut at this counted case"},
      {"study.time_axis", "calendar", "calendar | entry"},
      {"study.open_label_strata", false, "separate baseline after unblinding"},
      {"study.base_seed", 20210101, "replicate seeds derive from this"},
      {"study.jobs", 1, "worker threads"},
      {"study.collect_frailty", false, "summarize frailties of end-of-study survivors"},
      {"study.write_replicates", false, "also write per-replicate estimates"},
      {"study.title", "", "markdown table title"},
  };
  return keys;
}

json default_config() {
  json c = json::object();
  for (const auto& k : config_keys()) c[pointer(k.key)] = k.value;
  return c;
}

json merge_config(const json& user) {
  json c = default_config();
  overlay(c, user, "");
  return c;
}

json load_config(const std::string& path) {
  if (path.empty()) return default_config();
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  json user;
  try {
    user = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  return merge_config(user);
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "': expected key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  // Build the nested object and overlay it so the same checks apply.
  json user = json::object();
  user[pointer(key)] = value;
  if (!config.contains(pointer(key))) throw ConfigError("config: unknown key '" + key + "'");
  if (config.at(pointer(key)).is_object()) {
    throw ConfigError("config: '" + key + "' is a section, not a key");
  }
  overlay(config, user, "");
}

std::string describe_config() {
  std::ostringstream os;
  os << "Config keys (JSON file via --config, or --set key=value):\n";
  std::size_t width = 0;
  for (const auto& k : config_keys()) width = std::max(width, k.key.size());
  for (const auto& k : config_keys()) {
    os << "  " << std::left << std::setw(static_cast<int>(width)) << k.key << "  default "
       << k.value.dump() << "\n      " << k.help << "\n";
  }
  return os.str();
}

ModelKind parse_model(const std::string& name) {
  if (name == "constant") return ModelKind::constant;
  if (name == "loglinear") return ModelKind::loglinear;
  if (name == "pspline") return ModelKind::pspline;
  throw ConfigError("unknown model '" + name + "' (constant | loglinear | pspline)");
}

std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> parts;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ':')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("grid '" + spec + "': '" + item + "' is not a number");
    }
  }
  if (parts.size() != 3) throw ConfigError("grid '" + spec + "': expected from:to:step");
  const double from = parts[0], to = parts[1], step = parts[2];
  if (!(step > 0.0) || !(to >= from) || from < 0.0) {
    throw ConfigError("grid '" + spec + "': need 0 <= from <= to and step > 0");
  }
  std::vector<double> grid;
  const auto n = static_cast<long>(std::floor((to - from) / step + 1e-9));
  for (long i = 0; i <= n; ++i) grid.push_back(from + static_cast<double>(i) * step);
  return grid;
}

Scenario scenario_from(const json& c) {
  Scenario s;
  TrialDesign& d = s.design;
  d.n_participants = get<int>(c, "design.n_participants");
  d.allocation = get<double>(c, "design.allocation");
  d.accrual_days = get<double>(c, "design.accrual_days");
  d.followup_days = get<double>(c, "design.followup_days");
  d.dose_to_count_days = get<double>(c, "design.dose_to_count_days");
  d.blackout_days = get<double>(c, "design.blackout_days");
  d.dropout_probability = get<double>(c, "design.dropout_probability");
  d.seed = get<std::uint64_t>(c, "design.seed");

  const auto order = get<std::string>(c, "design.interlude_order");
  if (order == "uniform") {
    d.interlude_order = InterludeOrder::uniform;
  } else if (order == "enrollment") {
    d.interlude_order = InterludeOrder::enrollment;
  } else if (order == "reverse_enrollment") {
    d.interlude_order = InterludeOrder::reverse_enrollment;
  } else {
    throw ConfigError("design.interlude_order: unknown value '" + order + "'");
  }

  const auto kind = get<std::string>(c, "design.crossover.kind");
  const double interlude = get<double>(c, "design.crossover.interlude_days");
  if (kind == "parallel") {
    d.crossover = CrossoverPolicy::parallel();
  } else if (kind == "at_time") {
    d.crossover = CrossoverPolicy::at_time(get<double>(c, "design.crossover.day"), interlude);
  } else if (kind == "at_cases") {
    d.crossover = CrossoverPolicy::at_cases(get<int>(c, "design.crossover.threshold"), interlude,
                                            get<bool>(c, "design.crossover.placebo_only"));
  } else if (kind == "continuous_uniform") {
    d.crossover = CrossoverPolicy::continuous_uniform(get<double>(c, "design.crossover.start_day"),
                                                      get<double>(c, "design.crossover.end_day"));
  } else {
    throw ConfigError("design.crossover.kind: unknown value '" + kind + "'");
  }

  s.frailty.variance = get<double>(c, "frailty.variance");

  const auto form = get<std::string>(c, "truth.form");
  if (form == "constant") {
    s.truth = ConstantProfile{get<double>(c, "truth.log_hr")};
  } else if (form == "loglinear") {
    s.truth = LogLinearProfile{get<double>(c, "truth.intercept"), get<double>(c, "truth.slope")};
  } else if (form == "piecewise") {
    s.truth = PiecewiseProfile{numbers(c, "truth.values"), numbers(c, "truth.changepoints")};
  } else {
    throw ConfigError("truth.form: unknown value '" + form + "'");
  }

  const auto rates = numbers(c, "baseline.rates");
  const auto targets = numbers(c, "baseline.calibrate.targets");
  try {
    if (!rates.empty()) {
      s.baseline = BaselineHazard(numbers(c, "baseline.changepoints"), rates);
    } else if (!targets.empty()) {
      CalibrationOptions co;
      co.period_days = get<double>(c, "baseline.calibrate.period_days");
      const auto method = get<std::string>(c, "baseline.calibrate.method");
      if (method == "exact") {
        co.method = CalibrationMethod::exact;
      } else if (method == "full_risk_set") {
        co.method = CalibrationMethod::full_risk_set;
      } else {
        throw ConfigError("baseline.calibrate.method: unknown value '" + method + "'");
      }
      co.frailty_variance = s.frailty.variance;
      co.repeat_factors = numbers(c, "baseline.calibrate.repeat_factors");
      s.baseline = calibrate_rates(d, targets, co);
    } else {
      throw ConfigError("baseline: give baseline.rates or baseline.calibrate.targets");
    }
    check_profile(s.truth);
    check_scenario(s);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return s;
}

FitSettings fit_from(const json& c) {
  FitSettings f;
  f.model = parse_model(get<std::string>(c, "fit.model"));
  const auto ties = get<std::string>(c, "fit.ties");
  if (ties == "breslow") {
    f.ties = Ties::breslow;
  } else if (ties == "efron") {
    f.ties = Ties::efron;
  } else {
    throw ConfigError("fit.ties: unknown value '" + ties + "'");
  }
  f.stratified = get<bool>(c, "fit.stratified");
  f.slope_unit_days = get<double>(c, "fit.slope_unit_days");
  if (!(f.slope_unit_days > 0.0)) throw ConfigError("fit.slope_unit_days must be > 0");
  f.pspline.n_terms = get<int>(c, "fit.n_terms");
  f.pspline.target_df = get<double>(c, "fit.target_df");
  f.pspline.df_tolerance = get<double>(c, "fit.df_tolerance");
  f.pspline.lambda = get<double>(c, "fit.lambda");
  f.sandwich = get<bool>(c, "fit.sandwich");
  f.ve_grid = parse_grid(get<std::string>(c, "fit.ve_grid"));
  return f;
}

StudySpec study_from(const json& c) {
  StudySpec s;
  s.scenario = scenario_from(c);
  s.n_replicates = get<int>(c, "study.n_replicates");
  if (s.n_replicates < 1) throw ConfigError("study.n_replicates must be >= 1");
  const FitSettings fit = fit_from(c);
  s.models.clear();
  for (const auto& m : c.at(pointer("study.models"))) {
    if (!m.is_string()) throw ConfigError("study.models must hold model names");
    s.models.push_back({parse_model(m.get<std::string>()), fit.pspline});
  }
  if (s.models.empty()) throw ConfigError("study.models is empty");
  s.eval_years = numbers(c, "study.eval_years");
  for (double y : s.eval_years) {
    if (!(y >= 0.0)) throw ConfigError("study.eval_years must be >= 0");
  }
  const auto kind = get<std::string>(c, "study.analysis.kind");
  if (kind == "end") {
    s.analysis.kind = AnalysisTime::Kind::end;
  } else if (kind == "day") {
    s.analysis.kind = AnalysisTime::Kind::day;
  } else if (kind == "cases") {
    s.analysis.kind = AnalysisTime::Kind::cases;
  } else if (kind == "crossover") {
    s.analysis.kind = AnalysisTime::Kind::crossover;
  } else {
    throw ConfigError("study.analysis.kind: unknown value '" + kind + "'");
  }
  s.analysis.day = get<double>(c, "study.analysis.day");
  s.analysis.cases = get<int>(c, "study.analysis.cases");
  const auto axis = get<std::string>(c, "study.time_axis");
  if (axis == "calendar") {
    s.time_axis = TimeAxis::calendar;
  } else if (axis == "entry") {
    s.time_axis = TimeAxis::entry;
  } else {
    throw ConfigError("study.time_axis: unknown value '" + axis + "'");
  }
  s.open_label_strata = get<bool>(c, "study.open_label_strata");
  s.base_seed = get<std::uint64_t>(c, "study.base_seed");
  s.jobs = get<int>(c, "study.jobs");
  if (s.jobs < 1) throw ConfigError("study.jobs must be >= 1");
  s.collect_frailty = get<bool>(c, "study.collect_frailty");
  return s;
}

}  // namespace vecross::cli
