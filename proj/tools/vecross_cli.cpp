// vecross: reshape trial records, simulate crossover trials, fit VE(s)
// models and run simulation studies.
//
// Exit codes: 0 ok, 2 input or configuration error, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "config.hpp"
#include "vecross/inference.hpp"
#include "vecross/pspline.hpp"
#include "vecross/study.hpp"

namespace fs = std::filesystem;
using namespace vecross;
using vecross::cli::ConfigError;
using vecross::cli::json;

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 2;
constexpr int kNumericalError = 3;

class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Writes to `path`, or to stdout for "-".
template <class F>
void with_output(const std::string& path, F&& write) {
  if (path == "-") {
    write(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  write(out);
  if (!out) throw ConfigError("write failed: '" + path + "'");
}

json load_with_overrides(const std::string& path, const std::vector<std::string>& overrides) {
  json config = cli::load_config(path);
  for (const auto& o : overrides) cli::apply_override(config, o);
  return config;
}

std::string num(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// ---------------------------------------------------------------- reshape

struct ReshapeArgs {
  std::string in;
  std::string out = "-";
  bool open_label = false;
};

int cmd_reshape(const ReshapeArgs& a) {
  std::vector<ParticipantRecord> records;
  if (a.in == "-") {
    records = read_records(std::cin);
  } else {
    std::ifstream probe(a.in);
    if (!probe) throw ConfigError("cannot open '" + a.in + "'");
    records = read_records(probe);
  }
  if (records.empty()) throw ConfigError("no records");
  records = validate(std::move(records));
  ReshapeOptions opt;
  opt.open_label_strata = a.open_label;
  const auto result = reshape_counting_process(records, opt);
  for (auto id : result.dropped_ids) {
    std::cerr << "note: id " << id << " has no follow-up outside the blackout; dropped\n";
  }
  with_output(a.out, [&](std::ostream& os) { write_intervals(os, result.intervals); });
  return kOk;
}

// --------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string config;
  std::string out = "-";
  std::string meta;
  long long seed = -1;
  std::vector<std::string> overrides;
};

json metadata_json(const SimulatedTrial& trial, const Scenario& scenario) {
  const auto& m = trial.metadata;
  json j;
  j["seed"] = m.seed;
  j["n_records"] = trial.records.size();
  j["triggered"] = m.triggered;
  j["trigger_day"] = m.trigger_day ? json(*m.trigger_day) : json(nullptr);
  j["cases_before_crossover"] = m.cases_before_crossover;
  j["n_windows"] = m.n_windows;
  j["cases_by_arm"] = {{"placebo", m.cases_by_arm[0]}, {"vaccine", m.cases_by_arm[1]}};
  j["cases_after_crossover"] = {{"placebo", m.cases_after_crossover[0]},
                                {"vaccine", m.cases_after_crossover[1]}};
  json quarters = json::array();
  for (const auto& q : m.cases_by_quarter) quarters.push_back({q[0], q[1]});
  j["cases_by_quarter"] = quarters;
  j["baseline"] = {{"changepoints", scenario.baseline.changepoints()},
                   {"rates", scenario.baseline.rates()}};
  return j;
}

int cmd_simulate(const SimulateArgs& a) {
  json config = load_with_overrides(a.config, a.overrides);
  if (a.seed >= 0) config["design"]["seed"] = static_cast<std::uint64_t>(a.seed);
  const Scenario scenario = cli::scenario_from(config);
  const SimulatedTrial trial = simulate_trial(scenario);
  with_output(a.out, [&](std::ostream& os) { write_records(os, trial.records); });

  std::string meta = a.meta;
  if (meta.empty() && a.out != "-") meta = a.out + ".meta.json";
  if (!meta.empty()) {
    with_output(meta, [&](std::ostream& os) { os << metadata_json(trial, scenario).dump(2) << "\n"; });
  }
  std::cerr << trial.records.size() << " records";
  if (trial.metadata.trigger_day) {
    std::cerr << ", crossover day " << format_number(*trial.metadata.trigger_day);
  }
  std::cerr << "\n";
  return kOk;
}

// -------------------------------------------------------------------- fit

struct FitArgs {
  std::string in;
  std::string config;
  std::string model;
  double target_df = -1.0;
  double lambda = -2.0;
  int n_terms = 0;
  std::string ve_grid;
  std::string curve = "ve_curve.csv";
  double slope_unit_days = 0.0;
  bool sandwich = false;
  std::vector<std::string> overrides;
};

void print_coefficients(const FitResult& f, bool sandwich) {
  const Eigen::MatrixXd& cov = sandwich ? f.sandwich_covariance : f.covariance;
  std::size_t width = 4;
  for (const auto& n : f.names) width = std::max(width, n.size());
  std::cout << std::left << std::setw(static_cast<int>(width)) << "term" << std::right
            << std::setw(12) << "estimate" << std::setw(11) << "se" << std::setw(12) << "lower95"
            << std::setw(12) << "upper95" << "\n";
  for (Eigen::Index i = 0; i < f.coefficients.size(); ++i) {
    const double est = f.coefficients(i);
    const double se = std::sqrt(std::max(0.0, cov(i, i)));
    std::cout << std::left << std::setw(static_cast<int>(width)) << f.names[static_cast<std::size_t>(i)]
              << std::right << std::setw(12) << num(est, 5) << std::setw(11) << num(se, 5)
              << std::setw(12) << num(est - kZ95 * se, 5) << std::setw(12)
              << num(est + kZ95 * se, 5) << "\n";
  }
}

int cmd_fit(const FitArgs& a) {
  json config = load_with_overrides(a.config, a.overrides);
  if (!a.model.empty()) config["fit"]["model"] = a.model;
  if (a.target_df > 0.0) config["fit"]["target_df"] = a.target_df;
  if (a.lambda >= 0.0) config["fit"]["lambda"] = a.lambda;
  if (a.n_terms > 0) config["fit"]["n_terms"] = a.n_terms;
  if (!a.ve_grid.empty()) config["fit"]["ve_grid"] = a.ve_grid;
  if (a.slope_unit_days > 0.0) config["fit"]["slope_unit_days"] = a.slope_unit_days;
  if (a.sandwich) config["fit"]["sandwich"] = true;
  const cli::FitSettings s = cli::fit_from(config);

  std::vector<RiskInterval> intervals;
  {
    std::ifstream in(a.in);
    if (!in) throw ConfigError("cannot open '" + a.in + "'");
    intervals = read_intervals(in);
  }
  if (intervals.empty()) throw ConfigError("no intervals");
  const CoxData data(std::move(intervals));

  ModelSpec base;
  base.ties = s.ties;
  base.stratified = s.stratified;

  FitResult result;
  switch (s.model) {
    case ModelKind::constant:
      base.form = ConstantForm{};
      result = fit(data, base);
      break;
    case ModelKind::loglinear:
      base.form = LogLinearForm{s.slope_unit_days};
      result = fit(data, base);
      break;
    case ModelKind::pspline:
      result = fit_pspline(data, s.pspline, base);
      break;
  }
  const bool sandwich = s.sandwich && s.model == ModelKind::pspline;

  std::cout << "model: " << model_label(s.model) << "  events: " << result.n_events
            << "  iterations: " << result.iterations << "\n";
  print_coefficients(result, sandwich);
  std::cout << "loglik: " << num(result.loglik, 6) << "\n";
  if (s.model == ModelKind::loglinear) {
    const double slope = result.coefficients(1) / s.slope_unit_days;
    const double se = std::sqrt(std::max(0.0, result.covariance(1, 1))) / s.slope_unit_days;
    std::cout << "trend per day: " << num(slope, 5) << " (95% CI " << num(slope - kZ95 * se, 5)
              << ", " << num(slope + kZ95 * se, 5) << ")\n";
  }
  if (s.model == ModelKind::pspline) {
    const auto& form = std::get<SplineForm>(result.spec.form);
    std::cout << "lambda: " << format_number(form.lambda) << "  df: " << num(result.spline_df, 3)
              << (sandwich ? "  (sandwich SEs)" : "") << "\n";
  }
  if (s.model != ModelKind::constant) {
    ModelSpec null_spec = base;
    null_spec.form = ConstantForm{};
    const FitResult null_fit = fit(data, null_spec);
    const LRTResult lrt = lrt_time_varying(result, null_fit);
    std::cout << "LRT vs constant VE: chisq " << num(lrt.statistic, 3) << " on "
              << num(lrt.df, 2) << " df, p = ";
    if (lrt.p_value < 0.001) {
      std::cout << "<0.001";
    } else {
      std::cout << num(lrt.p_value, 3);
    }
    std::cout << "\n";
  }

  const VECurve curve = ve_curve(result, s.ve_grid, sandwich);
  with_output(a.curve, [&](std::ostream& os) {
    os << "s_days,f,se,f_lower,f_upper,ve,ve_lower,ve_upper,converged\n";
    for (std::size_t i = 0; i < curve.s.size(); ++i) {
      os << format_number(curve.s[i]) << ',' << format_number(curve.estimate[i]) << ','
         << format_number(curve.se[i]) << ',' << format_number(curve.lower[i]) << ','
         << format_number(curve.upper[i]) << ',' << format_number(curve.ve[i]) << ','
         << format_number(curve.ve_lower[i]) << ',' << format_number(curve.ve_upper[i]) << ','
         << (result.converged ? 1 : 0) << '\n';
    }
  });
  if (!result.converged) {
    throw NumericalFailure("fit did not converge after " + std::to_string(result.iterations) +
                           " iterations; results written but unreliable");
  }
  return kOk;
}

// ------------------------------------------------------------------ study

struct StudyArgs {
  std::string config;
  std::string out = "study_out";
  int reps = -1;
  int jobs = 0;
  long long seed = -1;
  bool replicates = false;
  std::vector<std::string> overrides;
};

int cmd_study(const StudyArgs& a, bool reps_given) {
  json config = load_with_overrides(a.config, a.overrides);
  if (reps_given) {
    if (a.reps < 1) throw ConfigError("--reps must be >= 1");
    config["study"]["n_replicates"] = a.reps;
  }
  if (a.jobs > 0) config["study"]["jobs"] = a.jobs;
  if (a.seed >= 0) config["study"]["base_seed"] = static_cast<std::uint64_t>(a.seed);
  if (a.replicates) config["study"]["write_replicates"] = true;
  const StudySpec spec = cli::study_from(config);

  std::string title = config["study"]["title"].get<std::string>();
  if (title.empty()) title = a.config.empty() ? "study" : fs::path(a.config).stem().string();

  const StudyResult result = run_study(spec);
  fs::create_directories(a.out);
  const fs::path dir(a.out);
  with_output((dir / "metrics.csv").string(),
              [&](std::ostream& os) { write_metrics_csv(os, result.table); });
  with_output((dir / "metrics.md").string(),
              [&](std::ostream& os) { write_metrics_markdown(os, result.table, title); });
  if (config["study"]["write_replicates"].get<bool>()) {
    with_output((dir / "replicates.csv").string(), [&](std::ostream& os) {
      write_replicates_csv(os, result.replicates, spec.eval_years);
    });
  }
  for (const auto& w : result.table.warnings) std::cerr << "warning: " << w << "\n";
  std::cerr << spec.n_replicates << " replicates written to " << a.out << "\n";
  return kOk;
}

template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ValidationError& e) {
    for (const auto& issue : e.issues()) {
      std::cerr << "row " << issue.row + 1 << " (id " << issue.id << "): " << issue.rule << "\n";
    }
    return kInputError;
  } catch (const CsvError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const InvalidDataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const NumericalFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const SingularInformationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const LambdaSearchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericalError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vecross: vaccine efficacy under placebo crossover"};
  app.require_subcommand(1);
  app.footer(cli::describe_config());

  app.add_subcommand("schema", "Print the default configuration as JSON");

  ReshapeArgs ra;
  auto* reshape = app.add_subcommand("reshape", "Wide participant records to start-stop intervals");
  reshape->add_option("--in", ra.in, "Participant CSV (- for stdin)")->required();
  reshape->add_option("--out", ra.out, "Long CSV (- for stdout)")->capture_default_str();
  reshape->add_flag("--open-label-strata", ra.open_label,
                    "Put post-blackout intervals in stratum 1");

  SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "Simulate one trial from a scenario config");
  simulate->add_option("--config", sa.config, "Scenario JSON (defaults if omitted)");
  simulate->add_option("--out", sa.out, "Participant CSV (- for stdout)")->capture_default_str();
  simulate->add_option("--meta", sa.meta, "Metadata JSON (default <out>.meta.json)");
  simulate->add_option("--seed", sa.seed, "Overrides design.seed");
  simulate->add_option("--set,--override", sa.overrides, "key=value config override");

  FitArgs fa;
  auto* fitc = app.add_subcommand("fit", "Fit a VE(s) model to a long CSV");
  fitc->add_option("--in", fa.in, "Long CSV from reshape")->required();
  fitc->add_option("--config", fa.config, "Config JSON; only the fit section is used");
  fitc->add_option("--model", fa.model, "constant | loglinear | pspline");
  fitc->add_option("--target-df", fa.target_df, "P-spline effective df target");
  fitc->add_option("--lambda", fa.lambda, "P-spline smoothing parameter (skips the df search)");
  fitc->add_option("--n-terms", fa.n_terms, "P-spline basis size");
  fitc->add_option("--ve-grid", fa.ve_grid, "VE curve grid from:to:step in days");
  fitc->add_option("--curve", fa.curve, "VE curve CSV (- for stdout)")->capture_default_str();
  fitc->add_option("--slope-unit-days", fa.slope_unit_days, "Log-linear slope unit in days");
  fitc->add_flag("--sandwich", fa.sandwich, "P-spline sandwich standard errors");
  fitc->add_option("--set,--override", fa.overrides, "key=value config override");

  StudyArgs ya;
  auto* study = app.add_subcommand("study", "Monte Carlo study of a scenario");
  study->add_option("--config", ya.config, "Study JSON");
  auto* reps_opt = study->add_option("--reps", ya.reps, "Overrides study.n_replicates");
  study->add_option("--jobs", ya.jobs, "Worker threads");
  study->add_option("--out", ya.out, "Output directory")->capture_default_str();
  study->add_option("--seed", ya.seed, "Overrides study.base_seed");
  study->add_flag("--replicates", ya.replicates, "Also write replicates.csv");
  study->add_option("--set,--override", ya.overrides, "key=value config override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInputError;
  }

  if (app.got_subcommand("schema")) {
    std::cout << cli::default_config().dump(2) << "\n";
    return kOk;
  }
  if (reshape->parsed()) return guarded([&] { return cmd_reshape(ra); });
  if (simulate->parsed()) return guarded([&] { return cmd_simulate(sa); });
  if (fitc->parsed()) return guarded([&] { return cmd_fit(fa); });
  if (study->parsed()) return guarded([&] { return cmd_study(ya, reps_opt->count() > 0); });
  return kInputError;
}
