#pragma once

// Monte Carlo harness: replicate trials under a scenario, fit the requested
// models and aggregate bias, empirical variance and coverage of the linear
// predictor and its change from s = 0.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vecross/coxph.hpp"
#include "vecross/pspline.hpp"
#include "vecross/simulate.hpp"

namespace vecross {

enum class ModelKind { constant, loglinear, pspline };

struct ModelRequest {
  ModelKind kind = ModelKind::loglinear;
  PSplineSettings pspline;
};

std::string model_label(ModelKind kind);

enum class TimeAxis { calendar, entry };

/// When the analysis dataset is cut: end of follow-up, a fixed day, the
/// day of the k-th counted case, or the crossover trigger day.
struct AnalysisTime {
  enum class Kind { end, day, cases, crossover };
  Kind kind = Kind::end;
  double day = 0.0;
  int cases = 150;
};

struct StudySpec {
  Scenario scenario;
  int n_replicates = 1000;
  std::vector<ModelRequest> models = {{ModelKind::constant, {}}, {ModelKind::loglinear, {}}};
  std::vector<double> eval_years = {0.5, 1.0, 1.5, 2.0};
  AnalysisTime analysis;
  TimeAxis time_axis = TimeAxis::calendar;
  bool open_label_strata = false;
  std::uint64_t base_seed = 20210101;
  int jobs = 1;
  bool collect_frailty = false;
};

/// Seed of replicate r: a 64-bit mix of (base seed, r).
std::uint64_t replicate_seed(std::uint64_t base_seed, int replicate);

/// Estimate, Wald SE and the true value of one reported quantity.
struct Estimate {
  double value = 0.0;
  double se = 0.0;
  double truth = 0.0;
};

struct ModelOutcome {
  ModelKind kind = ModelKind::loglinear;
  bool ok = false;  // fitted and converged
  std::string error;
  std::vector<Estimate> at_s;      // f(s), one per evaluation time
  std::vector<Estimate> change;    // f(s) - f(0)
  Estimate intercept, slope;       // linear trend, slope per year
  std::optional<double> lrt_p;     // vs the constant model, when fitted
  double lrt_df = 0.0;
  double lrt_statistic = 0.0;
  double df = 0.0;                 // effective (spline) df
  int iterations = 0;
};

struct FrailtySummary {
  double mean = 0.0, sd = 0.0, q25 = 0.0, q50 = 0.0, q75 = 0.0;
  int n = 0;
};

struct ReplicateResult {
  int index = 0;
  std::uint64_t seed = 0;
  TrialMetadata metadata;
  int n_events = 0;
  std::vector<ModelOutcome> models;
  std::array<FrailtySummary, 2> frailty{};  // survivors at end of follow-up, by arm
};

/// Simulate, reshape and fit one replicate.
ReplicateResult run_replicate(const StudySpec& spec, int replicate);

struct MetricRow {
  ModelKind model = ModelKind::loglinear;
  std::string quantity;  // "f", "change", "intercept", "slope"
  double s_years = 0.0;
  double bias = 0.0;
  double emp_var = 0.0;  // NaN when fewer than two replicates
  double coverage = 0.0;
  double mean_se = 0.0;
  int n = 0;
};

struct MetricsTable {
  std::vector<MetricRow> rows;
  struct ModelSummary {
    ModelKind model;
    int n_used = 0;
    int non_converged = 0;
    double reject_05 = 0.0;  // LRT rejection rate at 0.05
    double reject_001 = 0.0;
    double mean_lrt_df = 0.0;
    bool has_lrt = false;
    double mean_df = 0.0;
  };
  std::vector<ModelSummary> models;
  int n_replicates = 0;
  int n_triggered = 0;
  double tau_x_mean = 0.0, tau_x_sd = 0.0;  // years
  double n_x_mean = 0.0, n_x_sd = 0.0;
  double events_mean = 0.0;
  std::vector<double> eval_years;
  std::array<FrailtySummary, 2> frailty{};  // geometric means across replicates
  bool has_frailty = false;
  std::vector<std::string> warnings;

  const MetricRow* find(ModelKind model, const std::string& quantity, double s_years) const;
};

MetricsTable aggregate(const StudySpec& spec, const std::vector<ReplicateResult>& replicates);

struct StudyResult {
  std::vector<ReplicateResult> replicates;
  MetricsTable table;
};

/// Replicates run on `spec.jobs` workers; results are collected by index,
/// so the output does not depend on the worker count.
StudyResult run_study(const StudySpec& spec);

struct VarianceRatio {
  ModelKind model;
  std::string quantity;
  double s_years;
  double ratio;
};

/// Empirical-variance ratios a / b at each common (model, quantity, s).
std::vector<VarianceRatio> compare_designs(const MetricsTable& a, const MetricsTable& b);

void write_metrics_csv(std::ostream& out, const MetricsTable& table);
void write_metrics_markdown(std::ostream& out, const MetricsTable& table, const std::string& title);
void write_replicates_csv(std::ostream& out, const std::vector<ReplicateResult>& replicates,
                          const std::vector<double>& eval_years);

}  // namespace vecross
