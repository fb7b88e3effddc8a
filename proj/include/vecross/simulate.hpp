#pragma once

// Trial simulation: staggered entry, event times by inversion of the
// cumulative hazard, placebo crossover with interludes and blackouts,
// gamma frailty, and baseline-rate calibration to expected case counts.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "vecross/hazard.hpp"
#include "vecross/rng.hpp"
#include "vecross/trialdata.hpp"

namespace vecross {

enum class CrossoverKind { parallel, at_time, at_cases, continuous_uniform };
enum class InterludeOrder { uniform, enrollment, reverse_enrollment };

struct CrossoverPolicy {
  CrossoverKind kind = CrossoverKind::parallel;
  double day = 365.0;             // at_time
  int threshold = 150;            // at_cases
  bool placebo_only = false;      // at_cases: count placebo cases only
  double interlude_days = 28.0;   // at_time, at_cases
  double start_day = 0.0;         // continuous_uniform
  double end_day = 730.0;         // continuous_uniform

  static CrossoverPolicy parallel() { return {}; }
  static CrossoverPolicy at_time(double day, double interlude_days);
  static CrossoverPolicy at_cases(int threshold, double interlude_days, bool placebo_only = false);
  static CrossoverPolicy continuous_uniform(double start_day, double end_day);
};

struct TrialDesign {
  int n_participants = 3000;
  double allocation = 0.5;       // vaccine fraction
  double accrual_days = 90.0;
  double followup_days = 730.0;  // from entry
  double dose_to_count_days = 30.0;
  CrossoverPolicy crossover;
  InterludeOrder interlude_order = InterludeOrder::uniform;
  double blackout_days = 30.0;
  double dropout_probability = 0.0;  // uniform censoring over follow-up; 0 = off
  std::uint64_t seed = 1;
};

struct FrailtySpec {
  double variance = 0.0;  // gamma with mean 1; 0 = no frailty
};

struct Scenario {
  TrialDesign design;
  BaselineHazard baseline;
  VEProfile truth = ConstantProfile{};
  FrailtySpec frailty;
};

/// Throws std::invalid_argument naming the first violated invariant.
void check_scenario(const Scenario& scenario);

struct TrialMetadata {
  std::uint64_t seed = 0;
  bool triggered = false;            // a crossover day was set
  std::optional<double> trigger_day;  // start of the interlude
  // Counted cases before crossover: before the participant's own window
  // start, or before the end of the interlude for those without one.
  int cases_before_crossover = 0;
  int n_windows = 0;                 // participants with a crossover window
  std::array<int, 2> cases_by_arm{};  // counted cases (outside blackouts)
  std::array<int, 2> cases_after_crossover{};
  std::vector<std::array<int, 2>> cases_by_quarter;  // calendar quarters of 91.25 days
};

struct SimulatedTrial {
  std::vector<ParticipantRecord> records;
  TrialMetadata metadata;
  std::vector<double> frailty;  // realized U_i, same order as records
};

/// Entry days: first dose uniform on [0, accrual] plus the count lag.
/// Uses the same per-participant streams as simulate_trial.
std::vector<double> draw_entry_times(const TrialDesign& design);

/// Arm of participant `index` under deterministic balanced allocation.
int assigned_arm(const TrialDesign& design, int index);

/// Exp(1) draw E, then the first t in (entry, window_end] with
/// H(entry, t) = E; nullopt when censored at window_end.
std::optional<double> draw_event_time(const HazardContext& ctx, const BaselineHazard& h0,
                                      const VEProfile& profile, double window_end,
                                      SplitMix64& rng);

/// State of one participant after the pre-crossover phase.
struct PreCrossoverState {
  int arm = 0;
  double entry = 0.0;
  double end = 0.0;       // end of follow-up, including dropout
  double pre_time = 0.0;  // event or censoring day if never crossed
  bool pre_event = false;
  double u_interlude = 0.0;
};

struct CrossoverPlan {
  std::optional<double> trigger_day;
  std::vector<std::optional<double>> xstart;  // per participant
};

/// Crossover windows for participants still at risk at their window start.
/// Both arms get windows (blinded crossover).
CrossoverPlan apply_crossover(const CrossoverPolicy& policy, InterludeOrder order,
                              const std::vector<PreCrossoverState>& states);

enum class CalibrationMethod {
  exact,          // expected cases with staggered entry, depletion and frailty
  full_risk_set,  // target / (n_placebo * period length)
};

struct CalibrationOptions {
  double period_days = 91.25;
  CalibrationMethod method = CalibrationMethod::exact;
  double frailty_variance = 0.0;
  double relative_tolerance = 1e-6;
  // Extra blocks of periods whose rates are the calibrated rates times the
  // factor, e.g. {0.5} for a second year at half the first year's hazard.
  std::vector<double> repeat_factors;
};

/// Piecewise-constant placebo baseline whose expected placebo case counts per
/// period (parallel design, before any crossover) equal `targets`. Periods
/// after the last one keep the last rate.
BaselineHazard calibrate_rates(const TrialDesign& design, const std::vector<double>& targets,
                               const CalibrationOptions& options = {});

/// Expected placebo cases per period under `baseline` (the quantity that
/// calibrate_rates matches for the exact method).
std::vector<double> expected_placebo_cases(const TrialDesign& design, const BaselineHazard& baseline,
                                           const std::vector<double>& period_edges,
                                           double frailty_variance);

SimulatedTrial simulate_trial(const Scenario& scenario);

}  // namespace vecross
