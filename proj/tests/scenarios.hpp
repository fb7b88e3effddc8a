#pragma once

// Simulation designs shared by the tests: 3,000 participants, three-month
// accrual, two years of follow-up, 50/75/50/25 expected placebo cases per
// quarter with the second year at `year_two` times the first.

#include <cmath>

#include "vecross/simulate.hpp"
#include "vecross/study.hpp"

namespace vecross::testdata {

enum class Design { parallel, cross_1yr, cross_150 };

inline VEProfile constant_truth() { return ConstantProfile{std::log(0.25)}; }

// 85% at vaccination, 35% after 1.5 years, linear on the log scale.
inline VEProfile waning_truth() {
  return LogLinearProfile{std::log(0.15), (std::log(0.65) - std::log(0.15)) / 1.5};
}

inline Scenario table1_scenario(Design design, VEProfile truth, double year_two = 0.5,
                                int n = 3000) {
  Scenario s;
  s.design.n_participants = n;
  s.design.dose_to_count_days = 0.0;
  if (design == Design::cross_1yr) s.design.crossover = CrossoverPolicy::at_time(365.0, 28.0);
  if (design == Design::cross_150) s.design.crossover = CrossoverPolicy::at_cases(150, 28.0);
  CalibrationOptions co;
  co.method = CalibrationMethod::full_risk_set;
  co.repeat_factors = {year_two};
  s.baseline = calibrate_rates(s.design, {50.0, 75.0, 50.0, 25.0}, co);
  s.truth = std::move(truth);
  return s;
}

inline CoxData reshaped(const SimulatedTrial& trial) {
  return CoxData(reshape_counting_process(trial.records).intervals);
}

}  // namespace vecross::testdata
