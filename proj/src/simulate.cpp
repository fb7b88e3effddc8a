#include "vecross/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace vecross {

namespace {

constexpr std::uint64_t kParticipantStream = 1;
constexpr double kQuarterDays = kDaysPerYear / 4.0;

double exponential(SplitMix64& rng) { return -std::log1p(-rng.uniform()); }

// Per-participant draws in a fixed order. The gamma frailty comes last
// because it consumes a variable number of uniforms.
struct Draws {
  double u_dose, e1, e2, u_interlude, u_dropout, u_dropout_time, frailty;
};

Draws draw_participant(std::uint64_t seed, int index, double frailty_variance) {
  SplitMix64 rng = make_stream(seed, static_cast<std::uint64_t>(index), kParticipantStream);
  Draws d{};
  d.u_dose = rng.uniform();
  d.e1 = exponential(rng);
  d.e2 = exponential(rng);
  d.u_interlude = rng.uniform();
  d.u_dropout = rng.uniform();
  d.u_dropout_time = rng.uniform();
  d.frailty = 1.0;
  if (frailty_variance > 0.0) {
    std::gamma_distribution<double> gamma(1.0 / frailty_variance, frailty_variance);
    d.frailty = gamma(rng);
  }
  return d;
}

double entry_day(const TrialDesign& design, double u_dose) {
  return design.accrual_days * u_dose + design.dose_to_count_days;
}

}  // namespace

CrossoverPolicy CrossoverPolicy::at_time(double day, double interlude_days) {
  CrossoverPolicy p;
  p.kind = CrossoverKind::at_time;
  p.day = day;
  p.interlude_days = interlude_days;
  return p;
}

CrossoverPolicy CrossoverPolicy::at_cases(int threshold, double interlude_days, bool placebo_only) {
  CrossoverPolicy p;
  p.kind = CrossoverKind::at_cases;
  p.threshold = threshold;
  p.interlude_days = interlude_days;
  p.placebo_only = placebo_only;
  return p;
}

CrossoverPolicy CrossoverPolicy::continuous_uniform(double start_day, double end_day) {
  CrossoverPolicy p;
  p.kind = CrossoverKind::continuous_uniform;
  p.start_day = start_day;
  p.end_day = end_day;
  return p;
}

void check_scenario(const Scenario& s) {
  const auto& d = s.design;
  auto fail = [](const char* what) { throw std::invalid_argument(what); };
  if (d.n_participants < 2) fail("design.n_participants must be >= 2");
  if (!(d.allocation > 0.0 && d.allocation < 1.0)) fail("design.allocation must be in (0, 1)");
  if (!(d.accrual_days >= 0.0) || !std::isfinite(d.accrual_days)) fail("design.accrual_days must be >= 0");
  if (!(d.followup_days > 0.0) || !std::isfinite(d.followup_days)) fail("design.followup_days must be > 0");
  if (!(d.dose_to_count_days >= 0.0)) fail("design.dose_to_count_days must be >= 0");
  if (!(d.blackout_days > 0.0)) fail("design.blackout_days must be > 0");
  if (!(d.dropout_probability >= 0.0 && d.dropout_probability <= 1.0)) {
    fail("design.dropout_probability must be in [0, 1]");
  }
  const auto& c = d.crossover;
  if (c.kind == CrossoverKind::at_cases && c.threshold < 1) fail("crossover.threshold must be >= 1");
  if ((c.kind == CrossoverKind::at_cases || c.kind == CrossoverKind::at_time) &&
      !(c.interlude_days >= 0.0)) {
    fail("crossover.interlude_days must be >= 0");
  }
  if (c.kind == CrossoverKind::at_time && !(c.day >= 0.0)) fail("crossover.day must be >= 0");
  if (c.kind == CrossoverKind::continuous_uniform && !(c.start_day < c.end_day)) {
    fail("crossover.start_day must be < crossover.end_day");
  }
  if (!(s.frailty.variance >= 0.0) || !std::isfinite(s.frailty.variance)) {
    fail("frailty.variance must be >= 0");
  }
  check_profile(s.truth);
}

int assigned_arm(const TrialDesign& design, int index) {
  const double a = design.allocation;
  return std::floor((index + 1) * a) > std::floor(index * a) ? 1 : 0;
}

std::vector<double> draw_entry_times(const TrialDesign& design) {
  std::vector<double> out(static_cast<std::size_t>(design.n_participants));
  for (int i = 0; i < design.n_participants; ++i) {
    SplitMix64 rng = make_stream(design.seed, static_cast<std::uint64_t>(i), kParticipantStream);
    out[static_cast<std::size_t>(i)] = entry_day(design, rng.uniform());
  }
  return out;
}

std::optional<double> draw_event_time(const HazardContext& ctx, const BaselineHazard& h0,
                                      const VEProfile& profile, double window_end,
                                      SplitMix64& rng) {
  const double e = exponential(rng);
  return invert_cumulative_hazard(ctx.entry, e, window_end, h0, ctx, profile);
}

CrossoverPlan apply_crossover(const CrossoverPolicy& policy, InterludeOrder order,
                              const std::vector<PreCrossoverState>& states) {
  CrossoverPlan plan;
  plan.xstart.assign(states.size(), std::nullopt);
  auto assign_if_at_risk = [&](std::size_t i, double xstart) {
    xstart = std::max(xstart, states[i].entry);
    if (states[i].pre_time > xstart && xstart < states[i].end) plan.xstart[i] = xstart;
  };

  switch (policy.kind) {
    case CrossoverKind::parallel:
      return plan;
    case CrossoverKind::continuous_uniform:
      for (std::size_t i = 0; i < states.size(); ++i) {
        const double lo = std::max(policy.start_day, states[i].entry);
        if (lo < policy.end_day) {
          assign_if_at_risk(i, lo + (policy.end_day - lo) * states[i].u_interlude);
        }
      }
      return plan;
    case CrossoverKind::at_time:
      plan.trigger_day = policy.day;
      break;
    case CrossoverKind::at_cases: {
      std::vector<double> cases;
      for (const auto& s : states) {
        if (s.pre_event && (!policy.placebo_only || s.arm == 0)) cases.push_back(s.pre_time);
      }
      if (static_cast<int>(cases.size()) < policy.threshold) return plan;
      std::nth_element(cases.begin(), cases.begin() + (policy.threshold - 1), cases.end());
      plan.trigger_day = cases[static_cast<std::size_t>(policy.threshold - 1)];
      break;
    }
  }

  const double d = *plan.trigger_day;
  const double span = policy.interlude_days;
  if (order == InterludeOrder::uniform) {
    for (std::size_t i = 0; i < states.size(); ++i) {
      assign_if_at_risk(i, d + span * states[i].u_interlude);
    }
    return plan;
  }
  // Ordered interludes: participants at risk at the trigger day are spread
  // evenly over the interlude by entry day.
  std::vector<std::size_t> alive;
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i].pre_time > d && d < states[i].end) alive.push_back(i);
  }
  std::stable_sort(alive.begin(), alive.end(), [&](std::size_t a, std::size_t b) {
    return order == InterludeOrder::enrollment ? states[a].entry < states[b].entry
                                               : states[a].entry > states[b].entry;
  });
  const double n = static_cast<double>(alive.size());
  for (std::size_t r = 0; r < alive.size(); ++r) {
    assign_if_at_risk(alive[r], d + span * (static_cast<double>(r) + 0.5) / n);
  }
  return plan;
}

SimulatedTrial simulate_trial(const Scenario& scenario) {
  check_scenario(scenario);
  const TrialDesign& design = scenario.design;
  const auto n = static_cast<std::size_t>(design.n_participants);

  std::vector<Draws> draws(n);
  std::vector<PreCrossoverState> states(n);
  std::vector<double> followup_end(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int idx = static_cast<int>(i);
    draws[i] = draw_participant(design.seed, idx, scenario.frailty.variance);
    auto& s = states[i];
    s.arm = assigned_arm(design, idx);
    s.entry = entry_day(design, draws[i].u_dose);
    followup_end[i] = s.entry + design.followup_days;
    s.end = followup_end[i];
    if (draws[i].u_dropout < design.dropout_probability) {
      s.end = s.entry + design.followup_days * draws[i].u_dropout_time;
    }
    s.u_interlude = draws[i].u_interlude;
    HazardContext ctx{s.entry, s.arm == 1 ? s.entry : kInfinity, draws[i].frailty, 0.0};
    const auto t1 =
        invert_cumulative_hazard(s.entry, draws[i].e1, s.end, scenario.baseline, ctx, scenario.truth);
    s.pre_event = t1.has_value() && *t1 > s.entry;
    s.pre_time = s.pre_event ? *t1 : s.end;
  }

  const CrossoverPlan plan = apply_crossover(design.crossover, design.interlude_order, states);

  SimulatedTrial out;
  out.records.resize(n);
  out.frailty.resize(n);
  auto& meta = out.metadata;
  meta.seed = design.seed;
  meta.trigger_day = plan.trigger_day;
  meta.triggered = plan.trigger_day.has_value();

  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = states[i];
    ParticipantRecord r;
    r.id = static_cast<std::int64_t>(i) + 1;
    r.arm = s.arm;
    r.entry = s.entry;
    r.eventtime = s.pre_time;
    r.status = s.pre_event ? 1 : 0;
    bool post = false;
    if (plan.xstart[i]) {
      const double xs = *plan.xstart[i];
      const double xe = xs + design.blackout_days;
      r.xstart = xs;
      r.xend = xe;
      ++meta.n_windows;
      if (s.pre_time > xe) {
        // Fresh draw from the end of the blackout.
        const double vt = s.arm == 1 ? s.entry : xe;
        HazardContext ctx{s.entry, vt, draws[i].frailty, 0.0};
        const auto t2 = invert_cumulative_hazard(xe, draws[i].e2, s.end, scenario.baseline, ctx,
                                                 scenario.truth);
        r.status = t2.has_value() && *t2 > xe ? 1 : 0;
        r.eventtime = r.status == 1 ? *t2 : s.end;
        post = true;
      }
    }
    out.frailty[i] = draws[i].frailty;

    const bool counted = r.status == 1 && (!r.has_window() || r.eventtime > *r.xend);
    if (counted) {
      ++meta.cases_by_arm[static_cast<std::size_t>(r.arm)];
      if (post) ++meta.cases_after_crossover[static_cast<std::size_t>(r.arm)];
      if (plan.trigger_day) {
        const double cutoff = r.has_window() ? *r.xstart
                                             : *plan.trigger_day + design.crossover.interlude_days;
        if (r.eventtime < cutoff) ++meta.cases_before_crossover;
      }
      const auto q = static_cast<std::size_t>(r.eventtime / kQuarterDays);
      if (meta.cases_by_quarter.size() <= q) meta.cases_by_quarter.resize(q + 1);
      ++meta.cases_by_quarter[q][static_cast<std::size_t>(r.arm)];
    }
    out.records[i] = r;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Calibration

std::vector<double> expected_placebo_cases(const TrialDesign& design, const BaselineHazard& baseline,
                                           const std::vector<double>& edges,
                                           double frailty_variance) {
  if (edges.size() < 2) throw std::invalid_argument("expected_placebo_cases: need >= 2 edges");
  int n_placebo = 0;
  for (int i = 0; i < design.n_participants; ++i) n_placebo += assigned_arm(design, i) == 0;

  const VEProfile none = ConstantProfile{};
  const double v = frailty_variance;
  auto survival = [&](double entry, double t) {
    const double h = cumulative_hazard(entry, t, baseline, HazardContext{entry}, none);
    return v > 0.0 ? std::pow(1.0 + v * h, -1.0 / v) : std::exp(-h);
  };
  const double e_lo = design.dose_to_count_days;
  const double e_hi = e_lo + design.accrual_days;
  const double F = design.followup_days;

  std::vector<double> out;
  for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
    const double a = edges[k];
    const double b = edges[k + 1];
    auto per_person = [&](double entry) {
      const double lo = std::max(a, entry);
      const double hi = std::min(b, entry + F);
      if (!(hi > lo)) return 0.0;
      return survival(entry, lo) - survival(entry, hi);
    };
    double expected;
    if (design.accrual_days == 0.0) {
      expected = per_person(e_lo);
    } else {
      std::vector<double> cuts{e_lo, e_hi};
      for (double c : {a, b, a - F, b - F}) {
        if (c > e_lo && c < e_hi) cuts.push_back(c);
      }
      for (double c : baseline.changepoints()) {
        if (c > e_lo && c < e_hi) cuts.push_back(c);
      }
      std::sort(cuts.begin(), cuts.end());
      expected = 0.0;
      for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        expected += boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
            per_person, cuts[i], cuts[i + 1], 10, 1e-10);
      }
      expected /= design.accrual_days;
    }
    out.push_back(n_placebo * expected);
  }
  return out;
}

BaselineHazard calibrate_rates(const TrialDesign& design, const std::vector<double>& targets,
                               const CalibrationOptions& options) {
  if (targets.empty()) throw std::invalid_argument("calibrate_rates: no targets");
  if (!(options.period_days > 0.0)) throw std::invalid_argument("calibrate_rates: period_days <= 0");
  for (double t : targets) {
    if (!(t >= 0.0) || !std::isfinite(t)) {
      throw std::invalid_argument("calibrate_rates: targets must be finite and >= 0");
    }
  }
  const std::size_t K = targets.size();
  int n_placebo = 0;
  for (int i = 0; i < design.n_participants; ++i) n_placebo += assigned_arm(design, i) == 0;

  std::vector<double> rates(K, 0.0);
  std::vector<double> changepoints;
  for (std::size_t k = 1; k < K; ++k) changepoints.push_back(options.period_days * k);

  if (options.method == CalibrationMethod::full_risk_set) {
    for (std::size_t k = 0; k < K; ++k) rates[k] = targets[k] / (n_placebo * options.period_days);
  } else {
    std::vector<double> edges;
    for (std::size_t k = 0; k <= K; ++k) edges.push_back(options.period_days * k);
    for (std::size_t k = 0; k < K; ++k) {
      if (targets[k] == 0.0) continue;
      const std::vector<double> window{edges[k], edges[k + 1]};
      auto count_at = [&](double rate) {
        rates[k] = rate;
        // Later periods keep rate 0 while solving period k; they do not
        // affect cases in period k.
        const BaselineHazard h(changepoints, rates);
        return expected_placebo_cases(design, h, window, options.frailty_variance)[0];
      };
      double lo = 0.0;
      double hi = targets[k] / (n_placebo * options.period_days);
      int grow = 0;
      while (count_at(hi) < targets[k]) {
        lo = hi;
        hi *= 2.0;
        if (++grow > 200) {
          throw std::invalid_argument("calibrate_rates: target " + std::to_string(targets[k]) +
                                      " in period " + std::to_string(k + 1) +
                                      " is infeasible (not enough participants at risk)");
        }
      }
      while (hi - lo > options.relative_tolerance * hi) {
        const double mid = 0.5 * (lo + hi);
        if (count_at(mid) < targets[k]) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      rates[k] = 0.5 * (lo + hi);
    }
  }

  std::vector<double> all_rates = rates;
  for (double f : options.repeat_factors) {
    if (!(f >= 0.0)) throw std::invalid_argument("calibrate_rates: repeat factors must be >= 0");
    for (std::size_t k = 0; k < K; ++k) {
      changepoints.push_back(options.period_days * static_cast<double>(all_rates.size()));
      all_rates.push_back(f * rates[k]);
    }
  }
  return BaselineHazard(changepoints, all_rates);
}

}  // namespace vecross
