#pragma once

// Vaccine-efficacy profiles f(s; theta), piecewise-constant baseline
// hazards, and the participant hazard
//
//   h_i(t) = 0                                          t <= entry
//          = U * h0(t) * exp(x'beta) * exp(Z(t) f(t - v))  t >  entry
//
// with Z(t) = 1{t > v}, v the vaccination day and VE(s) = 1 - exp f(s).

#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include "vecross/spline_basis.hpp"
#include "vecross/trialdata.hpp"

namespace vecross {

struct ConstantProfile {
  double log_hr = 0.0;
};

/// f(s) = intercept + slope * s / slope_unit_days. The slope defaults to a
/// per-year rate.
struct LogLinearProfile {
  double intercept = 0.0;
  double slope = 0.0;
  double slope_unit_days = kDaysPerYear;
};

/// Segments [0, c1), [c1, c2), ..., [cK, inf) with one value each.
struct PiecewiseProfile {
  std::vector<double> values;
  std::vector<double> changepoints;
};

struct SplineProfile {
  double intercept = 0.0;
  std::vector<double> coefficients;
  std::shared_ptr<const PSplineBasis> basis;
};

using VEProfile = std::variant<ConstantProfile, LogLinearProfile, PiecewiseProfile, SplineProfile>;

/// Throws std::invalid_argument when the profile's own invariants fail.
void check_profile(const VEProfile& profile);

double linear_predictor(const VEProfile& profile, double s_days);
double ve_at(const VEProfile& profile, double s_days);

class BaselineHazard {
 public:
  BaselineHazard() : rates_{0.0} {}
  BaselineHazard(std::vector<double> changepoints, std::vector<double> rates);

  static BaselineHazard constant(double rate) { return BaselineHazard({}, {rate}); }

  const std::vector<double>& changepoints() const noexcept { return changepoints_; }
  const std::vector<double>& rates() const noexcept { return rates_; }

  /// Per-day rate at calendar day t (segments closed on the left).
  double rate_at(double t) const;
  std::size_t segment_of(double t) const;

 private:
  std::vector<double> changepoints_;
  std::vector<double> rates_;
};

struct HazardContext {
  double entry = 0.0;
  double vacc_time = kInfinity;
  double frailty = 1.0;
  double covariate_effect = 0.0;  // x'beta
};

double hazard_at(double t, const BaselineHazard& h0, const HazardContext& ctx,
                 const VEProfile& profile);

/// Integral of hazard_at over [t1, t2]. Exact per piece for constant,
/// piecewise and log-linear profiles; adaptive Gauss-Kronrod (relative
/// tolerance 1e-10) for spline profiles.
double cumulative_hazard(double t1, double t2, const BaselineHazard& h0,
                         const HazardContext& ctx, const VEProfile& profile);

/// Smallest t in (t0, t_end] with cumulative_hazard(t0, t) = target, or
/// nullopt when the hazard accumulated by t_end falls short. Closed-form
/// inversion within each piece for constant, piecewise and log-linear
/// profiles; bisection to 1e-9 days for spline profiles.
std::optional<double> invert_cumulative_hazard(double t0, double target, double t_end,
                                               const BaselineHazard& h0, const HazardContext& ctx,
                                               const VEProfile& profile);

}  // namespace vecross
