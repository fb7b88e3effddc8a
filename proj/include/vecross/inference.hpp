#pragma once

// Reported quantities from a fit: pointwise VE(s) with Wald intervals on
// the linear-predictor scale, change-from-baseline contrasts, chi-square
// tail areas with fractional df, and the LRT for time-varying VE.

#include <vector>

#include "vecross/coxph.hpp"

namespace vecross {

inline constexpr double kZ95 = 1.959964;

struct VECurve {
  std::vector<double> s;         // days since vaccination
  std::vector<double> estimate;  // f(s)
  std::vector<double> se;
  std::vector<double> lower, upper;        // f(s) -/+ z * se
  std::vector<double> ve, ve_lower, ve_upper;  // 1 - exp f, ordered
};

/// Linear combination c' coef with Wald SE and interval.
struct Contrast {
  double estimate = 0.0;
  double se = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

VECurve ve_curve(const FitResult& fit, const std::vector<double>& s_grid, bool sandwich = false);

/// f(s) with its Wald interval.
Contrast linear_predictor_at(const FitResult& fit, double s_days, bool sandwich = false);

/// log(1 - VE(s)) - log(1 - VE(0)) = (a(s) - a(0))' coef.
Contrast ve_change(const FitResult& fit, double s_days, bool sandwich = false);

/// Q(df/2, x/2), the chi-square upper tail; df may be fractional.
double chisq_sf(double x, double df);

/// Regularized upper incomplete gamma Q(a, x).
double gamma_q(double a, double x);

struct LRTResult {
  double statistic = 0.0;
  double df = 0.0;
  double p_value = 1.0;
};

/// Full model against the constant-VE null. The statistic uses unpenalized
/// log partial likelihoods; df is the spline effective df for spline fits
/// and the parameter-count difference otherwise.
LRTResult lrt_time_varying(const FitResult& full, const FitResult& null);

}  // namespace vecross
