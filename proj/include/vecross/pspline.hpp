#pragma once

// Penalized-spline fits of the decay curve: basis construction from the
// data, smoothing-parameter selection by effective df, and the linear-trend
// summary of a fitted curve.

#include <memory>
#include <stdexcept>
#include <vector>

#include "vecross/coxph.hpp"
#include "vecross/spline_basis.hpp"

namespace vecross {

struct PSplineSettings {
  int n_terms = 8;
  double target_df = 3.1;
  double df_tolerance = 0.01;
  /// Fixed smoothing parameter; negative means "choose from target_df".
  double lambda = -1.0;
};

/// Largest tstop - vacc_time over vaccinated intervals (days).
double max_time_since_vaccination(const std::vector<RiskInterval>& intervals);

std::shared_ptr<const PSplineBasis> build_basis(double s_max, int n_terms);

/// trace[(H + lambda P)^-1 H] over the spline block, H the unpenalized
/// information at `params`.
double effective_df(const PartialLikelihood& pl, const Eigen::VectorXd& params);
double effective_df(const CoxData& data, const ModelSpec& spec, const Eigen::VectorXd& params);

class LambdaSearchError : public std::runtime_error {
 public:
  LambdaSearchError(const std::string& what, double df_low, double df_high)
      : std::runtime_error(what), df_low_(df_low), df_high_(df_high) {}
  double df_at_low() const noexcept { return df_low_; }
  double df_at_high() const noexcept { return df_high_; }

 private:
  double df_low_, df_high_;
};

struct LambdaChoice {
  double lambda = 0.0;
  double df = 0.0;
  int fits = 0;
  FitResult fit;
};

/// Bisection on log10(lambda) until |df - target| < tolerance, refitting at
/// every trial lambda. `base` supplies covariates, ties and strata; its form
/// is replaced by the spline form.
LambdaChoice choose_lambda(const CoxData& data, std::shared_ptr<const PSplineBasis> basis,
                           double target_df, const ModelSpec& base = {},
                           double tolerance = 0.01, const FitOptions& options = {});

/// Penalized fit with a fixed lambda or, when settings.lambda < 0, the lambda
/// that hits settings.target_df. Basis knots span [0, max time since
/// vaccination] unless a basis is given.
FitResult fit_pspline(const CoxData& data, const PSplineSettings& settings = {},
                      const ModelSpec& base = {}, std::shared_ptr<const PSplineBasis> basis = nullptr,
                      const FitOptions& options = {});

/// Intercept and per-year slope of the least-squares line through the
/// fitted curve f(s) on an even grid over [0, s_max_days], with the
/// delta-method covariance. Exact (theta1, theta2) for log-linear fits.
struct LinearTrend {
  double intercept = 0.0;
  double slope_per_year = 0.0;
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Zero();
};

LinearTrend linear_trend(const FitResult& fit, double s_max_days, bool sandwich = false,
                         int grid_points = 201);

}  // namespace vecross
