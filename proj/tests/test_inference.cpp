#include <gtest/gtest.h>

#include <Eigen/Cholesky>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <random>

#include "appendix_a.hpp"
#include "scenarios.hpp"
#include "vecross/inference.hpp"
#include "vecross/pspline.hpp"

using namespace vecross;

namespace {

FitResult appendix_fit(ProfileForm form) {
  ModelSpec spec;
  spec.form = std::move(form);
  return fit(CoxData(reshape_counting_process(testdata::appendix_records()).intervals), spec);
}

// Chi-square upper tail by direct integration of the density.
double chisq_tail_quadrature(double x, double df) {
  const double k = df / 2.0;
  auto density = [k](double u) {
    return std::exp((k - 1.0) * std::log(u) - u / 2.0 - k * std::log(2.0) - std::lgamma(k));
  };
  using boost::math::quadrature::gauss_kronrod;
  double err = 0.0;
  return gauss_kronrod<double, 61>::integrate(density, x, std::numeric_limits<double>::infinity(),
                                              20, 1e-13, &err);
}

}  // namespace

TEST(VeCurve, ConstantFitIsFlat) {
  const FitResult f = appendix_fit(ConstantForm{});
  const VECurve c = ve_curve(f, {0.0, 100.0, 365.0});
  const double se = std::sqrt(f.covariance(0, 0));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(c.estimate[i], f.coefficients(0));
    EXPECT_DOUBLE_EQ(c.se[i], se);
    EXPECT_DOUBLE_EQ(c.ve_lower[i], 1.0 - std::exp(f.coefficients(0) + kZ95 * se));
    EXPECT_DOUBLE_EQ(c.ve_upper[i], 1.0 - std::exp(f.coefficients(0) - kZ95 * se));
  }
}

TEST(VeCurve, AppendixValues) {
  const FitResult f = appendix_fit(LogLinearForm{1.0});
  const VECurve c = ve_curve(f, {0.0, 30.0});
  EXPECT_NEAR(c.ve[0], 0.561, 1e-3);
  EXPECT_NEAR(c.ve[1], 0.028, 1e-3);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_LE(c.lower[i], c.estimate[i]);
    EXPECT_GE(c.upper[i], c.estimate[i]);
    EXPECT_LE(c.ve_lower[i], c.ve[i]);
    EXPECT_GE(c.ve_upper[i], c.ve[i]);
    EXPECT_LT(c.ve_upper[i], 1.0);
  }
}

TEST(VeCurve, NegativeTimeRejected) {
  EXPECT_THROW(ve_curve(appendix_fit(ConstantForm{}), {-1.0}), std::domain_error);
}

TEST(VeCurve, LogLinearVarianceAndBootstrap) {
  FitResult f = appendix_fit(LogLinearForm{365.0});
  Eigen::Matrix2d sigma;
  sigma << 0.04, -0.01, -0.01, 0.09;
  f.covariance = sigma;
  f.coefficients << -1.0, 0.5;
  const Contrast c = linear_predictor_at(f, 365.0);
  const double var = sigma(0, 0) + 2 * sigma(0, 1) + sigma(1, 1);
  EXPECT_NEAR(c.se * c.se, var, 1e-14);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(0.0, 1.0);
  const Eigen::Matrix2d L = sigma.llt().matrixL();
  double sum = 0.0, sum2 = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d d = f.coefficients + L * Eigen::Vector2d(z(rng), z(rng));
    const double v = d(0) + d(1);
    sum += v;
    sum2 += v * v;
  }
  const double boot = (sum2 - sum * sum / n) / (n - 1);
  EXPECT_NEAR(boot / var, 1.0, 0.05);  // about 3.5 Monte Carlo SE
}

TEST(VeChange, Contrasts) {
  FitResult f = appendix_fit(LogLinearForm{365.0});
  f.coefficients << -1.9, 0.98;
  EXPECT_EQ(ve_change(f, 0.0).estimate, 0.0);
  EXPECT_EQ(ve_change(f, 0.0).se, 0.0);
  EXPECT_NEAR(ve_change(f, 1.5 * 365.0).estimate, 1.47, 1e-12);
  EXPECT_NEAR(linear_predictor_at(f, 1.5 * 365.0).estimate, -0.43, 1e-12);
  // ve_change(s) / s is constant for log-linear fits.
  const double r1 = ve_change(f, 100.0).estimate / 100.0;
  const double r2 = ve_change(f, 700.0).estimate / 700.0;
  EXPECT_NEAR(r1, r2, 1e-15);
  EXPECT_NEAR(ve_change(f, 200.0).se, 200.0 / 365.0 * std::sqrt(f.covariance(1, 1)), 1e-12);

  const FitResult c = appendix_fit(ConstantForm{});
  for (double s : {0.0, 50.0, 500.0}) EXPECT_EQ(ve_change(c, s).estimate, 0.0);
}

TEST(VeChange, CenteringShiftInvariance) {
  // The contrast API agrees with evaluating the fitted profile.
  Scenario s = testdata::table1_scenario(testdata::Design::cross_1yr, testdata::waning_truth());
  s.design.seed = 5;
  const CoxData d = testdata::reshaped(simulate_trial(s));
  const FitResult f = fit_pspline(d, PSplineSettings{});
  const VEProfile p = to_profile(f.spec.form, f.coefficients);
  for (double x : {0.0, 100.0, 300.0, 600.0}) {
    EXPECT_NEAR(linear_predictor_at(f, x).estimate, linear_predictor(p, x), 1e-12);
    EXPECT_NEAR(ve_change(f, x).estimate, linear_predictor(p, x) - linear_predictor(p, 0.0), 1e-12);
  }
}

TEST(ChiSquare, Basics) {
  EXPECT_EQ(chisq_sf(0.0, 3.1), 1.0);
  EXPECT_NEAR(chisq_sf(3.84146, 1.0), 0.05, 1e-4);
  EXPECT_THROW(chisq_sf(-1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(chisq_sf(1.0, 0.0), std::invalid_argument);
}

TEST(ChiSquare, FractionalDfMatchesQuadrature) {
  EXPECT_NEAR(chisq_sf(20.0, 3.1), chisq_tail_quadrature(20.0, 3.1), 1e-8);
  for (double df : {0.7, 1.0, 2.5, 3.1, 7.0}) {
    for (double x : {0.1, 1.0, 4.0, 12.0, 40.0}) {
      EXPECT_NEAR(chisq_sf(x, df), boost::math::gamma_q(df / 2, x / 2), 1e-12) << df << " " << x;
    }
  }
}

TEST(ChiSquare, Monotone) {
  double prev = 1.0;
  for (double x = 0.1; x < 30.0; x += 0.1) {
    const double v = chisq_sf(x, 3.1);
    EXPECT_LT(v, prev);
    prev = v;
  }
  for (double x : {0.5, 3.0, 10.0}) EXPECT_LT(chisq_sf(x, 1.0), chisq_sf(x, 3.1));
}

TEST(Lrt, IdenticalModels) {
  const FitResult c = appendix_fit(ConstantForm{});
  const LRTResult r = lrt_time_varying(c, c);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
}

TEST(Lrt, LogLinearOneDf) {
  const FitResult full = appendix_fit(LogLinearForm{1.0});
  const FitResult null = appendix_fit(ConstantForm{});
  const LRTResult r = lrt_time_varying(full, null);
  EXPECT_EQ(r.df, 1.0);
  EXPECT_NEAR(r.statistic, 2 * (full.loglik - null.loglik), 1e-12);
  EXPECT_NEAR(r.p_value, chisq_sf(r.statistic, 1.0), 1e-15);
}

TEST(Lrt, NonNestedIsAnError) {
  FitResult full = appendix_fit(LogLinearForm{1.0});
  const FitResult null = appendix_fit(ConstantForm{});
  full.loglik = null.loglik - 1.0;
  EXPECT_THROW(lrt_time_varying(full, null), std::invalid_argument);
}

TEST(Lrt, SplineUsesEffectiveDf) {
  Scenario s = testdata::table1_scenario(testdata::Design::cross_1yr, testdata::waning_truth());
  s.design.seed = 6;
  const CoxData d = testdata::reshaped(simulate_trial(s));
  const FitResult full = fit_pspline(d, PSplineSettings{});
  ModelSpec c;
  c.form = ConstantForm{};
  const LRTResult r = lrt_time_varying(full, fit(d, c));
  EXPECT_NEAR(r.df, full.spline_df, 1e-12);
  EXPECT_NEAR(r.df, 3.1, 0.01);
  EXPECT_GE(r.p_value, 0.0);
  EXPECT_LE(r.p_value, 1.0);
}
