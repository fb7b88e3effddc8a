#include <gtest/gtest.h>

#include <cmath>

#include "scenarios.hpp"
#include "vecross/inference.hpp"
#include "vecross/pspline.hpp"

using namespace vecross;
using testdata::Design;

namespace {

// One waning-VE trial, crossed over at one year, reused by several tests.
const CoxData& waning_trial() {
  static const CoxData data = [] {
    Scenario s = testdata::table1_scenario(Design::cross_1yr, testdata::waning_truth());
    s.design.seed = 424242;
    return testdata::reshaped(simulate_trial(s));
  }();
  return data;
}

std::shared_ptr<const PSplineBasis> trial_basis(int L = 8) {
  return build_basis(max_time_since_vaccination(waning_trial().intervals), L);
}

ModelSpec spline_spec(std::shared_ptr<const PSplineBasis> b, double lambda) {
  ModelSpec spec;
  spec.form = SplineForm{std::move(b), lambda};
  return spec;
}

}  // namespace

TEST(EffectiveDf, ZeroLambdaGivesL) {
  const auto b = trial_basis();
  const FitResult f = fit(waning_trial(), spline_spec(b, 0.0));
  ASSERT_TRUE(f.converged);
  EXPECT_NEAR(f.spline_df, 8.0, 1e-8);
  EXPECT_NEAR(effective_df(waning_trial(), f.spec, f.coefficients), 8.0, 1e-8);
}

TEST(EffectiveDf, LargeLambdaLeavesTheLine) {
  const auto b = trial_basis();
  const ModelSpec spec = spline_spec(b, 1e12);
  // Only the straight line through 0 escapes the penalty (the constant is
  // the intercept's), so the spline block keeps one df. With the intercept
  // the model has two.
  const FitResult f = fit(waning_trial(), spec);
  EXPECT_NEAR(effective_df(waning_trial(), spec, f.coefficients), 1.0, 0.05);
}

TEST(EffectiveDf, MonotoneInLambda) {
  const auto b = trial_basis();
  PartialLikelihood pl(waning_trial(), spline_spec(b, 0.0));
  double prev = kInfinity;
  std::optional<Eigen::VectorXd> warm;
  for (double e = -4.0; e <= 6.0; e += 0.5) {
    pl.set_lambda(std::pow(10.0, e));
    const FitResult f = fit(pl, {}, warm);
    warm = f.coefficients;
    EXPECT_LE(f.spline_df, prev + 1e-9) << "log10 lambda " << e;
    prev = f.spline_df;
  }
}

TEST(ChooseLambda, HitsTarget) {
  const auto b = trial_basis();
  const LambdaChoice c = choose_lambda(waning_trial(), b, 3.1);
  EXPECT_NEAR(c.df, 3.1, 0.01);
  EXPECT_NEAR(effective_df(waning_trial(), c.fit.spec, c.fit.coefficients), 3.1, 0.01);
  // Idempotence: refit at the returned lambda.
  const FitResult again = fit(waning_trial(), spline_spec(b, c.lambda));
  EXPECT_NEAR(again.spline_df, 3.1, 0.01);
}

TEST(ChooseLambda, TargetLUsesZero) {
  const auto b = trial_basis(6);
  const LambdaChoice c = choose_lambda(waning_trial(), b, 6.0);
  EXPECT_EQ(c.lambda, 0.0);
  EXPECT_NEAR(c.df, 6.0, 0.01);
}

TEST(ChooseLambda, OutOfRange) {
  const auto b = trial_basis();
  try {
    choose_lambda(waning_trial(), b, 0.5);
    FAIL() << "expected LambdaSearchError";
  } catch (const LambdaSearchError& e) {
    EXPECT_NE(std::string(e.what()).find("0.5"), std::string::npos);
  }
  EXPECT_THROW(choose_lambda(waning_trial(), b, 9.0), LambdaSearchError);
}

TEST(FitPSpline, ZeroLambdaMatchesUnpenalized) {
  const auto b = trial_basis(4);
  PSplineSettings st;
  st.n_terms = 4;
  st.lambda = 0.0;
  const FitResult a = fit_pspline(waning_trial(), st, {}, b);
  const FitResult u = fit(waning_trial(), spline_spec(b, 0.0));
  EXPECT_EQ(a.coefficients, u.coefficients);
  EXPECT_EQ(a.loglik, u.loglik);
  EXPECT_EQ(a.penalized_loglik, a.loglik);
}

TEST(FitPSpline, CenteredCurveAtZero) {
  PSplineSettings st;
  const FitResult f = fit_pspline(waning_trial(), st);
  const Contrast c = linear_predictor_at(f, 0.0);
  EXPECT_EQ(c.estimate, f.coefficients(0));
  EXPECT_EQ(ve_change(f, 0.0).estimate, 0.0);
}

TEST(FitPSpline, PenalizedObjectiveIdentity) {
  PSplineSettings st;
  const FitResult f = fit_pspline(waning_trial(), st);
  const auto& sf = std::get<SplineForm>(f.spec.form);
  const Eigen::VectorXd g = f.coefficients.tail(sf.basis->n_terms());
  EXPECT_NEAR(f.penalized_loglik, f.loglik - 0.5 * sf.lambda * g.dot(sf.basis->penalty() * g),
              1e-9);
}

TEST(LinearTrend, ExactForLogLinear) {
  ModelSpec spec;
  spec.form = LogLinearForm{};
  const FitResult f = fit(waning_trial(), spec);
  const LinearTrend t = linear_trend(f, 700.0);
  EXPECT_NEAR(t.intercept, f.coefficients(0), 1e-10);
  EXPECT_NEAR(t.slope_per_year, f.coefficients(1), 1e-10);
  EXPECT_NEAR(t.covariance(1, 1), f.covariance(1, 1), 1e-10);
}

TEST(LinearTrend, SplineRecoversWaning) {
  PSplineSettings st;
  const FitResult f = fit_pspline(waning_trial(), st);
  const double s_max = std::get<SplineForm>(f.spec.form).basis->s_max();
  const LinearTrend t = linear_trend(f, s_max);
  const double truth = (std::log(0.65) - std::log(0.15)) / 1.5;
  EXPECT_LT(std::abs(t.slope_per_year - truth), 3.0 * std::sqrt(t.covariance(1, 1)));
}

// Monte Carlo checks on the Table 1 designs, crossed over at one year.

TEST(FitPSplineMonteCarlo, ConstantTruthTrendNearZero) {
  StudySpec spec;
  spec.scenario = testdata::table1_scenario(Design::cross_1yr, testdata::constant_truth());
  spec.models = {{ModelKind::pspline, {}}};
  spec.n_replicates = 200;
  spec.base_seed = 777;
  const StudyResult r = run_study(spec);
  int within = 0, used = 0;
  for (const auto& rep : r.replicates) {
    const auto& m = rep.models[0];
    if (!m.ok) continue;
    ++used;
    within += std::abs(m.slope.value) <= 2.0 * m.slope.se;
  }
  ASSERT_GT(used, 190);
  EXPECT_GE(static_cast<double>(within) / used, 0.90);
}

TEST(FitPSplineMonteCarlo, WaningTruthPointwiseBias) {
  StudySpec spec;
  spec.scenario = testdata::table1_scenario(Design::cross_1yr, testdata::waning_truth());
  spec.models = {{ModelKind::pspline, {}}};
  spec.n_replicates = 500;
  spec.base_seed = 778;
  const StudyResult r = run_study(spec);
  for (double s : {0.5, 1.0, 1.5, 2.0}) {
    const MetricRow* row = r.table.find(ModelKind::pspline, "f", s);
    ASSERT_NE(row, nullptr);
    EXPECT_LT(std::abs(row->bias), 0.05) << "s = " << s;
  }
  const MetricRow* slope = r.table.find(ModelKind::pspline, "slope", 0.0);
  ASSERT_NE(slope, nullptr);
  EXPECT_LT(std::abs(slope->bias), 0.05);
}
