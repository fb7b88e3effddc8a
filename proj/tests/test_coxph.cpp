#include <gtest/gtest.h>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>

#include "appendix_a.hpp"
#include "vecross/coxph.hpp"
#include "vecross/pspline.hpp"

using namespace vecross;

namespace {

// Small random start-stop dataset with integer times (so ties occur),
// vaccinated and unvaccinated intervals, and `p` covariates.
CoxData random_cox_data(std::mt19937_64& rng, int n, int p) {
  std::uniform_int_distribution<int> start(0, 30), len(1, 40), coin(0, 1), back(0, 25);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<RiskInterval> iv;
  for (int i = 0; i < n; ++i) {
    RiskInterval r;
    r.id = i + 1;
    r.arm = coin(rng);
    r.tstart = start(rng);
    r.tstop = r.tstart + len(rng);
    r.event = coin(rng);
    r.vacc_status = coin(rng);
    r.vacc_time = r.vacc_status ? r.tstart - back(rng) : kInfinity;
    iv.push_back(r);
  }
  iv[0].event = 1;
  Eigen::MatrixXd x(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) x(i, j) = z(rng);
  return CoxData(std::move(iv), std::move(x));
}

Eigen::VectorXd random_params(std::mt19937_64& rng, int d) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = u(rng);
  return v;
}

CoxData appendix_data() {
  return CoxData(reshape_counting_process(testdata::appendix_records()).intervals);
}

}  // namespace

TEST(LogPL, TwoIdenticalMembers) {
  std::vector<RiskInterval> iv = {{1, 0, 0, 10, 1, 0, kInfinity, 0}, {2, 0, 0, 20, 0, 0, kInfinity, 0}};
  const CoxData d(iv);
  ModelSpec spec;
  spec.form = ConstantForm{};
  for (double th : {-2.0, 0.0, 1.5}) {
    EXPECT_NEAR(log_partial_likelihood(d, spec, Eigen::VectorXd::Constant(1, th)), -std::log(2.0),
                1e-15);
  }
}

TEST(LogPL, PlaceboEventAgainstOneVaccinee) {
  // Placebo case at day 100; the vaccinee was vaccinated 100 days before.
  std::vector<RiskInterval> iv = {{1, 0, 0, 100, 1, 0, kInfinity, 0}, {2, 1, 0, 200, 0, 1, 0, 0}};
  ModelSpec spec;
  spec.form = ConstantForm{};
  const double v =
      log_partial_likelihood(CoxData(iv), spec, Eigen::VectorXd::Constant(1, std::log(0.25)));
  EXPECT_NEAR(v, std::log(1.0 / 1.25), 1e-15);
  EXPECT_NEAR(v, -0.22314, 1e-5);
}

TEST(LogPL, NoEventsIsAnError) {
  std::vector<RiskInterval> iv = {{1, 0, 0, 10, 0, 0, kInfinity, 0}};
  ModelSpec spec;
  spec.form = ConstantForm{};
  EXPECT_THROW(log_partial_likelihood(CoxData(iv), spec, Eigen::VectorXd::Zero(1)), InvalidDataError);
}

TEST(LogPL, FullyCrossedOverIsFlat) {
  // Everyone vaccinated at every event time.
  std::vector<RiskInterval> iv;
  for (int i = 0; i < 12; ++i) {
    iv.push_back({i + 1, i % 2, 10.0 * i, 10.0 * i + 55.0, i % 3 == 0, 1, 5.0 * i, 0});
  }
  const CoxData d(iv);
  ModelSpec spec;
  spec.form = ConstantForm{};
  const double ref = log_partial_likelihood(d, spec, Eigen::VectorXd::Constant(1, 0.0));
  double lo = ref, hi = ref;
  for (double th = -3.0; th <= 3.0; th += 0.25) {
    const double v = log_partial_likelihood(d, spec, Eigen::VectorXd::Constant(1, th));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    EXPECT_EQ(information(d, spec, Eigen::VectorXd::Constant(1, th))(0, 0), 0.0);
  }
  EXPECT_LT(hi - lo, 1e-12);
  try {
    fit(d, spec);
    FAIL() << "expected SingularInformationError";
  } catch (const SingularInformationError& e) {
    EXPECT_EQ(e.direction(), "intercept");
  }
}

TEST(Derivatives, MatchFiniteDifferences) {
  std::mt19937_64 rng(20240101);
  const double h = 1e-5;
  for (int rep = 0; rep < 50; ++rep) {
    const CoxData d = random_cox_data(rng, 6 + rep % 15, rep % 3);
    for (Ties ties : {Ties::breslow, Ties::efron}) {
      ModelSpec spec;
      spec.form = rep % 2 ? ProfileForm{LogLinearForm{30.0}} : ProfileForm{PiecewiseForm{{8.0}}};
      spec.n_covariates = static_cast<int>(d.covariates.cols());
      spec.ties = ties;
      const int k = n_params(spec);
      const Eigen::VectorXd b = random_params(rng, k);
      const PartialLikelihood pl(d, spec);
      const Derivatives an = pl.evaluate(b);
      for (int i = 0; i < k; ++i) {
        Eigen::VectorXd bp = b, bm = b;
        bp(i) += h;
        bm(i) -= h;
        const Derivatives up = pl.evaluate(bp), dn = pl.evaluate(bm);
        const double g = (up.loglik - dn.loglik) / (2 * h);
        EXPECT_LE(std::abs(g - an.score(i)), 1e-6 * std::max(1.0, std::abs(an.score(i))))
            << rep << " " << i;
        for (int j = 0; j < k; ++j) {
          const double hij = -(up.score(j) - dn.score(j)) / (2 * h);
          EXPECT_LE(std::abs(hij - an.information(i, j)),
                    1e-5 * std::max(1.0, std::abs(an.information(i, j))));
        }
      }
    }
  }
}

TEST(Derivatives, FastMatchesNaive) {
  std::mt19937_64 rng(99);
  auto basis = std::make_shared<const PSplineBasis>(80.0, 5);
  for (int rep = 0; rep < 30; ++rep) {
    const CoxData d = random_cox_data(rng, 20, 1);
    const std::vector<ProfileForm> forms = {ConstantForm{}, LogLinearForm{}, PiecewiseForm{{5.0, 20.0}},
                                            SplineForm{basis, 2.0}};
    for (const auto& form : forms) {
      for (Ties ties : {Ties::breslow, Ties::efron}) {
        ModelSpec spec;
        spec.form = form;
        spec.n_covariates = 1;
        spec.ties = ties;
        const Eigen::VectorXd b = random_params(rng, n_params(spec));
        const Derivatives fast = PartialLikelihood(d, spec).evaluate(b);
        const Derivatives slow = reference::evaluate_naive(d, spec, b);
        EXPECT_NEAR(fast.loglik, slow.loglik, 1e-10 * std::max(1.0, std::abs(slow.loglik)));
        EXPECT_LT((fast.score - slow.score).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_LT((fast.information - slow.information).cwiseAbs().maxCoeff(), 1e-9);
      }
    }
  }
}

TEST(Information, PositiveSemidefinite) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const CoxData d = random_cox_data(rng, 15, 1);
    ModelSpec spec;
    spec.form = LogLinearForm{30.0};
    spec.n_covariates = 1;
    const Eigen::MatrixXd H = information(d, spec, random_params(rng, 3));
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H).eigenvalues().minCoeff(), -1e-12);
  }
}

TEST(Fit, AppendixLogLinear) {
  ModelSpec spec;
  spec.form = LogLinearForm{1.0};
  const FitResult f = fit(appendix_data(), spec);
  ASSERT_TRUE(f.converged);
  EXPECT_NEAR(f.coefficients(0), -0.82335, 1e-3);
  EXPECT_NEAR(f.coefficients(1), 0.02649, 1e-3);
  EXPECT_LT(f.score.cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_EQ(f.n_events, 3u);
}

TEST(Fit, PerYearSlopeIsRescaled) {
  ModelSpec day, year;
  day.form = LogLinearForm{1.0};
  year.form = LogLinearForm{365.0};
  const FitResult a = fit(appendix_data(), day), b = fit(appendix_data(), year);
  EXPECT_NEAR(a.coefficients(0), b.coefficients(0), 1e-8);
  EXPECT_NEAR(a.coefficients(1) * 365.0, b.coefficients(1), 1e-6);
  EXPECT_NEAR(a.loglik, b.loglik, 1e-12);
}

TEST(Fit, SymmetricNullGivesZero) {
  // Mirror-image arms: same entry, same event days.
  std::vector<RiskInterval> iv;
  for (int i = 0; i < 10; ++i) {
    iv.push_back({2 * i + 1, 0, 0, 10.0 + i, i % 2, 0, kInfinity, 0});
    iv.push_back({2 * i + 2, 1, 0, 10.0 + i, i % 2, 1, 0, 0});
  }
  ModelSpec spec;
  spec.form = ConstantForm{};
  spec.ties = Ties::efron;
  const FitResult f = fit(CoxData(iv), spec);
  EXPECT_NEAR(f.coefficients(0), 0.0, 1e-12);
  // Null score: vaccine events minus expected under equal risk.
  const Eigen::VectorXd s = score(CoxData(iv), spec, Eigen::VectorXd::Zero(1));
  EXPECT_NEAR(s(0), 0.0, 1e-12);
}

TEST(Fit, NullScoreSign) {
  std::vector<RiskInterval> iv;
  for (int i = 0; i < 8; ++i) {
    iv.push_back({2 * i + 1, 0, 0, 10.0 + i, 1, 0, kInfinity, 0});
    iv.push_back({2 * i + 2, 1, 0, 10.5 + i, 0, 1, 0, 0});
  }
  ModelSpec spec;
  spec.form = ConstantForm{};
  EXPECT_LT(score(CoxData(iv), spec, Eigen::VectorXd::Zero(1))(0), 0.0);
}

TEST(Fit, CalendarShiftInvariance) {
  auto iv = reshape_counting_process(testdata::appendix_records()).intervals;
  ModelSpec spec;
  spec.form = LogLinearForm{1.0};
  const FitResult a = fit(CoxData(iv), spec);
  for (auto& r : iv) {
    r.tstart += 1000;
    r.tstop += 1000;
    r.vacc_time += 1000;
  }
  const FitResult b = fit(CoxData(iv), spec);
  EXPECT_NEAR(a.loglik, b.loglik, 1e-12);
  EXPECT_LT((a.coefficients - b.coefficients).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Fit, SingleStratumEqualsUnstratified) {
  std::mt19937_64 rng(3);
  const CoxData d = random_cox_data(rng, 25, 0);
  ModelSpec a, b;
  a.form = b.form = LogLinearForm{30.0};
  b.stratified = true;
  const Eigen::VectorXd p = random_params(rng, 2);
  EXPECT_EQ(log_partial_likelihood(d, a, p), log_partial_likelihood(d, b, p));
}

TEST(Fit, StrataSeparateRiskSets) {
  std::mt19937_64 rng(4);
  CoxData d1 = random_cox_data(rng, 15, 0), d2 = random_cox_data(rng, 15, 0);
  for (auto& r : d2.intervals) {
    r.id += 100;
    r.stratum = 1;
  }
  std::vector<RiskInterval> both = d1.intervals;
  both.insert(both.end(), d2.intervals.begin(), d2.intervals.end());
  ModelSpec spec;
  spec.form = LogLinearForm{30.0};
  spec.stratified = true;
  const Eigen::VectorXd p = random_params(rng, 2);
  auto d2_flat = d2.intervals;
  for (auto& r : d2_flat) r.stratum = 0;
  const double sum = log_partial_likelihood(d1, spec, p) +
                     log_partial_likelihood(CoxData(d2_flat), spec, p);
  EXPECT_NEAR(log_partial_likelihood(CoxData(both), spec, p), sum, 1e-12);
}

TEST(Fit, NestedModelsAgree) {
  std::mt19937_64 rng(11);
  const CoxData d = random_cox_data(rng, 40, 0);
  ModelSpec c;
  c.form = ConstantForm{};
  const FitResult fc = fit(d, c);
  // Log-linear fit started and evaluated with slope fixed at 0: the score of
  // the intercept at the constant optimum vanishes.
  ModelSpec l;
  l.form = LogLinearForm{30.0};
  Eigen::VectorXd p(2);
  p << fc.coefficients(0), 0.0;
  EXPECT_LT(std::abs(score(d, l, p)(0)), 1e-8);
  EXPECT_NEAR(log_partial_likelihood(d, l, p), fc.loglik, 1e-10);
}

TEST(Fit, MatchesGridSearch) {
  // Five participants, log-linear: Newton optimum vs an exhaustive grid.
  std::vector<RiskInterval> iv = {
      {1, 0, 0, 30, 1, 0, kInfinity, 0}, {2, 1, 0, 50, 1, 1, 0, 0},
      {3, 0, 5, 60, 0, 0, kInfinity, 0}, {4, 1, 5, 45, 1, 1, 5, 0},
      {5, 1, 10, 90, 0, 1, 10, 0},       {3, 0, 60, 80, 1, 1, 60, 0},
  };
  const CoxData d(iv);
  ModelSpec spec;
  spec.form = LogLinearForm{30.0};
  const FitResult f = fit(d, spec);
  ASSERT_TRUE(f.converged);
  const PartialLikelihood pl(d, spec);
  // Coarse pass over [-5, 5]^2, then step 1e-3 around the best cell.
  double best = -kInfinity;
  Eigen::Vector2d arg;
  for (double a = -5.0; a <= 5.0; a += 0.05) {
    for (double b = -5.0; b <= 5.0; b += 0.05) {
      const double v = pl.evaluate(Eigen::Vector2d(a, b), 0).loglik;
      if (v > best) best = v, arg = {a, b};
    }
  }
  const Eigen::Vector2d c = arg;
  for (double a = c(0) - 0.05; a <= c(0) + 0.05; a += 1e-3) {
    for (double b = c(1) - 0.05; b <= c(1) + 0.05; b += 1e-3) {
      const double v = pl.evaluate(Eigen::Vector2d(a, b), 0).loglik;
      if (v > best) best = v, arg = {a, b};
    }
  }
  EXPECT_NEAR(f.coefficients(0), arg(0), 1.5e-3);
  EXPECT_NEAR(f.coefficients(1), arg(1), 1.5e-3);
  EXPECT_GE(f.loglik, best - 1e-12);
}

TEST(Fit, CovariateEffect) {
  std::mt19937_64 rng(8);
  const CoxData d = random_cox_data(rng, 60, 2);
  ModelSpec spec;
  spec.form = ConstantForm{};
  spec.n_covariates = 2;
  const FitResult f = fit(d, spec);
  ASSERT_TRUE(f.converged);
  EXPECT_EQ(f.names.size(), 3u);
  EXPECT_LT(f.score.cwiseAbs().maxCoeff(), 1e-6);
  const Eigen::MatrixXd c = f.covariance;
  EXPECT_LT((c - c.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(Eigen::LLT<Eigen::MatrixXd>(c).info(), Eigen::Success);
}

TEST(Fit, AttachCovariates) {
  const auto iv = reshape_counting_process(testdata::appendix_records()).intervals;
  std::map<std::int64_t, Eigen::VectorXd> x;
  for (std::int64_t id = 1; id <= 10; ++id) x[id] = Eigen::VectorXd::Constant(1, 0.1 * id);
  const CoxData d = attach_covariates(iv, x);
  EXPECT_EQ(d.covariates.rows(), 15);
  EXPECT_EQ(d.covariates(1, 0), 0.1);
  x.erase(3);
  EXPECT_THROW(attach_covariates(iv, x), InvalidDataError);
}

TEST(Fit, PenalizedObjectiveIdentity) {
  std::mt19937_64 rng(12);
  const CoxData d = random_cox_data(rng, 30, 0);
  ModelSpec spec;
  auto basis = std::make_shared<const PSplineBasis>(80.0, 6);
  spec.form = SplineForm{basis, 3.5};
  const PartialLikelihood pl(d, spec);
  const Eigen::VectorXd p = random_params(rng, n_params(spec));
  const Eigen::VectorXd g = p.tail(6);
  const double pen = 0.5 * 3.5 * g.dot(basis->penalty() * g);
  EXPECT_NEAR(pl.evaluate_penalized(p).loglik, pl.evaluate(p).loglik - pen, 1e-12);
}
