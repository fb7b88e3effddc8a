#include "vecross/pspline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Cholesky>

namespace vecross {

double max_time_since_vaccination(const std::vector<RiskInterval>& intervals) {
  double s_max = 0.0;
  for (const auto& iv : intervals) {
    if (iv.vacc_status == 1 && std::isfinite(iv.vacc_time)) {
      s_max = std::max(s_max, iv.tstop - iv.vacc_time);
    }
  }
  return s_max;
}

std::shared_ptr<const PSplineBasis> build_basis(double s_max, int n_terms) {
  return std::make_shared<const PSplineBasis>(s_max, n_terms);
}

double effective_df(const PartialLikelihood& pl, const Eigen::VectorXd& params) {
  const auto* sf = std::get_if<SplineForm>(&pl.spec().form);
  if (!sf) throw std::invalid_argument("effective_df: not a spline model");
  const Eigen::MatrixXd h = pl.evaluate(params, 2).information;
  const Eigen::MatrixXd hpen = h + penalty_matrix(pl.spec());
  Eigen::LDLT<Eigen::MatrixXd> ldlt(hpen);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-12 * std::max(1.0, h.trace())) {
    throw SingularInformationError("effective_df: H + lambda P is singular", "spline");
  }
  const Eigen::MatrixXd hat = ldlt.solve(h);
  return hat.diagonal().segment(1, sf->basis->n_terms()).sum();
}

double effective_df(const CoxData& data, const ModelSpec& spec, const Eigen::VectorXd& params) {
  return effective_df(PartialLikelihood(data, spec), params);
}

namespace {

ModelSpec with_spline(const ModelSpec& base, std::shared_ptr<const PSplineBasis> basis,
                      double lambda) {
  ModelSpec spec = base;
  spec.form = SplineForm{std::move(basis), lambda};
  return spec;
}

}  // namespace

LambdaChoice choose_lambda(const CoxData& data, std::shared_ptr<const PSplineBasis> basis,
                           double target_df, const ModelSpec& base, double tolerance,
                           const FitOptions& options) {
  if (!basis) throw std::invalid_argument("choose_lambda: missing basis");
  const double L = basis->n_terms();
  if (!(target_df > 1.0) || target_df > L) {
    std::ostringstream os;
    os << "choose_lambda: target df " << target_df << " outside achievable range (1, " << L << "]";
    throw LambdaSearchError(os.str(), L, 1.0);
  }

  LambdaChoice out;
  std::optional<Eigen::VectorXd> warm;
  PartialLikelihood pl(data, with_spline(base, basis, 0.0));
  auto trial = [&](double lambda) {
    pl.set_lambda(lambda);
    FitResult f = fit(pl, options, warm);
    ++out.fits;
    warm = f.coefficients;
    return f;
  };

  // df(0) = L whenever the information is nonsingular, so the lambda = 0
  // fit is only needed when the target sits at that end.
  if (std::abs(L - target_df) < tolerance) {
    FitResult f0 = trial(0.0);
    if (std::abs(f0.spline_df - target_df) < tolerance) {
      out.lambda = 0.0;
      out.df = f0.spline_df;
      out.fit = std::move(f0);
      return out;
    }
  }

  const double lo_end = -8.0, hi_end = 8.0;  // log10 lambda
  double lo = lo_end, hi = hi_end;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    FitResult f = trial(std::pow(10.0, mid));
    if (std::abs(f.spline_df - target_df) < tolerance) {
      out.lambda = std::pow(10.0, mid);
      out.df = f.spline_df;
      out.fit = std::move(f);
      return out;
    }
    if (f.spline_df > target_df) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-9) break;
  }
  // No lambda in range reached the target: report the df at both ends.
  warm.reset();
  const double df_low = trial(std::pow(10.0, lo_end)).spline_df;
  const double df_high = trial(std::pow(10.0, hi_end)).spline_df;
  std::ostringstream os;
  os << "choose_lambda: target df " << target_df << " not reached; df(lambda=1e-8) = " << df_low
     << ", df(lambda=1e8) = " << df_high;
  throw LambdaSearchError(os.str(), df_low, df_high);
}

FitResult fit_pspline(const CoxData& data, const PSplineSettings& settings, const ModelSpec& base,
                      std::shared_ptr<const PSplineBasis> basis, const FitOptions& options) {
  if (!basis) {
    const double s_max = max_time_since_vaccination(data.intervals);
    if (!(s_max > 0.0)) throw InvalidDataError("no vaccinated follow-up for the spline basis");
    basis = build_basis(s_max, settings.n_terms);
  }
  if (settings.lambda >= 0.0) return fit(data, with_spline(base, basis, settings.lambda), options);
  return choose_lambda(data, basis, settings.target_df, base, settings.df_tolerance, options).fit;
}

LinearTrend linear_trend(const FitResult& fit, double s_max_days, bool sandwich, int grid_points) {
  if (!(s_max_days > 0.0) || grid_points < 2) {
    throw std::invalid_argument("linear_trend: need s_max > 0 and at least 2 grid points");
  }
  const int pf = profile_dim(fit.spec.form);
  Eigen::MatrixXd g(grid_points, 2);
  Eigen::MatrixXd a(grid_points, pf);
  for (int k = 0; k < grid_points; ++k) {
    const double s = s_max_days * k / (grid_points - 1);
    g(k, 0) = 1.0;
    g(k, 1) = s / kDaysPerYear;
    a.row(k) = design_row(fit.spec.form, s).transpose();
  }
  // W maps profile coefficients to (intercept, slope).
  const Eigen::MatrixXd w = (g.transpose() * g).ldlt().solve(g.transpose() * a);
  const Eigen::VectorXd coef = fit.coefficients.head(pf);
  const Eigen::MatrixXd& cov = sandwich ? fit.sandwich_covariance : fit.covariance;
  LinearTrend out;
  const Eigen::Vector2d est = w * coef;
  out.intercept = est(0);
  out.slope_per_year = est(1);
  out.covariance = w * cov.topLeftCorner(pf, pf) * w.transpose();
  return out;
}

}  // namespace vecross
