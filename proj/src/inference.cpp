#include "vecross/inference.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace vecross {

namespace {

Contrast wald(const FitResult& fit, const Eigen::VectorXd& c, bool sandwich) {
  const int pf = static_cast<int>(c.size());
  const Eigen::MatrixXd& cov = sandwich ? fit.sandwich_covariance : fit.covariance;
  Contrast out;
  out.estimate = c.dot(fit.coefficients.head(pf));
  out.se = std::sqrt(std::max(0.0, c.dot(cov.topLeftCorner(pf, pf) * c)));
  out.lower = out.estimate - kZ95 * out.se;
  out.upper = out.estimate + kZ95 * out.se;
  return out;
}

}  // namespace

Contrast linear_predictor_at(const FitResult& fit, double s, bool sandwich) {
  if (!(s >= 0.0)) throw std::domain_error("linear_predictor_at: s must be >= 0");
  return wald(fit, design_row(fit.spec.form, s), sandwich);
}

Contrast ve_change(const FitResult& fit, double s, bool sandwich) {
  if (!(s >= 0.0)) throw std::domain_error("ve_change: s must be >= 0");
  const Eigen::VectorXd c = design_row(fit.spec.form, s) - design_row(fit.spec.form, 0.0);
  return wald(fit, c, sandwich);
}

VECurve ve_curve(const FitResult& fit, const std::vector<double>& s_grid, bool sandwich) {
  VECurve out;
  for (double s : s_grid) {
    const Contrast c = linear_predictor_at(fit, s, sandwich);
    out.s.push_back(s);
    out.estimate.push_back(c.estimate);
    out.se.push_back(c.se);
    out.lower.push_back(c.lower);
    out.upper.push_back(c.upper);
    out.ve.push_back(-std::expm1(c.estimate));
    // VE is decreasing in f, so the upper f limit gives the lower VE limit.
    out.ve_lower.push_back(-std::expm1(c.upper));
    out.ve_upper.push_back(-std::expm1(c.lower));
  }
  return out;
}

double gamma_q(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0) || !std::isfinite(a)) {
    throw std::invalid_argument("gamma_q: need a > 0 and x >= 0");
  }
  if (std::isinf(x)) return 0.0;
  return boost::math::gamma_q(a, x);
}

double chisq_sf(double x, double df) {
  if (!(df > 0.0) || !(x >= 0.0)) throw std::invalid_argument("chisq_sf: need x >= 0 and df > 0");
  return gamma_q(0.5 * df, 0.5 * x);
}

LRTResult lrt_time_varying(const FitResult& full, const FitResult& null) {
  const double diff = full.loglik - null.loglik;
  if (diff < -1e-6) {
    throw std::invalid_argument(
        "lrt_time_varying: full-model log-likelihood below the null's (not nested or not "
        "converged)");
  }
  LRTResult out;
  out.statistic = std::max(0.0, 2.0 * diff);
  if (std::holds_alternative<SplineForm>(full.spec.form)) {
    out.df = full.spline_df;
  } else {
    out.df = static_cast<double>(n_params(full.spec) - n_params(null.spec));
  }
  if (!(out.df > 0.0)) {
    out.df = 0.0;
    out.p_value = 1.0;
    return out;
  }
  out.p_value = chisq_sf(out.statistic, out.df);
  return out;
}

}  // namespace vecross
