#include "vecross/hazard.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace vecross {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool strictly_increasing(const std::vector<double>& v) {
  return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
}

// Integral of exp(a + c * (u - v)) over [u1, u2] given s1 = u1 - v.
double loglinear_piece(double a, double c, double s1, double width) {
  const double scale = std::exp(a + c * s1);
  const double x = c * width;
  if (std::abs(x) < 1e-8) return scale * width * (1.0 + 0.5 * x);
  return scale * std::expm1(x) / c;
}

}  // namespace

void check_profile(const VEProfile& profile) {
  std::visit(overloaded{
                 [](const ConstantProfile&) {},
                 [](const LogLinearProfile& p) {
                   if (!(p.slope_unit_days > 0.0)) {
                     throw std::invalid_argument("log-linear profile: slope unit must be positive");
                   }
                 },
                 [](const PiecewiseProfile& p) {
                   if (p.values.size() != p.changepoints.size() + 1) {
                     throw std::invalid_argument(
                         "piecewise profile: need one more value than changepoints");
                   }
                   if (!strictly_increasing(p.changepoints) ||
                       (!p.changepoints.empty() && p.changepoints.front() <= 0.0)) {
                     throw std::invalid_argument(
                         "piecewise profile: changepoints must be positive and increasing");
                   }
                 },
                 [](const SplineProfile& p) {
                   if (!p.basis) throw std::invalid_argument("spline profile: missing basis");
                   if (static_cast<int>(p.coefficients.size()) != p.basis->n_terms()) {
                     throw std::invalid_argument("spline profile: coefficient count mismatch");
                   }
                 },
             },
             profile);
}

double linear_predictor(const VEProfile& profile, double s) {
  if (!(s >= 0.0)) throw std::domain_error("linear_predictor: s must be >= 0");
  return std::visit(
      overloaded{
          [](const ConstantProfile& p) { return p.log_hr; },
          [s](const LogLinearProfile& p) { return p.intercept + p.slope * s / p.slope_unit_days; },
          [s](const PiecewiseProfile& p) {
            auto it = std::upper_bound(p.changepoints.begin(), p.changepoints.end(), s);
            return p.values[static_cast<std::size_t>(it - p.changepoints.begin())];
          },
          [s](const SplineProfile& p) {
            const Eigen::VectorXd row = p.basis->evaluate(s);
            double f = p.intercept;
            for (Eigen::Index l = 0; l < row.size(); ++l) {
              f += p.coefficients[static_cast<std::size_t>(l)] * row(l);
            }
            return f;
          },
      },
      profile);
}

double ve_at(const VEProfile& profile, double s) {
  return -std::expm1(linear_predictor(profile, s));
}

BaselineHazard::BaselineHazard(std::vector<double> changepoints, std::vector<double> rates)
    : changepoints_(std::move(changepoints)), rates_(std::move(rates)) {
  if (rates_.size() != changepoints_.size() + 1) {
    throw std::invalid_argument("baseline hazard: need len(rates) = len(changepoints) + 1");
  }
  if (!strictly_increasing(changepoints_)) {
    throw std::invalid_argument("baseline hazard: changepoints must be strictly increasing");
  }
  for (double r : rates_) {
    if (!(r >= 0.0) || !std::isfinite(r)) {
      throw std::invalid_argument("baseline hazard: rates must be finite and >= 0");
    }
  }
}

std::size_t BaselineHazard::segment_of(double t) const {
  return static_cast<std::size_t>(
      std::upper_bound(changepoints_.begin(), changepoints_.end(), t) - changepoints_.begin());
}

double BaselineHazard::rate_at(double t) const { return rates_[segment_of(t)]; }

double hazard_at(double t, const BaselineHazard& h0, const HazardContext& ctx,
                 const VEProfile& profile) {
  if (t <= ctx.entry) return 0.0;
  double log_rel = ctx.covariate_effect;
  if (t > ctx.vacc_time) log_rel += linear_predictor(profile, t - ctx.vacc_time);
  return ctx.frailty * h0.rate_at(t) * std::exp(log_rel);
}

namespace {

// Breakpoints of the integrand on [lo, hi]: baseline changepoints, the
// vaccination day and the profile's own breakpoints shifted by it.
std::vector<double> piece_cuts(double lo, double hi, const BaselineHazard& h0,
                               const HazardContext& ctx, const VEProfile& profile) {
  std::vector<double> cuts{lo, hi};
  auto add_cut = [&](double c) {
    if (c > lo && c < hi) cuts.push_back(c);
  };
  for (double c : h0.changepoints()) add_cut(c);
  if (std::isfinite(ctx.vacc_time)) {
    add_cut(ctx.vacc_time);
    if (const auto* pw = std::get_if<PiecewiseProfile>(&profile)) {
      for (double c : pw->changepoints) add_cut(ctx.vacc_time + c);
    } else if (const auto* sp = std::get_if<SplineProfile>(&profile)) {
      for (double k : sp->basis->knots()) add_cut(ctx.vacc_time + k);
    }
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  return cuts;
}

// Integral of the unit-frailty, zero-covariate hazard over [u1, u2], a
// piece on which the baseline rate is constant and the profile smooth.
double piece_integral(double u1, double u2, double rate, const HazardContext& ctx,
                      const VEProfile& profile) {
  const double width = u2 - u1;
  if (rate == 0.0 || width <= 0.0) return 0.0;
  if (!std::isfinite(ctx.vacc_time) || u1 < ctx.vacc_time) return rate * width;
  const double s1 = u1 - ctx.vacc_time;
  return rate * std::visit(
                    overloaded{
                        [&](const ConstantProfile& p) { return std::exp(p.log_hr) * width; },
                        [&](const LogLinearProfile& p) {
                          return loglinear_piece(p.intercept, p.slope / p.slope_unit_days, s1,
                                                 width);
                        },
                        [&](const PiecewiseProfile& p) {
                          return std::exp(linear_predictor(p, s1 + 0.5 * width)) * width;
                        },
                        [&](const SplineProfile& p) {
                          auto f = [&](double u) {
                            return std::exp(linear_predictor(p, u - ctx.vacc_time));
                          };
                          return boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
                              f, u1, u2, 15, 1e-10);
                        },
                    },
                    profile);
}

// Width w in (0, u2 - u1] with piece_integral(u1, u1 + w) = target, given
// that the whole piece accumulates at least target.
double invert_piece(double u1, double u2, double rate, double target, const HazardContext& ctx,
                    const VEProfile& profile) {
  const double width = u2 - u1;
  if (!std::isfinite(ctx.vacc_time) || u1 < ctx.vacc_time) {
    return std::min(width, target / rate);
  }
  const double s1 = u1 - ctx.vacc_time;
  if (const auto* c = std::get_if<ConstantProfile>(&profile)) {
    return std::min(width, target / (rate * std::exp(c->log_hr)));
  }
  if (const auto* pw = std::get_if<PiecewiseProfile>(&profile)) {
    return std::min(width, target / (rate * std::exp(linear_predictor(*pw, s1 + 0.5 * width))));
  }
  if (const auto* ll = std::get_if<LogLinearProfile>(&profile)) {
    const double c = ll->slope / ll->slope_unit_days;
    const double scale = rate * std::exp(ll->intercept + c * s1);
    const double x = target * c / scale;
    const double w = std::abs(x) < 1e-12 ? target / scale : std::log1p(x) / c;
    return std::clamp(std::isfinite(w) ? w : width, 0.0, width);
  }
  double lo = 0.0, hi = width;
  while (hi - lo > 1e-9) {
    const double mid = 0.5 * (lo + hi);
    if (piece_integral(u1, u1 + mid, rate, ctx, profile) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

double cumulative_hazard(double t1, double t2, const BaselineHazard& h0,
                         const HazardContext& ctx, const VEProfile& profile) {
  if (t2 < t1) throw std::invalid_argument("cumulative_hazard: t1 > t2");
  const double lo = std::max(t1, ctx.entry);
  const double hi = t2;
  if (!(hi > lo)) return 0.0;
  const std::vector<double> cuts = piece_cuts(lo, hi, h0, ctx, profile);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double u1 = cuts[i];
    const double u2 = cuts[i + 1];
    total += piece_integral(u1, u2, h0.rate_at(0.5 * (u1 + u2)), ctx, profile);
  }
  return ctx.frailty * std::exp(ctx.covariate_effect) * total;
}

std::optional<double> invert_cumulative_hazard(double t0, double target, double t_end,
                                               const BaselineHazard& h0, const HazardContext& ctx,
                                               const VEProfile& profile) {
  if (!(target >= 0.0)) throw std::invalid_argument("invert_cumulative_hazard: target < 0");
  const double lo = std::max(t0, ctx.entry);
  if (!(t_end > lo)) return std::nullopt;
  const double mult = ctx.frailty * std::exp(ctx.covariate_effect);
  if (!(mult > 0.0)) return std::nullopt;
  double remaining = target / mult;
  const std::vector<double> cuts = piece_cuts(lo, t_end, h0, ctx, profile);
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double u1 = cuts[i];
    const double u2 = cuts[i + 1];
    const double rate = h0.rate_at(0.5 * (u1 + u2));
    const double piece = piece_integral(u1, u2, rate, ctx, profile);
    if (piece >= remaining && piece > 0.0) {
      return u1 + invert_piece(u1, u2, rate, remaining, ctx, profile);
    }
    remaining -= piece;
  }
  return std::nullopt;
}

}  // namespace vecross
