#include "vecross/coxph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace vecross {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::size_t piecewise_segment(const std::vector<double>& changepoints, double s) {
  return static_cast<std::size_t>(std::upper_bound(changepoints.begin(), changepoints.end(), s) -
                                  changepoints.begin());
}

int stratum_key(const RiskInterval& iv, bool stratified) { return stratified ? iv.stratum : 0; }

}  // namespace

int profile_dim(const ProfileForm& form) {
  return std::visit(overloaded{
                        [](const ConstantForm&) { return 1; },
                        [](const LogLinearForm&) { return 2; },
                        [](const PiecewiseForm& f) {
                          return static_cast<int>(f.changepoints.size()) + 1;
                        },
                        [](const SplineForm& f) {
                          if (!f.basis) throw std::invalid_argument("spline form without basis");
                          return 1 + f.basis->n_terms();
                        },
                    },
                    form);
}

int n_params(const ModelSpec& spec) { return profile_dim(spec.form) + spec.n_covariates; }

std::vector<std::string> coefficient_names(const ModelSpec& spec) {
  std::vector<std::string> names;
  std::visit(overloaded{
                 [&](const ConstantForm&) { names = {"intercept"}; },
                 [&](const LogLinearForm&) { names = {"intercept", "slope"}; },
                 [&](const PiecewiseForm& f) {
                   for (std::size_t k = 0; k <= f.changepoints.size(); ++k) {
                     names.push_back("period" + std::to_string(k + 1));
                   }
                 },
                 [&](const SplineForm& f) {
                   names.push_back("intercept");
                   for (int l = 1; l <= f.basis->n_terms(); ++l) {
                     names.push_back("spline" + std::to_string(l));
                   }
                 },
             },
             spec.form);
  for (int c = 1; c <= spec.n_covariates; ++c) names.push_back("beta" + std::to_string(c));
  return names;
}

Eigen::VectorXd design_row(const ProfileForm& form, double s) {
  if (!(s >= 0.0)) throw std::domain_error("design_row: s must be >= 0");
  return std::visit(overloaded{
                        [](const ConstantForm&) { return Eigen::VectorXd::Ones(1).eval(); },
                        [s](const LogLinearForm& f) {
                          Eigen::VectorXd a(2);
                          a << 1.0, s / f.slope_unit_days;
                          return a;
                        },
                        [s](const PiecewiseForm& f) {
                          Eigen::VectorXd a = Eigen::VectorXd::Zero(
                              static_cast<Eigen::Index>(f.changepoints.size()) + 1);
                          a(static_cast<Eigen::Index>(piecewise_segment(f.changepoints, s))) = 1.0;
                          return a;
                        },
                        [s](const SplineForm& f) {
                          Eigen::VectorXd a(1 + f.basis->n_terms());
                          a(0) = 1.0;
                          a.tail(f.basis->n_terms()) = f.basis->evaluate(s);
                          return a;
                        },
                    },
                    form);
}

VEProfile to_profile(const ProfileForm& form, const Eigen::VectorXd& c) {
  return std::visit(overloaded{
                        [&](const ConstantForm&) -> VEProfile { return ConstantProfile{c(0)}; },
                        [&](const LogLinearForm& f) -> VEProfile {
                          return LogLinearProfile{c(0), c(1), f.slope_unit_days};
                        },
                        [&](const PiecewiseForm& f) -> VEProfile {
                          PiecewiseProfile p;
                          p.changepoints = f.changepoints;
                          for (std::size_t k = 0; k <= f.changepoints.size(); ++k) {
                            p.values.push_back(c(static_cast<Eigen::Index>(k)));
                          }
                          return p;
                        },
                        [&](const SplineForm& f) -> VEProfile {
                          SplineProfile p;
                          p.intercept = c(0);
                          p.basis = f.basis;
                          for (int l = 0; l < f.basis->n_terms(); ++l) {
                            p.coefficients.push_back(c(1 + l));
                          }
                          return p;
                        },
                    },
                    form);
}

Eigen::MatrixXd penalty_matrix(const ModelSpec& spec) {
  const int d = n_params(spec);
  Eigen::MatrixXd pen = Eigen::MatrixXd::Zero(d, d);
  if (const auto* sf = std::get_if<SplineForm>(&spec.form)) {
    if (sf->lambda < 0.0) throw std::invalid_argument("spline penalty: lambda must be >= 0");
    if (sf->lambda > 0.0) {
      const int L = sf->basis->n_terms();
      pen.block(1, 1, L, L) = sf->lambda * sf->basis->penalty();
    }
  }
  return pen;
}

CoxData attach_covariates(std::vector<RiskInterval> intervals,
                          const std::map<std::int64_t, Eigen::VectorXd>& baseline) {
  Eigen::Index p = baseline.empty() ? 0 : baseline.begin()->second.size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(intervals.size()), p);
  for (std::size_t j = 0; j < intervals.size(); ++j) {
    auto it = baseline.find(intervals[j].id);
    if (it == baseline.end()) {
      throw InvalidDataError("no covariates for id " + std::to_string(intervals[j].id));
    }
    if (it->second.size() != p) throw InvalidDataError("covariate vectors differ in length");
    if (!it->second.allFinite()) {
      throw InvalidDataError("non-finite covariate for id " + std::to_string(intervals[j].id));
    }
    x.row(static_cast<Eigen::Index>(j)) = it->second.transpose();
  }
  return CoxData(std::move(intervals), std::move(x));
}

// ---------------------------------------------------------------------------
// PartialLikelihood

struct PartialLikelihood::SparseRow {
  std::vector<int> index;
  std::vector<double> value;
  int nnz = 0;

  explicit SparseRow(int capacity) : index(static_cast<std::size_t>(capacity)),
                                     value(static_cast<std::size_t>(capacity)) {}
  void push(int i, double v) {
    index[static_cast<std::size_t>(nnz)] = i;
    value[static_cast<std::size_t>(nnz)] = v;
    ++nnz;
  }
  double dot(const Eigen::VectorXd& params) const {
    double eta = 0.0;
    for (int a = 0; a < nnz; ++a) {
      eta += value[static_cast<std::size_t>(a)] * params(index[static_cast<std::size_t>(a)]);
    }
    return eta;
  }
};

PartialLikelihood::PartialLikelihood(const CoxData& data, const ModelSpec& spec)
    : data_(&data), spec_(spec) {
  const auto& iv = data.intervals;
  if (iv.empty()) throw InvalidDataError("no risk intervals");
  if (data.covariates.rows() != static_cast<Eigen::Index>(iv.size()) ||
      data.covariates.cols() != spec.n_covariates) {
    throw InvalidDataError("covariate matrix shape does not match intervals / model");
  }
  profile_dim_ = profile_dim(spec.form);
  dim_ = profile_dim_ + spec.n_covariates;
  penalty_ = penalty_matrix(spec);
  if (const auto* sf = std::get_if<SplineForm>(&spec.form)) {
    for (double c : sf->basis->centering()) {
      if (c != 0.0) throw std::logic_error("spline basis columns must vanish at s = 0");
    }
  }

  for (std::size_t j = 0; j < iv.size(); ++j) {
    const auto& r = iv[j];
    if (!(r.tstart < r.tstop) || !std::isfinite(r.tstart) || !std::isfinite(r.tstop)) {
      throw InvalidDataError("interval " + std::to_string(j) + " (id " + std::to_string(r.id) +
                             "): need finite tstart < tstop");
    }
    if (r.vacc_status == 1 && !std::isfinite(r.vacc_time)) {
      throw InvalidDataError("interval " + std::to_string(j) + " (id " + std::to_string(r.id) +
                             "): vaccinated interval without a vaccination time");
    }
  }

  // Unique event times per stratum, strata in ascending label order.
  std::map<int, std::vector<std::size_t>> deaths_by_stratum;
  for (std::size_t j = 0; j < iv.size(); ++j) {
    if (iv[j].event == 1) deaths_by_stratum[stratum_key(iv[j], spec.stratified)].push_back(j);
  }
  if (deaths_by_stratum.empty()) throw InvalidDataError("no events");

  std::map<int, std::pair<std::size_t, std::size_t>> stratum_range;  // [begin, end) in times_
  death_offsets_.push_back(0);
  for (auto& [stratum, ds] : deaths_by_stratum) {
    std::stable_sort(ds.begin(), ds.end(),
                     [&](std::size_t a, std::size_t b) { return iv[a].tstop < iv[b].tstop; });
    const std::size_t begin = times_.size();
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const double t = iv[ds[i]].tstop;
      if (times_.size() == begin || times_.back() != t) {
        if (times_.size() != begin) death_offsets_.push_back(deaths_.size());
        times_.push_back(t);
      }
      deaths_.push_back(ds[i]);
    }
    death_offsets_.push_back(deaths_.size());
    stratum_range[stratum] = {begin, times_.size()};
  }
  n_events_ = deaths_.size();

  t_ref_ = 0.5 * (*std::min_element(times_.begin(), times_.end()) +
                  *std::max_element(times_.begin(), times_.end()));

  lo_.resize(iv.size());
  hi_.resize(iv.size());
  for (std::size_t j = 0; j < iv.size(); ++j) {
    const auto& r = iv[j];
    auto found = stratum_range.find(stratum_key(r, spec.stratified));
    if (found == stratum_range.end()) {
      lo_[j] = hi_[j] = 0;
      continue;
    }
    auto first = times_.begin() + static_cast<std::ptrdiff_t>(found->second.first);
    auto last = times_.begin() + static_cast<std::ptrdiff_t>(found->second.second);
    const std::size_t lo =
        static_cast<std::size_t>(std::upper_bound(first, last, r.tstart) - times_.begin());
    const std::size_t hi =
        static_cast<std::size_t>(std::upper_bound(first, last, r.tstop) - times_.begin());
    lo_[j] = lo;
    hi_[j] = hi;
    if (lo == hi) continue;

    if (r.vacc_status == 0 || std::holds_alternative<ConstantForm>(spec.form)) {
      constant_pieces_.push_back({j, lo, hi});
    } else if (const auto* pw = std::get_if<PiecewiseForm>(&spec.form)) {
      // Split the range where t - vacc_time crosses a changepoint.
      std::size_t k = lo;
      while (k < hi) {
        const auto seg = piecewise_segment(pw->changepoints, std::max(0.0, times_[k] - r.vacc_time));
        std::size_t next = hi;
        if (seg < pw->changepoints.size()) {
          const double boundary = r.vacc_time + pw->changepoints[seg];
          next = static_cast<std::size_t>(
              std::lower_bound(times_.begin() + static_cast<std::ptrdiff_t>(k),
                               times_.begin() + static_cast<std::ptrdiff_t>(hi), boundary) -
              times_.begin());
        }
        constant_pieces_.push_back({j, k, next});
        k = next;
      }
    } else if (std::holds_alternative<LogLinearForm>(spec.form) && r.vacc_time <= times_[lo]) {
      affine_rows_.push_back(j);
    } else {
      direct_rows_.push_back(j);
    }
  }

  if (const auto* sf = std::get_if<SplineForm>(&spec.form)) {
    constexpr std::size_t kMaxCachedPairs = 4'000'000;
    std::size_t pairs = 0;
    for (std::size_t j : direct_rows_) pairs += hi_[j] - lo_[j];
    if (pairs <= kMaxCachedPairs) {
      basis_cache_.reserve(pairs);
      basis_offsets_.reserve(direct_rows_.size() + 1);
      for (std::size_t j : direct_rows_) {
        basis_offsets_.push_back(basis_cache_.size());
        for (std::size_t k = lo_[j]; k < hi_[j]; ++k) {
          BasisValues b{};
          sf->basis->full_nonzero(std::max(0.0, times_[k] - iv[j].vacc_time), b.first, b.values);
          basis_cache_.push_back(b);
        }
      }
      basis_offsets_.push_back(basis_cache_.size());
    }
  }
}

void PartialLikelihood::set_lambda(double lambda) {
  auto* sf = std::get_if<SplineForm>(&spec_.form);
  if (!sf) throw std::invalid_argument("set_lambda: not a spline model");
  sf->lambda = lambda;
  penalty_ = penalty_matrix(spec_);
}

void PartialLikelihood::fill_row(std::size_t j, double t, SparseRow& row) const {
  row.nnz = 0;
  const auto& r = data_->intervals[j];
  if (r.vacc_status == 1) {
    const double s = std::max(0.0, t - r.vacc_time);
    std::visit(overloaded{
                   [&](const ConstantForm&) { row.push(0, 1.0); },
                   [&](const LogLinearForm& f) {
                     row.push(0, 1.0);
                     row.push(1, s / f.slope_unit_days);
                   },
                   [&](const PiecewiseForm& f) {
                     row.push(static_cast<int>(piecewise_segment(f.changepoints, s)), 1.0);
                   },
                   [&](const SplineForm& f) {
                     BasisValues b{};
                     f.basis->full_nonzero(s, b.first, b.values);
                     push_spline(b, row);
                   },
               },
               spec_.form);
  }
  push_covariates(j, row);
}

void PartialLikelihood::push_spline(const BasisValues& b, SparseRow& row) {
  row.push(0, 1.0);
  for (int k = 0; k <= PSplineBasis::kDegree; ++k) {
    // full function i is model column i-1, parameter index i
    if (b.first + k >= 1 && b.values[static_cast<std::size_t>(k)] != 0.0) {
      row.push(b.first + k, b.values[static_cast<std::size_t>(k)]);
    }
  }
}

void PartialLikelihood::push_covariates(std::size_t j, SparseRow& row) const {
  for (int c = 0; c < spec_.n_covariates; ++c) {
    const double x = data_->covariates(static_cast<Eigen::Index>(j), c);
    if (x != 0.0) row.push(profile_dim_ + c, x);
  }
}

Derivatives PartialLikelihood::evaluate(const Eigen::VectorXd& params, int order) const {
  if (params.size() != dim_) throw std::invalid_argument("parameter vector has wrong length");
  const auto& iv = data_->intervals;
  const std::size_t K = times_.size();
  const std::size_t d = static_cast<std::size_t>(dim_);
  const std::size_t dd = d * d;
  SparseRow row(dim_ + 8);

  auto checked_eta = [&](std::size_t j) {
    const double eta = row.dot(params);
    if (!std::isfinite(eta)) {
      std::ostringstream os;
      os << "non-finite linear predictor on interval " << j << " (id " << iv[j].id << ")";
      throw InvalidDataError(os.str());
    }
    return eta;
  };

  // Log-linear rows: x_j(t) = p_j + (t - t_ref) q with q = e_slope / unit,
  // so exp(eta_j(t)) = exp(p_j' theta) * exp((t - t_ref) q' theta).
  double inv_unit = 0.0;
  if (const auto* ll = std::get_if<LogLinearForm>(&spec_.form)) inv_unit = 1.0 / ll->slope_unit_days;
  auto to_affine_base = [&](std::size_t j) {
    fill_row(j, times_[lo_[j]], row);
    row.value[1] = (t_ref_ - iv[j].vacc_time) * inv_unit;
  };

  // Common shift of the linear predictor. Range endpoints bound eta for
  // constant and affine rows and approximate it for spline rows.
  double shift = -std::numeric_limits<double>::infinity();
  double shift_affine = -std::numeric_limits<double>::infinity();
  for (const auto& p : constant_pieces_) {
    fill_row(p.row, times_[p.lo], row);
    shift = std::max(shift, checked_eta(p.row));
  }
  for (std::size_t j : direct_rows_) {
    for (std::size_t k : {lo_[j], hi_[j] - 1}) {
      fill_row(j, times_[k], row);
      shift = std::max(shift, checked_eta(j));
    }
  }
  for (std::size_t j : affine_rows_) {
    for (std::size_t k : {lo_[j], hi_[j] - 1}) {
      fill_row(j, times_[k], row);
      shift = std::max(shift, checked_eta(j));
    }
    to_affine_base(j);
    shift_affine = std::max(shift_affine, checked_eta(j));
  }
  if (!std::isfinite(shift)) shift = 0.0;

  std::vector<double> s0(K, 0.0), d0(K + 1, 0.0), a0;
  std::vector<double> s1, d1, s2, d2, a1, a2;
  if (order >= 1) {
    s1.assign(K * d, 0.0);
    d1.assign((K + 1) * d, 0.0);
  }
  if (order >= 2) {
    s2.assign(K * dd, 0.0);
    d2.assign((K + 1) * dd, 0.0);
  }
  const bool any_affine = !affine_rows_.empty();
  if (any_affine) {
    a0.assign(K + 1, 0.0);
    if (order >= 1) a1.assign((K + 1) * d, 0.0);
    if (order >= 2) a2.assign((K + 1) * dd, 0.0);
  }

  auto accumulate = [&](double w, double* m0, double* m1, double* m2) {
    *m0 += w;
    if (order >= 1) {
      for (int a = 0; a < row.nnz; ++a) {
        m1[row.index[static_cast<std::size_t>(a)]] += w * row.value[static_cast<std::size_t>(a)];
      }
    }
    if (order >= 2) {
      // Lower triangle only (row indices ascend); mirrored after the sweep.
      for (int a = 0; a < row.nnz; ++a) {
        const double wa = w * row.value[static_cast<std::size_t>(a)];
        double* dst = m2 + static_cast<std::size_t>(row.index[static_cast<std::size_t>(a)]) * d;
        for (int b = 0; b <= a; ++b) {
          dst[row.index[static_cast<std::size_t>(b)]] += wa * row.value[static_cast<std::size_t>(b)];
        }
      }
    }
  };
  auto at = [](std::vector<double>& v, std::size_t offset) {
    return v.empty() ? nullptr : v.data() + offset;
  };

  for (const auto& p : constant_pieces_) {
    fill_row(p.row, times_[p.lo], row);
    const double w = std::exp(row.dot(params) - shift);
    accumulate(w, &d0[p.lo], at(d1, p.lo * d), at(d2, p.lo * dd));
    accumulate(-w, &d0[p.hi], at(d1, p.hi * d), at(d2, p.hi * dd));
  }
  for (std::size_t j : affine_rows_) {
    to_affine_base(j);
    const double w = std::exp(row.dot(params) - shift_affine);
    accumulate(w, &a0[lo_[j]], at(a1, lo_[j] * d), at(a2, lo_[j] * dd));
    accumulate(-w, &a0[hi_[j]], at(a1, hi_[j] * d), at(a2, hi_[j] * dd));
  }
  const bool cached = !basis_offsets_.empty();
  for (std::size_t r = 0; r < direct_rows_.size(); ++r) {
    const std::size_t j = direct_rows_[r];
    for (std::size_t k = lo_[j]; k < hi_[j]; ++k) {
      if (cached) {
        row.nnz = 0;
        push_spline(basis_cache_[basis_offsets_[r] + (k - lo_[j])], row);
        push_covariates(j, row);
      } else {
        fill_row(j, times_[k], row);
      }
      const double w = std::exp(row.dot(params) - shift);
      accumulate(w, &s0[k], at(s1, k * d), at(s2, k * dd));
    }
  }

  // Prefix sums of the range contributions.
  {
    double run0 = 0.0, runa0 = 0.0;
    std::vector<double> run1(order >= 1 ? d : 0, 0.0), run2(order >= 2 ? dd : 0, 0.0);
    std::vector<double> runa1(any_affine && order >= 1 ? d : 0, 0.0);
    std::vector<double> runa2(any_affine && order >= 2 ? dd : 0, 0.0);
    const double slope = any_affine ? params(1) * inv_unit : 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      run0 += d0[k];
      s0[k] += run0;
      if (order >= 1) {
        for (std::size_t a = 0; a < d; ++a) {
          run1[a] += d1[k * d + a];
          s1[k * d + a] += run1[a];
        }
      }
      if (order >= 2) {
        for (std::size_t a = 0; a < dd; ++a) {
          run2[a] += d2[k * dd + a];
          s2[k * dd + a] += run2[a];
        }
      }
      double tau = 0.0, g = 0.0;
      if (any_affine) {
        runa0 += a0[k];
        if (order >= 1) {
          for (std::size_t a = 0; a < d; ++a) runa1[a] += a1[k * d + a];
        }
        if (order >= 2) {
          for (std::size_t a = 0; a < dd; ++a) runa2[a] += a2[k * dd + a];
        }
        if (runa0 != 0.0) {
          tau = (times_[k] - t_ref_) * inv_unit;
          g = std::exp((times_[k] - t_ref_) * slope + shift_affine - shift);
        }
      }
      if (order >= 2) {
        double* s2k = &s2[k * dd];
        if (g != 0.0) {
          for (std::size_t a = 0; a < dd; ++a) s2k[a] += g * runa2[a];
        }
        for (std::size_t a = 0; a < d; ++a) {
          for (std::size_t b = a + 1; b < d; ++b) s2k[a * d + b] = s2k[b * d + a];
        }
      }
      if (g == 0.0) continue;
      s0[k] += g * runa0;
      if (order >= 1) {
        for (std::size_t a = 0; a < d; ++a) s1[k * d + a] += g * runa1[a];
        s1[k * d + 1] += g * tau * runa0;
      }
      if (order >= 2) {
        double* s2k = &s2[k * dd];
        for (std::size_t a = 0; a < d; ++a) {
          s2k[a * d + 1] += g * tau * runa1[a];
          s2k[1 * d + a] += g * tau * runa1[a];
        }
        s2k[1 * d + 1] += g * tau * tau * runa0;
      }
    }
  }

  Derivatives out;
  out.score = Eigen::VectorXd::Zero(dim_);
  out.information = Eigen::MatrixXd::Zero(dim_, dim_);
  Eigen::VectorXd xsum(dim_), mean(dim_), e1(dim_);
  Eigen::MatrixXd e2(dim_, dim_);
  double ll = 0.0;

  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t begin = death_offsets_[k];
    const std::size_t end = death_offsets_[k + 1];
    const double n_dead = static_cast<double>(end - begin);
    const bool efron = spec_.ties == Ties::efron && end - begin > 1;
    xsum.setZero();
    double eta_sum = 0.0;
    double dw0 = 0.0;
    if (efron) {
      e1.setZero();
      e2.setZero();
    }
    for (std::size_t q = begin; q < end; ++q) {
      fill_row(deaths_[q], times_[k], row);
      const double eta = row.dot(params) - shift;
      eta_sum += eta;
      const double w = efron ? std::exp(eta) : 0.0;
      dw0 += w;
      for (int a = 0; a < row.nnz; ++a) {
        const auto ia = row.index[static_cast<std::size_t>(a)];
        const double va = row.value[static_cast<std::size_t>(a)];
        xsum(ia) += va;
        if (efron) {
          e1(ia) += w * va;
          for (int b = 0; b < row.nnz; ++b) {
            e2(ia, row.index[static_cast<std::size_t>(b)]) +=
                w * va * row.value[static_cast<std::size_t>(b)];
          }
        }
      }
    }
    ll += eta_sum;
    if (order >= 1) out.score += xsum;

    const int passes = efron ? static_cast<int>(end - begin) : 1;
    for (int r = 0; r < passes; ++r) {
      const double frac = efron ? static_cast<double>(r) / n_dead : 0.0;
      const double mult = efron ? 1.0 : n_dead;
      const double den = s0[k] - frac * dw0;
      ll -= mult * std::log(den);
      if (order >= 1) {
        for (std::size_t a = 0; a < d; ++a) {
          const auto ia = static_cast<Eigen::Index>(a);
          mean(ia) = (s1[k * d + a] - (efron ? frac * e1(ia) : 0.0)) / den;
        }
        out.score -= mult * mean;
      }
      if (order >= 2) {
        for (std::size_t a = 0; a < d; ++a) {
          for (std::size_t b = 0; b < d; ++b) {
            const auto ia = static_cast<Eigen::Index>(a);
            const auto ib = static_cast<Eigen::Index>(b);
            const double m2 = s2[k * dd + a * d + b] - (efron ? frac * e2(ia, ib) : 0.0);
            out.information(ia, ib) += mult * (m2 / den - mean(ia) * mean(ib));
          }
        }
      }
    }
  }
  out.loglik = ll;
  return out;
}

Derivatives PartialLikelihood::evaluate_penalized(const Eigen::VectorXd& params, int order) const {
  Derivatives out = evaluate(params, order);
  if (penalty_.isZero(0.0)) return out;
  out.loglik -= 0.5 * params.dot(penalty_ * params);
  if (order >= 1) out.score -= penalty_ * params;
  if (order >= 2) out.information += penalty_;
  return out;
}

double log_partial_likelihood(const CoxData& data, const ModelSpec& spec,
                              const Eigen::VectorXd& params) {
  return PartialLikelihood(data, spec).evaluate(params, 0).loglik;
}

Eigen::VectorXd score(const CoxData& data, const ModelSpec& spec, const Eigen::VectorXd& params) {
  return PartialLikelihood(data, spec).evaluate_penalized(params, 1).score;
}

Eigen::MatrixXd information(const CoxData& data, const ModelSpec& spec,
                            const Eigen::VectorXd& params) {
  return PartialLikelihood(data, spec).evaluate_penalized(params, 2).information;
}

// ---------------------------------------------------------------------------
// Newton-Raphson

namespace {

[[noreturn]] void throw_singular(const Eigen::MatrixXd& info, const std::vector<std::string>& names) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info);
  const Eigen::VectorXd v = eig.eigenvectors().col(0);
  Eigen::Index worst = 0;
  v.cwiseAbs().maxCoeff(&worst);
  std::ostringstream os;
  os << "singular information matrix (smallest eigenvalue " << eig.eigenvalues()(0)
     << "); null direction dominated by '" << names[static_cast<std::size_t>(worst)] << "'";
  throw SingularInformationError(os.str(), names[static_cast<std::size_t>(worst)]);
}

// Relative to the size of the data information, so that a large penalty
// does not make a well-determined fit look ill-conditioned.
bool is_singular(const Eigen::MatrixXd& info, const Eigen::MatrixXd& penalty) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info, Eigen::EigenvaluesOnly);
  const double top = std::max(1.0, (info - penalty).trace());
  return eig.eigenvalues()(0) <= 1e-10 * top;
}

}  // namespace

FitResult fit(const CoxData& data, const ModelSpec& spec, const FitOptions& options,
              std::optional<Eigen::VectorXd> init) {
  PartialLikelihood pl(data, spec);
  return fit(pl, options, std::move(init));
}

FitResult fit(const PartialLikelihood& pl, const FitOptions& options,
              std::optional<Eigen::VectorXd> init) {
  const ModelSpec& spec = pl.spec();
  const int d = pl.n_params();
  FitResult result;
  result.spec = spec;
  result.names = coefficient_names(spec);
  result.n_events = pl.n_events();

  const Eigen::MatrixXd penalty = penalty_matrix(spec);
  Eigen::VectorXd beta = init ? *init : Eigen::VectorXd::Zero(d);
  if (beta.size() != d) throw std::invalid_argument("fit: initial vector has wrong length");
  Derivatives cur = pl.evaluate_penalized(beta, 2);

  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    result.iterations = iter;
    Eigen::LLT<Eigen::MatrixXd> llt(cur.information);
    if (llt.info() != Eigen::Success || is_singular(cur.information, penalty)) {
      throw_singular(cur.information, result.names);
    }
    const Eigen::VectorXd step = llt.solve(cur.score);
    double scale = 1.0;
    Eigen::VectorXd next = beta + step;
    Derivatives cand = pl.evaluate_penalized(next, 2);
    // Decreases at the rounding level of the objective do not trigger halving.
    const double slack = 1e-13 * std::max(1.0, std::abs(cur.loglik));
    for (int h = 0; h < options.max_halvings &&
                    (!std::isfinite(cand.loglik) || cand.loglik < cur.loglik - slack);
         ++h) {
      scale *= 0.5;
      next = beta + scale * step;
      cand = pl.evaluate_penalized(next, 2);
    }
    if (!std::isfinite(cand.loglik)) break;
    const double change = std::abs(cand.loglik - cur.loglik);
    beta = next;
    cur = std::move(cand);
    if (change < options.loglik_tolerance &&
        cur.score.cwiseAbs().maxCoeff() < options.score_tolerance) {
      result.converged = true;
      break;
    }
  }

  if (is_singular(cur.information, penalty)) throw_singular(cur.information, result.names);
  // Unpenalized quantities at the optimum.
  Derivatives raw = cur;
  raw.loglik += 0.5 * beta.dot(penalty * beta);
  raw.score += penalty * beta;
  raw.information -= penalty;
  const Eigen::MatrixXd cov = cur.information.ldlt().solve(Eigen::MatrixXd::Identity(d, d));

  result.coefficients = beta;
  result.covariance = 0.5 * (cov + cov.transpose());
  result.information = raw.information;
  result.sandwich_covariance = result.covariance * raw.information * result.covariance;
  result.sandwich_covariance = 0.5 * (result.sandwich_covariance + result.sandwich_covariance.transpose()).eval();
  result.score = cur.score;
  result.loglik = raw.loglik;
  result.penalized_loglik = cur.loglik;
  const Eigen::MatrixXd hat = result.covariance * raw.information;
  result.effective_df = hat.trace();
  if (const auto* sf = std::get_if<SplineForm>(&spec.form)) {
    result.spline_df = hat.diagonal().segment(1, sf->basis->n_terms()).sum();
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace reference {

Derivatives evaluate_naive(const CoxData& data, const ModelSpec& spec,
                           const Eigen::VectorXd& params) {
  const auto& iv = data.intervals;
  const int pf = profile_dim(spec.form);
  const int d = pf + spec.n_covariates;
  auto x_at = [&](std::size_t j, double t) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(d);
    if (iv[j].vacc_status == 1) x.head(pf) = design_row(spec.form, std::max(0.0, t - iv[j].vacc_time));
    if (spec.n_covariates > 0) {
      x.tail(spec.n_covariates) = data.covariates.row(static_cast<Eigen::Index>(j)).transpose();
    }
    return x;
  };

  // (stratum, time) -> deaths
  std::map<std::pair<int, double>, std::vector<std::size_t>> groups;
  for (std::size_t j = 0; j < iv.size(); ++j) {
    if (iv[j].event == 1) groups[{stratum_key(iv[j], spec.stratified), iv[j].tstop}].push_back(j);
  }

  Derivatives out;
  out.loglik = 0.0;
  out.score = Eigen::VectorXd::Zero(d);
  out.information = Eigen::MatrixXd::Zero(d, d);
  for (const auto& [key, dead] : groups) {
    const auto [stratum, t] = key;
    std::vector<Eigen::VectorXd> xs;
    std::vector<double> etas;
    for (std::size_t j = 0; j < iv.size(); ++j) {
      if (stratum_key(iv[j], spec.stratified) != stratum) continue;
      if (!(iv[j].tstart < t && t <= iv[j].tstop)) continue;
      xs.push_back(x_at(j, t));
      etas.push_back(xs.back().dot(params));
    }
    const double m = *std::max_element(etas.begin(), etas.end());
    double r0 = 0.0;
    Eigen::VectorXd r1 = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd r2 = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double w = std::exp(etas[i] - m);
      r0 += w;
      r1 += w * xs[i];
      r2 += w * xs[i] * xs[i].transpose();
    }
    double q0 = 0.0;
    Eigen::VectorXd q1 = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd q2 = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t j : dead) {
      const Eigen::VectorXd x = x_at(j, t);
      const double eta = x.dot(params);
      out.loglik += eta;
      out.score += x;
      const double w = std::exp(eta - m);
      q0 += w;
      q1 += w * x;
      q2 += w * x * x.transpose();
    }
    const auto nd = static_cast<double>(dead.size());
    const bool efron = spec.ties == Ties::efron;
    for (std::size_t r = 0; r < dead.size(); ++r) {
      const double frac = efron ? static_cast<double>(r) / nd : 0.0;
      const double den = r0 - frac * q0;
      const Eigen::VectorXd mean = (r1 - frac * q1) / den;
      out.loglik -= std::log(den) + m;
      out.score -= mean;
      out.information += (r2 - frac * q2) / den - mean * mean.transpose();
    }
  }
  return out;
}

}  // namespace reference

}  // namespace vecross
