#pragma once

// Calendar-time Cox partial likelihood for counting-process data with a
// time-varying vaccination effect.
//
// For an interval j at risk at event time t the linear predictor is
//
//   eta_j(t) = Z_j * a(t - v_j)' theta + x_j' beta
//
// where a(s) is the design row of the VE profile form (constant,
// log-linear, piecewise-constant or centered P-spline), Z_j the interval's
// vaccination status, v_j its vaccination day and x_j fixed covariates.
// Every risk-set member is re-evaluated at every event time.

#include <array>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "vecross/hazard.hpp"
#include "vecross/spline_basis.hpp"
#include "vecross/trialdata.hpp"

namespace vecross {

enum class Ties { breslow, efron };

struct ConstantForm {};
struct LogLinearForm {
  double slope_unit_days = kDaysPerYear;
};
struct PiecewiseForm {
  std::vector<double> changepoints;
};
struct SplineForm {
  std::shared_ptr<const PSplineBasis> basis;
  double lambda = 0.0;
};

using ProfileForm = std::variant<ConstantForm, LogLinearForm, PiecewiseForm, SplineForm>;

struct ModelSpec {
  ProfileForm form = LogLinearForm{};
  int n_covariates = 0;
  Ties ties = Ties::breslow;
  bool stratified = false;
};

/// Number of VE-profile coefficients (theta or gamma0 + gamma).
int profile_dim(const ProfileForm& form);
int n_params(const ModelSpec& spec);
std::vector<std::string> coefficient_names(const ModelSpec& spec);

/// a(s): the profile design row, so that f(s) = a(s)' theta.
Eigen::VectorXd design_row(const ProfileForm& form, double s_days);

/// Coefficient vector -> VEProfile (covariate coefficients ignored).
VEProfile to_profile(const ProfileForm& form, const Eigen::VectorXd& coefficients);

/// lambda * P embedded in the full parameter space; zero for unpenalized forms.
Eigen::MatrixXd penalty_matrix(const ModelSpec& spec);

/// Intervals plus one covariate row per interval.
struct CoxData {
  std::vector<RiskInterval> intervals;
  Eigen::MatrixXd covariates;  // intervals.size() x n_covariates

  CoxData() = default;
  explicit CoxData(std::vector<RiskInterval> iv)
      : intervals(std::move(iv)), covariates(static_cast<Eigen::Index>(intervals.size()), 0) {}
  CoxData(std::vector<RiskInterval> iv, Eigen::MatrixXd x)
      : intervals(std::move(iv)), covariates(std::move(x)) {}
};

/// Expands per-participant baseline covariates onto the intervals.
CoxData attach_covariates(std::vector<RiskInterval> intervals,
                          const std::map<std::int64_t, Eigen::VectorXd>& baseline);

struct Derivatives {
  double loglik = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd information;
};

class InvalidDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularInformationError : public std::runtime_error {
 public:
  SingularInformationError(const std::string& what, std::string direction)
      : std::runtime_error(what), direction_(std::move(direction)) {}
  const std::string& direction() const noexcept { return direction_; }

 private:
  std::string direction_;
};

/// Event-time index over a dataset. Each interval is mapped to the
/// contiguous range of event times at which it is at risk
/// (tstart < t <= tstop). Rows that are constant over a sub-range
/// (unvaccinated, constant form, piecewise segments) and log-linear rows,
/// whose design is affine in t, are accumulated through difference arrays
/// of per-row moments; only spline rows are re-evaluated at each event.
class PartialLikelihood {
 public:
  PartialLikelihood(const CoxData& data, const ModelSpec& spec);

  /// Unpenalized log partial likelihood and, for order >= 1 / 2, score and
  /// observed information.
  Derivatives evaluate(const Eigen::VectorXd& params, int order = 2) const;

  /// Same with the penalty lambda/2 * gamma' P gamma applied.
  Derivatives evaluate_penalized(const Eigen::VectorXd& params, int order = 2) const;

  /// Replaces the smoothing parameter of a spline model; the event index
  /// and cached basis values are kept.
  void set_lambda(double lambda);

  int n_params() const noexcept { return dim_; }
  std::size_t n_events() const noexcept { return n_events_; }
  const ModelSpec& spec() const noexcept { return spec_; }

 private:
  struct SparseRow;
  struct BasisValues;
  void fill_row(std::size_t interval, double t, SparseRow& row) const;
  static void push_spline(const BasisValues& b, SparseRow& row);
  void push_covariates(std::size_t interval, SparseRow& row) const;

  const CoxData* data_;
  ModelSpec spec_;
  int dim_ = 0;
  int profile_dim_ = 0;
  Eigen::MatrixXd penalty_;
  std::size_t n_events_ = 0;

  std::vector<double> times_;                   // unique event times, grouped by stratum
  std::vector<std::size_t> death_offsets_;      // CSR into deaths_, size times_+1
  std::vector<std::size_t> deaths_;             // interval indices
  std::vector<std::size_t> lo_, hi_;            // per-interval event range [lo, hi)

  struct ConstantPiece {
    std::size_t row, lo, hi;
  };
  std::vector<ConstantPiece> constant_pieces_;  // row fixed on events [lo, hi)
  std::vector<std::size_t> affine_rows_;        // log-linear, s >= 0 on whole range
  std::vector<std::size_t> direct_rows_;        // evaluated at every event

  // Spline basis values of the direct rows at each of their event times
  // (first nonzero full-basis index and its four values); empty when the
  // model has no spline or the table would be too large.
  struct BasisValues {
    int first;
    std::array<double, PSplineBasis::kDegree + 1> values;
  };
  std::vector<BasisValues> basis_cache_;
  std::vector<std::size_t> basis_offsets_;      // per direct row into basis_cache_
  double t_ref_ = 0.0;
};

double log_partial_likelihood(const CoxData& data, const ModelSpec& spec,
                              const Eigen::VectorXd& params);
/// Score of the (penalized, when lambda > 0) objective.
Eigen::VectorXd score(const CoxData& data, const ModelSpec& spec, const Eigen::VectorXd& params);
/// Observed information of the (penalized) objective.
Eigen::MatrixXd information(const CoxData& data, const ModelSpec& spec,
                            const Eigen::VectorXd& params);

struct FitOptions {
  int max_iterations = 50;
  int max_halvings = 10;
  double loglik_tolerance = 1e-9;
  double score_tolerance = 1e-6;
};

struct FitResult {
  ModelSpec spec;
  std::vector<std::string> names;
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd covariance;           // inverse penalized information
  Eigen::MatrixXd sandwich_covariance;  // H_pen^-1 H H_pen^-1
  Eigen::MatrixXd information;          // unpenalized, at the optimum
  Eigen::VectorXd score;                // penalized objective, at the optimum
  double loglik = 0.0;                  // unpenalized
  double penalized_loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  double effective_df = 0.0;  // trace(H_pen^-1 H); parameter count if unpenalized
  double spline_df = 0.0;     // same trace over the spline block only (0 if none)
  std::size_t n_events = 0;
};

FitResult fit(const CoxData& data, const ModelSpec& spec, const FitOptions& options = {},
              std::optional<Eigen::VectorXd> init = std::nullopt);
FitResult fit(const PartialLikelihood& pl, const FitOptions& options = {},
              std::optional<Eigen::VectorXd> init = std::nullopt);

namespace reference {

/// Direct risk-set scan per event time: O(events x intervals). Kept as an
/// independent implementation for differential testing.
Derivatives evaluate_naive(const CoxData& data, const ModelSpec& spec,
                           const Eigen::VectorXd& params);

}  // namespace reference

}  // namespace vecross
