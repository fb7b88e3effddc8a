#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace vecross {

/// Cubic B-spline basis for the decay component of the log hazard ratio,
/// with abscissa s = days since vaccination.
///
/// The underlying clamped B-spline set on equally spaced knots over
/// [0, s_max] has n_terms + 1 functions and sums to one. The first function
/// is the only one that is nonzero at s = 0; it is dropped, which both
/// removes the direction that is collinear with the intercept and leaves
/// the remaining n_terms columns centered (zero at s = 0). Evaluation
/// clamps s > s_max to s_max.
class PSplineBasis {
 public:
  static constexpr int kDegree = 3;

  PSplineBasis(double s_max, int n_terms);

  int n_terms() const noexcept { return n_terms_; }
  int n_full() const noexcept { return n_terms_ + 1; }
  double s_max() const noexcept { return s_max_; }
  const std::vector<double>& knots() const noexcept { return knots_; }
  const std::vector<double>& centering() const noexcept { return centering_; }

  /// Span index `first` and the kDegree+1 nonzero values of the full
  /// (uncentered) basis at s: functions first .. first+3.
  void full_nonzero(double s, int& first, std::array<double, kDegree + 1>& values) const;

  /// All n_terms + 1 uncentered basis functions at s.
  Eigen::VectorXd evaluate_full(double s) const;

  /// The n_terms centered model columns at s.
  Eigen::VectorXd evaluate(double s) const;

  /// Greville abscissae of the model columns: coefficients equal to these
  /// reproduce f(s) = s.
  Eigen::VectorXd greville() const;

  /// Second-order difference penalty on the n_terms model coefficients,
  /// with the dropped first coefficient held at 0. The constant lives in the
  /// unpenalized intercept, so the null space here is f(s) = s alone.
  Eigen::MatrixXd penalty() const;

 private:
  double clamp(double s) const;

  double s_max_;
  int n_terms_;
  std::vector<double> knots_;      // extended knot vector with replicated ends
  std::vector<double> centering_;  // P_l(0) for each model column
};

/// Order-2 difference matrix D, (n - 2) x n.
Eigen::MatrixXd difference_matrix(int n, int order = 2);

}  // namespace vecross
