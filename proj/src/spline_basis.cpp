#include "vecross/spline_basis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vecross {

PSplineBasis::PSplineBasis(double s_max, int n_terms) : s_max_(s_max), n_terms_(n_terms) {
  if (!(s_max > 0.0) || !std::isfinite(s_max)) {
    throw std::invalid_argument("spline basis: s_max must be positive and finite");
  }
  if (n_terms < 4) throw std::invalid_argument("spline basis: need at least 4 terms");

  // n_full = intervals + degree  =>  intervals = n_terms + 1 - 3.
  const int intervals = n_terms + 1 - kDegree;
  knots_.reserve(static_cast<std::size_t>(intervals + 1 + 2 * kDegree));
  for (int i = 0; i < kDegree; ++i) knots_.push_back(0.0);
  for (int i = 0; i <= intervals; ++i) knots_.push_back(s_max * i / intervals);
  for (int i = 0; i < kDegree; ++i) knots_.push_back(s_max);

  centering_.resize(static_cast<std::size_t>(n_terms));
  const Eigen::VectorXd at_zero = evaluate_full(0.0);
  for (int l = 0; l < n_terms; ++l) centering_[static_cast<std::size_t>(l)] = at_zero(l + 1);
}

double PSplineBasis::clamp(double s) const {
  if (s < 0.0) throw std::domain_error("spline basis: negative time since vaccination");
  return std::min(s, s_max_);
}

void PSplineBasis::full_nonzero(double s, int& first,
                                std::array<double, kDegree + 1>& values) const {
  s = clamp(s);
  const int n = n_full();
  // Span: knots_[span] <= s < knots_[span + 1], span in [degree, n - 1].
  int span;
  if (s >= s_max_) {
    span = n - 1;
  } else {
    auto it = std::upper_bound(knots_.begin() + kDegree, knots_.begin() + n, s);
    span = static_cast<int>(it - knots_.begin()) - 1;
  }
  // Cox-de Boor triangular scheme.
  std::array<double, kDegree + 1> left{}, right{};
  values[0] = 1.0;
  for (int j = 1; j <= kDegree; ++j) {
    left[j] = s - knots_[span + 1 - j];
    right[j] = knots_[span + j] - s;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom > 0.0 ? values[r] / denom : 0.0;
      values[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    values[j] = saved;
  }
  first = span - kDegree;
}

Eigen::VectorXd PSplineBasis::evaluate_full(double s) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n_full());
  int first = 0;
  std::array<double, kDegree + 1> values{};
  full_nonzero(s, first, values);
  for (int j = 0; j <= kDegree; ++j) out(first + j) = values[j];
  return out;
}

Eigen::VectorXd PSplineBasis::evaluate(double s) const {
  const Eigen::VectorXd full = evaluate_full(s);
  Eigen::VectorXd out(n_terms_);
  for (int l = 0; l < n_terms_; ++l) out(l) = full(l + 1) - centering_[static_cast<std::size_t>(l)];
  return out;
}

Eigen::VectorXd PSplineBasis::greville() const {
  Eigen::VectorXd xi(n_terms_);
  for (int l = 0; l < n_terms_; ++l) {
    const auto j = static_cast<std::size_t>(l + 1);
    xi(l) = (knots_[j + 1] + knots_[j + 2] + knots_[j + 3]) / kDegree;
  }
  return xi;
}

// Second differences taken against the Greville abscissae rather than the
// coefficient index. The two agree on interior knots; near the replicated
// end knots the abscissae bunch up, and index differences would penalize a
// straight line.
// Second differences of the full coefficient vector (dropped first
// coefficient fixed at 0), taken against the Greville abscissae rather than
// the index. The two agree on interior knots; near the replicated end knots
// the abscissae bunch up and index differences would bend a straight line.
Eigen::MatrixXd PSplineBasis::penalty() const {
  const int n = n_full();
  Eigen::VectorXd xi(n);
  xi(0) = 0.0;
  xi.tail(n_terms_) = greville();
  const double h = knots_[kDegree + 1] - knots_[kDegree];
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n - 2, n);
  for (int r = 0; r + 2 < n; ++r) {
    const double a = h / (xi(r + 1) - xi(r));
    const double b = h / (xi(r + 2) - xi(r + 1));
    d(r, r) = a;
    d(r, r + 1) = -(a + b);
    d(r, r + 2) = b;
  }
  const Eigen::MatrixXd full = d.transpose() * d;
  return full.bottomRightCorner(n_terms_, n_terms_);
}

Eigen::MatrixXd difference_matrix(int n, int order) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Identity(n, n);
  for (int k = 0; k < order; ++k) {
    Eigen::MatrixXd next(d.rows() - 1, n);
    for (Eigen::Index r = 0; r + 1 < d.rows(); ++r) next.row(r) = d.row(r + 1) - d.row(r);
    d = next;
  }
  return d;
}

}  // namespace vecross
