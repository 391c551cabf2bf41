#pragma once

#include <array>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace mcicjm {

// Values (deriv = 0) or deriv-th derivatives of every B-spline of the given
// order on a full knot vector. x equal to the last knot belongs to the last
// non-empty span.
Eigen::VectorXd bspline_design(std::span<const double> knots, int order, double x,
                               int deriv = 0);

// Natural cubic spline basis without intercept, constructed the way R's
// splines::ns() does it: cubic B-splines on the augmented knot vector, first
// column dropped, then projected onto the null space of the boundary
// second-derivative constraints via a Householder QR. All basis functions are
// zero at the left boundary knot and linear outside [left, right].
class NcsBasis {
 public:
  NcsBasis() : NcsBasis(0.0, 1.0, {1.0 / 3.0, 2.0 / 3.0}) {}
  NcsBasis(double left, double right, std::vector<double> internal_knots);

  // Internal knots at equally spaced quantiles (R type 7) of `times`, which is
  // what ns(x, df) does when the knots are not given.
  static NcsBasis from_quantiles(std::span<const double> times, double left,
                                 double right, int df = 3);

  int df() const { return static_cast<int>(internal_.size()) + 1; }
  double left() const { return left_; }
  double right() const { return right_; }
  const std::vector<double>& internal_knots() const { return internal_; }

  // Writes df() values into out.
  void eval(double t, std::span<double> out) const;
  std::vector<double> eval(double t) const;

 private:
  void project(const Eigen::VectorXd& bspline_row, std::span<double> out) const;

  double left_;
  double right_;
  std::vector<double> internal_;
  std::vector<double> knots_;
  Eigen::MatrixXd projection_;  // df x (n_bspline - 1)
  Eigen::VectorXd left_slope_;
  Eigen::VectorXd right_value_;
  Eigen::VectorXd right_slope_;
};

// Nonzero block of a B-spline basis at one point.
struct LocalBasis {
  static constexpr int kMaxOrder = 6;
  int first = 0;  // index of values[0] in the full basis
  int count = 0;  // degree + 1
  std::array<double, kMaxOrder> values{};
  bool clamped = false;  // t was outside [lo, hi] and was moved to the boundary
};

// Clamped B-spline basis with equally spaced distinct knots on [lo, hi].
class BsplineBasis {
 public:
  BsplineBasis() : BsplineBasis(0.0, 1.0, 4, 3) {}
  BsplineBasis(double lo, double hi, int n_basis, int degree = 3);

  // "A knots" in the hazard-model sense: n_basis = n_knots + degree - 2, so 11
  // knots give 12 cubic basis functions and 4 knots give 5.
  static BsplineBasis from_knot_count(double lo, double hi, int n_knots, int degree = 3);

  int n_basis() const { return n_basis_; }
  int degree() const { return degree_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  const std::vector<double>& knots() const { return knots_; }
  // Distinct knots, including both boundaries.
  std::vector<double> breakpoints() const;

  LocalBasis local(double t) const;
  std::vector<double> eval(double t, bool* clamped = nullptr) const;

 private:
  double lo_;
  double hi_;
  int n_basis_;
  int degree_;
  std::vector<double> knots_;
};

enum class RankConvention {
  Deficient,  // rank of the unridged difference penalty: n_basis - r
  Full,       // rank of the ridged matrix: n_basis
};

struct PenaltyMatrix {
  int order = 2;
  int dimension = 0;
  Eigen::MatrixXd matrix;  // Delta_r' Delta_r + ridge * I
  int rank_term = 0;
};

// r-th order difference matrix, (n_basis - r) x n_basis.
Eigen::MatrixXd difference_operator(int n_basis, int r);

PenaltyMatrix difference_penalty(int n_basis, int r, double ridge = 1e-6,
                                 RankConvention rank = RankConvention::Deficient);

}  // namespace mcicjm
