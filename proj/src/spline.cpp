#include "mcicjm/spline.hpp"

#include <algorithm>
#include <cmath>

#include "mcicjm/error.hpp"

namespace mcicjm {
namespace {

// Span index i with knots[i] <= x < knots[i+1]; x at the final knot maps to
// the last non-empty span.
int find_span(std::span<const double> knots, int order, double x) {
  const int n_basis = static_cast<int>(knots.size()) - order;
  const int lo = order - 1;
  const int hi = n_basis;  // knots[hi] is the right boundary
  if (x >= knots[hi]) {
    int i = hi - 1;
    while (i > lo && knots[i] == knots[i + 1]) --i;
    return i;
  }
  auto it = std::upper_bound(knots.begin() + lo, knots.begin() + hi + 1, x);
  int i = static_cast<int>(it - knots.begin()) - 1;
  return std::clamp(i, lo, hi - 1);
}

// Nonzero basis values of the given degree at x (Piegl & Tiller, A2.2).
void basis_funs(std::span<const double> knots, int span, int degree, double x,
                double* out) {
  std::array<double, LocalBasis::kMaxOrder> left{};
  std::array<double, LocalBasis::kMaxOrder> right{};
  out[0] = 1.0;
  for (int j = 1; j <= degree; ++j) {
    left[j] = x - knots[span + 1 - j];
    right[j] = knots[span + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = out[r] / (right[r + 1] + left[j - r]);
      out[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    out[j] = saved;
  }
}

double quantile_type7(std::vector<double> sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

Eigen::VectorXd bspline_design(std::span<const double> knots, int order, double x,
                               int deriv) {
  if (order < 1 || knots.size() < static_cast<std::size_t>(2 * order)) {
    throw ConfigError("knot vector too short for the spline order");
  }
  if (deriv < 0) throw InputError("negative derivative order");
  const int n_basis = static_cast<int>(knots.size()) - order;
  if (deriv >= order) return Eigen::VectorXd::Zero(n_basis);

  const int span = find_span(knots, order, x);
  // Order-1 indicators over all knot intervals, then raise the order.
  const int n_int = static_cast<int>(knots.size()) - 1;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n_int);
  b[span] = 1.0;
  for (int m = 2; m <= order; ++m) {
    const int n_m = static_cast<int>(knots.size()) - m;
    Eigen::VectorXd next = Eigen::VectorXd::Zero(n_m);
    const bool differentiate = m > order - deriv;
    for (int j = 0; j < n_m; ++j) {
      const double d1 = knots[j + m - 1] - knots[j];
      const double d2 = knots[j + m] - knots[j + 1];
      double v = 0.0;
      if (differentiate) {
        if (d1 > 0.0) v += b[j] / d1;
        if (d2 > 0.0) v -= b[j + 1] / d2;
        v *= (m - 1);
      } else {
        if (d1 > 0.0) v += (x - knots[j]) / d1 * b[j];
        if (d2 > 0.0) v += (knots[j + m] - x) / d2 * b[j + 1];
      }
      next[j] = v;
    }
    b = std::move(next);
  }
  return b.head(n_basis);
}

NcsBasis::NcsBasis(double left, double right, std::vector<double> internal_knots)
    : left_(left), right_(right), internal_(std::move(internal_knots)) {
  if (!std::isfinite(left_) || !std::isfinite(right_) || !(left_ < right_)) {
    throw ConfigError("natural spline boundary knots must be finite and increasing");
  }
  for (std::size_t i = 0; i < internal_.size(); ++i) {
    const double k = internal_[i];
    if (!(k > left_ && k < right_)) {
      throw ConfigError("natural spline internal knots must lie strictly inside the boundary");
    }
    if (i > 0 && !(k > internal_[i - 1])) {
      throw ConfigError("natural spline internal knots must be strictly increasing");
    }
  }

  knots_.assign(4, left_);
  knots_.insert(knots_.end(), internal_.begin(), internal_.end());
  knots_.insert(knots_.end(), 4, right_);
  const int n_bs = static_cast<int>(knots_.size()) - 4;
  const int m = n_bs - 1;  // columns kept after dropping the intercept column

  // Boundary second-derivative constraints, transposed: m x 2.
  Eigen::MatrixXd a(m, 2);
  a.col(0) = bspline_design(knots_, 4, left_, 2).tail(m);
  a.col(1) = bspline_design(knots_, 4, right_, 2).tail(m);

  // LINPACK dqrdc2 Householder factorization (no pivoting needed here).
  std::array<double, 2> qraux{0.0, 0.0};
  for (int l = 0; l < 2; ++l) {
    double nrm = a.col(l).tail(m - l).norm();
    if (nrm == 0.0) continue;
    if (a(l, l) != 0.0) nrm = std::copysign(nrm, a(l, l));
    a.col(l).tail(m - l) /= nrm;
    a(l, l) += 1.0;
    for (int j = l + 1; j < 2; ++j) {
      const double t = -a.col(l).tail(m - l).dot(a.col(j).tail(m - l)) / a(l, l);
      a.col(j).tail(m - l) += t * a.col(l).tail(m - l);
    }
    qraux[l] = a(l, l);
    a(l, l) = -nrm;
  }
  // Q' applied to the identity, as dqrsl does for qr.qty().
  Eigen::MatrixXd qt = Eigen::MatrixXd::Identity(m, m);
  for (int c = 0; c < m; ++c) {
    Eigen::VectorXd y = qt.col(c);
    for (int j = 0; j < 2; ++j) {
      if (qraux[j] == 0.0) continue;
      Eigen::VectorXd u = a.col(j).tail(m - j);
      u[0] = qraux[j];
      const double t = -u.dot(y.tail(m - j)) / u[0];
      y.tail(m - j) += t * u;
    }
    qt.col(c) = y;
  }
  projection_ = qt.bottomRows(m - 2);

  left_slope_ = projection_ * bspline_design(knots_, 4, left_, 1).tail(m);
  right_value_ = projection_ * bspline_design(knots_, 4, right_, 0).tail(m);
  right_slope_ = projection_ * bspline_design(knots_, 4, right_, 1).tail(m);
}

NcsBasis NcsBasis::from_quantiles(std::span<const double> times, double left,
                                  double right, int df) {
  if (df < 1) throw ConfigError("natural spline df must be at least 1");
  std::vector<double> sorted(times.begin(), times.end());
  if (sorted.empty()) throw ConfigError("no times to place natural spline knots");
  std::sort(sorted.begin(), sorted.end());
  const int n_internal = df - 1;
  std::vector<double> internal;
  for (int i = 1; i <= n_internal; ++i) {
    internal.push_back(quantile_type7(sorted, static_cast<double>(i) / (n_internal + 1)));
  }
  return NcsBasis(left, right, std::move(internal));
}

void NcsBasis::project(const Eigen::VectorXd& row, std::span<double> out) const {
  const int m = static_cast<int>(projection_.cols());
  Eigen::Map<Eigen::VectorXd>(out.data(), df()) = projection_ * row.tail(m);
}

void NcsBasis::eval(double t, std::span<double> out) const {
  if (!std::isfinite(t)) throw InputError("natural spline evaluated at a non-finite time");
  if (out.size() < static_cast<std::size_t>(df())) {
    throw InputError("output span too small for natural spline basis");
  }
  const int d = df();
  if (t < left_) {
    for (int p = 0; p < d; ++p) out[p] = left_slope_[p] * (t - left_);
    return;
  }
  if (t > right_) {
    for (int p = 0; p < d; ++p) out[p] = right_value_[p] + right_slope_[p] * (t - right_);
    return;
  }
  // Local cubic evaluation, scattered into the dropped-first-column layout.
  const int span = find_span(knots_, 4, t);
  std::array<double, 4> local{};
  basis_funs(knots_, span, 3, t, local.data());
  const int first = span - 3;
  for (int p = 0; p < d; ++p) {
    double acc = 0.0;
    for (int r = 0; r < 4; ++r) {
      const int col = first + r - 1;  // column in the intercept-free basis
      if (col >= 0) acc += projection_(p, col) * local[r];
    }
    out[p] = acc;
  }
}

std::vector<double> NcsBasis::eval(double t) const {
  std::vector<double> out(df());
  eval(t, out);
  return out;
}

BsplineBasis::BsplineBasis(double lo, double hi, int n_basis, int degree)
    : lo_(lo), hi_(hi), n_basis_(n_basis), degree_(degree) {
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi)) {
    throw ConfigError("B-spline range must be finite and increasing");
  }
  if (degree < 0 || degree + 1 > LocalBasis::kMaxOrder) {
    throw ConfigError("unsupported B-spline degree");
  }
  const int distinct = n_basis - degree + 1;
  if (distinct < 2) throw ConfigError("too few B-spline basis functions for the degree");
  knots_.assign(degree, lo);
  for (int i = 0; i < distinct; ++i) {
    knots_.push_back(i + 1 == distinct ? hi : lo + (hi - lo) * i / (distinct - 1));
  }
  knots_.insert(knots_.end(), degree, hi);
}

BsplineBasis BsplineBasis::from_knot_count(double lo, double hi, int n_knots, int degree) {
  return BsplineBasis(lo, hi, n_knots + degree - 2, degree);
}

std::vector<double> BsplineBasis::breakpoints() const {
  std::vector<double> out;
  for (double k : knots_) {
    if (out.empty() || k != out.back()) out.push_back(k);
  }
  return out;
}

LocalBasis BsplineBasis::local(double t) const {
  LocalBasis lb;
  if (std::isnan(t)) throw InputError("B-spline evaluated at NaN");
  if (t < lo_) {
    t = lo_;
    lb.clamped = true;
  } else if (t > hi_) {
    t = hi_;
    lb.clamped = true;
  }
  const int order = degree_ + 1;
  const int span = find_span(knots_, order, t);
  basis_funs(knots_, span, degree_, t, lb.values.data());
  lb.first = span - degree_;
  lb.count = order;
  return lb;
}

std::vector<double> BsplineBasis::eval(double t, bool* clamped) const {
  const LocalBasis lb = local(t);
  std::vector<double> out(n_basis_, 0.0);
  for (int r = 0; r < lb.count; ++r) out[lb.first + r] = lb.values[r];
  if (clamped != nullptr) *clamped = lb.clamped;
  return out;
}

Eigen::MatrixXd difference_operator(int n_basis, int r) {
  if (r < 1 || n_basis <= r) {
    throw ConfigError("difference penalty needs n_basis > r >= 1");
  }
  // Rows of binomial coefficients with alternating signs.
  std::vector<double> coef(r + 1);
  coef[0] = 1.0;
  for (int k = 1; k <= r; ++k) {
    for (int m = k; m > 0; --m) coef[m] = coef[m - 1] - coef[m];
    coef[0] = -coef[0];
  }
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n_basis - r, n_basis);
  for (int i = 0; i < n_basis - r; ++i) {
    for (int m = 0; m <= r; ++m) d(i, i + m) = coef[m];
  }
  return d;
}

PenaltyMatrix difference_penalty(int n_basis, int r, double ridge, RankConvention rank) {
  const Eigen::MatrixXd d = difference_operator(n_basis, r);
  PenaltyMatrix pm;
  pm.order = r;
  pm.dimension = n_basis;
  pm.matrix.resize(n_basis, n_basis);
  // Entry-wise sums in a fixed order keep the result bitwise symmetric.
  for (int i = 0; i < n_basis; ++i) {
    for (int j = 0; j < n_basis; ++j) {
      double acc = 0.0;
      for (int k = 0; k < d.rows(); ++k) acc += d(k, i) * d(k, j);
      pm.matrix(i, j) = acc;
    }
    pm.matrix(i, i) += ridge;
  }
  pm.rank_term = rank == RankConvention::Deficient ? n_basis - r : n_basis;
  return pm;
}

}  // namespace mcicjm
