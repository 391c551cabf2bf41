#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mcicjm/error.hpp"

namespace mcicjm {

enum class RuleKind { GK7, GK15 };

// Gauss-Kronrod pair on [-1, 1]. weights_gauss is zero at Kronrod-only nodes.
struct QuadratureRule {
  RuleKind kind;
  std::vector<double> nodes;
  std::vector<double> weights_kronrod;
  std::vector<double> weights_gauss;
};

const QuadratureRule& quadrature_rule(RuleKind kind);
RuleKind parse_rule_kind(std::string_view name);
std::string_view to_string(RuleKind kind);

struct IntegralEstimate {
  double value = 0.0;
  double error = 0.0;  // |Kronrod - embedded Gauss|
};

// Thrown when the integrand is not finite at a node.
class EvaluationError : public NumericalError {
 public:
  EvaluationError(const std::string& what, double where)
      : NumericalError(what), location(where) {}
  double location;
};

// Single-panel Gauss-Kronrod integral of f over [a, b].
template <class F>
IntegralEstimate integrate(const QuadratureRule& rule, F&& f, double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b)) {
    throw InputError("integration limits must be finite");
  }
  if (a > b) throw InputError("integration requires a <= b");
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  double kronrod = 0.0;
  double gauss = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double x = mid + half * rule.nodes[i];
    const double fx = f(x);
    if (!std::isfinite(fx)) {
      std::ostringstream msg;
      msg << "integrand is not finite at t = " << x;
      throw EvaluationError(msg.str(), x);
    }
    kronrod += rule.weights_kronrod[i] * fx;
    gauss += rule.weights_gauss[i] * fx;
  }
  return {kronrod * half, std::abs(kronrod - gauss) * half};
}

// Integrates outer(x, I(x)) over [a, b] where I(x) is the inner integral of
// `inner` from `origin` to x, itself one Gauss-Kronrod panel per outer node.
// With inner = h and outer(x, H) = h(x) exp(-H) this is the probability that a
// first event with hazard h falls in [a, b].
template <class Outer, class Inner>
double integrate_nested(const QuadratureRule& rule, Outer&& outer, Inner&& inner,
                        double a, double b, double origin = 0.0) {
  auto integrand = [&](double x) {
    const double inner_value = integrate(rule, inner, origin, x).value;
    return outer(x, inner_value);
  };
  return integrate(rule, integrand, a, b).value;
}

}  // namespace mcicjm
