#include "mcicjm/quadrature.hpp"

namespace mcicjm {
namespace {

QuadratureRule make_gk7() {
  // Kronrod extension of the 3-point Gauss rule.
  const double x1 = 0.960491268708020283423507092629080;
  const double x2 = 0.774596669241483377035853079956480;
  const double x3 = 0.434243749346802558002071502844628;
  const double k1 = 0.104656226026467265193823857192073;
  const double k2 = 0.268488089868333440728569280666710;
  const double k3 = 0.401397414775962222905051818618432;
  const double k0 = 0.450916538658474142345110087045571;
  const double g2 = 5.0 / 9.0;
  const double g0 = 8.0 / 9.0;
  return {RuleKind::GK7,
          {-x1, -x2, -x3, 0.0, x3, x2, x1},
          {k1, k2, k3, k0, k3, k2, k1},
          {0.0, g2, 0.0, g0, 0.0, g2, 0.0}};
}

QuadratureRule make_gk15() {
  // QUADPACK qk15 abscissae and weights (Gauss 7 embedded).
  const double x[8] = {0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                       0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                       0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                       0.207784955007898467600689403773245, 0.0};
  const double wk[8] = {0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                        0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                        0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                        0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
  const double wg[8] = {0.0, 0.129484966168869693270611432679082,
                        0.0, 0.279705391489276667901467771423780,
                        0.0, 0.381830050505118944950369775488975,
                        0.0, 0.417959183673469387755102040816327};
  QuadratureRule r{RuleKind::GK15, {}, {}, {}};
  for (int i = 0; i < 7; ++i) {
    r.nodes.push_back(-x[i]);
    r.weights_kronrod.push_back(wk[i]);
    r.weights_gauss.push_back(wg[i]);
  }
  r.nodes.push_back(0.0);
  r.weights_kronrod.push_back(wk[7]);
  r.weights_gauss.push_back(wg[7]);
  for (int i = 6; i >= 0; --i) {
    r.nodes.push_back(x[i]);
    r.weights_kronrod.push_back(wk[i]);
    r.weights_gauss.push_back(wg[i]);
  }
  return r;
}

}  // namespace

const QuadratureRule& quadrature_rule(RuleKind kind) {
  static const QuadratureRule gk7 = make_gk7();
  static const QuadratureRule gk15 = make_gk15();
  return kind == RuleKind::GK7 ? gk7 : gk15;
}

RuleKind parse_rule_kind(std::string_view name) {
  if (name == "gk15") return RuleKind::GK15;
  if (name == "gk7") return RuleKind::GK7;
  throw ConfigError("unknown quadrature rule '" + std::string(name) + "' (expected gk15 or gk7)");
}

std::string_view to_string(RuleKind kind) {
  return kind == RuleKind::GK7 ? "gk7" : "gk15";
}

}  // namespace mcicjm
