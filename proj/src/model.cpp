#include "mcicjm/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "mcicjm/error.hpp"

namespace mcicjm {

std::string_view cause_name(Cause k) {
  return k == Cause::Progression ? "prg" : "trt";
}

void PatientRecord::validate() const {
  auto fail = [&](const std::string& what) {
    throw ValidationError("subject '" + id + "': " + what);
  };
  if (id.empty()) throw ValidationError("subject with empty id");
  if (!std::isfinite(age)) fail("age is not finite");
  if (!(psad > 0.0) || !std::isfinite(psad)) fail("PSA density must be positive");
  if (!std::isfinite(log_psad)) fail("log PSA density is not finite");
  if (biopsy_times.empty()) fail("no biopsy times");
  if (biopsy_times.front() != 0.0) fail("first biopsy time must be 0");
  for (std::size_t j = 1; j < biopsy_times.size(); ++j) {
    if (!std::isfinite(biopsy_times[j]) || !(biopsy_times[j] > biopsy_times[j - 1])) {
      fail("biopsy times must be strictly increasing");
    }
  }
  if (!std::isfinite(terminal_time)) fail("terminal time is not finite");
  switch (delta) {
    case EventStatus::Progression:
      if (n_intervals() < 1) fail("progression detected without a follow-up biopsy");
      if (terminal_time != last_biopsy()) fail("progression terminal time must equal the last biopsy");
      break;
    case EventStatus::Treatment:
    case EventStatus::Censored:
      if (terminal_time < last_biopsy()) fail("terminal time precedes the last biopsy");
      break;
    default:
      fail("event indicator must be 0, 1 or 2");
  }
  for (const auto& m : measurements) {
    if (!std::isfinite(m.time) || !std::isfinite(m.y)) fail("non-finite measurement");
    if (m.time < 0.0 || m.time > terminal_time) fail("measurement outside [0, terminal time]");
  }
}

void validate_dataset(const std::vector<PatientRecord>& data) {
  if (data.empty()) throw ValidationError("dataset has no subjects");
  std::set<std::string> ids;
  for (const auto& rec : data) {
    rec.validate();
    if (!ids.insert(rec.id).second) throw ValidationError("duplicate subject id '" + rec.id + "'");
  }
}

double ParameterState::sigma() const { return 1.0 / std::sqrt(tau_eps); }

void ParameterState::validate() const {
  if (!(tau_eps > 0.0) || !(tau_u > 0.0)) throw InputError("precisions must be positive");
  for (double t : tau_h0) {
    if (!(t > 0.0)) throw InputError("smoothing parameters must be positive");
  }
  if (!(rho >= 0.0 && rho <= 1.0)) throw InputError("sensitivity must lie in [0, 1]");
  Eigen::LLT<RandomMatrix> llt(omega);
  if (llt.info() != Eigen::Success || !omega.isApprox(omega.transpose())) {
    throw InputError("random-effects covariance must be symmetric positive definite");
  }
  for (const auto& row : lambda) {
    for (double l : row) {
      if (!(l > 0.0)) throw InputError("mixture weights must be positive");
    }
  }
}

SensitivityMode SensitivityMode::fixed(double rho) {
  SensitivityMode m;
  m.kind = Kind::Fixed;
  m.value = rho;
  m.validate();
  return m;
}

SensitivityMode SensitivityMode::uniform(double lo, double hi) {
  SensitivityMode m;
  m.kind = Kind::UniformPrior;
  m.lo = lo;
  m.hi = hi;
  m.validate();
  return m;
}

SensitivityMode SensitivityMode::parse(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw ConfigError("sensitivity must look like fixed:0.75 or uniform:0.6,0.9");
  }
  const std::string kind(text.substr(0, colon));
  const std::string rest(text.substr(colon + 1));
  try {
    if (kind == "fixed") {
      std::size_t used = 0;
      const double v = std::stod(rest, &used);
      if (used != rest.size()) throw ConfigError("trailing characters");
      return fixed(v);
    }
    if (kind == "uniform") {
      const auto comma = rest.find(',');
      if (comma == std::string::npos) throw ConfigError("uniform needs lo,hi");
      return uniform(std::stod(rest.substr(0, comma)), std::stod(rest.substr(comma + 1)));
    }
  } catch (const std::logic_error&) {
    throw ConfigError("malformed sensitivity '" + std::string(text) + "'");
  } catch (const ConfigError& e) {
    throw ConfigError("malformed sensitivity '" + std::string(text) + "': " + e.what());
  }
  throw ConfigError("unknown sensitivity mode '" + kind + "'");
}

std::string SensitivityMode::to_string() const {
  std::ostringstream os;
  os.precision(17);
  if (kind == Kind::Fixed) {
    os << "fixed:" << value;
  } else {
    os << "uniform:" << lo << "," << hi;
  }
  return os.str();
}

void SensitivityMode::validate() const {
  if (kind == Kind::Fixed) {
    if (!(value > 0.0 && value <= 1.0)) throw ConfigError("fixed sensitivity must lie in (0, 1]");
  } else if (!(lo >= 0.0 && lo < hi && hi <= 1.0)) {
    throw ConfigError("uniform sensitivity prior needs 0 <= lo < hi <= 1");
  }
}

IntervalProbMethod parse_interval_prob_method(std::string_view name) {
  if (name == "closed_form") return IntervalProbMethod::ClosedForm;
  if (name == "nested") return IntervalProbMethod::Nested;
  throw ConfigError("unknown interval probability method '" + std::string(name) + "'");
}

std::string_view to_string(IntervalProbMethod m) {
  return m == IntervalProbMethod::ClosedForm ? "closed_form" : "nested";
}

PenaltyMatrix ModelSpec::penalty(Cause k) const {
  return difference_penalty(baseline[index(k)].n_basis(), penalty_order, penalty_ridge,
                            penalty_rank);
}

void ModelSpec::validate() const {
  sensitivity.validate();
  if (ncs.df() != kNumRandom - 1) {
    throw ConfigError("the longitudinal model needs a natural spline with 3 degrees of freedom");
  }
  for (const auto& b : baseline) {
    if (b.n_basis() <= penalty_order) throw ConfigError("baseline basis too small for the penalty order");
  }
  if (!(t_dof > 0.0)) throw ConfigError("t degrees of freedom must be positive");
  if (!(penalty_ridge >= 0.0)) throw ConfigError("penalty ridge must be nonnegative");
}

ModelSpec make_model_spec(NcsBasis ncs, BsplineBasis baseline, SensitivityMode sensitivity) {
  ModelSpec spec;
  spec.ncs = std::move(ncs);
  spec.baseline = {baseline, baseline};
  spec.sensitivity = sensitivity;
  spec.validate();
  return spec;
}

ParameterState make_parameter_state(const ModelSpec& spec, std::size_t n_subjects) {
  ParameterState p;
  p.u.assign(n_subjects, RandomVector::Zero());
  for (Cause k : kCauses) {
    p.gamma_h0[index(k)] = Eigen::VectorXd::Zero(spec.baseline[index(k)].n_basis());
  }
  p.rho = spec.sensitivity.is_fixed() ? spec.sensitivity.value
                                      : 0.5 * (spec.sensitivity.lo + spec.sensitivity.hi);
  return p;
}

FixedVector fixed_design(const ModelSpec& spec, const PatientRecord& rec, double t) {
  std::array<double, 3> c{};
  spec.ncs.eval(t, c);
  FixedVector w;
  w << 1.0, c[0], c[1], c[2], rec.age - spec.age_center;
  return w;
}

RandomVector random_design(const ModelSpec& spec, double t) {
  std::array<double, 3> c{};
  spec.ncs.eval(t, c);
  RandomVector z;
  z << 1.0, c[0], c[1], c[2];
  return z;
}

double longitudinal_mean(const ModelSpec& spec, const ParameterState& params,
                         const RandomVector& u, const PatientRecord& rec, double t) {
  std::array<double, 3> c{};
  spec.ncs.eval(t, c);
  const auto& b = params.beta;
  return b[0] + u[0] + (b[1] + u[1]) * c[0] + (b[2] + u[2]) * c[1] + (b[3] + u[3]) * c[2] +
         b[4] * (rec.age - spec.age_center);
}

double functional_form(const ModelSpec& spec, const ParameterState& params,
                       const RandomVector& u, const PatientRecord& rec, double t, Cause k) {
  const double m_now = longitudinal_mean(spec, params, u, rec, t);
  const double m_prev = longitudinal_mean(spec, params, u, rec, t - 1.0);
  const auto& a = params.alpha[index(k)];
  return a[0] * m_now + a[1] * (m_now - m_prev);
}

double log_baseline_hazard(const ModelSpec& spec, const Eigen::VectorXd& gamma_h0, Cause k,
                           double t) {
  const LocalBasis lb = spec.baseline[index(k)].local(t);
  double acc = 0.0;
  for (int r = 0; r < lb.count; ++r) acc += gamma_h0[lb.first + r] * lb.values[r];
  return acc;
}

double log_hazard(const ModelSpec& spec, const ParameterState& params, const RandomVector& u,
                  const PatientRecord& rec, double t, Cause k) {
  return log_baseline_hazard(spec, params.gamma_h0[index(k)], k, t) +
         params.gamma[index(k)] * rec.log_psad + functional_form(spec, params, u, rec, t, k);
}

double hazard(const ModelSpec& spec, const ParameterState& params, const RandomVector& u,
              const PatientRecord& rec, double t, Cause k) {
  return std::exp(log_hazard(spec, params, u, rec, t, k));
}

std::vector<double> hazard_breakpoints(const ModelSpec& spec, double from, double to) {
  std::vector<double> pts;
  for (const auto& b : spec.baseline) {
    for (double x : b.breakpoints()) pts.push_back(x);
  }
  std::vector<double> ncs_knots = spec.ncs.internal_knots();
  ncs_knots.push_back(spec.ncs.left());
  ncs_knots.push_back(spec.ncs.right());
  for (double x : ncs_knots) {
    pts.push_back(x);
    pts.push_back(x + 1.0);
  }
  std::vector<double> out;
  for (double x : pts) {
    if (x > from && x < to) out.push_back(x);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double cumulative_hazard(const ModelSpec& spec, const ParameterState& params,
                         const RandomVector& u, const PatientRecord& rec, double t, Cause k) {
  if (!(t >= 0.0) || !std::isfinite(t)) throw InputError("cumulative hazard needs finite t >= 0");
  if (t == 0.0) return 0.0;
  const auto& rule = spec.rule();
  auto h = [&](double s) { return hazard(spec, params, u, rec, s, k); };
  double total = 0.0;
  double start = 0.0;
  for (double bp : hazard_breakpoints(spec, 0.0, t)) {
    total += integrate(rule, h, start, bp).value;
    start = bp;
  }
  total += integrate(rule, h, start, t).value;
  return total;
}

}  // namespace mcicjm
