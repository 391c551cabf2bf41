#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mcicjm/quadrature.hpp"
#include "mcicjm/spline.hpp"

namespace mcicjm {

enum class Cause : int { Progression = 0, Treatment = 1 };
inline constexpr std::array<Cause, 2> kCauses{Cause::Progression, Cause::Treatment};
inline constexpr int index(Cause k) { return static_cast<int>(k); }
std::string_view cause_name(Cause k);  // "prg" / "trt"

enum class EventStatus : int { Censored = 0, Progression = 1, Treatment = 2 };

struct Measurement {
  double time = 0.0;  // years since start of surveillance
  double y = 0.0;     // log2(PSA + 1)
};

// One subject. biopsy_times holds t_0 = 0, t_1, ..., t_N; the last entry is the
// detection biopsy when delta = Progression.
struct PatientRecord {
  std::string id;
  double age = 62.0;
  double psad = 0.1;
  double log_psad = -2.302585092994046;
  std::vector<Measurement> measurements;
  std::vector<double> biopsy_times{0.0};
  EventStatus delta = EventStatus::Censored;
  double terminal_time = 0.0;

  int n_intervals() const { return static_cast<int>(biopsy_times.size()) - 1; }
  double last_biopsy() const { return biopsy_times.back(); }
  // End of treatment-free follow-up: T_cen, the detection biopsy, or T_trt.
  double treatment_free_time() const { return terminal_time; }

  // Throws ValidationError naming the subject and the broken invariant.
  void validate() const;
};

void validate_dataset(const std::vector<PatientRecord>& data);

inline constexpr int kNumFixed = 5;   // beta_0 .. beta_4
inline constexpr int kNumRandom = 4;  // u_0 .. u_3
using FixedVector = Eigen::Matrix<double, kNumFixed, 1>;
using FixedMatrix = Eigen::Matrix<double, kNumFixed, kNumFixed>;
using RandomVector = Eigen::Matrix<double, kNumRandom, 1>;
using RandomMatrix = Eigen::Matrix<double, kNumRandom, kNumRandom>;

struct ParameterState {
  FixedVector beta = FixedVector::Zero();
  std::vector<RandomVector> u;  // one per subject
  RandomMatrix omega = RandomMatrix::Identity();
  double tau_eps = 1.0;  // residual scale^-2 of the t3 errors
  double tau_u = 1.0;
  std::array<Eigen::VectorXd, 2> gamma_h0;  // log baseline hazard coefficients
  std::array<double, 2> tau_h0{1.0, 1.0};
  std::array<double, 2> gamma{0.0, 0.0};           // log(PSAD) effect
  std::array<Eigen::Vector2d, 2> alpha{Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};
  double rho = 1.0;
  std::vector<std::vector<double>> lambda;  // t-mixture weights, sampler-internal

  double sigma() const;
  // Throws InputError on any violated support constraint.
  void validate() const;
};

struct SensitivityMode {
  enum class Kind { Fixed, UniformPrior };
  Kind kind = Kind::Fixed;
  double value = 1.0;  // Fixed
  double lo = 0.0;     // UniformPrior
  double hi = 1.0;

  static SensitivityMode fixed(double rho);
  static SensitivityMode uniform(double lo, double hi);
  // "fixed:0.75" or "uniform:0.6,0.9".
  static SensitivityMode parse(std::string_view text);
  std::string to_string() const;
  void validate() const;
  bool is_fixed() const { return kind == Kind::Fixed; }
};

// Prior hyperparameters. Gamma(shape, rate) throughout; normal priors are
// N(0, variance) unless normal_is_variance is false, in which case the second
// argument is a precision.
struct PriorConfig {
  double beta_var = 100.0;
  double gamma_var = 100.0;
  double alpha_var = 100.0;
  bool normal_is_variance = true;
  double tau_eps_shape = 0.01;
  double tau_eps_rate = 0.01;
  double tau_u_shape = 0.5;
  double tau_u_rate = 0.01;
  double tau_h0_shape = 5.0;
  double tau_h0_rate = 0.5;
  double omega_df_extra = 1.0;  // df = n_u + omega_df_extra
  double omega_scale = 4.0;     // scale matrix = omega_scale / tau_u * I

  double normal_variance(double v) const { return normal_is_variance ? v : 1.0 / v; }
};

enum class IntervalProbMethod {
  ClosedForm,  // A_j = S(t_{j-1}) - S(t_j) from the quadrature cumulative hazard
  Nested,      // outer quadrature of h exp(-H) with inner cumulative hazards
};
IntervalProbMethod parse_interval_prob_method(std::string_view name);
std::string_view to_string(IntervalProbMethod m);

struct ModelSpec {
  NcsBasis ncs;
  std::array<BsplineBasis, 2> baseline;
  int penalty_order = 2;
  double penalty_ridge = 1e-6;
  RankConvention penalty_rank = RankConvention::Deficient;
  SensitivityMode sensitivity;
  PriorConfig priors;
  RuleKind quadrature = RuleKind::GK15;
  IntervalProbMethod interval_prob = IntervalProbMethod::ClosedForm;
  double age_center = 62.0;
  double t_dof = 3.0;

  const QuadratureRule& rule() const { return quadrature_rule(quadrature); }
  PenaltyMatrix penalty(Cause k) const;
  void validate() const;
};

ModelSpec make_model_spec(NcsBasis ncs, BsplineBasis baseline,
                          SensitivityMode sensitivity = SensitivityMode::fixed(1.0));

// Zero-effects state shaped for the spec and n_subjects.
ParameterState make_parameter_state(const ModelSpec& spec, std::size_t n_subjects);

// Design rows of the longitudinal model at time t: w = (1, C(t), age - center),
// z = (1, C(t)).
FixedVector fixed_design(const ModelSpec& spec, const PatientRecord& rec, double t);
RandomVector random_design(const ModelSpec& spec, double t);

double longitudinal_mean(const ModelSpec& spec, const ParameterState& params,
                         const RandomVector& u, const PatientRecord& rec, double t);

// alpha_1k m(t) + alpha_2k (m(t) - m(t - 1)); m(t - 1) for t < 1 uses the
// natural spline's linear extrapolation.
double functional_form(const ModelSpec& spec, const ParameterState& params,
                       const RandomVector& u, const PatientRecord& rec, double t, Cause k);

// log h0_k(t); t outside the basis range is clamped to the boundary.
double log_baseline_hazard(const ModelSpec& spec, const Eigen::VectorXd& gamma_h0,
                           Cause k, double t);

double log_hazard(const ModelSpec& spec, const ParameterState& params,
                  const RandomVector& u, const PatientRecord& rec, double t, Cause k);
double hazard(const ModelSpec& spec, const ParameterState& params,
              const RandomVector& u, const PatientRecord& rec, double t, Cause k);

// Sorted points in (from, to) where the hazard integrand is not smooth:
// baseline knots of both causes and the natural spline knots, shifted by one
// year for the m(t - 1) term.
std::vector<double> hazard_breakpoints(const ModelSpec& spec, double from, double to);

// H_k(t) = integral of the hazard over [0, t], one Gauss-Kronrod panel per
// smooth piece.
double cumulative_hazard(const ModelSpec& spec, const ParameterState& params,
                         const RandomVector& u, const PatientRecord& rec, double t, Cause k);

}  // namespace mcicjm
