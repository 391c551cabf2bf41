#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mcicjm/model.hpp"

namespace mcicjm {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Streaming log-sum-exp with a running max pivot.
class LogSumExp {
 public:
  void add(double x) {
    if (x == kNegInf) return;
    if (x > max_) {
      sum_ = sum_ * std::exp(max_ - x) + 1.0;
      max_ = x;
    } else {
      sum_ += std::exp(x - max_);
    }
  }
  double value() const { return max_ == kNegInf ? kNegInf : max_ + std::log(sum_); }

 private:
  double max_ = kNegInf;
  double sum_ = 0.0;
};

// Log density of a scaled Student t: residual y - mean, scale sigma, kappa dof.
double longitudinal_logdensity(double y, double mean, double sigma, double kappa = 3.0);

// log A_j = log(S(t_{j-1}) - S(t_j)) from cumulative hazards at the two ends.
double log_interval_prob_from_cumhaz(double h_start, double h_end);

// Everything the survival factor needs for one subject.
struct SurvivalTerms {
  EventStatus delta = EventStatus::Censored;
  std::span<const double> log_interval_probs;  // log A_j, j = 1..N
  double cumhaz_prg_last = 0.0;                // H_prg(t_N)
  double cumhaz_trt_end = 0.0;                 // H_trt(terminal time)
  double log_hazard_trt_end = 0.0;             // log h_trt(T_trt), delta = Treatment only
};

enum class FactorKind { F1, F2, F3 };

struct SurvivalFactorBreakdown {
  FactorKind kind = FactorKind::F1;
  std::vector<double> interval_probs;  // A_j
  double log_no_progression = kNegInf;  // F1/F3 term for progression-free until t_N
  std::vector<double> log_missed_terms;  // one per interval j
  double log_factor = kNegInf;
  std::string diagnostic;  // set when the factor is impossible
};

// log F1 / F2 / F3 for the subject's delta; -inf for delta = 1 and rho = 0.
double survival_log_factor(const SurvivalTerms& terms, double rho);
SurvivalFactorBreakdown survival_factor_breakdown(const SurvivalTerms& terms, double rho);

// Generic-path evaluations, computing bases on the fly. j is 1-based.
double interval_progression_prob(const ModelSpec& spec, const ParameterState& params,
                                 const RandomVector& u, const PatientRecord& rec, int j);
SurvivalFactorBreakdown survival_breakdown(const ModelSpec& spec, const ParameterState& params,
                                           const RandomVector& u, const PatientRecord& rec);
double survival_loglik(const ModelSpec& spec, const ParameterState& params,
                       const RandomVector& u, const PatientRecord& rec);

// Per-subject quadrature layout with basis values frozen at every node. The
// nodes tile [0, terminal time] with one Gauss-Kronrod panel per smooth piece,
// split at biopsy times and hazard breakpoints.
class SubjectLayout {
 public:
  SubjectLayout(const ModelSpec& spec, const PatientRecord& rec);

  int n_nodes() const { return static_cast<int>(time_.size()); }
  int n_intervals() const { return static_cast<int>(mark_end_.size()); }
  int n_measurements() const { return static_cast<int>(y_.size()); }

  // Trajectory m(t) and m(t) - m(t - 1) at every node, and at T_trt when the
  // subject was treated.
  void trajectory(const FixedVector& beta, const RandomVector& u, std::span<double> m,
                  std::span<double> dm, double& m_event, double& dm_event) const;

  // Cumulative progression hazard at t_0..t_N (N + 1 values, first is 0).
  void cumhaz_progression(const Eigen::VectorXd& gamma_h0, double gamma, const Eigen::Vector2d& alpha,
                          std::span<const double> m, std::span<const double> dm,
                          std::span<double> out) const;
  // Cumulative treatment hazard at the terminal time; log hazard at T_trt.
  void cumhaz_treatment(const Eigen::VectorXd& gamma_h0, double gamma, const Eigen::Vector2d& alpha,
                        std::span<const double> m, std::span<const double> dm, double m_event,
                        double dm_event, double& cumhaz, double& log_hazard_end) const;

  // Residuals y - m(t) at the measurement times.
  void residuals(const FixedVector& beta, const RandomVector& u, std::span<double> out) const;
  // Random-effects design rows (1, C(t)) at measurement times.
  RandomVector z_row(int l) const;
  FixedVector w_row(int l) const;
  double y(int l) const { return y_[l]; }

  EventStatus delta() const { return delta_; }
  double log_psad() const { return log_psad_; }

 private:
  EventStatus delta_;
  double age_offset_;
  double log_psad_;
  std::vector<double> time_;
  std::vector<double> weight_;
  std::vector<double> ncs_now_;   // 3 per node
  std::vector<double> ncs_prev_;  // 3 per node
  std::array<std::vector<int>, 2> basis_first_;
  std::array<std::vector<double>, 2> basis_value_;  // stride basis_count_[k]
  std::array<int, 2> basis_count_{};
  std::vector<int> mark_end_;  // nodes strictly before t_j, j = 1..N
  int prg_end_ = 0;            // nodes up to t_N
  // Treatment event point.
  std::array<double, 3> ncs_event_now_{};
  std::array<double, 3> ncs_event_prev_{};
  int event_basis_first_ = 0;
  std::array<double, LocalBasis::kMaxOrder> event_basis_{};
  int event_basis_count_ = 0;
  // Measurements.
  std::vector<double> y_;
  std::vector<double> ncs_meas_;  // 3 per measurement
};

// Survival log-likelihood of one subject through the layout.
double survival_loglik(const SubjectLayout& layout, const ModelSpec& spec,
                       const ParameterState& params, const RandomVector& u);

// Log-prior pieces (Gamma is shape-rate, normals per PriorConfig).
double log_normal_density(double x, double mean, double variance);
double log_gamma_density(double x, double shape, double rate);
double log_inverse_wishart_density(const RandomMatrix& omega, double df, const RandomMatrix& scale);
double log_mvnormal_zero_mean(const RandomVector& u, const Eigen::LLT<RandomMatrix>& omega_llt);

double log_prior_beta(const ModelSpec& spec, const FixedVector& beta);
double log_prior_survival_block(const ModelSpec& spec, Cause k, const Eigen::VectorXd& gamma_h0,
                                double tau_h0, double gamma, const Eigen::Vector2d& alpha,
                                const PenaltyMatrix& penalty);
double log_prior_omega(const ModelSpec& spec, const RandomMatrix& omega, double tau_u);
double log_prior_rho(const ModelSpec& spec, double rho);
double log_prior(const ModelSpec& spec, const ParameterState& params);

struct SubjectContribution {
  std::string id;
  double longitudinal = 0.0;
  double survival = 0.0;
  double random_effects = 0.0;
  SurvivalFactorBreakdown breakdown;
};

struct PosteriorBreakdown {
  std::vector<SubjectContribution> subjects;
  double log_likelihood = 0.0;  // longitudinal + survival over subjects
  double log_random_effects = 0.0;
  double log_prior = 0.0;
  double log_posterior = 0.0;
};

PosteriorBreakdown evaluate_posterior(const ModelSpec& spec, const ParameterState& params,
                                      const std::vector<PatientRecord>& data);
double log_posterior(const ModelSpec& spec, const ParameterState& params,
                     const std::vector<PatientRecord>& data);

}  // namespace mcicjm
