#pragma once

#include <string>
#include <vector>

#include "mcicjm/model.hpp"
#include "mcicjm/sampler.hpp"

namespace mcicjm {

// Observed competing-risks outcome: cause 0 censored, 1 progression, 2 treatment.
struct CompetingObservation {
  double time = 0.0;
  int cause = 0;
};

// Detection times stand in for progression times (naive observed-data view).
std::vector<CompetingObservation> competing_observations(const std::vector<PatientRecord>& data);

struct CifCurve {
  Cause cause = Cause::Progression;
  std::vector<double> times;   // distinct observed times
  std::vector<double> values;  // CIF just after each time
  std::vector<int> at_risk;    // risk set just before each time

  // Right-continuous step value at t.
  double at(double t) const;
};

struct AalenJohansenResult {
  CifCurve progression;
  CifCurve treatment;
  std::vector<double> survival;  // all-cause event-free probability, same grid
};

// Events before censorings at tied times. Throws InputError on empty input,
// negative times or unknown causes.
AalenJohansenResult aalen_johansen(const std::vector<CompetingObservation>& data);

// All-cause Kaplan-Meier on the distinct observed times.
struct KaplanMeierCurve {
  std::vector<double> times;
  std::vector<double> survival;
};
KaplanMeierCurve kaplan_meier(const std::vector<CompetingObservation>& data);

struct BiasValue {
  double value = 0.0;
  bool absolute = false;  // truth was 0: value is estimate - truth
};
BiasValue relative_bias(double estimate, double truth);

// Posterior summary of one parameter in one replicate.
struct ReplicateEstimate {
  double mean = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
};

struct IntervalMetrics {
  int n_replicates = 0;
  double mean_estimate = 0.0;
  BiasValue bias;          // of the mean posterior mean
  double ci_width = 0.0;   // mean of q97.5 - q2.5
  double coverage = 0.0;   // share of closed intervals containing the truth
  double mse = 0.0;        // mean squared error of the posterior means
};
IntervalMetrics interval_metrics(const std::vector<ReplicateEstimate>& reps, double truth);

// 0.5, 0.6, ..., 10.0 years.
std::vector<double> log_hazard_grid();

struct HazardGridReport {
  Cause cause = Cause::Progression;
  std::vector<double> grid;
  std::vector<double> truth;            // true log h0
  std::vector<double> estimate;         // mean over replicates of the posterior mean
  std::vector<double> relative_bias;    // (estimate - truth) / truth
  std::vector<double> ci_width;         // mean over replicates
  double mean_truth = 0.0;
  double mean_estimate = 0.0;
  double mean_relative_bias = 0.0;
  double mean_ci_width = 0.0;
};

struct ParameterReport {
  std::string name;
  double truth = 0.0;
  IntervalMetrics metrics;
};

struct EvaluationReport {
  int n_replicates = 0;
  std::vector<ParameterReport> parameters;
  HazardGridReport hazards[2];
};

// Compares replicate posteriors with the generating values. Hyperparameters
// without a generating value (tau_u, tau_h0) are skipped. Throws
// ValidationError when a posterior's parameter names do not match the spec.
EvaluationReport evaluate_replicates(const ModelSpec& spec, const ParameterState& truth,
                                     const std::vector<PosteriorSamples>& posteriors);

// Posterior log h0 over a grid: mean and 2.5/97.5% quantiles per point.
struct HazardBand {
  std::vector<double> mean, q025, q975;
};
HazardBand posterior_log_hazard(const ModelSpec& spec, const PosteriorSamples& post, Cause k,
                                const std::vector<double>& grid);

}  // namespace mcicjm
