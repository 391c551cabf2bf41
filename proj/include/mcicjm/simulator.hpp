#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mcicjm/model.hpp"
#include "mcicjm/random.hpp"

namespace mcicjm {

// Visit schedule. Biopsies at the listed times, then every biopsy_interval
// years after the last one; PSA every psa_interval years from time 0.
struct ScheduleConfig {
  double psa_interval = 0.25;
  double psa_jitter = 0.04;
  std::vector<double> biopsy_start{1.0, 2.0};
  double biopsy_interval = 2.0;
  double biopsy_jitter = 0.1;
};

struct CovariateConfig {
  double age_mean = 62.0;
  double age_sd = 6.0;
  double age_min = 40.0;
  double age_max = 85.0;
  double log_psad_mean = -2.302585092994046;  // log 0.1
  double log_psad_sd = 0.5;
};

// Generating model: spec (bases), parameter values, sensitivity and the
// observation process.
struct SimTruth {
  ModelSpec spec;
  ParameterState params;  // u and lambda unused
  double rho_true = 0.75;
  ScheduleConfig schedule;
  CovariateConfig covariates;
  double horizon = 12.5;
  double dropout_rate = 0.0;  // exponential dropout, per year
  int n_subjects = 500;

  // Throws ConfigError.
  void validate() const;
};

// Posterior-mean parameter set of the reference fit, with the calibrated
// dropout rate.
SimTruth default_truth();

struct SubjectLatents {
  RandomVector u = RandomVector::Zero();
  double age = 62.0;
  double log_psad = -2.302585092994046;
};

SubjectLatents draw_subject_latents(const SimTruth& truth, Rng& rng);

inline constexpr double kNever = std::numeric_limits<double>::infinity();

struct EventDraw {
  double time = kNever;  // kNever when no event before the horizon
  std::optional<Cause> cause;
};

// Cumulative hazards of one subject on [0, horizon], tabulated once.
class HazardProfile {
 public:
  HazardProfile(const SimTruth& truth, const SubjectLatents& latents);

  double hazard(double t, Cause k) const;
  double cumulative(double t, Cause k) const;
  double cumulative_all(double t) const { return cumulative(t, Cause::Progression) + cumulative(t, Cause::Treatment); }
  // Smallest t in [0, horizon] with H(t) = target, H the all-cause hazard or
  // that of one cause; kNever when H(horizon) < target.
  double solve(double target, std::optional<Cause> k = std::nullopt) const;

 private:
  double piece_integral(std::size_t piece, double t, std::optional<Cause> k) const;
  double cumulative(double t, std::optional<Cause> k) const;

  const SimTruth* truth_;
  PatientRecord covariates_;
  RandomVector u_;
  std::vector<double> grid_;               // piece boundaries, grid_[0] = 0
  std::array<std::vector<double>, 2> cum_;  // H_k at the boundaries
};

// All-cause inverse transform with U ~ Unif(0, 1) and a cause draw in
// proportion to the hazards at the event time.
EventDraw invert_event_time(const HazardProfile& profile, Rng& rng);

// Latent truth kept alongside each observed record.
struct LatentTruth {
  std::string id;
  RandomVector u = RandomVector::Zero();
  double age = 0.0;
  double log_psad = 0.0;
  double progression_time = kNever;
  double treatment_time = kNever;
  double censoring_time = kNever;
  std::optional<Cause> first_cause;
  int missed_biopsies = 0;  // negative biopsies after the true progression
};

// Latent event times of one subject: the first event from the all-cause
// inversion, then the treatment time beyond a first progression.
LatentTruth draw_latent_events(const SimTruth& truth, const SubjectLatents& latents,
                               const HazardProfile& profile, Rng& rng);

// Visits, biopsy results and PSA values. The number of random draws does not
// depend on the outcome, so runs that differ only in rho_true share every
// other draw.
PatientRecord apply_observation_scheme(const SimTruth& truth, const SubjectLatents& latents,
                                       LatentTruth& latent, Rng& rng);

struct SimulatedSubject {
  PatientRecord record;
  LatentTruth latent;
};

// Subject i of a dataset, from its own substream of seed.
SimulatedSubject simulate_subject(const SimTruth& truth, std::uint64_t seed, int i);

struct SimulatedDataset {
  std::vector<PatientRecord> patients;
  std::vector<LatentTruth> latent;
  std::uint64_t seed = 0;
};

// Output does not depend on the worker count.
SimulatedDataset simulate_dataset(const SimTruth& truth, std::uint64_t seed, int workers = 1);

struct EventProportions {
  double censored = 0.0;
  double progression = 0.0;
  double treatment = 0.0;
};

EventProportions event_proportions(const std::vector<PatientRecord>& data);

}  // namespace mcicjm
