#include "mcicjm/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include <boost/math/tools/roots.hpp>

#include "mcicjm/error.hpp"
#include "mcicjm/quadrature.hpp"

namespace mcicjm {

void SimTruth::validate() const {
  spec.validate();
  if (!(rho_true > 0.0 && rho_true <= 1.0)) throw ConfigError("rho_true must lie in (0, 1]");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("horizon must be positive");
  if (!(dropout_rate >= 0.0) || !std::isfinite(dropout_rate)) {
    throw ConfigError("dropout rate must be nonnegative");
  }
  if (n_subjects < 1) throw ConfigError("need at least one subject");
  for (int c = 0; c < 2; ++c) {
    if (params.gamma_h0[c].size() != spec.baseline[c].n_basis()) {
      throw ConfigError("baseline coefficients do not match the basis size");
    }
  }
  if (Eigen::LLT<RandomMatrix>(params.omega).info() != Eigen::Success) {
    throw ConfigError("Omega must be positive definite");
  }
  if (!(params.tau_eps > 0.0)) throw ConfigError("tau_eps must be positive");
  const auto& s = schedule;
  if (!(s.psa_interval > 0.0) || !(s.biopsy_interval > 0.0)) {
    throw ConfigError("visit intervals must be positive");
  }
  if (s.psa_jitter < 0.0 || 2.0 * s.psa_jitter >= s.psa_interval) {
    throw ConfigError("PSA jitter must be below half the PSA interval");
  }
  double prev = 0.0;
  for (double b : s.biopsy_start) {
    if (!(b > prev)) throw ConfigError("initial biopsy times must be positive and increasing");
    prev = b;
  }
  const double min_gap = std::min(s.biopsy_interval, s.biopsy_start.empty() ? s.biopsy_interval : s.biopsy_start.front());
  double gap = min_gap;
  for (std::size_t j = 1; j < s.biopsy_start.size(); ++j) gap = std::min(gap, s.biopsy_start[j] - s.biopsy_start[j - 1]);
  if (s.biopsy_jitter < 0.0 || 2.0 * s.biopsy_jitter >= gap) {
    throw ConfigError("biopsy jitter must be below half the shortest biopsy gap");
  }
  const auto& c = covariates;
  if (!(c.age_sd > 0.0) || !(c.age_min < c.age_max) || !(c.log_psad_sd > 0.0)) {
    throw ConfigError("covariate distributions are malformed");
  }
}

SimTruth default_truth() {
  SimTruth t;
  t.spec = make_model_spec(NcsBasis(0.0, 12.5, {1.5, 4.0}),
                           BsplineBasis(0.0, 12.5, 12, 3), SensitivityMode::fixed(0.75));
  ParameterState& p = t.params;
  p = make_parameter_state(t.spec, 0);
  p.beta << 2.35, 0.27, 0.62, 1.00, 0.02;
  p.omega << 0.49, -0.04, -0.09, 0.01, -0.04, 0.77, 0.43, -0.08, -0.09, 0.43, 1.41, 1.43, 0.01,
      -0.08, 1.43, 2.60;
  p.tau_eps = 47.39;
  p.gamma_h0[0].resize(12);
  p.gamma_h0[0] << -3.02, -2.57, -2.17, -1.87, -1.78, -1.87, -2.04, -2.26, -2.51, -2.74, -2.95,
      -3.15;
  p.gamma_h0[1].resize(12);
  p.gamma_h0[1] << -5.13, -4.55, -4.26, -4.31, -4.47, -4.65, -4.80, -4.91, -5.11, -5.37, -5.66,
      -5.97;
  p.gamma = {0.41, 0.25};
  p.alpha = {Eigen::Vector2d(0.16, 1.79), Eigen::Vector2d(0.40, 2.22)};
  p.rho = 0.75;
  t.rho_true = 0.75;
  t.dropout_rate = 0.155;
  return t;
}

SubjectLatents draw_subject_latents(const SimTruth& truth, Rng& rng) {
  SubjectLatents s;
  const RandomMatrix l = Eigen::LLT<RandomMatrix>(truth.params.omega).matrixL();
  RandomVector z;
  for (int j = 0; j < kNumRandom; ++j) z[j] = rng.normal();
  s.u = l * z;
  const auto& c = truth.covariates;
  do {
    s.age = rng.normal(c.age_mean, c.age_sd);
  } while (s.age < c.age_min || s.age > c.age_max);
  s.log_psad = rng.normal(c.log_psad_mean, c.log_psad_sd);
  return s;
}

HazardProfile::HazardProfile(const SimTruth& truth, const SubjectLatents& latents)
    : truth_(&truth), u_(latents.u) {
  covariates_.id = "sim";
  covariates_.age = latents.age;
  covariates_.log_psad = latents.log_psad;
  covariates_.psad = std::exp(latents.log_psad);

  // Smooth pieces no wider than a quarter year.
  grid_ = {0.0};
  std::vector<double> cuts = hazard_breakpoints(truth.spec, 0.0, truth.horizon);
  cuts.push_back(truth.horizon);
  for (double cut : cuts) {
    const double start = grid_.back();
    const int parts = std::max(1, static_cast<int>(std::ceil((cut - start) / 0.25)));
    for (int q = 1; q <= parts; ++q) grid_.push_back(q == parts ? cut : start + (cut - start) * q / parts);
  }
  for (Cause k : kCauses) {
    auto& cum = cum_[index(k)];
    cum.assign(grid_.size(), 0.0);
    for (std::size_t p = 0; p + 1 < grid_.size(); ++p) {
      cum[p + 1] = cum[p] + piece_integral(p, grid_[p + 1], k);
    }
  }
}

double HazardProfile::hazard(double t, Cause k) const {
  return mcicjm::hazard(truth_->spec, truth_->params, u_, covariates_, t, k);
}

double HazardProfile::piece_integral(std::size_t piece, double t, std::optional<Cause> k) const {
  const auto& rule = truth_->spec.rule();
  auto f = [&](double s) {
    if (k) return hazard(s, *k);
    return hazard(s, Cause::Progression) + hazard(s, Cause::Treatment);
  };
  return integrate(rule, f, grid_[piece], t).value;
}

double HazardProfile::cumulative(double t, std::optional<Cause> k) const {
  if (!(t >= 0.0)) throw InputError("cumulative hazard needs t >= 0");
  t = std::min(t, grid_.back());
  const std::size_t hi = std::upper_bound(grid_.begin(), grid_.end(), t) - grid_.begin();
  const std::size_t piece = std::min(hi, grid_.size() - 1) - 1;
  double base = 0.0;
  for (Cause c : kCauses) {
    if (!k || *k == c) base += cum_[index(c)][piece];
  }
  return base + piece_integral(piece, t, k);
}

double HazardProfile::cumulative(double t, Cause k) const {
  return cumulative(t, std::optional<Cause>(k));
}

double HazardProfile::solve(double target, std::optional<Cause> k) const {
  if (!(target >= 0.0)) throw InputError("cumulative hazard target must be nonnegative");
  if (target == 0.0) return 0.0;
  std::vector<double> cum(grid_.size(), 0.0);
  for (Cause c : kCauses) {
    if (k && *k != c) continue;
    for (std::size_t p = 0; p < grid_.size(); ++p) cum[p] += cum_[index(c)][p];
  }
  if (cum.back() < target) return kNever;
  const std::size_t hi = std::lower_bound(cum.begin(), cum.end(), target) - cum.begin();
  const std::size_t piece = hi - 1;
  if (cum[hi] == target) return grid_[hi];
  auto f = [&](double t) { return cum[piece] + piece_integral(piece, t, k) - target; };
  std::uintmax_t max_iter = 200;
  const auto root = boost::math::tools::toms748_solve(
      f, grid_[piece], grid_[hi], cum[piece] - target, cum[hi] - target,
      [](double a, double b) { return std::abs(b - a) < 1e-10; }, max_iter);
  if (max_iter >= 200) throw NumericalError("event-time root finding did not converge");
  return 0.5 * (root.first + root.second);
}

EventDraw invert_event_time(const HazardProfile& profile, Rng& rng) {
  const double target = -std::log(rng.uniform());
  const double u_cause = rng.uniform();
  EventDraw out;
  out.time = profile.solve(target);
  if (out.time == kNever) return out;
  const double hp = profile.hazard(out.time, Cause::Progression);
  const double ht = profile.hazard(out.time, Cause::Treatment);
  out.cause = u_cause * (hp + ht) < hp ? Cause::Progression : Cause::Treatment;
  return out;
}

LatentTruth draw_latent_events(const SimTruth& truth, const SubjectLatents& latents,
                               const HazardProfile& profile, Rng& rng) {
  LatentTruth lt;
  lt.u = latents.u;
  lt.age = latents.age;
  lt.log_psad = latents.log_psad;
  const EventDraw first = invert_event_time(profile, rng);
  // Treatment after a (latent) progression: the treatment hazard keeps
  // running, so continue its own inversion from the progression time.
  const double extra = -std::log(rng.uniform());
  lt.first_cause = first.cause;
  if (first.cause == Cause::Progression) {
    lt.progression_time = first.time;
    lt.treatment_time = profile.solve(profile.cumulative(first.time, Cause::Treatment) + extra,
                                      Cause::Treatment);
  } else if (first.cause == Cause::Treatment) {
    lt.treatment_time = first.time;
  }
  const double dropout = truth.dropout_rate > 0.0 ? rng.exponential(truth.dropout_rate) : kNever;
  lt.censoring_time = std::min(truth.horizon, dropout);
  return lt;
}

PatientRecord apply_observation_scheme(const SimTruth& truth, const SubjectLatents& latents,
                                       LatentTruth& latent, Rng& rng) {
  const auto& s = truth.schedule;
  // Full schedule up to the horizon first, so the number of draws is fixed.
  std::vector<double> nominal;
  for (double b : s.biopsy_start) {
    if (b <= truth.horizon) nominal.push_back(b);
  }
  double next = s.biopsy_start.empty() ? s.biopsy_interval : s.biopsy_start.back() + s.biopsy_interval;
  for (; next <= truth.horizon + 1e-12; next += s.biopsy_interval) nominal.push_back(next);
  std::vector<double> biopsy(nominal.size());
  std::vector<double> detect(nominal.size());
  for (std::size_t j = 0; j < nominal.size(); ++j) {
    biopsy[j] = nominal[j] + s.biopsy_jitter * (2.0 * rng.uniform() - 1.0);
    detect[j] = rng.uniform();
  }
  std::vector<double> psa_times{0.0};
  const int n_psa = static_cast<int>(std::floor(truth.horizon / s.psa_interval + 1e-9));
  for (int q = 1; q <= n_psa; ++q) {
    psa_times.push_back(q * s.psa_interval + s.psa_jitter * (2.0 * rng.uniform() - 1.0));
  }
  std::vector<double> noise(psa_times.size());
  for (double& e : noise) e = rng.student_t(truth.spec.t_dof);

  PatientRecord rec;
  rec.id = latent.id;
  rec.age = latents.age;
  rec.log_psad = latents.log_psad;
  rec.psad = std::exp(latents.log_psad);
  rec.biopsy_times = {0.0};
  rec.delta = EventStatus::Censored;
  rec.terminal_time = latent.censoring_time;
  const double stop = std::min(latent.censoring_time, latent.treatment_time);
  latent.missed_biopsies = 0;
  bool detected = false;
  for (std::size_t j = 0; j < biopsy.size() && biopsy[j] <= stop; ++j) {
    rec.biopsy_times.push_back(biopsy[j]);
    if (latent.progression_time <= biopsy[j]) {
      if (detect[j] < truth.rho_true) {
        rec.delta = EventStatus::Progression;
        rec.terminal_time = biopsy[j];
        detected = true;
        break;
      }
      ++latent.missed_biopsies;
    }
  }
  if (!detected && latent.treatment_time <= latent.censoring_time) {
    rec.delta = EventStatus::Treatment;
    rec.terminal_time = latent.treatment_time;
  }

  const double sigma = truth.params.sigma();
  for (std::size_t q = 0; q < psa_times.size() && psa_times[q] <= rec.terminal_time; ++q) {
    const double m = longitudinal_mean(truth.spec, truth.params, latents.u, rec, psa_times[q]);
    rec.measurements.push_back({psa_times[q], m + sigma * noise[q]});
  }
  return rec;
}

SimulatedSubject simulate_subject(const SimTruth& truth, std::uint64_t seed, int i) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
  const SubjectLatents latents = draw_subject_latents(truth, rng);
  const HazardProfile profile(truth, latents);
  SimulatedSubject out;
  out.latent = draw_latent_events(truth, latents, profile, rng);
  out.latent.id = std::to_string(i + 1);
  out.record = apply_observation_scheme(truth, latents, out.latent, rng);
  return out;
}

SimulatedDataset simulate_dataset(const SimTruth& truth, std::uint64_t seed, int workers) {
  truth.validate();
  const int n = truth.n_subjects;
  SimulatedDataset ds;
  ds.seed = seed;
  ds.patients.resize(n);
  ds.latent.resize(n);
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto worker = [&]() {
    for (int i = next++; i < n && !failed; i = next++) {
      try {
        SimulatedSubject s = simulate_subject(truth, seed, i);
        ds.patients[i] = std::move(s.record);
        ds.latent[i] = std::move(s.latent);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  workers = std::clamp(workers, 1, n);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return ds;
}

EventProportions event_proportions(const std::vector<PatientRecord>& data) {
  EventProportions p;
  if (data.empty()) return p;
  for (const auto& r : data) {
    switch (r.delta) {
      case EventStatus::Censored: p.censored += 1.0; break;
      case EventStatus::Progression: p.progression += 1.0; break;
      case EventStatus::Treatment: p.treatment += 1.0; break;
    }
  }
  const double n = static_cast<double>(data.size());
  p.censored /= n;
  p.progression /= n;
  p.treatment /= n;
  return p;
}

}  // namespace mcicjm
