#include "mcicjm/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mcicjm/error.hpp"

namespace mcicjm {

double longitudinal_logdensity(double y, double mean, double sigma, double kappa) {
  if (!(sigma > 0.0)) throw InputError("t density needs sigma > 0");
  const double r = (y - mean) / sigma;
  return std::lgamma(0.5 * (kappa + 1.0)) - std::lgamma(0.5 * kappa) -
         0.5 * std::log(kappa * std::numbers::pi) - std::log(sigma) -
         0.5 * (kappa + 1.0) * std::log1p(r * r / kappa);
}

double log_interval_prob_from_cumhaz(double h_start, double h_end) {
  const double dh = h_end - h_start;
  if (!(dh > 0.0)) return kNegInf;
  return -h_start + std::log(-std::expm1(-dh));
}

double survival_log_factor(const SurvivalTerms& terms, double rho) {
  const auto& la = terms.log_interval_probs;
  const int n = static_cast<int>(la.size());
  if (terms.delta == EventStatus::Progression) {
    if (rho <= 0.0) return kNegInf;
    const double l1r = rho < 1.0 ? std::log1p(-rho) : kNegInf;
    LogSumExp lse;
    for (int j = 1; j <= n; ++j) {
      const int misses = n - j;
      if (misses == 0) {
        lse.add(la[j - 1]);
      } else if (rho < 1.0) {
        lse.add(la[j - 1] + misses * l1r);
      }
    }
    return std::log(rho) + lse.value() - terms.cumhaz_trt_end;
  }
  LogSumExp lse;
  lse.add(-terms.cumhaz_prg_last);
  if (rho < 1.0) {
    const double l1r = std::log1p(-rho);
    for (int j = 1; j <= n; ++j) lse.add(la[j - 1] + (n - j + 1) * l1r);
  }
  double out = lse.value() - terms.cumhaz_trt_end;
  if (terms.delta == EventStatus::Treatment) out += terms.log_hazard_trt_end;
  return out;
}

SurvivalFactorBreakdown survival_factor_breakdown(const SurvivalTerms& terms, double rho) {
  SurvivalFactorBreakdown b;
  const auto& la = terms.log_interval_probs;
  const int n = static_cast<int>(la.size());
  for (double l : la) b.interval_probs.push_back(std::exp(l));
  b.log_missed_terms.assign(n, kNegInf);
  switch (terms.delta) {
    case EventStatus::Censored: b.kind = FactorKind::F1; break;
    case EventStatus::Progression: b.kind = FactorKind::F2; break;
    case EventStatus::Treatment: b.kind = FactorKind::F3; break;
  }
  const double l1r = rho < 1.0 ? std::log1p(-rho) : kNegInf;
  if (terms.delta == EventStatus::Progression) {
    if (rho <= 0.0) {
      b.diagnostic = "progression detected but sensitivity is 0: detection is impossible";
      b.log_factor = kNegInf;
      return b;
    }
    for (int j = 1; j <= n; ++j) {
      const int misses = n - j;
      if (misses == 0) {
        b.log_missed_terms[j - 1] = std::log(rho) + la[j - 1] - terms.cumhaz_trt_end;
      } else if (rho < 1.0) {
        b.log_missed_terms[j - 1] =
            std::log(rho) + la[j - 1] + misses * l1r - terms.cumhaz_trt_end;
      }
    }
  } else {
    const double event = terms.delta == EventStatus::Treatment ? terms.log_hazard_trt_end : 0.0;
    b.log_no_progression = -terms.cumhaz_prg_last - terms.cumhaz_trt_end + event;
    if (rho < 1.0) {
      for (int j = 1; j <= n; ++j) {
        b.log_missed_terms[j - 1] = la[j - 1] + (n - j + 1) * l1r - terms.cumhaz_trt_end + event;
      }
    }
  }
  LogSumExp lse;
  lse.add(b.log_no_progression);
  for (double t : b.log_missed_terms) lse.add(t);
  b.log_factor = lse.value();
  return b;
}

namespace {

// Panel boundaries on [from, to]: the end points, extra marks and hazard
// breakpoints.
std::vector<double> panel_points(const ModelSpec& spec, double from, double to,
                                 std::span<const double> marks) {
  std::vector<double> pts = hazard_breakpoints(spec, from, to);
  for (double m : marks) {
    if (m > from && m < to) pts.push_back(m);
  }
  pts.push_back(from);
  pts.push_back(to);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

}  // namespace

double interval_progression_prob(const ModelSpec& spec, const ParameterState& params,
                                 const RandomVector& u, const PatientRecord& rec, int j) {
  if (j < 1 || j > rec.n_intervals()) throw InputError("interval index out of range");
  const double a = rec.biopsy_times[j - 1];
  const double b = rec.biopsy_times[j];
  const Cause k = Cause::Progression;
  if (spec.interval_prob == IntervalProbMethod::ClosedForm) {
    const double ha = cumulative_hazard(spec, params, u, rec, a, k);
    const double hb = cumulative_hazard(spec, params, u, rec, b, k);
    return std::exp(log_interval_prob_from_cumhaz(ha, hb));
  }
  const auto& rule = spec.rule();
  auto h = [&](double s) { return hazard(spec, params, u, rec, s, k); };
  const std::vector<double> pts = panel_points(spec, a, b, {});
  double total = 0.0;
  for (std::size_t p = 0; p + 1 < pts.size(); ++p) {
    // Cumulative hazard at the panel start is computed once and shared by all
    // outer nodes in the panel; the inner panel integral runs from there.
    const double h_start = cumulative_hazard(spec, params, u, rec, pts[p], k);
    auto outer = [&](double x, double inner) { return h(x) * std::exp(-(h_start + inner)); };
    total += integrate_nested(rule, outer, h, pts[p], pts[p + 1], pts[p]);
  }
  return total;
}

SurvivalFactorBreakdown survival_breakdown(const ModelSpec& spec, const ParameterState& params,
                                           const RandomVector& u, const PatientRecord& rec) {
  const int n = rec.n_intervals();
  std::vector<double> cum(n + 1, 0.0);
  for (int j = 1; j <= n; ++j) {
    cum[j] = cumulative_hazard(spec, params, u, rec, rec.biopsy_times[j], Cause::Progression);
  }
  std::vector<double> log_a(n);
  for (int j = 1; j <= n; ++j) {
    if (spec.interval_prob == IntervalProbMethod::ClosedForm) {
      log_a[j - 1] = log_interval_prob_from_cumhaz(cum[j - 1], cum[j]);
    } else {
      log_a[j - 1] = std::log(interval_progression_prob(spec, params, u, rec, j));
    }
  }
  SurvivalTerms terms;
  terms.delta = rec.delta;
  terms.log_interval_probs = log_a;
  terms.cumhaz_prg_last = cum[n];
  terms.cumhaz_trt_end =
      cumulative_hazard(spec, params, u, rec, rec.terminal_time, Cause::Treatment);
  if (rec.delta == EventStatus::Treatment) {
    terms.log_hazard_trt_end =
        log_hazard(spec, params, u, rec, rec.terminal_time, Cause::Treatment);
  }
  return survival_factor_breakdown(terms, params.rho);
}

double survival_loglik(const ModelSpec& spec, const ParameterState& params,
                       const RandomVector& u, const PatientRecord& rec) {
  return survival_breakdown(spec, params, u, rec).log_factor;
}

SubjectLayout::SubjectLayout(const ModelSpec& spec, const PatientRecord& rec)
    : delta_(rec.delta), age_offset_(rec.age - spec.age_center), log_psad_(rec.log_psad) {
  const auto& rule = spec.rule();
  const std::span<const double> biopsies(rec.biopsy_times);
  const std::vector<double> pts =
      panel_points(spec, 0.0, rec.terminal_time, biopsies.subspan(1));
  for (Cause k : kCauses) basis_count_[index(k)] = spec.baseline[index(k)].degree() + 1;

  std::array<double, 3> now{};
  std::array<double, 3> prev{};
  std::size_t next_mark = 1;
  for (std::size_t p = 0; p + 1 < pts.size(); ++p) {
    const double a = pts[p];
    const double b = pts[p + 1];
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double x = mid + half * rule.nodes[i];
      time_.push_back(x);
      weight_.push_back(rule.weights_kronrod[i] * half);
      spec.ncs.eval(x, now);
      spec.ncs.eval(x - 1.0, prev);
      for (int q = 0; q < 3; ++q) {
        ncs_now_.push_back(now[q]);
        ncs_prev_.push_back(now[q] - prev[q]);
      }
      for (Cause k : kCauses) {
        const LocalBasis lb = spec.baseline[index(k)].local(x);
        basis_first_[index(k)].push_back(lb.first);
        for (int r = 0; r < lb.count; ++r) basis_value_[index(k)].push_back(lb.values[r]);
      }
    }
    while (next_mark < biopsies.size() && biopsies[next_mark] <= b) {
      mark_end_.push_back(n_nodes());
      ++next_mark;
    }
  }
  // Biopsies at time 0 beyond t_0 cannot occur (strictly increasing), but a
  // zero-length follow-up leaves marks unset.
  while (next_mark < biopsies.size()) {
    mark_end_.push_back(n_nodes());
    ++next_mark;
  }
  prg_end_ = mark_end_.empty() ? 0 : mark_end_.back();

  if (delta_ == EventStatus::Treatment) {
    spec.ncs.eval(rec.terminal_time, ncs_event_now_);
    spec.ncs.eval(rec.terminal_time - 1.0, prev);
    for (int q = 0; q < 3; ++q) ncs_event_prev_[q] = ncs_event_now_[q] - prev[q];
    const LocalBasis lb = spec.baseline[index(Cause::Treatment)].local(rec.terminal_time);
    event_basis_first_ = lb.first;
    event_basis_ = lb.values;
    event_basis_count_ = lb.count;
  }

  for (const auto& m : rec.measurements) {
    y_.push_back(m.y);
    spec.ncs.eval(m.time, now);
    ncs_meas_.insert(ncs_meas_.end(), now.begin(), now.end());
  }
}

void SubjectLayout::trajectory(const FixedVector& beta, const RandomVector& u,
                               std::span<double> m, std::span<double> dm, double& m_event,
                               double& dm_event) const {
  const double c0 = beta[0] + u[0] + beta[4] * age_offset_;
  const double c1 = beta[1] + u[1];
  const double c2 = beta[2] + u[2];
  const double c3 = beta[3] + u[3];
  const int n = n_nodes();
  for (int i = 0; i < n; ++i) {
    const double* c = &ncs_now_[3 * i];
    const double* d = &ncs_prev_[3 * i];
    m[i] = c0 + c1 * c[0] + c2 * c[1] + c3 * c[2];
    dm[i] = c1 * d[0] + c2 * d[1] + c3 * d[2];
  }
  if (delta_ == EventStatus::Treatment) {
    m_event = c0 + c1 * ncs_event_now_[0] + c2 * ncs_event_now_[1] + c3 * ncs_event_now_[2];
    dm_event = c1 * ncs_event_prev_[0] + c2 * ncs_event_prev_[1] + c3 * ncs_event_prev_[2];
  } else {
    m_event = 0.0;
    dm_event = 0.0;
  }
}

void SubjectLayout::cumhaz_progression(const Eigen::VectorXd& gamma_h0, double gamma,
                                       const Eigen::Vector2d& alpha, std::span<const double> m,
                                       std::span<const double> dm, std::span<double> out) const {
  const int k = index(Cause::Progression);
  const int count = basis_count_[k];
  const double offset = gamma * log_psad_;
  double acc = 0.0;
  out[0] = 0.0;
  int node = 0;
  for (std::size_t j = 0; j < mark_end_.size(); ++j) {
    for (; node < mark_end_[j]; ++node) {
      const double* g = &basis_value_[k][static_cast<std::size_t>(node) * count];
      const int first = basis_first_[k][node];
      double lh = offset + alpha[0] * m[node] + alpha[1] * dm[node];
      for (int r = 0; r < count; ++r) lh += gamma_h0[first + r] * g[r];
      acc += weight_[node] * std::exp(lh);
    }
    out[j + 1] = acc;
  }
}

void SubjectLayout::cumhaz_treatment(const Eigen::VectorXd& gamma_h0, double gamma,
                                     const Eigen::Vector2d& alpha, std::span<const double> m,
                                     std::span<const double> dm, double m_event, double dm_event,
                                     double& cumhaz, double& log_hazard_end) const {
  const int k = index(Cause::Treatment);
  const int count = basis_count_[k];
  const double offset = gamma * log_psad_;
  double acc = 0.0;
  const int n = n_nodes();
  for (int node = 0; node < n; ++node) {
    const double* g = &basis_value_[k][static_cast<std::size_t>(node) * count];
    const int first = basis_first_[k][node];
    double lh = offset + alpha[0] * m[node] + alpha[1] * dm[node];
    for (int r = 0; r < count; ++r) lh += gamma_h0[first + r] * g[r];
    acc += weight_[node] * std::exp(lh);
  }
  cumhaz = acc;
  log_hazard_end = 0.0;
  if (delta_ == EventStatus::Treatment) {
    double lh = offset + alpha[0] * m_event + alpha[1] * dm_event;
    for (int r = 0; r < event_basis_count_; ++r) {
      lh += gamma_h0[event_basis_first_ + r] * event_basis_[r];
    }
    log_hazard_end = lh;
  }
}

void SubjectLayout::residuals(const FixedVector& beta, const RandomVector& u,
                              std::span<double> out) const {
  const double c0 = beta[0] + u[0] + beta[4] * age_offset_;
  const double c1 = beta[1] + u[1];
  const double c2 = beta[2] + u[2];
  const double c3 = beta[3] + u[3];
  for (int l = 0; l < n_measurements(); ++l) {
    const double* c = &ncs_meas_[3 * l];
    out[l] = y_[l] - (c0 + c1 * c[0] + c2 * c[1] + c3 * c[2]);
  }
}

RandomVector SubjectLayout::z_row(int l) const {
  RandomVector z;
  z << 1.0, ncs_meas_[3 * l], ncs_meas_[3 * l + 1], ncs_meas_[3 * l + 2];
  return z;
}

FixedVector SubjectLayout::w_row(int l) const {
  FixedVector w;
  w << 1.0, ncs_meas_[3 * l], ncs_meas_[3 * l + 1], ncs_meas_[3 * l + 2], age_offset_;
  return w;
}

namespace {

SurvivalTerms layout_terms(const SubjectLayout& layout, const ParameterState& params,
                           const RandomVector& u, std::vector<double>& cum,
                           std::vector<double>& log_a) {
  const int n_nodes = layout.n_nodes();
  std::vector<double> m(n_nodes);
  std::vector<double> dm(n_nodes);
  double m_event = 0.0;
  double dm_event = 0.0;
  layout.trajectory(params.beta, u, m, dm, m_event, dm_event);
  const int n = layout.n_intervals();
  cum.assign(n + 1, 0.0);
  const int p = index(Cause::Progression);
  const int t = index(Cause::Treatment);
  layout.cumhaz_progression(params.gamma_h0[p], params.gamma[p], params.alpha[p], m, dm, cum);
  SurvivalTerms terms;
  terms.delta = layout.delta();
  layout.cumhaz_treatment(params.gamma_h0[t], params.gamma[t], params.alpha[t], m, dm, m_event,
                          dm_event, terms.cumhaz_trt_end, terms.log_hazard_trt_end);
  log_a.resize(n);
  for (int j = 1; j <= n; ++j) log_a[j - 1] = log_interval_prob_from_cumhaz(cum[j - 1], cum[j]);
  terms.log_interval_probs = log_a;
  terms.cumhaz_prg_last = cum[n];
  return terms;
}

}  // namespace

double survival_loglik(const SubjectLayout& layout, const ModelSpec& spec,
                       const ParameterState& params, const RandomVector& u) {
  (void)spec;
  std::vector<double> cum;
  std::vector<double> log_a;
  const SurvivalTerms terms = layout_terms(layout, params, u, cum, log_a);
  return survival_log_factor(terms, params.rho);
}

double log_normal_density(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * variance) - 0.5 * d * d / variance;
}

double log_gamma_density(double x, double shape, double rate) {
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double log_inverse_wishart_density(const RandomMatrix& omega, double df, const RandomMatrix& scale) {
  constexpr int p = kNumRandom;
  Eigen::LLT<RandomMatrix> llt(omega);
  if (llt.info() != Eigen::Success) return kNegInf;
  Eigen::LLT<RandomMatrix> scale_llt(scale);
  if (scale_llt.info() != Eigen::Success) return kNegInf;
  const RandomMatrix l = llt.matrixL();
  const RandomMatrix ls = scale_llt.matrixL();
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  const double logdet_scale = 2.0 * ls.diagonal().array().log().sum();
  double lmvg = 0.25 * p * (p - 1) * std::log(std::numbers::pi);
  for (int j = 1; j <= p; ++j) lmvg += std::lgamma(0.5 * df + 0.5 * (1 - j));
  const double trace = (llt.solve(scale)).trace();
  return 0.5 * df * logdet_scale - 0.5 * df * p * std::log(2.0) - lmvg -
         0.5 * (df + p + 1.0) * logdet - 0.5 * trace;
}

double log_mvnormal_zero_mean(const RandomVector& u, const Eigen::LLT<RandomMatrix>& omega_llt) {
  const RandomMatrix l = omega_llt.matrixL();
  const RandomVector z = l.triangularView<Eigen::Lower>().solve(u);
  return -0.5 * kNumRandom * std::log(2.0 * std::numbers::pi) -
         l.diagonal().array().log().sum() - 0.5 * z.squaredNorm();
}

double log_prior_beta(const ModelSpec& spec, const FixedVector& beta) {
  const double var = spec.priors.normal_variance(spec.priors.beta_var);
  double out = 0.0;
  for (int j = 0; j < kNumFixed; ++j) out += log_normal_density(beta[j], 0.0, var);
  return out;
}

double log_prior_survival_block(const ModelSpec& spec, Cause k, const Eigen::VectorXd& gamma_h0,
                                double tau_h0, double gamma, const Eigen::Vector2d& alpha,
                                const PenaltyMatrix& penalty) {
  (void)k;
  if (!(tau_h0 > 0.0)) return kNegInf;
  const double quad = gamma_h0.dot(penalty.matrix * gamma_h0);
  double out = 0.5 * penalty.rank_term * std::log(tau_h0) - 0.5 * tau_h0 * quad;
  out += log_normal_density(gamma, 0.0, spec.priors.normal_variance(spec.priors.gamma_var));
  const double avar = spec.priors.normal_variance(spec.priors.alpha_var);
  out += log_normal_density(alpha[0], 0.0, avar) + log_normal_density(alpha[1], 0.0, avar);
  return out;
}

double log_prior_omega(const ModelSpec& spec, const RandomMatrix& omega, double tau_u) {
  if (!(tau_u > 0.0)) return kNegInf;
  const double df = kNumRandom + spec.priors.omega_df_extra;
  const RandomMatrix scale = (spec.priors.omega_scale / tau_u) * RandomMatrix::Identity();
  return log_inverse_wishart_density(omega, df, scale);
}

double log_prior_rho(const ModelSpec& spec, double rho) {
  const auto& s = spec.sensitivity;
  if (s.is_fixed()) return 0.0;
  if (rho < s.lo || rho > s.hi) return kNegInf;
  return -std::log(s.hi - s.lo);
}

double log_prior(const ModelSpec& spec, const ParameterState& params) {
  const auto& pr = spec.priors;
  double out = log_prior_beta(spec, params.beta);
  for (Cause k : kCauses) {
    const int i = index(k);
    out += log_prior_survival_block(spec, k, params.gamma_h0[i], params.tau_h0[i], params.gamma[i],
                                    params.alpha[i], spec.penalty(k));
    out += log_gamma_density(params.tau_h0[i], pr.tau_h0_shape, pr.tau_h0_rate);
  }
  out += log_gamma_density(params.tau_eps, pr.tau_eps_shape, pr.tau_eps_rate);
  out += log_gamma_density(params.tau_u, pr.tau_u_shape, pr.tau_u_rate);
  out += log_prior_omega(spec, params.omega, params.tau_u);
  out += log_prior_rho(spec, params.rho);
  return out;
}

PosteriorBreakdown evaluate_posterior(const ModelSpec& spec, const ParameterState& params,
                                      const std::vector<PatientRecord>& data) {
  if (params.u.size() != data.size()) {
    throw InputError("parameter state has a different number of subjects than the data");
  }
  PosteriorBreakdown out;
  Eigen::LLT<RandomMatrix> omega_llt(params.omega);
  const bool omega_ok = omega_llt.info() == Eigen::Success;
  const double sigma = params.sigma();
  out.subjects.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& rec = data[i];
    const auto& u = params.u[i];
    SubjectContribution c;
    c.id = rec.id;
    const SubjectLayout layout(spec, rec);
    std::vector<double> res(layout.n_measurements());
    layout.residuals(params.beta, u, res);
    for (double r : res) c.longitudinal += longitudinal_logdensity(r, 0.0, sigma, spec.t_dof);
    if (spec.interval_prob == IntervalProbMethod::ClosedForm) {
      std::vector<double> cum;
      std::vector<double> log_a;
      const SurvivalTerms terms = layout_terms(layout, params, u, cum, log_a);
      c.breakdown = survival_factor_breakdown(terms, params.rho);
    } else {
      c.breakdown = survival_breakdown(spec, params, u, rec);
    }
    c.survival = c.breakdown.log_factor;
    c.random_effects = omega_ok ? log_mvnormal_zero_mean(u, omega_llt) : kNegInf;
    out.log_likelihood += c.longitudinal + c.survival;
    out.log_random_effects += c.random_effects;
    out.subjects.push_back(std::move(c));
  }
  out.log_prior = log_prior(spec, params);
  out.log_posterior = out.log_likelihood + out.log_random_effects + out.log_prior;
  if (std::isnan(out.log_posterior)) out.log_posterior = kNegInf;
  return out;
}

double log_posterior(const ModelSpec& spec, const ParameterState& params,
                     const std::vector<PatientRecord>& data) {
  return evaluate_posterior(spec, params, data).log_posterior;
}

}  // namespace mcicjm
