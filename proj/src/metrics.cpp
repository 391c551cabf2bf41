#include "mcicjm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mcicjm/diagnostics.hpp"
#include "mcicjm/error.hpp"

namespace mcicjm {

std::vector<CompetingObservation> competing_observations(const std::vector<PatientRecord>& data) {
  std::vector<CompetingObservation> out;
  out.reserve(data.size());
  for (const auto& r : data) out.push_back({r.terminal_time, static_cast<int>(r.delta)});
  return out;
}

double CifCurve::at(double t) const {
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0.0;
  return values[(it - times.begin()) - 1];
}

namespace {

struct TimeRow {
  double time;
  int at_risk;
  int events[3];  // censored, cause 1, cause 2
};

std::vector<TimeRow> tabulate(const std::vector<CompetingObservation>& data) {
  if (data.empty()) throw InputError("no observations");
  std::vector<CompetingObservation> sorted = data;
  for (const auto& o : sorted) {
    if (!(o.time >= 0.0) || !std::isfinite(o.time)) throw InputError("observation times must be finite and >= 0");
    if (o.cause < 0 || o.cause > 2) throw InputError("cause must be 0, 1 or 2");
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.time < b.time; });
  std::vector<TimeRow> rows;
  int remaining = static_cast<int>(sorted.size());
  for (std::size_t i = 0; i < sorted.size();) {
    TimeRow row{sorted[i].time, remaining, {0, 0, 0}};
    std::size_t j = i;
    for (; j < sorted.size() && sorted[j].time == row.time; ++j) ++row.events[sorted[j].cause];
    remaining -= static_cast<int>(j - i);
    rows.push_back(row);
    i = j;
  }
  return rows;
}

}  // namespace

AalenJohansenResult aalen_johansen(const std::vector<CompetingObservation>& data) {
  const auto rows = tabulate(data);
  AalenJohansenResult r;
  r.progression.cause = Cause::Progression;
  r.treatment.cause = Cause::Treatment;
  double surv = 1.0;
  double cif[2] = {0.0, 0.0};
  for (const auto& row : rows) {
    // Events at this time use the survival just before it; censorings at the
    // same time stay in the risk set.
    const double n = row.at_risk;
    cif[0] += surv * row.events[1] / n;
    cif[1] += surv * row.events[2] / n;
    surv *= 1.0 - (row.events[1] + row.events[2]) / n;
    for (CifCurve* c : {&r.progression, &r.treatment}) {
      c->times.push_back(row.time);
      c->at_risk.push_back(row.at_risk);
    }
    r.progression.values.push_back(cif[0]);
    r.treatment.values.push_back(cif[1]);
    r.survival.push_back(surv);
  }
  return r;
}

KaplanMeierCurve kaplan_meier(const std::vector<CompetingObservation>& data) {
  const auto rows = tabulate(data);
  KaplanMeierCurve km;
  double s = 1.0;
  for (const auto& row : rows) {
    const int d = row.events[1] + row.events[2];
    s *= static_cast<double>(row.at_risk - d) / row.at_risk;
    km.times.push_back(row.time);
    km.survival.push_back(s);
  }
  return km;
}

BiasValue relative_bias(double estimate, double truth) {
  if (truth == 0.0) return {estimate - truth, true};
  return {(estimate - truth) / truth, false};
}

IntervalMetrics interval_metrics(const std::vector<ReplicateEstimate>& reps, double truth) {
  IntervalMetrics m;
  m.n_replicates = static_cast<int>(reps.size());
  if (reps.empty()) return m;
  // Sums run over sorted copies so the replicate order cannot change them.
  std::vector<double> means, widths, sq;
  int covered = 0;
  for (const auto& r : reps) {
    means.push_back(r.mean);
    widths.push_back(r.q975 - r.q025);
    sq.push_back((r.mean - truth) * (r.mean - truth));
    covered += (r.q025 <= truth && truth <= r.q975) ? 1 : 0;
  }
  auto sorted_mean = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  const double n = static_cast<double>(reps.size());
  m.mean_estimate = sorted_mean(means);
  m.bias = relative_bias(m.mean_estimate, truth);
  m.ci_width = sorted_mean(widths);
  m.coverage = covered / n;
  m.mse = sorted_mean(sq);
  return m;
}

std::vector<double> log_hazard_grid() {
  std::vector<double> g;
  for (int i = 5; i <= 100; ++i) g.push_back(i / 10.0);
  return g;
}

HazardBand posterior_log_hazard(const ModelSpec& spec, const PosteriorSamples& post, Cause k,
                                const std::vector<double>& grid) {
  const int nb = spec.baseline[index(k)].n_basis();
  const std::string c(cause_name(k));
  const int first = post.index_of("gamma_h0[" + c + "][0]");
  // Basis rows once per grid point.
  std::vector<Eigen::VectorXd> rows;
  for (double t : grid) {
    const std::vector<double> b = spec.baseline[index(k)].eval(t);
    rows.emplace_back(Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size())));
  }
  HazardBand band;
  std::vector<std::vector<double>> values(grid.size());
  Eigen::VectorXd g(nb);
  for (int ch = 0; ch < post.n_chains; ++ch) {
    for (int d = 0; d < post.draws_per_chain; ++d) {
      for (int a = 0; a < nb; ++a) g[a] = post.value(ch, d, first + a);
      for (std::size_t i = 0; i < grid.size(); ++i) values[i].push_back(rows[i].dot(g));
    }
  }
  for (auto& v : values) {
    if (v.empty()) throw InputError("posterior has no draws");
    band.mean.push_back(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
    band.q025.push_back(quantile(v, 0.025));
    band.q975.push_back(quantile(v, 0.975));
  }
  return band;
}

EvaluationReport evaluate_replicates(const ModelSpec& spec, const ParameterState& truth,
                                     const std::vector<PosteriorSamples>& posteriors) {
  if (posteriors.empty()) throw InputError("no posteriors to evaluate");
  const auto names = parameter_names(spec);
  for (const auto& p : posteriors) {
    if (p.names != names) {
      throw ValidationError("posterior parameters do not match the model specification");
    }
  }
  std::vector<double> truth_values;
  flatten_parameters(spec, truth, truth_values);

  EvaluationReport report;
  report.n_replicates = static_cast<int>(posteriors.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string& n = names[i];
    if (n == "tau_u" || n.rfind("tau_h0[", 0) == 0) continue;
    std::vector<ReplicateEstimate> reps;
    for (const auto& p : posteriors) {
      const auto& s = p.summary_of(n);
      reps.push_back({s.mean, s.q025, s.q975});
    }
    report.parameters.push_back({n, truth_values[i], interval_metrics(reps, truth_values[i])});
  }

  const auto grid = log_hazard_grid();
  for (Cause k : kCauses) {
    HazardGridReport& h = report.hazards[index(k)];
    h.cause = k;
    h.grid = grid;
    const std::size_t g = grid.size();
    h.estimate.assign(g, 0.0);
    h.ci_width.assign(g, 0.0);
    for (const auto& p : posteriors) {
      const HazardBand band = posterior_log_hazard(spec, p, k, grid);
      for (std::size_t i = 0; i < g; ++i) {
        h.estimate[i] += band.mean[i] / posteriors.size();
        h.ci_width[i] += (band.q975[i] - band.q025[i]) / posteriors.size();
      }
    }
    for (std::size_t i = 0; i < g; ++i) {
      h.truth.push_back(log_baseline_hazard(spec, truth.gamma_h0[index(k)], k, grid[i]));
      h.relative_bias.push_back(relative_bias(h.estimate[i], h.truth[i]).value);
    }
    auto avg = [](const std::vector<double>& v) {
      return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    h.mean_truth = avg(h.truth);
    h.mean_estimate = avg(h.estimate);
    h.mean_relative_bias = avg(h.relative_bias);
    h.mean_ci_width = avg(h.ci_width);
  }
  return report;
}

}  // namespace mcicjm
