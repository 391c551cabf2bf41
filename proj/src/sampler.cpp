#include "mcicjm/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <thread>

#include "mcicjm/error.hpp"

namespace mcicjm {

void SamplerConfig::validate() const {
  if (n_chains < 1) throw ConfigError("need at least one chain");
  if (n_iterations < 1) throw ConfigError("need at least one iteration");
  if (thin < 1) throw ConfigError("thinning interval must be positive");
  if (n_adapt < 0 || n_adapt >= n_iterations) {
    throw ConfigError("adaptation length must lie in [0, iterations)");
  }
  if ((n_iterations - n_adapt) % thin != 0) {
    throw ConfigError("iterations after adaptation must be divisible by the thinning interval");
  }
  if (!(target_multi > 0.0 && target_multi < 1.0) || !(target_scalar > 0.0 && target_scalar < 1.0)) {
    throw ConfigError("target acceptance rates must lie in (0, 1)");
  }
  if (draws_per_chain() < 8) {
    throw ConfigError("at least 8 kept draws per chain are needed for split-chain diagnostics");
  }
  if (block_repeats < 1) throw ConfigError("block repeats must be positive");
  if (workers < 0) throw ConfigError("worker count must be nonnegative");
}

void ScaleAdapter::update(double accept_prob) {
  ++steps_;
  const double gain = 1.0 / std::pow(static_cast<double>(steps_), 0.6);
  log_scale_ = std::clamp(log_scale_ + gain * (accept_prob - target_), -20.0, 20.0);
}

nlohmann::json ScaleAdapter::to_json() const {
  return {{"target", target_}, {"log_scale", log_scale_}, {"steps", steps_}};
}

void ScaleAdapter::from_json(const nlohmann::json& j) {
  target_ = j.at("target").get<double>();
  log_scale_ = j.at("log_scale").get<double>();
  steps_ = j.at("steps").get<long>();
}

AdaptiveProposal::AdaptiveProposal(Eigen::VectorXd initial_sd, double target)
    : initial_sd_(std::move(initial_sd)), adapter_(target) {
  const int d = dim();
  mean_ = Eigen::VectorXd::Zero(d);
  scatter_ = Eigen::MatrixXd::Zero(d, d);
  factor_ = initial_sd_.asDiagonal();
}

Eigen::VectorXd AdaptiveProposal::propose(const Eigen::VectorXd& x, Rng& rng) const {
  Eigen::VectorXd z(dim());
  for (int i = 0; i < dim(); ++i) z[i] = rng.normal();
  const Eigen::VectorXd step = factor_.triangularView<Eigen::Lower>() * z;
  return x + adapter_.scale() * step;
}

void AdaptiveProposal::adapt(const Eigen::VectorXd& x, double accept_prob, int iteration,
                             int n_adapt) {
  if (iteration > n_adapt) return;
  adapter_.update(accept_prob);
  if (!use_history_) return;
  const int d = dim();
  const int start = std::max(1, n_adapt / 10);
  const int restart = n_adapt / 2;
  if (iteration == restart && restart > start) {
    // Drop the initial transient; the current factor stays until the fresh
    // history is long enough.
    count_ = 0;
    mean_.setZero();
    scatter_.setZero();
  }
  if (iteration < start) return;
  ++count_;
  const Eigen::VectorXd delta = x - mean_;
  mean_ += delta / static_cast<double>(count_);
  scatter_ += delta * (x - mean_).transpose();
  const long min_count = std::max<long>(2 * d + 10, 50);
  if (count_ >= min_count && count_ % 25 == 0) refresh_factor();
}

void AdaptiveProposal::refresh_factor() {
  const int d = dim();
  Eigen::MatrixXd cov = scatter_ / static_cast<double>(count_ - 1);
  cov = 0.5 * (cov + cov.transpose()).eval();
  cov.diagonal().array() += 1e-10;
  Eigen::LLT<Eigen::MatrixXd> llt((2.38 * 2.38 / d) * cov);
  if (llt.info() != Eigen::Success) return;
  factor_ = llt.matrixL();
  if (!has_cov_) {
    has_cov_ = true;
    adapter_ = ScaleAdapter(adapter_.target(), 0.0);
  }
}

void AdaptiveProposal::set_shape(const Eigen::MatrixXd& cov) {
  const int d = dim();
  Eigen::LLT<Eigen::MatrixXd> llt((2.38 * 2.38 / d) * cov);
  if (llt.info() != Eigen::Success) return;
  factor_ = llt.matrixL();
  has_cov_ = true;
  adapter_ = ScaleAdapter(adapter_.target(), 0.0);
}

Eigen::MatrixXd curvature_covariance(const Eigen::MatrixXd& precision, double max_variance) {
  const Eigen::MatrixXd sym = 0.5 * (precision + precision.transpose());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  Eigen::VectorXd inv = eig.eigenvalues();
  for (Eigen::Index i = 0; i < inv.size(); ++i) inv[i] = std::min(1.0 / std::max(inv[i], 0.0), max_variance);
  const Eigen::MatrixXd v = eig.eigenvectors();
  const Eigen::MatrixXd cov = v * inv.asDiagonal() * v.transpose();
  return 0.5 * (cov + cov.transpose());
}

namespace {

nlohmann::json vector_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vector_json(m.row(r).transpose()));
  return rows;
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  Eigen::MatrixXd m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

}  // namespace

nlohmann::json AdaptiveProposal::to_json() const {
  return {{"initial_sd", vector_json(initial_sd_)},
          {"adapter", adapter_.to_json()},
          {"count", count_},
          {"mean", vector_json(mean_)},
          {"scatter", matrix_json(scatter_)},
          {"has_cov", has_cov_},
          {"factor", matrix_json(factor_)}};
}

void AdaptiveProposal::from_json(const nlohmann::json& j) {
  initial_sd_ = vector_from(j.at("initial_sd"));
  adapter_.from_json(j.at("adapter"));
  count_ = j.at("count").get<long>();
  mean_ = vector_from(j.at("mean"));
  scatter_ = matrix_from(j.at("scatter"));
  has_cov_ = j.at("has_cov").get<bool>();
  factor_ = matrix_from(j.at("factor"));
}

RandomMatrix draw_inverse_wishart(double df, const RandomMatrix& scale, Rng& rng) {
  constexpr int p = kNumRandom;
  if (!(df > p - 1)) throw InputError("inverse-Wishart degrees of freedom too small");
  RandomMatrix s = scale;
  Eigen::LLT<RandomMatrix> llt(s);
  if (llt.info() != Eigen::Success) {
    s.diagonal().array() += 1e-10;
    llt.compute(s);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("inverse-Wishart scale matrix is not positive definite");
    }
  }
  const RandomMatrix s_inv = llt.solve(RandomMatrix::Identity());
  const RandomMatrix l = Eigen::LLT<RandomMatrix>(0.5 * (s_inv + s_inv.transpose())).matrixL();
  RandomMatrix a = RandomMatrix::Zero();
  for (int i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(rng.chi_squared(df - i));
    for (int j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  // W = (LA)(LA)' ~ Wishart(df, scale^-1); Omega = W^-1.
  const RandomMatrix la = l * a;
  const RandomMatrix inv = la.triangularView<Eigen::Lower>().solve(RandomMatrix::Identity());
  const RandomMatrix omega = inv.transpose() * inv;
  return 0.5 * (omega + omega.transpose());
}

RandomMatrix gibbs_update_omega(const std::vector<RandomVector>& u, double tau_u,
                                const PriorConfig& prior, Rng& rng) {
  RandomMatrix scale = (prior.omega_scale / tau_u) * RandomMatrix::Identity();
  for (const auto& v : u) scale += v * v.transpose();
  const double df = kNumRandom + prior.omega_df_extra + static_cast<double>(u.size());
  return draw_inverse_wishart(df, scale, rng);
}

void gibbs_update_mixture_weights(std::span<const double> residuals, double tau_eps, double kappa,
                                  Rng& rng, std::span<double> out) {
  const double shape = 0.5 * (kappa + 1.0);
  for (std::size_t l = 0; l < residuals.size(); ++l) {
    const double r = residuals[l];
    out[l] = rng.gamma(shape, 0.5 * (kappa + r * r * tau_eps));
  }
}

std::vector<std::string> parameter_names(const ModelSpec& spec) {
  std::vector<std::string> names;
  for (int j = 0; j < kNumFixed; ++j) names.push_back("beta[" + std::to_string(j) + "]");
  for (int i = 0; i < kNumRandom; ++i) {
    for (int j = i; j < kNumRandom; ++j) {
      names.push_back("omega[" + std::to_string(i) + "][" + std::to_string(j) + "]");
    }
  }
  names.push_back("tau_eps");
  names.push_back("sigma");
  names.push_back("tau_u");
  for (Cause k : kCauses) {
    const std::string c(cause_name(k));
    for (int a = 0; a < spec.baseline[index(k)].n_basis(); ++a) {
      names.push_back("gamma_h0[" + c + "][" + std::to_string(a) + "]");
    }
    names.push_back("tau_h0[" + c + "]");
    names.push_back("gamma[" + c + "]");
    names.push_back("alpha1[" + c + "]");
    names.push_back("alpha2[" + c + "]");
  }
  names.push_back("rho");
  return names;
}

void flatten_parameters(const ModelSpec& spec, const ParameterState& p, std::vector<double>& out) {
  (void)spec;
  for (int j = 0; j < kNumFixed; ++j) out.push_back(p.beta[j]);
  for (int i = 0; i < kNumRandom; ++i) {
    for (int j = i; j < kNumRandom; ++j) out.push_back(p.omega(i, j));
  }
  out.push_back(p.tau_eps);
  out.push_back(p.sigma());
  out.push_back(p.tau_u);
  for (Cause k : kCauses) {
    const int c = index(k);
    for (int a = 0; a < p.gamma_h0[c].size(); ++a) out.push_back(p.gamma_h0[c][a]);
    out.push_back(p.tau_h0[c]);
    out.push_back(p.gamma[c]);
    out.push_back(p.alpha[c][0]);
    out.push_back(p.alpha[c][1]);
  }
  out.push_back(p.rho);
}

int PosteriorSamples::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw InputError("unknown parameter '" + name + "'");
  return static_cast<int>(it - names.begin());
}

ChainDraws PosteriorSamples::series(int param) const {
  ChainDraws out(n_chains);
  for (int c = 0; c < n_chains; ++c) {
    out[c].reserve(draws_per_chain);
    for (int d = 0; d < draws_per_chain; ++d) out[c].push_back(value(c, d, param));
  }
  return out;
}

const ParameterSummary& PosteriorSamples::summary_of(const std::string& name) const {
  for (const auto& s : summary) {
    if (s.name == name) return s;
  }
  throw InputError("no summary for parameter '" + name + "'");
}

void PosteriorSamples::summarize() {
  summary.clear();
  not_converged.clear();
  converged = true;
  for (int p = 0; p < static_cast<int>(names.size()); ++p) {
    const ChainDraws s = series(p);
    std::vector<double> pooled;
    for (const auto& c : s) pooled.insert(pooled.end(), c.begin(), c.end());
    ParameterSummary ps;
    ps.name = names[p];
    if (!pooled.empty()) {
      // Shifted by the first draw: exact for constant series.
      const double shift = pooled.front();
      double acc = 0.0;
      for (double v : pooled) acc += v - shift;
      ps.mean = shift + acc / pooled.size();
      double ss = 0.0;
      for (double v : pooled) ss += (v - ps.mean) * (v - ps.mean);
      ps.sd = pooled.size() > 1 ? std::sqrt(ss / (pooled.size() - 1)) : 0.0;
      ps.q025 = quantile(pooled, 0.025);
      ps.q50 = quantile(pooled, 0.5);
      ps.q975 = quantile(pooled, 0.975);
    }
    if (draws_per_chain >= 4) {
      ps.diagnostic = diagnose(s);
    } else {
      ps.diagnostic.rhat = NAN;
    }
    const bool monitored = ps.name.rfind("beta[", 0) == 0 || ps.name.rfind("alpha1[", 0) == 0 ||
                           ps.name.rfind("alpha2[", 0) == 0 || ps.name.rfind("gamma[", 0) == 0;
    if (monitored && !(ps.diagnostic.rhat < 1.1)) {
      converged = false;
      not_converged.push_back(ps.name);
    }
    summary.push_back(ps);
  }
}

std::shared_ptr<const PreparedData> prepare_data(const ModelSpec& spec,
                                                 std::vector<PatientRecord> data) {
  spec.validate();
  if (spec.interval_prob != IntervalProbMethod::ClosedForm) {
    throw ConfigError("the sampler evaluates interval probabilities in closed form only");
  }
  validate_dataset(data);
  auto out = std::make_shared<PreparedData>();
  out->spec = spec;
  out->data = std::move(data);
  out->layouts.reserve(out->data.size());
  for (const auto& rec : out->data) {
    out->layouts.emplace_back(spec, rec);
    out->n_measurements += static_cast<int>(rec.measurements.size());
  }
  return out;
}

Chain::Chain(std::shared_ptr<const PreparedData> data, SamplerConfig config, int chain_index)
    : data_(std::move(data)),
      config_(config),
      index_(chain_index),
      rng_(derive_seed(config.seed, static_cast<std::uint64_t>(chain_index))) {
  config_.validate();
  const auto& spec = data_->spec;
  for (Cause k : kCauses) penalty_[index(k)] = spec.penalty(k);
  const std::size_t n = data_->data.size();
  cache_.resize(n);
  proposal_cache_.resize(n);
  surv_scratch_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = data_->layouts[i];
    for (auto* c : {&cache_[i], &proposal_cache_[i]}) {
      c->m.resize(l.n_nodes());
      c->dm.resize(l.n_nodes());
      c->cum_prg.resize(l.n_intervals() + 1);
      c->resid.resize(l.n_measurements());
    }
  }

  Eigen::VectorXd beta_sd(kNumFixed);
  beta_sd << 0.05, 0.05, 0.05, 0.05, 0.005;
  beta_proposal_ = AdaptiveProposal(beta_sd, config_.target_multi);
  for (Cause k : kCauses) {
    const int nb = spec.baseline[index(k)].n_basis();
    Eigen::VectorXd sd(nb + 3);
    sd.head(nb).setConstant(0.1);
    sd.tail(3) << 0.05, 0.02, 0.05;
    block_proposal_[index(k)] = AdaptiveProposal(sd, config_.target_multi);
    block_proposal_[index(k)].use_history(false);
  }
  u_adapter_.assign(n, ScaleAdapter(config_.target_multi, 0.0));
  tau_u_adapter_ = ScaleAdapter(config_.target_scalar, std::log(0.5));
  rho_adapter_ = ScaleAdapter(config_.target_scalar, std::log(0.5));
}

void Chain::fill_trajectory(int i, const FixedVector& beta, const RandomVector& u,
                            SubjectCache& c) const {
  const auto& l = data_->layouts[i];
  l.trajectory(beta, u, c.m, c.dm, c.m_event, c.dm_event);
  l.residuals(beta, u, c.resid);
}

void Chain::fill_cause(int i, Cause k, const Eigen::VectorXd& g0, double g,
                       const Eigen::Vector2d& a, SubjectCache& c) const {
  const auto& l = data_->layouts[i];
  if (k == Cause::Progression) {
    l.cumhaz_progression(g0, g, a, c.m, c.dm, c.cum_prg);
  } else {
    l.cumhaz_treatment(g0, g, a, c.m, c.dm, c.m_event, c.dm_event, c.cum_trt, c.log_h_trt);
  }
}

double Chain::survival_value(int i, double rho, std::span<const double> cum_prg, double cum_trt,
                             double log_h_trt) {
  const int n = data_->layouts[i].n_intervals();
  log_a_.resize(n);
  for (int j = 1; j <= n; ++j) log_a_[j - 1] = log_interval_prob_from_cumhaz(cum_prg[j - 1], cum_prg[j]);
  SurvivalTerms t;
  t.delta = data_->layouts[i].delta();
  t.log_interval_probs = log_a_;
  t.cumhaz_prg_last = cum_prg[n];
  t.cumhaz_trt_end = cum_trt;
  t.log_hazard_trt_end = log_h_trt;
  return survival_log_factor(t, rho);
}

double Chain::weighted_sq(int i, const SubjectCache& c) const {
  const auto& lam = state_.lambda[i];
  double s = 0.0;
  for (std::size_t l = 0; l < c.resid.size(); ++l) s += lam[l] * c.resid[l] * c.resid[l];
  return s;
}

void Chain::refresh_all() {
  const int n = static_cast<int>(cache_.size());
  for (int i = 0; i < n; ++i) {
    auto& c = cache_[i];
    fill_trajectory(i, state_.beta, state_.u[i], c);
    for (Cause k : kCauses) {
      const int ki = index(k);
      fill_cause(i, k, state_.gamma_h0[ki], state_.gamma[ki], state_.alpha[ki], c);
    }
    c.surv = survival_value(i, state_.rho, c);
  }
}

void Chain::draw_initial_state() {
  const auto& spec = data_->spec;
  const auto& data = data_->data;
  const std::size_t n = data.size();
  const auto& pr = spec.priors;
  state_ = make_parameter_state(spec, n);

  // Pooled least squares for the fixed effects.
  const int n_meas = data_->n_measurements;
  Eigen::MatrixXd w(n_meas, kNumFixed);
  Eigen::VectorXd y(n_meas);
  int row = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = data_->layouts[i];
    for (int m = 0; m < l.n_measurements(); ++m) {
      w.row(row) = l.w_row(m).transpose();
      y[row] = l.y(m);
      ++row;
    }
  }
  FixedVector beta = FixedVector::Zero();
  double resid_var = 1.0;
  if (n_meas > kNumFixed) {
    const Eigen::VectorXd b = w.colPivHouseholderQr().solve(y);
    beta = b;
    resid_var = std::max((y - w * b).squaredNorm() / (n_meas - kNumFixed), 1e-4);
  }
  for (int j = 0; j < kNumFixed; ++j) beta[j] += 0.05 * (1.0 + std::abs(beta[j])) * rng_.normal();
  state_.beta = beta;
  state_.omega = RandomMatrix::Identity() * (0.5 * std::exp(0.3 * rng_.normal()));
  state_.tau_u = std::exp(0.5 * rng_.normal());
  state_.tau_eps = std::exp(0.3 * rng_.normal()) / resid_var;
  state_.lambda.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) state_.lambda[i].assign(data[i].measurements.size(), 1.0);

  // Hazard levels from crude event rates, covariate effects from shrunk prior
  // draws.
  double follow_up = 0.0;
  std::array<double, 2> events{0.0, 0.0};
  double mean_log_psad = 0.0;
  for (const auto& rec : data) {
    follow_up += rec.terminal_time;
    if (rec.delta == EventStatus::Progression) events[0] += 1.0;
    if (rec.delta == EventStatus::Treatment) events[1] += 1.0;
    mean_log_psad += rec.log_psad;
  }
  mean_log_psad /= static_cast<double>(n);
  double m_sum = 0.0;
  double dm_sum = 0.0;
  long nodes = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fill_trajectory(static_cast<int>(i), state_.beta, state_.u[i], cache_[i]);
    for (std::size_t q = 0; q < cache_[i].m.size(); ++q) {
      m_sum += cache_[i].m[q];
      dm_sum += cache_[i].dm[q];
      ++nodes;
    }
  }
  const double m_bar = nodes > 0 ? m_sum / nodes : 0.0;
  const double dm_bar = nodes > 0 ? dm_sum / nodes : 0.0;
  for (Cause k : kCauses) {
    const int c = index(k);
    const double rate = std::max(events[c], 1.0) / std::max(follow_up, 1e-3);
    const double alpha_sd = 0.1 * std::sqrt(pr.normal_variance(pr.alpha_var));
    const double gamma_sd = 0.1 * std::sqrt(pr.normal_variance(pr.gamma_var));
    state_.alpha[c] = Eigen::Vector2d(0.1 * alpha_sd * rng_.normal(), alpha_sd * rng_.normal());
    state_.gamma[c] = gamma_sd * rng_.normal();
    const double level = std::log(rate) - state_.alpha[c][0] * m_bar - state_.alpha[c][1] * dm_bar -
                         state_.gamma[c] * mean_log_psad;
    const int nb = spec.baseline[c].n_basis();
    state_.gamma_h0[c].resize(nb);
    for (int a = 0; a < nb; ++a) state_.gamma_h0[c][a] = level + 0.1 * rng_.normal();
    state_.tau_h0[c] = rng_.gamma(pr.tau_h0_shape, pr.tau_h0_rate);
  }
  if (spec.sensitivity.is_fixed()) {
    state_.rho = spec.sensitivity.value;
  } else {
    const auto& s = spec.sensitivity;
    state_.rho = s.lo + (s.hi - s.lo) * rng_.uniform();
  }
}

void Chain::initialize() {
  std::string last;
  for (int attempt = 0; attempt < 10; ++attempt) {
    draw_initial_state();
    refresh_all();
    const double lp = log_posterior();
    if (std::isfinite(lp)) {
      iteration_ = 0;
      return;
    }
    last = "log posterior " + std::to_string(lp);
  }
  throw NumericalError("chain " + std::to_string(index_) +
                       ": no finite starting point after 10 attempts (" + last + ")");
}

double Chain::log_posterior() const {
  return mcicjm::log_posterior(data_->spec, state_, data_->data);
}

void Chain::update_mixture() {
  const double kappa = data_->spec.t_dof;
  for (std::size_t i = 0; i < cache_.size(); ++i) {
    gibbs_update_mixture_weights(cache_[i].resid, state_.tau_eps, kappa, rng_, state_.lambda[i]);
  }
}

void Chain::update_tau_eps() {
  double s = 0.0;
  for (std::size_t i = 0; i < cache_.size(); ++i) s += weighted_sq(static_cast<int>(i), cache_[i]);
  const auto& pr = data_->spec.priors;
  state_.tau_eps = rng_.gamma(pr.tau_eps_shape + 0.5 * data_->n_measurements, pr.tau_eps_rate + 0.5 * s);
}

void Chain::update_random_effects() {
  const auto& layouts = data_->layouts;
  const Eigen::LLT<RandomMatrix> omega_llt(state_.omega);
  const RandomMatrix omega_inv = omega_llt.solve(RandomMatrix::Identity());
  const bool adapting = iteration_ <= config_.n_adapt;
  for (std::size_t ii = 0; ii < cache_.size(); ++ii) {
    const int i = static_cast<int>(ii);
    const auto& l = layouts[i];
    // Longitudinal-plus-prior conditional N(mu, Q^-1) under the current weights.
    RandomMatrix q = omega_inv;
    RandomVector b = RandomVector::Zero();
    for (int m = 0; m < l.n_measurements(); ++m) {
      const RandomVector z = l.z_row(m);
      const double wgt = state_.lambda[i][m] * state_.tau_eps;
      q.noalias() += wgt * z * z.transpose();
      b += wgt * z * (l.y(m) - l.w_row(m).dot(state_.beta));
    }
    const Eigen::LLT<RandomMatrix> q_llt(q);
    const RandomVector mu = q_llt.solve(b);
    const RandomMatrix lq = q_llt.matrixL();
    auto draw_offset = [&]() {
      RandomVector z;
      for (int j = 0; j < kNumRandom; ++j) z[j] = rng_.normal();
      return RandomVector(lq.transpose().triangularView<Eigen::Upper>().solve(z));
    };
    auto gauss = [&](const RandomVector& u) {
      const RandomVector d = u - mu;
      return -0.5 * d.dot(q * d);
    };
    auto evaluate = [&](const RandomVector& u) {
      fill_trajectory(i, state_.beta, u, scratch_);
      for (Cause k : kCauses) {
        const int c = index(k);
        fill_cause(i, k, state_.gamma_h0[c], state_.gamma[c], state_.alpha[c], scratch_);
      }
      scratch_.surv = survival_value(i, state_.rho, scratch_);
      return scratch_.surv;
    };
    auto sized = [&](SubjectCache& s) {
      s.m.resize(l.n_nodes());
      s.dm.resize(l.n_nodes());
      s.cum_prg.resize(l.n_intervals() + 1);
      s.resid.resize(l.n_measurements());
    };

    // Independence proposal from the Gaussian part: the ratio is the survival
    // factor alone.
    {
      sized(scratch_);
      const RandomVector prop = mu + draw_offset();
      const double surv = evaluate(prop);
      const double log_ratio = surv - cache_[i].surv;
      if (!std::isnan(log_ratio) && surv != kNegInf &&
          (log_ratio >= 0.0 || std::log(rng_.uniform()) < log_ratio)) {
        state_.u[i] = prop;
        std::swap(cache_[i], scratch_);
      }
    }
    // Random walk shaped by the same conditional covariance.
    {
      sized(scratch_);
      const RandomVector prop = state_.u[i] + u_adapter_[i].scale() * draw_offset();
      const double surv = evaluate(prop);
      const double log_ratio = gauss(prop) + surv - (gauss(state_.u[i]) + cache_[i].surv);
      double accept_prob = 0.0;
      ++u_count_.tried;
      if (!std::isnan(log_ratio) && surv != kNegInf) {
        accept_prob = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
        if (log_ratio >= 0.0 || std::log(rng_.uniform()) < log_ratio) {
          state_.u[i] = prop;
          std::swap(cache_[i], scratch_);
          ++u_count_.accepted;
        }
      }
      if (adapting) u_adapter_[i].update(accept_prob);
    }
  }
}

void Chain::update_beta() {
  const auto& spec = data_->spec;
  const int n = static_cast<int>(cache_.size());
  auto target_from = [&](const std::vector<SubjectCache>& caches, const FixedVector& beta) {
    double s = log_prior_beta(spec, beta);
    for (int i = 0; i < n; ++i) {
      s += -0.5 * state_.tau_eps * weighted_sq(i, caches[i]) + caches[i].surv;
    }
    return s;
  };
  double current = target_from(cache_, state_.beta);
  Eigen::VectorXd x = state_.beta;
  const Eigen::VectorXd prop = beta_proposal_.propose(x, rng_);
  auto target = [&](const Eigen::VectorXd& v) {
    const FixedVector beta = v;
    for (int i = 0; i < n; ++i) {
      auto& c = proposal_cache_[i];
      fill_trajectory(i, beta, state_.u[i], c);
      for (Cause k : kCauses) {
        const int ki = index(k);
        fill_cause(i, k, state_.gamma_h0[ki], state_.gamma[ki], state_.alpha[ki], c);
      }
      c.surv = survival_value(i, state_.rho, c);
    }
    return target_from(proposal_cache_, beta);
  };
  const MhOutcome out = mh_update_block(x, current, prop, target, rng_);
  ++beta_count_.tried;
  if (out.accepted) {
    state_.beta = x;
    std::swap(cache_, proposal_cache_);
    ++beta_count_.accepted;
  }
  beta_proposal_.adapt(state_.beta, out.accept_prob, iteration_, config_.n_adapt);
}

void Chain::shift_location() {
  // Exact conditional draw of delta for beta + delta with u_i - A_i delta,
  // A_i = [I | (age_i - center) e_0]: a move that leaves every trajectory
  // unchanged.
  const auto& spec = data_->spec;
  const double var = spec.priors.normal_variance(spec.priors.beta_var);
  const Eigen::LLT<RandomMatrix> omega_llt(state_.omega);
  const RandomMatrix omega_inv = omega_llt.solve(RandomMatrix::Identity());
  FixedMatrix prec = FixedMatrix::Identity() / var;
  FixedVector lin = -state_.beta / var;
  Eigen::Matrix<double, kNumRandom, kNumFixed> a = Eigen::Matrix<double, kNumRandom, kNumFixed>::Zero();
  a.leftCols<kNumRandom>().setIdentity();
  for (std::size_t i = 0; i < state_.u.size(); ++i) {
    a(0, kNumRandom) = data_->data[i].age - spec.age_center;
    const Eigen::Matrix<double, kNumFixed, kNumRandom> at_omega = a.transpose() * omega_inv;
    prec.noalias() += at_omega * a;
    lin.noalias() += at_omega * state_.u[i];
  }
  const Eigen::LLT<FixedMatrix> llt(prec);
  FixedVector z;
  for (int j = 0; j < kNumFixed; ++j) z[j] = rng_.normal();
  const FixedMatrix lp = llt.matrixL();
  const FixedVector delta =
      llt.solve(lin) + FixedVector(lp.transpose().triangularView<Eigen::Upper>().solve(z));
  state_.beta += delta;
  for (std::size_t i = 0; i < state_.u.size(); ++i) {
    a(0, kNumRandom) = data_->data[i].age - spec.age_center;
    state_.u[i] -= a * delta;
  }
  refresh_all();
}

void Chain::update_omega() {
  state_.omega = gibbs_update_omega(state_.u, state_.tau_u, data_->spec.priors, rng_);
}

void Chain::update_tau_u() {
  const auto& spec = data_->spec;
  auto target = [&](const Eigen::VectorXd& v) {
    const double tau = std::exp(v[0]);
    return log_gamma_density(tau, spec.priors.tau_u_shape, spec.priors.tau_u_rate) +
           log_prior_omega(spec, state_.omega, tau) + v[0];
  };
  Eigen::VectorXd x(1);
  x[0] = std::log(state_.tau_u);
  double current = target(x);
  const bool adapting = iteration_ <= config_.n_adapt;
  for (int rep = 0; rep < 3; ++rep) {
    Eigen::VectorXd prop = x;
    prop[0] += tau_u_adapter_.scale() * rng_.normal();
    const MhOutcome out = mh_update_block(x, current, prop, target, rng_);
    ++tau_u_count_.tried;
    tau_u_count_.accepted += out.accepted;
    if (adapting) tau_u_adapter_.update(out.accept_prob);
  }
  state_.tau_u = std::exp(x[0]);
}

Eigen::VectorXd Chain::survival_block(Cause k) const {
  const int c = index(k);
  const int nb = static_cast<int>(state_.gamma_h0[c].size());
  Eigen::VectorXd x(nb + 3);
  x.head(nb) = state_.gamma_h0[c];
  x[nb] = state_.gamma[c];
  x[nb + 1] = state_.alpha[c][0];
  x[nb + 2] = state_.alpha[c][1];
  return x;
}

double Chain::survival_block_target(Cause k, const Eigen::VectorXd& v) {
  const auto& spec = data_->spec;
  const int c = index(k);
  const int nb = static_cast<int>(state_.gamma_h0[c].size());
  const Eigen::VectorXd g0 = v.head(nb);
  const double g = v[nb];
  const Eigen::Vector2d a(v[nb + 1], v[nb + 2]);
  double s = log_prior_survival_block(spec, k, g0, state_.tau_h0[c], g, a, penalty_[c]);
  for (std::size_t i = 0; i < cache_.size(); ++i) {
    auto& pc = proposal_cache_[i];
    const auto& cc = cache_[i];
    // Only the updated cause's arrays live in the proposal cache; the
    // trajectory is read from the current cache.
    const auto& l = data_->layouts[i];
    const int ii = static_cast<int>(i);
    if (k == Cause::Progression) {
      l.cumhaz_progression(g0, g, a, cc.m, cc.dm, pc.cum_prg);
      pc.surv = survival_value(ii, state_.rho, pc.cum_prg, cc.cum_trt, cc.log_h_trt);
    } else {
      l.cumhaz_treatment(g0, g, a, cc.m, cc.dm, cc.m_event, cc.dm_event, pc.cum_trt, pc.log_h_trt);
      pc.surv = survival_value(ii, state_.rho, cc.cum_prg, pc.cum_trt, pc.log_h_trt);
    }
    s += pc.surv;
  }
  return s;
}

void Chain::shape_survival_block(Cause k) {
  const Eigen::VectorXd x = survival_block(k);
  const Eigen::MatrixXd h =
      numerical_hessian([&](const Eigen::VectorXd& v) { return survival_block_target(k, v); }, x);
  if (!h.allFinite()) return;
  block_proposal_[index(k)].set_shape(curvature_covariance(-h));
}

void Chain::update_survival_block(Cause k) {
  const int c = index(k);
  const int nb = static_cast<int>(state_.gamma_h0[c].size());
  const int n = static_cast<int>(cache_.size());
  Eigen::VectorXd x = survival_block(k);
  double current = log_prior_survival_block(data_->spec, k, state_.gamma_h0[c], state_.tau_h0[c],
                                            state_.gamma[c], state_.alpha[c], penalty_[c]);
  for (int i = 0; i < n; ++i) current += cache_[i].surv;

  const Eigen::VectorXd prop = block_proposal_[c].propose(x, rng_);
  const MhOutcome out = mh_update_block(
      x, current, prop, [&](const Eigen::VectorXd& v) { return survival_block_target(k, v); }, rng_);
  ++block_count_[c].tried;
  if (out.accepted) {
    ++block_count_[c].accepted;
    state_.gamma_h0[c] = x.head(nb);
    state_.gamma[c] = x[nb];
    state_.alpha[c] = Eigen::Vector2d(x[nb + 1], x[nb + 2]);
    for (int i = 0; i < n; ++i) {
      auto& pc = proposal_cache_[i];
      auto& cc = cache_[i];
      if (k == Cause::Progression) {
        std::swap(cc.cum_prg, pc.cum_prg);
      } else {
        cc.cum_trt = pc.cum_trt;
        cc.log_h_trt = pc.log_h_trt;
      }
      cc.surv = pc.surv;
    }
  }
  block_proposal_[c].adapt(x, out.accept_prob, iteration_, config_.n_adapt);
}

void Chain::update_tau_h0(Cause k) {
  const auto& pr = data_->spec.priors;
  const int c = index(k);
  const auto& g = state_.gamma_h0[c];
  const double quad = g.dot(penalty_[c].matrix * g);
  state_.tau_h0[c] =
      rng_.gamma(pr.tau_h0_shape + 0.5 * penalty_[c].rank_term, pr.tau_h0_rate + 0.5 * quad);
}

void Chain::update_rho() {
  const auto& s = data_->spec.sensitivity;
  const int n = static_cast<int>(cache_.size());
  auto logistic = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  auto target = [&](const Eigen::VectorXd& v) {
    const double p = logistic(v[0]);
    const double rho = s.lo + (s.hi - s.lo) * p;
    double t = std::log(p) + std::log1p(-p);
    for (int i = 0; i < n; ++i) {
      surv_scratch_[i] = survival_value(i, rho, cache_[i]);
      t += surv_scratch_[i];
    }
    return t;
  };
  const double p0 = (state_.rho - s.lo) / (s.hi - s.lo);
  Eigen::VectorXd x(1);
  x[0] = std::log(p0) - std::log1p(-p0);
  double current = std::log(p0) + std::log1p(-p0);
  for (int i = 0; i < n; ++i) current += cache_[i].surv;
  Eigen::VectorXd prop = x;
  prop[0] += rho_adapter_.scale() * rng_.normal();
  const MhOutcome out = mh_update_block(x, current, prop, target, rng_);
  ++rho_count_.tried;
  if (out.accepted) {
    ++rho_count_.accepted;
    state_.rho = s.lo + (s.hi - s.lo) * logistic(x[0]);
    for (int i = 0; i < n; ++i) cache_[i].surv = surv_scratch_[i];
  }
  if (iteration_ <= config_.n_adapt) rho_adapter_.update(out.accept_prob);
}

void Chain::record_draw() {
  flatten_parameters(data_->spec, state_, draws_);
  draw_iterations_.push_back(iteration_);
}

void Chain::step() {
  if (done()) return;
  ++iteration_;
  update_mixture();
  update_tau_eps();
  update_random_effects();
  update_beta();
  shift_location();
  update_omega();
  update_tau_u();
  const int na = config_.n_adapt;
  // Survival blocks are reshaped from the local curvature during the first
  // 80% of adaptation; the rest tunes only their scale.
  const int every = std::max(1, na / 10);
  const bool shaping = iteration_ <= 8 * na / 10 &&
                       (iteration_ == 1 || iteration_ == na / 20 || iteration_ % every == 0);
  for (Cause k : kCauses) {
    if (shaping) shape_survival_block(k);
    for (int r = 0; r < config_.block_repeats; ++r) update_survival_block(k);
    update_tau_h0(k);
  }
  if (!data_->spec.sensitivity.is_fixed()) update_rho();
  if (iteration_ > config_.n_adapt && (iteration_ - config_.n_adapt) % config_.thin == 0) {
    record_draw();
  }
}

void Chain::run(int n) {
  for (int t = 0; t < n && !done(); ++t) step();
}

AcceptanceRates Chain::acceptance() const {
  AcceptanceRates a;
  a.beta = beta_count_.rate();
  a.random_effects = u_count_.rate();
  a.survival_block[0] = block_count_[0].rate();
  a.survival_block[1] = block_count_[1].rate();
  a.tau_u = tau_u_count_.rate();
  a.rho = rho_count_.rate();
  return a;
}

nlohmann::json Chain::checkpoint() const {
  using nlohmann::json;
  json st;
  st["beta"] = vector_json(state_.beta);
  json u = json::array();
  for (const auto& v : state_.u) u.push_back(vector_json(v));
  st["u"] = u;
  st["omega"] = matrix_json(state_.omega);
  st["tau_eps"] = state_.tau_eps;
  st["tau_u"] = state_.tau_u;
  st["gamma_h0"] = {vector_json(state_.gamma_h0[0]), vector_json(state_.gamma_h0[1])};
  st["tau_h0"] = state_.tau_h0;
  st["gamma"] = state_.gamma;
  st["alpha"] = {vector_json(state_.alpha[0]), vector_json(state_.alpha[1])};
  st["rho"] = state_.rho;
  st["lambda"] = state_.lambda;

  json adapt;
  adapt["beta"] = beta_proposal_.to_json();
  adapt["blocks"] = {block_proposal_[0].to_json(), block_proposal_[1].to_json()};
  json us = json::array();
  for (const auto& a : u_adapter_) us.push_back(a.to_json());
  adapt["u"] = us;
  adapt["tau_u"] = tau_u_adapter_.to_json();
  adapt["rho"] = rho_adapter_.to_json();

  auto counter = [](const Counter& c) { return json{c.tried, c.accepted}; };
  json counts = {{"beta", counter(beta_count_)},
                 {"u", counter(u_count_)},
                 {"tau_u", counter(tau_u_count_)},
                 {"rho", counter(rho_count_)},
                 {"blocks", {counter(block_count_[0]), counter(block_count_[1])}}};

  return {{"format_version", 1},
          {"chain", index_},
          {"seed", config_.seed},
          {"iteration", iteration_},
          {"rng", rng_.state()},
          {"state", st},
          {"adaptation", adapt},
          {"counts", counts},
          {"draws", draws_},
          {"draw_iterations", draw_iterations_}};
}

void Chain::restore(const nlohmann::json& j) {
  try {
    if (j.at("chain").get<int>() != index_ || j.at("seed").get<std::uint64_t>() != config_.seed) {
      throw InputError("checkpoint belongs to a different chain or seed");
    }
    const std::size_t n = data_->data.size();
    const auto& st = j.at("state");
    ParameterState p = make_parameter_state(data_->spec, n);
    p.beta = vector_from(st.at("beta"));
    const auto& u = st.at("u");
    if (u.size() != n) throw InputError("checkpoint has a different number of subjects");
    for (std::size_t i = 0; i < n; ++i) p.u[i] = vector_from(u[i]);
    p.omega = matrix_from(st.at("omega"));
    p.tau_eps = st.at("tau_eps").get<double>();
    p.tau_u = st.at("tau_u").get<double>();
    for (int c = 0; c < 2; ++c) {
      p.gamma_h0[c] = vector_from(st.at("gamma_h0")[c]);
      p.alpha[c] = vector_from(st.at("alpha")[c]);
    }
    p.tau_h0 = st.at("tau_h0").get<std::array<double, 2>>();
    p.gamma = st.at("gamma").get<std::array<double, 2>>();
    p.rho = st.at("rho").get<double>();
    p.lambda = st.at("lambda").get<std::vector<std::vector<double>>>();
    state_ = std::move(p);

    const auto& adapt = j.at("adaptation");
    beta_proposal_.from_json(adapt.at("beta"));
    for (int c = 0; c < 2; ++c) block_proposal_[c].from_json(adapt.at("blocks")[c]);
    for (std::size_t i = 0; i < n; ++i) u_adapter_[i].from_json(adapt.at("u")[i]);
    tau_u_adapter_.from_json(adapt.at("tau_u"));
    rho_adapter_.from_json(adapt.at("rho"));

    auto counter = [](const nlohmann::json& c) { return Counter{c[0].get<long>(), c[1].get<long>()}; };
    const auto& counts = j.at("counts");
    beta_count_ = counter(counts.at("beta"));
    u_count_ = counter(counts.at("u"));
    tau_u_count_ = counter(counts.at("tau_u"));
    rho_count_ = counter(counts.at("rho"));
    for (int c = 0; c < 2; ++c) block_count_[c] = counter(counts.at("blocks")[c]);

    rng_.set_state(j.at("rng").get<std::string>());
    iteration_ = j.at("iteration").get<int>();
    draws_ = j.at("draws").get<std::vector<double>>();
    draw_iterations_ = j.at("draw_iterations").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed checkpoint: ") + e.what());
  }
  refresh_all();
}

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("MCICJM_WORKERS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return v;
    } catch (const std::exception&) {
      throw ConfigError("MCICJM_WORKERS must be a positive integer");
    }
    throw ConfigError("MCICJM_WORKERS must be a positive integer");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

PosteriorSamples run_chains(const ModelSpec& spec, const std::vector<PatientRecord>& data,
                            const SamplerConfig& config) {
  config.validate();
  const auto prepared = prepare_data(spec, data);
  std::vector<std::unique_ptr<Chain>> chains;
  for (int c = 0; c < config.n_chains; ++c) {
    chains.push_back(std::make_unique<Chain>(prepared, config, c));
  }
  std::vector<std::exception_ptr> errors(config.n_chains);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int c = next++; c < config.n_chains; c = next++) {
      try {
        chains[c]->initialize();
        chains[c]->run(config.n_iterations);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  const int n_workers = std::min(resolve_workers(config.workers), config.n_chains);
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  PosteriorSamples out;
  out.names = parameter_names(spec);
  out.n_chains = config.n_chains;
  out.draws_per_chain = config.draws_per_chain();
  out.iterations = chains.front()->draw_iterations();
  for (const auto& ch : chains) {
    out.draws.push_back(ch->draws());
    out.acceptance.push_back(ch->acceptance());
  }
  out.summarize();
  return out;
}

}  // namespace mcicjm
