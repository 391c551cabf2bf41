#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "mcicjm/diagnostics.hpp"
#include "mcicjm/likelihood.hpp"
#include "mcicjm/model.hpp"
#include "mcicjm/random.hpp"

namespace mcicjm {

struct SamplerConfig {
  int n_chains = 3;
  int n_iterations = 10000;  // total per chain, adaptation included
  int thin = 10;
  int n_adapt = 2000;  // adaptation/burn-in; no draws kept
  std::uint64_t seed = 1;
  double target_multi = 0.234;
  double target_scalar = 0.44;
  int block_repeats = 3;  // survival-block updates per cause and sweep
  int workers = 0;        // 0: MCICJM_WORKERS or the hardware thread count

  // Throws ConfigError.
  void validate() const;
  int draws_per_chain() const { return (n_iterations - n_adapt) / thin; }
};

// Robbins-Monro adaptation of a log proposal scale toward a target acceptance.
class ScaleAdapter {
 public:
  explicit ScaleAdapter(double target = 0.44, double log_scale = 0.0)
      : target_(target), log_scale_(log_scale) {}
  void update(double accept_prob);
  void reset_gain() { steps_ = 0; }
  double scale() const { return std::exp(log_scale_); }
  double log_scale() const { return log_scale_; }
  double target() const { return target_; }

  nlohmann::json to_json() const;
  void from_json(const nlohmann::json& j);

 private:
  double target_;
  double log_scale_;
  long steps_ = 0;
};

// Gaussian random-walk proposal for a block. Starts from a diagonal shape and
// switches to the scaled empirical covariance of the block's own history
// once enough adaptation draws are in; frozen after adaptation.
class AdaptiveProposal {
 public:
  AdaptiveProposal() = default;
  AdaptiveProposal(Eigen::VectorXd initial_sd, double target);

  int dim() const { return static_cast<int>(initial_sd_.size()); }
  Eigen::VectorXd propose(const Eigen::VectorXd& x, Rng& rng) const;
  // iteration is 1-based; no-op once iteration > n_adapt.
  void adapt(const Eigen::VectorXd& x, double accept_prob, int iteration, int n_adapt);
  // Replaces the shape with the optimal-scaling factor of cov and restarts the
  // scale adaptation.
  void set_shape(const Eigen::MatrixXd& cov);
  bool using_covariance() const { return has_cov_; }
  // With history off only the scale adapts; the shape comes from set_shape.
  void use_history(bool on) { use_history_ = on; }
  double scale() const { return adapter_.scale(); }

  nlohmann::json to_json() const;
  void from_json(const nlohmann::json& j);

 private:
  void refresh_factor();

  Eigen::VectorXd initial_sd_;
  ScaleAdapter adapter_;
  long count_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd scatter_;
  bool has_cov_ = false;
  bool use_history_ = true;
  Eigen::MatrixXd factor_;  // lower Cholesky factor of the shape matrix
};

// Central-difference Hessian of f at x, step 1e-3 * max(1, |x_i|).
template <class F>
Eigen::MatrixXd numerical_hessian(F&& f, const Eigen::VectorXd& x) {
  const Eigen::Index d = x.size();
  Eigen::VectorXd h(d);
  for (Eigen::Index i = 0; i < d; ++i) h[i] = 1e-3 * std::max(1.0, std::abs(x[i]));
  Eigen::MatrixXd out(d, d);
  const double f0 = f(x);
  Eigen::VectorXd y = x;
  for (Eigen::Index i = 0; i < d; ++i) {
    y[i] = x[i] + h[i];
    const double up = f(y);
    y[i] = x[i] - h[i];
    const double down = f(y);
    y[i] = x[i];
    out(i, i) = (up - 2.0 * f0 + down) / (h[i] * h[i]);
    for (Eigen::Index j = 0; j < i; ++j) {
      double s = 0.0;
      for (int si : {1, -1}) {
        for (int sj : {1, -1}) {
          y[i] = x[i] + si * h[i];
          y[j] = x[j] + sj * h[j];
          s += si * sj * f(y);
        }
      }
      y[i] = x[i];
      y[j] = x[j];
      out(i, j) = out(j, i) = s / (4.0 * h[i] * h[j]);
    }
  }
  return out;
}

// Covariance from a precision estimate: eigenvalues floored at zero and
// variances capped at max_variance.
Eigen::MatrixXd curvature_covariance(const Eigen::MatrixXd& precision, double max_variance = 100.0);

struct MhOutcome {
  bool accepted = false;
  double accept_prob = 0.0;
};

// One Metropolis step with a symmetric proposal. log_target returns the log
// density (plus any Jacobian) at the proposal; -inf or NaN is rejected.
template <class LogTarget>
MhOutcome mh_update_block(Eigen::VectorXd& x, double& current_log_target,
                          const Eigen::VectorXd& proposal, LogTarget&& log_target, Rng& rng) {
  MhOutcome out;
  const double lt = log_target(proposal);
  if (std::isnan(lt) || lt == -INFINITY) return out;
  const double log_ratio = lt - current_log_target;
  out.accept_prob = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
  if (log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio) {
    x = proposal;
    current_log_target = lt;
    out.accepted = true;
  }
  return out;
}

// Draw from IW(df, scale) via the Bartlett decomposition of the inverse.
RandomMatrix draw_inverse_wishart(double df, const RandomMatrix& scale, Rng& rng);

// Conjugate draw of Omega given the random effects: IW(df + n, scale + sum u u').
RandomMatrix gibbs_update_omega(const std::vector<RandomVector>& u, double tau_u,
                                const PriorConfig& prior, Rng& rng);

// lambda_l ~ Gamma((kappa + 1) / 2, (kappa + r_l^2 tau_eps) / 2).
void gibbs_update_mixture_weights(std::span<const double> residuals, double tau_eps, double kappa,
                                  Rng& rng, std::span<double> out);

// Monitored scalar parameters in output order.
std::vector<std::string> parameter_names(const ModelSpec& spec);
void flatten_parameters(const ModelSpec& spec, const ParameterState& p, std::vector<double>& out);

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q50 = 0.0;
  double q975 = 0.0;
  ConvergenceDiagnostic diagnostic;
};

struct AcceptanceRates {
  double beta = 0.0;
  double random_effects = 0.0;
  double survival_block[2] = {0.0, 0.0};
  double tau_u = 0.0;
  double rho = 0.0;
};

struct PosteriorSamples {
  std::vector<std::string> names;
  int n_chains = 0;
  int draws_per_chain = 0;
  std::vector<int> iterations;             // iteration of each kept draw
  std::vector<std::vector<double>> draws;  // per chain, draw-major
  std::vector<AcceptanceRates> acceptance;  // per chain
  std::vector<ParameterSummary> summary;
  bool converged = true;  // all R-hat of beta, alpha, gamma below 1.1
  std::vector<std::string> not_converged;

  double value(int chain, int draw, int param) const {
    return draws[chain][static_cast<std::size_t>(draw) * names.size() + param];
  }
  int index_of(const std::string& name) const;
  ChainDraws series(int param) const;
  const ParameterSummary& summary_of(const std::string& name) const;
  void summarize();
};

// Spec, data and per-subject layouts shared read-only by all chains.
struct PreparedData {
  ModelSpec spec;
  std::vector<PatientRecord> data;
  std::vector<SubjectLayout> layouts;
  int n_measurements = 0;
};
std::shared_ptr<const PreparedData> prepare_data(const ModelSpec& spec,
                                                 std::vector<PatientRecord> data);

class Chain {
 public:
  Chain(std::shared_ptr<const PreparedData> data, SamplerConfig config, int index);

  // Dispersed starting state; retries up to 10 times on a non-finite
  // posterior, then throws NumericalError.
  void initialize();
  // Continues up to min(n more iterations, the configured total).
  void run(int n);
  void step();

  int iteration() const { return iteration_; }
  bool done() const { return iteration_ >= config_.n_iterations; }
  const ParameterState& state() const { return state_; }
  const std::vector<double>& draws() const { return draws_; }
  const std::vector<int>& draw_iterations() const { return draw_iterations_; }
  AcceptanceRates acceptance() const;
  // Full log posterior with the marginal t longitudinal density.
  double log_posterior() const;

  nlohmann::json checkpoint() const;
  void restore(const nlohmann::json& j);

 private:
  struct SubjectCache {
    std::vector<double> m, dm;
    double m_event = 0.0;
    double dm_event = 0.0;
    std::vector<double> cum_prg;
    double cum_trt = 0.0;
    double log_h_trt = 0.0;
    double surv = 0.0;
    std::vector<double> resid;
  };

  void draw_initial_state();
  void refresh_all();
  void fill_trajectory(int i, const FixedVector& beta, const RandomVector& u, SubjectCache& c) const;
  void fill_cause(int i, Cause k, const Eigen::VectorXd& g0, double g, const Eigen::Vector2d& a,
                  SubjectCache& c) const;
  double survival_value(int i, double rho, std::span<const double> cum_prg, double cum_trt,
                        double log_h_trt);
  double survival_value(int i, double rho, const SubjectCache& c) {
    return survival_value(i, rho, c.cum_prg, c.cum_trt, c.log_h_trt);
  }
  double weighted_sq(int i, const SubjectCache& c) const;

  void update_mixture();
  void update_tau_eps();
  void update_random_effects();
  void update_beta();
  void shift_location();
  void update_omega();
  void update_tau_u();
  Eigen::VectorXd survival_block(Cause k) const;
  double survival_block_target(Cause k, const Eigen::VectorXd& v);
  void shape_survival_block(Cause k);
  void update_survival_block(Cause k);
  void update_tau_h0(Cause k);
  void update_rho();
  void record_draw();

  std::shared_ptr<const PreparedData> data_;
  SamplerConfig config_;
  int index_;
  Rng rng_;
  int iteration_ = 0;
  ParameterState state_;
  std::vector<SubjectCache> cache_;
  std::vector<SubjectCache> proposal_cache_;
  SubjectCache scratch_;
  std::vector<double> surv_scratch_;
  std::vector<double> log_a_;
  std::array<PenaltyMatrix, 2> penalty_;

  AdaptiveProposal beta_proposal_;
  std::array<AdaptiveProposal, 2> block_proposal_;
  std::vector<ScaleAdapter> u_adapter_;
  ScaleAdapter tau_u_adapter_;
  ScaleAdapter rho_adapter_;

  struct Counter {
    long tried = 0;
    long accepted = 0;
    double rate() const { return tried == 0 ? 0.0 : static_cast<double>(accepted) / tried; }
  };
  Counter beta_count_, u_count_, tau_u_count_, rho_count_;
  std::array<Counter, 2> block_count_;

  std::vector<double> draws_;
  std::vector<int> draw_iterations_;
};

// Runs all chains (in parallel when workers allow) and summarizes.
PosteriorSamples run_chains(const ModelSpec& spec, const std::vector<PatientRecord>& data,
                            const SamplerConfig& config);

// Worker count: explicit value, else MCICJM_WORKERS, else hardware threads.
int resolve_workers(int requested);

}  // namespace mcicjm
