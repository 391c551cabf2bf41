#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>

#include <boost/math/special_functions/gamma.hpp>

#include "doctest.h"
#include "fixtures.hpp"
#include "mcicjm/error.hpp"
#include "mcicjm/sampler.hpp"

using namespace mcicjm;

namespace {

// Kolmogorov-Smirnov distance between a sample and a CDF.
template <class Cdf>
double ks_distance(std::vector<double> x, Cdf cdf) {
  std::sort(x.begin(), x.end());
  const double n = x.size();
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, std::abs((i + 1) / n - f), std::abs(f - i / n)});
  }
  return d;
}

// 0.1% critical value of the one-sample KS statistic.
double ks_critical(std::size_t n) { return 1.95 / std::sqrt(static_cast<double>(n)); }

std::vector<PatientRecord> small_dataset(int n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<PatientRecord> data;
  for (int i = 0; i < n; ++i) data.push_back(fixtures::random_subject(gen, i));
  return data;
}

SamplerConfig short_config(int iterations = 60, int adapt = 20, int thin = 2) {
  SamplerConfig c;
  c.n_chains = 2;
  c.n_iterations = iterations;
  c.n_adapt = adapt;
  c.thin = thin;
  c.seed = 99;
  c.workers = 1;
  return c;
}

}  // namespace

TEST_CASE("sampler configuration validation") {
  SamplerConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.draws_per_chain() == 800);
  auto bad = [](auto edit) {
    SamplerConfig c;
    edit(c);
    return c;
  };
  CHECK_THROWS_AS(bad([](SamplerConfig& c) { c.n_chains = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](SamplerConfig& c) { c.thin = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](SamplerConfig& c) { c.n_adapt = 10000; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](SamplerConfig& c) { c.thin = 7; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](SamplerConfig& c) { c.target_multi = 1.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](SamplerConfig& c) { c.block_repeats = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](SamplerConfig& c) { c.n_iterations = 2070; }).validate(), ConfigError);
}

TEST_CASE("inverse-Wishart draws: mean and diagonal marginal") {
  RandomMatrix s;
  s << 2.0, 0.3, 0.1, 0.0, 0.3, 1.5, 0.2, 0.1, 0.1, 0.2, 1.0, 0.05, 0.0, 0.1, 0.05, 0.8;
  const double df = 12.0;
  Rng rng(4);
  const int n = 5000;
  RandomMatrix sum = RandomMatrix::Zero();
  std::vector<double> inv_diag;
  for (int i = 0; i < n; ++i) {
    const RandomMatrix w = draw_inverse_wishart(df, s, rng);
    CHECK(w == w.transpose());
    sum += w;
    inv_diag.push_back(1.0 / w(1, 1));
  }
  const RandomMatrix expected = s / (df - kNumRandom - 1);
  for (int i = 0; i < kNumRandom; ++i) {
    CHECK(std::abs(sum(i, i) / n - expected(i, i)) / expected(i, i) < 0.05);
  }
  // 1 / Omega_ii ~ Gamma((df - p + 1) / 2, rate s_ii / 2).
  const double shape = 0.5 * (df - kNumRandom + 1);
  const double rate = 0.5 * s(1, 1);
  const double d =
      ks_distance(inv_diag, [&](double x) { return boost::math::gamma_p(shape, rate * x); });
  CHECK(d < ks_critical(n));
}

TEST_CASE("Omega conditional draw matches the conjugate posterior mean") {
  std::vector<RandomVector> u(30);
  Rng gen(3);
  for (auto& v : u) {
    for (int j = 0; j < kNumRandom; ++j) v[j] = gen.normal();
  }
  const PriorConfig prior;
  const double tau_u = 2.0;
  RandomMatrix scale = (prior.omega_scale / tau_u) * RandomMatrix::Identity();
  for (const auto& v : u) scale += v * v.transpose();
  const double df = kNumRandom + prior.omega_df_extra + u.size();
  const RandomMatrix expected = scale / (df - kNumRandom - 1);
  Rng rng(5);
  RandomMatrix sum = RandomMatrix::Zero();
  const int n = 5000;
  for (int i = 0; i < n; ++i) sum += gibbs_update_omega(u, tau_u, prior, rng);
  for (int i = 0; i < kNumRandom; ++i) {
    CHECK(std::abs(sum(i, i) / n - expected(i, i)) / expected(i, i) < 0.05);
  }
}

TEST_CASE("mixture weights at zero residual: Gamma(2, 1.5) with mean 4/3") {
  const int n = 20000;
  std::vector<double> r(n, 0.0);
  std::vector<double> lam(n);
  Rng rng(6);
  gibbs_update_mixture_weights(r, 1.0, 3.0, rng, lam);
  double mean = 0.0;
  for (double v : lam) mean += v / n;
  CHECK(std::abs(mean - 4.0 / 3.0) < 0.02);
  const double d = ks_distance(lam, [](double x) { return boost::math::gamma_p(2.0, 1.5 * x); });
  CHECK(d < ks_critical(n));
}

TEST_CASE("mixture weights shrink with large residuals") {
  std::vector<double> r{0.0, 0.5, 2.0};
  std::vector<double> lam(3);
  std::vector<double> sums(3, 0.0);
  Rng rng(7);
  for (int rep = 0; rep < 4000; ++rep) {
    gibbs_update_mixture_weights(r, 4.0, 3.0, rng, lam);
    for (int i = 0; i < 3; ++i) sums[i] += lam[i];
  }
  // E[lambda] = (kappa + 1) / (kappa + r^2 tau).
  for (int i = 0; i < 3; ++i) {
    const double expected = 4.0 / (3.0 + r[i] * r[i] * 4.0);
    CHECK(std::abs(sums[i] / 4000 - expected) / expected < 0.05);
  }
}

TEST_CASE("adaptive random walk recovers a correlated normal target") {
  Eigen::Matrix2d cov;
  cov << 4.0, 1.8, 1.8, 1.0;
  const Eigen::Matrix2d prec = cov.inverse();
  auto log_target = [&](const Eigen::VectorXd& x) { return -0.5 * x.dot(prec * x); };
  AdaptiveProposal prop(Eigen::Vector2d(0.1, 0.1), 0.234);
  Rng rng(8);
  Eigen::VectorXd x = Eigen::Vector2d(3.0, -2.0);
  double lt = log_target(x);
  const int n_adapt = 5000;
  const int n = 60000;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d second = Eigen::Matrix2d::Zero();
  long accepted = 0;
  for (int it = 1; it <= n_adapt + n; ++it) {
    const MhOutcome o = mh_update_block(x, lt, prop.propose(x, rng), log_target, rng);
    prop.adapt(x, o.accept_prob, it, n_adapt);
    if (it > n_adapt) {
      accepted += o.accepted;
      mean += x / n;
      second += x * x.transpose() / n;
    }
  }
  CHECK(prop.using_covariance());
  const Eigen::Matrix2d est = second - mean * mean.transpose();
  CHECK(std::abs(mean[0]) < 0.15);
  CHECK(std::abs(mean[1]) < 0.08);
  CHECK(std::abs(est(0, 0) - 4.0) / 4.0 < 0.1);
  CHECK(std::abs(est(1, 1) - 1.0) < 0.1);
  CHECK(std::abs(est(0, 1) - 1.8) / 1.8 < 0.1);
  const double rate = static_cast<double>(accepted) / n;
  CHECK(rate > 0.15);
  CHECK(rate < 0.35);
}

TEST_CASE("scalar adapter drives acceptance toward 0.44") {
  auto log_target = [](const Eigen::VectorXd& x) { return -0.5 * (x[0] - 1.0) * (x[0] - 1.0) / 4.0; };
  ScaleAdapter a(0.44, std::log(20.0));
  Rng rng(9);
  Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 1.0);
  double lt = log_target(x);
  for (int it = 0; it < 20000; ++it) {
    Eigen::VectorXd p = x;
    p[0] += a.scale() * rng.normal();
    a.update(mh_update_block(x, lt, p, log_target, rng).accept_prob);
  }
  long acc = 0;
  double s = 0.0;
  double ss = 0.0;
  const int n = 100000;
  for (int it = 0; it < n; ++it) {
    Eigen::VectorXd p = x;
    p[0] += a.scale() * rng.normal();
    acc += mh_update_block(x, lt, p, log_target, rng).accepted;
    s += x[0];
    ss += x[0] * x[0];
  }
  CHECK(std::abs(static_cast<double>(acc) / n - 0.44) < 0.03);
  CHECK(std::abs(s / n - 1.0) < 0.06);
  CHECK(std::abs(ss / n - (s / n) * (s / n) - 4.0) / 4.0 < 0.06);
}

TEST_CASE("MH step rejects non-finite targets") {
  Rng rng(1);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
  double lt = 0.0;
  const Eigen::VectorXd p = Eigen::VectorXd::Ones(1);
  CHECK_FALSE(mh_update_block(x, lt, p, [](const Eigen::VectorXd&) { return NAN; }, rng).accepted);
  CHECK_FALSE(
      mh_update_block(x, lt, p, [](const Eigen::VectorXd&) { return -INFINITY; }, rng).accepted);
  CHECK(x[0] == 0.0);
}

TEST_CASE("parameter names and flattened values line up") {
  const ModelSpec spec = fixtures::spline_spec();
  const ParameterState p = fixtures::truth_state(spec, 3);
  const auto names = parameter_names(spec);
  std::vector<double> flat;
  flatten_parameters(spec, p, flat);
  REQUIRE(names.size() == flat.size());
  CHECK(names.size() == 5 + 10 + 3 + 2 * (12 + 4) + 1);
  auto at = [&](const std::string& n) {
    return flat[std::find(names.begin(), names.end(), n) - names.begin()];
  };
  CHECK(at("beta[4]") == 0.02);
  CHECK(at("omega[0][3]") == 0.01);
  CHECK(at("alpha2[prg]") == 1.79);
  CHECK(at("gamma[trt]") == 0.25);
  CHECK(at("gamma_h0[trt][0]") == -5.13);
  CHECK(at("rho") == 0.75);
  CHECK(at("sigma") == doctest::Approx(1.0 / std::sqrt(47.39)));
  // Names go into a CSV header unquoted.
  for (const auto& n : names) CHECK(n.find(',') == std::string::npos);
}

TEST_CASE("the sampler rejects the nested interval method") {
  ModelSpec spec = fixtures::spline_spec();
  spec.interval_prob = IntervalProbMethod::Nested;
  CHECK_THROWS_AS(prepare_data(spec, small_dataset(3, 1)), ConfigError);
}

TEST_CASE("chains are deterministic, thin correctly and stay finite") {
  ModelSpec spec = fixtures::spline_spec();
  spec.sensitivity = SensitivityMode::uniform(0.6, 0.9);
  const auto data = prepare_data(spec, small_dataset(12, 2));
  const SamplerConfig cfg = short_config();
  Chain a(data, cfg, 0);
  Chain b(data, cfg, 0);
  Chain other(data, cfg, 1);
  a.initialize();
  b.initialize();
  other.initialize();
  a.run(cfg.n_iterations);
  b.run(cfg.n_iterations);
  other.run(cfg.n_iterations);
  CHECK(a.done());
  CHECK(a.draws() == b.draws());
  CHECK(a.draws() != other.draws());
  REQUIRE(a.draw_iterations().size() == static_cast<std::size_t>(cfg.draws_per_chain()));
  CHECK(a.draw_iterations().front() == 22);
  CHECK(a.draw_iterations().back() == 60);
  CHECK(std::isfinite(a.log_posterior()));
  const ParameterState& s = a.state();
  CHECK(s.rho >= 0.6);
  CHECK(s.rho <= 0.9);
  CHECK(s.tau_eps > 0.0);
  CHECK(Eigen::LLT<RandomMatrix>(s.omega).info() == Eigen::Success);
  const AcceptanceRates acc = a.acceptance();
  CHECK(acc.random_effects > 0.0);
  CHECK(acc.survival_block[0] > 0.0);
  CHECK(acc.rho > 0.0);
}

TEST_CASE("checkpoint and restore continue bitwise identically") {
  const ModelSpec spec = fixtures::spline_spec();
  const auto data = prepare_data(spec, small_dataset(8, 3));
  const SamplerConfig cfg = short_config(80, 40, 2);
  Chain a(data, cfg, 1);
  a.initialize();
  a.run(25);  // mid adaptation
  const nlohmann::json cp = nlohmann::json::parse(a.checkpoint().dump());
  a.run(cfg.n_iterations);

  Chain b(data, cfg, 1);
  b.restore(cp);
  CHECK(b.iteration() == 25);
  b.run(cfg.n_iterations);
  CHECK(a.draws() == b.draws());
  CHECK(a.log_posterior() == b.log_posterior());

  Chain wrong(data, cfg, 0);
  CHECK_THROWS_AS(wrong.restore(cp), InputError);
  nlohmann::json broken = cp;
  broken["state"].erase("beta");
  CHECK_THROWS_AS(b.restore(broken), InputError);
}

TEST_CASE("run_chains output does not depend on the worker count") {
  const ModelSpec spec = fixtures::spline_spec();
  const auto data = small_dataset(6, 4);
  SamplerConfig cfg = short_config(40, 10, 3);
  cfg.n_chains = 3;
  cfg.workers = 1;
  const PosteriorSamples one = run_chains(spec, data, cfg);
  cfg.workers = 3;
  const PosteriorSamples three = run_chains(spec, data, cfg);
  CHECK(one.draws == three.draws);
  CHECK(one.draws_per_chain == 10);
  CHECK(one.summary.size() == one.names.size());
  const auto& s = one.summary_of("beta[0]");
  CHECK(s.q025 <= s.q50);
  CHECK(s.q50 <= s.q975);
  CHECK(std::isfinite(s.diagnostic.rhat));
  CHECK_THROWS_AS(one.summary_of("nope"), InputError);
}

TEST_CASE("worker resolution") {
  CHECK(resolve_workers(3) == 3);
  setenv("MCICJM_WORKERS", "2", 1);
  CHECK(resolve_workers(0) == 2);
  setenv("MCICJM_WORKERS", "zero", 1);
  CHECK_THROWS_AS(resolve_workers(0), ConfigError);
  unsetenv("MCICJM_WORKERS");
  CHECK(resolve_workers(0) >= 1);
}

TEST_CASE("numerical Hessian of a quadratic form") {
  Eigen::MatrixXd a(3, 3);
  a << 4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0;
  const Eigen::VectorXd b = Eigen::Vector3d(0.3, -1.0, 2.0);
  auto f = [&](const Eigen::VectorXd& x) { return -0.5 * x.dot(a * x) + b.dot(x); };
  const Eigen::MatrixXd h = numerical_hessian(f, Eigen::Vector3d(1.0, -2.0, 40.0));
  CHECK((h + a).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("curvature covariance inverts, floors and caps") {
  Eigen::MatrixXd p(2, 2);
  p << 2.0, 0.5, 0.5, 1.0;
  const Eigen::MatrixXd c = curvature_covariance(p, 100.0);
  CHECK((c * p - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
  // A flat or convex direction gets the cap.
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(2, 2);
  q(0, 0) = 4.0;
  q(1, 1) = -1.0;
  const Eigen::MatrixXd d = curvature_covariance(q, 9.0);
  CHECK(d(0, 0) == doctest::Approx(0.25));
  CHECK(d(1, 1) == doctest::Approx(9.0));
  CHECK(std::abs(d(0, 1)) < 1e-14);
}

TEST_CASE("a proposal shaped from the exact covariance mixes a correlated target") {
  Eigen::MatrixXd cov(2, 2);
  cov << 1.0, 0.95, 0.95, 1.0;
  const Eigen::MatrixXd prec = cov.inverse();
  auto target = [&](const Eigen::VectorXd& v) { return -0.5 * v.dot(prec * v); };
  AdaptiveProposal prop(Eigen::VectorXd::Constant(2, 0.1), 0.234);
  prop.use_history(false);
  prop.set_shape(curvature_covariance(-numerical_hessian(target, Eigen::VectorXd::Zero(2))));
  Rng rng(5);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(2);
  double cur = target(x);
  int accepted = 0;
  std::vector<double> xs;
  const int n = 40000;
  for (int i = 1; i <= n; ++i) {
    const MhOutcome o = mh_update_block(x, cur, prop.propose(x, rng), target, rng);
    accepted += o.accepted;
    prop.adapt(x, o.accept_prob, i, n / 4);
    if (i > n / 4) xs.push_back(x[0] - x[1]);
  }
  CHECK(prop.using_covariance());
  CHECK(accepted > n / 10);
  // x0 - x1 has variance 2 (1 - 0.95) = 0.1.
  double m = 0.0;
  double s = 0.0;
  for (double v : xs) m += v / xs.size();
  for (double v : xs) s += (v - m) * (v - m) / xs.size();
  CHECK(std::abs(s - 0.1) < 0.02);
}
