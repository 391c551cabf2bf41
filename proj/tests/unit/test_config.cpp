#include <algorithm>

#include "doctest.h"
#include "fixtures.hpp"
#include "mcicjm/config.hpp"
#include "mcicjm/error.hpp"

using namespace mcicjm;

TEST_CASE("config sections, quoting, lists and comments") {
  const RunConfig c = parse_config(R"(
# simulation study settings
[model]
ncs_knots = [1.5, 4.0]   ; inline comment
sensitivity = "uniform:0.6,0.9"
baseline_basis = 5
quadrature = gk7
penalty_rank = full
tau_h0_rate = 0.25

[sampler]
chains = 2
iterations = 500
thin = 5
adapt = 100
seed = 42

[simulate]
seed = 7
n_datasets = 3
rho_true = 0.6

[paths]
out = "runs/a b"
posteriors = p1, p2
)");
  REQUIRE(c.model.ncs_knots.has_value());
  CHECK(*c.model.ncs_knots == std::vector<double>{1.5, 4.0});
  CHECK(!c.model.sensitivity.is_fixed());
  CHECK(c.model.sensitivity.hi == 0.9);
  CHECK(c.model.baseline_basis == 5);
  CHECK(c.model.quadrature == RuleKind::GK7);
  CHECK(c.model.penalty_rank == RankConvention::Full);
  CHECK(c.model.priors.tau_h0_rate == 0.25);
  CHECK(c.sampler.n_chains == 2);
  CHECK(c.sampler.seed == 42u);
  CHECK(c.sampler_seed_set);
  CHECK(c.simulate.seed == 7u);
  CHECK(c.simulate.n_datasets == 3);
  CHECK(*c.simulate.rho_true == 0.6);
  CHECK(c.paths.out->generic_string() == "runs/a b");
  CHECK(c.paths.posteriors.size() == 2u);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_config("[model]\nknots = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[other]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[sampler]\nchains = two\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[sampler]\nseed = -3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[model]\nsensitivity = fixed:1.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[model]\nsensitivity = sometimes\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[model]\nncs_boundary = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[simulate]\nn_datasets = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[model\n"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.ini"), ConfigError);
  CHECK_FALSE(parse_config("").sampler_seed_set);
}

TEST_CASE("the config echo reproduces the configuration") {
  RunConfig c = parse_config("[model]\nsensitivity = fixed:0.6\nncs_knots = 1, 3\n[sampler]\nseed = 5\n[simulate]\nseed = 9\nn_subjects = 30\n");
  const std::string text = config_to_text(c);
  const RunConfig back = parse_config(text);
  CHECK(config_to_text(back) == text);
  CHECK(back.model.sensitivity.value == 0.6);
  CHECK(*back.model.ncs_knots == std::vector<double>{1.0, 3.0});
  CHECK(back.sampler.seed == 5u);
  CHECK(*back.simulate.n_subjects == 30);
}

TEST_CASE("default spline knots come from the measurement times") {
  SimTruth t = default_truth();
  t.n_subjects = 100;
  const auto data = simulate_dataset(t, 3).patients;
  std::vector<double> times;
  double last = 0.0;
  for (const auto& r : data) {
    for (const auto& m : r.measurements) times.push_back(m.time);
    last = std::max(last, r.terminal_time);
  }
  const auto knots = default_ncs_knots(data);
  REQUIRE(knots.size() == 2u);
  // Share of pooled times below each knot.
  for (int k = 0; k < 2; ++k) {
    const double below = std::count_if(times.begin(), times.end(), [&](double x) { return x <= knots[k]; });
    CHECK(std::abs(below / times.size() - (k + 1) / 3.0) < 0.01);
  }
  const ModelSpec spec = build_spec(ModelOptions{}, data);
  CHECK(spec.ncs.left() == 0.0);
  CHECK(spec.ncs.right() == last);
  CHECK(spec.baseline[0].hi() == last);
  CHECK(spec.baseline[0].n_basis() == 12);
  CHECK(spec.sensitivity.is_fixed());

  ModelOptions o;
  record_spec(spec, o);
  const ModelSpec again = build_spec(o, {});
  CHECK(again.ncs.internal_knots() == spec.ncs.internal_knots());
  CHECK(again.baseline[1].hi() == spec.baseline[1].hi());
}

TEST_CASE("simulation overrides apply on top of the reference truth") {
  RunConfig c = parse_config("[simulate]\nseed = 1\nn_subjects = 40\nrho_true = 0.9\ndropout_rate = 0\n");
  const SimTruth t = build_truth(c);
  CHECK(t.n_subjects == 40);
  CHECK(t.rho_true == 0.9);
  CHECK(t.dropout_rate == 0.0);
  c.simulate.rho_true = 1.5;
  CHECK_THROWS_AS(build_truth(c), ConfigError);
}
