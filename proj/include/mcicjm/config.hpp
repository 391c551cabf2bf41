#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mcicjm/model.hpp"
#include "mcicjm/sampler.hpp"
#include "mcicjm/simulator.hpp"

namespace mcicjm {

// Model section. Unset basis fields are filled from the data at fit time:
// NCS boundary [0, last follow-up] with internal knots at the 1/3 and 2/3
// quantiles of the pooled measurement times, baseline knots over the same
// range.
struct ModelOptions {
  std::optional<std::vector<double>> ncs_boundary;
  std::optional<std::vector<double>> ncs_knots;
  std::optional<double> baseline_horizon;
  int baseline_basis = 12;
  int baseline_degree = 3;
  SensitivityMode sensitivity = SensitivityMode::fixed(0.75);
  PriorConfig priors;
  RuleKind quadrature = RuleKind::GK15;
  IntervalProbMethod interval_prob = IntervalProbMethod::ClosedForm;
  int penalty_order = 2;
  double penalty_ridge = 1e-6;
  RankConvention penalty_rank = RankConvention::Deficient;
  double age_center = 62.0;
  double t_dof = 3.0;
};

// Overrides applied on top of the reference truth or a truth file.
struct SimulateOptions {
  std::optional<std::uint64_t> seed;
  int n_datasets = 1;
  std::optional<int> n_subjects;
  std::optional<double> rho_true;
  std::optional<double> dropout_rate;
  std::optional<double> horizon;
};

struct PathOptions {
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> truth;
  std::optional<std::filesystem::path> model_spec;
  std::vector<std::filesystem::path> posteriors;
};

struct RunConfig {
  ModelOptions model;
  SamplerConfig sampler;
  bool sampler_seed_set = false;
  SimulateOptions simulate;
  PathOptions paths;
};

// INI-style text: [model], [sampler], [simulate] and [paths] sections of
// key = value lines. Values may be quoted; lists are comma separated with
// optional brackets. Unknown sections or keys throw ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& file);

// Resolved configuration in the same format; loading it reproduces the run.
std::string config_to_text(const RunConfig& config);

// Default internal NCS knots: 1/3 and 2/3 quantiles of pooled measurement
// times.
std::vector<double> default_ncs_knots(const std::vector<PatientRecord>& data);

// Spec from the model options, completed from the data where unset.
ModelSpec build_spec(const ModelOptions& options, const std::vector<PatientRecord>& data);

// Writes the resolved basis choices of spec back into options.
void record_spec(const ModelSpec& spec, ModelOptions& options);

// Truth for simulate: the reference truth or a truth file, then overrides.
SimTruth build_truth(const RunConfig& config);

std::vector<double> parse_list(const std::string& text);

}  // namespace mcicjm
