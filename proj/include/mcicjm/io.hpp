#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mcicjm/metrics.hpp"
#include "mcicjm/model.hpp"
#include "mcicjm/sampler.hpp"
#include "mcicjm/simulator.hpp"

namespace mcicjm {

inline constexpr int kFormatVersion = 1;

// Shortest decimal text that reads back to the same double; "inf" for
// infinity.
std::string format_double(double x);
double parse_double(const std::string& text);

// Dataset directory: subjects.csv (id, age, psad, delta, terminal_time,
// biopsy_times as ';'-separated list starting at 0) and longitudinal.csv
// (id, time, y). Both start with a "# format_version: 1" line.
void write_dataset(const std::filesystem::path& dir, const std::vector<PatientRecord>& data);
// Throws ValidationError citing file and line on malformed rows or broken
// record invariants.
std::vector<PatientRecord> read_dataset(const std::filesystem::path& dir);

void write_latent(const std::filesystem::path& file, const std::vector<LatentTruth>& latent);
std::vector<LatentTruth> read_latent(const std::filesystem::path& file);

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

// Parameter values without random effects or mixture weights.
nlohmann::json params_to_json(const ParameterState& p);
ParameterState params_from_json(const ModelSpec& spec, const nlohmann::json& j);

nlohmann::json truth_to_json(const SimTruth& truth);
SimTruth truth_from_json(const nlohmann::json& j);

nlohmann::json sampler_config_to_json(const SamplerConfig& c);

nlohmann::json read_json(const std::filesystem::path& file);
void write_json(const std::filesystem::path& file, const nlohmann::json& j);

// Posterior directory: samples.csv (chain, iteration, one column per
// parameter), summary.json and diagnostics.json.
void write_posterior(const std::filesystem::path& dir, const ModelSpec& spec,
                     const SamplerConfig& config, const PosteriorSamples& post);
// Reads samples.csv back and recomputes the summary.
PosteriorSamples read_samples(const std::filesystem::path& file);

nlohmann::json report_to_json(const EvaluationReport& report);
// Plot-ready series of the log baseline hazard comparison.
void write_hazard_series(const std::filesystem::path& file, const HazardGridReport& h);
void write_cif_csv(const std::filesystem::path& file, const AalenJohansenResult& aj);

}  // namespace mcicjm
