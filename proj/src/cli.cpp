#include "mcicjm/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "mcicjm/config.hpp"
#include "mcicjm/error.hpp"
#include "mcicjm/io.hpp"
#include "mcicjm/likelihood.hpp"
#include "mcicjm/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mcicjm {

namespace {

struct SimulateArgs {
  std::optional<std::string> config, out, truth;
  std::optional<std::uint64_t> seed;
  std::optional<int> n_datasets, n_subjects;
  std::optional<double> rho_true, dropout;
  int workers = 0;
};

struct FitArgs {
  std::optional<std::string> config, data, out, sensitivity, model_spec;
  std::optional<std::uint64_t> seed;
  std::optional<int> chains, iterations, thin, adapt;
  int workers = 0;
};

struct LoglikArgs {
  std::string data;
  std::optional<std::string> truth, params, model_spec, latent, out;
  std::optional<double> rho;
};

struct EvaluateArgs {
  std::optional<std::string> config, truth, out;
  std::vector<std::string> posteriors;
  std::string label = "model";
};

struct AjArgs {
  std::string data, out;
};

struct ValidateArgs {
  std::optional<std::string> data, config, truth, samples;
};

RunConfig base_config(const std::optional<std::string>& file) {
  return file ? load_config(*file) : RunConfig{};
}

std::string percent(double x) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * x << "%";
  return s.str();
}

json proportions_json(const EventProportions& p) {
  return {{"progression", p.progression}, {"treatment", p.treatment}, {"censored", p.censored}};
}

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  RunConfig cfg = base_config(a.config);
  if (a.seed) cfg.simulate.seed = a.seed;
  if (a.out) cfg.paths.out = *a.out;
  if (a.truth) cfg.paths.truth = *a.truth;
  if (a.n_datasets) cfg.simulate.n_datasets = *a.n_datasets;
  if (a.n_subjects) cfg.simulate.n_subjects = a.n_subjects;
  if (a.rho_true) cfg.simulate.rho_true = a.rho_true;
  if (a.dropout) cfg.simulate.dropout_rate = a.dropout;
  if (!cfg.simulate.seed) throw ConfigError("simulate needs a seed (--seed or [simulate] seed)");
  if (!cfg.paths.out) throw ConfigError("simulate needs an output directory (--out or [paths] out)");
  if (cfg.simulate.n_datasets < 1) throw ConfigError("--n-datasets must be positive");
  const SimTruth truth = build_truth(cfg);
  const fs::path root = *cfg.paths.out;
  const int n = cfg.simulate.n_datasets;
  const int workers = resolve_workers(a.workers);

  fs::create_directories(root);
  write_json(root / "truth.json", truth_to_json(truth));
  {
    // The echo sits in the output directory, so it does not name it.
    RunConfig echoed = cfg;
    echoed.paths.out.reset();
    std::ofstream echo(root / "config.ini", std::ios::binary);
    echo << config_to_text(echoed);
  }
  for (int d = 1; d <= n; ++d) {
    // A single dataset uses the seed itself; numbered datasets use substreams.
    const std::uint64_t seed = n == 1 ? *cfg.simulate.seed : derive_seed(*cfg.simulate.seed, d);
    std::ostringstream name;
    name << std::setw(3) << std::setfill('0') << d;
    const fs::path dir = n == 1 ? root : root / name.str();
    const SimulatedDataset ds = simulate_dataset(truth, seed, workers);
    write_dataset(dir, ds.patients);
    write_latent(dir / "latent.csv", ds.latent);
    const EventProportions p = event_proportions(ds.patients);
    write_json(dir / "simulation.json", {{"format_version", kFormatVersion},
                                         {"dataset", d},
                                         {"seed", seed},
                                         {"n_subjects", ds.patients.size()},
                                         {"event_proportions", proportions_json(p)}});
    out << dir.generic_string() << ": " << ds.patients.size() << " subjects, progression "
        << percent(p.progression) << ", treatment " << percent(p.treatment) << ", censored "
        << percent(p.censored) << "\n";
  }
  return kExitOk;
}

ModelSpec spec_from_file(const fs::path& file) {
  const json j = read_json(file);
  return spec_from_json(j.contains("spec") ? j.at("spec") : j);
}

int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = base_config(a.config);
  if (a.data) cfg.paths.data = *a.data;
  if (a.out) cfg.paths.out = *a.out;
  if (a.model_spec) cfg.paths.model_spec = *a.model_spec;
  if (a.seed) {
    cfg.sampler.seed = *a.seed;
    cfg.sampler_seed_set = true;
  }
  if (a.chains) cfg.sampler.n_chains = *a.chains;
  if (a.iterations) cfg.sampler.n_iterations = *a.iterations;
  if (a.thin) cfg.sampler.thin = *a.thin;
  if (a.adapt) cfg.sampler.n_adapt = *a.adapt;
  cfg.sampler.workers = a.workers ? a.workers : cfg.sampler.workers;
  if (!cfg.sampler_seed_set) throw ConfigError("fit needs a seed (--seed or [sampler] seed)");
  if (!cfg.paths.data) throw ConfigError("fit needs a dataset (--data or [paths] data)");
  if (!cfg.paths.out) throw ConfigError("fit needs an output directory (--out or [paths] out)");
  cfg.sampler.validate();

  const std::vector<PatientRecord> data = read_dataset(*cfg.paths.data);
  ModelSpec spec = cfg.paths.model_spec ? spec_from_file(*cfg.paths.model_spec) : build_spec(cfg.model, data);
  if (a.sensitivity) {
    spec.sensitivity = SensitivityMode::parse(*a.sensitivity);
    spec.validate();
  }
  record_spec(spec, cfg.model);

  const PosteriorSamples post = run_chains(spec, data, cfg.sampler);
  const fs::path dir = *cfg.paths.out;
  write_posterior(dir, spec, cfg.sampler, post);
  {
    RunConfig echoed = cfg;
    echoed.paths.out.reset();
    std::ofstream echo(dir / "config.ini", std::ios::binary);
    echo << config_to_text(echoed);
  }
  out << dir.generic_string() << ": " << post.n_chains << " chains x " << post.draws_per_chain
      << " draws, sensitivity " << spec.sensitivity.to_string() << "\n";
  if (!post.converged) {
    err << "warning: R-hat above 1.1 for";
    for (const auto& n : post.not_converged) err << ' ' << n;
    err << "\n";
  }
  return kExitOk;
}

int cmd_loglik(const LoglikArgs& a, std::ostream& out) {
  const std::vector<PatientRecord> data = read_dataset(a.data);
  ModelSpec spec;
  ParameterState params;
  if (a.truth) {
    const SimTruth t = truth_from_json(read_json(*a.truth));
    spec = t.spec;
    params = t.params;
  } else if (a.params) {
    const json j = read_json(*a.params);
    if (a.model_spec) {
      spec = spec_from_file(*a.model_spec);
    } else if (j.contains("spec")) {
      spec = spec_from_json(j.at("spec"));
    } else {
      throw ConfigError("--params needs --model-spec unless the file carries a spec");
    }
    params = params_from_json(spec, j.contains("params") ? j.at("params") : j);
  } else {
    throw ConfigError("loglik needs --truth or --params");
  }
  if (a.rho) {
    if (!(*a.rho > 0.0 && *a.rho <= 1.0)) throw ConfigError("--rho must lie in (0, 1]");
    params.rho = *a.rho;
  }

  // Random effects from the latent file when one is available, else zero.
  params.u.assign(data.size(), RandomVector::Zero());
  std::optional<fs::path> latent_file;
  if (a.latent) {
    latent_file = *a.latent;
  } else if (fs::exists(fs::path(a.data) / "latent.csv")) {
    latent_file = fs::path(a.data) / "latent.csv";
  }
  if (latent_file) {
    std::map<std::string, RandomVector> by_id;
    for (const auto& l : read_latent(*latent_file)) by_id[l.id] = l.u;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto it = by_id.find(data[i].id);
      if (it == by_id.end()) throw ValidationError("no latent random effects for subject '" + data[i].id + "'");
      params.u[i] = it->second;
    }
  }
  const PosteriorBreakdown b = evaluate_posterior(spec, params, data);
  json subjects = json::array();
  double longitudinal = 0.0;
  double survival = 0.0;
  for (const auto& s : b.subjects) {
    subjects.push_back({{"id", s.id}, {"longitudinal", s.longitudinal}, {"survival", s.survival}});
    longitudinal += s.longitudinal;
    survival += s.survival;
  }
  const json result = {{"format_version", kFormatVersion},
                       {"rho", params.rho},
                       {"random_effects", latent_file ? "latent" : "zero"},
                       {"log_likelihood", b.log_likelihood},
                       {"longitudinal", longitudinal},
                       {"survival", survival},
                       {"log_random_effects", b.log_random_effects},
                       {"log_prior", b.log_prior},
                       {"log_posterior", b.log_posterior},
                       {"subjects", subjects}};
  if (!std::isfinite(b.log_likelihood)) throw NumericalError("log-likelihood is not finite");
  if (a.out) {
    write_json(*a.out, result);
    out << "log-likelihood " << format_double(b.log_likelihood) << "\n";
  } else {
    out << result.dump(2) << "\n";
  }
  return kExitOk;
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  RunConfig cfg = base_config(a.config);
  if (a.truth) cfg.paths.truth = *a.truth;
  if (a.out) cfg.paths.out = *a.out;
  if (!a.posteriors.empty()) {
    cfg.paths.posteriors.assign(a.posteriors.begin(), a.posteriors.end());
  }
  if (!cfg.paths.truth) throw ConfigError("evaluate needs a truth file (--truth or [paths] truth)");
  if (!cfg.paths.out) throw ConfigError("evaluate needs an output directory (--out or [paths] out)");
  if (cfg.paths.posteriors.empty()) throw ConfigError("evaluate needs at least one posterior");
  const SimTruth truth = truth_from_json(read_json(*cfg.paths.truth));
  std::vector<PosteriorSamples> posts;
  for (const auto& p : cfg.paths.posteriors) {
    posts.push_back(read_samples(fs::is_directory(p) ? p / "samples.csv" : p));
  }
  const EvaluationReport r = evaluate_replicates(truth.spec, truth.params, posts);
  const fs::path dir = *cfg.paths.out;
  json report = report_to_json(r);
  report["label"] = a.label;
  write_json(dir / "report.json", report);
  for (const auto& h : r.hazards) {
    write_hazard_series(dir / ("log_hazard_" + std::string(cause_name(h.cause)) + ".csv"), h);
  }
  // Coverage table: one row per parameter, one column block per model label.
  {
    std::ofstream cov(dir / "coverage.csv", std::ios::binary);
    cov << "# format_version: " << kFormatVersion << "\n"
        << "parameter,model,truth,mean_estimate,relative_bias,bias_is_absolute,ci_width,coverage,mse\n";
    for (const auto& p : r.parameters) {
      cov << p.name << ',' << a.label << ',' << format_double(p.truth) << ','
          << format_double(p.metrics.mean_estimate) << ',' << format_double(p.metrics.bias.value)
          << ',' << (p.metrics.bias.absolute ? 1 : 0) << ',' << format_double(p.metrics.ci_width)
          << ',' << format_double(p.metrics.coverage) << ',' << format_double(p.metrics.mse) << "\n";
    }
  }
  out << dir.generic_string() << ": " << r.n_replicates << " replicates, mean log-hazard bias prg "
      << percent(r.hazards[0].mean_relative_bias) << ", trt " << percent(r.hazards[1].mean_relative_bias)
      << "\n";
  return kExitOk;
}

int cmd_aj(const AjArgs& a, std::ostream& out) {
  const std::vector<PatientRecord> data = read_dataset(a.data);
  const AalenJohansenResult r = aalen_johansen(competing_observations(data));
  write_cif_csv(fs::path(a.out) / "cif.csv", r);
  out << (fs::path(a.out) / "cif.csv").generic_string() << ": CIF at last time progression "
      << percent(r.progression.values.back()) << ", treatment " << percent(r.treatment.values.back())
      << "\n";
  return kExitOk;
}

int cmd_validate(const ValidateArgs& a, std::ostream& out) {
  if (!a.data && !a.config && !a.truth && !a.samples) {
    throw ConfigError("validate needs --data, --config, --truth or --samples");
  }
  if (a.config) {
    load_config(*a.config);
    out << *a.config << ": ok\n";
  }
  if (a.truth) {
    truth_from_json(read_json(*a.truth));
    out << *a.truth << ": ok\n";
  }
  if (a.data) {
    const auto data = read_dataset(*a.data);
    std::size_t m = 0;
    for (const auto& r : data) m += r.measurements.size();
    const EventProportions p = event_proportions(data);
    out << *a.data << ": ok, " << data.size() << " subjects, " << m << " measurements, progression "
        << percent(p.progression) << ", treatment " << percent(p.treatment) << ", censored "
        << percent(p.censored) << "\n";
  }
  if (a.samples) {
    const fs::path p = fs::is_directory(*a.samples) ? fs::path(*a.samples) / "samples.csv" : fs::path(*a.samples);
    const PosteriorSamples post = read_samples(p);
    out << p.generic_string() << ": ok, " << post.n_chains << " chains x " << post.draws_per_chain
        << " draws, " << (post.converged ? "converged" : "not converged") << "\n";
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint model of PSA and competing interval-censored events with imperfect biopsy sensitivity"};
  app.name("mcicjm");
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "simulate datasets from the reference or a given truth");
  s->add_option("--config", sim.config, "config file");
  s->add_option("--seed", sim.seed, "master seed");
  s->add_option("--out", sim.out, "output directory");
  s->add_option("--n-datasets", sim.n_datasets, "number of datasets (numbered subdirectories when > 1)");
  s->add_option("--n-subjects", sim.n_subjects, "subjects per dataset");
  s->add_option("--truth", sim.truth, "truth JSON file");
  s->add_option("--rho", sim.rho_true, "true biopsy sensitivity");
  s->add_option("--dropout", sim.dropout, "dropout rate per year");
  s->add_option("--workers", sim.workers, "worker threads (0: MCICJM_WORKERS or all cores)");

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "fit the joint model by MCMC");
  f->add_option("--config", fit.config, "config file");
  f->add_option("--data", fit.data, "dataset directory");
  f->add_option("--out", fit.out, "posterior directory");
  f->add_option("--seed", fit.seed, "sampler seed");
  f->add_option("--sensitivity", fit.sensitivity, "fixed:RHO or uniform:LO,HI");
  f->add_option("--model-spec", fit.model_spec, "model specification JSON (or a truth file)");
  f->add_option("--chains", fit.chains, "number of chains");
  f->add_option("--iterations", fit.iterations, "iterations per chain, adaptation included");
  f->add_option("--thin", fit.thin, "thinning interval");
  f->add_option("--adapt", fit.adapt, "adaptation iterations");
  f->add_option("--workers", fit.workers, "worker threads (0: MCICJM_WORKERS or all cores)");

  LoglikArgs ll;
  auto* l = app.add_subcommand("loglik", "log-likelihood of a dataset at given parameters");
  l->add_option("--data", ll.data, "dataset directory")->required();
  l->add_option("--truth", ll.truth, "truth JSON file");
  l->add_option("--params", ll.params, "parameter JSON file");
  l->add_option("--model-spec", ll.model_spec, "model specification JSON");
  l->add_option("--latent", ll.latent, "latent.csv with random effects");
  l->add_option("--rho", ll.rho, "biopsy sensitivity");
  l->add_option("--out", ll.out, "output JSON file");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "bias, interval width, coverage and MSE over replicate fits");
  e->add_option("--config", ev.config, "config file");
  e->add_option("--truth", ev.truth, "truth JSON file");
  e->add_option("--posteriors", ev.posteriors, "posterior directories or samples.csv files");
  e->add_option("--out", ev.out, "report directory");
  e->add_option("--label", ev.label, "model label for the coverage table");

  AjArgs aj;
  auto* a = app.add_subcommand("aj", "Aalen-Johansen cumulative incidence of the observed events");
  a->add_option("--data", aj.data, "dataset directory")->required();
  a->add_option("--out", aj.out, "output directory")->required();

  ValidateArgs va;
  auto* v = app.add_subcommand("validate", "check a dataset, config, truth or samples file");
  v->add_option("--data", va.data, "dataset directory");
  v->add_option("--config", va.config, "config file");
  v->add_option("--truth", va.truth, "truth JSON file");
  v->add_option("--samples", va.samples, "posterior directory or samples.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (s->parsed()) return cmd_simulate(sim, out);
    if (f->parsed()) return cmd_fit(fit, out, err);
    if (l->parsed()) return cmd_loglik(ll, out);
    if (e->parsed()) return cmd_evaluate(ev, out);
    if (a->parsed()) return cmd_aj(aj, out);
    if (v->parsed()) return cmd_validate(va, out);
  } catch (const ConfigError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const ValidationError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitValidation;
  } catch (const InputError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& ex) {
    err << "numerical error: " << ex.what() << "\n";
    return kExitNumerical;
  } catch (const fs::filesystem_error& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitNumerical;
  }
  return kExitUsage;
}

}  // namespace mcicjm
