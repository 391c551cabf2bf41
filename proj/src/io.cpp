#include "mcicjm/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "mcicjm/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mcicjm {

std::string format_double(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (std::isnan(x)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text) {
  if (text == "inf" || text == "Inf") return INFINITY;
  if (text == "-inf" || text == "-Inf") return -INFINITY;
  double v = 0.0;
  const char* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw InputError("not a number: '" + text + "'");
  return v;
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

std::ofstream open_out(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw InputError("cannot write " + file.string());
  return out;
}

// CSV table with a version line and a fixed header. Rows keep their line
// numbers for error messages.
struct CsvTable {
  std::string name;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> lines;

  [[noreturn]] void fail(std::size_t row, const std::string& what) const {
    throw ValidationError(name + ":" + std::to_string(lines[row]) + ": " + what);
  }
  double number(std::size_t row, std::size_t col) const {
    try {
      return parse_double(rows[row][col]);
    } catch (const InputError&) {
      fail(row, "column " + std::to_string(col + 1) + " is not a number: '" + rows[row][col] + "'");
    }
  }
};

CsvTable read_csv(const fs::path& file, const std::vector<std::string>& header, bool exact_header = true) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw InputError("cannot read " + file.string());
  CsvTable t;
  t.name = file.filename().string();
  std::string line;
  int n = 0;
  bool have_version = false;
  bool have_header = false;
  std::size_t width = header.size();
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string key = "# format_version:";
      if (line.rfind(key, 0) == 0) {
        const std::string v = line.substr(key.size());
        if (v.find_first_not_of(' ') == std::string::npos || std::stoi(v) != kFormatVersion) {
          throw ValidationError(t.name + ":" + std::to_string(n) + ": unsupported format version");
        }
        have_version = true;
      }
      continue;
    }
    auto fields = split(line, ',');
    if (!have_header) {
      const bool ok = exact_header ? fields == header
                                   : fields.size() >= header.size() &&
                                         std::equal(header.begin(), header.end(), fields.begin());
      if (!ok) {
        throw ValidationError(t.name + ":" + std::to_string(n) + ": expected header '" +
                              join(header, ',') + "'");
      }
      width = fields.size();
      t.rows.push_back(fields);
      t.lines.push_back(n);
      have_header = true;
      continue;
    }
    if (fields.size() != width) {
      throw ValidationError(t.name + ":" + std::to_string(n) + ": expected " +
                            std::to_string(width) + " fields, found " +
                            std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
    t.lines.push_back(n);
  }
  if (!have_version) throw ValidationError(t.name + ": missing format_version line");
  if (!have_header) throw ValidationError(t.name + ": missing header");
  return t;
}

const std::vector<std::string> kSubjectHeader{"id", "age", "psad", "delta", "terminal_time",
                                              "biopsy_times"};
const std::vector<std::string> kLongitudinalHeader{"id", "time", "y"};
const std::vector<std::string> kLatentHeader{
    "id", "u0", "u1", "u2", "u3", "age", "log_psad", "progression_time", "treatment_time",
    "censoring_time", "first_cause", "missed_biopsies"};

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <class M>
json mat_json(const M& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row;
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

void write_dataset(const fs::path& dir, const std::vector<PatientRecord>& data) {
  fs::create_directories(dir);
  auto subjects = open_out(dir / "subjects.csv");
  subjects << "# format_version: " << kFormatVersion << "\n" << join(kSubjectHeader, ',') << "\n";
  auto longitudinal = open_out(dir / "longitudinal.csv");
  longitudinal << "# format_version: " << kFormatVersion << "\n"
               << join(kLongitudinalHeader, ',') << "\n";
  for (const auto& r : data) {
    std::vector<std::string> b;
    for (double t : r.biopsy_times) b.push_back(format_double(t));
    subjects << r.id << ',' << format_double(r.age) << ',' << format_double(r.psad) << ','
             << static_cast<int>(r.delta) << ',' << format_double(r.terminal_time) << ','
             << join(b, ';') << "\n";
    for (const auto& m : r.measurements) {
      longitudinal << r.id << ',' << format_double(m.time) << ',' << format_double(m.y) << "\n";
    }
  }
}

std::vector<PatientRecord> read_dataset(const fs::path& dir) {
  const CsvTable s = read_csv(dir / "subjects.csv", kSubjectHeader);
  const CsvTable l = read_csv(dir / "longitudinal.csv", kLongitudinalHeader);
  std::vector<PatientRecord> data;
  std::vector<std::size_t> row_of;
  std::map<std::string, std::size_t> index;
  for (std::size_t r = 1; r < s.rows.size(); ++r) {
    const auto& f = s.rows[r];
    PatientRecord rec;
    rec.id = f[0];
    if (rec.id.empty()) s.fail(r, "empty subject id");
    if (!index.emplace(rec.id, data.size()).second) s.fail(r, "duplicate subject id '" + rec.id + "'");
    rec.age = s.number(r, 1);
    rec.psad = s.number(r, 2);
    if (!(rec.psad > 0.0)) s.fail(r, "PSA density must be positive");
    rec.log_psad = std::log(rec.psad);
    if (f[3] != "0" && f[3] != "1" && f[3] != "2") s.fail(r, "delta must be 0, 1 or 2");
    rec.delta = static_cast<EventStatus>(f[3][0] - '0');
    rec.terminal_time = s.number(r, 4);
    rec.biopsy_times.clear();
    for (const auto& b : split(f[5], ';')) {
      try {
        rec.biopsy_times.push_back(parse_double(b));
      } catch (const InputError&) {
        s.fail(r, "bad biopsy time '" + b + "'");
      }
    }
    data.push_back(std::move(rec));
    row_of.push_back(r);
  }
  for (std::size_t r = 1; r < l.rows.size(); ++r) {
    const auto it = index.find(l.rows[r][0]);
    if (it == index.end()) l.fail(r, "measurement for unknown subject '" + l.rows[r][0] + "'");
    data[it->second].measurements.push_back({l.number(r, 1), l.number(r, 2)});
  }
  if (data.empty()) throw ValidationError("subjects.csv: dataset has no subjects");
  for (std::size_t i = 0; i < data.size(); ++i) {
    try {
      data[i].validate();
    } catch (const ValidationError& e) {
      s.fail(row_of[i], e.what());
    }
  }
  return data;
}

void write_latent(const fs::path& file, const std::vector<LatentTruth>& latent) {
  auto out = open_out(file);
  out << "# format_version: " << kFormatVersion << "\n" << join(kLatentHeader, ',') << "\n";
  for (const auto& l : latent) {
    out << l.id;
    for (int j = 0; j < kNumRandom; ++j) out << ',' << format_double(l.u[j]);
    out << ',' << format_double(l.age) << ',' << format_double(l.log_psad) << ','
        << format_double(l.progression_time) << ',' << format_double(l.treatment_time) << ','
        << format_double(l.censoring_time) << ','
        << (l.first_cause ? std::string(cause_name(*l.first_cause)) : std::string("none")) << ','
        << l.missed_biopsies << "\n";
  }
}

std::vector<LatentTruth> read_latent(const fs::path& file) {
  const CsvTable t = read_csv(file, kLatentHeader);
  std::vector<LatentTruth> out;
  for (std::size_t r = 1; r < t.rows.size(); ++r) {
    LatentTruth l;
    l.id = t.rows[r][0];
    for (int j = 0; j < kNumRandom; ++j) l.u[j] = t.number(r, 1 + j);
    l.age = t.number(r, 5);
    l.log_psad = t.number(r, 6);
    l.progression_time = t.number(r, 7);
    l.treatment_time = t.number(r, 8);
    l.censoring_time = t.number(r, 9);
    const std::string& c = t.rows[r][10];
    if (c == "prg") {
      l.first_cause = Cause::Progression;
    } else if (c == "trt") {
      l.first_cause = Cause::Treatment;
    } else if (c != "none") {
      t.fail(r, "first_cause must be prg, trt or none");
    }
    l.missed_biopsies = static_cast<int>(t.number(r, 11));
    out.push_back(l);
  }
  return out;
}

json spec_to_json(const ModelSpec& spec) {
  json j;
  j["ncs"] = {{"left", spec.ncs.left()},
              {"right", spec.ncs.right()},
              {"internal_knots", spec.ncs.internal_knots()}};
  j["baseline"] = json::array();
  for (const auto& b : spec.baseline) {
    j["baseline"].push_back({{"lo", b.lo()}, {"hi", b.hi()}, {"n_basis", b.n_basis()}, {"degree", b.degree()}});
  }
  j["penalty"] = {{"order", spec.penalty_order},
                  {"ridge", spec.penalty_ridge},
                  {"rank", spec.penalty_rank == RankConvention::Deficient ? "deficient" : "full"}};
  const auto& s = spec.sensitivity;
  j["sensitivity"] = s.is_fixed() ? json{{"mode", "fixed"}, {"value", s.value}}
                                  : json{{"mode", "uniform"}, {"lo", s.lo}, {"hi", s.hi}};
  const auto& p = spec.priors;
  j["priors"] = {{"beta_var", p.beta_var},         {"gamma_var", p.gamma_var},
                 {"alpha_var", p.alpha_var},       {"normal_is_variance", p.normal_is_variance},
                 {"tau_eps_shape", p.tau_eps_shape}, {"tau_eps_rate", p.tau_eps_rate},
                 {"tau_u_shape", p.tau_u_shape},   {"tau_u_rate", p.tau_u_rate},
                 {"tau_h0_shape", p.tau_h0_shape}, {"tau_h0_rate", p.tau_h0_rate},
                 {"omega_df_extra", p.omega_df_extra}, {"omega_scale", p.omega_scale}};
  j["quadrature"] = std::string(to_string(spec.quadrature));
  j["interval_prob"] = std::string(to_string(spec.interval_prob));
  j["age_center"] = spec.age_center;
  j["t_dof"] = spec.t_dof;
  return j;
}

ModelSpec spec_from_json(const json& j) {
  try {
    const auto& n = j.at("ncs");
    ModelSpec spec;
    spec.ncs = NcsBasis(n.at("left").get<double>(), n.at("right").get<double>(),
                        n.at("internal_knots").get<std::vector<double>>());
    const auto& b = j.at("baseline");
    if (!b.is_array() || b.size() != 2) throw ConfigError("baseline must list two bases");
    for (int c = 0; c < 2; ++c) {
      spec.baseline[c] = BsplineBasis(b[c].at("lo").get<double>(), b[c].at("hi").get<double>(),
                                      b[c].at("n_basis").get<int>(), b[c].at("degree").get<int>());
    }
    if (j.contains("penalty")) {
      const auto& p = j["penalty"];
      spec.penalty_order = p.value("order", spec.penalty_order);
      spec.penalty_ridge = p.value("ridge", spec.penalty_ridge);
      const std::string rank = p.value("rank", std::string("deficient"));
      if (rank != "deficient" && rank != "full") throw ConfigError("penalty rank must be deficient or full");
      spec.penalty_rank = rank == "full" ? RankConvention::Full : RankConvention::Deficient;
    }
    const auto& s = j.at("sensitivity");
    const std::string mode = s.at("mode").get<std::string>();
    if (mode == "fixed") {
      spec.sensitivity = SensitivityMode::fixed(s.at("value").get<double>());
    } else if (mode == "uniform") {
      spec.sensitivity = SensitivityMode::uniform(s.at("lo").get<double>(), s.at("hi").get<double>());
    } else {
      throw ConfigError("sensitivity mode must be fixed or uniform");
    }
    if (j.contains("priors")) {
      const auto& p = j["priors"];
      auto& q = spec.priors;
      q.beta_var = p.value("beta_var", q.beta_var);
      q.gamma_var = p.value("gamma_var", q.gamma_var);
      q.alpha_var = p.value("alpha_var", q.alpha_var);
      q.normal_is_variance = p.value("normal_is_variance", q.normal_is_variance);
      q.tau_eps_shape = p.value("tau_eps_shape", q.tau_eps_shape);
      q.tau_eps_rate = p.value("tau_eps_rate", q.tau_eps_rate);
      q.tau_u_shape = p.value("tau_u_shape", q.tau_u_shape);
      q.tau_u_rate = p.value("tau_u_rate", q.tau_u_rate);
      q.tau_h0_shape = p.value("tau_h0_shape", q.tau_h0_shape);
      q.tau_h0_rate = p.value("tau_h0_rate", q.tau_h0_rate);
      q.omega_df_extra = p.value("omega_df_extra", q.omega_df_extra);
      q.omega_scale = p.value("omega_scale", q.omega_scale);
    }
    if (j.contains("quadrature")) spec.quadrature = parse_rule_kind(j["quadrature"].get<std::string>());
    if (j.contains("interval_prob")) {
      spec.interval_prob = parse_interval_prob_method(j["interval_prob"].get<std::string>());
    }
    spec.age_center = j.value("age_center", spec.age_center);
    spec.t_dof = j.value("t_dof", spec.t_dof);
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model specification: ") + e.what());
  }
}

json params_to_json(const ParameterState& p) {
  return {{"beta", vec_json(p.beta)},
          {"omega", mat_json(p.omega)},
          {"tau_eps", p.tau_eps},
          {"tau_u", p.tau_u},
          {"gamma_h0", {{"prg", vec_json(p.gamma_h0[0])}, {"trt", vec_json(p.gamma_h0[1])}}},
          {"tau_h0", {{"prg", p.tau_h0[0]}, {"trt", p.tau_h0[1]}}},
          {"gamma", {{"prg", p.gamma[0]}, {"trt", p.gamma[1]}}},
          {"alpha", {{"prg", vec_json(p.alpha[0])}, {"trt", vec_json(p.alpha[1])}}},
          {"rho", p.rho}};
}

ParameterState params_from_json(const ModelSpec& spec, const json& j) {
  try {
    ParameterState p = make_parameter_state(spec, 0);
    const Eigen::VectorXd beta = vec_from(j.at("beta"));
    if (beta.size() != kNumFixed) throw ValidationError("beta must have 5 entries");
    p.beta = beta;
    const auto omega = j.at("omega").get<std::vector<std::vector<double>>>();
    if (omega.size() != kNumRandom) throw ValidationError("omega must be 4 x 4");
    for (int r = 0; r < kNumRandom; ++r) {
      if (omega[r].size() != kNumRandom) throw ValidationError("omega must be 4 x 4");
      for (int c = 0; c < kNumRandom; ++c) p.omega(r, c) = omega[r][c];
    }
    p.tau_eps = j.at("tau_eps").get<double>();
    p.tau_u = j.value("tau_u", 1.0);
    for (Cause k : kCauses) {
      const std::string n(cause_name(k));
      const int c = index(k);
      p.gamma_h0[c] = vec_from(j.at("gamma_h0").at(n));
      if (p.gamma_h0[c].size() != spec.baseline[c].n_basis()) {
        throw ValidationError("gamma_h0[" + n + "] does not match the baseline basis size");
      }
      if (j.contains("tau_h0")) p.tau_h0[c] = j["tau_h0"].at(n).get<double>();
      p.gamma[c] = j.at("gamma").at(n).get<double>();
      const Eigen::VectorXd a = vec_from(j.at("alpha").at(n));
      if (a.size() != 2) throw ValidationError("alpha[" + n + "] must have 2 entries");
      p.alpha[c] = a;
    }
    p.rho = j.value("rho", 1.0);
    return p;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed parameter set: ") + e.what());
  }
}

json truth_to_json(const SimTruth& t) {
  const auto& s = t.schedule;
  const auto& c = t.covariates;
  return {{"format_version", kFormatVersion},
          {"spec", spec_to_json(t.spec)},
          {"params", params_to_json(t.params)},
          {"rho_true", t.rho_true},
          {"schedule",
           {{"psa_interval", s.psa_interval},
            {"psa_jitter", s.psa_jitter},
            {"biopsy_start", s.biopsy_start},
            {"biopsy_interval", s.biopsy_interval},
            {"biopsy_jitter", s.biopsy_jitter}}},
          {"covariates",
           {{"age_mean", c.age_mean},
            {"age_sd", c.age_sd},
            {"age_min", c.age_min},
            {"age_max", c.age_max},
            {"log_psad_mean", c.log_psad_mean},
            {"log_psad_sd", c.log_psad_sd}}},
          {"horizon", t.horizon},
          {"dropout_rate", t.dropout_rate},
          {"n_subjects", t.n_subjects}};
}

SimTruth truth_from_json(const json& j) {
  try {
    if (j.value("format_version", 0) != kFormatVersion) throw ValidationError("unsupported truth format_version");
    SimTruth t;
    t.spec = spec_from_json(j.at("spec"));
    t.params = params_from_json(t.spec, j.at("params"));
    t.rho_true = j.at("rho_true").get<double>();
    const auto& s = j.at("schedule");
    t.schedule.psa_interval = s.at("psa_interval").get<double>();
    t.schedule.psa_jitter = s.at("psa_jitter").get<double>();
    t.schedule.biopsy_start = s.at("biopsy_start").get<std::vector<double>>();
    t.schedule.biopsy_interval = s.at("biopsy_interval").get<double>();
    t.schedule.biopsy_jitter = s.at("biopsy_jitter").get<double>();
    const auto& c = j.at("covariates");
    t.covariates.age_mean = c.at("age_mean").get<double>();
    t.covariates.age_sd = c.at("age_sd").get<double>();
    t.covariates.age_min = c.at("age_min").get<double>();
    t.covariates.age_max = c.at("age_max").get<double>();
    t.covariates.log_psad_mean = c.at("log_psad_mean").get<double>();
    t.covariates.log_psad_sd = c.at("log_psad_sd").get<double>();
    t.horizon = j.at("horizon").get<double>();
    t.dropout_rate = j.at("dropout_rate").get<double>();
    t.n_subjects = j.at("n_subjects").get<int>();
    t.validate();
    return t;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed truth file: ") + e.what());
  }
}

json sampler_config_to_json(const SamplerConfig& c) {
  return {{"chains", c.n_chains},         {"iterations", c.n_iterations},
          {"thin", c.thin},               {"adapt", c.n_adapt},
          {"seed", c.seed},               {"target_multi", c.target_multi},
          {"target_scalar", c.target_scalar}, {"block_repeats", c.block_repeats}};
}

json read_json(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw InputError("cannot read " + file.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(file.filename().string() + ": " + e.what());
  }
}

void write_json(const fs::path& file, const json& j) {
  auto out = open_out(file);
  out << j.dump(2) << "\n";
}

void write_posterior(const fs::path& dir, const ModelSpec& spec, const SamplerConfig& config,
                     const PosteriorSamples& post) {
  fs::create_directories(dir);
  {
    auto out = open_out(dir / "samples.csv");
    out << "# format_version: " << kFormatVersion << "\nchain,iteration";
    for (const auto& n : post.names) out << ',' << n;
    out << "\n";
    for (int c = 0; c < post.n_chains; ++c) {
      for (int d = 0; d < post.draws_per_chain; ++d) {
        out << c << ',' << post.iterations[d];
        for (std::size_t p = 0; p < post.names.size(); ++p) {
          out << ',' << format_double(post.value(c, d, static_cast<int>(p)));
        }
        out << "\n";
      }
    }
  }
  json params = json::array();
  json diag = json::array();
  for (const auto& s : post.summary) {
    params.push_back({{"name", s.name},
                      {"mean", s.mean},
                      {"sd", s.sd},
                      {"q2.5", s.q025},
                      {"q50", s.q50},
                      {"q97.5", s.q975}});
    diag.push_back({{"name", s.name},
                    {"rhat", std::isfinite(s.diagnostic.rhat) ? json(s.diagnostic.rhat) : json(nullptr)},
                    {"ess_bulk", s.diagnostic.ess_bulk},
                    {"degenerate", s.diagnostic.degenerate}});
  }
  json acceptance = json::array();
  for (const auto& a : post.acceptance) {
    acceptance.push_back({{"beta", a.beta},
                          {"random_effects", a.random_effects},
                          {"survival_block_prg", a.survival_block[0]},
                          {"survival_block_trt", a.survival_block[1]},
                          {"tau_u", a.tau_u},
                          {"rho", a.rho}});
  }
  write_json(dir / "summary.json", {{"format_version", kFormatVersion},
                                    {"spec", spec_to_json(spec)},
                                    {"sampler", sampler_config_to_json(config)},
                                    {"draws_per_chain", post.draws_per_chain},
                                    {"parameters", params}});
  write_json(dir / "diagnostics.json", {{"format_version", kFormatVersion},
                                        {"converged", post.converged},
                                        {"warning", !post.converged},
                                        {"not_converged", post.not_converged},
                                        {"rhat_threshold", 1.1},
                                        {"acceptance", acceptance},
                                        {"parameters", diag}});
}

PosteriorSamples read_samples(const fs::path& file) {
  const CsvTable t = read_csv(file, {"chain", "iteration"}, false);
  PosteriorSamples post;
  post.names.assign(t.rows[0].begin() + 2, t.rows[0].end());
  std::vector<std::vector<double>> chains;
  std::vector<std::vector<int>> iterations;
  for (std::size_t r = 1; r < t.rows.size(); ++r) {
    const double c = t.number(r, 0);
    if (c < 0 || c != std::floor(c)) t.fail(r, "chain must be a nonnegative integer");
    const std::size_t ci = static_cast<std::size_t>(c);
    if (ci > chains.size()) t.fail(r, "chains must appear in order");
    if (ci == chains.size()) {
      chains.emplace_back();
      iterations.emplace_back();
    }
    iterations[ci].push_back(static_cast<int>(t.number(r, 1)));
    for (std::size_t p = 2; p < t.rows[r].size(); ++p) chains[ci].push_back(t.number(r, p));
  }
  if (chains.empty()) throw ValidationError(t.name + ": no draws");
  for (const auto& it : iterations) {
    if (it != iterations.front()) throw ValidationError(t.name + ": chains have different draw iterations");
  }
  post.n_chains = static_cast<int>(chains.size());
  post.draws_per_chain = static_cast<int>(iterations.front().size());
  post.iterations = iterations.front();
  post.draws = std::move(chains);
  post.summarize();
  return post;
}

json report_to_json(const EvaluationReport& r) {
  auto bias_json = [](const BiasValue& b) { return json{{"value", b.value}, {"absolute", b.absolute}}; };
  json params = json::array();
  for (const auto& p : r.parameters) {
    params.push_back({{"name", p.name},
                      {"truth", p.truth},
                      {"mean_estimate", p.metrics.mean_estimate},
                      {"relative_bias", bias_json(p.metrics.bias)},
                      {"ci_width", p.metrics.ci_width},
                      {"coverage", p.metrics.coverage},
                      {"mse", p.metrics.mse},
                      {"n_replicates", p.metrics.n_replicates}});
  }
  json hazards = json::object();
  for (const auto& h : r.hazards) {
    hazards[std::string(cause_name(h.cause))] = {{"grid_from", h.grid.front()},
                                                 {"grid_to", h.grid.back()},
                                                 {"grid_step", 0.1},
                                                 {"mean_truth", h.mean_truth},
                                                 {"mean_estimate", h.mean_estimate},
                                                 {"mean_relative_bias", h.mean_relative_bias},
                                                 {"mean_ci_width", h.mean_ci_width}};
  }
  return {{"format_version", kFormatVersion},
          {"n_replicates", r.n_replicates},
          {"parameters", params},
          {"log_baseline_hazard", hazards}};
}

void write_hazard_series(const fs::path& file, const HazardGridReport& h) {
  auto out = open_out(file);
  out << "# format_version: " << kFormatVersion << "\ntime,truth,estimate,relative_bias,ci_width\n";
  for (std::size_t i = 0; i < h.grid.size(); ++i) {
    out << format_double(h.grid[i]) << ',' << format_double(h.truth[i]) << ','
        << format_double(h.estimate[i]) << ',' << format_double(h.relative_bias[i]) << ','
        << format_double(h.ci_width[i]) << "\n";
  }
}

void write_cif_csv(const fs::path& file, const AalenJohansenResult& aj) {
  auto out = open_out(file);
  out << "# format_version: " << kFormatVersion << "\ntime,at_risk,cif_prg,cif_trt,event_free\n";
  for (std::size_t i = 0; i < aj.progression.times.size(); ++i) {
    out << format_double(aj.progression.times[i]) << ',' << aj.progression.at_risk[i] << ','
        << format_double(aj.progression.values[i]) << ',' << format_double(aj.treatment.values[i])
        << ',' << format_double(aj.survival[i]) << "\n";
  }
}

}  // namespace mcicjm
