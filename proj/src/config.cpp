#include "mcicjm/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mcicjm/diagnostics.hpp"
#include "mcicjm/error.hpp"
#include "mcicjm/io.hpp"

namespace pt = boost::property_tree;

namespace mcicjm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

// Drops '#' and ';' comments outside quotes.
std::string strip_comments(const std::string& text) {
  std::istringstream in(text);
  std::string out;
  std::string line;
  while (std::getline(in, line)) {
    char quote = 0;
    std::size_t cut = line.size();
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quote) {
        if (c == quote) quote = 0;
      } else if (c == '"' || c == '\'') {
        quote = c;
      } else if (c == '#' || c == ';') {
        cut = i;
        break;
      }
    }
    out += line.substr(0, cut);
    out += '\n';
  }
  return out;
}

class Section {
 public:
  Section(std::string name, const pt::ptree* tree) : name_(std::move(name)), tree_(tree) {}

  std::optional<std::string> text(const std::string& key) {
    seen_.insert(key);
    if (!tree_) return std::nullopt;
    const auto v = tree_->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return unquote(*v);
  }
  template <class T>
  void read(const std::string& key, T& target) {
    if (auto v = get<T>(key)) target = *v;
  }
  template <class T>
  std::optional<T> get(const std::string& key) {
    const auto t = text(key);
    if (!t) return std::nullopt;
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        return *t;
      } else if constexpr (std::is_same_v<T, bool>) {
        if (*t == "true" || *t == "1") return true;
        if (*t == "false" || *t == "0") return false;
        throw ConfigError("");
      } else if constexpr (std::is_same_v<T, double>) {
        return parse_double(*t);
      } else if constexpr (std::is_same_v<T, std::vector<double>>) {
        return parse_list(*t);
      } else {
        std::size_t pos = 0;
        const long long v = std::stoll(*t, &pos);
        if (pos != t->size() || (v < 0 && std::is_unsigned_v<T>)) throw ConfigError("");
        return static_cast<T>(v);
      }
    } catch (const std::exception&) {
      throw ConfigError("[" + name_ + "] " + key + ": invalid value '" + *t + "'");
    }
  }
  void check_unknown() const {
    if (!tree_) return;
    for (const auto& kv : *tree_) {
      if (!seen_.count(kv.first)) throw ConfigError("[" + name_ + "] unknown key '" + kv.first + "'");
    }
  }

 private:
  std::string name_;
  const pt::ptree* tree_;
  std::set<std::string> seen_;
};

std::string list_text(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
  return s;
}

}  // namespace

std::vector<double> parse_list(const std::string& raw) {
  std::string s = trim(raw);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') throw ConfigError("unbalanced brackets in list '" + raw + "'");
    s = trim(s.substr(1, s.size() - 2));
  }
  std::vector<double> out;
  if (s.empty()) return out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(parse_double(trim(item)));
    } catch (const InputError&) {
      throw ConfigError("bad list entry '" + trim(item) + "'");
    }
  }
  return out;
}

RunConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(strip_comments(text));
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& kv : tree) {
    if (kv.first != "model" && kv.first != "sampler" && kv.first != "simulate" && kv.first != "paths") {
      throw ConfigError("unknown config section '" + kv.first + "'");
    }
  }
  auto child = [&](const char* name) {
    const auto c = tree.get_child_optional(name);
    return c ? &*c : nullptr;
  };

  RunConfig cfg;
  {
    Section s("model", child("model"));
    auto& m = cfg.model;
    if (auto v = s.get<std::vector<double>>("ncs_boundary")) {
      if (v->size() != 2) throw ConfigError("[model] ncs_boundary needs two values");
      m.ncs_boundary = *v;
    }
    if (auto v = s.get<std::vector<double>>("ncs_knots")) m.ncs_knots = *v;
    if (auto v = s.get<double>("baseline_horizon")) m.baseline_horizon = *v;
    s.read("baseline_basis", m.baseline_basis);
    s.read("baseline_degree", m.baseline_degree);
    if (auto v = s.text("sensitivity")) {
      try {
        m.sensitivity = SensitivityMode::parse(*v);
      } catch (const Error& e) {
        throw ConfigError(std::string("[model] sensitivity: ") + e.what());
      }
    }
    try {
      if (auto v = s.text("quadrature")) m.quadrature = parse_rule_kind(*v);
      if (auto v = s.text("interval_prob")) m.interval_prob = parse_interval_prob_method(*v);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(std::string("[model] ") + e.what());
    }
    s.read("penalty_order", m.penalty_order);
    s.read("penalty_ridge", m.penalty_ridge);
    if (auto v = s.text("penalty_rank")) {
      if (*v != "deficient" && *v != "full") throw ConfigError("[model] penalty_rank must be deficient or full");
      m.penalty_rank = *v == "full" ? RankConvention::Full : RankConvention::Deficient;
    }
    s.read("age_center", m.age_center);
    s.read("t_dof", m.t_dof);
    auto& p = m.priors;
    s.read("beta_var", p.beta_var);
    s.read("gamma_var", p.gamma_var);
    s.read("alpha_var", p.alpha_var);
    s.read("normal_is_variance", p.normal_is_variance);
    s.read("tau_eps_shape", p.tau_eps_shape);
    s.read("tau_eps_rate", p.tau_eps_rate);
    s.read("tau_u_shape", p.tau_u_shape);
    s.read("tau_u_rate", p.tau_u_rate);
    s.read("tau_h0_shape", p.tau_h0_shape);
    s.read("tau_h0_rate", p.tau_h0_rate);
    s.read("omega_df_extra", p.omega_df_extra);
    s.read("omega_scale", p.omega_scale);
    s.check_unknown();
  }
  {
    Section s("sampler", child("sampler"));
    auto& c = cfg.sampler;
    s.read("chains", c.n_chains);
    s.read("iterations", c.n_iterations);
    s.read("thin", c.thin);
    s.read("adapt", c.n_adapt);
    if (auto v = s.get<std::uint64_t>("seed")) {
      c.seed = *v;
      cfg.sampler_seed_set = true;
    }
    s.read("workers", c.workers);
    s.read("block_repeats", c.block_repeats);
    s.read("target_multi", c.target_multi);
    s.read("target_scalar", c.target_scalar);
    s.check_unknown();
  }
  {
    Section s("simulate", child("simulate"));
    auto& o = cfg.simulate;
    o.seed = s.get<std::uint64_t>("seed");
    s.read("n_datasets", o.n_datasets);
    o.n_subjects = s.get<int>("n_subjects");
    o.rho_true = s.get<double>("rho_true");
    o.dropout_rate = s.get<double>("dropout_rate");
    o.horizon = s.get<double>("horizon");
    s.check_unknown();
  }
  {
    Section s("paths", child("paths"));
    auto& p = cfg.paths;
    if (auto v = s.text("data")) p.data = *v;
    if (auto v = s.text("out")) p.out = *v;
    if (auto v = s.text("truth")) p.truth = *v;
    if (auto v = s.text("model_spec")) p.model_spec = *v;
    if (auto v = s.text("posteriors")) {
      std::istringstream in(*v);
      std::string item;
      while (std::getline(in, item, ',')) {
        if (!trim(item).empty()) p.posteriors.emplace_back(unquote(item));
      }
    }
    s.check_unknown();
  }
  if (cfg.simulate.n_datasets < 1) throw ConfigError("[simulate] n_datasets must be positive");
  return cfg;
}

RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_text(const RunConfig& cfg) {
  std::ostringstream o;
  const auto& m = cfg.model;
  const auto& p = m.priors;
  o << "[model]\n";
  if (m.ncs_boundary) o << "ncs_boundary = " << list_text(*m.ncs_boundary) << "\n";
  if (m.ncs_knots) o << "ncs_knots = " << list_text(*m.ncs_knots) << "\n";
  if (m.baseline_horizon) o << "baseline_horizon = " << format_double(*m.baseline_horizon) << "\n";
  o << "baseline_basis = " << m.baseline_basis << "\n"
    << "baseline_degree = " << m.baseline_degree << "\n";
  const auto& s = m.sensitivity;
  o << "sensitivity = "
    << (s.is_fixed() ? "fixed:" + format_double(s.value)
                     : "uniform:" + format_double(s.lo) + "," + format_double(s.hi))
    << "\n"
    << "quadrature = " << to_string(m.quadrature) << "\n"
    << "interval_prob = " << to_string(m.interval_prob) << "\n"
    << "penalty_order = " << m.penalty_order << "\n"
    << "penalty_ridge = " << format_double(m.penalty_ridge) << "\n"
    << "penalty_rank = " << (m.penalty_rank == RankConvention::Full ? "full" : "deficient") << "\n"
    << "age_center = " << format_double(m.age_center) << "\n"
    << "t_dof = " << format_double(m.t_dof) << "\n"
    << "beta_var = " << format_double(p.beta_var) << "\n"
    << "gamma_var = " << format_double(p.gamma_var) << "\n"
    << "alpha_var = " << format_double(p.alpha_var) << "\n"
    << "normal_is_variance = " << (p.normal_is_variance ? "true" : "false") << "\n"
    << "tau_eps_shape = " << format_double(p.tau_eps_shape) << "\n"
    << "tau_eps_rate = " << format_double(p.tau_eps_rate) << "\n"
    << "tau_u_shape = " << format_double(p.tau_u_shape) << "\n"
    << "tau_u_rate = " << format_double(p.tau_u_rate) << "\n"
    << "tau_h0_shape = " << format_double(p.tau_h0_shape) << "\n"
    << "tau_h0_rate = " << format_double(p.tau_h0_rate) << "\n"
    << "omega_df_extra = " << format_double(p.omega_df_extra) << "\n"
    << "omega_scale = " << format_double(p.omega_scale) << "\n";
  const auto& c = cfg.sampler;
  o << "\n[sampler]\n"
    << "chains = " << c.n_chains << "\n"
    << "iterations = " << c.n_iterations << "\n"
    << "thin = " << c.thin << "\n"
    << "adapt = " << c.n_adapt << "\n";
  if (cfg.sampler_seed_set) o << "seed = " << c.seed << "\n";
  o << "block_repeats = " << c.block_repeats << "\n"
    << "target_multi = " << format_double(c.target_multi) << "\n"
    << "target_scalar = " << format_double(c.target_scalar) << "\n";
  const auto& sim = cfg.simulate;
  o << "\n[simulate]\n";
  if (sim.seed) o << "seed = " << *sim.seed << "\n";
  o << "n_datasets = " << sim.n_datasets << "\n";
  if (sim.n_subjects) o << "n_subjects = " << *sim.n_subjects << "\n";
  if (sim.rho_true) o << "rho_true = " << format_double(*sim.rho_true) << "\n";
  if (sim.dropout_rate) o << "dropout_rate = " << format_double(*sim.dropout_rate) << "\n";
  if (sim.horizon) o << "horizon = " << format_double(*sim.horizon) << "\n";
  const auto& pa = cfg.paths;
  if (!pa.data && !pa.out && !pa.truth && !pa.model_spec && pa.posteriors.empty()) return o.str();
  o << "\n[paths]\n";
  auto quoted = [](const std::filesystem::path& x) { return "\"" + x.generic_string() + "\""; };
  if (pa.data) o << "data = " << quoted(*pa.data) << "\n";
  if (pa.out) o << "out = " << quoted(*pa.out) << "\n";
  if (pa.truth) o << "truth = " << quoted(*pa.truth) << "\n";
  if (pa.model_spec) o << "model_spec = " << quoted(*pa.model_spec) << "\n";
  if (!pa.posteriors.empty()) {
    o << "posteriors = ";
    for (std::size_t i = 0; i < pa.posteriors.size(); ++i) o << (i ? ", " : "") << pa.posteriors[i].generic_string();
    o << "\n";
  }
  return o.str();
}

std::vector<double> default_ncs_knots(const std::vector<PatientRecord>& data) {
  std::vector<double> times;
  for (const auto& r : data) {
    for (const auto& m : r.measurements) times.push_back(m.time);
  }
  if (times.size() < 3) throw ValidationError("too few measurements to place spline knots");
  return {quantile(times, 1.0 / 3.0), quantile(times, 2.0 / 3.0)};
}

ModelSpec build_spec(const ModelOptions& o, const std::vector<PatientRecord>& data) {
  double follow_up = 0.0;
  for (const auto& r : data) follow_up = std::max(follow_up, r.terminal_time);
  std::vector<double> boundary{0.0, follow_up};
  if (o.ncs_boundary) boundary = *o.ncs_boundary;
  const std::vector<double> knots = o.ncs_knots ? *o.ncs_knots : default_ncs_knots(data);
  const double horizon = o.baseline_horizon ? *o.baseline_horizon : boundary[1];
  if (!(boundary[1] > boundary[0])) throw ValidationError("spline boundary is empty; check follow-up times");
  ModelSpec spec = make_model_spec(NcsBasis(boundary[0], boundary[1], knots),
                                   BsplineBasis(0.0, horizon, o.baseline_basis, o.baseline_degree),
                                   o.sensitivity);
  spec.priors = o.priors;
  spec.quadrature = o.quadrature;
  spec.interval_prob = o.interval_prob;
  spec.penalty_order = o.penalty_order;
  spec.penalty_ridge = o.penalty_ridge;
  spec.penalty_rank = o.penalty_rank;
  spec.age_center = o.age_center;
  spec.t_dof = o.t_dof;
  spec.validate();
  return spec;
}

void record_spec(const ModelSpec& spec, ModelOptions& o) {
  o.ncs_boundary = std::vector<double>{spec.ncs.left(), spec.ncs.right()};
  o.ncs_knots = spec.ncs.internal_knots();
  o.baseline_horizon = spec.baseline[0].hi();
  o.baseline_basis = spec.baseline[0].n_basis();
  o.baseline_degree = spec.baseline[0].degree();
  o.sensitivity = spec.sensitivity;
  o.priors = spec.priors;
  o.quadrature = spec.quadrature;
  o.interval_prob = spec.interval_prob;
  o.penalty_order = spec.penalty_order;
  o.penalty_ridge = spec.penalty_ridge;
  o.penalty_rank = spec.penalty_rank;
  o.age_center = spec.age_center;
  o.t_dof = spec.t_dof;
}

SimTruth build_truth(const RunConfig& cfg) {
  SimTruth t = cfg.paths.truth ? truth_from_json(read_json(*cfg.paths.truth)) : default_truth();
  const auto& o = cfg.simulate;
  if (o.n_subjects) t.n_subjects = *o.n_subjects;
  if (o.rho_true) t.rho_true = *o.rho_true;
  if (o.dropout_rate) t.dropout_rate = *o.dropout_rate;
  if (o.horizon) t.horizon = *o.horizon;
  t.validate();
  return t;
}

}  // namespace mcicjm
