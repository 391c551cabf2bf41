#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "mcicjm/model.hpp"

namespace fixtures {

using namespace mcicjm;

inline ModelSpec spline_spec(int n_basis = 12, int degree = 3, RuleKind rule = RuleKind::GK15) {
  ModelSpec spec = make_model_spec(NcsBasis(0.0, 12.5, {1.5, 3.5}),
                                   BsplineBasis(0.0, 12.5, n_basis, degree));
  spec.quadrature = rule;
  return spec;
}

inline Eigen::VectorXd prg_coefficients() {
  Eigen::VectorXd g(12);
  g << -3.02, -2.57, -2.17, -1.87, -1.78, -1.87, -2.04, -2.26, -2.51, -2.74, -2.95, -3.15;
  return g;
}

inline Eigen::VectorXd trt_coefficients() {
  Eigen::VectorXd g(12);
  g << -5.13, -4.55, -4.26, -4.31, -4.47, -4.65, -4.80, -4.91, -5.11, -5.37, -5.66, -5.97;
  return g;
}

// Parameter values of the simulation truth on a 12-function cubic basis.
inline ParameterState truth_state(const ModelSpec& spec, std::size_t n_subjects) {
  ParameterState p = make_parameter_state(spec, n_subjects);
  p.beta << 2.35, 0.27, 0.62, 1.00, 0.02;
  p.omega << 0.49, -0.04, -0.09, 0.01, -0.04, 0.77, 0.43, -0.08, -0.09, 0.43, 1.41, 1.43, 0.01,
      -0.08, 1.43, 2.60;
  p.tau_eps = 47.39;
  p.gamma_h0 = {prg_coefficients(), trt_coefficients()};
  p.gamma = {0.41, 0.25};
  p.alpha = {Eigen::Vector2d(0.16, 1.79), Eigen::Vector2d(0.40, 2.22)};
  p.rho = 0.75;
  return p;
}

// Flat baselines at log(lambda) and no covariate effects: constant hazards.
inline ParameterState constant_hazard_state(const ModelSpec& spec, double lambda_p,
                                            double lambda_t, std::size_t n_subjects = 1) {
  ParameterState p = make_parameter_state(spec, n_subjects);
  p.gamma_h0[0] = Eigen::VectorXd::Constant(spec.baseline[0].n_basis(), std::log(lambda_p));
  p.gamma_h0[1] = Eigen::VectorXd::Constant(spec.baseline[1].n_basis(), std::log(lambda_t));
  return p;
}

// A subject with the given biopsy times (t_0 = 0 prepended) and outcome.
inline PatientRecord subject(std::vector<double> biopsies, EventStatus delta, double terminal,
                             double age = 62.0, double psad = 0.1) {
  PatientRecord r;
  r.id = "s";
  r.age = age;
  r.psad = psad;
  r.log_psad = std::log(psad);
  r.biopsy_times = {0.0};
  r.biopsy_times.insert(r.biopsy_times.end(), biopsies.begin(), biopsies.end());
  r.delta = delta;
  r.terminal_time = terminal;
  return r;
}

// Random valid subject: 1-5 biopsies, any outcome, a few measurements.
inline PatientRecord random_subject(std::mt19937_64& gen, int id) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> count(1, 5);
  std::uniform_int_distribution<int> status(0, 2);
  PatientRecord r;
  r.id = "r" + std::to_string(id);
  r.age = 50.0 + 25.0 * unif(gen);
  r.psad = std::exp(std::log(0.1) + 0.5 * (unif(gen) - 0.5) * 3.0);
  r.log_psad = std::log(r.psad);
  const int n = count(gen);
  r.biopsy_times = {0.0};
  double t = 0.0;
  for (int j = 0; j < n; ++j) {
    t += 0.5 + 2.0 * unif(gen);
    r.biopsy_times.push_back(t);
  }
  r.delta = static_cast<EventStatus>(status(gen));
  r.terminal_time = r.delta == EventStatus::Progression ? t : t + 1.5 * unif(gen);
  for (double s = 0.0; s <= r.terminal_time; s += 0.5) {
    r.measurements.push_back({s, 2.0 + 0.3 * s + 0.2 * (unif(gen) - 0.5)});
  }
  return r;
}

// Parameter state perturbed around the truth.
inline ParameterState random_state(const ModelSpec& spec, std::mt19937_64& gen,
                                   std::size_t n_subjects) {
  std::normal_distribution<double> z(0.0, 1.0);
  ParameterState p = truth_state(spec, n_subjects);
  for (int j = 0; j < kNumFixed; ++j) p.beta[j] += 0.1 * z(gen);
  for (auto& u : p.u) {
    for (int j = 0; j < kNumRandom; ++j) u[j] = 0.3 * z(gen);
  }
  for (int k = 0; k < 2; ++k) {
    for (int a = 0; a < p.gamma_h0[k].size(); ++a) p.gamma_h0[k][a] += 0.3 * z(gen);
    p.gamma[k] += 0.2 * z(gen);
    p.alpha[k][0] += 0.1 * z(gen);
    p.alpha[k][1] += 0.3 * z(gen);
  }
  return p;
}

// Composite trapezoid rule with n panels.
inline double trapezoid(const std::function<double(double)>& f, double a, double b, long n) {
  if (b <= a) return 0.0;
  const double h = (b - a) / n;
  double s = 0.5 * (f(a) + f(b));
  for (long i = 1; i < n; ++i) s += f(a + i * h);
  return s * h;
}

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("mcicjm_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace fixtures
