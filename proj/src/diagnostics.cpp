#include "mcicjm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "mcicjm/error.hpp"

namespace mcicjm {
namespace {

void check_shape(const ChainDraws& chains, std::size_t min_draws) {
  if (chains.empty()) throw InputError("diagnostics need at least one chain");
  const std::size_t n = chains.front().size();
  for (const auto& c : chains) {
    if (c.size() != n) throw InputError("chains must have equal lengths");
  }
  if (n < min_draws) throw InputError("too few draws for diagnostics");
}

ChainDraws split(const ChainDraws& chains) {
  ChainDraws out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    // Odd lengths drop the middle draw.
    out.emplace_back(c.begin(), c.begin() + half);
    out.emplace_back(c.end() - half, c.end());
  }
  return out;
}

double mean(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

// Biased autocovariances at lags 0..n-1.
std::vector<double> autocovariance(std::span<const double> x) {
  const std::size_t n = x.size();
  const double m = mean(x);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = x[i] - m;
  std::vector<double> acov(n, 0.0);
  for (std::size_t lag = 0; lag < n; ++lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += d[i] * d[i + lag];
    acov[lag] = s / static_cast<double>(n);
  }
  return acov;
}

}  // namespace

double split_rhat(const ChainDraws& chains, bool* degenerate) {
  check_shape(chains, 4);
  const ChainDraws halves = split(chains);
  const std::size_t n = halves.front().size();
  std::vector<double> means;
  double w = 0.0;
  for (const auto& c : halves) {
    means.push_back(mean(c));
    w += variance(c);
  }
  w /= static_cast<double>(halves.size());
  const double b_over_n = variance(means);
  if (degenerate != nullptr) *degenerate = false;
  if (!(w > 0.0)) {
    if (degenerate != nullptr) *degenerate = true;
    return b_over_n > 0.0 ? INFINITY : 1.0;
  }
  const double var_plus = (static_cast<double>(n) - 1.0) / static_cast<double>(n) * w + b_over_n;
  return std::sqrt(var_plus / w);
}

double effective_sample_size(const ChainDraws& chains) {
  check_shape(chains, 4);
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  std::vector<std::vector<double>> acov;
  std::vector<double> chain_mean;
  std::vector<double> chain_var;
  for (const auto& c : chains) {
    acov.push_back(autocovariance(c));
    chain_mean.push_back(mean(c));
    chain_var.push_back(acov.back()[0] * static_cast<double>(n) / (static_cast<double>(n) - 1.0));
  }
  const double mean_var = mean(chain_var);
  double var_plus = mean_var * (static_cast<double>(n) - 1.0) / static_cast<double>(n);
  if (m > 1) var_plus += variance(chain_mean);
  if (!(var_plus > 0.0)) return static_cast<double>(m * n);

  auto acov_mean = [&](std::size_t lag) {
    double s = 0.0;
    for (const auto& a : acov) s += a[lag];
    return s / static_cast<double>(m);
  };
  std::vector<double> rho(n, 0.0);
  rho[0] = 1.0;
  double even = 1.0;
  double odd = 1.0 - (mean_var - acov_mean(1)) / var_plus;
  rho[1] = odd;
  std::size_t t = 1;
  while (t + 5 < n && even + odd > 0.0) {
    even = 1.0 - (mean_var - acov_mean(t + 1)) / var_plus;
    odd = 1.0 - (mean_var - acov_mean(t + 2)) / var_plus;
    if (even + odd >= 0.0) {
      rho[t + 1] = even;
      rho[t + 2] = odd;
    }
    t += 2;
  }
  const std::size_t max_t = t;
  if (even > 0.0 && max_t + 1 < n) rho[max_t + 1] = even;
  // Initial monotone sequence.
  for (std::size_t s = 1; s + 3 <= max_t; s += 2) {
    if (rho[s + 1] + rho[s + 2] > rho[s - 1] + rho[s]) {
      rho[s + 1] = 0.5 * (rho[s - 1] + rho[s]);
      rho[s + 2] = rho[s + 1];
    }
  }
  const double total = static_cast<double>(m * n);
  double tau = -1.0;
  for (std::size_t s = 0; s <= max_t && s < n; ++s) tau += 2.0 * rho[s];
  if (max_t + 1 < n) tau += rho[max_t + 1];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

double bulk_ess(const ChainDraws& chains) {
  check_shape(chains, 4);
  ChainDraws halves = split(chains);
  const std::size_t n = halves.front().size();
  const std::size_t total = halves.size() * n;
  // Pooled fractional ranks with ties averaged, mapped through the normal
  // quantile (Blom offsets).
  std::vector<std::pair<double, std::size_t>> pooled;
  pooled.reserve(total);
  for (std::size_t c = 0; c < halves.size(); ++c) {
    for (std::size_t i = 0; i < n; ++i) pooled.emplace_back(halves[c][i], c * n + i);
  }
  std::sort(pooled.begin(), pooled.end());
  std::vector<double> rank(total);
  for (std::size_t i = 0; i < total;) {
    std::size_t j = i;
    while (j + 1 < total && pooled[j + 1].first == pooled[i].first) ++j;
    const double r = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[pooled[k].second] = r;
    i = j + 1;
  }
  const boost::math::normal_distribution<double> std_normal;
  for (std::size_t c = 0; c < halves.size(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = (rank[c * n + i] - 0.375) / (static_cast<double>(total) + 0.25);
      halves[c][i] = boost::math::quantile(std_normal, p);
    }
  }
  return effective_sample_size(halves);
}

ConvergenceDiagnostic diagnose(const ChainDraws& chains) {
  ConvergenceDiagnostic d;
  d.rhat = split_rhat(chains, &d.degenerate);
  d.ess_bulk = d.degenerate ? 0.0 : bulk_ess(chains);
  return d;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw InputError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace mcicjm
