#pragma once

#include <span>
#include <vector>

namespace mcicjm {

// One parameter's draws, one inner vector per chain (equal lengths).
using ChainDraws = std::vector<std::vector<double>>;

struct ConvergenceDiagnostic {
  double rhat = 1.0;      // classic split R-hat
  double ess_bulk = 0.0;  // rank-normalized split-chain ESS
  bool degenerate = false;  // zero within-chain variance
};

// Split R-hat: each chain halved, then the variance-ratio formula. Chains
// with zero within-chain variance give 1 when all values agree and +inf
// otherwise, with the degenerate flag set.
double split_rhat(const ChainDraws& chains, bool* degenerate = nullptr);

// Effective sample size with Geyer's initial monotone sequence.
double effective_sample_size(const ChainDraws& chains);

// Rank-normalized bulk ESS on split chains.
double bulk_ess(const ChainDraws& chains);

ConvergenceDiagnostic diagnose(const ChainDraws& chains);

// R type-7 quantile of unsorted values.
double quantile(std::vector<double> values, double p);

}  // namespace mcicjm
