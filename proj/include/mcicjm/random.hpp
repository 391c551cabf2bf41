#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace mcicjm {

// SplitMix64 step; advances `state` and returns the next output.
std::uint64_t splitmix64(std::uint64_t& state);

// Seed for an independent substream, e.g. (master seed, chain index) or
// (dataset seed, subject index, purpose).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                          std::uint64_t substream = 0);

// Mersenne-Twister engine with Boost.Random distributions. The Boost
// distributions keep no hidden state between calls, so the engine state is the
// whole stream state and checkpoints are exact.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  double uniform();  // open interval (0, 1)
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  double gamma(double shape, double rate);
  double exponential(double rate);
  double chi_squared(double dof);
  double student_t(double dof);

  std::string state() const;
  void set_state(const std::string& text);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace mcicjm
