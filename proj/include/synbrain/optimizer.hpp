#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "synbrain/params.hpp"

namespace synbrain {

struct AdamWSettings {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Adam with decoupled weight decay. Decay applies only to leaves flagged
/// `decay` (weights), never to biases or norm parameters. Frozen leaves
/// are skipped and keep their moments untouched.
class AdamW {
 public:
  explicit AdamW(AdamWSettings s) : s_(s) {}

  void step(ParamTree& params);
  std::size_t steps() const { return mom_.t; }
  const AdamWSettings& settings() const { return s_; }

  struct Moments {
    std::size_t t = 0;
    std::vector<Tensor> m, v;  // one pair per leaf, empty until first update
  };
  const Moments& moments() const { return mom_; }
  void restore(Moments m) { mom_ = std::move(m); }

 private:
  AdamWSettings s_;
  Moments mom_;
};

/// Everything needed to resume a training loop bit-identically.
struct TrainState {
  std::size_t step = 0;
  std::size_t epoch = 0;
  AdamW::Moments moments;
  std::vector<double> params;       // current values, exact
  std::vector<double> best_params;  // best-validation snapshot
  double initial_val = 0.0;  // validation MSE before the first update
  double best_val = 0.0;
  bool has_best = false;
  std::size_t best_epoch = 0;
  std::size_t bad_rounds = 0;  // validation rounds without improvement
  std::string rng_state;       // textual mt19937_64 state

  /// train_state.json + train_state.bin (float64, exact).
  void save(const std::filesystem::path& dir) const;
  static TrainState load(const std::filesystem::path& dir);
};

std::string rng_to_string(const std::mt19937_64& rng);
std::mt19937_64 rng_from_string(const std::string& s);

}  // namespace synbrain
