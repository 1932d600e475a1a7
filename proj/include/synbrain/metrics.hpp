#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "synbrain/tensor.hpp"

namespace synbrain {

double pearson(std::span<const double> a, std::span<const double> b);  // NaN if either is constant
double cosine(std::span<const double> a, std::span<const double> b);    // NaN if either is zero

struct VoxelMetrics {
  double mse = 0.0;
  double pearson = 0.0;
  double cosine = 0.0;
  std::size_t trials = 0;
  std::size_t pearson_undefined = 0;  // trials left out of the Pearson mean
};

/// Compares one prediction against every trial and averages per metric.
VoxelMetrics voxel_metrics(std::span<const double> pred, const std::vector<std::vector<double>>& trials);

struct RetrievalStats {
  double mean = 0.0;
  double sd = 0.0;
  std::vector<double> per_repeat;
};

/// Top-1 cosine retrieval. Query i's true item is gallery row truth[i]. Each
/// repeat draws, per query, candidates-1 distractors from the rest of the
/// gallery; a query scores when its true item beats every distractor.
RetrievalStats retrieval_accuracy(const Tensor& queries, const Tensor& gallery,
                                  std::span<const std::size_t> truth, std::size_t candidates,
                                  std::size_t repeats, std::mt19937_64& rng);

/// Fraction of sampled (i, j != i) pairs with sim(orig_i, dec_i) > sim(orig_i, dec_j).
double two_way_accuracy(const Tensor& orig, const Tensor& decoded, std::mt19937_64& rng,
                        std::size_t trials = 1000);
/// Same comparison over every ordered pair.
double two_way_accuracy_exhaustive(const Tensor& orig, const Tensor& decoded);

/// Mean over rows of a of the Euclidean distance to the nearest row of b.
double latent_gap(const Tensor& a, const Tensor& b);

struct EvalReport {
  VoxelMetrics voxel;
  double cross_stimulus_pearson = 0.0;
  RetrievalStats retrieval_raw;
  RetrievalStats retrieval_syn;
  std::size_t candidates = 0;
  double two_way = 0.0;
  double gap_noise = 0.0;      // pure Gaussian draws vs encoded latents
  double gap_perturbed = 0.0;  // lightly noised encoded latents vs encoded latents

  nlohmann::json to_json() const;
  /// Fixed column order: MSE, Pearson, Cosine, two-way, Raw, Syn.
  std::string table() const;
};

}  // namespace synbrain
