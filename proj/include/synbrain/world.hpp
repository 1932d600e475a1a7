#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include "json.hpp"
#include "synbrain/config.hpp"
#include "synbrain/tensor.hpp"

namespace synbrain {

using StimulusId = int;

/// Parameters of the ground-truth generative world.
struct SyntheticWorldSpec {
  std::size_t concept_dim = 16;
  std::size_t tokens = 16;     // m
  std::size_t embed_dim = 32;  // d
  std::map<SubjectId, std::size_t> voxel_counts{{1, 512}, {2, 480}, {3, 496}};
  double trial_noise_sd = 0.1;
  std::uint64_t subject_mixing_seed = 0;
  std::size_t n_train_stimuli = 200;
  std::size_t n_test_stimuli = 20;
  std::size_t trials_per_test_stimulus = 3;
  std::size_t trials_per_train_stimulus = 1;
  std::size_t n_sessions = 40;
  // Number of distinct stimuli the world can show (train + test + unseen).
  std::size_t stimulus_pool = 2000;
  double token_perturbation = 0.3;
  double response_gain = 1.0;
  double spatial_smoothness = 4.0;  // sd, in voxels, of the response-map smoothing

  static SyntheticWorldSpec desk();
  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticWorldSpec from_json(const nlohmann::json& j);
};

/// Ground-truth oracle: concept vectors -> semantic token grids, and
/// concept vectors -> subject-specific noisy voxel responses
/// y = tanh(A_s c) + noise.
///
/// Fully determined by (spec, seed). Every draw is keyed by its identifiers
/// (stimulus, subject, trial), so the order of queries never matters.
/// All returned values are rounded to float32 precision, the on-disk dtype.
class SyntheticWorld {
 public:
  SyntheticWorld(SyntheticWorldSpec spec, std::uint64_t seed);

  const SyntheticWorldSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<double> concept_vector(StimulusId stimulus) const;
  Tensor embedding(StimulusId stimulus) const;
  std::vector<double> clean_response(SubjectId subject, StimulusId stimulus) const;
  std::vector<double> response(SubjectId subject, StimulusId stimulus, std::size_t trial) const;

  /// Frozen subject response map (V_s x concept_dim).
  const Tensor& response_map(SubjectId subject) const;

 private:
  void check_stimulus(StimulusId stimulus) const;

  SyntheticWorldSpec spec_;
  std::uint64_t seed_;
  Tensor token_base_;                       // concept_dim x embed_dim
  std::vector<Tensor> token_perturb_;       // per token, concept_dim x embed_dim
  std::map<SubjectId, Tensor> response_maps_;
};

double round_to_f32(double v);

}  // namespace synbrain
