#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace synbrain {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using SubjectId = int;

/// Every architectural and optimisation hyperparameter.
///
/// The encoder output grid is hidden_tokens x hidden_dim where hidden_dim is
/// the pooled length after num_down_blocks halvings; the latent grid is
/// hidden_tokens x latent_dim and must match the semantic embedding grid.
struct ModelConfig {
  std::map<SubjectId, std::size_t> voxel_counts_by_subject;

  // BrainVAE backbone
  std::size_t pooled_len = 8192;
  std::size_t base_channels = 128;
  std::vector<std::size_t> ch_mult{1, 2, 4, 4};
  std::size_t num_res_blocks = 2;
  std::size_t num_down_blocks = 1;
  std::size_t stem_kernel = 7;
  std::size_t vae_attn_heads = 1;
  std::size_t hidden_tokens = 256;
  std::size_t hidden_dim = 4096;
  std::size_t latent_dim = 1664;
  std::size_t projector_dim = 2048;
  double logvar_min = -30.0;
  double logvar_max = 20.0;
  double logvar_bias_init = -10.0;  // starts the posterior narrow so early latents carry signal

  // S2N mapper
  std::size_t s2n_layers = 8;
  std::size_t s2n_heads = 13;
  std::size_t s2n_mlp_ratio = 4;

  // objectives
  double lambda_kl = 0.001;
  double lambda_clip = 1000.0;
  double temperature = 0.05;

  // optimisation
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.05;
  std::size_t batch_size = 24;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  double val_fraction = 0.1;
  std::size_t s2n_steps = 50000;
  double s2n_lr = 1e-4;
  std::size_t s2n_eval_every = 500;
  std::size_t adapt_epochs = 30;
  std::size_t adapt_s2n_steps = 5000;
  std::size_t adapt_batch_size = 24;
  std::uint64_t seed = 0;

  /// Paper-scale values.
  static ModelConfig paper();
  /// Desk-scale override preserving every shape relationship.
  static ModelConfig desk();

  std::size_t num_levels() const { return ch_mult.size() - 1; }
  std::size_t voxel_count(SubjectId s) const;

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  /// Overlays keys present in j on top of this config.
  void merge_json(const nlohmann::json& j);
};

}  // namespace synbrain
