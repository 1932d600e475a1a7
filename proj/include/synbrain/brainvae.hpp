#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "synbrain/autograd.hpp"
#include "synbrain/config.hpp"
#include "synbrain/layers.hpp"
#include "synbrain/params.hpp"

namespace synbrain {

/// Diagonal Gaussian over the tokens x latent_dim grid.
struct LatentGaussian {
  Tensor mu;
  Tensor log_var;  // clamped to [logvar_min, logvar_max]
};

/// Standard normal draws shaped like the latent grid.
Tensor sample_epsilon(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

/// z = mu + exp(log_var / 2) * eps.
Var reparameterize(Graph& g, Var mu, Var log_var, const Tensor& eps);

/// Shapes through the encoder/decoder for one voxel count, computed from
/// the config without allocating parameters.
struct VaeShapeTrace {
  std::size_t stem_channels = 0;
  std::size_t pooled_len = 0;
  std::size_t bottleneck_channels = 0;
  std::size_t bottleneck_len = 0;
  std::size_t hidden_rows = 0, hidden_cols = 0;
  std::size_t latent_rows = 0, latent_cols = 0;
  std::size_t decoder_len = 0;
  std::size_t output_len = 0;
};

/// Variational encoder-decoder over 1 x V fMRI vectors.
///
/// encoder: conv stem -> adaptive max pool to pooled_len -> per level
/// num_res_blocks ResnetBlocks (+ a stride-2 downsample for the first
/// num_down_blocks levels) -> middle (res, attention, res) -> norm, SiLU,
/// conv to hidden_tokens channels. The resulting hidden_tokens x hidden_dim
/// grid goes through two MLP projectors for mu and log-variance.
///
/// decoder: post-projector to hidden_tokens x hidden_dim -> conv_in ->
/// middle -> levels in reverse channel order (nearest x2 upsample ahead of
/// the last num_down_blocks levels) -> norm, SiLU -> linear resample to V
/// -> conv to one channel.
///
/// One parameter set serves every voxel count.
class BrainVae {
 public:
  BrainVae(ModelConfig config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  ParamTree& params() { return params_; }
  const ParamTree& params() const { return params_; }

  struct PosteriorVars {
    Var mu;
    Var log_var;
  };
  struct ForwardVars {
    Var fmri_hat;  // 1 x V
    Var z;         // tokens x latent_dim
    PosteriorVars posterior;
  };

  Var encode(Graph& g, Var fmri) const;
  PosteriorVars posterior(Graph& g, Var hidden) const;
  Var decode(Graph& g, Var z, std::size_t voxels) const;
  /// encode -> posterior -> z = mu + exp(log_var/2) * eps -> decode.
  ForwardVars forward(Graph& g, Var fmri, const Tensor& eps) const;

  // Value-level conveniences (no gradient recording).
  Tensor encode_values(std::span<const double> fmri) const;
  LatentGaussian infer(std::span<const double> fmri) const;
  std::vector<double> decode_values(const Tensor& z, std::size_t voxels) const;

  static VaeShapeTrace trace_shapes(const ModelConfig& config, std::size_t voxels);

  /// Checkpoint directory: params.json + params.bin + model.json (config stamp).
  void save(const std::filesystem::path& dir) const;
  static BrainVae load(const std::filesystem::path& dir);
  /// Loads parameters only after checking the stamped config is compatible.
  void load_params(const std::filesystem::path& dir);

 private:
  struct Level {
    std::vector<ResnetBlock> blocks;
    bool resample = false;
    Downsample down;
    Upsample up;
  };
  struct Middle {
    ResnetBlock res1;
    SelfAttention1d attn;
    ResnetBlock res2;
    Var operator()(Graph& g, ParamTree& p, Var x) const;
  };


  ModelConfig config_;
  // Gradients accumulate here during backward; forward passes only read values.
  mutable ParamTree params_;

  Conv1d stem_;
  std::vector<Level> enc_levels_;
  Middle enc_mid_;
  ChannelNorm enc_norm_out_;
  Conv1d enc_conv_out_;
  MlpProjector mu_proj_, logvar_proj_, post_proj_;
  Conv1d dec_conv_in_;
  Middle dec_mid_;
  std::vector<Level> dec_levels_;
  ChannelNorm dec_norm_out_;
  Conv1d dec_conv_out_;
};

/// Config fields that must agree for a checkpoint to be reusable.
bool architecture_compatible(const ModelConfig& a, const ModelConfig& b);

}  // namespace synbrain
