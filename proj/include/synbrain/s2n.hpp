#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "synbrain/autograd.hpp"
#include "synbrain/config.hpp"
#include "synbrain/layers.hpp"
#include "synbrain/params.hpp"

namespace synbrain {

enum class Partition { full, mlp_only };

const char* partition_name(Partition p);
/// Accepts "full" and "mlp-only"; anything else is a ConfigError.
Partition parse_partition(const std::string& s);

/// tokens x dim table with sin on even and cos on odd columns.
Tensor sinusoidal_encoding(std::size_t tokens, std::size_t dim);

struct PartitionResult {
  std::vector<std::string> frozen;
  std::vector<std::string> trainable;
};

/// Transformer mapping a semantic token grid onto the latent grid of the
/// same shape: add a fixed sinusoidal table, run s2n_layers pre-norm blocks
/// of self-attention and a token-wise GELU MLP (both residual), then a
/// normalized linear head.
///
/// The head starts at zero, so an untrained mapper returns the latent prior
/// mean. Branch out-projections also start at zero.
class S2nMapper {
 public:
  S2nMapper(const ModelConfig& config, std::uint64_t init_seed);

  std::size_t tokens() const { return tokens_; }
  std::size_t dim() const { return dim_; }
  std::size_t layers() const { return blocks_.size(); }
  std::size_t heads() const { return heads_; }
  ParamTree& params() { return params_; }
  const ParamTree& params() const { return params_; }
  Partition partition() const { return partition_; }

  /// Disabling the positional table exposes the token-permutation symmetry.
  void set_positional_encoding(bool enabled) { use_pe_ = enabled; }

  Var forward(Graph& g, Var z_clip) const;
  Tensor forward_values(const Tensor& z_clip) const;

  /// Sets trainable flags; the positional table always stays frozen.
  PartitionResult partition_parameters(Partition mode);

  /// params.json + params.bin + s2n.json (layer/head counts, partition).
  void save(const std::filesystem::path& dir) const;
  static S2nMapper load(const std::filesystem::path& dir);

  static constexpr const char* kPositionalLeaf = "pos_embed";

 private:
  struct Block {
    SelfAttention attn;
    LayerNorm norm2;
    Linear fc1, fc2;
  };

  std::size_t tokens_, dim_, heads_, mlp_ratio_;
  std::size_t pe_leaf_ = 0;
  bool use_pe_ = true;
  Partition partition_ = Partition::full;
  mutable ParamTree params_;
  std::vector<Block> blocks_;
  LayerNorm head_norm_;
  Linear head_;
};

}  // namespace synbrain
