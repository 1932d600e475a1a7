#pragma once

// Shape-checked building blocks shared by the variational encoder-decoder
// and the semantic-to-latent transformer. A block owns only leaf indices
// into a ParamTree; calling it records ops on a Graph.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "synbrain/autograd.hpp"
#include "synbrain/params.hpp"

namespace synbrain {

/// Registers leaves under a dotted name prefix with the default init
/// (truncated normal sd 0.02 for weights, zeros for biases, ones for gains).
class ParamBuilder {
 public:
  ParamBuilder(ParamTree& tree, std::mt19937_64& rng, std::string prefix = {})
      : tree_(tree), rng_(rng), prefix_(std::move(prefix)) {}

  ParamBuilder scope(const std::string& name) const;
  std::size_t weight(const std::string& name, std::size_t rows, std::size_t cols);
  std::size_t zeros(const std::string& name, std::size_t rows, std::size_t cols);
  std::size_t ones(const std::string& name, std::size_t rows, std::size_t cols);

  static constexpr double kInitSd = 0.02;

 private:
  std::string full(const std::string& name) const;
  ParamTree& tree_;
  std::mt19937_64& rng_;
  std::string prefix_;
};

struct Conv1d {
  std::size_t weight = 0;  // c_out x (c_in*kernel)
  std::size_t bias = 0;    // c_out x 1
  std::size_t c_in = 0, c_out = 0, kernel = 1, stride = 1, pad = 0;

  static Conv1d make(ParamBuilder b, std::size_t c_in, std::size_t c_out, std::size_t kernel,
                     std::size_t stride, std::size_t pad);
  Var operator()(Graph& g, ParamTree& p, Var x) const;
  std::size_t out_length(std::size_t length) const {
    return (length + 2 * pad - kernel) / stride + 1;
  }
};

struct Linear {
  std::size_t weight = 0;  // d_in x d_out, applied as x * W
  std::size_t bias = 0;    // 1 x d_out
  std::size_t d_in = 0, d_out = 0;

  static Linear make(ParamBuilder b, std::size_t d_in, std::size_t d_out);
  Var operator()(Graph& g, ParamTree& p, Var x) const;
};

/// Layer normalization over the last axis of a tokens x dim grid.
struct LayerNorm {
  std::size_t gain = 0;
  std::size_t bias = 0;
  std::size_t dim = 0;

  static LayerNorm make(ParamBuilder b, std::size_t dim);
  Var operator()(Graph& g, ParamTree& p, Var x) const;
};

/// Layer normalization across channels at every position of a C x L map.
struct ChannelNorm {
  LayerNorm norm;

  static ChannelNorm make(ParamBuilder b, std::size_t channels);
  Var operator()(Graph& g, ParamTree& p, Var x) const;
};

/// Two (norm -> SiLU -> conv k=3) stages plus a skip path; the skip is a
/// 1x1 conv when channel counts differ and the identity otherwise.
struct ResnetBlock {
  ChannelNorm norm1, norm2;
  Conv1d conv1, conv2;
  bool has_skip_conv = false;
  Conv1d skip;
  std::size_t c_in = 0, c_out = 0;

  static ResnetBlock make(ParamBuilder b, std::size_t c_in, std::size_t c_out);
  Var operator()(Graph& g, ParamTree& p, Var x) const;
};

/// Pre-norm multi-head self-attention with residual over a tokens x dim grid:
/// x + Wo * attention(LN(x)). No positional information is injected.
struct SelfAttention {
  LayerNorm norm;
  Linear q, k, v, out;
  std::size_t dim = 0, heads = 1;

  static SelfAttention make(ParamBuilder b, std::size_t dim, std::size_t heads);
  Var operator()(Graph& g, ParamTree& p, Var tokens) const;
};

/// SelfAttention applied to a C x L feature map, treating positions as tokens.
struct SelfAttention1d {
  SelfAttention attn;

  static SelfAttention1d make(ParamBuilder b, std::size_t channels, std::size_t heads);
  Var operator()(Graph& g, ParamTree& p, Var x) const;
};

/// Token-wise stack of [LayerNorm -> GELU -> Linear] stages over the dims
/// chain, e.g. {4096, 2048, 2048, 1664}. Tokens never mix.
struct MlpProjector {
  std::vector<LayerNorm> norms;
  std::vector<Linear> linears;

  static MlpProjector make(ParamBuilder b, const std::vector<std::size_t>& dims);
  Var operator()(Graph& g, ParamTree& p, Var x) const;
  std::size_t d_in() const { return linears.front().d_in; }
  std::size_t d_out() const { return linears.back().d_out; }
};

/// Stride-2 conv, halving the length.
struct Downsample {
  Conv1d conv;
  static Downsample make(ParamBuilder b, std::size_t channels);
  Var operator()(Graph& g, ParamTree& p, Var x) const;
};

/// Nearest-neighbour x2 followed by a k=3 conv.
struct Upsample {
  Conv1d conv;
  static Upsample make(ParamBuilder b, std::size_t channels);
  Var operator()(Graph& g, ParamTree& p, Var x) const;
};

}  // namespace synbrain
