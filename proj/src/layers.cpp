#include "synbrain/layers.hpp"

#include <cmath>

namespace synbrain {

ParamBuilder ParamBuilder::scope(const std::string& name) const {
  return ParamBuilder(tree_, rng_, full(name));
}

std::string ParamBuilder::full(const std::string& name) const {
  return prefix_.empty() ? name : prefix_ + "." + name;
}

std::size_t ParamBuilder::weight(const std::string& name, std::size_t rows, std::size_t cols) {
  return tree_.add(full(name), truncated_normal(rows, cols, kInitSd, rng_), true);
}

std::size_t ParamBuilder::zeros(const std::string& name, std::size_t rows, std::size_t cols) {
  return tree_.add(full(name), Tensor(rows, cols, 0.0), false);
}

std::size_t ParamBuilder::ones(const std::string& name, std::size_t rows, std::size_t cols) {
  return tree_.add(full(name), Tensor(rows, cols, 1.0), false);
}

Conv1d Conv1d::make(ParamBuilder b, std::size_t c_in, std::size_t c_out, std::size_t kernel,
                    std::size_t stride, std::size_t pad) {
  Conv1d c;
  c.c_in = c_in;
  c.c_out = c_out;
  c.kernel = kernel;
  c.stride = stride;
  c.pad = pad;
  c.weight = b.weight("weight", c_out, c_in * kernel);
  c.bias = b.zeros("bias", c_out, 1);
  return c;
}

Var Conv1d::operator()(Graph& g, ParamTree& p, Var x) const {
  if (x.rows() != c_in) {
    throw ShapeError("conv1d expects " + std::to_string(c_in) + " channels, got " +
                     std::to_string(x.rows()));
  }
  return conv1d(x, g.param(p, weight), g.param(p, bias), kernel, stride, pad);
}

Linear Linear::make(ParamBuilder b, std::size_t d_in, std::size_t d_out) {
  Linear l;
  l.d_in = d_in;
  l.d_out = d_out;
  l.weight = b.weight("weight", d_in, d_out);
  l.bias = b.zeros("bias", 1, d_out);
  return l;
}

Var Linear::operator()(Graph& g, ParamTree& p, Var x) const {
  if (x.cols() != d_in) {
    throw ShapeError("linear expects dim " + std::to_string(d_in) + ", got " +
                     std::to_string(x.cols()));
  }
  return add_row_bias(matmul(x, g.param(p, weight)), g.param(p, bias));
}

LayerNorm LayerNorm::make(ParamBuilder b, std::size_t dim) {
  LayerNorm n;
  n.dim = dim;
  n.gain = b.ones("gain", 1, dim);
  n.bias = b.zeros("bias", 1, dim);
  return n;
}

Var LayerNorm::operator()(Graph& g, ParamTree& p, Var x) const {
  return layer_norm_rows(x, g.param(p, gain), g.param(p, bias));
}

ChannelNorm ChannelNorm::make(ParamBuilder b, std::size_t channels) {
  return ChannelNorm{LayerNorm::make(b, channels)};
}

Var ChannelNorm::operator()(Graph& g, ParamTree& p, Var x) const {
  return transpose(norm(g, p, transpose(x)));
}

ResnetBlock ResnetBlock::make(ParamBuilder b, std::size_t c_in, std::size_t c_out) {
  ResnetBlock r;
  r.c_in = c_in;
  r.c_out = c_out;
  r.norm1 = ChannelNorm::make(b.scope("norm1"), c_in);
  r.conv1 = Conv1d::make(b.scope("conv1"), c_in, c_out, 3, 1, 1);
  r.norm2 = ChannelNorm::make(b.scope("norm2"), c_out);
  r.conv2 = Conv1d::make(b.scope("conv2"), c_out, c_out, 3, 1, 1);
  if (c_in != c_out) {
    r.has_skip_conv = true;
    r.skip = Conv1d::make(b.scope("skip"), c_in, c_out, 1, 1, 0);
  }
  return r;
}

Var ResnetBlock::operator()(Graph& g, ParamTree& p, Var x) const {
  if (x.rows() != c_in) throw ShapeError("resnet block channel mismatch");
  Var h = conv1(g, p, silu(norm1(g, p, x)));
  h = conv2(g, p, silu(norm2(g, p, h)));
  Var shortcut = has_skip_conv ? skip(g, p, x) : x;
  return add(shortcut, h);
}

SelfAttention SelfAttention::make(ParamBuilder b, std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("attention dim " + std::to_string(dim) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  SelfAttention a;
  a.dim = dim;
  a.heads = heads;
  a.norm = LayerNorm::make(b.scope("norm"), dim);
  a.q = Linear::make(b.scope("q"), dim, dim);
  a.k = Linear::make(b.scope("k"), dim, dim);
  a.v = Linear::make(b.scope("v"), dim, dim);
  a.out = Linear::make(b.scope("out"), dim, dim);
  return a;
}

Var SelfAttention::operator()(Graph& g, ParamTree& p, Var tokens) const {
  if (tokens.cols() != dim) throw ShapeError("attention dim mismatch");
  Var h = norm(g, p, tokens);
  Var qa = q(g, p, h);
  Var ka = k(g, p, h);
  Var va = v(g, p, h);
  const std::size_t dh = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> parts;
  parts.reserve(heads);
  for (std::size_t head = 0; head < heads; ++head) {
    const std::size_t lo = head * dh;
    Var qh = heads == 1 ? qa : slice_cols(qa, lo, lo + dh);
    Var kh = heads == 1 ? ka : slice_cols(ka, lo, lo + dh);
    Var vh = heads == 1 ? va : slice_cols(va, lo, lo + dh);
    Var weights = softmax_rows(scale(matmul(qh, kh, false, true), inv_sqrt));
    parts.push_back(matmul(weights, vh));
  }
  Var mixed = heads == 1 ? parts.front() : concat_cols(parts);
  return add(tokens, out(g, p, mixed));
}

SelfAttention1d SelfAttention1d::make(ParamBuilder b, std::size_t channels, std::size_t heads) {
  return SelfAttention1d{SelfAttention::make(b, channels, heads)};
}

Var SelfAttention1d::operator()(Graph& g, ParamTree& p, Var x) const {
  return transpose(attn(g, p, transpose(x)));
}

MlpProjector MlpProjector::make(ParamBuilder b, const std::vector<std::size_t>& dims) {
  if (dims.size() < 2) throw ShapeError("mlp projector needs at least two dims");
  MlpProjector m;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    if (dims[i] == 0) throw ShapeError("mlp projector dims must be positive");
    const std::string idx = std::to_string(i);
    m.norms.push_back(LayerNorm::make(b.scope("norm" + idx), dims[i]));
    m.linears.push_back(Linear::make(b.scope("fc" + idx), dims[i], dims[i + 1]));
  }
  return m;
}

Var MlpProjector::operator()(Graph& g, ParamTree& p, Var x) const {
  for (std::size_t i = 0; i < linears.size(); ++i) {
    x = linears[i](g, p, gelu(norms[i](g, p, x)));
  }
  return x;
}

Downsample Downsample::make(ParamBuilder b, std::size_t channels) {
  return Downsample{Conv1d::make(b.scope("conv"), channels, channels, 3, 2, 1)};
}

Var Downsample::operator()(Graph& g, ParamTree& p, Var x) const { return conv(g, p, x); }

Upsample Upsample::make(ParamBuilder b, std::size_t channels) {
  return Upsample{Conv1d::make(b.scope("conv"), channels, channels, 3, 1, 1)};
}

Var Upsample::operator()(Graph& g, ParamTree& p, Var x) const {
  return conv(g, p, upsample_nearest(x, 2));
}

}  // namespace synbrain
