#include "synbrain/brainvae.hpp"

#include <fstream>

namespace synbrain {

Tensor sample_epsilon(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor eps(rows, cols);
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = normal(rng);
  return eps;
}

Var BrainVae::Middle::operator()(Graph& g, ParamTree& p, Var x) const {
  return res2(g, p, attn(g, p, res1(g, p, x)));
}

BrainVae::BrainVae(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(init_seed);
  ParamBuilder root(params_, rng);
  const ModelConfig& c = config_;
  auto channels = [&](std::size_t level) { return c.base_channels * c.ch_mult[level]; };
  const std::size_t top = channels(c.num_levels());

  ParamBuilder enc = root.scope("encoder");
  stem_ = Conv1d::make(enc.scope("stem"), 1, channels(0), c.stem_kernel, 1, c.stem_kernel / 2);
  for (std::size_t i = 1; i <= c.num_levels(); ++i) {
    ParamBuilder lb = enc.scope("level" + std::to_string(i));
    Level level;
    for (std::size_t j = 0; j < c.num_res_blocks; ++j) {
      const std::size_t cin = j == 0 ? channels(i - 1) : channels(i);
      level.blocks.push_back(
          ResnetBlock::make(lb.scope("block" + std::to_string(j)), cin, channels(i)));
    }
    if (i <= c.num_down_blocks) {
      level.resample = true;
      level.down = Downsample::make(lb.scope("down"), channels(i));
    }
    enc_levels_.push_back(std::move(level));
  }
  enc_mid_ = Middle{ResnetBlock::make(enc.scope("mid.res1"), top, top),
                    SelfAttention1d::make(enc.scope("mid.attn"), top, c.vae_attn_heads),
                    ResnetBlock::make(enc.scope("mid.res2"), top, top)};
  enc_norm_out_ = ChannelNorm::make(enc.scope("norm_out"), top);
  enc_conv_out_ = Conv1d::make(enc.scope("conv_out"), top, c.hidden_tokens, 3, 1, 1);

  mu_proj_ = MlpProjector::make(root.scope("mu_proj"),
                                {c.hidden_dim, c.projector_dim, c.projector_dim, c.latent_dim});
  logvar_proj_ = MlpProjector::make(
      root.scope("logvar_proj"), {c.hidden_dim, c.projector_dim, c.projector_dim, c.latent_dim});
  {
    Tensor& b = params_.leaf(logvar_proj_.linears.back().bias).value;
    std::fill(b.values().begin(), b.values().end(), c.logvar_bias_init);
  }
  post_proj_ = MlpProjector::make(root.scope("post_proj"),
                                  {c.latent_dim, c.projector_dim, c.projector_dim, c.hidden_dim});

  ParamBuilder dec = root.scope("decoder");
  dec_conv_in_ = Conv1d::make(dec.scope("conv_in"), c.hidden_tokens, top, 3, 1, 1);
  dec_mid_ = Middle{ResnetBlock::make(dec.scope("mid.res1"), top, top),
                    SelfAttention1d::make(dec.scope("mid.attn"), top, c.vae_attn_heads),
                    ResnetBlock::make(dec.scope("mid.res2"), top, top)};
  for (std::size_t i = c.num_levels(); i >= 1; --i) {
    ParamBuilder lb = dec.scope("level" + std::to_string(i));
    Level level;
    if (i <= c.num_down_blocks) {
      level.resample = true;
      level.up = Upsample::make(lb.scope("up"), channels(i));
    }
    for (std::size_t j = 0; j < c.num_res_blocks; ++j) {
      const std::size_t cin = j == 0 ? channels(i) : channels(i - 1);
      level.blocks.push_back(
          ResnetBlock::make(lb.scope("block" + std::to_string(j)), cin, channels(i - 1)));
    }
    dec_levels_.push_back(std::move(level));
  }
  dec_norm_out_ = ChannelNorm::make(dec.scope("norm_out"), channels(0));
  dec_conv_out_ = Conv1d::make(dec.scope("conv_out"), channels(0), 1, 3, 1, 1);
}

Var BrainVae::encode(Graph& g, Var fmri) const {
  if (fmri.rows() != 1 || fmri.cols() < 2) {
    throw ShapeError("encode expects a 1 x V signal with V >= 2, got " +
                     fmri.value().shape_string());
  }
  if (!all_finite(fmri.value().values())) throw std::domain_error("encode: non-finite fMRI input");
  ParamTree& p = params_;
  Var h = adaptive_max_pool(stem_(g, p, fmri), config_.pooled_len);
  for (const Level& level : enc_levels_) {
    for (const ResnetBlock& block : level.blocks) h = block(g, p, h);
    if (level.resample) h = level.down(g, p, h);
  }
  h = enc_mid_(g, p, h);
  return enc_conv_out_(g, p, silu(enc_norm_out_(g, p, h)));
}

BrainVae::PosteriorVars BrainVae::posterior(Graph& g, Var hidden) const {
  if (hidden.rows() != config_.hidden_tokens || hidden.cols() != config_.hidden_dim) {
    throw ShapeError("posterior expects hidden grid " + std::to_string(config_.hidden_tokens) +
                     " x " + std::to_string(config_.hidden_dim) + ", got " +
                     hidden.value().shape_string());
  }
  Var mu = mu_proj_(g, params_, hidden);
  Var log_var = clamp(logvar_proj_(g, params_, hidden), config_.logvar_min, config_.logvar_max);
  return {mu, log_var};
}

Var BrainVae::decode(Graph& g, Var z, std::size_t voxels) const {
  if (z.rows() != config_.hidden_tokens || z.cols() != config_.latent_dim) {
    throw ShapeError("decode expects latent grid " + std::to_string(config_.hidden_tokens) +
                     " x " + std::to_string(config_.latent_dim) + ", got " +
                     z.value().shape_string());
  }
  if (voxels < 2) throw ShapeError("decode needs at least 2 output voxels");
  ParamTree& p = params_;
  Var h = dec_conv_in_(g, p, post_proj_(g, p, z));
  h = dec_mid_(g, p, h);
  for (const Level& level : dec_levels_) {
    if (level.resample) h = level.up(g, p, h);
    for (const ResnetBlock& block : level.blocks) h = block(g, p, h);
  }
  h = linear_resample(silu(dec_norm_out_(g, p, h)), voxels);
  return dec_conv_out_(g, p, h);
}

Var reparameterize(Graph& g, Var mu, Var log_var, const Tensor& eps) {
  require_same_shape(mu.value(), eps, "reparameterize epsilon");
  return add(mu, mul(exp(scale(log_var, 0.5)), g.constant(eps)));
}

BrainVae::ForwardVars BrainVae::forward(Graph& g, Var fmri, const Tensor& eps) const {
  PosteriorVars post = posterior(g, encode(g, fmri));
  Var z = reparameterize(g, post.mu, post.log_var, eps);
  Var fmri_hat = decode(g, z, fmri.cols());
  return {fmri_hat, z, post};
}

Tensor BrainVae::encode_values(std::span<const double> fmri) const {
  Graph g(false);
  return encode(g, g.constant(Tensor::row(fmri))).value();
}

LatentGaussian BrainVae::infer(std::span<const double> fmri) const {
  Graph g(false);
  PosteriorVars post = posterior(g, encode(g, g.constant(Tensor::row(fmri))));
  return {post.mu.value(), post.log_var.value()};
}

std::vector<double> BrainVae::decode_values(const Tensor& z, std::size_t voxels) const {
  Graph g(false);
  const Tensor& out = decode(g, g.constant(z), voxels).value();
  return {out.values().begin(), out.values().end()};
}

VaeShapeTrace BrainVae::trace_shapes(const ModelConfig& c, std::size_t voxels) {
  c.validate();
  if (voxels < 2) throw ShapeError("trace_shapes needs at least 2 voxels");
  VaeShapeTrace t;
  t.stem_channels = c.base_channels * c.ch_mult[0];
  // stem conv keeps length (odd kernel, half padding); pooling fixes it
  t.pooled_len = c.pooled_len;
  std::size_t len = c.pooled_len;
  for (std::size_t i = 1; i <= c.num_levels(); ++i) {
    if (i <= c.num_down_blocks) len = (len + 2 - 3) / 2 + 1;
  }
  t.bottleneck_channels = c.base_channels * c.ch_mult.back();
  t.bottleneck_len = len;
  t.hidden_rows = c.hidden_tokens;
  t.hidden_cols = len;
  t.latent_rows = c.hidden_tokens;
  t.latent_cols = c.latent_dim;
  std::size_t dlen = c.hidden_dim;
  for (std::size_t i = c.num_levels(); i >= 1; --i) {
    if (i <= c.num_down_blocks) dlen *= 2;
  }
  t.decoder_len = dlen;
  t.output_len = voxels;
  return t;
}

bool architecture_compatible(const ModelConfig& a, const ModelConfig& b) {
  return a.pooled_len == b.pooled_len && a.base_channels == b.base_channels &&
         a.ch_mult == b.ch_mult && a.num_res_blocks == b.num_res_blocks &&
         a.num_down_blocks == b.num_down_blocks && a.stem_kernel == b.stem_kernel &&
         a.vae_attn_heads == b.vae_attn_heads && a.hidden_tokens == b.hidden_tokens &&
         a.hidden_dim == b.hidden_dim && a.latent_dim == b.latent_dim &&
         a.projector_dim == b.projector_dim;
}

void BrainVae::save(const std::filesystem::path& dir) const {
  params_.save(dir);
  std::ofstream js(dir / "model.json", std::ios::trunc);
  js << nlohmann::json{{"kind", "brainvae"}, {"config", config_.to_json()}}.dump(2) << '\n';
}

namespace {
ModelConfig read_stamp(const std::filesystem::path& dir, const std::string& kind) {
  std::ifstream js(dir / "model.json");
  if (!js) throw FormatError("missing " + (dir / "model.json").string());
  nlohmann::json j;
  try {
    js >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("model.json: " + std::string(e.what()));
  }
  if (j.value("kind", "") != kind) {
    throw FormatError("model.json in " + dir.string() + " is not a " + kind + " checkpoint");
  }
  return ModelConfig::from_json(j.at("config"));
}
}  // namespace

BrainVae BrainVae::load(const std::filesystem::path& dir) {
  BrainVae vae(read_stamp(dir, "brainvae"), 0);
  vae.params_.load(dir);
  return vae;
}

void BrainVae::load_params(const std::filesystem::path& dir) {
  const ModelConfig stamped = read_stamp(dir, "brainvae");
  if (!architecture_compatible(stamped, config_)) {
    throw FormatError("checkpoint in " + dir.string() + " was trained with an incompatible config");
  }
  params_.load(dir);
}

}  // namespace synbrain
