#include "synbrain/s2n.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"

namespace synbrain {

const char* partition_name(Partition p) { return p == Partition::full ? "full" : "mlp-only"; }

Partition parse_partition(const std::string& s) {
  if (s == "full") return Partition::full;
  if (s == "mlp-only") return Partition::mlp_only;
  throw ConfigError("unknown partition mode '" + s + "' (expected full or mlp-only)");
}

Tensor sinusoidal_encoding(std::size_t tokens, std::size_t dim) {
  Tensor pe(tokens, dim);
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(t) * freq;
      pe(t, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

S2nMapper::S2nMapper(const ModelConfig& config, std::uint64_t init_seed)
    : tokens_(config.hidden_tokens),
      dim_(config.latent_dim),
      heads_(config.s2n_heads),
      mlp_ratio_(config.s2n_mlp_ratio) {
  if (heads_ == 0 || dim_ % heads_ != 0) {
    throw ConfigError("s2n token dim " + std::to_string(dim_) + " is not divisible by " +
                      std::to_string(heads_) + " heads");
  }
  if (config.s2n_layers == 0 || mlp_ratio_ == 0) throw ConfigError("s2n needs layers and an MLP");
  std::mt19937_64 rng(init_seed);
  ParamBuilder root(params_, rng);
  pe_leaf_ = params_.add(kPositionalLeaf, sinusoidal_encoding(tokens_, dim_), false);
  params_.leaf(pe_leaf_).trainable = false;
  const std::size_t hidden = dim_ * mlp_ratio_;
  for (std::size_t i = 0; i < config.s2n_layers; ++i) {
    ParamBuilder lb = root.scope("layer" + std::to_string(i));
    Block b{SelfAttention::make(lb.scope("attn"), dim_, heads_), LayerNorm::make(lb.scope("norm2"), dim_),
            Linear::make(lb.scope("mlp.fc1"), dim_, hidden), Linear::make(lb.scope("mlp.fc2"), hidden, dim_)};
    params_.leaf(b.attn.out.weight).value.fill(0.0);
    params_.leaf(b.fc2.weight).value.fill(0.0);
    blocks_.push_back(b);
  }
  head_norm_ = LayerNorm::make(root.scope("head.norm"), dim_);
  head_ = Linear::make(root.scope("head.proj"), dim_, dim_);
  params_.leaf(head_.weight).value.fill(0.0);
}

Var S2nMapper::forward(Graph& g, Var z_clip) const {
  if (z_clip.rows() != tokens_ || z_clip.cols() != dim_) {
    throw ShapeError("s2n expects a " + std::to_string(tokens_) + " x " + std::to_string(dim_) +
                     " grid, got " + z_clip.value().shape_string());
  }
  Var h = use_pe_ ? add(z_clip, g.param(params_, pe_leaf_)) : z_clip;
  for (const Block& b : blocks_) {
    h = b.attn(g, params_, h);
    h = add(h, b.fc2(g, params_, gelu(b.fc1(g, params_, b.norm2(g, params_, h)))));
  }
  return head_(g, params_, head_norm_(g, params_, h));
}

Tensor S2nMapper::forward_values(const Tensor& z_clip) const {
  Graph g(false);
  return forward(g, g.constant(z_clip)).value();
}

PartitionResult S2nMapper::partition_parameters(Partition mode) {
  partition_ = mode;
  PartitionResult out;
  for (ParamLeaf& leaf : params_) {
    const bool is_pe = leaf.name == kPositionalLeaf;
    const bool is_mlp = leaf.name.find(".mlp.") != std::string::npos;
    leaf.trainable = !is_pe && (mode == Partition::full || is_mlp);
    (leaf.trainable ? out.trainable : out.frozen).push_back(leaf.name);
  }
  return out;
}

void S2nMapper::save(const std::filesystem::path& dir) const {
  params_.save(dir);
  std::ofstream js(dir / "s2n.json", std::ios::trunc);
  js << nlohmann::json{{"kind", "s2n"},
                       {"tokens", tokens_},
                       {"dim", dim_},
                       {"layers", blocks_.size()},
                       {"heads", heads_},
                       {"mlp_ratio", mlp_ratio_},
                       {"partition", partition_name(partition_)}}
            .dump(2)
     << '\n';
}

S2nMapper S2nMapper::load(const std::filesystem::path& dir) {
  std::ifstream js(dir / "s2n.json");
  if (!js) throw FormatError("missing " + (dir / "s2n.json").string());
  nlohmann::json j;
  try {
    js >> j;
    if (j.value("kind", "") != "s2n") throw FormatError(dir.string() + " is not an s2n checkpoint");
    ModelConfig c = ModelConfig::desk();
    c.hidden_tokens = j.at("tokens").get<std::size_t>();
    c.latent_dim = j.at("dim").get<std::size_t>();
    c.s2n_layers = j.at("layers").get<std::size_t>();
    c.s2n_heads = j.at("heads").get<std::size_t>();
    c.s2n_mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    S2nMapper m(c, 0);
    m.params_.load(dir);
    m.partition_ = parse_partition(j.at("partition").get<std::string>());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("s2n.json: " + std::string(e.what()));
  }
}

}  // namespace synbrain
