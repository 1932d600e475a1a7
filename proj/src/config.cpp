#include "synbrain/config.hpp"

#include <set>

namespace synbrain {

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.voxel_counts_by_subject = {{1, 15724}, {2, 14278}, {5, 13039}, {7, 12682}};
  return c;
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.voxel_counts_by_subject = {{1, 512}, {2, 480}, {3, 496}};
  c.pooled_len = 128;
  c.base_channels = 8;
  c.ch_mult = {1, 2, 2};
  c.num_res_blocks = 2;
  c.num_down_blocks = 1;
  c.hidden_tokens = 16;
  c.hidden_dim = 64;
  c.latent_dim = 32;
  c.projector_dim = 64;
  c.s2n_layers = 8;
  c.s2n_heads = 4;
  c.lr = 1e-3;
  c.s2n_lr = 1e-3;
  c.max_epochs = 30;
  c.s2n_steps = 800;
  c.s2n_eval_every = 100;
  c.adapt_epochs = 30;
  c.adapt_s2n_steps = 300;
  c.adapt_batch_size = 8;
  return c;
}

std::size_t ModelConfig::voxel_count(SubjectId s) const {
  auto it = voxel_counts_by_subject.find(s);
  if (it == voxel_counts_by_subject.end()) {
    throw ConfigError("no voxel count configured for subject " + std::to_string(s));
  }
  return it->second;
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  for (const auto& [s, v] : voxel_counts_by_subject) {
    need(v >= 2, "subject " + std::to_string(s) + " needs at least 2 voxels");
  }
  need(pooled_len > 0 && base_channels > 0, "pooled_len and base_channels must be positive");
  need(ch_mult.size() >= 2, "ch_mult needs a stem entry plus at least one level");
  for (auto m : ch_mult) need(m > 0, "ch_mult entries must be positive");
  need(num_res_blocks > 0, "num_res_blocks must be positive");
  need(num_down_blocks <= num_levels(), "num_down_blocks exceeds the number of levels");
  need(pooled_len % (std::size_t{1} << num_down_blocks) == 0,
       "pooled_len must be divisible by 2^num_down_blocks");
  need(hidden_dim == pooled_len >> num_down_blocks,
       "hidden_dim must equal pooled_len / 2^num_down_blocks");
  need(stem_kernel % 2 == 1, "stem_kernel must be odd");
  need(hidden_tokens > 0 && latent_dim > 0 && projector_dim > 0, "grid dims must be positive");
  const std::size_t top = base_channels * ch_mult.back();
  need(vae_attn_heads > 0 && top % vae_attn_heads == 0,
       "vae_attn_heads must divide the bottleneck channel count");
  need(s2n_layers > 0, "s2n_layers must be positive");
  need(s2n_heads > 0 && latent_dim % s2n_heads == 0, "s2n_heads must divide latent_dim");
  need(s2n_mlp_ratio > 0, "s2n_mlp_ratio must be positive");
  need(logvar_min < logvar_max, "logvar clamp range is empty");
  need(logvar_bias_init >= logvar_min && logvar_bias_init <= logvar_max,
       "logvar_bias_init must lie inside the clamp range");
  need(lambda_kl >= 0.0 && lambda_clip >= 0.0, "loss weights must be non-negative");
  need(temperature > 0.0, "temperature must be positive");
  need(lr > 0.0 && s2n_lr > 0.0, "learning rates must be positive");
  need(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0,1)");
  need(weight_decay >= 0.0, "weight_decay must be non-negative");
  need(batch_size >= 2 && adapt_batch_size >= 2,
       "batch sizes must be at least 2 for the contrastive loss");
  need(val_fraction >= 0.0 && val_fraction < 1.0, "val_fraction must lie in [0,1)");
  need(s2n_eval_every > 0, "s2n_eval_every must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json voxels = nlohmann::json::object();
  for (const auto& [s, v] : voxel_counts_by_subject) voxels[std::to_string(s)] = v;
  return {
      {"voxel_counts_by_subject", voxels},
      {"pooled_len", pooled_len},
      {"base_channels", base_channels},
      {"ch_mult", ch_mult},
      {"num_res_blocks", num_res_blocks},
      {"num_down_blocks", num_down_blocks},
      {"stem_kernel", stem_kernel},
      {"vae_attn_heads", vae_attn_heads},
      {"hidden_tokens", hidden_tokens},
      {"hidden_dim", hidden_dim},
      {"latent_dim", latent_dim},
      {"projector_dim", projector_dim},
      {"logvar_min", logvar_min},
      {"logvar_max", logvar_max},
      {"logvar_bias_init", logvar_bias_init},
      {"s2n_layers", s2n_layers},
      {"s2n_heads", s2n_heads},
      {"s2n_mlp_ratio", s2n_mlp_ratio},
      {"lambda_kl", lambda_kl},
      {"lambda_clip", lambda_clip},
      {"temperature", temperature},
      {"lr", lr},
      {"betas", {beta1, beta2}},
      {"adam_eps", adam_eps},
      {"weight_decay", weight_decay},
      {"batch_size", batch_size},
      {"max_epochs", max_epochs},
      {"patience", patience},
      {"val_fraction", val_fraction},
      {"s2n_steps", s2n_steps},
      {"s2n_lr", s2n_lr},
      {"s2n_eval_every", s2n_eval_every},
      {"adapt_epochs", adapt_epochs},
      {"adapt_s2n_steps", adapt_s2n_steps},
      {"adapt_batch_size", adapt_batch_size},
      {"seed", seed},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c = desk();
  c.merge_json(j);
  return c;
}

void ModelConfig::merge_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const std::set<std::string> known = {
      "voxel_counts_by_subject", "pooled_len", "base_channels", "ch_mult", "num_res_blocks",
      "num_down_blocks", "stem_kernel", "vae_attn_heads", "hidden_tokens", "hidden_dim",
      "latent_dim", "projector_dim", "logvar_min", "logvar_max", "logvar_bias_init", "s2n_layers", "s2n_heads",
      "s2n_mlp_ratio", "lambda_kl", "lambda_clip", "temperature", "lr", "betas", "adam_eps",
      "weight_decay", "batch_size", "max_epochs", "patience", "val_fraction", "s2n_steps",
      "s2n_lr", "s2n_eval_every", "adapt_epochs", "adapt_s2n_steps", "adapt_batch_size", "seed", "preset"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key: " + key);
  }
  try {
    if (j.contains("preset")) {
      const auto preset = j.at("preset").get<std::string>();
      if (preset == "paper") {
        *this = paper();
      } else if (preset == "desk") {
        *this = desk();
      } else {
        throw ConfigError("unknown preset: " + preset);
      }
    }
    if (j.contains("voxel_counts_by_subject")) {
      voxel_counts_by_subject.clear();
      for (const auto& [k, v] : j.at("voxel_counts_by_subject").items()) {
        voxel_counts_by_subject[std::stoi(k)] = v.get<std::size_t>();
      }
    }
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    take("pooled_len", pooled_len);
    take("base_channels", base_channels);
    take("ch_mult", ch_mult);
    take("num_res_blocks", num_res_blocks);
    take("num_down_blocks", num_down_blocks);
    take("stem_kernel", stem_kernel);
    take("vae_attn_heads", vae_attn_heads);
    take("hidden_tokens", hidden_tokens);
    take("hidden_dim", hidden_dim);
    take("latent_dim", latent_dim);
    take("projector_dim", projector_dim);
    take("logvar_min", logvar_min);
    take("logvar_max", logvar_max);
    take("logvar_bias_init", logvar_bias_init);
    take("s2n_layers", s2n_layers);
    take("s2n_heads", s2n_heads);
    take("s2n_mlp_ratio", s2n_mlp_ratio);
    take("lambda_kl", lambda_kl);
    take("lambda_clip", lambda_clip);
    take("temperature", temperature);
    take("lr", lr);
    if (j.contains("betas")) {
      const auto b = j.at("betas").get<std::vector<double>>();
      if (b.size() != 2) throw ConfigError("betas must have two entries");
      beta1 = b[0];
      beta2 = b[1];
    }
    take("adam_eps", adam_eps);
    take("weight_decay", weight_decay);
    take("batch_size", batch_size);
    take("max_epochs", max_epochs);
    take("patience", patience);
    take("val_fraction", val_fraction);
    take("s2n_steps", s2n_steps);
    take("s2n_lr", s2n_lr);
    take("s2n_eval_every", s2n_eval_every);
    take("adapt_epochs", adapt_epochs);
    take("adapt_s2n_steps", adapt_s2n_steps);
    take("adapt_batch_size", adapt_batch_size);
    take("seed", seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  }
}

}  // namespace synbrain
