#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "synbrain/autograd.hpp"
#include "synbrain/brainvae.hpp"

namespace synbrain {

/// Mean squared difference over every element.
Var mse_loss(Var pred, Var target);
double mse_loss(std::span<const double> pred, std::span<const double> target);

/// KL(N(mu, exp(log_var)) || N(0, I)), summed over latent dims and averaged
/// over tokens.
Var kl_divergence(Var mu, Var log_var);
double kl_divergence(const LatentGaussian& g);

/// In-batch top-1 match rates of the contrastive logits.
struct RetrievalDiag {
  double forward_top1 = 0.0;   // fMRI latent -> embedding
  double backward_top1 = 0.0;  // embedding -> fMRI latent
};

struct SoftClipResult {
  Var loss;
  RetrievalDiag diag;
};

/// Symmetric soft-target contrastive loss between two batches of token grids.
///
/// Each grid is token-mean-pooled and L2-normalized. Logits are cosine
/// similarities over the temperature. Targets are the row-softmax of the
/// average of the embedding-embedding and latent-latent similarity matrices
/// at the same temperature; the loss is the mean of the soft cross-entropy
/// of the logits and of their transpose against those targets.
SoftClipResult softclip_loss(std::span<const Var> z, std::span<const Var> z_clip,
                             double temperature);

struct SoftClipValue {
  double loss = 0.0;
  RetrievalDiag diag;
};
SoftClipValue softclip_loss(const std::vector<Tensor>& z, const std::vector<Tensor>& z_clip,
                            double temperature);

struct LossReport {
  double mse = 0.0;
  double kl = 0.0;
  double clip = 0.0;
  double total = 0.0;
  RetrievalDiag diag;

  nlohmann::json to_json() const;
};

/// total = mse + lambda_kl * kl + lambda_clip * clip.
LossReport composite_loss(double mse, double kl, double clip, double lambda_kl, double lambda_clip,
                          RetrievalDiag diag = {});

/// Elementwise mean squared error between the mapped grid and its target.
Var s2n_loss(Var z_align, Var z_target);
double s2n_loss(const Tensor& z_align, const Tensor& z_target);

}  // namespace synbrain
