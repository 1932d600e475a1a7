#include "synbrain/objectives.hpp"

#include <cmath>

namespace synbrain {

Var mse_loss(Var pred, Var target) {
  require_same_shape(pred.value(), target.value(), "mse_loss");
  return mean(square(sub(pred, target)));
}

double mse_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.empty()) {
    throw ShapeError("mse_loss: lengths " + std::to_string(pred.size()) + " and " +
                     std::to_string(target.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

Var kl_divergence(Var mu, Var log_var) {
  require_same_shape(mu.value(), log_var.value(), "kl_divergence");
  // 0.5 * (mu^2 + e^lv - 1 - lv), summed over dims, averaged over tokens
  Var per = sub(add(square(mu), exp(log_var)), add_scalar(log_var, 1.0));
  return scale(sum(per), 0.5 / static_cast<double>(mu.rows()));
}

double kl_divergence(const LatentGaussian& g) {
  require_same_shape(g.mu, g.log_var, "kl_divergence");
  double acc = 0.0;
  for (std::size_t i = 0; i < g.mu.size(); ++i) {
    const double m = g.mu[i], lv = g.log_var[i];
    acc += m * m + std::exp(lv) - 1.0 - lv;
  }
  return 0.5 * acc / static_cast<double>(g.mu.rows());
}

namespace {

double top1_rate(const Tensor& logits, bool by_column) {
  const std::size_t n = logits.rows();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j) {
      const double cand = by_column ? logits(j, i) : logits(i, j);
      const double cur = by_column ? logits(best, i) : logits(i, best);
      if (cand > cur) best = j;
    }
    hits += best == i;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

Var pooled_normalized(std::span<const Var> grids) {
  std::vector<Var> rows;
  rows.reserve(grids.size());
  for (const Var& g : grids) rows.push_back(mean_rows(g));
  return l2_normalize_rows(concat_rows(rows));
}

Var soft_cross_entropy(Var logits, Var targets) {
  // -mean_i sum_j T_ij log softmax(L)_ij
  return scale(sum(mul(targets, log_softmax_rows(logits))), -1.0 / static_cast<double>(logits.rows()));
}

}  // namespace

SoftClipResult softclip_loss(std::span<const Var> z, std::span<const Var> z_clip,
                             double temperature) {
  if (z.size() != z_clip.size()) throw ShapeError("softclip_loss: batch sizes differ");
  if (z.size() < 2) throw std::invalid_argument("softclip_loss needs a batch of at least 2");
  if (!(temperature > 0.0)) throw std::invalid_argument("softclip_loss: temperature must be positive");
  for (std::size_t i = 0; i < z.size(); ++i) {
    require_same_shape(z[i].value(), z_clip[i].value(), "softclip_loss pair");
  }
  const double inv_t = 1.0 / temperature;
  Var f = pooled_normalized(z);
  Var c = pooled_normalized(z_clip);
  Var logits = scale(matmul(f, c, false, true), inv_t);
  Var sim = add(matmul(c, c, false, true), matmul(f, f, false, true));
  Var targets = softmax_rows(scale(sim, 0.5 * inv_t));
  Var loss = scale(add(soft_cross_entropy(logits, targets),
                       soft_cross_entropy(transpose(logits), targets)),
                   0.5);
  return {loss, {top1_rate(logits.value(), false), top1_rate(logits.value(), true)}};
}

SoftClipValue softclip_loss(const std::vector<Tensor>& z, const std::vector<Tensor>& z_clip,
                            double temperature) {
  Graph g(false);
  std::vector<Var> a, b;
  for (const auto& t : z) a.push_back(g.constant(t));
  for (const auto& t : z_clip) b.push_back(g.constant(t));
  SoftClipResult r = softclip_loss(a, b, temperature);
  return {r.loss.value()[0], r.diag};
}

nlohmann::json LossReport::to_json() const {
  return {{"mse", mse},
          {"kl", kl},
          {"clip", clip},
          {"total", total},
          {"top1_fwd", diag.forward_top1},
          {"top1_bwd", diag.backward_top1}};
}

LossReport composite_loss(double mse, double kl, double clip, double lambda_kl, double lambda_clip,
                          RetrievalDiag diag) {
  LossReport r{mse, kl, clip, mse + lambda_kl * kl + lambda_clip * clip, diag};
  return r;
}

Var s2n_loss(Var z_align, Var z_target) {
  require_same_shape(z_align.value(), z_target.value(), "s2n_loss");
  return mean(square(sub(z_align, z_target)));
}

double s2n_loss(const Tensor& z_align, const Tensor& z_target) {
  require_same_shape(z_align, z_target, "s2n_loss");
  return mse_loss(z_align.values(), z_target.values());
}

}  // namespace synbrain
