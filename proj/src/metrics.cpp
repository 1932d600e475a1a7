#include "synbrain/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <numeric>

namespace synbrain {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_equal_length(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError(std::string(what) + ": lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
}

std::vector<double> unit_rows(const Tensor& t) {
  std::vector<double> out(t.values().begin(), t.values().end());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < t.cols(); ++c) ss += t(r, c) * t(r, c);
    const double inv = ss > 0.0 ? 1.0 / std::sqrt(ss) : 0.0;
    for (std::size_t c = 0; c < t.cols(); ++c) out[r * t.cols() + c] *= inv;
  }
  return out;
}

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

double pearson(std::span<const double> a, std::span<const double> b) {
  require_equal_length(a, b, "pearson");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return kNaN;
  return sab / std::sqrt(saa * sbb);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  require_equal_length(a, b, "cosine");
  const double na = std::sqrt(dot(a.data(), a.data(), a.size()));
  const double nb = std::sqrt(dot(b.data(), b.data(), b.size()));
  if (na == 0.0 || nb == 0.0) return kNaN;
  return dot(a.data(), b.data(), a.size()) / (na * nb);
}

VoxelMetrics voxel_metrics(std::span<const double> pred, const std::vector<std::vector<double>>& trials) {
  if (trials.empty()) throw std::invalid_argument("voxel_metrics needs at least one trial");
  VoxelMetrics m;
  m.trials = trials.size();
  double mse = 0.0, r = 0.0, cs = 0.0;
  std::size_t r_count = 0, c_count = 0;
  for (const auto& t : trials) {
    require_equal_length(pred, t, "voxel_metrics");
    double acc = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) acc += (pred[i] - t[i]) * (pred[i] - t[i]);
    mse += acc / static_cast<double>(t.size());
    const double p = pearson(pred, t);
    if (std::isnan(p)) {
      ++m.pearson_undefined;
    } else {
      r += p;
      ++r_count;
    }
    const double c = cosine(pred, t);
    if (!std::isnan(c)) {
      cs += c;
      ++c_count;
    }
  }
  m.mse = mse / static_cast<double>(trials.size());
  m.pearson = r_count ? r / static_cast<double>(r_count) : kNaN;
  m.cosine = c_count ? cs / static_cast<double>(c_count) : kNaN;
  return m;
}

RetrievalStats retrieval_accuracy(const Tensor& queries, const Tensor& gallery,
                                  std::span<const std::size_t> truth, std::size_t candidates,
                                  std::size_t repeats, std::mt19937_64& rng) {
  if (queries.cols() != gallery.cols()) throw ShapeError("retrieval: embedding dims differ");
  if (truth.size() != queries.rows()) throw ShapeError("retrieval: one truth index per query");
  if (candidates < 1 || repeats < 1) throw std::invalid_argument("retrieval: candidates and repeats must be positive");
  if (gallery.rows() < candidates) {
    throw std::invalid_argument("retrieval: gallery has " + std::to_string(gallery.rows()) +
                                " items, fewer than " + std::to_string(candidates) + " candidates");
  }
  const std::size_t d = gallery.cols();
  const std::vector<double> q = unit_rows(queries);
  const std::vector<double> gal = unit_rows(gallery);
  std::vector<std::size_t> others(gallery.rows() - 1);
  RetrievalStats out;
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < queries.rows(); ++i) {
      const std::size_t t = truth[i];
      if (t >= gallery.rows()) throw std::out_of_range("retrieval: truth index outside gallery");
      // distractor pool = every gallery row except the true one
      std::size_t k = 0;
      for (std::size_t g = 0; g < gallery.rows(); ++g) {
        if (g != t) others[k++] = g;
      }
      const double* qi = q.data() + i * d;
      const double target = dot(qi, gal.data() + t * d, d);
      bool win = true;
      for (std::size_t c = 0; c + 1 < candidates; ++c) {
        std::uniform_int_distribution<std::size_t> pick(c, others.size() - 1);
        std::swap(others[c], others[pick(rng)]);
        if (dot(qi, gal.data() + others[c] * d, d) >= target) win = false;
      }
      hits += win;
    }
    out.per_repeat.push_back(static_cast<double>(hits) / static_cast<double>(queries.rows()));
  }
  const double n = static_cast<double>(repeats);
  out.mean = std::accumulate(out.per_repeat.begin(), out.per_repeat.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : out.per_repeat) ss += (v - out.mean) * (v - out.mean);
  out.sd = repeats > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return out;
}

namespace {
void check_pairs(const Tensor& orig, const Tensor& decoded) {
  if (!orig.same_shape(decoded)) throw ShapeError("two_way: shapes differ");
  if (orig.rows() < 2) throw std::invalid_argument("two_way needs at least 2 items");
}
}  // namespace

double two_way_accuracy(const Tensor& orig, const Tensor& decoded, std::mt19937_64& rng,
                        std::size_t trials) {
  check_pairs(orig, decoded);
  const std::size_t n = orig.rows(), d = orig.cols();
  const std::vector<double> a = unit_rows(orig), b = unit_rows(decoded);
  std::uniform_int_distribution<std::size_t> pick_i(0, n - 1), pick_j(0, n - 2);
  std::size_t correct = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t i = pick_i(rng);
    std::size_t j = pick_j(rng);
    if (j >= i) ++j;
    correct += dot(a.data() + i * d, b.data() + i * d, d) > dot(a.data() + i * d, b.data() + j * d, d);
  }
  return static_cast<double>(correct) / static_cast<double>(trials);
}

double two_way_accuracy_exhaustive(const Tensor& orig, const Tensor& decoded) {
  check_pairs(orig, decoded);
  const std::size_t n = orig.rows(), d = orig.cols();
  const std::vector<double> a = unit_rows(orig), b = unit_rows(decoded);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double own = dot(a.data() + i * d, b.data() + i * d, d);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) correct += own > dot(a.data() + i * d, b.data() + j * d, d);
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n * (n - 1));
}

double latent_gap(const Tensor& a, const Tensor& b) {
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("latent_gap: empty set");
  if (a.cols() != b.cols()) throw ShapeError("latent_gap: dimensions differ");
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double ss = 0.0;
      for (std::size_t c = 0; c < a.cols(); ++c) {
        const double diff = a(i, c) - b(j, c);
        ss += diff * diff;
      }
      best = std::min(best, ss);
    }
    total += std::sqrt(best);
  }
  return total / static_cast<double>(a.rows());
}

nlohmann::json EvalReport::to_json() const {
  auto stats = [](const RetrievalStats& s) {
    return nlohmann::json{{"mean", s.mean}, {"sd", s.sd}, {"repeats", s.per_repeat.size()}};
  };
  return {{"mse", voxel.mse},
          {"pearson", voxel.pearson},
          {"cosine", voxel.cosine},
          {"trials", voxel.trials},
          {"pearson_undefined", voxel.pearson_undefined},
          {"cross_stimulus_pearson", cross_stimulus_pearson},
          {"retrieval_raw", stats(retrieval_raw)},
          {"retrieval_syn", stats(retrieval_syn)},
          {"candidates", candidates},
          {"two_way", two_way},
          {"gap_noise", gap_noise},
          {"gap_perturbed", gap_perturbed}};
}

std::string EvalReport::table() const {
  std::string out;
  out += fmt::format("{:>8} {:>8} {:>8} {:>8} {:>16} {:>16}\n", "MSE", "Pearson", "Cosine",
                     "TwoWay", "Raw", "Syn");
  out += fmt::format("{:>8.4f} {:>8.4f} {:>8.4f} {:>7.1f}% {:>9.1f}%±{:<5.1f} {:>9.1f}%±{:<5.1f}\n",
                     voxel.mse, voxel.pearson, voxel.cosine, 100.0 * two_way,
                     100.0 * retrieval_raw.mean, 100.0 * retrieval_raw.sd,
                     100.0 * retrieval_syn.mean, 100.0 * retrieval_syn.sd);
  out += fmt::format("candidates={}  cross-stimulus Pearson={:.4f}  gap(noise)={:.4f}  gap(perturbed)={:.4f}\n",
                     candidates, cross_stimulus_pearson, gap_noise, gap_perturbed);
  return out;
}

}  // namespace synbrain
