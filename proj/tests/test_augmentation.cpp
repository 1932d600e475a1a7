#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "synbrain/augmentation.hpp"
#include "synbrain/pipeline.hpp"
#include "test_util.hpp"

namespace synbrain {
namespace {

using testing::random_tensor;
using testing::tiny_config;
using testing::tiny_world;

using Rows = std::vector<std::vector<double>>;

Rows rows_of(const Tensor& t) {
  Rows out;
  for (std::size_t r = 0; r < t.rows(); ++r) out.emplace_back(t.row_span(r).begin(), t.row_span(r).end());
  return out;
}

// Noiseless linear pairs y = x * A + b.
struct LinearPairs {
  Rows x, y;
  Tensor a;
};
LinearPairs linear_pairs(std::size_t n, std::size_t v, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LinearPairs p;
  p.a = random_tensor(v, d, rng);
  const Tensor x = random_tensor(n, v, rng);
  p.x = rows_of(x);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> y(d, 0.5);
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t k = 0; k < v; ++k) y[j] += x(i, k) * p.a(k, j);
    }
    p.y.push_back(y);
  }
  return p;
}

TEST(Ridge, InterpolatesNoiselessLinearData) {
  const LinearPairs p = linear_pairs(40, 6, 3, 1);
  const ToyDecoder dec = train_toy_decoder(p.x, p.y, 1e-10);
  for (std::size_t i = 0; i < p.x.size(); ++i) {
    const auto pred = dec.predict(p.x[i]);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(pred[j], p.y[i][j], 1e-6);
  }
}

TEST(Ridge, HugePenaltyGivesZeroWeights) {
  const LinearPairs p = linear_pairs(30, 5, 2, 2);
  const ToyDecoder dec = train_toy_decoder(p.x, p.y, 1e14);
  for (double w : dec.weights.values()) EXPECT_NEAR(w, 0.0, 1e-10);
  // the intercept remains: predictions fall back to the target mean
  const auto pred = dec.predict(p.x[0]);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(pred[j], dec.y_mean[j], 1e-8);
}

TEST(Ridge, MatchesGradientDescent) {
  // Both primal (n >= v) and dual (n < v) branches.
  for (auto [n, v] : {std::pair<std::size_t, std::size_t>{30, 5}, {6, 12}}) {
    std::mt19937_64 rng(3);
    const Rows x = rows_of(random_tensor(n, v, rng)), y = rows_of(random_tensor(n, 2, rng));
    const double lambda = 2.0;
    const ToyDecoder dec = train_toy_decoder(x, y, lambda);

    // minimize ||Xc W - Yc||^2 + lambda ||W||^2 by plain gradient descent
    std::vector<double> xm(v, 0.0), ym(2, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < v; ++k) xm[k] += x[i][k] / n;
      for (std::size_t j = 0; j < 2; ++j) ym[j] += y[i][j] / n;
    }
    Tensor w(v, 2);
    for (int it = 0; it < 20000; ++it) {
      Tensor grad(v, 2);
      for (std::size_t k = 0; k < v; ++k) {
        for (std::size_t j = 0; j < 2; ++j) grad(k, j) = 2 * lambda * w(k, j);
      }
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
          double r = -(y[i][j] - ym[j]);
          for (std::size_t k = 0; k < v; ++k) r += (x[i][k] - xm[k]) * w(k, j);
          for (std::size_t k = 0; k < v; ++k) grad(k, j) += 2 * r * (x[i][k] - xm[k]);
        }
      }
      for (std::size_t e = 0; e < w.size(); ++e) w[e] -= 0.005 * grad[e];
    }
    for (std::size_t e = 0; e < w.size(); ++e) EXPECT_NEAR(dec.weights[e], w[e], 1e-4);
  }
}

TEST(Ridge, RejectsBadInput) {
  EXPECT_THROW(train_toy_decoder(Rows{}, Rows{}, 1.0), ShapeError);
  EXPECT_THROW(train_toy_decoder(Rows{{1, 2}}, Rows{{1}}, -1.0), std::invalid_argument);
}

class AugmentFixture : public ::testing::Test {
 protected:
  SyntheticWorld world{tiny_world(), 31};
  Dataset full = [this] {
    std::mt19937_64 rng(32);
    SplitSizes s = SplitSizes::from_world(world.spec());
    s.subjects = {1};
    return sample_dataset(world, s, rng);
  }();
  Dataset one = subset_hours(full, 1);
  BrainVae vae{tiny_config(), 33};
  S2nMapper s2n{tiny_config(), 34};

  std::map<StimulusId, Tensor> unseen(std::size_t n) {
    std::mt19937_64 rng(35);
    std::map<StimulusId, Tensor> out;
    for (StimulusId id : unseen_stimuli(world, full.stimuli(), n, rng)) out[id] = world.embedding(id);
    return out;
  }
};

TEST_F(AugmentFixture, SizeContractAndDisjointness) {
  const std::size_t real_train = one.indices(Split::train, 1).size();
  std::mt19937_64 rng(36);
  const AugmentedSet a = generate_augmented_set(vae, s2n, "m", one, unseen(100), 1.0, 0.0, rng);
  EXPECT_EQ(a.synthetic_count(), real_train);
  EXPECT_EQ(a.real_count, one.samples.size());
  for (StimulusId s : a.synthetic_stimuli()) EXPECT_FALSE(one.stimuli().contains(s));
  for (std::size_t i = a.real_count; i < a.data.samples.size(); ++i) {
    EXPECT_EQ(a.data.samples[i].split, Split::train);
    EXPECT_EQ(a.data.samples[i].values.size(), 40u);
  }
  const AugmentedSet four = generate_augmented_set(vae, s2n, "m", one, unseen(100), 4.0, 0.0, rng);
  EXPECT_EQ(four.synthetic_count(), 4 * real_train);
  EXPECT_THROW(generate_augmented_set(vae, s2n, "m", one, unseen(3), 4.0, 0.0, rng), SizeError);
}

TEST_F(AugmentFixture, LeakedStimulusRejected) {
  auto leaked = unseen(10);
  const StimulusId real = *one.stimuli().begin();
  leaked[real] = world.embedding(real);
  std::mt19937_64 rng(37);
  EXPECT_THROW(generate_augmented_set(vae, s2n, "m", one, leaked, 1.0, 0.0, rng), ProtocolError);
}

TEST_F(AugmentFixture, NoiseFreeSynthesisDeterministic) {
  std::mt19937_64 r1(38), r2(39);
  const AugmentedSet a = generate_augmented_set(vae, s2n, "m", one, unseen(50), 1.0, 0.0, r1);
  const AugmentedSet b = generate_augmented_set(vae, s2n, "m", one, unseen(50), 1.0, 0.0, r2);
  ASSERT_EQ(a.data.samples.size(), b.data.samples.size());
  for (std::size_t i = 0; i < a.data.samples.size(); ++i) {
    EXPECT_EQ(a.data.samples[i].stimulus, b.data.samples[i].stimulus);
    EXPECT_EQ(a.data.samples[i].values, b.data.samples[i].values);
  }
}

TEST_F(AugmentFixture, SaveLoadKeepsProvenance) {
  std::mt19937_64 rng(40);
  const AugmentedSet a = generate_augmented_set(vae, s2n, "model-x", one, unseen(50), 1.0, 0.0, rng);
  const auto dir = std::filesystem::temp_directory_path() / "synbrain_test_aug";
  std::filesystem::remove_all(dir);
  a.save(dir);
  const AugmentedSet b = AugmentedSet::load(dir);
  EXPECT_EQ(b.real_count, a.real_count);
  EXPECT_EQ(b.source_model, "model-x");
  EXPECT_EQ(b.synthetic_stimuli(), a.synthetic_stimuli());
  EXPECT_EQ(b.provenance(), a.provenance());
}

TEST_F(AugmentFixture, ZeroDecoderAtChanceFullDecoderNearCeiling) {
  SyntheticWorldSpec spec = tiny_world();
  spec.trial_noise_sd = 0.0;
  spec.n_train_stimuli = 150;
  spec.n_test_stimuli = 20;
  SyntheticWorld clean(spec, 41);
  std::mt19937_64 rng(42);
  SplitSizes s = SplitSizes::from_world(spec);
  s.subjects = {1};
  Dataset d = sample_dataset(clean, s, rng);
  for (StimulusId id : unseen_stimuli(clean, d.stimuli(), 60, rng)) d.embeddings[id] = clean.embedding(id);

  const ToyDecoder trained = train_toy_decoder(d, 1e-3);
  const DecoderEval good = eval_decoder(trained, d, 1, 20, 20, rng);
  EXPECT_GT(good.image_retrieval.mean, 0.8);

  ToyDecoder zero = trained;
  zero.weights.fill(0.0);
  double mean = 0.0;
  for (int r = 0; r < 20; ++r) mean += eval_decoder(zero, d, 1, 20, 20, rng).image_retrieval.mean / 20;
  // every query ties; ties never count as a hit, or count at 1/candidates at most
  EXPECT_LT(mean, 3.0 / 20);
}

}  // namespace
}  // namespace synbrain
