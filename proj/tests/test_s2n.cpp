#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "synbrain/objectives.hpp"
#include "synbrain/s2n.hpp"
#include "test_util.hpp"

namespace synbrain {
namespace {

using testing::check_gradients;
using testing::random_tensor;
using testing::tiny_config;

void randomize(S2nMapper& s2n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& leaf : s2n.params()) {
    if (leaf.name == S2nMapper::kPositionalLeaf) continue;
    leaf.value = random_tensor(leaf.value.rows(), leaf.value.cols(), rng, 0.3);
  }
}

TEST(S2n, ShapePreserved) {
  S2nMapper s2n(ModelConfig::desk(), 1);
  EXPECT_EQ(s2n.layers(), 8u);
  std::mt19937_64 rng(2);
  const Tensor y = s2n.forward_values(random_tensor(16, 32, rng));
  EXPECT_EQ(y.rows(), 16u);
  EXPECT_EQ(y.cols(), 32u);
  EXPECT_THROW(s2n.forward_values(Tensor(16, 31)), ShapeError);
}

TEST(S2n, PaperShape) {
  // Weights only; no forward pass at this size.
  const ModelConfig c = ModelConfig::paper();
  EXPECT_EQ(c.latent_dim % c.s2n_heads, 0u);
  EXPECT_EQ(sinusoidal_encoding(256, 1664).rows(), 256u);
  EXPECT_EQ(sinusoidal_encoding(256, 1664).cols(), 1664u);
}

TEST(S2n, UntrainedMapperReturnsPriorMean) {
  S2nMapper s2n(tiny_config(), 3);
  std::mt19937_64 rng(4);
  const Tensor out = s2n.forward_values(random_tensor(4, 8, rng));
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(S2n, ZeroBranchesKeepResidualStream) {
  // Zero branch outputs leave input + PE; an identity head then exposes it.
  S2nMapper s2n(tiny_config(), 5);
  ParamTree& p = s2n.params();
  Tensor& w = p.leaf(p.index_of("head.proj.weight")).value;
  for (std::size_t i = 0; i < w.rows(); ++i) w(i, i) = 1.0;
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor(4, 8, rng);
  Tensor stream = x;
  const Tensor pe = sinusoidal_encoding(4, 8);
  for (std::size_t i = 0; i < x.size(); ++i) stream[i] += pe[i];
  const Tensor y = s2n.forward_values(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 8; ++c) mean += stream(r, c) / 8;
    for (std::size_t c = 0; c < 8; ++c) var += (stream(r, c) - mean) * (stream(r, c) - mean) / 8;
    for (std::size_t c = 0; c < 8; ++c) {
      EXPECT_NEAR(y(r, c), (stream(r, c) - mean) / std::sqrt(var + 1e-5), 1e-9);
    }
  }
}

TEST(S2n, SinusoidalTable) {
  const Tensor pe = sinusoidal_encoding(5, 6);
  for (std::size_t c = 0; c < 6; ++c) EXPECT_DOUBLE_EQ(pe(0, c), c % 2 == 0 ? 0.0 : 1.0);
  EXPECT_NEAR(pe(3, 0), std::sin(3.0), 1e-12);
  EXPECT_NEAR(pe(3, 1), std::cos(3.0), 1e-12);
}

TEST(S2n, Deterministic) {
  S2nMapper a(tiny_config(), 7), b(tiny_config(), 7);
  randomize(a, 8);
  randomize(b, 8);
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor(4, 8, rng);
  EXPECT_EQ(a.forward_values(x), b.forward_values(x));
}

TEST(S2n, PositionalTableBreaksPermutationSymmetry) {
  S2nMapper s2n(tiny_config(), 10);
  randomize(s2n, 11);
  std::mt19937_64 rng(12);
  const Tensor x = random_tensor(4, 8, rng);
  Tensor px(4, 8);
  const int perm[4] = {2, 0, 3, 1};
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 8; ++c) px(r, c) = x(perm[r], c);
  }
  auto max_gap = [&] {
    const Tensor y = s2n.forward_values(x), py = s2n.forward_values(px);
    double gap = 0.0;
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 8; ++c) gap = std::max(gap, std::abs(py(r, c) - y(perm[r], c)));
    }
    return gap;
  };
  s2n.set_positional_encoding(false);
  EXPECT_LT(max_gap(), 1e-12);
  s2n.set_positional_encoding(true);
  EXPECT_GT(max_gap(), 1e-3);
}

TEST(S2nPartition, DeskMlpOnlyCount) {
  S2nMapper s2n(ModelConfig::desk(), 13);
  const PartitionResult r = s2n.partition_parameters(Partition::mlp_only);
  EXPECT_EQ(r.trainable.size(), 8u * 4u);
  for (const auto& name : r.trainable) {
    EXPECT_EQ(name.rfind("layer", 0), 0u);
    EXPECT_NE(name.find(".mlp."), std::string::npos);
  }
  EXPECT_EQ(r.trainable.size() + r.frozen.size(), s2n.params().size());
  EXPECT_EQ(s2n.params().trainable_names(), r.trainable);
}

TEST(S2nPartition, FullIsAllButPositionalTable) {
  S2nMapper s2n(ModelConfig::desk(), 13);
  s2n.partition_parameters(Partition::mlp_only);
  const PartitionResult r = s2n.partition_parameters(Partition::full);
  ASSERT_EQ(r.frozen.size(), 1u);
  EXPECT_EQ(r.frozen.front(), S2nMapper::kPositionalLeaf);
}

TEST(S2nPartition, UnknownModeRejected) {
  EXPECT_EQ(parse_partition("mlp-only"), Partition::mlp_only);
  EXPECT_THROW(parse_partition("attention"), ConfigError);
}

TEST(S2nPartition, TogglingKeepsValues) {
  S2nMapper s2n(tiny_config(), 14);
  const auto before = s2n.params().flatten_values();
  s2n.partition_parameters(Partition::mlp_only);
  s2n.partition_parameters(Partition::full);
  EXPECT_EQ(s2n.params().flatten_values(), before);
}

TEST(S2n, Gradient) {
  const ModelConfig c = tiny_config();
  S2nMapper s2n(c, 15);
  randomize(s2n, 16);
  std::mt19937_64 rng(17);
  const Tensor x = random_tensor(4, 8, rng), target = random_tensor(4, 8, rng);
  auto loss = [&](Graph& g) { return s2n_loss(s2n.forward(g, g.constant(x)), g.constant(target)); };
  const auto result = check_gradients(s2n.params(), loss, 6);
  EXPECT_LT(result.worst, 1e-3) << result.worst_leaf;
}

TEST(S2n, SaveLoad) {
  S2nMapper s2n(tiny_config(), 18);
  randomize(s2n, 19);
  s2n.partition_parameters(Partition::mlp_only);
  const auto dir = std::filesystem::temp_directory_path() / "synbrain_test_s2n";
  std::filesystem::remove_all(dir);
  s2n.save(dir);
  S2nMapper back = S2nMapper::load(dir);
  EXPECT_EQ(back.layers(), s2n.layers());
  EXPECT_EQ(back.heads(), s2n.heads());
  EXPECT_EQ(back.partition(), Partition::mlp_only);
  EXPECT_EQ(back.params().trainable_names(), s2n.params().trainable_names());
  std::mt19937_64 rng(20);
  const Tensor x = random_tensor(4, 8, rng);
  const Tensor y = s2n.forward_values(x), yb = back.forward_values(x);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(yb[i], y[i], 1e-4);
}

}  // namespace
}  // namespace synbrain
