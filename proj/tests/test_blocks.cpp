#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "synbrain/layers.hpp"
#include "test_util.hpp"

namespace synbrain {
namespace {

using testing::check_gradients;
using testing::check_input_gradient;
using testing::probe;
using testing::random_tensor;

constexpr double kBlockTol = 1e-4;

void randomize(ParamTree& tree, std::uint64_t seed, double sd = 0.5) {
  std::mt19937_64 rng(seed);
  for (auto& leaf : tree) leaf.value = random_tensor(leaf.value.rows(), leaf.value.cols(), rng, sd);
}

Tensor run(const auto& block, ParamTree& tree, const Tensor& x) {
  Graph g(false);
  return block(g, tree, g.constant(x)).value();
}

struct BlockFixture : ::testing::Test {
  ParamTree tree;
  std::mt19937_64 rng{11};
  ParamBuilder builder{tree, rng};
};

// conv1d

TEST_F(BlockFixture, ConvIdentityKernel) {
  Conv1d conv = Conv1d::make(builder, 1, 1, 3, 1, 1);
  tree.leaf(conv.weight).value = Tensor(1, 3, {0.0, 1.0, 0.0});
  const Tensor x = random_tensor(1, 8, rng);
  EXPECT_EQ(run(conv, tree, x), x);
}

TEST_F(BlockFixture, ConvZeroInputGivesBias) {
  Conv1d conv = Conv1d::make(builder, 2, 3, 3, 1, 1);
  randomize(tree, 1);
  const Tensor y = run(conv, tree, Tensor(2, 5));
  for (std::size_t o = 0; o < 3; ++o) {
    for (std::size_t t = 0; t < 5; ++t) EXPECT_DOUBLE_EQ(y(o, t), tree.leaf(conv.bias).value[o]);
  }
}

TEST_F(BlockFixture, ConvMatchesSlidingDotProduct) {
  Conv1d conv = Conv1d::make(builder, 1, 1, 3, 1, 1);
  randomize(tree, 2);
  const Tensor x = random_tensor(1, 8, rng);
  const Tensor& w = tree.leaf(conv.weight).value;
  const double b = tree.leaf(conv.bias).value[0];
  const Tensor y = run(conv, tree, x);
  for (int t = 0; t < 8; ++t) {
    double ref = b;
    for (int q = 0; q < 3; ++q) {
      const int pos = t + q - 1;
      if (pos >= 0 && pos < 8) ref += w[q] * x[pos];
    }
    EXPECT_NEAR(y[t], ref, 1e-6);
  }
}

TEST_F(BlockFixture, ConvGradient) {
  Conv1d conv = Conv1d::make(builder, 3, 4, 3, 2, 1);
  randomize(tree, 3);
  const Tensor x = random_tensor(3, 11, rng);
  auto loss = [&](Graph& g) { return probe(g, conv(g, tree, g.constant(x))); };
  EXPECT_LT(check_gradients(tree, loss, 12).worst, kBlockTol);
  EXPECT_LT(check_input_gradient(x, [&](Graph& g, Var in) { return probe(g, conv(g, tree, in)); }),
            kBlockTol);
}

// resnet block

TEST_F(BlockFixture, ResnetZeroBranchIsSkip) {
  ResnetBlock block = ResnetBlock::make(builder, 3, 5);
  randomize(tree, 4);
  tree.leaf(block.conv2.weight).value.fill(0.0);
  tree.leaf(block.conv2.bias).value.fill(0.0);
  const Tensor x = random_tensor(3, 9, rng);
  EXPECT_EQ(run(block, tree, x), run(block.skip, tree, x));
}

TEST_F(BlockFixture, ResnetSameChannelsZeroBranchIsIdentity) {
  ResnetBlock block = ResnetBlock::make(builder, 4, 4);
  EXPECT_FALSE(block.has_skip_conv);
  randomize(tree, 5);
  tree.leaf(block.conv2.weight).value.fill(0.0);
  tree.leaf(block.conv2.bias).value.fill(0.0);
  const Tensor x = random_tensor(4, 9, rng);
  EXPECT_EQ(run(block, tree, x), x);
}

TEST_F(BlockFixture, ResnetGradient) {
  ResnetBlock a = ResnetBlock::make(builder.scope("a"), 2, 4);
  ResnetBlock b = ResnetBlock::make(builder.scope("b"), 4, 4);
  randomize(tree, 6);
  const Tensor x = random_tensor(2, 7, rng);
  auto fwd = [&](Graph& g, Var in) { return probe(g, b(g, tree, a(g, tree, in))); };
  EXPECT_LT(check_gradients(tree, [&](Graph& g) { return fwd(g, g.constant(x)); }).worst,
            kBlockTol);
  EXPECT_LT(check_input_gradient(x, fwd), kBlockTol);
}

// attention

TEST_F(BlockFixture, AttentionSinglePosition) {
  SelfAttention1d attn = SelfAttention1d::make(builder, 3, 1);
  randomize(tree, 7);
  const Tensor x = random_tensor(3, 1, rng);
  // one key, so the softmax weight is exactly 1 and the output is x + out(v(LN(x)))
  const auto& a = attn.attn;
  double mean = (x[0] + x[1] + x[2]) / 3;
  double var = 0.0;
  for (int i = 0; i < 3; ++i) var += (x[i] - mean) * (x[i] - mean) / 3;
  double h[3], v[3];
  for (int i = 0; i < 3; ++i) {
    h[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * tree.leaf(a.norm.gain).value[i] +
           tree.leaf(a.norm.bias).value[i];
  }
  for (int j = 0; j < 3; ++j) {
    v[j] = tree.leaf(a.v.bias).value[j];
    for (int i = 0; i < 3; ++i) v[j] += h[i] * tree.leaf(a.v.weight).value(i, j);
  }
  const Tensor y = run(attn, tree, x);
  for (int j = 0; j < 3; ++j) {
    double o = tree.leaf(a.out.bias).value[j];
    for (int i = 0; i < 3; ++i) o += v[i] * tree.leaf(a.out.weight).value(i, j);
    EXPECT_NEAR(y[j], x[j] + o, 1e-12);
  }
}

TEST_F(BlockFixture, AttentionTwoTokensByHand) {
  SelfAttention attn = SelfAttention::make(builder, 2, 1);
  auto set = [&](std::size_t leaf, std::vector<double> v) {
    tree.leaf(leaf).value = Tensor(tree.leaf(leaf).value.rows(), tree.leaf(leaf).value.cols(), v);
  };
  set(attn.q.weight, {1, 0, 0, 2});
  set(attn.k.weight, {1, 0, 0, 1});
  set(attn.v.weight, {1, 1, 0, 1});
  set(attn.out.weight, {1, 0, 0, 1});
  const Tensor x(2, 2, {1, 3, 4, 2});
  // LN rows are (-s, s) and (s, -s); scores +-3s^2 / sqrt(2); values (-s, 0) and (s, 0)
  const double s = 1.0 / std::sqrt(1.0 + 1e-5);
  const double w = 1.0 / (1.0 + std::exp(-6.0 * s * s / std::sqrt(2.0)));
  const Tensor y = run(attn, tree, x);
  EXPECT_NEAR(y(0, 0), 1 + s * (1 - 2 * w), 1e-6);
  EXPECT_NEAR(y(0, 1), 3, 1e-6);
  EXPECT_NEAR(y(1, 0), 4 + s * (2 * w - 1), 1e-6);
  EXPECT_NEAR(y(1, 1), 2, 1e-6);
}

TEST_F(BlockFixture, AttentionPermutationEquivariant) {
  SelfAttention attn = SelfAttention::make(builder, 4, 2);
  randomize(tree, 8);
  const Tensor x = random_tensor(5, 4, rng);
  Tensor px(5, 4);
  const int perm[5] = {3, 0, 4, 1, 2};
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 4; ++c) px(r, c) = x(perm[r], c);
  }
  const Tensor y = run(attn, tree, x), py = run(attn, tree, px);
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(py(r, c), y(perm[r], c), 1e-12);
  }
}

TEST_F(BlockFixture, AttentionGradient) {
  SelfAttention attn = SelfAttention::make(builder, 6, 3);
  randomize(tree, 9);
  const Tensor x = random_tensor(5, 6, rng);
  auto fwd = [&](Graph& g, Var in) { return probe(g, attn(g, tree, in)); };
  const auto r = check_gradients(tree, [&](Graph& g) { return fwd(g, g.constant(x)); });
  EXPECT_LT(r.worst, kBlockTol) << r.worst_leaf;
  EXPECT_LT(check_input_gradient(x, fwd), kBlockTol);
}

TEST_F(BlockFixture, Attention1dGradient) {
  SelfAttention1d attn = SelfAttention1d::make(builder, 4, 1);
  randomize(tree, 10);
  const Tensor x = random_tensor(4, 6, rng);
  auto fwd = [&](Graph& g, Var in) { return probe(g, attn(g, tree, in)); };
  EXPECT_LT(check_gradients(tree, [&](Graph& g) { return fwd(g, g.constant(x)); }).worst,
            kBlockTol);
  EXPECT_LT(check_input_gradient(x, fwd), kBlockTol);
}

// pooling and resampling

TEST(AdaptivePool, HandBins) {
  const Tensor y = adaptive_max_pool_values(Tensor(1, 4, {1, 5, 2, 7}), 2);
  EXPECT_EQ(y, Tensor(1, 2, {5, 7}));
}

TEST(AdaptivePool, SameLengthIsIdentity) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor(3, 10, rng);
  EXPECT_EQ(adaptive_max_pool_values(x, 10), x);
}

TEST(AdaptivePool, ShapeSweep) {
  std::mt19937_64 rng(2);
  for (std::size_t len : {97u, 512u, 15724u}) {
    const Tensor x = random_tensor(2, len, rng);
    const Tensor y = adaptive_max_pool_values(x, 64);
    EXPECT_EQ(y.rows(), 2u);
    EXPECT_EQ(y.cols(), 64u);
    // every bin max is attained somewhere in the row
    double row_max = x(0, 0);
    for (std::size_t i = 0; i < len; ++i) row_max = std::max(row_max, x(0, i));
    double pooled_max = y(0, 0);
    for (std::size_t i = 0; i < 64; ++i) pooled_max = std::max(pooled_max, y(0, i));
    EXPECT_EQ(row_max, pooled_max);
  }
}

TEST(AdaptivePool, Gradient) {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor(2, 13, rng);
  EXPECT_LT(check_input_gradient(x, [](Graph& g, Var in) {
              return probe(g, adaptive_max_pool(in, 5));
            }),
            kBlockTol);
}

TEST(LinearResample, Midpoint) {
  EXPECT_EQ(linear_resample_values(Tensor(1, 2, {0, 1}), 3), Tensor(1, 3, {0, 0.5, 1}));
}

TEST(LinearResample, SameLengthIsIdentity) {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor(2, 9, rng);
  EXPECT_EQ(linear_resample_values(x, 9), x);
}

TEST(LinearResample, EndpointsAligned) {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor(1, 7, rng);
  const Tensor y = linear_resample_values(x, 100);
  EXPECT_DOUBLE_EQ(y[0], x[0]);
  EXPECT_NEAR(y[99], x[6], 1e-12);
}

TEST(LinearResample, Gradient) {
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor(2, 9, rng);
  for (std::size_t out : {4u, 9u, 23u}) {
    EXPECT_LT(check_input_gradient(x, [out](Graph& g, Var in) {
                return probe(g, linear_resample(in, out));
              }),
              kBlockTol);
  }
}

// projector, norms, up/down sampling

TEST_F(BlockFixture, ProjectorShapesAndZeroFinalLayer) {
  MlpProjector mlp = MlpProjector::make(builder, {6, 5, 5, 3});
  randomize(tree, 12);
  const Tensor x = random_tensor(4, 6, rng);
  Tensor y = run(mlp, tree, x);
  EXPECT_EQ(y.rows(), 4u);
  EXPECT_EQ(y.cols(), 3u);
  tree.leaf(mlp.linears.back().weight).value.fill(0.0);
  tree.leaf(mlp.linears.back().bias).value.fill(0.0);
  y = run(mlp, tree, x);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST_F(BlockFixture, ProjectorTokensNeverMix) {
  MlpProjector mlp = MlpProjector::make(builder, {4, 6, 3});
  randomize(tree, 13);
  Tensor x = random_tensor(3, 4, rng);
  const Tensor y = run(mlp, tree, x);
  x(2, 1) += 1.0;
  const Tensor y2 = run(mlp, tree, x);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(y(0, c), y2(0, c));
    EXPECT_EQ(y(1, c), y2(1, c));
  }
}

TEST_F(BlockFixture, ProjectorGradient) {
  MlpProjector mlp = MlpProjector::make(builder, {6, 5, 4});
  randomize(tree, 14);
  const Tensor x = random_tensor(3, 6, rng);
  auto fwd = [&](Graph& g, Var in) { return probe(g, mlp(g, tree, in)); };
  EXPECT_LT(check_gradients(tree, [&](Graph& g) { return fwd(g, g.constant(x)); }).worst,
            kBlockTol);
  EXPECT_LT(check_input_gradient(x, fwd), kBlockTol);
}

TEST_F(BlockFixture, NormAndResamplingBlockGradients) {
  ChannelNorm norm = ChannelNorm::make(builder.scope("n"), 3);
  Downsample down = Downsample::make(builder.scope("d"), 3);
  Upsample up = Upsample::make(builder.scope("u"), 3);
  randomize(tree, 15);
  const Tensor x = random_tensor(3, 8, rng);
  auto fwd = [&](Graph& g, Var in) {
    Var h = down(g, tree, norm(g, tree, in));
    EXPECT_EQ(h.cols(), 4u);
    h = up(g, tree, silu(h));
    EXPECT_EQ(h.cols(), 8u);
    return probe(g, gelu(h));
  };
  EXPECT_LT(check_gradients(tree, [&](Graph& g) { return fwd(g, g.constant(x)); }).worst,
            kBlockTol);
  EXPECT_LT(check_input_gradient(x, fwd), kBlockTol);
}

TEST_F(BlockFixture, DefaultInit) {
  Linear lin = Linear::make(builder, 200, 50);
  LayerNorm ln = LayerNorm::make(builder.scope("ln"), 50);
  const Tensor& w = tree.leaf(lin.weight).value;
  double sq = 0.0;
  for (double v : w.values()) {
    EXPECT_LE(std::abs(v), 2 * ParamBuilder::kInitSd);
    sq += v * v;
  }
  // a normal truncated at 2 sd keeps about 77% of the variance
  EXPECT_NEAR(std::sqrt(sq / w.size()), 0.88 * ParamBuilder::kInitSd, 0.002);
  for (double v : tree.leaf(lin.bias).value.values()) EXPECT_EQ(v, 0.0);
  for (double v : tree.leaf(ln.gain).value.values()) EXPECT_EQ(v, 1.0);
  EXPECT_TRUE(tree.leaf(lin.weight).decay);
  EXPECT_FALSE(tree.leaf(lin.bias).decay);
  EXPECT_FALSE(tree.leaf(ln.gain).decay);
}

TEST(Ops, ShapeMismatchThrows) {
  Graph g;
  Var a = g.constant(Tensor(2, 3)), b = g.constant(Tensor(3, 2));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Ops, ElementwiseGradients) {
  std::mt19937_64 rng(21);
  const Tensor x = random_tensor(3, 5, rng);
  auto chain = [](Graph& g, Var in) {
    Var a = softmax_rows(in);
    Var b = log_softmax_rows(scale(in, 0.7));
    Var c = l2_normalize_rows(add_scalar(in, 0.3));
    Var d = exp(clamp(in, -0.5, 0.5));
    Var e = mean_rows(square(in));
    return add(add(probe(g, add(a, b), 1), probe(g, mul(c, d), 2)), probe(g, e, 3));
  };
  EXPECT_LT(check_input_gradient(x, chain), kBlockTol);
}

}  // namespace
}  // namespace synbrain
