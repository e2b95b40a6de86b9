#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "pct/backbone.hpp"
#include "pct/errors.hpp"
#include "pct/model.hpp"
#include "pct/ops.hpp"

using namespace pct;
using namespace pct::backbone;
using pct::testing::uniform;

namespace {

BackboneConfig small_config(bool ct) {
  BackboneConfig cfg;
  cfg.in_height = 8;
  cfg.in_width = 8;
  cfg.stem_width = 4;
  cfg.stages = {{4, 1, ct}, {8, 2, ct}};
  cfg.embed_dim = 6;
  cfg.max_rel_offset = 2;
  return cfg;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// The branch as a plain CNN: stem, stages, pooled linear embedding.
Tensor plain_cnn(const BranchWeights& b, const Tensor& images) {
  Tensor x = b.stem(images);
  for (const ConvLayer& layer : b.stages) x = layer(x);
  return add_broadcast(matmul(global_avg_pool(x), b.embed_weight.value), b.embed_bias.value);
}

}  // namespace

TEST(Backbone, ZeroImageGivesZeroStemFeatures) {
  Backbone net(BackboneConfig{}, 1);
  const StagePair p = net.stem(Tensor::zeros({2, 1, 16, 16}));
  for (double v : p.x_id.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.x_ra.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, StemDividesByStride) {
  Backbone net(BackboneConfig{}, 1);
  const StagePair p = net.stem(Tensor::zeros({3, 1, 16, 16}));
  EXPECT_EQ(p.x_id.shape(), (Shape{3, 8, 8, 8}));
  EXPECT_EQ(p.x_ra.shape(), p.x_id.shape());
}

TEST(Backbone, StrideTwoStageUsesCeilDivision) {
  BackboneConfig cfg = small_config(true);
  cfg.in_height = 10;
  cfg.in_width = 14;
  Backbone net(cfg, 2);
  StagePair p = net.stem(Tensor::zeros({1, 1, 10, 14}));
  EXPECT_EQ(p.x_id.shape(), (Shape{1, 4, 5, 7}));
  p = net.stage_step(p);
  p = net.stage_step(p);
  EXPECT_EQ(p.x_id.shape(), (Shape{1, 8, 3, 4}));
}

TEST(Backbone, SeededStemIsReproducible) {
  std::mt19937_64 rng(3);
  Tensor img = uniform({2, 1, 16, 16}, rng, -1, 1, false);
  const StagePair a = Backbone(BackboneConfig{}, 42).stem(img);
  const StagePair b = Backbone(BackboneConfig{}, 42).stem(img);
  EXPECT_TRUE(bit_equal(a.x_id, b.x_id));
  EXPECT_TRUE(bit_equal(a.x_ra, b.x_ra));
  EXPECT_FALSE(bit_equal(a.x_id, Backbone(BackboneConfig{}, 43).stem(img).x_id));
}

TEST(Backbone, DisabledCtEqualsTwoPlainCnns) {
  std::mt19937_64 rng(4);
  Tensor img = uniform({3, 1, 8, 8}, rng, -1, 1, false);
  Backbone net(small_config(false), 5);
  const ForwardResult r = net.forward(img);
  EXPECT_TRUE(bit_equal(r.embeddings.id_embed, plain_cnn(net.identity_branch(), img)));
  EXPECT_TRUE(bit_equal(r.embeddings.ra_embed, plain_cnn(net.race_branch(), img)));
  EXPECT_TRUE(r.attention.empty());
}

TEST(Backbone, ZeroValueCtEqualsDisabled) {
  std::mt19937_64 rng(6);
  Tensor img = uniform({3, 1, 8, 8}, rng, -1, 1, false);
  BackboneConfig with = small_config(true);
  with.ct_value_gain = 0.0;
  const ForwardResult a = Backbone(with, 7).forward(img);
  const ForwardResult b = Backbone(small_config(false), 7).forward(img);
  EXPECT_TRUE(bit_equal(a.embeddings.id_embed, b.embeddings.id_embed));
  EXPECT_TRUE(bit_equal(a.embeddings.ra_embed, b.embeddings.ra_embed));
  EXPECT_EQ(a.attention.size(), 2u);
}

TEST(Backbone, NonzeroValueCtChangesForward) {
  std::mt19937_64 rng(6);
  Tensor img = uniform({2, 1, 8, 8}, rng, -1, 1, false);
  BackboneConfig with = small_config(true);
  with.ct_value_gain = 1.0;
  EXPECT_FALSE(bit_equal(Backbone(with, 7).forward(img).embeddings.id_embed,
                         Backbone(small_config(false), 7).forward(img).embeddings.id_embed));
}

TEST(Backbone, EmbeddingShapes) {
  Backbone net(BackboneConfig{}, 1);
  const ForwardResult r = net.forward(Tensor::zeros({5, 1, 16, 16}));
  EXPECT_EQ(r.embeddings.id_embed.shape(), (Shape{5, 32}));
  EXPECT_EQ(r.embeddings.ra_embed.shape(), (Shape{5, 32}));
  const ForwardResult single = net.forward(Tensor::zeros({1, 16, 16}));
  EXPECT_EQ(single.embeddings.id_embed.shape(), (Shape{1, 32}));
  EXPECT_EQ(r.stage_id_pooled.size(), 4u);
}

TEST(Backbone, InferenceUsesIdentityEmbedding) {
  std::mt19937_64 rng(8);
  Tensor img = uniform({4, 1, 16, 16}, rng, -1, 1, false);
  RunConfig cfg;
  cfg.backbone.ct_value_gain = 0.5;
  const Model model(cfg, 10, 4);
  EXPECT_TRUE(bit_equal(model.embed(img), model.net().forward(img).embeddings.id_embed));
  EXPECT_FALSE(model.embed(img).requires_grad());
}

TEST(Backbone, StemGradientThroughFullNetwork) {
  std::mt19937_64 rng(9);
  Tensor img = uniform({2, 1, 8, 8}, rng, -1, 1, false);
  BackboneConfig cfg = small_config(true);
  cfg.ct_value_gain = 1.0;
  Backbone net(cfg, 10);
  Tensor probe = uniform({2, 6}, rng, -1, 1, false);
  const double err = pct::testing::gradcheck(
      [&] { return pct::testing::readout(net.forward(img).embeddings.id_embed, probe); },
      {net.identity_branch().stem.kernel.value});
  EXPECT_LT(err, 1e-3);
}

TEST(Backbone, InvalidConfigurationsThrow) {
  BackboneConfig cfg;
  cfg.heads = 3;
  EXPECT_THROW(Backbone(cfg, 1), ConfigError);
  cfg = BackboneConfig{};
  cfg.kernel = 4;
  EXPECT_THROW(Backbone(cfg, 1), ConfigError);
  cfg = BackboneConfig{};
  cfg.stages.clear();
  EXPECT_THROW(Backbone(cfg, 1), ConfigError);
  Backbone net(BackboneConfig{}, 1);
  EXPECT_THROW(net.forward(Tensor::zeros({1, 1, 12, 16})), ConfigError);
}

TEST(Backbone, SeedStreamsAreDistinct) {
  EXPECT_NE(derive_seed(1, 1), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 1), derive_seed(2, 1));
  EXPECT_EQ(derive_seed(7, 100), derive_seed(7, 100));
}
