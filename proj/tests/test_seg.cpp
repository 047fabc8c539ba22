#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <vector>

#include "cometa/seg.hpp"
#include "support/gradcheck.hpp"
#include "support/tiny.hpp"

using namespace cometa;

namespace {

Tensor identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t k = 0; k < n; ++k) t(k, k) = 1.0;
  return t;
}

seg::SegParams zero_like(seg::SegParams p) {
  for (Tensor* t : p.tensors())
    for (double& v : t->values()) v = 0.0;
  return p;
}

/// One prepared episode on the tiny world with d = 4 and M = 2.
struct EpisodeFixture {
  testutil::TinyWorld w;
  beg::CooccurrenceIndex index;
  beg::CandidateSet candidates;
  model::GlobalAverages averages;
  seg::EpisodeSources src;
  seg::ContextCache cache;
  std::vector<seg::EpisodeBatchPair> episodes;
  seg::SegParams params;

  EpisodeFixture()
      : index(protocol::old_item_index(w.log, w.split, true)),
        candidates(w.split.old_items),
        averages(model::global_averages(w.backbone, w.split.old_items)),
        src{w.log, index, candidates, averages, 3, {}},
        cache(w.backbone, w.log, w.split.module_train) {
    std::mt19937_64 rng(4);
    episodes = seg::make_episodes(w.log, w.split.module_train, 2, rng);
    const std::vector<std::size_t> hidden{5};
    params = seg::SegParams::init(4, w.log.item_fields.size(), hidden, 12);
    // Larger output weights so the shift is not negligible.
    std::mt19937_64 r2(5);
    params.gen_w.back() = oracle::random_tensor(r2, params.gen_w.back().rows(), 4, 0.5);
  }

  seg::EpisodeInputs inputs(std::size_t k = 0, seg::SegVariant v = {}) const {
    return seg::prepare_episode(w.backbone, cache, src, episodes.at(k), v);
  }
};

}  // namespace

TEST(MeanUser, PoolsRows) {
  const Tensor table(3, 2, {1.0, 0.0, 0.0, 1.0, 0.4, -2.0});
  const std::vector<std::size_t> one{2}, two{0, 1};
  EXPECT_EQ(seg::mean_user_embedding(one, table), table.row_at(2));
  EXPECT_EQ(seg::mean_user_embedding(two, table), Tensor::row({0.5, 0.5}));
  const Tensor same(2, 2, {0.3, 0.7, 0.3, 0.7});
  EXPECT_EQ(seg::mean_user_embedding(two, same), Tensor::row({0.3, 0.7}));
  EXPECT_THROW(seg::mean_user_embedding({}, table), Error);
}

TEST(Refinement, IdentityAndZeroMaps) {
  const std::vector<std::size_t> hidden{3};
  seg::SegParams p = seg::SegParams::init(2, 1, hidden, 1);
  const Tensor v = Tensor::row({0.25, -1.5});
  p.w_u = identity(2);
  p.w_f = identity(2);
  EXPECT_EQ(seg::refined_user_repr(v, p), v);
  EXPECT_EQ(seg::refined_attr_repr(v, p), v);
  p.w_u = Tensor(2, 2);
  p.w_f = Tensor(2, 2);
  EXPECT_EQ(seg::refined_user_repr(v, p), Tensor(1, 2));
  EXPECT_EQ(seg::refined_attr_repr(v, p), Tensor(1, 2));
  EXPECT_THROW(seg::refined_attr_repr(Tensor(1, 3), p), ShapeError);
}

TEST(Shift, ZeroNetworkGivesZero) {
  const std::vector<std::size_t> hidden{4, 4};
  const seg::SegParams p = zero_like(seg::SegParams::init(3, 2, hidden, 1));
  EXPECT_EQ(seg::shift_embedding(Tensor::row({1, 2, 3}), Tensor::row({4, 5, 6}), p), Tensor(1, 3));
}

TEST(Shift, Deterministic) {
  const std::vector<std::size_t> hidden{4};
  const seg::SegParams p = seg::SegParams::init(3, 2, hidden, 1);
  const Tensor u = Tensor::row({0.1, -0.2, 0.3}), f = Tensor::row({1, 2, 3, 4, 5, 6});
  EXPECT_TRUE(bitwise_equal(seg::generate_shift(p, u, f), seg::generate_shift(p, u, f)));
  EXPECT_EQ(seg::SegParams::init(3, 2, hidden, 1), p);
}

TEST(Episodes, DisjointHalvesOfOneItem) {
  const testutil::TinyWorld w;
  std::mt19937_64 rng(3);
  const auto eps = seg::make_episodes(w.log, w.split.module_train, 4, rng);
  ASSERT_FALSE(eps.empty());
  const std::set<std::size_t> pool(w.split.module_train.begin(), w.split.module_train.end());
  for (const auto& ep : eps) {
    ASSERT_EQ(ep.a.size(), 4u);
    ASSERT_EQ(ep.b.size(), 4u);
    std::set<std::size_t> all(ep.a.begin(), ep.a.end());
    all.insert(ep.b.begin(), ep.b.end());
    EXPECT_EQ(all.size(), 8u);
    for (std::size_t r : all) {
      EXPECT_EQ(w.log.records[r].item, ep.item);
      EXPECT_TRUE(pool.contains(r));
    }
  }
  // Each old item holds out 10 records; M = 6 needs 12.
  EXPECT_TRUE(seg::make_episodes(w.log, w.split.module_train, 6, rng).empty());
}

TEST(EpisodeLoss, BetaOneIsLossA) {
  const EpisodeFixture f;
  seg::SegConfig cfg;
  cfg.beta = 1.0;
  const auto r = seg::episode_loss(f.w.backbone, f.inputs(), f.params, cfg);
  EXPECT_EQ(r.loss, r.loss_a);
}

TEST(EpisodeLoss, MixesByBeta) {
  const EpisodeFixture f;
  seg::SegConfig cfg;
  cfg.beta = 0.1;
  const auto r = seg::episode_loss(f.w.backbone, f.inputs(), f.params, cfg);
  EXPECT_NEAR(r.loss, 0.1 * r.loss_a + 0.9 * r.loss_b, 1e-15);
  EXPECT_NE(r.loss_a, r.loss_b);
}

TEST(EpisodeLoss, ZeroStepKeepsShift) {
  const EpisodeFixture f;
  seg::SegConfig cfg;
  cfg.eta = 0.0;
  const seg::EpisodeInputs in = f.inputs();
  const auto r = seg::episode_loss(f.w.backbone, in, f.params, cfg);
  EXPECT_TRUE(bitwise_equal(r.v_seg, r.v_seg_adapted));
  // loss_b is then the plain loss on D_b at the original embedding.
  seg::EpisodeInputs swapped = in;
  std::swap(swapped.ctx_a, swapped.ctx_b);
  std::swap(swapped.labels_a, swapped.labels_b);
  EXPECT_EQ(seg::episode_loss(f.w.backbone, swapped, f.params, cfg).loss_a, r.loss_b);
}

TEST(EpisodeLoss, InnerStepLowersSupportLoss) {
  const EpisodeFixture f;
  seg::SegConfig cfg;
  cfg.eta = 0.5;
  seg::EpisodeInputs in = f.inputs();
  in.ctx_b = in.ctx_a;
  in.labels_b = in.labels_a;
  const auto r = seg::episode_loss(f.w.backbone, in, f.params, cfg);
  EXPECT_LT(r.loss_b, r.loss_a);
}

TEST(EpisodeLoss, GradientThroughInnerStep) {
  const EpisodeFixture f;
  for (double eta : {1e-3, 0.5}) {
    seg::SegConfig cfg;
    cfg.eta = eta;
    for (const auto& [name, err] : oracle::episode_gradient_errors(f.w.backbone, f.inputs(), f.params, cfg))
      EXPECT_LT(err, 1e-4) << name << " eta " << eta;
  }
  // The check is sharp enough to see a dropped second-order term.
  seg::SegConfig first;
  first.eta = 2.0;
  first.order = seg::GradientOrder::first;
  double worst = 0.0;
  for (const auto& [name, err] : oracle::episode_gradient_errors(f.w.backbone, f.inputs(), f.params, first))
    worst = std::max(worst, err);
  EXPECT_GT(worst, 1e-4);
}

TEST(EpisodeLoss, FirstOrderDropsCurvature) {
  const EpisodeFixture f;
  seg::SegConfig full, first;
  full.eta = first.eta = 2.0;
  first.order = seg::GradientOrder::first;
  const auto a = seg::episode_loss(f.w.backbone, f.inputs(), f.params, full);
  const auto b = seg::episode_loss(f.w.backbone, f.inputs(), f.params, first);
  EXPECT_EQ(a.loss, b.loss);
  double worst = 0.0;
  for (std::size_t k = 0; k < a.grads.size(); ++k) worst = std::max(worst, oracle::relative_error(a.grads[k], b.grads[k]));
  EXPECT_GT(worst, 1e-6);

  full.eta = first.eta = 0.0;
  const auto c = seg::episode_loss(f.w.backbone, f.inputs(), f.params, full);
  const auto d = seg::episode_loss(f.w.backbone, f.inputs(), f.params, first);
  for (std::size_t k = 0; k < c.grads.size(); ++k) EXPECT_LT(oracle::relative_error(c.grads[k], d.grads[k]), 1e-12);
}

TEST(EpisodeLoss, BaseEmbeddingIsAConstant) {
  const EpisodeFixture f;
  const seg::SegConfig cfg;
  const auto a = seg::episode_loss(f.w.backbone, f.inputs(), f.params, cfg, false);
  const auto b = seg::episode_loss(f.w.backbone, f.inputs(), f.params, cfg, true);
  EXPECT_EQ(a.loss, b.loss);
  for (std::size_t k = 0; k < a.grads.size(); ++k) EXPECT_TRUE(bitwise_equal(a.grads[k], b.grads[k]));
}

TEST(EpisodeLoss, VariantsChangeInputs) {
  const EpisodeFixture f;
  std::size_t k = 0;
  while (f.index.users_in(f.w.log, f.episodes.at(k).a, f.episodes[k].item).empty()) ++k;
  const seg::EpisodeInputs full = f.inputs(k, {true, false});
  const seg::EpisodeInputs no_beg = f.inputs(k, {false, false});
  const seg::EpisodeInputs pinned = f.inputs(k, {false, true});
  EXPECT_EQ(no_beg.v_beg, Tensor(1, 4));
  EXPECT_NE(full.v_beg, Tensor(1, 4));
  EXPECT_EQ(pinned.mean_user, f.averages.user);
  EXPECT_EQ(full.mean_user, no_beg.mean_user);
  EXPECT_NE(full.mean_user, f.averages.user);
}

TEST(TrainSeg, ZeroEpochsReturnsInitialization) {
  const EpisodeFixture f;
  seg::SegConfig cfg;
  cfg.epochs = 0;
  cfg.gen_hidden = {5};
  const auto a = seg::train_seg(f.w.backbone, f.w.split.module_train, f.src, cfg, {}, 3);
  cfg.epochs = 1;
  cfg.minibatch = 2;
  const auto b = seg::train_seg(f.w.backbone, f.w.split.module_train, f.src, cfg, {}, 3);
  EXPECT_TRUE(a.curve.empty());
  EXPECT_EQ(b.curve.size(), 1u);
  EXPECT_NE(a.params, b.params);
  std::mt19937_64 rng(3);
  EXPECT_EQ(a.params, seg::SegParams::init(4, f.w.log.item_fields.size(), cfg.gen_hidden, rng()));
}

TEST(TrainSeg, DeterministicAndBackboneUntouched) {
  const EpisodeFixture f;
  seg::SegConfig cfg;
  cfg.epochs = 2;
  cfg.minibatch = 3;
  cfg.gen_hidden = {5};
  const std::uint64_t before = model::hash_params(f.w.backbone);
  const auto a = seg::train_seg(f.w.backbone, f.w.split.module_train, f.src, cfg, {}, 8);
  const auto b = seg::train_seg(f.w.backbone, f.w.split.module_train, f.src, cfg, {}, 8);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(model::hash_params(f.w.backbone), before);
  for (const auto& st : a.curve) EXPECT_TRUE(std::isfinite(st.loss));
}

TEST(TrainSeg, NoEligibleItemsIsAnError) {
  const EpisodeFixture f;
  seg::SegConfig cfg;
  cfg.minibatch = 50;
  EXPECT_THROW(seg::train_seg(f.w.backbone, f.w.split.module_train, f.src, cfg, {}, 1), DataError);
}
