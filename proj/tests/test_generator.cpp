#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "cometa/generator.hpp"
#include "cometa/protocol.hpp"
#include "support/tiny.hpp"

using namespace cometa;

namespace {

struct GeneratorFixture {
  testutil::TinyWorld w;
  beg::CooccurrenceIndex index;
  beg::CooccurrenceIndex warm_index;
  beg::CandidateSet candidates;
  model::GlobalAverages averages;
  seg::SegParams seg_params;

  GeneratorFixture()
      : index(protocol::old_item_index(w.log, w.split, true)),
        warm_index(index.extended(w.log, w.split.fold(data::Fold::warm_a))),
        candidates(w.split.old_items),
        averages(model::global_averages(w.backbone, w.split.old_items)) {
    const std::vector<std::size_t> hidden{5};
    seg_params = seg::SegParams::init(4, w.log.item_fields.size(), hidden, 3);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 0.5);
    for (double& v : seg_params.gen_w.back().values()) v = n(rng);
  }

  GenerationContext cold() const { return {w.backbone, w.log, index, candidates, averages, &seg_params, 3, {}}; }
  GenerationContext warm(const model::ModelParams& p) const {
    return {p, w.log, warm_index, candidates, averages, &seg_params, 3, {}};
  }
};

bool rows_equal(const Tensor& a, const Tensor& b, std::size_t row) {
  for (std::size_t c = 0; c < a.cols(); ++c)
    if (a(row, c) != b(row, c)) return false;
  return true;
}

}  // namespace

TEST(Kinds, NamesRoundTrip) {
  for (InitializerKind k : kAllKinds) EXPECT_EQ(parse_kind(to_string(k)), k);
  EXPECT_THROW(parse_kind("metaemb"), ConfigError);
  EXPECT_TRUE(regenerates(InitializerKind::cometa_no_seg));
  EXPECT_FALSE(regenerates(InitializerKind::attribute_only));
}

TEST(MetaEmbedding, ColdUsesGlobalAverages) {
  const GeneratorFixture f;
  const std::size_t item = f.w.split.new_items[0];
  const MetaParts parts = meta_parts(f.cold(), InitializerKind::cometa, item, {});
  EXPECT_EQ(parts.v_beg, f.averages.item);
  const Tensor attrs = model::item_attribute_embeddings(f.w.backbone, f.w.log, item);
  EXPECT_EQ(parts.v_seg, seg::generate_shift(f.seg_params, f.averages.user, attrs));
}

TEST(MetaEmbedding, DecomposesIntoBaseAndShift) {
  const GeneratorFixture f;
  std::mt19937_64 rng(0);
  for (std::size_t item : f.w.split.new_items) {
    for (bool with_users : {false, true}) {
      std::vector<std::size_t> users;
      if (with_users && f.warm_index.indexed(item)) users = f.warm_index.users_of(item);
      const GenerationContext ctx = with_users ? f.warm(f.w.backbone) : f.cold();
      const Tensor full = meta_embedding(ctx, InitializerKind::cometa, item, users, rng);
      const Tensor base = meta_embedding(ctx, InitializerKind::cometa_no_seg, item, users, rng);
      const Tensor shift = meta_parts(ctx, InitializerKind::cometa, item, users).v_seg;
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(full[c] - base[c], shift[c], 1e-12);
    }
  }
}

TEST(MetaEmbedding, GlobalAverageIgnoresItem) {
  const GeneratorFixture f;
  std::mt19937_64 rng(0);
  const Tensor a = meta_embedding(f.cold(), InitializerKind::global_average, f.w.split.new_items[0], {}, rng);
  const Tensor b = meta_embedding(f.cold(), InitializerKind::global_average, f.w.split.new_items[1], {}, rng);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, f.averages.item);
}

TEST(MetaEmbedding, MissingGeneratorIsAnError) {
  const GeneratorFixture f;
  GenerationContext ctx = f.cold();
  ctx.seg = nullptr;
  std::mt19937_64 rng(0);
  EXPECT_THROW(meta_embedding(ctx, InitializerKind::cometa, f.w.split.new_items[0], {}, rng), Error);
  EXPECT_NO_THROW(meta_embedding(ctx, InitializerKind::cometa_no_seg, f.w.split.new_items[0], {}, rng));
}

TEST(InitializeCold, TouchesOnlyNewItemRows) {
  const GeneratorFixture f;
  for (InitializerKind kind : kAllKinds) {
    const model::ModelParams p = initialize_cold(f.w.backbone, f.cold(), kind, f.w.split.new_items, 5);
    EXPECT_EQ(model::hash_non_item_params(p), model::hash_non_item_params(f.w.backbone)) << to_string(kind);
    for (std::size_t i : f.w.split.old_items) EXPECT_TRUE(rows_equal(p.item_id, f.w.backbone.item_id, i));
    EXPECT_EQ(initialize_cold(f.w.backbone, f.cold(), kind, f.w.split.new_items, 5), p) << to_string(kind);
  }
}

TEST(InitializeCold, RandomRowsFollowSeed) {
  const GeneratorFixture f;
  const auto a = initialize_cold(f.w.backbone, f.cold(), InitializerKind::random, f.w.split.new_items, 5);
  const auto b = initialize_cold(f.w.backbone, f.cold(), InitializerKind::random, f.w.split.new_items, 6);
  EXPECT_NE(a.item_id, b.item_id);
  for (std::size_t i : f.w.split.new_items)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_LE(std::abs(a.item_id(i, c)), model::ModelParams::kEmbeddingInit);
}

TEST(RegenerateWarm, ItemWithoutWarmUsersKeepsColdRow) {
  const GeneratorFixture f;
  const model::ModelParams cold =
      initialize_cold(f.w.backbone, f.cold(), InitializerKind::cometa, f.w.split.new_items, 5);
  // An index without any new-item records: every row stays.
  const GenerationContext ctx{cold, f.w.log, f.index, f.candidates, f.averages, &f.seg_params, 3, {}};
  EXPECT_EQ(regenerate_warm(cold, ctx, InitializerKind::cometa, f.w.split.new_items), cold);
}

TEST(RegenerateWarm, ChangesOnlyNewRows) {
  const GeneratorFixture f;
  const model::ModelParams cold =
      initialize_cold(f.w.backbone, f.cold(), InitializerKind::cometa, f.w.split.new_items, 5);
  const model::ModelParams warm = regenerate_warm(cold, f.warm(cold), InitializerKind::cometa, f.w.split.new_items);
  EXPECT_EQ(model::hash_non_item_params(warm), model::hash_non_item_params(cold));
  for (std::size_t i : f.w.split.old_items) EXPECT_TRUE(rows_equal(warm.item_id, cold.item_id, i));
  EXPECT_NE(warm.item_id, cold.item_id);
}

TEST(RegenerateWarm, MatchingUsersCopyThatNeighbor) {
  // Old items 0 (users 0, 1) and 1 (users 2, 3); new item 2 is seen by users 0 and 1.
  data::InteractionLog log;
  for (int u = 0; u < 4; ++u) log.users.encode("u" + std::to_string(u));
  for (int i = 0; i < 3; ++i) log.items.encode("i" + std::to_string(i));
  log.records = {{0, 0, 1, 0}, {1, 0, 1, 0}, {2, 1, 1, 0}, {3, 1, 1, 0}, {0, 2, 1, 1}, {1, 2, 1, 1}};
  const std::vector<std::size_t> old_records{0, 1, 2, 3}, warm_records{4, 5}, old_items{0, 1}, new_items{2};
  const auto index = beg::CooccurrenceIndex::build(log, old_records, true);
  const auto warm_index = index.extended(log, warm_records);
  const model::ModelParams p = model::ModelParams::init(model::schema_for(log, 3, {4}), 1);
  const beg::CandidateSet candidates(old_items);
  const model::GlobalAverages averages = model::global_averages(p, old_items);
  const GenerationContext ctx{p, log, warm_index, candidates, averages, nullptr, 8, {}};

  const auto nl = beg::top_k_neighbors(warm_index, 2, old_items, 8);
  ASSERT_EQ(nl.entries.size(), 1u);
  EXPECT_EQ(nl.entries[0].alpha, 1.0);
  const model::ModelParams out = regenerate_warm(p, ctx, InitializerKind::cometa_no_seg, new_items);
  EXPECT_TRUE(bitwise_equal(out.item_id.row_at(2), p.item_id.row_at(0)));
}
