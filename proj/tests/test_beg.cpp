#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "cometa/beg.hpp"
#include "support/oracles.hpp"

using namespace cometa;
using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

TEST(CooccurrenceIndex, SingleInteraction) {
  const Pairs p{{3, 7}};
  const auto idx = beg::CooccurrenceIndex::from_pairs(p);
  EXPECT_EQ(idx.users_of(7), (std::vector<std::size_t>{3}));
  EXPECT_EQ(idx.items_of(3), (std::vector<std::size_t>{7}));
  EXPECT_TRUE(idx.items_of(4).empty());
  EXPECT_THROW(idx.users_of(8), IndexError);
}

TEST(CooccurrenceIndex, DuplicatesCollapse) {
  const Pairs p{{1, 2}, {1, 2}};
  EXPECT_EQ(beg::CooccurrenceIndex::from_pairs(p).users_of(2).size(), 1u);
}

TEST(CooccurrenceIndex, FullBipartite) {
  Pairs p;
  for (std::size_t u = 0; u < 3; ++u)
    for (std::size_t i = 0; i < 3; ++i) p.emplace_back(u, i);
  const auto idx = beg::CooccurrenceIndex::from_pairs(p);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(idx.users_of(k).size(), 3u);
    EXPECT_EQ(idx.items_of(k).size(), 3u);
  }
}

TEST(CooccurrenceIndex, PositiveOnlySkipsNegatives) {
  data::InteractionLog log;
  for (int u = 0; u < 2; ++u) log.users.encode("u" + std::to_string(u));
  log.items.encode("i");
  log.records = {{0, 0, 1, 0}, {1, 0, 0, 0}};
  const std::vector<std::size_t> recs{0, 1};
  EXPECT_EQ(beg::CooccurrenceIndex::build(log, recs, true).users_of(0).size(), 1u);
  EXPECT_EQ(beg::CooccurrenceIndex::build(log, recs, false).users_of(0).size(), 2u);
  const auto idx = beg::CooccurrenceIndex::build(log, std::span(recs).first(1), true);
  EXPECT_EQ(idx.users_in(log, recs, 0), (std::vector<std::size_t>{0}));
  const std::vector<std::size_t> second{1};
  EXPECT_EQ(idx.extended(log, second).users_of(0).size(), 1u);
}

TEST(Similarity, DisjointUsersGiveZero) {
  const Pairs p{{0, 0}, {1, 1}};
  EXPECT_EQ(beg::similarity(beg::CooccurrenceIndex::from_pairs(p), 0, 1), 0.0);
}

TEST(Similarity, HandFixture) {
  // a -> {i, j}, b -> {i}
  const Pairs p{{0, 0}, {0, 1}, {1, 0}};
  const auto idx = beg::CooccurrenceIndex::from_pairs(p);
  const double expected = (1.0 / std::log(3.0)) / std::sqrt(2.0);
  EXPECT_NEAR(beg::similarity(idx, 0, 1), expected, 1e-15);
  EXPECT_NEAR(beg::similarity(idx, 0, 1), 0.6436, 5e-5);
  EXPECT_EQ(beg::similarity(idx, 0, 1), beg::similarity(idx, 1, 0));
}

TEST(Similarity, MatchesBruteForceOnRandomGraphs) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<std::size_t> n(1, 20), edges(1, 80);
    const std::size_t users = n(rng), items = n(rng);
    std::uniform_int_distribution<std::size_t> pu(0, users - 1), pi(0, items - 1);
    Pairs p;
    for (std::size_t e = edges(rng); e > 0; --e) p.emplace_back(pu(rng), pi(rng));
    const auto idx = beg::CooccurrenceIndex::from_pairs(p);
    for (std::size_t i = 0; i < items; ++i)
      for (std::size_t j = 0; j < items; ++j)
        if (i != j && idx.indexed(i) && idx.indexed(j)) {
          ASSERT_NEAR(beg::similarity(idx, i, j), oracle::brute_force_similarity(p, i, j), 1e-12);
        }
  }
}

TEST(Similarity, LogBaseDoesNotChangeRanking) {
  const Pairs p{{0, 0}, {0, 1}, {1, 0}, {1, 2}, {2, 0}, {2, 1}, {2, 3}, {3, 3}, {3, 0}};
  const auto idx = beg::CooccurrenceIndex::from_pairs(p);
  const std::vector<std::size_t> candidates{1, 2, 3};
  const auto natural = beg::top_k_neighbors(idx, 0, candidates, 3);
  const auto base2 = beg::top_k_neighbors(idx, 0, candidates, 3, {.log_base = 2.0});
  ASSERT_EQ(natural.entries.size(), base2.entries.size());
  for (std::size_t k = 0; k < natural.entries.size(); ++k) {
    EXPECT_EQ(natural.entries[k].item, base2.entries[k].item);
    EXPECT_NEAR(natural.entries[k].alpha, base2.entries[k].alpha, 1e-15);
    EXPECT_NEAR(base2.entries[k].sim, natural.entries[k].sim * std::log(2.0), 1e-15);
  }
}

TEST(TopK, SingleNeighborHasUnitWeight) {
  const Pairs p{{0, 0}, {0, 1}, {1, 2}};
  const std::vector<std::size_t> candidates{1, 2};
  const auto nl = beg::top_k_neighbors(beg::CooccurrenceIndex::from_pairs(p), 0, candidates, 5);
  ASSERT_EQ(nl.entries.size(), 1u);
  EXPECT_EQ(nl.entries[0].item, 1u);
  EXPECT_EQ(nl.entries[0].alpha, 1.0);
}

TEST(TopK, TruncatesSortsAndExcludesSelf) {
  // Item 0 shares users with 1, 2, 3 in decreasing amounts; 4 is disjoint.
  const Pairs p{{0, 0}, {1, 0}, {2, 0}, {0, 1}, {1, 1}, {2, 1}, {0, 2}, {1, 2}, {0, 3}, {5, 4}};
  const auto idx = beg::CooccurrenceIndex::from_pairs(p);
  const std::vector<std::size_t> candidates{0, 1, 2, 3, 4};
  const auto all = beg::top_k_neighbors(idx, 0, candidates, 10);
  ASSERT_EQ(all.entries.size(), 3u);  // self and the zero-similarity item are dropped
  EXPECT_EQ(all.entries[0].item, 1u);
  for (std::size_t k = 1; k < all.entries.size(); ++k) EXPECT_GE(all.entries[k - 1].sim, all.entries[k].sim);
  double total = 0.0;
  for (const auto& n : all.entries) total += n.alpha;
  EXPECT_NEAR(total, 1.0, 1e-15);
  EXPECT_EQ(beg::top_k_neighbors(idx, 0, candidates, 2).entries.size(), 2u);
}

TEST(TopK, TiesBrokenByAscendingId) {
  const Pairs p{{0, 0}, {0, 5}, {0, 3}};
  const std::vector<std::size_t> candidates{3, 5};
  const auto nl = beg::top_k_neighbors(beg::CooccurrenceIndex::from_pairs(p), 0, candidates, 1);
  ASSERT_EQ(nl.entries.size(), 1u);
  EXPECT_EQ(nl.entries[0].item, 3u);
}

TEST(TopK, QueryUsersAgreeWithIndexedSimilarity) {
  const Pairs p{{0, 0}, {0, 1}, {1, 0}, {1, 2}, {2, 2}, {2, 1}};
  const auto idx = beg::CooccurrenceIndex::from_pairs(p);
  const std::vector<std::size_t> candidates{1, 2};
  const auto nl = beg::top_k_neighbors(idx, 0, candidates, 4);
  for (const auto& n : nl.entries) EXPECT_EQ(n.sim, beg::similarity(idx, 0, n.item));
}

TEST(TopK, NoUsersGivesEmptyList) {
  const Pairs p{{0, 0}};
  const std::vector<std::size_t> candidates{0};
  EXPECT_TRUE(beg::neighbors_for_users(beg::CooccurrenceIndex::from_pairs(p), 9, {}, beg::CandidateSet(candidates), 3)
                  .entries.empty());
}

TEST(BaseEmbedding, WeightedRows) {
  const Tensor table(3, 2, {9.0, 9.0, 1.0, 0.0, 0.0, 1.0});
  beg::NeighborList nl{0, {{1, 0.2, 0.25}, {2, 0.6, 0.75}}};
  EXPECT_EQ(*beg::base_embedding(nl, table), Tensor::row({0.25, 0.75}));
  nl.entries = {{2, 0.6, 1.0}};
  EXPECT_EQ(*beg::base_embedding(nl, table), table.row_at(2));
  nl.entries.clear();
  EXPECT_FALSE(beg::base_embedding(nl, table).has_value());
}

TEST(TopK, WeightsAreNormalizedOracleSimilarities) {
  const Pairs p{{0, 0}, {0, 1}, {1, 0}, {1, 1}, {2, 0}, {2, 2}, {3, 2}, {3, 3}, {4, 0}, {4, 3}};
  const auto idx = beg::CooccurrenceIndex::from_pairs(p);
  const std::vector<std::size_t> candidates{1, 2, 3};
  const auto nl = beg::top_k_neighbors(idx, 0, candidates, 3);
  ASSERT_EQ(nl.entries.size(), 3u);
  double norm = 0.0;
  for (std::size_t j : candidates) norm += oracle::brute_force_similarity(p, 0, j);
  for (const auto& n : nl.entries) EXPECT_NEAR(n.alpha, oracle::brute_force_similarity(p, 0, n.item) / norm, 1e-15);
}

TEST(BaseEmbedding, EqualRowsGiveThatRow) {
  const Tensor table(3, 2, {0.3, -0.7, 0.3, -0.7, 0.3, -0.7});
  const beg::NeighborList nl{0, {{0, 0.1, 0.1}, {1, 0.5, 0.5}, {2, 0.4, 0.4}}};
  const Tensor v = *beg::base_embedding(nl, table);
  EXPECT_NEAR(v[0], 0.3, 1e-15);
  EXPECT_NEAR(v[1], -0.7, 1e-15);
}

TEST(Dump, OneLinePerItem) {
  data::Vocabulary items;
  for (const char* s : {"a", "b", "c"}) items.encode(s);
  const std::vector<beg::NeighborList> lists{{0, {{1, 0.5, 1.0}}}, {2, {}}};
  EXPECT_EQ(beg::dump(lists, items), "a\tb:0.5:1\nc\t\n");
}
