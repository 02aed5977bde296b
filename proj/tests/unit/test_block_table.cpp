// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "kvfuse/block_table.hpp"
#include "kvfuse/error.hpp"
#include "kvfuse/fusion.hpp"
#include "kvfuse/layer_view.hpp"
#include "kvfuse/rng.hpp"
#include "kvfuse/unfold.hpp"
#include "support/random_cache.hpp"

namespace kvfuse {
namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an exception";
  return ErrorKind::kIo;
}

TEST(BlockTable, IdentityIsConsistent) {
  const BlockTable t = BlockTable::identity(3, {2, 3, 1});
  EXPECT_EQ(t.layer(), 3u);
  EXPECT_EQ(t.rows(), 3u);
  EXPECT_EQ(t.slot_count(), 6u);
  EXPECT_EQ(t.live_count(), 6u);
  EXPECT_EQ(t.slot(1, 2), 4u);
  for (std::size_t s = 0; s < 6; ++s) {
    EXPECT_EQ(t.physical(s), s);
    EXPECT_EQ(t.refcount(static_cast<PhysicalId>(s)), 1u);
    EXPECT_FALSE(t.shared(s));
  }
  EXPECT_NO_THROW(t.audit());
}

TEST(BlockTable, AbsorbRedirectsAllMembers) {
  BlockTable t = BlockTable::identity(0, {2, 2});
  t.absorb(1, 3);
  t.absorb(0, 1);
  EXPECT_EQ(t.physical(1), 0u);
  EXPECT_EQ(t.physical(3), 0u);
  EXPECT_EQ(t.refcount(0), 3u);
  EXPECT_FALSE(t.live(1));
  EXPECT_FALSE(t.live(3));
  EXPECT_EQ(t.live_count(), 2u);
  EXPECT_TRUE(t.shared(0));
  EXPECT_TRUE(t.shared(1));
  EXPECT_FALSE(t.shared(2));
  EXPECT_EQ(t.members(0), (std::vector<std::size_t>{0, 1, 3}));
  EXPECT_NO_THROW(t.audit());
}

TEST(BlockTable, AbsorbRejectsDeadOrSelf) {
  BlockTable t = BlockTable::identity(0, {3});
  t.absorb(0, 1);
  EXPECT_EQ(kind_of([&] { t.absorb(0, 1); }), ErrorKind::kCorruption);
  EXPECT_EQ(kind_of([&] { t.absorb(1, 2); }), ErrorKind::kCorruption);
  EXPECT_EQ(kind_of([&] { t.absorb(2, 2); }), ErrorKind::kCorruption);
  EXPECT_EQ(kind_of([&] { t.absorb(0, 9); }), ErrorKind::kCorruption);
}

TEST(BlockTable, DanglingEntryIsCorruption) {
  EXPECT_EQ(kind_of([] { BlockTable(0, {2}, {0, 5}, 2); }), ErrorKind::kCorruption);
  EXPECT_EQ(kind_of([] { BlockTable(0, {2}, {0}, 2); }), ErrorKind::kCorruption);
}

TEST(BlockTable, ExplicitEntriesDeriveRefcounts) {
  const BlockTable t(0, {2, 2}, {0, 1, 0, 1}, 4);
  EXPECT_EQ(t.refcount(0), 2u);
  EXPECT_EQ(t.refcount(2), 0u);
  EXPECT_EQ(t.live_count(), 2u);
  EXPECT_TRUE(t.shared(2));
  EXPECT_NO_THROW(t.audit());
}

TEST(BlockTable, ReusableMarker) {
  BlockTable t = BlockTable::identity(0, {2});
  t.mark_reusable(0);
  EXPECT_TRUE(t.reusable(0));
  EXPECT_FALSE(t.reusable(1));
  t.absorb(1, 0);
  EXPECT_FALSE(t.reusable(0));
  EXPECT_NO_THROW(t.audit());
  EXPECT_EQ(kind_of([&] { t.mark_reusable(0); }), ErrorKind::kCorruption);
}

// Random absorb sequences keep every invariant and conserve logical slots.
TEST(BlockTable, AuditAfterRandomAbsorbSequences) {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> rows(1 + rng.below(6));
    for (auto& r : rows) r = 1 + rng.below(5);
    BlockTable t = BlockTable::identity(0, rows);
    const std::size_t slots = t.slot_count();
    for (int step = 0; step < 20 && t.live_count() > 1; ++step) {
      std::vector<PhysicalId> live;
      for (std::size_t i = 0; i < t.capacity(); ++i) {
        if (t.live(static_cast<PhysicalId>(i))) live.push_back(static_cast<PhysicalId>(i));
      }
      const PhysicalId a = live[rng.below(live.size())];
      PhysicalId b = a;
      while (b == a) b = live[rng.below(live.size())];
      t.absorb(a, b);
      ASSERT_NO_THROW(t.audit());
      std::size_t total = 0;
      for (std::size_t i = 0; i < t.capacity(); ++i) total += t.refcount(static_cast<PhysicalId>(i));
      ASSERT_EQ(total, slots);
      for (std::size_t s = 0; s < slots; ++s) ASSERT_TRUE(t.live(t.physical(s)));
    }
  }
}

TEST(Refold, MissingStorageIsCorruption) {
  const PagedKvCache cache = testing::random_cache({1, 2, 2, 1, 1, 4}, 5);
  const UnfoldedPair u = unfold_bff(cache, 0);
  PhysicalBlocks storage = PhysicalBlocks::from_unfolded(u.keys, u.values);
  BlockTable table = BlockTable::identity(0, u.keys.row_sizes());
  storage.evict(3);
  EXPECT_EQ(kind_of([&] { refold(u.keys, u.values, storage, table); }), ErrorKind::kCorruption);
  table.absorb(2, 3);
  EXPECT_NO_THROW(refold(u.keys, u.values, storage, table));
}

TEST(Refold, LayoutMismatchIsCorruption) {
  const PagedKvCache cache = testing::random_cache({1, 2, 2, 1, 1, 4}, 5);
  const UnfoldedPair u = unfold_bff(cache, 0);
  EXPECT_EQ(kind_of([&] { refold(u.keys, u.values, BlockTable::identity(0, {1, 3})); }),
            ErrorKind::kCorruption);
}

// Shared blocks are stored once and each logical slot keeps its own norm.
TEST(Refold, SharedBlockStoredOnceWithPerSlotNorms) {
  const CacheDims d{1, 2, 1, 1, 1, 2};
  const PagedKvCache cache(d, {1.0f, 1.0f, 3.0f, 3.0f}, {1.0f, 0.0f, 0.0f, 2.0f});
  const LayerFusion f = fast_fusion(unfold_bff(cache, 0).keys, unfold_bff(cache, 0).values, 0.9);
  EXPECT_EQ(f.table.live_count(), 1u);
  EXPECT_EQ(f.table.refcount(0), 2u);
  EXPECT_TRUE(f.table.shared(0));
  EXPECT_TRUE(f.table.shared(1));
  const LayerView v = f.view();
  EXPECT_EQ(v.stored_blocks(), 1u);
  EXPECT_EQ(v.store_index(0), v.store_index(1));
  std::vector<double> k0(2), k1(2);
  v.key_block(0, k0);
  v.key_block(1, k1);
  EXPECT_NEAR(k0[0], 1.0, 1e-12);
  EXPECT_NEAR(k1[0], 3.0, 1e-12);
  EXPECT_NEAR(k1[1], 3.0, 1e-12);
  // Values share the fused direction, rescaled by each slot's value norm.
  std::vector<double> v0(2), v1(2);
  v.value_block(0, v0);
  v.value_block(1, v1);
  EXPECT_NEAR(std::hypot(v0[0], v0[1]), 1.0, 1e-12);
  EXPECT_NEAR(std::hypot(v1[0], v1[1]), 2.0, 1e-12);
  EXPECT_NEAR(v0[0], v0[1], 1e-12);
}

}  // namespace
}  // namespace kvfuse
