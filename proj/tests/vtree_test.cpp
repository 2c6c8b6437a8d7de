#include <gtest/gtest.h>

#include <random>
#include <set>

#include "fixtures.hpp"
#include "geom/vtree.hpp"

using namespace geom;
using namespace geom::testing;

namespace {

std::set<Address> backed_set(const VirtualSpace& vs) {
  std::set<Address> out;
  for (const auto& leaf : vs.tree().leaves()) {
    for (Address a = leaf.base(); a < leaf.end(); ++a) out.insert(a);
  }
  return out;
}

bool full(const VirtualSpace& vs, int level, Address base) {
  const Node* n = vs.tree().find(blk(level, base));
  return n != nullptr && n->full;
}

// Full bits recomputed from the backed set.
void expect_full_bits_sound(const VirtualSpace& vs) {
  const auto backed = backed_set(vs);
  const auto& cfg = vs.tree().config();
  for (int l = cfg.min_level; l <= cfg.height_bits; ++l) {
    for (const auto& [idx, node] : vs.tree().level(l)) {
      const BlockId id{l, idx};
      bool all = true;
      for (Address a = id.base(); a < id.end() && all; ++a) all = backed.count(a) != 0;
      EXPECT_EQ(node.full, all) << "L" << l << "@" << hex(id.base());
    }
  }
}

}  // namespace

TEST(Doubling, EightNineElevenThirteen) {
  SpaceManager mgr(sixteen_bytes());
  mgr.set_paranoid(true);
  const auto h = mgr.create_space(PopulationStrategy::doubling(), 16);
  EXPECT_EQ(mgr.backed_bytes(h), 0u);
  EXPECT_TRUE(mgr.space(h).tree().empty());

  mgr.access(h, 8);
  const auto& vs = mgr.space(h);
  EXPECT_EQ(backed_set(vs), (std::set<Address>{8}));
  for (auto [l, b] : {std::pair{4, 0x0}, {3, 0x8}, {2, 0x8}, {1, 0x8}}) {
    ASSERT_TRUE(vs.tree().contains(blk(l, b)));
    EXPECT_FALSE(full(vs, l, b));
  }
  EXPECT_TRUE(full(vs, 0, 8));

  mgr.access(h, 9);
  EXPECT_EQ(backed_set(vs), (std::set<Address>{8, 9}));
  EXPECT_TRUE(full(vs, 1, 8));
  EXPECT_FALSE(full(vs, 2, 8));

  const auto r = mgr.access(h, 0xB);
  EXPECT_EQ(backed_set(vs), (std::set<Address>{8, 9, 0xA, 0xB}));
  EXPECT_TRUE(vs.tree().find(blk(1, 0xA))->leaf);
  EXPECT_EQ(r.level, 1);
  EXPECT_EQ(r.offset_in_block, 1u);
  EXPECT_TRUE(full(vs, 2, 8));
  EXPECT_EQ(mgr.backed_bytes(h), 4u);

  mgr.access(h, 0xD);
  EXPECT_TRUE(vs.tree().find(blk(2, 0xC))->leaf);
  EXPECT_EQ(mgr.backed_bytes(h), 8u);
  EXPECT_TRUE(full(vs, 3, 8));
  expect_full_bits_sound(vs);
  // Conservation: the real allocator holds exactly the backed bytes.
  EXPECT_EQ(mgr.rtree().stats().bytes_allocated, 8u);
}

TEST(Doubling, BackedSizeDoublesPerStep) {
  const GeometryConfig cfg{10, 0, 2};
  SpaceManager mgr(cfg);
  const auto h = mgr.create_space(PopulationStrategy::doubling(), 0);
  mgr.access(h, 0);
  mgr.access(h, 1);
  for (int k = 2; k <= cfg.height_bits; ++k) {
    mgr.access(h, (Address{1} << (k - 1)));
    EXPECT_EQ(mgr.backed_bytes(h), Address{1} << k) << "step " << k;
  }
}

TEST(Translate, StatusCodes) {
  SpaceManager mgr(sixteen_bytes());
  const auto h = mgr.create_space(PopulationStrategy::doubling(), 16);
  for (Address y : {8, 9, 0xB}) mgr.access(h, y);
  const auto t = mgr.translate(h, 0xB);
  ASSERT_TRUE(t.ok());
  EXPECT_EQ(t.result.level, 1);
  EXPECT_EQ(t.result.offset_in_block, 1u);
  EXPECT_EQ(mgr.translate(h, 5).status, TranslateStatus::unbacked);
  EXPECT_EQ(mgr.translate(h, 16).status, TranslateStatus::out_of_bounds);
  // translate never mutates
  EXPECT_EQ(mgr.backed_bytes(h), 4u);
}

TEST(FixedLedged, ElevenBytes) {
  SpaceManager mgr(sixteen_bytes());
  mgr.set_paranoid(true);
  const auto h = mgr.create_space(PopulationStrategy::fixed_ledged(11), 11);
  const auto& vs = mgr.space(h);
  EXPECT_EQ(vs.tree().leaves(), (std::vector<BlockId>{blk(3, 0), blk(1, 8), blk(0, 0xA)}));
  EXPECT_EQ(mgr.backed_bytes(h), 11u);
  EXPECT_LE(vs.tree().node_count(), 8u);
  EXPECT_EQ(mgr.translate(h, 11).status, TranslateStatus::out_of_bounds);
  EXPECT_TRUE(mgr.translate(h, 10).ok());
  try {
    mgr.access(h, 11);
    FAIL();
  } catch (const GeomError& e) {
    EXPECT_EQ(e.code(), Errc::trap);
  }
  EXPECT_EQ(mgr.backed_bytes(h), 11u);
  EXPECT_EQ(mgr.rtree().stats().bytes_allocated, 11u);
}

TEST(FixedLedged, WholeSpaceIsOneLeaf) {
  SpaceManager mgr(sixteen_bytes());
  const auto h = mgr.create_space(PopulationStrategy::fixed_ledged(16), 16);
  EXPECT_EQ(mgr.space(h).tree().leaves(), (std::vector<BlockId>{blk(4, 0)}));
}

TEST(FixedLedged, CreationFailureReleasesPartialBackings) {
  SpaceManager mgr(sixteen_bytes());
  mgr.rtree().claim_block(blk(2, 0));
  const std::string before = mgr.rtree().tree().serialize();
  try {
    mgr.create_space(PopulationStrategy::fixed_ledged(14), 14);  // needs 8 + 4 + 2 of 12 free
    FAIL();
  } catch (const GeomError& e) {
    EXPECT_EQ(e.code(), Errc::backing_failure);
  }
  EXPECT_EQ(mgr.rtree().tree().serialize(), before);
  EXPECT_TRUE(mgr.spaces().empty());
}

TEST(Paging, BacksWholePagesWithoutDoubling) {
  SpaceManager mgr(GeometryConfig{8, 0, 2});
  const auto h = mgr.create_space(PopulationStrategy::fixed_paging(4), 0);
  mgr.access(h, 0x23);
  mgr.access(h, 0x24);
  EXPECT_EQ(mgr.backed_bytes(h), 16u);
  mgr.access(h, 0x35);  // sibling page full, still one page
  EXPECT_EQ(mgr.backed_bytes(h), 32u);
  EXPECT_EQ(mgr.space(h).tree().leaves(), (std::vector<BlockId>{blk(4, 0x20), blk(4, 0x30)}));
}

TEST(Destroy, RestoresRealTree) {
  SpaceManager mgr(sixteen_bytes());
  mgr.rtree().alloc_block(1);
  const std::string before = mgr.rtree().tree().serialize();
  const auto h = mgr.create_space(PopulationStrategy::fixed_ledged(11), 11);
  EXPECT_NE(mgr.rtree().tree().serialize(), before);
  mgr.destroy_space(h);
  EXPECT_EQ(mgr.rtree().tree().serialize(), before);
  try {
    mgr.destroy_space(h);
    FAIL();
  } catch (const GeomError& e) {
    EXPECT_EQ(e.code(), Errc::invalid_handle);
  }
  const auto empty = mgr.create_space(PopulationStrategy::doubling(), 16);
  mgr.destroy_space(empty);
  EXPECT_EQ(mgr.rtree().tree().serialize(), before);
}

TEST(Access, ExhaustionLeavesSpaceUnchanged) {
  SpaceManager mgr(sixteen_bytes());
  const auto h = mgr.create_space(PopulationStrategy::doubling(), 16);
  mgr.access(h, 0);
  mgr.access(h, 1);
  mgr.rtree().alloc_block(3);
  mgr.rtree().alloc_block(2);
  mgr.rtree().alloc_block(1);  // real memory now full
  const std::string before = mgr.space(h).tree().serialize();
  try {
    mgr.access(h, 2);  // doubling wants level-1 block 2-3
    FAIL();
  } catch (const GeomError& e) {
    EXPECT_EQ(e.code(), Errc::backing_failure);
  }
  EXPECT_EQ(mgr.space(h).tree().serialize(), before);
}

TEST(Isolation, AccessesDoNotDisturbOtherSpaces) {
  const GeometryConfig cfg{12, 0, 2};
  SpaceManager mgr(cfg);
  std::mt19937_64 rng(8);
  const auto a = mgr.create_space(PopulationStrategy::doubling(), 0);
  const auto b = mgr.create_space(PopulationStrategy::fixed_paging(3), 0);
  std::set<Address> real_a;
  for (int i = 0; i < 300; ++i) {
    const auto target = (rng() & 1) ? a : b;
    const auto other = target == a ? b : a;
    const std::string snap = mgr.space(other).tree().serialize();
    try {
      mgr.access(target, rng() % 2048);
    } catch (const GeomError& e) {
      ASSERT_EQ(e.code(), Errc::backing_failure);
    }
    ASSERT_EQ(mgr.space(other).tree().serialize(), snap);
  }
  // Backings are disjoint.
  std::set<Address> seen;
  for (const auto h : {a, b}) {
    const auto& vt = mgr.space(h).tree();
    for (const auto& leaf : vt.leaves()) {
      const Address base = *vt.find(leaf)->backing;
      for (Address x = base; x < base + leaf.size(); ++x) ASSERT_TRUE(seen.insert(x).second);
    }
  }
  EXPECT_EQ(seen.size(), mgr.rtree().stats().bytes_allocated);
  expect_full_bits_sound(mgr.space(a));
}

TEST(Serialization, VirtualTreeRoundTrip) {
  SpaceManager mgr(sixteen_bytes());
  const auto h = mgr.create_space(PopulationStrategy::doubling(), 16);
  for (Address y : {8, 9, 0xB}) mgr.access(h, y);
  const auto& vt = mgr.space(h).tree();
  const auto text = vt.serialize();
  EXPECT_NE(text.find("full=1 back="), std::string::npos);
  EXPECT_EQ(BlockTree::deserialize(text), vt);
}
