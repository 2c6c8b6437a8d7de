#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "geom/rtree.hpp"

using namespace geom;
using namespace geom::testing;

namespace {

std::vector<std::pair<Address, Address>> sizes_offsets(const LedgePlan& p) {
  std::vector<std::pair<Address, Address>> out;
  for (const auto& piece : p.pieces) out.emplace_back(piece.size(), piece.offset);
  return out;
}

using SO = std::vector<std::pair<Address, Address>>;

}  // namespace

TEST(Ledge, ElevenBytes) {
  const auto p = ledge_decompose(11, sixteen_bytes());
  EXPECT_EQ(sizes_offsets(p), (SO{{8, 0}, {2, 8}, {1, 10}}));
  EXPECT_EQ(p.total(), 11u);
  EXPECT_EQ(p.enclosing_level(), 4);
}

TEST(Ledge, ExactPowerOfTwo) {
  EXPECT_EQ(sizes_offsets(ledge_decompose(16, sixteen_bytes())), (SO{{16, 0}}));
}

TEST(Ledge, ThirteenBytes) {
  EXPECT_EQ(sizes_offsets(ledge_decompose(13, sixteen_bytes())), (SO{{8, 0}, {4, 8}, {1, 12}}));
}

TEST(Ledge, RoundsToMinimumChunk) {
  const auto p = ledge_decompose(11, GeometryConfig{8, 2, 2});
  EXPECT_EQ(p.rounded_size, 12u);
  EXPECT_EQ(sizes_offsets(p), (SO{{8, 0}, {4, 8}}));
}

TEST(Ledge, Errors) {
  for (auto [size, code] : {std::pair{Address{0}, Errc::invalid_size},
                            std::pair{Address{17}, Errc::too_large}}) {
    try {
      ledge_decompose(size, sixteen_bytes());
      FAIL() << size;
    } catch (const GeomError& e) {
      EXPECT_EQ(e.code(), code);
    }
  }
}

TEST(Ledge, BoundedPiecesRoundTheTail) {
  // 11 = 1011b; two pieces: 8 and the tail 3 rounded to 4.
  EXPECT_EQ(sizes_offsets(ledge_decompose(11, sixteen_bytes(), 2)), (SO{{8, 0}, {4, 8}}));
  // 15 with two pieces: tail 7 rounds to 8, which carries into a single 16.
  EXPECT_EQ(sizes_offsets(ledge_decompose(15, sixteen_bytes(), 2)), (SO{{16, 0}}));
  EXPECT_EQ(sizes_offsets(ledge_decompose(11, sixteen_bytes(), 1)), (SO{{16, 0}}));
}

TEST(Ledge, BoundedPlansRespectTheBound) {
  const GeometryConfig cfg{12, 1, 2};
  for (int k = 1; k <= 4; ++k) {
    for (Address size = 1; size <= cfg.space_size(); ++size) {
      const auto p = ledge_decompose(size, cfg, k);
      ASSERT_LE(p.pieces.size(), static_cast<std::size_t>(k));
      ASSERT_GE(p.total(), p.rounded_size);
      ASSERT_LE(p.total(), cfg.space_size());
      Address offset = 0;
      for (std::size_t i = 0; i < p.pieces.size(); ++i) {
        ASSERT_EQ(p.pieces[i].offset, offset);
        ASSERT_GE(p.pieces[i].level, cfg.min_level);
        if (i) {
          ASSERT_LT(p.pieces[i].level, p.pieces[i - 1].level);
        }
        offset += p.pieces[i].size();
      }
    }
  }
}

TEST(Ledge, PlacementKeepsPiecesAligned) {
  const auto p = ledge_decompose(11, sixteen_bytes());
  EXPECT_EQ(place_plan(p, 0, ChunkLayout::ascending),
            (std::vector<BlockId>{blk(3, 0), blk(1, 8), blk(0, 0xA)}));
  // Packed against the top of the space: 5..F with the largest piece last.
  EXPECT_EQ(place_plan(p, 5, ChunkLayout::mirrored),
            (std::vector<BlockId>{blk(3, 8), blk(1, 6), blk(0, 5)}));
  EXPECT_THROW(place_plan(p, 4, ChunkLayout::ascending), GeomError);
}

TEST(CeilLog2, Values) {
  EXPECT_EQ(ceil_log2(1), 0);
  EXPECT_EQ(ceil_log2(2), 1);
  EXPECT_EQ(ceil_log2(3), 2);
  EXPECT_EQ(ceil_log2(1024), 10);
  EXPECT_EQ(ceil_log2(1025), 11);
}
