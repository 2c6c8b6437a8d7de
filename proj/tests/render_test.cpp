#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "geom/render.hpp"
#include "geom/vtree.hpp"

using namespace geom;
using namespace geom::testing;

TEST(Render, PristineSpaceIsOneNiche) {
  BlockTree t(sixteen_bytes());
  EXPECT_EQ(render_tree(t),
            "tree n=4 m=0 w=2 real\n"
            "L4 - 0-F -\n"
            "bytes |----------------|\n");
  const auto parsed = parse_rendering(render_tree(t));
  EXPECT_TRUE(parsed.nodes.empty());
  EXPECT_EQ(parsed.niches, (std::set<BlockId>{BlockId{4, 0}}));
}

TEST(Render, NicheFigure) {
  const auto a = niche_figure();
  const std::string text = render_tree(a.tree());
  EXPECT_EQ(text,
            "tree n=4 m=0 w=2 real\n"
            "L4 (0-F int [0,1,1,0])\n"
            "L3 (0-7 int [0,1,0]) (8-F int [1,0,0])\n"
            "L2 (0-3 leaf [0,0]) (4-7 int [1,0]) - 8-B - (C-F leaf [0,0])\n"
            "L1 (4-5 leaf [0]) - 6-7 -\n"
            "bytes |xxxxxx------xxxx|\n");
  const auto parsed = parse_rendering(text);
  EXPECT_EQ(parsed.niches, (std::set<BlockId>{blk(1, 6), blk(2, 8)}));
  EXPECT_EQ(parsed.nodes.at(blk(2, 4)).annotation.map, (NicheMap{1, 0}));
  EXPECT_EQ(parsed.nodes.at(blk(4, 0)).annotation.map, (NicheMap{0, 1, 1, 0}));
  EXPECT_TRUE(parsed.nodes.at(blk(1, 4)).leaf);
}

TEST(Render, RoundTripOnRandomTrees) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const GeometryConfig cfg{static_cast<int>(4 + rng() % 7), static_cast<int>(rng() % 2),
                             1 + static_cast<int>(rng() % 3)};
    const auto a = random_tree(cfg, rng, 40);
    ASSERT_EQ(parse_rendering(render_tree(a.tree())), describe(a.tree()))
        << render_tree(a.tree());
  }
}

TEST(Render, VirtualTreeShowsFullAndBacking) {
  SpaceManager mgr(sixteen_bytes());
  const auto h = mgr.create_space(PopulationStrategy::doubling(), 16);
  mgr.access(h, 8);
  mgr.access(h, 9);
  const BlockTree& vt = mgr.space(h).tree();
  const auto parsed = parse_rendering(render_tree(vt));
  EXPECT_EQ(parsed, describe(vt));
  EXPECT_EQ(parsed.kind, TreeKind::virtual_space);
  EXPECT_EQ(parsed.nodes.at(blk(1, 8)).annotation.full, true);
  EXPECT_EQ(parsed.nodes.at(blk(2, 8)).annotation.full, false);
  EXPECT_TRUE(parsed.nodes.at(blk(0, 9)).annotation.backing.has_value());
  EXPECT_EQ(parsed.bytes, "--------bb------");
}

TEST(Render, ParseRejectsGarbage) {
  EXPECT_THROW(parse_rendering("not a tree\n"), GeomError);
  EXPECT_THROW(parse_rendering("tree n=4 m=0 w=2 real\nL4 (0-F int [0,1\n"), GeomError);
}
