#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "geom/core.hpp"

namespace geom {

// Text rendering in the spirit of the block-tree figures, one row per level:
//
//   tree n=4 m=0 w=2 real
//   L4 (0-F int [0,1,1,0])
//   L3 (0-7 int [0,1,0]) (8-F int [1,0,0])
//   L2 (0-3 leaf [0,0]) (4-7 int [1,0]) - 8-B - (C-F leaf [0,0])
//   L1 (4-5 leaf [0]) - 6-7 -
//   bytes |xxxxxx------xxxx|
//
// Present nodes are parenthesised, niches are dashed. Real trees annotate
// nodes with their niche map; virtual trees with "full=<0|1>" and, on
// leaves, "back=<hex>". The byte row ('x' allocated, 'b' backed, '-' free)
// is emitted only for spaces of at most 256 bytes. Rows for levels without
// nodes or niches are omitted.

struct Annotation {
  NicheMap map;
  std::optional<bool> full;
  std::optional<Address> backing;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct RenderedNode {
  bool leaf = false;
  Annotation annotation;

  friend bool operator==(const RenderedNode&, const RenderedNode&) = default;
};

/// Semantic content of a rendering.
struct RenderedTree {
  GeometryConfig config;
  TreeKind kind = TreeKind::real;
  std::map<BlockId, RenderedNode> nodes;
  std::set<BlockId> niches;
  std::string bytes;  // empty when the byte row is omitted

  friend bool operator==(const RenderedTree&, const RenderedTree&) = default;
};

std::string render_tree(const BlockTree& tree);

/// Inverse of render_tree on (nodes, niches, annotations, byte row).
RenderedTree parse_rendering(std::string_view text);

/// The content render_tree is expected to show, computed from the tree directly.
RenderedTree describe(const BlockTree& tree);

}  // namespace geom
