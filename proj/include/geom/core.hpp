#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "geom/error.hpp"

namespace geom {

using Address = std::uint64_t;

/// Global parameters of every tree: the space covers 2^height_bits bytes,
/// the smallest block is 2^min_level bytes and niche-map counters saturate
/// at 2^counter_bits - 1.
struct GeometryConfig {
  int height_bits = 16;
  int min_level = 4;
  int counter_bits = 2;

  /// Throws GeomError(invalid_config) unless 0 <= m <= n <= 48 and 1 <= w <= 16.
  void validate() const;

  Address space_size() const { return Address{1} << height_bits; }
  std::uint32_t counter_max() const { return (std::uint32_t{1} << counter_bits) - 1; }
  /// Number of niche-map entries carried by a node at `level`.
  int map_length(int level) const { return level - min_level; }

  friend bool operator==(const GeometryConfig&, const GeometryConfig&) = default;
};

/// A geometrically aligned block: 2^level bytes starting at index * 2^level.
struct BlockId {
  int level = 0;
  std::uint64_t index = 0;

  Address size() const { return Address{1} << level; }
  Address base() const { return index << level; }
  Address end() const { return base() + size(); }
  bool contains(Address a) const { return a >= base() && a < end(); }
  bool contains(const BlockId& other) const {
    return other.level <= level && (other.index >> (level - other.level)) == index;
  }

  bool is_right() const { return (index & 1) != 0; }
  BlockId parent() const { return {level + 1, index >> 1}; }
  BlockId sibling() const { return {level, index ^ 1}; }
  BlockId child(bool right) const { return {level - 1, (index << 1) | (right ? 1 : 0)}; }

  static BlockId containing(Address a, int level) { return {level, a >> level}; }

  friend auto operator<=>(const BlockId&, const BlockId&) = default;
};

/// Saturating per-level niche counters. Entry i describes level (L - 1 - i)
/// for a node at level L, so the first entry is the level just below.
using NicheMap = std::vector<std::uint32_t>;

inline std::size_t map_slot(int node_level, int niche_level) {
  return static_cast<std::size_t>(node_level - 1 - niche_level);
}

enum class TreeKind { real, virtual_space };

struct Node {
  bool leaf = false;
  bool has_left = false;
  bool has_right = false;
  NicheMap map;
  // vtree payload
  bool full = false;
  std::optional<Address> backing;

  friend bool operator==(const Node&, const Node&) = default;
};

/// Parent map from optional child maps: pointwise saturating sum with one
/// entry prepended that is 1 iff exactly one child is missing. Both children
/// missing violates canonical coalescing and throws GeomError(structural).
NicheMap combine_niche_maps(const NicheMap* left, const NicheMap* right, int child_level,
                            const GeometryConfig& config);

/// Sparse binary tree over BlockIds with one ordered store per level.
///
/// Leaves are allocated (real) or backed (virtual) blocks. A missing child of
/// an existing interior node is a niche of the child's level, and an empty
/// tree is a single niche covering the whole space. Interior nodes never have
/// both children missing once a mutation has been completed and refreshed.
class BlockTree {
 public:
  using LevelStore = std::map<std::uint64_t, Node>;

  explicit BlockTree(GeometryConfig config, TreeKind kind = TreeKind::real);

  const GeometryConfig& config() const { return config_; }
  TreeKind kind() const { return kind_; }

  bool empty() const { return levels_[config_.height_bits].empty(); }
  BlockId root_id() const { return {config_.height_bits, 0}; }
  /// Root niche map; for the empty tree this is all zeros (the root itself is
  /// the niche and is not described by its own map).
  NicheMap root_map() const;

  const Node* find(const BlockId& id) const;
  Node* find(const BlockId& id);
  bool contains(const BlockId& id) const { return find(id) != nullptr; }
  const LevelStore& level(int l) const { return levels_.at(static_cast<std::size_t>(l)); }

  /// Inserts or replaces the node at `id`. Parent flags are not touched;
  /// call refresh or refresh_ancestors afterwards.
  Node& put(const BlockId& id, Node node);
  void erase(const BlockId& id);

  /// Recomputes child flags, niche map and full bit of the interior node at
  /// `id` from the children currently stored one level below.
  void refresh(const BlockId& id);
  /// Refreshes every existing ancestor of `id`, bottom-up.
  void refresh_ancestors(const BlockId& id);

  /// Leaf node with an all-zero map of the right length.
  Node make_leaf(int level) const;

  std::vector<BlockId> niches() const;
  std::vector<BlockId> leaves() const;
  std::size_t node_count() const;

  /// Checks every structural invariant (flags, sparseness, canonical
  /// coalescing, combine rule, leaf maps, full bits). Throws GeomError(structural).
  void validate() const;

  /// Deterministic line-oriented text form (header plus one line per node,
  /// level descending then index ascending).
  std::string serialize() const;
  static BlockTree deserialize(std::string_view text,
                               std::optional<TreeKind> kind = std::nullopt);

  friend bool operator==(const BlockTree& a, const BlockTree& b) {
    return a.config_ == b.config_ && a.kind_ == b.kind_ && a.levels_ == b.levels_;
  }

 private:
  void check_id(const BlockId& id) const;

  GeometryConfig config_;
  TreeKind kind_;
  std::vector<LevelStore> levels_;
};

/// Exact per-level niche counts (levels node.level-1 down to m) in the
/// subtree under `node`, by full traversal without saturation.
std::vector<std::uint64_t> true_niche_counts(const BlockTree& tree, const BlockId& node);

/// Hex rendering of an address without prefix, as in the figures ("A", "1F").
std::string hex(Address a);

}  // namespace geom
