#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "geom/core.hpp"
#include "geom/rtree.hpp"

namespace geom {

struct SpaceHandle {
  std::uint64_t id = 0;
  friend auto operator<=>(const SpaceHandle&, const SpaceHandle&) = default;
};

struct PopulationStrategy {
  enum class Kind { doubling, fixed_ledged, fixed_paging };
  Kind kind = Kind::doubling;
  Address fixed_size = 0;  // fixed_ledged
  int page_level = 0;      // fixed_paging

  static PopulationStrategy doubling() { return {Kind::doubling, 0, 0}; }
  static PopulationStrategy fixed_ledged(Address size) { return {Kind::fixed_ledged, size, 0}; }
  static PopulationStrategy fixed_paging(int page_level) {
    return {Kind::fixed_paging, 0, page_level};
  }
};

struct AccessResult {
  Address backing_base = 0;
  int level = 0;
  Address offset_in_block = 0;

  Address real_address() const { return backing_base + offset_in_block; }
  friend bool operator==(const AccessResult&, const AccessResult&) = default;
};

enum class TranslateStatus { ok, out_of_bounds, unbacked };

struct Translation {
  TranslateStatus status = TranslateStatus::ok;
  AccessResult result;

  bool ok() const { return status == TranslateStatus::ok; }
};

/// One virtual address space: a virtual block tree whose leaves carry the
/// base of the real block backing them and whose nodes carry full bits.
class VirtualSpace {
 public:
  VirtualSpace(SpaceHandle handle, PopulationStrategy strategy, Address bound,
               const GeometryConfig& config);

  SpaceHandle handle() const { return handle_; }
  const PopulationStrategy& strategy() const { return strategy_; }
  /// Offsets at or above the bound are out of bounds.
  Address bound() const { return bound_; }
  const BlockTree& tree() const { return tree_; }
  BlockTree& tree() { return tree_; }

  Translation translate(Address offset) const;
  Address backed_bytes() const;

 private:
  SpaceHandle handle_;
  PopulationStrategy strategy_;
  Address bound_;
  BlockTree tree_;
};

/// Owns the real-memory allocator and every live virtual space.
///
/// Backing blocks for a leaf of level l are obtained with alloc_block(l).
/// Backings are never migrated, so a virtual block may be backed by several
/// discontiguous real blocks.
class SpaceManager {
 public:
  explicit SpaceManager(GeometryConfig config, PlacementPolicy policy = {});

  Allocator& rtree() { return rtree_; }
  const Allocator& rtree() const { return rtree_; }
  const GeometryConfig& config() const { return rtree_.config(); }

  /// Throws too_large / invalid_size for bad sizes and backing_failure when the
  /// real allocator cannot pre-populate a fixed space.
  SpaceHandle create_space(PopulationStrategy strategy, Address size);
  void destroy_space(SpaceHandle h);

  /// Populating access. Throws trap (fixed space overrun), out_of_bounds,
  /// backing_failure (space unchanged) or invalid_handle.
  AccessResult access(SpaceHandle h, Address offset);
  /// Pure lookup; never mutates.
  Translation translate(SpaceHandle h, Address offset) const;
  Address backed_bytes(SpaceHandle h) const;

  const VirtualSpace& space(SpaceHandle h) const;
  VirtualSpace& space(SpaceHandle h);
  const std::map<SpaceHandle, VirtualSpace>& spaces() const { return spaces_; }

  /// Runs BlockTree::validate and checks full bits against the backed set
  /// after every access.
  void set_paranoid(bool on) { paranoid_ = on; }

 private:
  Address back_block(int level);
  void install_leaf(VirtualSpace& vs, const BlockId& id, Address backing);

  Allocator rtree_;
  std::map<SpaceHandle, VirtualSpace> spaces_;
  std::uint64_t next_handle_ = 1;
  bool paranoid_ = false;
};

std::string_view strategy_name(PopulationStrategy::Kind kind);

}  // namespace geom
