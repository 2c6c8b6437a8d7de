#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include "geom/core.hpp"

namespace geom {

struct PlacementPolicy {
  enum class Kind { leftmost, rightmost, seeded_random };
  Kind kind = Kind::leftmost;
  std::uint64_t seed = 0;

  static PlacementPolicy leftmost() { return {Kind::leftmost, 0}; }
  static PlacementPolicy rightmost() { return {Kind::rightmost, 0}; }
  static PlacementPolicy random(std::uint64_t seed) { return {Kind::seeded_random, seed}; }
};

std::string_view policy_name(PlacementPolicy::Kind kind);

struct LedgePiece {
  int level = 0;
  Address offset = 0;  // within the chunk, for largest-first ascending layout

  Address size() const { return Address{1} << level; }
  friend bool operator==(const LedgePiece&, const LedgePiece&) = default;
};

/// Decomposition of a chunk into strictly descending power-of-two pieces.
struct LedgePlan {
  std::vector<LedgePiece> pieces;
  Address requested_size = 0;
  Address rounded_size = 0;  // requested size rounded up to a multiple of 2^m
  std::optional<int> max_pieces;

  /// Sum of piece sizes; >= rounded_size, equal when max_pieces is unset.
  Address total() const;
  /// Smallest level whose block can hold the whole plan.
  int enclosing_level() const;
};

/// Throws GeomError(invalid_size) for size 0, GeomError(too_large) beyond 2^n.
/// With max_pieces = k the tail after k-1 pieces is rounded up into one piece
/// (carrying into larger pieces when the rounded tail meets one).
LedgePlan ledge_decompose(Address size, const GeometryConfig& config,
                          std::optional<int> max_pieces = std::nullopt);

/// How the pieces of a placed chunk sit in memory. Ascending puts the largest
/// piece at the chunk base; mirrored puts it at the top, which keeps every
/// piece aligned when the chunk is packed against the end of a niche.
enum class ChunkLayout { ascending, mirrored };

std::vector<BlockId> place_plan(const LedgePlan& plan, Address base, ChunkLayout layout);

/// Smallest level q >= required_level with a nonzero root counter, or the
/// root level itself when `empty_tree`. Absent means out-of-memory.
std::optional<int> best_fit_level(const NicheMap& root_map, int root_level, bool empty_tree,
                                  int required_level);
std::optional<int> best_fit_level(const BlockTree& tree, int required_level);

struct AllocatorStats {
  Address bytes_allocated = 0;
  Address bytes_free = 0;
  std::map<int, std::uint64_t> niche_histogram;
  std::uint64_t node_count = 0;
  std::uint64_t alloc_count = 0;
  std::uint64_t free_count = 0;
  std::uint64_t oom_count = 0;
};

/// Test-only behaviour changes used to check that the differential harness
/// catches allocator bugs.
enum class FaultInjection {
  none,
  /// On out-of-memory for a block request, hand out two adjacent half-size
  /// niches that do not form an aligned block.
  misaligned_coalesce,
};

/// Best-fit geometric allocator over a real block tree.
class Allocator {
 public:
  explicit Allocator(GeometryConfig config, PlacementPolicy policy = {});

  const BlockTree& tree() const { return tree_; }
  const GeometryConfig& config() const { return tree_.config(); }
  const PlacementPolicy& policy() const { return policy_; }

  Address alloc_block(int level);
  void free_block(Address base, int level);

  /// Returns the lowest address of the chunk.
  Address alloc_chunk(Address size, std::optional<int> max_pieces = std::nullopt);
  void free_chunk(Address base, Address size, std::optional<int> max_pieces = std::nullopt);
  /// Leaves of the live chunk (base, size) in address order; throws invalid_free.
  std::vector<BlockId> chunk_leaves(Address base, Address size,
                                    std::optional<int> max_pieces = std::nullopt) const;

  /// Allocates exactly `block`, which must lie entirely in free space.
  void claim_block(const BlockId& block);

  /// Walks the niche maps from the root to a niche of exactly `level`.
  /// Consumes a random draw per tie under the random policy.
  std::optional<BlockId> find_niche(int level);

  AllocatorStats stats() const;

  void set_fault(FaultInjection fault) { fault_ = fault; }
  /// Check the full structural invariant after every mutation.
  void set_paranoid(bool on) { paranoid_ = on; }

  /// Replaces the tree (snapshot restore); counters are kept.
  void restore(BlockTree tree);

 private:
  bool choose_right(bool left_ok, bool right_ok);
  void split_into(const BlockId& niche, const std::vector<BlockId>& blocks);
  std::optional<Address> misaligned_fallback(int level);
  void after_mutation();

  BlockTree tree_;
  PlacementPolicy policy_;
  std::mt19937_64 rng_;
  FaultInjection fault_ = FaultInjection::none;
  bool paranoid_ = false;
  std::uint64_t alloc_count_ = 0;
  std::uint64_t free_count_ = 0;
  std::uint64_t oom_count_ = 0;
};

/// Smallest level l with 2^l >= bytes.
int ceil_log2(Address bytes);

}  // namespace geom
