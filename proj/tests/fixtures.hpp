#pragma once

#include <algorithm>
#include <random>
#include <vector>

#include "geom/core.hpp"
#include "geom/rtree.hpp"

namespace geom::testing {

inline GeometryConfig sixteen_bytes(int w = 2) { return {4, 0, w}; }

/// Claims every block in `blocks` on a fresh allocator.
inline Allocator with_blocks(const GeometryConfig& cfg, const std::vector<BlockId>& blocks) {
  Allocator a(cfg);
  a.set_paranoid(true);
  for (const auto& b : blocks) a.claim_block(b);
  return a;
}

/// The niche-map figure: 0-3, 4-5 and C-F allocated; 6-7 and 8-B free.
inline Allocator niche_figure(int w = 2) {
  return with_blocks(sixteen_bytes(w), {{2, 0}, {1, 2}, {2, 3}});
}

inline BlockId blk(int level, Address base) { return BlockId::containing(base, level); }

/// Random reachable tree: alternating random block allocations and frees.
inline Allocator random_tree(const GeometryConfig& cfg, std::mt19937_64& rng, int steps) {
  Allocator a(cfg, PlacementPolicy::random(rng()));
  std::vector<BlockId> live;
  for (int i = 0; i < steps; ++i) {
    if (!live.empty() && rng() % 3 == 0) {
      const auto idx = rng() % live.size();
      a.free_block(live[idx].base(), live[idx].level);
      live.erase(live.begin() + static_cast<std::ptrdiff_t>(idx));
      continue;
    }
    // min of two draws: small blocks dominate, so niches pile up and counters saturate
    const auto span = static_cast<std::uint64_t>(cfg.height_bits - cfg.min_level + 1);
    const int level = cfg.min_level + static_cast<int>(std::min(rng() % span, rng() % span));
    try {
      const Address base = a.alloc_block(level);
      live.push_back(BlockId::containing(base, level));
    } catch (const GeomError&) {
    }
  }
  return a;
}

}  // namespace geom::testing
