#include <bit>
#include <sstream>

#include "geom/rtree.hpp"

namespace geom {

int ceil_log2(Address bytes) {
  if (bytes <= 1) return 0;
  return std::bit_width(bytes - 1);
}

Address LedgePlan::total() const {
  Address t = 0;
  for (const auto& p : pieces) t += p.size();
  return t;
}

int LedgePlan::enclosing_level() const { return ceil_log2(total()); }

LedgePlan ledge_decompose(Address size, const GeometryConfig& config,
                          std::optional<int> max_pieces) {
  if (size == 0) throw GeomError(Errc::invalid_size, "chunk size must be at least 1");
  if (size > config.space_size()) {
    std::ostringstream os;
    os << "chunk of " << size << " bytes exceeds the " << config.space_size() << "-byte space";
    throw GeomError(Errc::too_large, os.str());
  }
  if (max_pieces && *max_pieces < 1) {
    throw GeomError(Errc::invalid_size, "max_pieces must be at least 1");
  }

  LedgePlan plan;
  plan.requested_size = size;
  plan.max_pieces = max_pieces;
  const Address unit = Address{1} << config.min_level;
  plan.rounded_size = (size + unit - 1) / unit * unit;

  Address value = plan.rounded_size;
  if (max_pieces && std::popcount(value) > *max_pieces) {
    // Keep the top k-1 bits and round the rest up to the next power of two
    // above the k-th bit; the addition carries into kept bits as needed.
    Address v = value;
    int kth = 0;
    for (int i = 0; i < *max_pieces; ++i) {
      kth = std::bit_width(v) - 1;
      v &= ~(Address{1} << kth);
    }
    const Address step = Address{1} << (kth + 1);
    value = (value / step) * step + step;
  }

  Address offset = 0;
  for (int bit = std::bit_width(value) - 1; bit >= 0; --bit) {
    if ((value >> bit) & 1) {
      plan.pieces.push_back({bit, offset});
      offset += Address{1} << bit;
    }
  }
  return plan;
}

std::vector<BlockId> place_plan(const LedgePlan& plan, Address base, ChunkLayout layout) {
  std::vector<BlockId> blocks;
  blocks.reserve(plan.pieces.size());
  Address top = base + plan.total();
  for (const auto& p : plan.pieces) {
    Address at = 0;
    if (layout == ChunkLayout::ascending) {
      at = base + p.offset;
    } else {
      top -= p.size();
      at = top;
    }
    blocks.push_back(BlockId{p.level, at >> p.level});
    if (blocks.back().base() != at) {
      throw GeomError(Errc::structural, "ledge piece at " + hex(at) + " is not self-aligned");
    }
  }
  return blocks;
}

}  // namespace geom
