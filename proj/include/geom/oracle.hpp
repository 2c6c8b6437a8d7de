#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "geom/core.hpp"

namespace geom {

/// A byte range as reported by the system under test; unlike BlockId it can
/// express misaligned or non-power-of-two placements.
struct Extent {
  Address base = 0;
  Address size = 0;

  Address end() const { return base + size; }
  friend bool operator==(const Extent&, const Extent&) = default;
};

struct OracleOp {
  enum class Kind { alloc, free };
  Kind kind = Kind::alloc;
  Extent chunk;
  std::vector<Extent> pieces;  // alloc only; each must be a self-aligned power of two
};

/// Raised when an applied op is inconsistent with the model.
class OracleViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Brute-force reference model over an explicit byte map. Every query is
/// answered from the occupancy flags; the per-level allocated-byte pyramid
/// only lets canonical_niches skip uniform regions.
class ByteModel {
 public:
  explicit ByteModel(GeometryConfig config);

  const GeometryConfig& config() const { return config_; }
  bool allocated(Address a) const { return occupancy_.at(a) != 0; }
  const std::map<Address, Address>& chunks() const { return chunks_; }
  Address bytes_allocated() const { return allocated_bytes_; }

  /// Maximal free blocks aligned to their own size, sorted by address.
  std::vector<BlockId> canonical_niches() const;
  /// Same set computed by the greedy definition over the flags alone.
  std::vector<BlockId> canonical_niches_bruteforce() const;

  /// Smallest canonical niche holding `capacity` bytes; ties go leftmost.
  std::optional<BlockId> best_fit_capacity(Address capacity) const;
  /// The same choice over a niche list already computed by canonical_niches.
  static std::optional<BlockId> best_fit_among(const std::vector<BlockId>& niches,
                                               Address capacity);
  /// Reference best fit for a request of `size` bytes (rounded to 2^m).
  std::optional<BlockId> best_fit(Address size) const;

  /// Throws OracleViolation on overlap, misalignment, out-of-range placement
  /// or a free that does not match a live chunk. The model is unchanged then.
  void apply(const OracleOp& op);

  /// Maximal free runs as space-separated "lo-hi" hex ranges.
  std::string free_ranges() const;
  /// Canonical niches as "L<level>@<hex base>" tokens.
  std::string niche_listing() const;

 private:
  void mark(const Extent& e, bool on);
  Address allocated_in(const BlockId& b) const;
  void collect(const BlockId& b, std::vector<BlockId>& out) const;

  GeometryConfig config_;
  std::vector<std::uint8_t> occupancy_;
  // pyramid_[l][i] = allocated bytes in block (l, i), for l in [m, n]
  std::vector<std::vector<std::uint32_t>> pyramid_;
  std::map<Address, Address> chunks_;
  Address allocated_bytes_ = 0;
};

std::string niche_listing(const std::vector<BlockId>& niches);

}  // namespace geom
