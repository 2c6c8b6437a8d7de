#include "geom/oracle.hpp"

#include <algorithm>
#include <bit>
#include <sstream>

namespace geom {

namespace {

// Keeps the byte map small enough to allocate eagerly.
constexpr int kMaxOracleBits = 24;

[[noreturn]] void violation(const std::string& what) { throw OracleViolation(what); }

std::string range(const Extent& e) { return hex(e.base) + "-" + hex(e.end() - 1); }

}  // namespace

std::string niche_listing(const std::vector<BlockId>& niches) {
  std::ostringstream os;
  for (std::size_t i = 0; i < niches.size(); ++i) {
    os << (i ? " " : "") << "L" << niches[i].level << "@" << hex(niches[i].base());
  }
  return os.str();
}

ByteModel::ByteModel(GeometryConfig config) : config_(config) {
  config_.validate();
  if (config_.height_bits > kMaxOracleBits) {
    throw GeomError(Errc::invalid_config, "oracle supports at most 2^" +
                                              std::to_string(kMaxOracleBits) + " bytes");
  }
  occupancy_.assign(config_.space_size(), 0);
  pyramid_.resize(static_cast<std::size_t>(config_.height_bits) + 1);
  for (int l = config_.min_level; l <= config_.height_bits; ++l) {
    pyramid_[static_cast<std::size_t>(l)].assign(std::size_t{1} << (config_.height_bits - l), 0);
  }
}

Address ByteModel::allocated_in(const BlockId& b) const {
  return pyramid_[static_cast<std::size_t>(b.level)][b.index];
}

void ByteModel::mark(const Extent& e, bool on) {
  for (Address a = e.base; a < e.end(); ++a) occupancy_[a] = on ? 1 : 0;
  // Allocations are multiples of 2^m, so whole minimum blocks flip at once.
  for (int l = config_.min_level; l <= config_.height_bits; ++l) {
    auto& row = pyramid_[static_cast<std::size_t>(l)];
    const Address lo = e.base >> l;
    const Address hi = (e.end() - 1) >> l;
    for (Address i = lo; i <= hi; ++i) {
      const Address blo = std::max(e.base, i << l);
      const Address bhi = std::min(e.end(), (i + 1) << l);
      const auto delta = static_cast<std::uint32_t>(bhi - blo);
      row[i] = on ? row[i] + delta : row[i] - delta;
    }
  }
  allocated_bytes_ = on ? allocated_bytes_ + e.size : allocated_bytes_ - e.size;
}

void ByteModel::collect(const BlockId& b, std::vector<BlockId>& out) const {
  const Address used = allocated_in(b);
  if (used == 0) {
    out.push_back(b);
    return;
  }
  if (used == b.size() || b.level == config_.min_level) return;
  collect(b.child(false), out);
  collect(b.child(true), out);
}

std::vector<BlockId> ByteModel::canonical_niches() const {
  std::vector<BlockId> out;
  collect({config_.height_bits, 0}, out);
  return out;
}

std::vector<BlockId> ByteModel::canonical_niches_bruteforce() const {
  std::vector<std::uint8_t> covered(occupancy_.size(), 0);
  std::vector<BlockId> out;
  for (int l = config_.height_bits; l >= config_.min_level; --l) {
    const Address size = Address{1} << l;
    for (Address base = 0; base < config_.space_size(); base += size) {
      bool ok = true;
      for (Address a = base; a < base + size && ok; ++a) ok = occupancy_[a] == 0 && covered[a] == 0;
      if (!ok) continue;
      out.push_back(BlockId::containing(base, l));
      std::fill(covered.begin() + static_cast<std::ptrdiff_t>(base),
                covered.begin() + static_cast<std::ptrdiff_t>(base + size), 1);
    }
  }
  std::sort(out.begin(), out.end(),
            [](const BlockId& a, const BlockId& b) { return a.base() < b.base(); });
  return out;
}

std::optional<BlockId> ByteModel::best_fit_capacity(Address capacity) const {
  return best_fit_among(canonical_niches(), capacity);
}

std::optional<BlockId> ByteModel::best_fit_among(const std::vector<BlockId>& niches,
                                                 Address capacity) {
  std::optional<BlockId> best;
  for (const auto& n : niches) {
    if (n.size() < capacity) continue;
    if (!best || n.level < best->level) best = n;
  }
  return best;
}

std::optional<BlockId> ByteModel::best_fit(Address size) const {
  const Address unit = Address{1} << config_.min_level;
  return best_fit_capacity((size + unit - 1) / unit * unit);
}

void ByteModel::apply(const OracleOp& op) {
  const Extent& c = op.chunk;
  if (c.size == 0 || c.end() > config_.space_size() || c.end() < c.base) {
    violation("extent " + range(c) + " outside the space");
  }
  if (op.kind == OracleOp::Kind::free) {
    auto it = chunks_.find(c.base);
    if (it == chunks_.end() || it->second != c.size) {
      violation("free of unknown extent " + range(c));
    }
    chunks_.erase(it);
    mark(c, false);
    return;
  }

  Address covered = 0;
  std::vector<Extent> sorted = op.pieces;
  std::sort(sorted.begin(), sorted.end(),
            [](const Extent& a, const Extent& b) { return a.base < b.base; });
  for (const auto& p : sorted) {
    if (!std::has_single_bit(p.size) || p.base % p.size != 0) {
      violation("misaligned placement: " + std::to_string(p.size) + "-byte block at " +
                hex(p.base));
    }
    if (p.size < (Address{1} << config_.min_level)) {
      violation("block at " + hex(p.base) + " below the minimum block size");
    }
    if (p.base != c.base + covered) violation("pieces do not tile chunk " + range(c));
    covered += p.size;
  }
  if (covered != c.size) violation("pieces do not tile chunk " + range(c));
  for (Address a = c.base; a < c.end(); ++a) {
    if (occupancy_[a] != 0) violation("overlap at " + hex(a) + " placing " + range(c));
  }
  chunks_.emplace(c.base, c.size);
  mark(c, true);
}

std::string ByteModel::free_ranges() const {
  std::ostringstream os;
  bool first = true;
  Address a = 0;
  const Address n = config_.space_size();
  while (a < n) {
    if (occupancy_[a] != 0) {
      ++a;
      continue;
    }
    Address b = a;
    while (b < n && occupancy_[b] == 0) ++b;
    os << (first ? "" : " ") << range({a, b - a});
    first = false;
    a = b;
  }
  return os.str();
}

std::string ByteModel::niche_listing() const { return geom::niche_listing(canonical_niches()); }

}  // namespace geom
