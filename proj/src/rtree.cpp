#include <algorithm>
#include <sstream>

#include "geom/rtree.hpp"

namespace geom {

std::string_view policy_name(PlacementPolicy::Kind kind) {
  switch (kind) {
    case PlacementPolicy::Kind::leftmost: return "leftmost";
    case PlacementPolicy::Kind::rightmost: return "rightmost";
    case PlacementPolicy::Kind::seeded_random: return "random";
  }
  return "unknown";
}

std::optional<int> best_fit_level(const NicheMap& root_map, int root_level, bool empty_tree,
                                  int required_level) {
  if (empty_tree) {
    if (required_level <= root_level) return root_level;
    return std::nullopt;
  }
  for (int q = required_level; q < root_level; ++q) {
    const auto slot = map_slot(root_level, q);
    if (slot < root_map.size() && root_map[slot] > 0) return q;
  }
  return std::nullopt;
}

std::optional<int> best_fit_level(const BlockTree& tree, int required_level) {
  return best_fit_level(tree.root_map(), tree.config().height_bits, tree.empty(),
                        required_level);
}

namespace {

void check_level(const GeometryConfig& cfg, int level) {
  if (level < cfg.min_level || level > cfg.height_bits) {
    std::ostringstream os;
    os << "block level " << level << " outside [" << cfg.min_level << ", " << cfg.height_bits
       << "]";
    throw GeomError(Errc::invalid_size, os.str());
  }
}

[[noreturn]] void invalid_free(Address base, const std::string& what) {
  throw GeomError(Errc::invalid_free, "free at " + hex(base) + ": " + what);
}

}  // namespace

Allocator::Allocator(GeometryConfig config, PlacementPolicy policy)
    : tree_(config, TreeKind::real), policy_(policy), rng_(policy.seed) {}

void Allocator::restore(BlockTree tree) {
  if (tree.kind() != TreeKind::real || !(tree.config() == tree_.config())) {
    throw GeomError(Errc::invalid_config, "snapshot does not match allocator geometry");
  }
  tree_ = std::move(tree);
}

bool Allocator::choose_right(bool left_ok, bool right_ok) {
  if (left_ok != right_ok) return right_ok;
  switch (policy_.kind) {
    case PlacementPolicy::Kind::leftmost: return false;
    case PlacementPolicy::Kind::rightmost: return true;
    case PlacementPolicy::Kind::seeded_random: return (rng_() & 1) != 0;
  }
  return false;
}

std::optional<BlockId> Allocator::find_niche(int level) {
  if (tree_.empty()) {
    if (level == tree_.config().height_bits) return tree_.root_id();
    return std::nullopt;
  }
  BlockId cur = tree_.root_id();
  while (cur.level > level) {
    const Node* node = tree_.find(cur);
    if (node == nullptr || node->leaf) return std::nullopt;
    bool ok[2] = {false, false};
    for (bool right : {false, true}) {
      const BlockId c = cur.child(right);
      const Node* child = tree_.find(c);
      if (child == nullptr) {
        ok[right] = c.level == level;
      } else if (!child->leaf && c.level > level) {
        ok[right] = child->map[map_slot(c.level, level)] > 0;
      }
    }
    if (!ok[0] && !ok[1]) return std::nullopt;
    const BlockId next = cur.child(choose_right(ok[0], ok[1]));
    if (!tree_.contains(next)) return next;
    cur = next;
  }
  return std::nullopt;
}

void Allocator::split_into(const BlockId& niche, const std::vector<BlockId>& blocks) {
  std::vector<BlockId> created;
  for (const auto& b : blocks) {
    tree_.put(b, tree_.make_leaf(b.level));
    for (BlockId a = b; a.level < niche.level;) {
      a = a.parent();
      if (tree_.contains(a)) break;
      tree_.put(a, Node{});
      created.push_back(a);
    }
  }
  std::sort(created.begin(), created.end(),
            [](const BlockId& x, const BlockId& y) { return x.level < y.level; });
  for (const auto& a : created) tree_.refresh(a);
  tree_.refresh_ancestors(niche);
}

void Allocator::after_mutation() {
  if (paranoid_) tree_.validate();
}

std::optional<Address> Allocator::misaligned_fallback(int level) {
  if (level - 1 < config().min_level) return std::nullopt;
  const auto niches = tree_.niches();
  for (std::size_t i = 0; i + 1 < niches.size(); ++i) {
    const auto& a = niches[i];
    const auto& b = niches[i + 1];
    if (a.level == level - 1 && b.level == level - 1 && a.end() == b.base() &&
        a.base() % (Address{1} << level) != 0) {
      split_into(a, {a});
      split_into(b, {b});
      return a.base();
    }
  }
  return std::nullopt;
}

Address Allocator::alloc_block(int level) {
  check_level(config(), level);
  const auto q = best_fit_level(tree_, level);
  if (!q) {
    if (fault_ == FaultInjection::misaligned_coalesce) {
      if (auto base = misaligned_fallback(level)) {
        ++alloc_count_;
        return *base;
      }
    }
    ++oom_count_;
    throw GeomError(Errc::out_of_memory, "no niche of level >= " + std::to_string(level));
  }
  const auto niche = find_niche(*q);
  if (!niche) throw GeomError(Errc::structural, "niche maps advertise a niche that descent cannot reach");
  const Address size = Address{1} << level;
  const bool right = policy_.kind == PlacementPolicy::Kind::rightmost ||
                     (policy_.kind == PlacementPolicy::Kind::seeded_random && (rng_() & 1));
  const Address base = right ? niche->end() - size : niche->base();
  split_into(*niche, {BlockId::containing(base, level)});
  ++alloc_count_;
  after_mutation();
  return base;
}

Address Allocator::alloc_chunk(Address size, std::optional<int> max_pieces) {
  const LedgePlan plan = ledge_decompose(size, config(), max_pieces);
  if (plan.pieces.size() == 1) return alloc_block(plan.pieces.front().level);
  const int required = plan.enclosing_level();
  const auto q = best_fit_level(tree_, required);
  if (!q) {
    ++oom_count_;
    throw GeomError(Errc::out_of_memory,
                    "no niche for a " + std::to_string(plan.total()) + "-byte chunk");
  }
  const auto niche = find_niche(*q);
  if (!niche) throw GeomError(Errc::structural, "niche maps advertise a niche that descent cannot reach");
  const bool right = policy_.kind == PlacementPolicy::Kind::rightmost ||
                     (policy_.kind == PlacementPolicy::Kind::seeded_random && (rng_() & 1));
  const Address base = right ? niche->end() - plan.total() : niche->base();
  split_into(*niche, place_plan(plan, base, right ? ChunkLayout::mirrored : ChunkLayout::ascending));
  ++alloc_count_;
  after_mutation();
  return base;
}

void Allocator::claim_block(const BlockId& block) {
  check_level(config(), block.level);
  std::optional<BlockId> niche;
  if (tree_.empty()) {
    niche = tree_.root_id();
  } else {
    BlockId cur = tree_.root_id();
    while (cur.level > block.level) {
      const Node* node = tree_.find(cur);
      if (node->leaf) break;
      const BlockId c = BlockId::containing(block.base(), cur.level - 1);
      if (!tree_.contains(c)) {
        niche = c;
        break;
      }
      cur = c;
    }
  }
  if (!niche) {
    throw GeomError(Errc::out_of_memory, "block at " + hex(block.base()) + " of level " +
                                             std::to_string(block.level) + " is not free");
  }
  split_into(*niche, {block});
  ++alloc_count_;
  after_mutation();
}

void Allocator::free_block(Address base, int level) {
  check_level(config(), level);
  const BlockId id = BlockId::containing(base, level);
  if (id.base() != base) invalid_free(base, "misaligned for level " + std::to_string(level));
  if (base >= config().space_size()) invalid_free(base, "outside the space");
  const Node* node = tree_.find(id);
  if (node == nullptr || !node->leaf) invalid_free(base, "no allocated block of that level");

  tree_.erase(id);
  BlockId cur = id;
  while (cur.level < config().height_bits) {
    const BlockId parent = cur.parent();
    if (tree_.contains(cur.sibling())) {
      tree_.refresh(parent);
      tree_.refresh_ancestors(parent);
      break;
    }
    tree_.erase(parent);
    cur = parent;
  }
  ++free_count_;
  after_mutation();
}

std::vector<BlockId> Allocator::chunk_leaves(Address base, Address size,
                                             std::optional<int> max_pieces) const {
  LedgePlan plan;
  try {
    plan = ledge_decompose(size, config(), max_pieces);
  } catch (const GeomError& e) {
    invalid_free(base, e.what());
  }
  if (base >= config().space_size() || base + plan.total() > config().space_size()) {
    invalid_free(base, "extent outside the space");
  }
  for (ChunkLayout layout : {ChunkLayout::ascending, ChunkLayout::mirrored}) {
    std::vector<BlockId> blocks;
    try {
      blocks = place_plan(plan, base, layout);
    } catch (const GeomError&) {
      continue;
    }
    const bool all = std::all_of(blocks.begin(), blocks.end(), [&](const BlockId& b) {
      const Node* n = tree_.find(b);
      return n != nullptr && n->leaf;
    });
    if (all) {
      std::sort(blocks.begin(), blocks.end(),
                [](const BlockId& x, const BlockId& y) { return x.base() < y.base(); });
      return blocks;
    }
  }
  invalid_free(base, "no live chunk of " + std::to_string(size) + " bytes");
}

void Allocator::free_chunk(Address base, Address size, std::optional<int> max_pieces) {
  const auto blocks = chunk_leaves(base, size, max_pieces);
  for (const auto& b : blocks) {
    free_block(b.base(), b.level);
  }
  // free_block counts each piece; a chunk is one free.
  free_count_ -= blocks.size() - 1;
}

AllocatorStats Allocator::stats() const {
  AllocatorStats s;
  for (const auto& leaf : tree_.leaves()) s.bytes_allocated += leaf.size();
  for (const auto& n : tree_.niches()) {
    s.bytes_free += n.size();
    ++s.niche_histogram[n.level];
  }
  s.node_count = tree_.node_count();
  s.alloc_count = alloc_count_;
  s.free_count = free_count_;
  s.oom_count = oom_count_;
  return s;
}

}  // namespace geom
