#include <algorithm>

#include "geom/vtree.hpp"

namespace geom {

std::string_view strategy_name(PopulationStrategy::Kind kind) {
  switch (kind) {
    case PopulationStrategy::Kind::doubling: return "doubling";
    case PopulationStrategy::Kind::fixed_ledged: return "fixed";
    case PopulationStrategy::Kind::fixed_paging: return "paging";
  }
  return "unknown";
}

VirtualSpace::VirtualSpace(SpaceHandle handle, PopulationStrategy strategy, Address bound,
                           const GeometryConfig& config)
    : handle_(handle), strategy_(strategy), bound_(bound),
      tree_(config, TreeKind::virtual_space) {}

Translation VirtualSpace::translate(Address offset) const {
  Translation t;
  if (offset >= bound_) {
    t.status = TranslateStatus::out_of_bounds;
    return t;
  }
  t.status = TranslateStatus::unbacked;
  if (tree_.empty()) return t;
  BlockId cur = tree_.root_id();
  for (;;) {
    const Node* node = tree_.find(cur);
    if (node == nullptr) return t;
    if (node->leaf) {
      t.status = TranslateStatus::ok;
      t.result = {*node->backing, cur.level, offset - cur.base()};
      return t;
    }
    cur = BlockId::containing(offset, cur.level - 1);
  }
}

Address VirtualSpace::backed_bytes() const {
  Address total = 0;
  for (const auto& leaf : tree_.leaves()) total += leaf.size();
  return total;
}

SpaceManager::SpaceManager(GeometryConfig config, PlacementPolicy policy)
    : rtree_(config, policy) {}

const VirtualSpace& SpaceManager::space(SpaceHandle h) const {
  auto it = spaces_.find(h);
  if (it == spaces_.end()) {
    throw GeomError(Errc::invalid_handle, "unknown space handle " + std::to_string(h.id));
  }
  return it->second;
}

VirtualSpace& SpaceManager::space(SpaceHandle h) {
  return const_cast<VirtualSpace&>(std::as_const(*this).space(h));
}

Address SpaceManager::back_block(int level) {
  try {
    return rtree_.alloc_block(level);
  } catch (const GeomError& e) {
    if (e.code() != Errc::out_of_memory) throw;
    throw GeomError(Errc::backing_failure,
                    "no real block of level " + std::to_string(level) + " to back the space");
  }
}

void SpaceManager::install_leaf(VirtualSpace& vs, const BlockId& id, Address backing) {
  BlockTree& tree = vs.tree();
  Node leaf = tree.make_leaf(id.level);
  leaf.backing = backing;
  tree.put(id, std::move(leaf));
  std::vector<BlockId> created;
  for (BlockId a = id; a.level < tree.config().height_bits;) {
    a = a.parent();
    if (tree.contains(a)) break;
    tree.put(a, Node{});
    created.push_back(a);
  }
  for (const auto& a : created) tree.refresh(a);
  tree.refresh_ancestors(created.empty() ? id : created.back());
}

SpaceHandle SpaceManager::create_space(PopulationStrategy strategy, Address size) {
  const auto& cfg = config();
  if (size > cfg.space_size()) {
    throw GeomError(Errc::too_large, "space of " + std::to_string(size) + " bytes exceeds 2^" +
                                         std::to_string(cfg.height_bits));
  }
  const SpaceHandle h{next_handle_};
  switch (strategy.kind) {
    case PopulationStrategy::Kind::doubling: {
      spaces_.emplace(h, VirtualSpace(h, strategy, cfg.space_size(), cfg));
      break;
    }
    case PopulationStrategy::Kind::fixed_paging: {
      if (strategy.page_level < cfg.min_level || strategy.page_level > cfg.height_bits) {
        throw GeomError(Errc::invalid_size,
                        "page level " + std::to_string(strategy.page_level) + " outside geometry");
      }
      spaces_.emplace(h, VirtualSpace(h, strategy, cfg.space_size(), cfg));
      break;
    }
    case PopulationStrategy::Kind::fixed_ledged: {
      const Address fixed = strategy.fixed_size != 0 ? strategy.fixed_size : size;
      strategy.fixed_size = fixed;
      const LedgePlan plan = ledge_decompose(fixed, cfg);
      const auto blocks = place_plan(plan, 0, ChunkLayout::ascending);
      std::vector<std::pair<BlockId, Address>> backed;
      try {
        for (const auto& b : blocks) backed.emplace_back(b, back_block(b.level));
      } catch (const GeomError&) {
        for (const auto& [b, real] : backed) rtree_.free_block(real, b.level);
        throw;
      }
      VirtualSpace vs(h, strategy, fixed, cfg);
      for (const auto& [b, real] : backed) install_leaf(vs, b, real);
      spaces_.emplace(h, std::move(vs));
      break;
    }
  }
  ++next_handle_;
  return h;
}

void SpaceManager::destroy_space(SpaceHandle h) {
  VirtualSpace& vs = space(h);
  for (const auto& leaf : vs.tree().leaves()) {
    rtree_.free_block(*vs.tree().find(leaf)->backing, leaf.level);
  }
  spaces_.erase(h);
}

Translation SpaceManager::translate(SpaceHandle h, Address offset) const {
  return space(h).translate(offset);
}

Address SpaceManager::backed_bytes(SpaceHandle h) const { return space(h).backed_bytes(); }

AccessResult SpaceManager::access(SpaceHandle h, Address offset) {
  VirtualSpace& vs = space(h);
  const auto& cfg = config();
  const auto kind = vs.strategy().kind;
  if (offset >= vs.bound()) {
    if (kind == PopulationStrategy::Kind::fixed_ledged) {
      throw GeomError(Errc::trap, "access at " + hex(offset) + " beyond fixed space of " +
                                      std::to_string(vs.bound()) + " bytes");
    }
    throw GeomError(Errc::out_of_bounds, "offset " + hex(offset) + " outside the space");
  }
  if (auto t = vs.translate(offset); t.ok()) return t.result;
  if (kind == PopulationStrategy::Kind::fixed_ledged) {
    throw GeomError(Errc::trap, "unbacked offset " + hex(offset) + " in fixed space");
  }

  const int floor_level =
      kind == PopulationStrategy::Kind::fixed_paging ? vs.strategy().page_level : cfg.min_level;
  BlockId target = BlockId::containing(offset, floor_level);
  const BlockTree& tree = vs.tree();
  if (!tree.empty()) {
    BlockId cur = tree.root_id();
    for (;;) {
      const BlockId c = BlockId::containing(offset, cur.level - 1);
      if (tree.contains(c)) {
        cur = c;
        continue;
      }
      if (kind == PopulationStrategy::Kind::doubling) {
        const Node* sib = tree.find(c.sibling());
        if (sib != nullptr && sib->full) target = c;
      }
      break;
    }
  }
  const Address real = back_block(target.level);
  install_leaf(vs, target, real);
  if (paranoid_) vs.tree().validate();
  return vs.translate(offset).result;
}

}  // namespace geom
