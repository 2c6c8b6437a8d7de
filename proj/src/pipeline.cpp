#include "geom/pipeline.hpp"

#include <algorithm>

namespace geom {

std::string_view request_kind_name(PipelineRequest::Kind kind) {
  switch (kind) {
    case PipelineRequest::Kind::alloc: return "alloc";
    case PipelineRequest::Kind::dealloc: return "dealloc";
    case PipelineRequest::Kind::vcreate: return "vcreate";
    case PipelineRequest::Kind::vdestroy: return "vdestroy";
    case PipelineRequest::Kind::vtranslate: return "vtranslate";
  }
  return "unknown";
}

namespace {

using Kind = PipelineRequest::Kind;

enum class Origin { external, refill, demand, release };

struct Flight {
  std::uint64_t id = 0;
  PipelineRequest req;
  Origin origin = Origin::external;
  std::uint64_t owner = 0;  // demand: the waiting vtree flight

  bool up = false;
  int stage = 0;
  bool acted = false;
  int turn = 0;

  bool failed = false;
  std::optional<Errc> error;

  // alloc
  int q = 0;
  std::map<int, BlockId> path;
  bool consumed = false;
  bool right_end = false;
  Address base = 0;

  // vtree
  int backing_level = -1;
  std::optional<Address> granted;
  bool demand_issued = false;
  bool demand_failed = false;
  AccessResult access;
  std::vector<BlockId> pieces;  // vcreate fixed, ascending layout at 0
};

struct Lanes {
  std::map<int, std::uint64_t> down, up;
};

struct MuxItem {
  PipelineRequest req;
  Origin origin = Origin::refill;
  std::uint64_t owner = 0;
};

}  // namespace

struct PipelineSim::Impl {
  explicit Impl(SimConfig c)
      : config(std::move(c)), tree(config.geometry, TreeKind::real), rng(config.policy.seed) {
    config.geometry.validate();
    const auto& g = config.geometry;
    for (int l = g.min_level; l <= g.height_bits; ++l) {
      auto it = config.prealloc_depth.find(l);
      depth[l] = (it != config.prealloc_depth.end() && 2 * l <= g.height_bits) ? it->second : 0;
    }
  }

  SimConfig config;
  BlockTree tree;
  std::mt19937_64 rng;
  std::map<SpaceHandle, VirtualSpace> spaces;
  std::uint64_t next_handle = 1;

  std::map<std::uint64_t, Flight> flights;
  std::uint64_t next_id = 1;
  Lanes rlanes, vlanes;

  // Reservation ledger: per node, the flights whose reserved niche lies below
  // it and whose consumption the node's map does not reflect yet.
  std::map<BlockId, std::map<std::uint64_t, int>> pending;
  std::set<BlockId> reserved_niches;

  std::map<int, int> depth;
  std::map<int, std::deque<Address>> queues;
  std::map<int, int> refills_outstanding;
  std::map<int, std::deque<MuxItem>> mux;
  int mux_cursor = 0;

  std::uint64_t now = 0;
  SimMetrics metrics;
  std::vector<Response> fresh;

  int n() const { return config.geometry.height_bits; }
  int m() const { return config.geometry.min_level; }

  void touch(int stage, int level) {
    if (level != stage && level != stage - 1) ++metrics.locality_violations;
  }

  // ---- reservation ledger -------------------------------------------------

  int pending_at(const BlockId& id, int q) const {
    auto it = pending.find(id);
    if (it == pending.end()) return 0;
    int c = 0;
    for (const auto& [rid, lvl] : it->second) c += lvl == q;
    return c;
  }

  bool in_flight(Kind k) const {
    for (const auto& [id, f] : flights) {
      if (f.req.kind == k) return true;
    }
    return false;
  }

  // ---- admission ----------------------------------------------------------

  Admission admit_rtree(const PipelineRequest& req, Origin origin, std::uint64_t owner) {
    const auto& g = config.geometry;
    if (req.level < g.min_level || req.level > g.height_bits) return Admission::rejected;
    if (rlanes.down.count(n())) return Admission::stalled;
    touch(n(), n());
    if (req.kind == Kind::alloc) {
      if (in_flight(Kind::dealloc)) return Admission::stalled;
      std::set<int> growing;  // levels where an in-flight split adds niches
      for (const auto& [id, f] : flights) {
        if (f.req.kind != Kind::alloc) continue;
        for (int l = f.req.level; l < f.q; ++l) growing.insert(l);
      }
      std::optional<int> chosen;
      if (tree.empty()) {
        for (int q = req.level; q < n(); ++q) {
          if (growing.count(q)) return Admission::stalled;
        }
        if (reserved_niches.count(tree.root_id())) {
          // The only niche is spoken for and nothing in flight frees memory.
          return Admission::rejected;
        }
        chosen = n();
      } else {
        const NicheMap root = tree.root_map();
        for (int q = req.level; q < n(); ++q) {
          if (growing.count(q)) return Admission::stalled;
          const auto count = root[map_slot(n(), q)];
          if (count == 0) continue;
          const int free_now = static_cast<int>(count) - pending_at(tree.root_id(), q);
          if (free_now > 0) {
            chosen = q;
            break;
          }
          // Saturated counter: the true count is unknown, so wait.
          if (count == g.counter_max()) return Admission::stalled;
        }
      }
      if (!chosen) return Admission::rejected;
      Flight& f = launch(req, origin, owner);
      f.q = *chosen;
      f.turn = req.level;
      f.path[n()] = tree.root_id();
      if (f.q == n()) {
        reserved_niches.insert(tree.root_id());
      } else {
        pending[tree.root_id()][f.id] = f.q;
      }
      return Admission::accepted;
    }
    // dealloc
    const BlockId id = BlockId::containing(req.base, req.level);
    if (id.base() != req.base || req.base >= g.space_size()) return Admission::rejected;
    if (in_flight(Kind::alloc)) return Admission::stalled;
    for (const auto& [fid, f] : flights) {
      if (f.req.kind == Kind::dealloc && f.req.base == req.base && f.req.level == req.level) {
        return Admission::stalled;
      }
    }
    Flight& f = launch(req, origin, owner);
    f.turn = req.level;
    return Admission::accepted;
  }

  Admission admit_vtree(const PipelineRequest& req, SpaceHandle* assigned = nullptr) {
    const auto& g = config.geometry;
    if (req.kind == Kind::vcreate) {
      const auto& s = req.strategy;
      if (s.kind == PopulationStrategy::Kind::fixed_ledged &&
          (req.size == 0 || req.size > g.space_size())) {
        return Admission::rejected;
      }
      if (s.kind == PopulationStrategy::Kind::fixed_paging &&
          (s.page_level < g.min_level || s.page_level > g.height_bits)) {
        return Admission::rejected;
      }
      if (vlanes.down.count(n())) return Admission::stalled;
      const SpaceHandle h{next_handle++};
      const Address bound =
          s.kind == PopulationStrategy::Kind::fixed_ledged ? req.size : g.space_size();
      PopulationStrategy strategy = s;
      if (strategy.kind == PopulationStrategy::Kind::fixed_ledged) strategy.fixed_size = req.size;
      spaces.emplace(h, VirtualSpace(h, strategy, bound, g));
      Flight& f = launch(req, Origin::external, 0);
      f.req.handle = h;
      if (assigned) *assigned = h;
      if (strategy.kind == PopulationStrategy::Kind::fixed_ledged) {
        const auto plan = ledge_decompose(req.size, g);
        f.pieces = place_plan(plan, 0, ChunkLayout::ascending);
        f.turn = f.pieces.back().level;
      } else {
        f.turn = n();
      }
      return Admission::accepted;
    }
    if (!spaces.count(req.handle)) return Admission::rejected;
    for (const auto& [id, f] : flights) {
      if (is_vtree(f.req.kind) && f.req.handle == req.handle) return Admission::stalled;
    }
    if (vlanes.down.count(n())) return Admission::stalled;
    Flight& f = launch(req, Origin::external, 0);
    f.turn = m();  // vtranslate turns earlier once it reaches a leaf
    return Admission::accepted;
  }

  static bool is_vtree(Kind k) { return k != Kind::alloc && k != Kind::dealloc; }

  Flight& launch(const PipelineRequest& req, Origin origin, std::uint64_t owner) {
    Flight f;
    f.id = next_id++;
    f.req = req;
    f.req.admit_tick = now;
    f.origin = origin;
    f.owner = owner;
    f.stage = n();
    auto& slot = is_vtree(req.kind) ? vlanes.down : rlanes.down;
    slot[n()] = f.id;
    return flights.emplace(f.id, std::move(f)).first->second;
  }

  // ---- rtree stage actions --------------------------------------------------

  bool choose_right(bool left_ok, bool right_ok) {
    if (left_ok != right_ok) return right_ok;
    switch (config.policy.kind) {
      case PlacementPolicy::Kind::leftmost: return false;
      case PlacementPolicy::Kind::rightmost: return true;
      case PlacementPolicy::Kind::seeded_random: return (rng() & 1) != 0;
    }
    return false;
  }

  void fail(Flight& f, Errc code) {
    f.failed = true;
    f.error = code;
    f.turn = f.stage;
  }

  void alloc_down(Flight& f) {
    const int L = f.stage;
    const BlockId x = f.path.at(L);
    if (L > f.q) {
      touch(L, L);
      bool ok[2] = {false, false};
      for (bool right : {false, true}) {
        const BlockId c = x.child(right);
        touch(L, c.level);
        const Node* child = tree.find(c);
        if (child == nullptr) {
          ok[right] = c.level == f.q && !reserved_niches.count(c);
        } else if (!child->leaf && c.level > f.q) {
          ok[right] = static_cast<int>(child->map[map_slot(c.level, f.q)]) - pending_at(c, f.q) > 0;
        }
      }
      if (!ok[0] && !ok[1]) {
        ++metrics.spurious_failures;
        fail(f, Errc::out_of_memory);
        return;
      }
      const BlockId c = x.child(choose_right(ok[0], ok[1]));
      f.path[L - 1] = c;
      if (c.level == f.q) {
        reserved_niches.insert(c);
      } else {
        pending[c][f.id] = f.q;
      }
      return;
    }
    // Inside the reserved niche: materialize the path to the block.
    touch(L, L);
    if (L == f.q) {
      reserved_niches.erase(x);
      f.consumed = true;
      f.right_end = config.policy.kind == PlacementPolicy::Kind::rightmost ||
                    (config.policy.kind == PlacementPolicy::Kind::seeded_random && (rng() & 1));
    }
    if (L == f.req.level) {
      tree.put(x, tree.make_leaf(L));
      f.base = x.base();
      return;
    }
    Node stub;
    stub.map.assign(static_cast<std::size_t>(config.geometry.map_length(L)), 0);
    tree.put(x, stub);
    f.path[L - 1] = x.child(f.right_end);
  }

  void dealloc_down(Flight& f) {
    const int L = f.stage;
    const BlockId x = BlockId::containing(f.req.base, L);
    touch(L, L);
    const Node* node = tree.find(x);
    if (L > f.req.level) {
      if (node == nullptr || node->leaf) fail(f, Errc::invalid_free);
      return;
    }
    if (node == nullptr || !node->leaf) {
      fail(f, Errc::invalid_free);
      return;
    }
    tree.erase(x);
  }

  // Recomputes an interior node from its children; drops it when it has none.
  void settle(BlockTree& t, const BlockId& x, int stage) {
    touch(stage, x.level);
    Node* node = t.find(x);
    if (node == nullptr || node->leaf) return;
    touch(stage, x.level - 1);
    if (!t.contains(x.child(false)) && !t.contains(x.child(true))) {
      t.erase(x);
      return;
    }
    t.refresh(x);
  }

  bool reflected(const Flight& g, int L) {
    if (g.failed) return true;
    if (L - 1 == g.q) return g.consumed;
    auto it = g.path.find(L - 1);
    if (it == g.path.end()) return false;
    touch(L, L - 1);
    auto p = pending.find(it->second);
    return p == pending.end() || !p->second.count(g.id);
  }

  void rtree_up(Flight& f) {
    const int L = f.stage;
    const BlockId x = f.req.kind == Kind::alloc ? f.path.at(L)
                                                : BlockId::containing(f.req.base, L);
    settle(tree, x, L);
    auto it = pending.find(x);
    if (it == pending.end()) return;
    for (auto e = it->second.begin(); e != it->second.end();) {
      const Flight& g = flights.at(e->first);
      e = (g.id == f.id && f.failed) || reflected(g, L) ? it->second.erase(e) : std::next(e);
    }
    if (it->second.empty()) pending.erase(it);
  }

  // ---- vtree stage actions --------------------------------------------------

  enum class Got { yes, wait, failed };

  Got acquire(Flight& f, int level, Address& out) {
    if (f.granted) {
      out = *f.granted;
      f.granted.reset();
      return Got::yes;
    }
    if (f.demand_failed) return Got::failed;
    // An issued demand is waited for; taking a queued block instead would
    // strand the demand's block.
    if (f.demand_issued) return Got::wait;
    auto& q = queues[level];
    if (!q.empty()) {
      out = q.front();
      q.pop_front();
      return Got::yes;
    }
    PipelineRequest r;
    r.kind = Kind::alloc;
    r.level = level;
    r.tag = "demand";
    mux[level].push_back({r, Origin::demand, f.id});
    f.demand_issued = true;
    return Got::wait;
  }

  void release(Address base, int level) {
    PipelineRequest r;
    r.kind = Kind::dealloc;
    r.level = level;
    r.base = base;
    r.tag = "release";
    mux[level].push_back({r, Origin::release, 0});
  }

  Node virtual_stub(int level) const {
    Node stub;
    stub.map.assign(static_cast<std::size_t>(config.geometry.map_length(level)), 0);
    return stub;
  }

  Node backed_leaf(BlockTree& t, int level, Address backing) const {
    Node leaf = t.make_leaf(level);
    leaf.backing = backing;
    return leaf;
  }

  /// Returns false while waiting for backing.
  bool vtree_down(Flight& f) {
    const int L = f.stage;
    touch(L, L);
    if (f.req.kind == Kind::vdestroy) {
      BlockTree& t = spaces.at(f.req.handle).tree();
      std::vector<BlockId> ids;
      for (const auto& [idx, node] : t.level(L)) {
        ids.push_back({L, idx});
        if (node.leaf) release(*node.backing, L);
      }
      for (const auto& id : ids) t.erase(id);
      return true;
    }
    VirtualSpace& vs = spaces.at(f.req.handle);
    BlockTree& t = vs.tree();
    if (f.req.kind == Kind::vcreate) {
      if (vs.strategy().kind != PopulationStrategy::Kind::fixed_ledged) return true;
      for (const auto& piece : f.pieces) {
        if (piece.level != L) continue;
        Address backing = 0;
        switch (acquire(f, L, backing)) {
          case Got::wait: return false;
          case Got::failed: fail(f, Errc::backing_failure); return true;
          case Got::yes: break;
        }
        f.demand_issued = false;
        t.put(piece, backed_leaf(t, L, backing));
      }
      for (const auto& piece : f.pieces) {
        if (piece.level >= L) continue;
        const BlockId anc = BlockId::containing(piece.base(), L);
        if (!t.contains(anc)) t.put(anc, virtual_stub(L));
      }
      return true;
    }
    // vtranslate, populating
    const Address y = f.req.offset;
    if (L == n() && y >= vs.bound()) {
      fail(f, vs.strategy().kind == PopulationStrategy::Kind::fixed_ledged ? Errc::trap
                                                                             : Errc::out_of_bounds);
      return true;
    }
    const BlockId x = BlockId::containing(y, L);
    const Node* node = t.find(x);
    if (node != nullptr && node->leaf) {
      f.access = {*node->backing, L, y - x.base()};
      f.turn = L;
      return true;
    }
    if (node != nullptr) {
      const BlockId c = BlockId::containing(y, L - 1);
      touch(L, L - 1);
      if (!t.contains(c)) {
        switch (vs.strategy().kind) {
          case PopulationStrategy::Kind::doubling: {
            const Node* sib = t.find(c.sibling());
            f.backing_level = (sib != nullptr && sib->full) ? L - 1 : m();
            break;
          }
          case PopulationStrategy::Kind::fixed_paging:
            f.backing_level = vs.strategy().page_level;
            break;
          case PopulationStrategy::Kind::fixed_ledged:
            fail(f, Errc::trap);
            break;
        }
      }
      return true;
    }
    if (f.backing_level < 0) {  // pristine space: root is the niche
      f.backing_level = vs.strategy().kind == PopulationStrategy::Kind::fixed_paging
                            ? vs.strategy().page_level
                            : m();
    }
    if (L > f.backing_level) {
      t.put(x, virtual_stub(L));
      return true;
    }
    Address backing = 0;
    switch (acquire(f, L, backing)) {
      case Got::wait: return false;
      case Got::failed: fail(f, Errc::backing_failure); return true;
      case Got::yes: break;
    }
    t.put(x, backed_leaf(t, L, backing));
    f.access = {backing, L, y - x.base()};
    f.turn = L;
    return true;
  }

  void vtree_up(Flight& f) {
    const int L = f.stage;
    if (f.req.kind == Kind::vdestroy) return;
    BlockTree& t = spaces.at(f.req.handle).tree();
    if (f.req.kind == Kind::vtranslate) {
      settle(t, BlockId::containing(f.req.offset, L), L);
      return;
    }
    // vcreate of a fixed space
    touch(L, L);
    std::vector<BlockId> ids;
    for (const auto& [idx, node] : t.level(L)) ids.push_back({L, idx});
    for (const auto& id : ids) {
      const Node* node = t.find(id);
      if (f.failed) {
        if (node->leaf) release(*node->backing, L);
        t.erase(id);
      } else {
        settle(t, id, L);
      }
    }
  }

  // ---- tick -----------------------------------------------------------------

  bool act(Flight& f) {
    if (f.up) {
      if (is_vtree(f.req.kind)) {
        vtree_up(f);
      } else {
        rtree_up(f);
      }
      return true;
    }
    switch (f.req.kind) {
      case Kind::alloc: alloc_down(f); return true;
      case Kind::dealloc: dealloc_down(f); return true;
      default: return vtree_down(f);
    }
  }

  bool finished(const Flight& f) const {
    return f.acted && f.stage == n() && (f.up || f.turn == n());
  }

  void complete(Flight& f) {
    Response r;
    r.tag = f.req.tag;
    r.kind = f.req.kind;
    r.ok = !f.failed;
    r.error = f.error;
    r.level = f.req.level;
    r.base = f.req.kind == Kind::alloc ? f.base : f.req.base;
    r.handle = f.req.handle;
    r.access = f.access;
    r.admit_tick = f.req.admit_tick;
    r.complete_tick = now;
    r.internal = f.origin != Origin::external;
    if (f.req.kind == Kind::vtranslate && r.ok) r.level = f.access.level;
    if (f.req.kind == Kind::vdestroy || (f.req.kind == Kind::vcreate && f.failed)) {
      spaces.erase(f.req.handle);
    }
    switch (f.origin) {
      case Origin::external:
        if (r.ok) {
          ++metrics.completed;
        } else {
          ++metrics.rejected;
        }
        break;
      case Origin::refill:
        --refills_outstanding[f.req.level];
        if (r.ok) queues[f.req.level].push_back(f.base);
        break;
      case Origin::demand: {
        auto it = flights.find(f.owner);
        if (it != flights.end()) {
          if (r.ok) {
            it->second.granted = f.base;
          } else {
            it->second.demand_failed = true;
          }
        } else if (r.ok) {
          queues[f.req.level].push_back(f.base);
        }
        break;
      }
      case Origin::release: break;
    }
    metrics.responses.push_back(r);
    fresh.push_back(std::move(r));
  }

  void step_lanes(Lanes& lanes) {
    std::vector<std::uint64_t> order;
    for (int L = n(); L >= m(); --L) {
      if (auto it = lanes.up.find(L); it != lanes.up.end()) order.push_back(it->second);
    }
    for (int L = n(); L >= m(); --L) {
      if (auto it = lanes.down.find(L); it != lanes.down.end()) order.push_back(it->second);
    }
    for (auto id : order) {
      Flight& f = flights.at(id);
      if (f.acted) continue;
      if (act(f)) {
        f.acted = true;
      } else {
        ++metrics.stalled_ticks;
      }
    }
    for (auto id : order) {
      Flight& f = flights.at(id);
      if (!finished(f)) continue;
      (f.up ? lanes.up : lanes.down).erase(n());
      complete(f);
      flights.erase(id);
    }
    // Moves: ascending lane top-down, then descending lane bottom-up.
    for (int L = n() - 1; L >= m(); --L) {
      auto it = lanes.up.find(L);
      if (it == lanes.up.end()) continue;
      Flight& f = flights.at(it->second);
      if (!f.acted) continue;
      if (lanes.up.count(L + 1)) {
        ++metrics.stalled_ticks;
        continue;
      }
      lanes.up[L + 1] = f.id;
      lanes.up.erase(it);
      f.stage = L + 1;
      f.acted = false;
    }
    for (int L = m(); L <= n(); ++L) {
      auto it = lanes.down.find(L);
      if (it == lanes.down.end()) continue;
      Flight& f = flights.at(it->second);
      if (!f.acted) continue;
      if (f.turn == L) {
        if (L == n()) continue;  // completed above
        if (lanes.up.count(L + 1)) {
          ++metrics.stalled_ticks;
          continue;
        }
        lanes.up[L + 1] = f.id;
        f.up = true;
        f.stage = L + 1;
      } else {
        if (lanes.down.count(L - 1)) {
          ++metrics.stalled_ticks;
          continue;
        }
        lanes.down[L - 1] = f.id;
        f.stage = L - 1;
      }
      lanes.down.erase(L);
      f.acted = false;
    }
  }

  void tick() {
    ++now;
    step_lanes(rlanes);
    step_lanes(vlanes);
    for (const auto& [level, d] : depth) {
      if (d > 0) ++metrics.queue_occupancy[level][static_cast<int>(queues[level].size())];
    }
    metrics.ticks = now;
  }

  bool idle() const {
    if (!flights.empty()) return false;
    for (const auto& [l, q] : mux) {
      if (!q.empty()) return false;
    }
    return true;
  }

  // ---- multiplexer ------------------------------------------------------------

  void schedule_refills() {
    for (const auto& [level, d] : depth) {
      while (static_cast<int>(queues[level].size()) + refills_outstanding[level] < d) {
        PipelineRequest r;
        r.kind = Kind::alloc;
        r.level = level;
        r.tag = "refill";
        mux[level].push_back({r, Origin::refill, 0});
        ++refills_outstanding[level];
      }
    }
  }

  /// Round robin over levels with waiting items.
  std::optional<int> mux_head() const {
    const int span = n() - m() + 1;
    for (int i = 0; i < span; ++i) {
      const int level = m() + (mux_cursor - m() + i) % span;
      auto it = mux.find(level);
      if (it != mux.end() && !it->second.empty()) return level;
    }
    return std::nullopt;
  }

  Admission admit_mux(int level) {
    MuxItem& item = mux[level].front();
    const Admission a = admit_rtree(item.req, item.origin, item.owner);
    if (a == Admission::stalled) return a;
    if (a == Admission::rejected) {
      // Same bookkeeping as a failed completion.
      Flight f;
      f.req = item.req;
      f.req.admit_tick = now;
      f.origin = item.origin;
      f.owner = item.owner;
      f.failed = true;
      f.error = Errc::out_of_memory;
      complete(f);
    }
    mux[level].pop_front();
    const int span = n() - m() + 1;
    mux_cursor = m() + (level - m() + 1) % span;
    return a;
  }
};

PipelineSim::PipelineSim(SimConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}
PipelineSim::~PipelineSim() = default;
PipelineSim::PipelineSim(PipelineSim&&) noexcept = default;
PipelineSim& PipelineSim::operator=(PipelineSim&&) noexcept = default;

Admission PipelineSim::admit(const PipelineRequest& request) {
  if (Impl::is_vtree(request.kind)) return impl_->admit_vtree(request);
  return impl_->admit_rtree(request, Origin::external, 0);
}

void PipelineSim::tick() { impl_->tick(); }
bool PipelineSim::idle() const { return impl_->idle(); }
const BlockTree& PipelineSim::rtree() const { return impl_->tree; }

void PipelineSim::restore_rtree(BlockTree tree) {
  if (!impl_->idle() || !(tree.config() == impl_->config.geometry) ||
      tree.kind() != TreeKind::real) {
    throw GeomError(Errc::invalid_config, "rtree restore needs an idle pipeline and matching geometry");
  }
  impl_->tree = std::move(tree);
}
const std::map<SpaceHandle, VirtualSpace>& PipelineSim::spaces() const { return impl_->spaces; }
std::uint64_t PipelineSim::now() const { return impl_->now; }
const SimMetrics& PipelineSim::metrics() const { return impl_->metrics; }

std::map<int, std::size_t> PipelineSim::queue_sizes() const {
  std::map<int, std::size_t> out;
  for (const auto& [l, q] : impl_->queues) {
    if (!q.empty()) out[l] = q.size();
  }
  return out;
}

std::vector<Response> PipelineSim::take_responses() { return std::exchange(impl_->fresh, {}); }

SimMetrics PipelineSim::run(const std::vector<TraceOp>& workload) {
  Impl& s = *impl_;
  const auto& g = s.config.geometry;
  struct Queued {
    TraceOp op;
    std::uint64_t tick = 0;
  };
  std::deque<Queued> rq, vq;
  std::uint64_t at = 0;
  for (const auto& op : workload) {
    switch (op.kind) {
      case TraceOp::Kind::tick: at = op.tick; break;
      case TraceOp::Kind::alloc:
      case TraceOp::Kind::free: rq.push_back({op, at}); break;
      default: vq.push_back({op, at}); break;
    }
  }

  // alloc tag -> block once its response arrived; absent while in flight
  std::map<std::string, std::optional<BlockId>> blocks;
  std::map<std::string, SpaceHandle> handles;
  std::size_t seen = s.metrics.responses.size();

  auto immediate = [&](const TraceOp& op, Kind kind, Errc code) {
    Response r;
    r.tag = op.tag;
    r.kind = kind;
    r.ok = false;
    r.error = code;
    r.admit_tick = r.complete_tick = s.now;
    ++s.metrics.rejected;
    s.metrics.responses.push_back(r);
  };

  // Next external rtree request, resolving ops that fail without entering
  // the pipeline. Absent when nothing is ready this tick.
  auto rtree_head = [&]() -> std::optional<PipelineRequest> {
    while (!rq.empty() && rq.front().tick <= s.now) {
      const TraceOp& op = rq.front().op;
      PipelineRequest r;
      r.tag = op.tag;
      if (op.kind == TraceOp::Kind::alloc) {
        if (op.size == 0 || op.size > g.space_size()) {
          immediate(op, Kind::alloc, op.size == 0 ? Errc::invalid_size : Errc::too_large);
          rq.pop_front();
          continue;
        }
        r.kind = Kind::alloc;
        r.level = workload_level(op.size, g);
        return r;
      }
      auto it = blocks.find(op.tag);
      if (it == blocks.end()) {
        immediate(op, Kind::dealloc, Errc::invalid_free);
        rq.pop_front();
        continue;
      }
      if (!it->second) return std::nullopt;  // alloc still in flight
      r.kind = Kind::dealloc;
      r.level = it->second->level;
      r.base = it->second->base();
      return r;
    }
    return std::nullopt;
  };

  auto vtree_head = [&]() -> std::optional<PipelineRequest> {
    while (!vq.empty() && vq.front().tick <= s.now) {
      const TraceOp& op = vq.front().op;
      PipelineRequest r;
      r.tag = op.tag;
      if (op.kind == TraceOp::Kind::vspace) {
        r.kind = Kind::vcreate;
        r.strategy = op.strategy;
        r.size = op.size;
        return r;
      }
      r.kind = op.kind == TraceOp::Kind::access ? Kind::vtranslate : Kind::vdestroy;
      r.offset = op.offset;
      auto it = handles.find(op.tag);
      if (it == handles.end()) {
        immediate(op, r.kind, Errc::invalid_handle);
        vq.pop_front();
        continue;
      }
      r.handle = it->second;
      return r;
    }
    return std::nullopt;
  };

  bool prefer_external = true;
  std::optional<Kind> barrier;  // kind held back by alloc/dealloc exclusion
  bool draining = false;

  auto opposite_in_flight = [&](Kind k) {
    return s.in_flight(k == Kind::alloc ? Kind::dealloc : Kind::alloc);
  };

  while (s.now < s.config.max_ticks) {
    const bool external_done = rq.empty() && vq.empty();
    if (external_done && s.idle()) {
      if (draining) {
        s.metrics.drained = true;
        break;
      }
      draining = true;
      for (auto& [level, q] : s.queues) {
        for (Address b : q) s.release(b, level);
        q.clear();
      }
      continue;
    }
    if (!external_done) s.schedule_refills();

    if (barrier) {
      // Drop the barrier once nothing of its kind is waiting.
      const auto ext = rtree_head();
      const auto lvl = s.mux_head();
      const bool waiting = (ext && ext->kind == *barrier) ||
                           (lvl && s.mux[*lvl].front().req.kind == *barrier);
      if (!waiting) barrier.reset();
    }

    // rtree entry stage: external requests and the multiplexer take turns.
    bool admitted = false;
    for (int attempt = 0; attempt < 2 && !admitted; ++attempt) {
      const bool external = (attempt == 0) == prefer_external;
      if (external) {
        auto head = rtree_head();
        if (!head) continue;
        if (barrier && head->kind != *barrier) {
          ++s.metrics.stalled_ticks;
          continue;
        }
        const Admission a = s.admit_rtree(*head, Origin::external, 0);
        if (a == Admission::stalled) {
          ++s.metrics.stalled_ticks;
          if (opposite_in_flight(head->kind)) barrier = head->kind;
          continue;
        }
        const TraceOp op = rq.front().op;
        rq.pop_front();
        // A rejected head is settled too; holding the barrier for it would
        // block the other kind for good.
        if (barrier == head->kind) barrier.reset();
        if (a == Admission::rejected) {
          immediate(op, head->kind, head->kind == Kind::alloc ? Errc::out_of_memory
                                                               : Errc::invalid_free);
        } else {
          if (head->kind == Kind::alloc) {
            blocks[op.tag] = std::nullopt;
          } else {
            blocks.erase(op.tag);
          }
          admitted = true;
        }
      } else {
        const auto level = s.mux_head();
        if (!level) continue;
        const Kind k = s.mux[*level].front().req.kind;
        if (barrier && k != *barrier) {
          ++s.metrics.stalled_ticks;
          continue;
        }
        const Admission a = s.admit_mux(*level);
        if (a == Admission::stalled) {
          ++s.metrics.stalled_ticks;
          if (opposite_in_flight(k)) barrier = k;
          continue;
        }
        if (barrier == k) barrier.reset();
        if (a == Admission::accepted) admitted = true;
      }
    }
    prefer_external = !prefer_external;

    if (auto head = vtree_head()) {
      SpaceHandle h;
      const Admission a = s.admit_vtree(*head, &h);
      if (a == Admission::stalled) {
        ++s.metrics.stalled_ticks;
      } else {
        const TraceOp op = vq.front().op;
        vq.pop_front();
        if (a == Admission::rejected) {
          immediate(op, head->kind, head->kind == Kind::vcreate ? Errc::invalid_size
                                                                 : Errc::invalid_handle);
        } else if (head->kind == Kind::vcreate) {
          handles[op.tag] = h;
        } else if (head->kind == Kind::vdestroy) {
          handles.erase(op.tag);
        }
      }
    }

    s.tick();
    for (; seen < s.metrics.responses.size(); ++seen) {
      const Response& r = s.metrics.responses[seen];
      if (r.internal) continue;
      if (r.kind == Kind::alloc) {
        if (r.ok) {
          blocks[r.tag] = BlockId::containing(r.base, r.level);
        } else {
          blocks.erase(r.tag);
        }
      } else if (r.kind == Kind::vcreate && !r.ok) {
        handles.erase(r.tag);
      }
    }
  }
  s.fresh.clear();
  return s.metrics;
}

}  // namespace geom
