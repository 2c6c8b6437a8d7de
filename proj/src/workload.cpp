#include <algorithm>

#include "geom/pipeline.hpp"

namespace geom {

int workload_level(Address size, const GeometryConfig& config) {
  return std::max(config.min_level, ceil_log2(size));
}

std::vector<TraceOp> random_workload(const WorkloadSpec& spec, std::uint64_t seed) {
  const auto& g = spec.geometry;
  std::mt19937_64 rng(seed);
  auto draw = [&](std::uint64_t bound) { return bound ? rng() % bound : 0; };
  auto chance = [&](double p) { return static_cast<double>(draw(1'000'000)) < p * 1e6; };

  std::vector<TraceOp> ops;
  std::vector<std::string> live, spaces;
  std::uint64_t tick = 0, next = 0;
  const auto span = static_cast<std::uint64_t>(g.height_bits - g.min_level);
  for (std::size_t i = 0; i < spec.requests; ++i) {
    const std::uint64_t gap = draw(spec.max_gap + 1);
    if (gap) {
      tick += gap;
      TraceOp t;
      t.kind = TraceOp::Kind::tick;
      t.tick = tick;
      ops.push_back(t);
    }
    TraceOp op;
    if (spec.with_spaces && chance(0.25)) {
      if (spaces.empty() || chance(0.2)) {
        op.kind = TraceOp::Kind::vspace;
        op.tag = "v" + std::to_string(next++);
        switch (draw(3)) {
          case 0: op.strategy = PopulationStrategy::doubling(); break;
          case 1:
            op.strategy = PopulationStrategy::fixed_paging(
                g.min_level + static_cast<int>(draw(span / 2 + 1)));
            break;
          default:
            op.size = 1 + draw(g.space_size() / 8);
            op.strategy = PopulationStrategy::fixed_ledged(op.size);
            break;
        }
        spaces.push_back(op.tag);
      } else if (chance(0.1)) {
        const auto idx = static_cast<std::size_t>(draw(spaces.size()));
        op.kind = TraceOp::Kind::vdestroy;
        op.tag = spaces[idx];
        spaces.erase(spaces.begin() + static_cast<std::ptrdiff_t>(idx));
      } else {
        op.kind = TraceOp::Kind::access;
        op.tag = spaces[static_cast<std::size_t>(draw(spaces.size()))];
        op.offset = draw(g.space_size() / 4);
      }
    } else if (!live.empty() && chance(spec.free_fraction)) {
      const auto idx = static_cast<std::size_t>(draw(live.size()));
      op.kind = TraceOp::Kind::free;
      op.tag = live[idx];
      live[idx] = live.back();
      live.pop_back();
    } else {
      op.kind = TraceOp::Kind::alloc;
      op.tag = "a" + std::to_string(next++);
      const int level = g.min_level + static_cast<int>(std::min(draw(span + 1), draw(span + 1)));
      op.size = 1 + draw(Address{1} << level);
      live.push_back(op.tag);
    }
    op.line = ops.size() + 1;
    ops.push_back(op);
  }
  return ops;
}

nlohmann::ordered_json metrics_json(const SimMetrics& mt) {
  using nlohmann::ordered_json;
  ordered_json doc;
  doc["schema"] = "geomalloc-sim/1";
  doc["ticks"] = mt.ticks;
  doc["completed"] = mt.completed;
  doc["rejected"] = mt.rejected;
  doc["stalled_ticks"] = mt.stalled_ticks;
  doc["spurious_failures"] = mt.spurious_failures;
  doc["locality_violations"] = mt.locality_violations;
  doc["drained"] = mt.drained;
  ordered_json occ = ordered_json::object();
  for (const auto& [level, hist] : mt.queue_occupancy) {
    ordered_json h = ordered_json::object();
    for (const auto& [k, v] : hist) h[std::to_string(k)] = v;
    occ[std::to_string(level)] = h;
  }
  doc["queue_occupancy"] = occ;
  ordered_json rs = ordered_json::array();
  for (const auto& r : mt.responses) {
    ordered_json j;
    j["tag"] = r.tag;
    j["kind"] = std::string(request_kind_name(r.kind));
    j["ok"] = r.ok;
    j["error"] = r.error ? ordered_json(std::string(errc_name(*r.error))) : ordered_json(nullptr);
    j["base"] = r.base;
    j["level"] = r.level;
    j["admit_tick"] = r.admit_tick;
    j["complete_tick"] = r.complete_tick;
    j["internal"] = r.internal;
    rs.push_back(j);
  }
  doc["responses"] = rs;
  return doc;
}

}  // namespace geom
