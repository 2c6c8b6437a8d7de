#include "geom/trace.hpp"

#include <fstream>
#include <sstream>

namespace geom {

namespace {

std::vector<Extent> to_extents(const std::vector<BlockId>& blocks) {
  std::vector<Extent> out;
  for (const auto& b : blocks) out.push_back({b.base(), b.size()});
  return out;
}

// Placement of a freshly allocated chunk. A single-piece chunk is reported
// as-is even when the tree does not hold it as one leaf, so a broken
// allocator's placement still reaches the oracle.
std::vector<Extent> reported_pieces(const Allocator& rt, const LedgePlan& plan, Address base,
                                    Address size, std::optional<int> max_pieces) {
  try {
    return to_extents(rt.chunk_leaves(base, size, max_pieces));
  } catch (const GeomError&) {
    if (plan.pieces.size() != 1) throw;
    return {Extent{base, plan.total()}};
  }
}

Address parse_amount(const std::string& s, std::size_t line, const char* what) {
  std::size_t pos = 0;
  Address v = 0;
  try {
    if (s.empty() || s[0] == '-') throw std::invalid_argument(s);
    v = std::stoull(s, &pos, 0);
  } catch (const std::exception&) {
    throw TraceError(line, std::string("bad ") + what + " '" + s + "'");
  }
  if (pos != s.size()) throw TraceError(line, std::string("bad ") + what + " '" + s + "'");
  return v;
}

PopulationStrategy parse_strategy(const std::string& s, std::size_t line) {
  if (s == "doubling") return PopulationStrategy::doubling();
  if (s == "fixed") return PopulationStrategy::fixed_ledged(0);
  if (s.rfind("paging:", 0) == 0) {
    return PopulationStrategy::fixed_paging(
        static_cast<int>(parse_amount(s.substr(7), line, "page bits")));
  }
  throw TraceError(line, "unknown population strategy '" + s + "'");
}

}  // namespace

std::vector<TraceOp> parse_trace(std::istream& in, bool allow_tick) {
  std::vector<TraceOp> ops;
  std::string text;
  for (std::size_t lineno = 1; std::getline(in, text); ++lineno) {
    std::istringstream ls(text);
    std::vector<std::string> t;
    for (std::string tok; ls >> tok;) t.push_back(tok);
    if (t.empty() || t[0][0] == '#') continue;
    TraceOp op;
    op.line = lineno;
    const std::string& verb = t[0];
    auto arity = [&](std::size_t n) {
      if (t.size() != n) {
        throw TraceError(lineno, "'" + verb + "' takes " + std::to_string(n - 1) + " arguments");
      }
    };
    if (verb == "alloc") {
      arity(3);
      op.kind = TraceOp::Kind::alloc;
      op.tag = t[1];
      op.size = parse_amount(t[2], lineno, "size");
    } else if (verb == "free") {
      arity(2);
      op.kind = TraceOp::Kind::free;
      op.tag = t[1];
    } else if (verb == "vspace") {
      arity(4);
      op.kind = TraceOp::Kind::vspace;
      op.tag = t[1];
      op.strategy = parse_strategy(t[2], lineno);
      op.size = parse_amount(t[3], lineno, "size");
      if (op.strategy.kind == PopulationStrategy::Kind::fixed_ledged) {
        op.strategy.fixed_size = op.size;
      }
    } else if (verb == "vdestroy") {
      arity(2);
      op.kind = TraceOp::Kind::vdestroy;
      op.tag = t[1];
    } else if (verb == "access") {
      arity(3);
      op.kind = TraceOp::Kind::access;
      op.tag = t[1];
      op.offset = parse_amount(t[2], lineno, "offset");
    } else if (verb == "@tick" && allow_tick) {
      arity(2);
      op.kind = TraceOp::Kind::tick;
      op.tick = parse_amount(t[1], lineno, "tick");
    } else {
      throw TraceError(lineno, "unknown op '" + verb + "'");
    }
    ops.push_back(std::move(op));
  }
  return ops;
}

std::vector<TraceOp> parse_trace_file(const std::string& path, bool allow_tick) {
  std::ifstream in(path);
  if (!in) throw TraceError(0, "cannot open '" + path + "'");
  return parse_trace(in, allow_tick);
}

std::string format_op(const TraceOp& op) {
  std::ostringstream os;
  switch (op.kind) {
    case TraceOp::Kind::alloc: os << "alloc " << op.tag << " " << op.size; break;
    case TraceOp::Kind::free: os << "free " << op.tag; break;
    case TraceOp::Kind::vspace:
      os << "vspace " << op.tag << " ";
      if (op.strategy.kind == PopulationStrategy::Kind::fixed_paging) {
        os << "paging:" << op.strategy.page_level;
      } else {
        os << strategy_name(op.strategy.kind);
      }
      os << " " << op.size;
      break;
    case TraceOp::Kind::vdestroy: os << "vdestroy " << op.tag; break;
    case TraceOp::Kind::access: os << "access " << op.tag << " " << op.offset; break;
    case TraceOp::Kind::tick: os << "@tick " << op.tick; break;
  }
  return os.str();
}

std::string format_trace(const std::vector<TraceOp>& ops) {
  std::string out;
  for (const auto& op : ops) out += format_op(op) + "\n";
  return out;
}

PlacementPolicy parse_policy(const std::string& name, std::uint64_t seed) {
  if (name == "leftmost") return PlacementPolicy::leftmost();
  if (name == "rightmost") return PlacementPolicy::rightmost();
  if (name == "random") return PlacementPolicy::random(seed);
  throw GeomError(Errc::invalid_config, "unknown policy '" + name + "'");
}

TraceRunner::TraceRunner(RunConfig config)
    : config_(config), manager_(config.geometry, config.policy) {
  manager_.rtree().set_paranoid(config.paranoid);
  manager_.set_paranoid(config.paranoid);
}

OpOutcome TraceRunner::apply(const TraceOp& op) {
  OpOutcome out;
  auto fail = [&](Errc code) {
    out.ok = false;
    out.error = code;
  };
  auto live_space = [&]() -> SpaceHandle {
    auto it = spaces_.find(op.tag);
    if (it == spaces_.end()) throw TraceError(op.line, "unknown space tag '" + op.tag + "'");
    return it->second;
  };
  auto fresh_tag = [&] {
    if (chunks_.count(op.tag) || spaces_.count(op.tag)) {
      throw TraceError(op.line, "tag '" + op.tag + "' is already live");
    }
  };

  Allocator& rt = manager_.rtree();
  switch (op.kind) {
    case TraceOp::Kind::tick:
      return out;
    case TraceOp::Kind::alloc: {
      fresh_tag();
      try {
        const LedgePlan plan = ledge_decompose(op.size, config_.geometry, config_.max_pieces);
        const Address base = rt.alloc_chunk(op.size, config_.max_pieces);
        chunks_[op.tag] = {base, op.size};
        out.chunk = {base, plan.total()};
        out.pieces = reported_pieces(rt, plan, base, op.size, config_.max_pieces);
      } catch (const GeomError& e) {
        if (e.code() == Errc::out_of_memory) {
          ++events_.oom;
        } else if (e.code() == Errc::invalid_size || e.code() == Errc::too_large) {
          ++events_.invalid_ops;
        } else {
          throw;
        }
        fail(e.code());
      }
      break;
    }
    case TraceOp::Kind::free: {
      auto it = chunks_.find(op.tag);
      if (it == chunks_.end()) throw TraceError(op.line, "unknown chunk tag '" + op.tag + "'");
      const Extent c = it->second;
      const LedgePlan plan = ledge_decompose(c.size, config_.geometry, config_.max_pieces);
      out.pieces = to_extents(rt.chunk_leaves(c.base, c.size, config_.max_pieces));
      out.chunk = {c.base, plan.total()};
      rt.free_chunk(c.base, c.size, config_.max_pieces);
      chunks_.erase(it);
      break;
    }
    case TraceOp::Kind::vspace: {
      fresh_tag();
      try {
        spaces_[op.tag] = manager_.create_space(op.strategy, op.size);
      } catch (const GeomError& e) {
        if (e.code() == Errc::backing_failure) {
          ++events_.oom;
        } else if (e.code() == Errc::invalid_size || e.code() == Errc::too_large) {
          ++events_.invalid_ops;
        } else {
          throw;
        }
        fail(e.code());
      }
      break;
    }
    case TraceOp::Kind::vdestroy: {
      manager_.destroy_space(live_space());
      spaces_.erase(op.tag);
      break;
    }
    case TraceOp::Kind::access: {
      const SpaceHandle h = live_space();
      try {
        manager_.access(h, op.offset);
      } catch (const GeomError& e) {
        switch (e.code()) {
          case Errc::trap: ++events_.traps; break;
          case Errc::backing_failure: ++events_.oom; break;
          case Errc::out_of_bounds: ++events_.invalid_ops; break;
          default: throw;
        }
        fail(e.code());
      }
      break;
    }
  }
  ++events_.ops;
  if (config_.time_series) {
    const auto s = rt.stats();
    series_.push_back({{"op", events_.ops},
                       {"bytes_allocated", s.bytes_allocated},
                       {"bytes_free", s.bytes_free}});
  }
  return out;
}

void TraceRunner::run(const std::vector<TraceOp>& ops) {
  for (const auto& op : ops) apply(op);
}

nlohmann::ordered_json TraceRunner::stats_json() const {
  using nlohmann::ordered_json;
  const auto& g = config_.geometry;
  const auto s = rtree().stats();
  ordered_json doc;
  doc["schema"] = "geomalloc-stats/1";
  doc["config"] = {{"n", g.height_bits},
                   {"m", g.min_level},
                   {"w", g.counter_bits},
                   {"policy", std::string(policy_name(config_.policy.kind))},
                   {"seed", config_.policy.seed},
                   {"max_pieces", config_.max_pieces ? ordered_json(*config_.max_pieces)
                                                     : ordered_json(nullptr)}};
  ordered_json hist = ordered_json::object();
  for (const auto& [level, count] : s.niche_histogram) hist[std::to_string(level)] = count;
  doc["allocator"] = {{"bytes_allocated", s.bytes_allocated},
                      {"bytes_free", s.bytes_free},
                      {"niche_histogram", hist},
                      {"node_count", s.node_count},
                      {"alloc_count", s.alloc_count},
                      {"free_count", s.free_count},
                      {"oom_count", s.oom_count}};
  ordered_json spaces = ordered_json::object();
  for (const auto& [tag, h] : spaces_) {
    const auto& vs = manager_.space(h);
    spaces[tag] = {{"strategy", std::string(strategy_name(vs.strategy().kind))},
                   {"backed_bytes", vs.backed_bytes()},
                   {"node_count", vs.tree().node_count()}};
  }
  doc["spaces"] = spaces;
  doc["events"] = {{"ops", events_.ops},
                   {"oom", events_.oom},
                   {"traps", events_.traps},
                   {"invalid_ops", events_.invalid_ops}};
  if (config_.time_series) doc["series"] = series_;
  return doc;
}

}  // namespace geom
