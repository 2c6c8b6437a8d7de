#include "geom/differential.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

namespace geom {

std::string tree_free_ranges(const BlockTree& tree) {
  std::ostringstream os;
  bool first = true;
  std::optional<Extent> run;
  auto flush = [&] {
    if (!run) return;
    os << (first ? "" : " ") << hex(run->base) << "-" << hex(run->end() - 1);
    first = false;
    run.reset();
  };
  for (const auto& n : tree.niches()) {
    if (run && run->end() == n.base()) {
      run->size += n.size();
    } else {
      flush();
      run = Extent{n.base(), n.size()};
    }
  }
  flush();
  return os.str();
}

namespace {

class Harness {
 public:
  explicit Harness(const FuzzConfig& config)
      : config_(config), runner_(config.run), model_(config.run.geometry) {
    runner_.manager().rtree().set_fault(config.fault);
    niches_ = model_.canonical_niches();
  }

  /// Returns false once a failure has been recorded.
  bool step(const TraceOp& op, bool lenient) {
    if (op.kind == TraceOp::Kind::free && !runner_.has_chunk(op.tag)) {
      if (lenient) return true;
    }
    result_.trace.push_back(op);
    try {
      check(op);
    } catch (const OracleViolation& e) {
      fail(e.what());
    } catch (const GeomError& e) {
      fail(std::string(errc_name(e.code())) + ": " + e.what());
    } catch (const TraceError& e) {
      fail(e.what());
    }
    return result_.ok();
  }

  bool live(const std::string& tag) const { return runner_.has_chunk(tag); }

  DiffResult finish() {
    result_.allocator_ooms = runner_.events().oom;
    result_.stats = runner_.stats_json();
    return std::move(result_);
  }

 private:
  void fail(const std::string& message) {
    DiffFailure f;
    f.op_index = result_.trace.size() - 1;
    f.message = message;
    f.allocator_free = tree_free_ranges(runner_.rtree().tree());
    f.oracle_free = model_.free_ranges();
    result_.failure = std::move(f);
  }

  void check(const TraceOp& op) {
    const auto& cfg = config_.run.geometry;
    if (op.kind == TraceOp::Kind::alloc) {
      std::optional<BlockId> fit;
      const std::vector<BlockId> before = niches_;
      const bool valid_size = op.size >= 1 && op.size <= cfg.space_size();
      if (valid_size) {
        const auto plan = ledge_decompose(op.size, cfg, config_.run.max_pieces);
        fit = ByteModel::best_fit_among(before, plan.total());
      }
      const OpOutcome out = runner_.apply(op);
      if (!out.ok) {
        if (out.error == Errc::out_of_memory && fit) {
          ++result_.oom_mismatches;
          throw OracleViolation("allocator out-of-memory but oracle has niche L" +
                                std::to_string(fit->level) + "@" + hex(fit->base()));
        }
      } else {
        try {
          model_.apply({OracleOp::Kind::alloc, out.chunk, out.pieces});
        } catch (const OracleViolation& e) {
          if (std::string_view(e.what()).find("misaligned") != std::string_view::npos) {
            ++result_.alignment_violations;
          }
          throw;
        }
        if (!fit) {
          ++result_.oom_mismatches;
          throw OracleViolation("allocator placed a chunk where the oracle has no niche");
        }
        auto host = std::find_if(before.begin(), before.end(), [&](const BlockId& n) {
          return n.base() <= out.chunk.base && out.chunk.end() <= n.end();
        });
        if (host == before.end() || host->level != fit->level) {
          throw OracleViolation("chunk at " + hex(out.chunk.base) +
                                " not placed in a best-fit niche of level " +
                                std::to_string(fit->level));
        }
      }
    } else if (op.kind == TraceOp::Kind::free) {
      const OpOutcome out = runner_.apply(op);
      model_.apply({OracleOp::Kind::free, out.chunk, {}});
    } else {
      runner_.apply(op);
    }

    const auto tree_niches = runner_.rtree().tree().niches();
    niches_ = model_.canonical_niches();
    if (tree_niches != niches_) {
      ++result_.niche_mismatches;
      throw OracleViolation("niche sets differ: tree {" + niche_listing(tree_niches) +
                            "} oracle {" + niche_listing(niches_) + "}");
    }
    if (config_.validate_tree) runner_.rtree().tree().validate();
  }

  FuzzConfig config_;
  TraceRunner runner_;
  ByteModel model_;
  std::vector<BlockId> niches_;  // oracle niches after the last checked op
  DiffResult result_;
};

std::uint64_t draw(std::mt19937_64& rng, std::uint64_t bound) { return bound ? rng() % bound : 0; }

}  // namespace

DiffResult run_fuzz(const FuzzConfig& config) {
  Harness h(config);
  std::mt19937_64 rng(config.seed);
  const auto& g = config.run.geometry;
  std::vector<std::string> live;
  std::uint64_t next_tag = 0;
  const int span = std::max(1, g.height_bits - g.min_level - 1);
  for (std::uint64_t i = 0; i < config.ops; ++i) {
    TraceOp op;
    op.line = i + 1;
    const bool do_alloc = live.empty() || draw(rng, 100) < 55;
    if (do_alloc) {
      op.kind = TraceOp::Kind::alloc;
      op.tag = "t" + std::to_string(next_tag++);
      int level = g.min_level + static_cast<int>(draw(rng, static_cast<std::uint64_t>(span)));
      if (draw(rng, 64) == 0) {
        level = g.min_level + static_cast<int>(draw(rng, static_cast<std::uint64_t>(g.height_bits - g.min_level + 1)));
      }
      const Address block = Address{1} << level;
      op.size = draw(rng, 2) == 0 ? block : 1 + draw(rng, block);
    } else {
      const auto idx = static_cast<std::size_t>(draw(rng, live.size()));
      op.kind = TraceOp::Kind::free;
      op.tag = live[idx];
      live[idx] = live.back();
      live.pop_back();
    }
    if (!h.step(op, false)) break;
    if (do_alloc && h.live(op.tag)) live.push_back(op.tag);
  }
  return h.finish();
}

DiffResult run_differential(const FuzzConfig& config, const std::vector<TraceOp>& trace) {
  Harness h(config);
  for (const auto& op : trace) {
    if (!h.step(op, true)) break;
  }
  return h.finish();
}

std::vector<TraceOp> minimize_counterexample(const FuzzConfig& config,
                                             std::vector<TraceOp> trace,
                                             std::size_t max_replays) {
  std::size_t replays = 0;
  auto fails = [&](const std::vector<TraceOp>& t) {
    ++replays;
    return !run_differential(config, t).ok();
  };
  {
    auto r = run_differential(config, trace);
    if (r.ok()) return trace;
    trace = r.trace;  // drop everything after the failing op
  }
  auto tags_of = [](const std::vector<TraceOp>& t) {
    std::vector<std::string> tags;
    for (const auto& op : t) {
      if (op.kind == TraceOp::Kind::alloc) tags.push_back(op.tag);
    }
    return tags;
  };
  auto without = [](const std::vector<TraceOp>& t, const std::set<std::string>& drop) {
    std::vector<TraceOp> out;
    for (const auto& op : t) {
      if (!drop.count(op.tag)) out.push_back(op);
    }
    return out;
  };

  // Drop groups of allocation tags (with their frees), halving the group size.
  std::size_t group = std::max<std::size_t>(1, tags_of(trace).size() / 2);
  while (replays < max_replays) {
    const auto tags = tags_of(trace);
    bool progress = false;
    for (std::size_t start = 0; start < tags.size() && replays < max_replays; start += group) {
      std::set<std::string> drop(tags.begin() + static_cast<std::ptrdiff_t>(start),
                                 tags.begin() + static_cast<std::ptrdiff_t>(std::min(tags.size(), start + group)));
      auto candidate = without(trace, drop);
      if (candidate.size() < trace.size() && fails(candidate)) {
        trace = run_differential(config, candidate).trace;
        progress = true;
        break;
      }
    }
    if (!progress) {
      if (group == 1) break;
      group = std::max<std::size_t>(1, group / 2);
    }
  }
  return trace;
}

std::string counterexample_dump(const FuzzConfig& config, const std::vector<TraceOp>& trace,
                                const DiffFailure& failure) {
  const auto& g = config.run.geometry;
  std::ostringstream os;
  os << "# counterexample n=" << g.height_bits << " m=" << g.min_level << " w=" << g.counter_bits
     << " policy=" << policy_name(config.run.policy.kind) << " seed=" << config.seed << "\n";
  os << "# failure at op " << failure.op_index + 1 << ": " << failure.message << "\n";
  os << format_trace(trace);
  os << "# allocator free set: " << failure.allocator_free << "\n";
  os << "# oracle free set: " << failure.oracle_free << "\n";
  return os.str();
}

}  // namespace geom
