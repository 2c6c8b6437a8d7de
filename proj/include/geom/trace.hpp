#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "geom/oracle.hpp"
#include "geom/rtree.hpp"
#include "geom/vtree.hpp"

namespace geom {

// Trace grammar, one op per line, '#' starts a comment line:
//
//   alloc <tag> <size>
//   free <tag>
//   vspace <tag> <doubling|fixed|paging:<bits>> <size>
//   vdestroy <tag>
//   access <tag> <offset>
//   @tick <t>                (workload files only)
//
// Sizes and offsets accept decimal or 0x-prefixed hex.

struct TraceOp {
  enum class Kind { alloc, free, vspace, vdestroy, access, tick };
  Kind kind = Kind::alloc;
  std::string tag;
  Address size = 0;    // alloc, vspace
  Address offset = 0;  // access
  PopulationStrategy strategy;
  std::uint64_t tick = 0;
  std::size_t line = 0;
};

/// Invalid trace content; carries the 1-based line number.
class TraceError : public std::runtime_error {
 public:
  TraceError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

std::vector<TraceOp> parse_trace(std::istream& in, bool allow_tick = false);
std::vector<TraceOp> parse_trace_file(const std::string& path, bool allow_tick = false);
std::string format_op(const TraceOp& op);
std::string format_trace(const std::vector<TraceOp>& ops);

struct RunConfig {
  GeometryConfig geometry;
  PlacementPolicy policy;
  std::optional<int> max_pieces;
  bool time_series = false;
  bool paranoid = false;
};

struct Events {
  std::uint64_t ops = 0;
  std::uint64_t oom = 0;
  std::uint64_t traps = 0;
  std::uint64_t invalid_ops = 0;
};

/// What applying one op did, for harnesses that check every step.
struct OpOutcome {
  bool ok = true;
  std::optional<Errc> error;
  Extent chunk;                // alloc / free: the chunk extent
  std::vector<Extent> pieces;  // alloc / free: placement as reported by the allocator
};

/// Applies trace ops to one allocator plus a space manager sharing it.
///
/// Allocation failures, traps and out-of-range accesses are recorded as
/// events. Unknown or duplicate tags throw TraceError; broken tree
/// invariants surface as GeomError(structural).
class TraceRunner {
 public:
  explicit TraceRunner(RunConfig config);

  OpOutcome apply(const TraceOp& op);
  void run(const std::vector<TraceOp>& ops);

  SpaceManager& manager() { return manager_; }
  const SpaceManager& manager() const { return manager_; }
  const Allocator& rtree() const { return manager_.rtree(); }
  const Events& events() const { return events_; }
  const RunConfig& config() const { return config_; }
  const std::map<std::string, Extent>& chunks() const { return chunks_; }
  bool has_chunk(const std::string& tag) const { return chunks_.count(tag) != 0; }

  /// Stats document; keys are listed in README.md and pinned by tests.
  nlohmann::ordered_json stats_json() const;

 private:
  RunConfig config_;
  SpaceManager manager_;
  std::map<std::string, Extent> chunks_;          // tag -> (base, requested size)
  std::map<std::string, SpaceHandle> spaces_;
  Events events_;
  nlohmann::ordered_json series_ = nlohmann::ordered_json::array();
};

PlacementPolicy parse_policy(const std::string& name, std::uint64_t seed);

}  // namespace geom
