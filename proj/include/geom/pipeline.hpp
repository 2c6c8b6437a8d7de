#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "geom/rtree.hpp"
#include "geom/trace.hpp"
#include "geom/vtree.hpp"

namespace geom {

// Discrete-tick model of the pipelined allocator and mapper.
//
// Each pipeline has one stage per level n..m. A stage holds at most one
// descending and one ascending request. A request descends one level per
// tick, turns around at its target level and ascends back to the root,
// refreshing one node per tick. A stage acting for level L reads or writes
// nodes of levels L and L-1 only; every node access is audited.

struct PipelineRequest {
  enum class Kind { alloc, dealloc, vcreate, vdestroy, vtranslate };
  Kind kind = Kind::alloc;
  std::string tag;
  int level = 0;          // alloc, dealloc
  Address base = 0;       // dealloc
  PopulationStrategy strategy;  // vcreate
  Address size = 0;       // vcreate
  SpaceHandle handle;     // vdestroy, vtranslate
  Address offset = 0;     // vtranslate
  std::uint64_t admit_tick = 0;
};

std::string_view request_kind_name(PipelineRequest::Kind kind);

enum class Admission { accepted, rejected, stalled };

struct Response {
  std::string tag;
  PipelineRequest::Kind kind = PipelineRequest::Kind::alloc;
  bool ok = true;
  std::optional<Errc> error;
  Address base = 0;      // alloc: block base
  int level = 0;         // alloc / dealloc level; vtranslate: leaf level (prefetch hint)
  SpaceHandle handle;    // vcreate
  AccessResult access;   // vtranslate
  std::uint64_t admit_tick = 0;
  std::uint64_t complete_tick = 0;
  bool internal = false;  // issued by the vtree-to-rtree multiplexer
};

struct SimConfig {
  GeometryConfig geometry;
  PlacementPolicy policy;
  /// Prealloc queue depth per level. Levels above n/2 are always 0.
  std::map<int, int> prealloc_depth;
  std::uint64_t max_ticks = 1'000'000;
};

struct SimMetrics {
  std::uint64_t ticks = 0;
  std::uint64_t completed = 0;
  std::uint64_t rejected = 0;
  /// Request-ticks without progress: admission stalls, blocked moves and
  /// stages waiting for backing.
  std::uint64_t stalled_ticks = 0;
  /// level -> occupancy -> ticks observed
  std::map<int, std::map<int, std::uint64_t>> queue_occupancy;
  /// Admitted allocations whose descent found no niche.
  std::uint64_t spurious_failures = 0;
  std::uint64_t locality_violations = 0;
  bool drained = false;
  std::vector<Response> responses;
};

nlohmann::ordered_json metrics_json(const SimMetrics& metrics);

class PipelineSim {
 public:
  explicit PipelineSim(SimConfig config);
  ~PipelineSim();
  PipelineSim(PipelineSim&&) noexcept;
  PipelineSim& operator=(PipelineSim&&) noexcept;

  /// Tries to place an external request in the entry stage of its pipeline
  /// for the next tick. Rejection means the request can never succeed in the
  /// current state (true out-of-memory, bad arguments); stalled means retry.
  Admission admit(const PipelineRequest& request);

  /// Advances every in-flight request by one stage step.
  void tick();

  /// Nothing in flight, nothing waiting in the multiplexer.
  bool idle() const;

  /// Drives a workload (trace ops plus "@tick t" directives) until it
  /// drains or max_ticks elapse, then returns prealloc blocks to the rtree.
  SimMetrics run(const std::vector<TraceOp>& workload);

  const BlockTree& rtree() const;
  /// Replaces the real tree; only while idle. Throws invalid_config otherwise.
  void restore_rtree(BlockTree tree);
  const std::map<SpaceHandle, VirtualSpace>& spaces() const;
  /// Blocks currently parked in prealloc queues, by level.
  std::map<int, std::size_t> queue_sizes() const;
  std::uint64_t now() const;
  const SimMetrics& metrics() const;
  /// Responses produced since the last call.
  std::vector<Response> take_responses();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Random mixed workload: allocs at mixed levels, frees of earlier allocs,
/// injected at random ticks. Deterministic in `seed`.
struct WorkloadSpec {
  GeometryConfig geometry;
  std::size_t requests = 100;
  std::uint64_t max_gap = 3;      // ticks between injection points
  double free_fraction = 0.4;
  bool with_spaces = false;       // add vspace/access/vdestroy ops
};

std::vector<TraceOp> random_workload(const WorkloadSpec& spec, std::uint64_t seed);

/// Maps a workload alloc size to the level of its enclosing block.
int workload_level(Address size, const GeometryConfig& config);

}  // namespace geom
