#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geom/oracle.hpp"
#include "geom/trace.hpp"

namespace geom {

struct FuzzConfig {
  RunConfig run;
  std::uint64_t ops = 0;
  std::uint64_t seed = 0;
  FaultInjection fault = FaultInjection::none;
  /// Run BlockTree::validate after every op (costly at n = 16).
  bool validate_tree = false;
};

struct DiffFailure {
  std::size_t op_index = 0;  // index into the trace of the failing op
  std::string message;
  std::string allocator_free;
  std::string oracle_free;
};

struct DiffResult {
  std::vector<TraceOp> trace;  // ops applied, up to and including a failing one
  std::optional<DiffFailure> failure;
  std::uint64_t alignment_violations = 0;
  std::uint64_t oom_mismatches = 0;
  std::uint64_t niche_mismatches = 0;
  std::uint64_t allocator_ooms = 0;
  nlohmann::ordered_json stats;

  bool ok() const { return !failure.has_value(); }
};

/// Generates random alloc/free ops from the seed and checks every step
/// against the byte-map oracle: identical niche sets, aligned non-overlapping
/// placement, best-fit level agreement and OOM agreement. Stops at the first
/// mismatch.
DiffResult run_fuzz(const FuzzConfig& config);

/// Replays a given trace under the same checks. Frees of tags whose alloc
/// failed in this replay are skipped, which keeps shrunk traces runnable.
DiffResult run_differential(const FuzzConfig& config, const std::vector<TraceOp>& trace);

/// Shrinks a failing trace by dropping alloc/free pairs while it still fails.
std::vector<TraceOp> minimize_counterexample(const FuzzConfig& config,
                                             std::vector<TraceOp> trace,
                                             std::size_t max_replays = 400);

/// Replayable trace text with the failure and both free sets as comments.
std::string counterexample_dump(const FuzzConfig& config, const std::vector<TraceOp>& trace,
                                const DiffFailure& failure);

/// Free bytes of a block tree as maximal hex runs, matching ByteModel::free_ranges.
std::string tree_free_ranges(const BlockTree& tree);

}  // namespace geom
