#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "geom/pipeline.hpp"
#include "pipeline_support.hpp"

using namespace geom;
using namespace geom::testing;

namespace {

using Kind = PipelineRequest::Kind;

PipelineRequest alloc_req(int level, std::string tag = "a") {
  PipelineRequest r;
  r.kind = Kind::alloc;
  r.level = level;
  r.tag = std::move(tag);
  return r;
}

PipelineRequest dealloc_req(Address base, int level, std::string tag = "d") {
  PipelineRequest r;
  r.kind = Kind::dealloc;
  r.base = base;
  r.level = level;
  r.tag = std::move(tag);
  return r;
}

SimConfig sim_config(GeometryConfig g) {
  SimConfig c;
  c.geometry = g;
  return c;
}

std::vector<Response> drain(PipelineSim& sim, std::uint64_t limit = 10'000) {
  std::vector<Response> out;
  for (std::uint64_t i = 0; i < limit && !sim.idle(); ++i) {
    sim.tick();
    for (auto& r : sim.take_responses()) out.push_back(std::move(r));
  }
  return out;
}

std::vector<TraceOp> workload(const std::string& text) {
  std::istringstream in(text);
  return parse_trace(in, true);
}

}  // namespace

TEST(Pipeline, SingleAllocLatency) {
  const GeometryConfig g{8, 1, 2};
  for (int l = g.min_level; l <= g.height_bits; ++l) {
    PipelineSim sim(sim_config(g));
    ASSERT_EQ(sim.admit(alloc_req(l)), Admission::accepted);
    const auto done = drain(sim);
    ASSERT_EQ(done.size(), 1u);
    EXPECT_EQ(done[0].complete_tick - done[0].admit_tick, 2u * (g.height_bits - l) + 1) << l;
    EXPECT_EQ(done[0].base, 0u);
    EXPECT_NO_THROW(sim.rtree().validate());
    EXPECT_EQ(sim.metrics().locality_violations, 0u);
  }
}

TEST(Pipeline, TickOnIdlePipelineChangesNothing) {
  PipelineSim sim(sim_config(sixteen_bytes()));
  sim.restore_rtree(niche_figure().tree());
  const std::string before = sim.rtree().serialize();
  for (int i = 0; i < 5; ++i) sim.tick();
  EXPECT_EQ(sim.rtree().serialize(), before);
  EXPECT_EQ(sim.metrics().completed, 0u);
  EXPECT_EQ(sim.metrics().stalled_ticks, 0u);
}

TEST(Pipeline, TwoAllocsOneExactOneBySplit) {
  PipelineSim sim(sim_config(sixteen_bytes()));
  const BlockTree initial = niche_figure().tree();  // niches L1@6, L2@8
  sim.restore_rtree(initial);
  ASSERT_EQ(sim.admit(alloc_req(1, "x")), Admission::accepted);
  sim.tick();
  ASSERT_EQ(sim.admit(alloc_req(1, "y")), Admission::accepted);
  const auto done = drain(sim);
  ASSERT_EQ(done.size(), 2u);
  EXPECT_TRUE(done[0].ok && done[1].ok);
  EXPECT_EQ(done[0].base, 6u);
  EXPECT_EQ(done[1].base, 8u);
  EXPECT_EQ(sim.metrics().spurious_failures, 0u);
  EXPECT_TRUE(find_serialization(initial, done, sim.rtree()).has_value());
  // Same final state as the sequential allocator.
  Allocator seq(sixteen_bytes());
  seq.restore(initial);
  seq.alloc_block(1);
  seq.alloc_block(1);
  EXPECT_EQ(sim.rtree(), seq.tree());
}

TEST(Pipeline, SecondClaimOnTheOnlyNicheIsRejectedAtAdmission) {
  PipelineSim sim(sim_config(sixteen_bytes()));
  sim.restore_rtree(with_blocks(sixteen_bytes(), {{3, 0}, {2, 2}}).tree());  // only 8-B free
  ASSERT_EQ(sim.admit(alloc_req(2)), Admission::accepted);
  sim.tick();
  EXPECT_EQ(sim.admit(alloc_req(2)), Admission::rejected);
  drain(sim);
  EXPECT_EQ(sim.metrics().spurious_failures, 0u);
  EXPECT_EQ(sim.admit(alloc_req(4)), Admission::rejected);
}

TEST(Pipeline, FullMemoryRejects) {
  PipelineSim sim(sim_config(sixteen_bytes()));
  sim.restore_rtree(with_blocks(sixteen_bytes(), {{4, 0}}).tree());
  EXPECT_EQ(sim.admit(alloc_req(4)), Admission::rejected);
  EXPECT_EQ(sim.admit(alloc_req(0)), Admission::rejected);
}

TEST(Pipeline, EntryStageTakesOneRequestPerTick) {
  PipelineSim sim(sim_config(sixteen_bytes()));
  ASSERT_EQ(sim.admit(alloc_req(0)), Admission::accepted);
  EXPECT_EQ(sim.admit(alloc_req(0)), Admission::stalled);
}

TEST(Pipeline, ConflictingDeallocsStall) {
  PipelineSim sim(sim_config(sixteen_bytes()));
  sim.restore_rtree(niche_figure().tree());
  ASSERT_EQ(sim.admit(dealloc_req(4, 1)), Admission::accepted);
  sim.tick();
  EXPECT_EQ(sim.admit(dealloc_req(4, 1)), Admission::stalled);
  EXPECT_EQ(sim.admit(alloc_req(0)), Admission::stalled);  // allocs wait for deallocs
  EXPECT_EQ(sim.admit(dealloc_req(0xC, 2)), Admission::accepted);
  const auto done = drain(sim);
  ASSERT_EQ(done.size(), 2u);
  EXPECT_TRUE(done[0].ok && done[1].ok);
  EXPECT_NO_THROW(sim.rtree().validate());
  EXPECT_EQ(sim.rtree().niches(), (std::vector<BlockId>{blk(2, 4), blk(3, 8)}));
}

TEST(Pipeline, InvalidDeallocFailsWithoutDamage) {
  PipelineSim sim(sim_config(sixteen_bytes()));
  sim.restore_rtree(niche_figure().tree());
  const std::string before = sim.rtree().serialize();
  ASSERT_EQ(sim.admit(dealloc_req(6, 1)), Admission::accepted);  // a niche
  const auto done = drain(sim);
  ASSERT_EQ(done.size(), 1u);
  EXPECT_FALSE(done[0].ok);
  EXPECT_EQ(done[0].error, Errc::invalid_free);
  EXPECT_EQ(sim.rtree().serialize(), before);
  EXPECT_EQ(sim.admit(dealloc_req(5, 1)), Admission::rejected);  // misaligned
}

TEST(Pipeline, EmptyWorkload) {
  PipelineSim sim(sim_config(sixteen_bytes()));
  const auto m = sim.run({});
  EXPECT_EQ(m.completed, 0u);
  EXPECT_EQ(m.stalled_ticks, 0u);
  EXPECT_TRUE(m.drained);
}

TEST(Pipeline, WorkloadFreesWaitForTheirAlloc) {
  PipelineSim sim(sim_config(sixteen_bytes()));
  const auto m = sim.run(workload("alloc a 3\nfree a\n@tick 4\nalloc b 16\nalloc c 0\nfree zz\n"));
  EXPECT_TRUE(m.drained);
  EXPECT_EQ(m.completed, 3u);
  EXPECT_EQ(m.rejected, 2u);
  EXPECT_TRUE(sim.rtree().leaves() == (std::vector<BlockId>{blk(4, 0)}));
  EXPECT_EQ(m.spurious_failures, 0u);
}

TEST(Pipeline, ExactFitThroughput) {
  SimConfig c = sim_config({16, 0, 8});
  PipelineSim sim(c);
  sim.restore_rtree(exact_fit_state(8));
  std::string text;
  const int k = 128;  // >= 4n
  for (int i = 0; i < k; ++i) {
    text += "alloc t" + std::to_string(i) + " " + std::to_string(1u << (i % 8)) + "\n";
  }
  const auto m = sim.run(workload(text));
  ASSERT_TRUE(m.drained);
  EXPECT_EQ(m.completed, static_cast<std::uint64_t>(k));
  const double throughput = static_cast<double>(m.completed) / static_cast<double>(m.ticks);
  EXPECT_GE(throughput, 0.5) << m.ticks << " ticks";
  EXPECT_EQ(m.spurious_failures, 0u);
  EXPECT_TRUE(sim.rtree().niches().empty());
}

TEST(Pipeline, PreallocQueuesCutStalls) {
  const GeometryConfig g{12, 0, 2};
  std::string text = "vspace s doubling 0\n";
  for (int i = 0; i < 60; ++i) text += "access s " + std::to_string(i * 37 % 512) + "\n";
  auto run = [&](int depth) {
    SimConfig c = sim_config(g);
    for (int l = 0; l <= 6; ++l) c.prealloc_depth[l] = depth;
    PipelineSim sim(c);
    const auto m = sim.run(workload(text));
    EXPECT_TRUE(m.drained);
    EXPECT_EQ(allocated_bytes(sim.rtree()), owned_bytes(sim, BlockTree(g)));
    EXPECT_EQ(sim.queue_sizes().size(), 0u);
    return m.stalled_ticks;
  };
  const auto without = run(0);
  const auto with = run(2);
  EXPECT_GT(without, with);
}

TEST(Pipeline, PreallocAboveHalfHeightIsIgnored) {
  SimConfig c = sim_config({8, 0, 2});
  c.prealloc_depth[6] = 4;
  c.prealloc_depth[2] = 1;
  PipelineSim sim(c);
  sim.run(workload("vspace s doubling 0\naccess s 3\n"));
  EXPECT_EQ(sim.metrics().queue_occupancy.count(6), 0u);
  EXPECT_EQ(sim.metrics().queue_occupancy.count(2), 1u);
}

TEST(Pipeline, VtreeMatchesSequentialMapper) {
  const GeometryConfig g{5, 0, 2};
  PipelineSim sim(sim_config(g));
  const auto m = sim.run(workload(
      "vspace d doubling 0\naccess d 8\naccess d 9\naccess d 0xB\naccess d 0xD\n"
      "vspace f fixed 11\naccess f 10\naccess f 11\n"));
  EXPECT_TRUE(m.drained);
  SpaceManager seq(g);
  const auto d = seq.create_space(PopulationStrategy::doubling(), 0);
  for (Address y : {8, 9, 0xB, 0xD}) seq.access(d, y);
  const auto& vs = sim.spaces().at(SpaceHandle{1});
  EXPECT_EQ(vs.tree().leaves(), seq.space(d).tree().leaves());
  EXPECT_EQ(vs.backed_bytes(), 8u);
  const auto& f = sim.spaces().at(SpaceHandle{2});
  EXPECT_EQ(f.tree().leaves(), (std::vector<BlockId>{blk(3, 0), blk(1, 8), blk(0, 0xA)}));
  EXPECT_NO_THROW(vs.tree().validate());
  EXPECT_NO_THROW(f.tree().validate());
  const auto& last = m.responses.back();
  EXPECT_EQ(last.kind, Kind::vtranslate);
  EXPECT_EQ(last.error, Errc::trap);
  EXPECT_EQ(m.locality_violations, 0u);
}

TEST(Pipeline, VdestroyReturnsEverything) {
  PipelineSim sim(sim_config(sixteen_bytes()));
  const auto m = sim.run(workload("vspace f fixed 11\nvspace d doubling 0\naccess d 3\n"
                                  "vdestroy f\nvdestroy d\naccess d 1\n"));
  EXPECT_TRUE(m.drained);
  EXPECT_TRUE(sim.spaces().empty());
  EXPECT_TRUE(sim.rtree().empty());
  const auto late = std::find_if(m.responses.rbegin(), m.responses.rend(),
                                 [](const Response& r) { return r.kind == Kind::vtranslate; });
  ASSERT_NE(late, m.responses.rend());
  EXPECT_EQ(late->error, Errc::invalid_handle);
}

TEST(Pipeline, BackingFailureLeavesSpaceUnchanged) {
  PipelineSim sim(sim_config(sixteen_bytes()));
  sim.restore_rtree(with_blocks(sixteen_bytes(), {{3, 0}, {2, 2}, {1, 6}}).tree());
  const auto m = sim.run(workload("vspace d doubling 0\naccess d 0\naccess d 1\naccess d 2\n"));
  // 0 and 1 take the last two bytes; the doubling step for 2-3 cannot be backed.
  std::vector<Response> ext;
  for (const auto& r : m.responses) {
    if (!r.internal) ext.push_back(r);
  }
  ASSERT_EQ(ext.size(), 4u);
  EXPECT_TRUE(ext[2].ok);
  EXPECT_EQ(ext[3].error, Errc::backing_failure);
  EXPECT_EQ(sim.spaces().at(SpaceHandle{1}).backed_bytes(), 2u);
  EXPECT_NO_THROW(sim.spaces().at(SpaceHandle{1}).tree().validate());
}

TEST(Pipeline, RandomWorkloadsHoldTheGuarantees) {
  std::mt19937_64 seeds(12);
  for (int trial = 0; trial < 60; ++trial) {
    WorkloadSpec spec;
    spec.geometry = {10, static_cast<int>(seeds() % 2), 1 + static_cast<int>(seeds() % 3)};
    spec.requests = 200;
    spec.with_spaces = trial % 2 == 1;
    SimConfig c = sim_config(spec.geometry);
    if (trial % 3 == 0) c.prealloc_depth = {{0, 2}, {1, 2}, {2, 1}};
    c.policy = trial % 4 == 2 ? PlacementPolicy::random(trial) : PlacementPolicy::leftmost();
    PipelineSim sim(c);
    const auto m = sim.run(random_workload(spec, seeds()));
    ASSERT_TRUE(m.drained) << trial;
    ASSERT_EQ(m.spurious_failures, 0u) << trial;
    ASSERT_EQ(m.locality_violations, 0u) << trial;
    ASSERT_NO_THROW(sim.rtree().validate()) << trial;
    ASSERT_EQ(allocated_bytes(sim.rtree()), owned_bytes(sim, BlockTree(spec.geometry))) << trial;
    const ByteModel model = oracle_replay(BlockTree(spec.geometry), m.responses);
    ASSERT_EQ(model.canonical_niches(), sim.rtree().niches()) << trial;
    for (const auto& [h, vs] : sim.spaces()) ASSERT_NO_THROW(vs.tree().validate());
  }
}

// A refill rejected for OOM on every tick used to keep the alloc barrier up
// and hold back the frees that would have made room.
TEST(Pipeline, RejectedRefillsDoNotBlockFrees) {
  SimConfig c = sim_config({9, 1, 1});
  c.policy = PlacementPolicy::rightmost();
  c.prealloc_depth = {{1, 1}, {2, 1}, {3, 2}};
  c.max_ticks = 100'000;
  PipelineSim sim(c);
  const auto m = sim.run(parse_trace_file(std::string(GEOM_TEST_DATA) + "/refill-oom.work", true));
  EXPECT_TRUE(m.drained);
  EXPECT_EQ(m.spurious_failures, 0u);
  EXPECT_EQ(allocated_bytes(sim.rtree()), owned_bytes(sim, BlockTree({9, 1, 1})));
}

TEST(Pipeline, SmallSchedulesAreLinearizable) {
  std::mt19937_64 rng(44);
  const GeometryConfig g{6, 0, 2};
  for (int trial = 0; trial < 300; ++trial) {
    const BlockTree initial = random_tree(g, rng, 12).tree();
    PipelineSim sim(sim_config(g));
    sim.restore_rtree(initial);
    auto leaves = initial.leaves();
    const bool frees = !leaves.empty() && rng() % 3 == 0;
    std::vector<PipelineRequest> reqs;
    const std::size_t count = 1 + rng() % 4;
    for (std::size_t i = 0; i < count; ++i) {
      if (frees && !leaves.empty()) {
        const auto b = leaves[rng() % leaves.size()];
        leaves.erase(std::find(leaves.begin(), leaves.end(), b));
        reqs.push_back(dealloc_req(b.base(), b.level, "f" + std::to_string(i)));
      } else {
        reqs.push_back(alloc_req(static_cast<int>(rng() % 4), "a" + std::to_string(i)));
      }
    }
    std::vector<Response> done;
    std::size_t next = 0;
    for (int t = 0; t < 500 && (next < reqs.size() || !sim.idle()); ++t) {
      if (next < reqs.size()) {
        const auto a = sim.admit(reqs[next]);
        if (a != Admission::stalled) ++next;
      }
      sim.tick();
      for (auto& r : sim.take_responses()) {
        if (r.ok) done.push_back(r);
      }
    }
    ASSERT_TRUE(sim.idle());
    ASSERT_EQ(sim.metrics().spurious_failures, 0u);
    ASSERT_TRUE(find_serialization(initial, done, sim.rtree()).has_value())
        << "trial " << trial << "\n" << initial.serialize() << sim.rtree().serialize();
  }
}

TEST(Pipeline, DeterministicMetrics) {
  WorkloadSpec spec;
  spec.geometry = {10, 0, 2};
  spec.requests = 300;
  spec.with_spaces = true;
  const auto ops = random_workload(spec, 5);
  auto once = [&] {
    SimConfig c = sim_config(spec.geometry);
    c.prealloc_depth = {{0, 2}, {3, 1}};
    c.policy = PlacementPolicy::random(3);
    PipelineSim sim(c);
    return metrics_json(sim.run(ops)).dump() + sim.rtree().serialize();
  };
  EXPECT_EQ(once(), once());
  EXPECT_EQ(format_trace(ops), format_trace(random_workload(spec, 5)));
}

TEST(Pipeline, MetricsJsonKeys) {
  PipelineSim sim(sim_config(sixteen_bytes()));
  const auto doc = metrics_json(sim.run(workload("alloc a 2\n")));
  std::vector<std::string> keys;
  for (const auto& [k, v] : doc.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"schema", "ticks", "completed", "rejected",
                                            "stalled_ticks", "spurious_failures",
                                            "locality_violations", "drained",
                                            "queue_occupancy", "responses"}));
  EXPECT_EQ(doc["responses"][0]["kind"], "alloc");
}
