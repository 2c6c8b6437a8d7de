// geomalloc: trace replay, figure demos, differential fuzzing and the
// pipeline simulator.
//
// Exit codes: 0 ok, 1 differential mismatch, 2 bad input, 3 invariant
// failure (or spurious pipeline failures).

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "geom/differential.hpp"
#include "geom/pipeline.hpp"
#include "geom/render.hpp"
#include "geom/trace.hpp"

using namespace geom;

namespace {

enum Exit { ok = 0, mismatch = 1, bad_input = 2, broken = 3 };

struct Flags {
  int space_bits = 16;
  int min_block_bits = 4;
  int counter_bits = 2;
  std::string policy = "leftmost";
  std::uint64_t seed = 0;
  std::string stats_out;
  int max_pieces = 0;  // 0: unbounded
};

RunConfig run_config(const Flags& f) {
  RunConfig c;
  c.geometry = {f.space_bits, f.min_block_bits, f.counter_bits};
  c.geometry.validate();
  c.policy = parse_policy(f.policy, f.seed);
  if (f.max_pieces > 0) c.max_pieces = f.max_pieces;
  return c;
}

void write_doc(const nlohmann::ordered_json& doc, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << doc.dump(2) << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << doc.dump(2) << "\n";
}

int cmd_replay(const Flags& f, const std::string& path, bool series) {
  RunConfig c = run_config(f);
  c.time_series = series;
  const auto ops = parse_trace_file(path);
  TraceRunner runner(c);
  runner.run(ops);
  write_doc(runner.stats_json(), f.stats_out);
  return ok;
}

// ---- demos -------------------------------------------------------------------

std::string hex(Address a) {
  std::ostringstream os;
  os << std::hex << std::uppercase << a;
  return os.str();
}

void demo_steps(std::ostream& os) {
  const GeometryConfig g{4, 0, 2};
  Allocator a(g);
  std::map<std::string, Address> tags;
  auto alloc = [&](const std::string& tag, int level) {
    try {
      tags[tag] = a.alloc_block(level);
      return true;
    } catch (const GeomError&) {
      return false;
    }
  };
  auto free = [&](const std::string& tag, int level) {
    a.free_block(tags.at(tag), level);
    tags.erase(tag);
  };
  auto show = [&](const std::string& label) {
    os << "# " << label << "\n" << render_tree(a.tree()) << "\n";
  };
  alloc("big0", 2);
  for (const char* s : {"s1", "s2", "s3", "s4"}) alloc(s, 1);
  alloc("big1", 2);
  show("step 1: large, four small, large");
  free("s2", 1);
  free("s3", 1);
  show("step 2: centre pair freed; 6 is not a multiple of 4, no coalesce");
  os << "# large request: " << (alloc("big2", 2) ? "placed" : "out of memory") << "\n\n";
  free("s4", 1);
  show("step 5.1: 8-B coalesces");
  free("s1", 1);
  show("step 5.2: 4-7 coalesces");
  free("big0", 2);
  show("0-7 free");
  free("big1", 2);
  show("whole space free");
}

Allocator figure_state() {
  Allocator a({4, 0, 2});
  a.claim_block(BlockId{2, 0});
  a.claim_block(BlockId{1, 2});
  a.claim_block(BlockId{2, 3});
  return a;
}

void demo_sparse_tree(std::ostream& os) {
  const Allocator a = figure_state();
  os << render_tree(a.tree());
  os << "niches " << niche_listing(a.tree().niches()) << "\n";
}

void demo_niche_maps(std::ostream& os) {
  const Allocator a = figure_state();
  os << render_tree(a.tree());
  os << "root [";
  const NicheMap root = a.tree().root_map();
  for (std::size_t i = 0; i < root.size(); ++i) os << (i ? "," : "") << int{root[i]};
  os << "]\n";
}

std::string backed_set(const VirtualSpace& vs) {
  std::string out;
  for (Address y = 0; y < vs.bound(); ++y) {
    if (vs.translate(y).ok()) out += (out.empty() ? "" : " ") + hex(y);
  }
  return "{" + out + "}";
}

void demo_vtree_doubling(std::ostream& os) {
  SpaceManager mgr({4, 0, 2});
  const auto h = mgr.create_space(PopulationStrategy::doubling(), 0);
  for (Address y : {0x8, 0x9, 0xB}) {
    mgr.access(h, y);
    os << "# access " << hex(y) << " backed " << backed_set(mgr.space(h)) << "\n";
    os << render_tree(mgr.space(h).tree()) << "\n";
  }
}

void demo_fixed_11(std::ostream& os) {
  SpaceManager mgr({4, 0, 2});
  const auto h = mgr.create_space(PopulationStrategy::fixed_ledged(11), 11);
  os << render_tree(mgr.space(h).tree());
  os << "backed_bytes " << mgr.backed_bytes(h) << "\n";
  try {
    mgr.access(h, 11);
  } catch (const GeomError& e) {
    os << "access B: " << errc_name(e.code()) << "\n";
  }
}

int cmd_demo(const std::string& id) {
  const std::map<std::string, void (*)(std::ostream&)> demos = {
      {"steps", demo_steps},
      {"sparse-tree", demo_sparse_tree},
      {"niche-maps", demo_niche_maps},
      {"vtree-doubling", demo_vtree_doubling},
      {"fixed-11", demo_fixed_11},
  };
  auto it = demos.find(id);
  if (it == demos.end()) {
    std::cerr << "unknown demo '" << id << "'\n";
    return bad_input;
  }
  it->second(std::cout);
  return ok;
}

// ---- fuzz ------------------------------------------------------------------

int cmd_fuzz(const Flags& f, std::uint64_t ops, const std::string& emit, const std::string& fault) {
  if (f.space_bits > 16) {
    std::cerr << "fuzz: --space-bits must be at most 16\n";
    return bad_input;
  }
  FuzzConfig c;
  c.run = run_config(f);
  c.ops = ops;
  c.seed = f.seed;
  if (fault == "misaligned-coalesce") {
    c.fault = FaultInjection::misaligned_coalesce;
  } else if (!fault.empty()) {
    std::cerr << "unknown fault '" << fault << "'\n";
    return bad_input;
  }
  const DiffResult r = run_fuzz(c);
  if (!emit.empty()) {
    std::ofstream out(emit);
    out << format_trace(r.trace);
  }
  if (!r.ok()) {
    const auto shrunk = minimize_counterexample(c, r.trace);
    const DiffResult again = run_differential(c, shrunk);
    std::cout << counterexample_dump(c, shrunk, again.failure ? *again.failure : *r.failure);
    return mismatch;
  }
  write_doc(r.stats, f.stats_out);
  return ok;
}

// ---- pipeline ----------------------------------------------------------------

/// "l:d,l:d" -> level -> depth
std::map<int, int> parse_prealloc(const std::string& spec) {
  std::map<int, int> out;
  std::istringstream in(spec);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw CLI::ValidationError("--prealloc", "expected level:depth");
    out[std::stoi(item.substr(0, colon))] = std::stoi(item.substr(colon + 1));
  }
  return out;
}

int cmd_pipeline(const Flags& f, const std::string& path, std::uint64_t ticks,
                 const std::string& prealloc) {
  SimConfig c;
  c.geometry = run_config(f).geometry;
  c.policy = parse_policy(f.policy, f.seed);
  c.prealloc_depth = parse_prealloc(prealloc);
  if (ticks) c.max_ticks = ticks;
  const auto ops = parse_trace_file(path, true);
  PipelineSim sim(c);
  const SimMetrics m = sim.run(ops);
  write_doc(metrics_json(m), f.stats_out);
  return m.spurious_failures > 0 ? broken : ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometric memory allocator and mapper"};
  app.require_subcommand(1);
  Flags f;
  app.add_option("--space-bits", f.space_bits, "log2 of the space size")->capture_default_str();
  app.add_option("--min-block-bits", f.min_block_bits, "log2 of the smallest block")
      ->capture_default_str();
  app.add_option("--counter-bits", f.counter_bits, "niche counter width")->capture_default_str();
  app.add_option("--policy", f.policy, "placement tie-break")
      ->check(CLI::IsMember({"leftmost", "rightmost", "random"}))
      ->capture_default_str();
  app.add_option("--seed", f.seed, "seed for random policy and fuzzing")->capture_default_str();
  app.add_option("--stats-out", f.stats_out, "write the report here instead of stdout");
  app.add_option("--max-pieces", f.max_pieces, "ledge piece limit (0: unbounded)")
      ->check(CLI::NonNegativeNumber);

  auto* replay = app.add_subcommand("replay", "apply a trace and report stats");
  std::string trace_path;
  bool series = false;
  replay->add_option("trace", trace_path)->required();
  replay->add_flag("--time-series", series, "include per-op series in the stats");

  auto* demo = app.add_subcommand("demo", "print a walkthrough");
  std::string demo_id;
  demo->add_option("figure", demo_id, "steps|sparse-tree|niche-maps|vtree-doubling|fixed-11")
      ->required();

  auto* fuzz = app.add_subcommand("fuzz", "differential run against the byte-map oracle");
  std::uint64_t fuzz_ops = 1000;
  std::string emit, fault;
  fuzz->add_option("--ops", fuzz_ops)->capture_default_str();
  fuzz->add_option("--emit", emit, "write the generated trace");
  fuzz->add_option("--inject-fault", fault)->group("");

  auto* pipe = app.add_subcommand("pipeline", "run a workload through the pipeline model");
  std::string workload_path, prealloc;
  std::uint64_t ticks = 0;
  pipe->add_option("workload", workload_path)->required();
  pipe->add_option("--ticks", ticks, "tick limit (0: default)");
  pipe->add_option("--prealloc", prealloc, "queue depths, e.g. 0:2,1:2");

  for (auto* sub : {replay, demo, fuzz, pipe}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? ok : bad_input;
  }

  try {
    if (*replay) return cmd_replay(f, trace_path, series);
    if (*demo) return cmd_demo(demo_id);
    if (*fuzz) return cmd_fuzz(f, fuzz_ops, emit, fault);
    if (*pipe) return cmd_pipeline(f, workload_path, ticks, prealloc);
  } catch (const TraceError& e) {
    std::cerr << "trace: " << e.what() << "\n";
    return bad_input;
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return bad_input;
  } catch (const GeomError& e) {
    std::cerr << e.what() << "\n";
    return e.code() == Errc::structural ? broken : bad_input;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return bad_input;
  }
  return ok;
}
