#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "poirot/error.hpp"
#include "poirot/tvla.hpp"
#include "test_support.hpp"

using namespace poirot;
using namespace poirot::tvla;

namespace {

struct Loaded {
  mir::Function f;
  symexec::SymbolicState state;
};

Loaded load_text(const std::string& text) {
  Loaded l{mir::unroll(mir::parse(text).functions.at(0)), {}};
  l.state = symexec::run(l.f, mir::declared_taint(l.f));
  return l;
}

Loaded load(const std::string& fixture) { return load_text(test::fixture(fixture)); }

solver::SolverConfig backend() { return test::solver_path() ? test::smt_config() : test::brute_config(24); }

leakage::PoiRecord analyzed(const Loaded& l, const std::string& dest) {
  for (const auto& r : l.state.trace) {
    if (r.dest == dest) return leakage::analyze_record(r, {}, backend());
  }
  throw std::runtime_error("no record " + dest);
}

std::size_t point_of(const TraceSet& t, std::uint32_t address) {
  for (std::size_t j = 0; j < t.points(); ++j) {
    if (t.addresses[j] == address) return j;
  }
  throw std::runtime_error("no point");
}

TraceSet column(const std::vector<double>& xs) {
  TraceSet t;
  t.addresses = {0};
  for (double x : xs) t.samples.push_back({x});
  return t;
}

}  // namespace

TEST(Execute, CaddMaskValues) {
  const auto l = load("cadd.mir");
  LeakModel m;
  m.sigma = 0;
  m.offset = 3;
  const TraceSet t = simulate_traces(l.f, {{{"x", BitVector(8, 10)}, {"sum", BitVector(8, 0)}},
                                           {{"x", BitVector(8, 100)}, {"sum", BitVector(8, 0)}}},
                                     m);
  EXPECT_EQ(t.samples[0][1], 3 + 8);
  EXPECT_EQ(t.samples[1][1], 3 + 0);
  EXPECT_NE(t.program_hash, 0U);
}

TEST(Execute, MatchesSymbolicEvaluation) {
  std::mt19937_64 rng(7);
  for (const char* name : {"cadd.mir", "sbfx.mir", "arx.mir", "kyber.mir", "ctcmp.mir", "public_only.mir"}) {
    const auto l = load(name);
    for (int trial = 0; trial < 50; ++trial) {
      Env in;
      for (const auto& v : l.state.inputs) in.insert_or_assign(v.name, BitVector(v.width, rng()));
      const auto steps = execute(l.f, in);
      ASSERT_EQ(steps.size(), l.state.trace.size());
      for (std::size_t k = 0; k < steps.size(); ++k) {
        const auto& r = l.state.trace[k];
        if (!r.expr) continue;
        SCOPED_TRACE(std::string(name) + " @" + std::to_string(r.address));
        EXPECT_EQ(*steps[k].value, eval(r.expr, in).value());
        if (r.prev) EXPECT_EQ(steps[k].prev, eval(r.prev, in).value());
      }
    }
  }
  EXPECT_THROW(execute(load("secret_branch.mir").f, {}), ExecutionError);
}

TEST(Execute, TransitionModeAddsDistance) {
  const auto l = load_text("func f(k: secret u8) {\n  r1 = mov.8 #0x0F\n  r1 = xor r1, k\n}\n");
  LeakModel m;
  m.sigma = 0;
  m.mode = LeakMode::HdTransition;
  const TraceSet t = simulate_traces(l.f, {{{"k", BitVector(8, 0xFF)}}}, m);
  // 0x0F: weight 4, distance to nothing 4; then 0xF0: weight 4, distance 8
  EXPECT_EQ(t.samples[0][0], 8);
  EXPECT_EQ(t.samples[0][1], 12);
}

TEST(Simulate, DeterministicAndPartitionable) {
  const auto l = load("cadd.mir");
  std::vector<Env> in;
  for (unsigned x = 0; x < 6; ++x) in.push_back({{"x", BitVector(8, x * 40)}, {"sum", BitVector(8, x)}});
  LeakModel m;
  m.seed = 99;
  const TraceSet all = simulate_traces(l.f, in, m);
  EXPECT_EQ(all.samples, simulate_traces(l.f, in, m).samples);
  const TraceSet tail = simulate_traces(l.f, std::vector<Env>(in.begin() + 3, in.end()), m, 3);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(tail.samples[k], all.samples[k + 3]);
  m.seed = 100;
  EXPECT_NE(all.samples, simulate_traces(l.f, in, m).samples);
  m.alpha = 0;
  EXPECT_THROW(simulate_traces(l.f, in, m), ConfigError);
}

TEST(Welch, HandDataset) {
  const auto t = welch_t(column({1, 2, 3, 4, 5}), column({2, 4, 6, 8, 10}));
  // means 3 and 6, variances 2.5 and 10
  EXPECT_NEAR(t[0], -3.0 / std::sqrt(2.5), 1e-12);
  EXPECT_EQ(welch_t(column({1, 2, 3}), column({1, 2, 3}))[0], 0.0);
  EXPECT_EQ(welch_t(column({1, 1}), column({1, 1}))[0], 0.0);
  EXPECT_EQ(welch_t(column({1, 1}), column({2, 2}))[0], -std::numeric_limits<double>::infinity());
  EXPECT_THROW(welch_t(column({1}), column({1, 2})), ConfigError);
}

TEST(Vectors, CaddClassesSplitTheInputRange) {
  const auto l = load("cadd.mir");
  const auto poi = analyzed(l, "r1");
  VectorConfig cfg;
  cfg.count = 8;
  const TestVectorSet v = gen_test_vectors(l.state, poi, cfg, backend());
  ASSERT_EQ(v.a.size(), 8U);
  ASSERT_EQ(v.b.size(), 8U);
  EXPECT_TRUE(v.warnings.empty());
  // x - 64 wraps for x < -64, so those inputs land with [64, 127]
  auto in_range = [](const Env& e, unsigned cls) {
    const std::int64_t x = e.at("x").signed_value();
    return cls == 0 ? (x >= 64 || x < -64) : (x >= -64 && x <= 63);
  };
  std::set<std::uint64_t> distinct;
  for (const auto& e : v.a) {
    EXPECT_TRUE(in_range(e, v.class_a));
    EXPECT_EQ(e.at("sum").value(), 0U);
    distinct.insert(e.at("x").value());
  }
  for (const auto& e : v.b) EXPECT_TRUE(in_range(e, v.class_b));
  EXPECT_EQ(distinct.size(), 8U);
  EXPECT_NE(v.class_a, v.class_b);

  cfg.count = 0;
  EXPECT_THROW(gen_test_vectors(l.state, poi, cfg, backend()), ConfigError);
  leakage::PoiRecord bare = poi;
  bare.w1.reset();
  cfg.count = 2;
  EXPECT_THROW(gen_test_vectors(l.state, bare, cfg, backend()), Error);
}

TEST(Vectors, SingletonClassesRepeat) {
  const auto l = load_text("func f(k: secret u8) {\n  r0 = not k\n}\n");
  const auto poi = analyzed(l, "r0");
  VectorConfig cfg;
  cfg.count = 4;
  const TestVectorSet v = gen_test_vectors(l.state, poi, cfg, backend());
  EXPECT_EQ(v.a.size(), 4U);
  EXPECT_EQ(v.warnings.size(), 2U);
  for (const auto& e : v.a) EXPECT_EQ(e.at("k"), v.a[0].at("k"));
}

TEST(Tvla, CaddLeaksAtTheMaskOnly) {
  const auto l = load("cadd.mir");
  const auto poi = analyzed(l, "r1");
  TvlaConfig cfg;
  cfg.vectors.random_publics = true;
  cfg.vectors.seed = 2024;
  cfg.model.seed = 2024;
  const TvlaResult r = run_tvla(l.f, l.state, poi, cfg, backend());
  EXPECT_TRUE(r.leak);
  EXPECT_GE(r.poi_t, 10.0);
  const std::size_t control = point_of(r.a, 4);
  EXPECT_LT(std::abs(r.t[control]), kConventionalThreshold);

  const TvlaResult again = run_tvla(l.f, l.state, poi, cfg, backend());
  EXPECT_EQ(again.t, r.t);
  EXPECT_EQ(again.a.samples, r.a.samples);
}

TEST(Tvla, HigherWeightClassDrawsMorePower) {
  const auto l = load("cadd.mir");
  const auto poi = analyzed(l, "r1");
  TvlaConfig cfg;
  const TvlaResult r = run_tvla(l.f, l.state, poi, cfg, backend());
  const std::size_t j = point_of(r.a, poi.address);
  double ma = 0, mb = 0;
  for (const auto& row : r.a.samples) ma += row[j];
  for (const auto& row : r.b.samples) mb += row[j];
  EXPECT_EQ(ma > mb, r.vectors.class_a > r.vectors.class_b);
}

TEST(Tvla, DetectabilityGrowsWithWeightGapAndShrinksWithNoise) {
  const char* masks[] = {"#3", "#0x0F", "#0xFF"};  // Δω 2, 4, 8
  std::vector<std::vector<double>> grid;
  for (const char* mask : masks) {
    const auto l = load_text(std::string("func f(k: secret u8) {\n  r0 = asr k, #7\n  r1 = and r0, ") + mask + "\n}\n");
    const auto poi = analyzed(l, "r1");
    std::vector<double> row;
    for (double sigma : {0.5, 1.0, 2.0}) {
      double sum = 0;
      for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        TvlaConfig cfg;
        cfg.vectors.count = 50;
        cfg.vectors.seed = seed;
        cfg.model.seed = seed;
        cfg.model.sigma = sigma;
        sum += run_tvla(l.f, l.state, poi, cfg, backend()).poi_t;
      }
      row.push_back(sum / 5);
    }
    grid.push_back(row);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i > 0) EXPECT_GE(grid[i][j], grid[i - 1][j]);
      if (j > 0) EXPECT_LE(grid[i][j], grid[i][j - 1]);
    }
  }
}

TEST(Export, CsvAndBinary) {
  const auto l = load("cadd.mir");
  LeakModel m;
  const TraceSet t = simulate_traces(l.f, {{{"x", BitVector(8, 1)}, {"sum", BitVector(8, 2)}},
                                           {{"x", BitVector(8, 3)}, {"sum", BitVector(8, 4)}}},
                                     m);
  std::ostringstream csv;
  write_csv(t, csv);
  const std::string text = csv.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "trace,p0,p1,p2,p3,p4");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);

  std::stringstream bin;
  write_binary(t, bin);
  EXPECT_EQ(bin.str().substr(0, 4), "PSCT");
  EXPECT_EQ(bin.str().size(), 4 + 4 + 8 + 8 + 2 * 5 * 8U);
  const TraceSet back = read_binary(bin);
  EXPECT_EQ(back.samples, t.samples);
  std::stringstream junk("PSCX");
  EXPECT_THROW(read_binary(junk), Error);
}

TEST(Tvla, ClassPairsCoverEveryReachablePair) {
  const auto l = load("arx.mir");
  const auto poi = analyzed(l, "r3");
  EXPECT_EQ(reachable_classes(l.state, poi, backend()), (std::vector<unsigned>{0, 1, 2}));
  TvlaConfig cfg;
  cfg.vectors.count = 40;
  const auto all = run_tvla_class_pairs(l.f, l.state, poi, cfg, backend());
  ASSERT_EQ(all.size(), 3U);
  const std::pair<unsigned, unsigned> want[] = {{0, 1}, {0, 2}, {1, 2}};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(all[i].vectors.class_a, want[i].first);
    EXPECT_EQ(all[i].vectors.class_b, want[i].second);
  }
  // the widest gap separates best
  EXPECT_GT(all[1].poi_t, all[0].poi_t);
  EXPECT_GT(all[1].poi_t, all[2].poi_t);
}
