#include <benchmark/benchmark.h>

#include <fstream>
#include <random>
#include <sstream>

#include "poirot/leakage.hpp"
#include "poirot/tvla.hpp"

using namespace poirot;

namespace {

std::string fixture(const std::string& name) {
  std::ifstream in(std::string(POIROT_FIXTURES) + "/" + name);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Loaded {
  mir::Function f;
  symexec::SymbolicState state;
};

Loaded load(const std::string& name) {
  Loaded l{mir::unroll(mir::parse(fixture(name)).functions.at(0)), {}};
  l.state = symexec::run(l.f, mir::declared_taint(l.f));
  return l;
}

const symexec::StepRecord& record(const Loaded& l, const std::string& dest) {
  for (const auto& r : l.state.trace) {
    if (r.dest == dest) return r;
  }
  throw std::runtime_error("no record " + dest);
}

solver::SolverConfig brute(unsigned cap) {
  solver::SolverConfig c;
  c.backend = solver::Backend::BruteForce;
  c.oracle_cap = cap;
  return c;
}

// A loop the unroller has to copy 64 times.
std::string loop_program() {
  return "func acc(k: secret u32, p: public u32) {\n"
         "  r0 = mov.32 #0\n"
         " label L:\n"
         "  r0 = add r0, k\n"
         "  r0 = xor r0, p\n"
         "  r1 = lsr r0, #3\n"
         "  r0 = or r0, r1\n"
         "  br L\n"
         "  loop L bound 64\n"
         "}\n";
}

}  // namespace

static void BM_ParseUnrollSymexec(benchmark::State& st) {
  const std::string text = loop_program();
  for (auto _ : st) {
    const auto f = mir::unroll(mir::parse(text).functions.at(0));
    benchmark::DoNotOptimize(symexec::run(f, mir::declared_taint(f)));
  }
}
BENCHMARK(BM_ParseUnrollSymexec);

static void BM_ExhaustiveOracleSbfx(benchmark::State& st) {
  const auto l = load("sbfx.mir");
  const auto& r = record(l, "r2");
  for (auto _ : st) benchmark::DoNotOptimize(leakage::exhaustive_metrics(r, 32));
}
BENCHMARK(BM_ExhaustiveOracleSbfx)->Unit(benchmark::kMillisecond);

static void BM_BruteForceDhwCaddMask(benchmark::State& st) {
  const auto l = load("cadd.mir");
  const auto& r = record(l, "r1");
  for (auto _ : st) benchmark::DoNotOptimize(leakage::analyze_record(r, {}, brute(24)));
}
BENCHMARK(BM_BruteForceDhwCaddMask)->Unit(benchmark::kMillisecond);

static void BM_SmtDhwCaddTrace(benchmark::State& st) {
  const auto l = load("cadd.mir");
  solver::SolverConfig c;
  c.solver_path = solver::default_solver_path();
  leakage::AnalysisConfig a;
  a.jobs = static_cast<unsigned>(st.range(0));
  try {
    for (auto _ : st) benchmark::DoNotOptimize(leakage::analyze_trace(l.state, a, c));
  } catch (const std::exception& e) {
    st.SkipWithError(e.what());
  }
}
BENCHMARK(BM_SmtDhwCaddTrace)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

static void BM_EncodePopcount(benchmark::State& st) {
  const Expr x = Expr::var("x", static_cast<unsigned>(st.range(0)), true);
  for (auto _ : st) benchmark::DoNotOptimize(solver::to_smtlib(solver::encode_popcount(x)));
}
BENCHMARK(BM_EncodePopcount)->Arg(8)->Arg(32)->Arg(64);

static void BM_SimulateAndWelch(benchmark::State& st) {
  const auto l = load("cadd.mir");
  std::mt19937_64 rng(1);
  std::vector<Env> in;
  for (int i = 0; i < st.range(0); ++i) in.push_back({{"x", BitVector(8, rng())}, {"sum", BitVector(8, rng())}});
  tvla::LeakModel m;
  for (auto _ : st) {
    const auto a = tvla::simulate_traces(l.f, in, m);
    const auto b = tvla::simulate_traces(l.f, in, m, in.size());
    benchmark::DoNotOptimize(tvla::welch_t(a, b));
  }
}
BENCHMARK(BM_SimulateAndWelch)->Arg(100)->Arg(1000);
BENCHMARK_MAIN();
