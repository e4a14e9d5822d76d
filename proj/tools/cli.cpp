#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "poirot/error.hpp"
#include "poirot/leakage.hpp"
#include "poirot/mir.hpp"
#include "poirot/report.hpp"
#include "poirot/solver.hpp"
#include "poirot/symexec.hpp"
#include "poirot/tvla.hpp"

namespace poirot::cli {

namespace {

struct Options {
  std::string input;
  std::string function;
  std::vector<std::string> models;
  unsigned unroll = 8;
  std::vector<std::string> bounds;
  std::string solver = solver::default_solver_path();
  std::string backend = "smt";
  double timeout = 60;
  unsigned oracle_cap = 20;
  unsigned jobs = std::clamp(std::thread::hardware_concurrency(), 1U, 8U);
  bool json = false;
  bool text = false;
  std::string output;
  std::uint64_t seed = 1;
  double t_threshold = tvla::kDefaultThreshold;
  std::optional<unsigned> nu;
  std::optional<unsigned> discriminant_bit;
  bool no_continuity = false;
  // tvla
  std::optional<std::uint32_t> poi;
  unsigned traces = 100;
  double alpha = 1.0;
  double sigma = 1.0;
  double offset = 0.0;
  std::string leak_mode = "hw";
  bool random_publics = false;
  std::string class_pairs = "max";
  std::string csv;
  std::string binary;
};

struct Loaded {
  mir::Function original;
  mir::Function unrolled;
  mir::LoopBounds bounds;
  symexec::SymbolicState state;
};

class Failure : public std::runtime_error {
 public:
  Failure(int code, const std::string& msg) : std::runtime_error(msg), code(code) {}
  int code;
};

void add_common(CLI::App* c, Options& o) {
  c->add_option("input", o.input, "Program file")->required();
  c->add_option("--function", o.function, "Function to analyze (default: the first one)");
  c->add_option("--unroll", o.unroll, "Default bound for loops without one")->check(CLI::PositiveNumber);
  c->add_option("--bound", o.bounds, "Loop bound override LABEL=N");
}

void add_solver(CLI::App* c, Options& o) {
  c->add_option("--solver", o.solver, "SMT solver executable (default: $POIROT_SOLVER or z3)");
  c->add_option("--backend", o.backend, "smt or brute-force")->check(CLI::IsMember({"smt", "brute-force"}));
  c->add_option("--timeout", o.timeout, "Per-query timeout in seconds")->check(CLI::PositiveNumber);
  c->add_option("--oracle-cap", o.oracle_cap, "Input-bit cap for exhaustive enumeration");
  c->add_option("--jobs", o.jobs, "Parallel solver sessions")->check(CLI::PositiveNumber);
}

void add_models(CLI::App* c, Options& o) {
  c->add_option("--model", o.models, "dhw, hd, hd-transition, entropy or all (repeatable)")
      ->check(CLI::IsMember({"dhw", "hd", "hd-transition", "entropy", "all"}));
  c->add_option("--nu", o.nu, "Distinguishability threshold (default: register width)");
  c->add_option("--discriminant-bit", o.discriminant_bit, "Bit used by the discriminant check (default: MSB)");
  c->add_flag("--no-continuity", o.no_continuity, "Analyze every record from scratch");
}

void add_format(CLI::App* c, Options& o) {
  auto* j = c->add_flag("--json", o.json, "JSON output");
  auto* t = c->add_flag("--text", o.text, "Text output (default)");
  j->excludes(t);
  c->add_option("--output,-o", o.output, "Write the report to a file instead of stdout");
}

std::string read_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure(kInput, "cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

mir::LoopBounds loop_bounds(const Options& o) {
  mir::LoopBounds b;
  b.default_bound = o.unroll;
  for (const auto& s : o.bounds) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw Failure(kUsage, "--bound expects LABEL=N, got '" + s + "'");
    try {
      b.bounds[s.substr(0, eq)] = static_cast<unsigned>(std::stoul(s.substr(eq + 1)));
    } catch (const std::exception&) {
      throw Failure(kUsage, "--bound expects LABEL=N, got '" + s + "'");
    }
  }
  return b;
}

mir::Function pick(const mir::Program& p, const Options& o) {
  if (p.functions.empty()) throw Failure(kInput, "no function in '" + o.input + "'");
  if (o.function.empty()) return p.functions.front();
  try {
    return p.function(o.function);
  } catch (const Error& e) {
    throw Failure(kInput, e.what());
  }
}

// Parse, constant-time check, unroll and execute. CT violations are listed on
// `out` and abort with exit code 2.
Loaded load(const Options& o, std::ostream& out) {
  Loaded l;
  const mir::Program prog = mir::parse(read_input(o.input));
  l.original = pick(prog, o);
  const auto violations = mir::ct_check(l.original, mir::declared_taint(l.original));
  if (!violations.empty()) {
    out << "constant-time violations in " << l.original.name << ":\n";
    for (const auto& v : violations) {
      out << "  address " << v.address << " line " << v.line << ": " << mir::violation_name(v.kind) << ": " << v.reason
          << "\n";
    }
    throw Failure(kCtViolation, std::to_string(violations.size()) + " constant-time violation(s); analysis not run");
  }
  l.bounds = loop_bounds(o);
  l.unrolled = mir::unroll(l.original, l.bounds);
  l.state = symexec::run(l.unrolled, mir::declared_taint(l.unrolled));
  return l;
}

solver::SolverConfig solver_config(const Options& o) {
  solver::SolverConfig c;
  c.backend = o.backend == "brute-force" ? solver::Backend::BruteForce : solver::Backend::ExternalSmt;
  c.solver_path = o.solver;
  c.timeout_seconds = o.timeout;
  c.oracle_cap = o.oracle_cap;
  return c;
}

leakage::AnalysisConfig analysis_config(const Options& o) {
  leakage::AnalysisConfig a;
  if (!o.models.empty()) {
    a.dhw = false;
    for (const auto& m : o.models) {
      if (m == "dhw" || m == "all") a.dhw = true;
      if (m == "hd" || m == "all") a.hd_value = true;
      if (m == "hd-transition") a.hd_transition = true;
      if (m == "entropy" || m == "all") a.entropy = true;
    }
  }
  if (a.hd_value && a.hd_transition) throw Failure(kUsage, "--model hd and --model hd-transition are exclusive");
  a.nu = o.nu;
  a.discriminant_bit = o.discriminant_bit;
  a.continuity = !o.no_continuity;
  a.jobs = o.jobs;
  return a;
}

void emit(const Options& o, const std::string& text, std::ostream& out) {
  if (o.output.empty()) {
    out << text;
    return;
  }
  std::ofstream f(o.output, std::ios::binary);
  if (!f) throw Failure(kInput, "cannot write '" + o.output + "'");
  f << text;
}

report::Report make_report(const Loaded& l, const Options& o, const leakage::AnalysisConfig& a,
                           const solver::SolverConfig& s) {
  report::Report r;
  r.program.name = l.original.name;
  r.program.hash = mir::fnv1a(mir::render(l.original));
  r.program.unroll_default = l.bounds.default_bound;
  r.program.unroll_bounds = l.bounds.bounds;
  r.analysis = a;
  r.solver = report::solver_info(s);
  r.records = leakage::analyze_trace(l.state, a, s);
  (void)o;
  return r;
}

int cmd_analyze(const Options& o, std::ostream& out) {
  const Loaded l = load(o, out);
  const auto a = analysis_config(o);
  const auto s = solver_config(o);
  const report::Report r = make_report(l, o, a, s);
  emit(o, o.json ? report::render_json(r) : report::render_text(r), out);
  return report::summarize(r).flagged > 0 ? kFlagged : kOk;
}

int cmd_ctcheck(const Options& o, std::ostream& out) {
  const mir::Program prog = mir::parse(read_input(o.input));
  const mir::Function f = pick(prog, o);
  const auto violations = mir::ct_check(f, mir::declared_taint(f));
  if (violations.empty()) {
    out << f.name << ": constant-time precondition holds\n";
    return kOk;
  }
  out << "constant-time violations in " << f.name << ":\n";
  for (const auto& v : violations) {
    out << "  address " << v.address << " line " << v.line << ": " << mir::violation_name(v.kind) << ": " << v.reason
        << "\n";
  }
  return kCtViolation;
}

std::string show(const std::optional<unsigned>& v) { return v ? std::to_string(*v) : "none"; }

int cmd_oracle(const Options& o, std::ostream& out) {
  const Loaded l = load(o, out);
  std::vector<const symexec::StepRecord*> recs;
  for (const auto& r : l.state.trace) {
    if (!r.analyzable) continue;
    const unsigned bits = leakage::oracle_bits(r);
    if (bits > o.oracle_cap) {
      throw Failure(kOracleCap, "address " + std::to_string(r.address) + " needs " + std::to_string(bits) +
                                    " input bits; cap is " + std::to_string(o.oracle_cap) + " (raise --oracle-cap)");
    }
    recs.push_back(&r);
  }
  const auto s = solver_config(o);
  leakage::AnalysisConfig a;
  a.hd_value = true;
  a.entropy = true;
  a.canonical_witnesses = false;
  unsigned mismatches = 0;
  for (const auto* r : recs) {
    const leakage::OracleResult want = leakage::exhaustive_metrics(*r, o.oracle_cap);
    const leakage::PoiRecord got = leakage::analyze_record(*r, a, s);
    auto session = solver::open_session(s);
    const leakage::HdResult tr = leakage::analyze_hd_transition(*r, a, *session);
    std::vector<std::string> diffs;
    auto cmp = [&](const char* what, const std::optional<unsigned>& g, const std::optional<unsigned>& w) {
      if (g != w) diffs.push_back(std::string(what) + " solver " + show(g) + " oracle " + show(w));
    };
    cmp("dhw max", got.dhw->max, want.dhw_max);
    cmp("dhw min", got.dhw->min, want.dhw_min);
    cmp("hd max", got.hd->max, want.hd_max);
    cmp("hd min", got.hd->min, want.hd_min);
    cmp("transition max", tr.max, want.transition_max);
    cmp("transition min", tr.min, want.transition_min);
    if (got.entropy->classes != want.classes) diffs.push_back("omega classes differ");
    char head[64];
    std::snprintf(head, sizeof head, "0x%04x  %-6s %-12s ", r->address, mir::opcode_name(r->opcode), r->dest.c_str());
    if (diffs.empty()) {
      out << head << "match\n";
      continue;
    }
    ++mismatches;
    out << head << "MISMATCH";
    for (const auto& d : diffs) out << "; " << d;
    out << "\n      " << to_string(r->expr) << "\n";
  }
  out << recs.size() << " records, " << mismatches << " mismatches\n";
  return mismatches ? kFlagged : kOk;
}

int cmd_tvla(const Options& o, std::ostream& out) {
  const Loaded l = load(o, out);
  const auto s = solver_config(o);
  leakage::AnalysisConfig a;
  a.jobs = o.jobs;
  const auto records = leakage::analyze_trace(l.state, a, s);
  const leakage::PoiRecord* target = nullptr;
  if (o.poi) {
    for (const auto& r : records) {
      if (r.address == *o.poi) target = &r;
    }
    if (!target) throw Failure(kNoWitness, "address " + std::to_string(*o.poi) + " is not an analyzed record");
  } else {
    for (const auto& r : records) {
      if (!r.dhw || !r.dhw->max) continue;
      if (!target || *r.dhw->max > *target->dhw->max) target = &r;
    }
    if (!target) throw Failure(kNoWitness, "no record with witnesses to test");
  }
  if (!target->w1 || !target->w2) {
    throw Failure(kNoWitness, "address " + std::to_string(target->address) + " has no witnesses");
  }

  tvla::TvlaConfig cfg;
  cfg.vectors.count = o.traces;
  cfg.vectors.seed = o.seed;
  cfg.vectors.random_publics = o.random_publics;
  cfg.model.alpha = o.alpha;
  cfg.model.sigma = o.sigma;
  cfg.model.offset = o.offset;
  cfg.model.seed = o.seed;
  cfg.model.mode = o.leak_mode == "hd-transition" ? tvla::LeakMode::HdTransition : tvla::LeakMode::HammingWeight;
  cfg.threshold = o.t_threshold;
  if (o.class_pairs == "all") {
    const auto all = tvla::run_tvla_class_pairs(l.unrolled, l.state, *target, cfg, s);
    emit(o, o.json ? report::render_tvla_pairs_json(all) : report::render_tvla_pairs_text(all), out);
    const bool leak = std::any_of(all.begin(), all.end(), [](const tvla::TvlaResult& t) { return t.leak; });
    return leak ? kFlagged : kOk;
  }
  const tvla::TvlaResult r = tvla::run_tvla(l.unrolled, l.state, *target, cfg, s);
  emit(o, o.json ? report::render_tvla_json(r) : report::render_tvla_text(r), out);
  for (const auto& [path, binary] : {std::pair{o.csv, false}, std::pair{o.binary, true}}) {
    if (path.empty()) continue;
    for (const auto& [set, tag] : {std::pair{&r.a, "a"}, std::pair{&r.b, "b"}}) {
      const std::string file = path + "." + tag + (binary ? ".bin" : ".csv");
      std::ofstream f(file, std::ios::binary);
      if (!f) throw Failure(kInput, "cannot write '" + file + "'");
      binary ? tvla::write_binary(*set, f) : tvla::write_csv(*set, f);
    }
  }
  return r.leak ? kFlagged : kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Single-trace power side-channel leakage analysis for straight-line code", "poirot"};
  app.require_subcommand(1);
  app.set_version_flag("--version", report::version());

  auto* analyze = app.add_subcommand("analyze", "Report points of interest");
  add_common(analyze, o);
  add_solver(analyze, o);
  add_models(analyze, o);
  add_format(analyze, o);
  analyze->add_option("--seed", o.seed, "Accepted for symmetry with tvla; the analysis is deterministic");

  auto* ct = app.add_subcommand("ctcheck", "Check the constant-time precondition only");
  ct->add_option("input", o.input, "Program file")->required();
  ct->add_option("--function", o.function, "Function to check");

  auto* oracle = app.add_subcommand("oracle", "Compare solver results with exhaustive enumeration");
  add_common(oracle, o);
  add_solver(oracle, o);

  auto* tv = app.add_subcommand("tvla", "Simulate traces for a point of interest and run Welch's t-test");
  add_common(tv, o);
  add_solver(tv, o);
  add_format(tv, o);
  tv->add_option("--poi", o.poi, "Address to test (default: the record with the largest dhw max)");
  tv->add_option("--traces", o.traces, "Traces per class")->check(CLI::Range(2U, 1000000U));
  tv->add_option("--alpha", o.alpha, "Power units per Hamming weight unit")->check(CLI::PositiveNumber);
  tv->add_option("--sigma", o.sigma, "Noise standard deviation")->check(CLI::NonNegativeNumber);
  tv->add_option("--offset", o.offset, "Constant sample offset");
  tv->add_option("--seed", o.seed, "Seed for vectors and noise");
  tv->add_option("--t-threshold", o.t_threshold, "Leak threshold on |t| (10 or 4.5 are usual)")
      ->check(CLI::PositiveNumber);
  tv->add_option("--leak-mode", o.leak_mode, "hw or hd-transition")->check(CLI::IsMember({"hw", "hd-transition"}));
  tv->add_flag("--random-publics", o.random_publics, "Draw public inputs at random, shared by both sets");
  tv->add_option("--class-pairs", o.class_pairs, "max: the witness pair; all: every pair of reachable classes")
      ->check(CLI::IsMember({"max", "all"}));
  tv->add_option("--csv", o.csv, "Write traces to PREFIX.a.csv and PREFIX.b.csv");
  tv->add_option("--binary", o.binary, "Write traces to PREFIX.a.bin and PREFIX.b.bin");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (analyze->parsed()) return cmd_analyze(o, out);
    if (ct->parsed()) return cmd_ctcheck(o, out);
    if (oracle->parsed()) return cmd_oracle(o, out);
    return cmd_tvla(o, out);
  } catch (const Failure& f) {
    err << "poirot: " << f.what() << "\n";
    return f.code;
  } catch (const OracleInfeasibleError& e) {
    err << "poirot: " << e.what() << "\n";
    return kOracleCap;
  } catch (const SolverError& e) {
    err << "poirot: solver failure: " << e.what() << "\n";
    return kSolverFailure;
  } catch (const ConfigError& e) {
    err << "poirot: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    err << "poirot: " << e.what() << "\n";
    return kInput;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace poirot::cli
