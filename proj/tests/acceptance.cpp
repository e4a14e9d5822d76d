// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "poirot/error.hpp"
#include "poirot/leakage.hpp"
#include "poirot/report.hpp"
#include "poirot/tvla.hpp"
#include "test_support.hpp"

using namespace poirot;
using Clock = std::chrono::steady_clock;

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

Loaded load(const std::string& name) { return load_text(test::fixture(name)); }

const symexec::StepRecord& step(const Loaded& l, const std::string& dest) {
  for (const auto& r : l.state.trace) {
    if (r.dest == dest) return r;
  }
  throw std::runtime_error("no record " + dest);
}

const leakage::PoiRecord& poi(const std::vector<leakage::PoiRecord>& rs, std::uint32_t address) {
  for (const auto& r : rs) {
    if (r.address == address) return r;
  }
  throw std::runtime_error("no analyzed record at " + std::to_string(address));
}

bool has(const std::vector<leakage::Reason>& rs, leakage::Reason r) {
  return std::find(rs.begin(), rs.end(), r) != rs.end();
}

solver::SolverConfig smt_or_brute() { return test::solver_path() ? test::smt_config() : test::brute_config(24); }

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Collects failed conditions so each criterion can explain itself in one line.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failed_.push_back(what);
  }
  bool ok() const { return failed_.empty(); }
  std::string why() const {
    std::string s;
    for (const auto& f : failed_) s += (s.empty() ? "" : "; ") + f;
    return s;
  }

 private:
  std::vector<std::string> failed_;
};

std::string fmt(double v, int digits = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string opt(const std::optional<unsigned>& v) { return v ? std::to_string(*v) : "none"; }

// --- criteria -------------------------------------------------------------

std::string c1(Check& c) {
  const auto t0 = Clock::now();
  const Loaded l = load("cadd.mir");
  leakage::AnalysisConfig a;
  a.entropy = true;
  const auto rs = leakage::analyze_trace(l.state, a, test::brute_config(24));
  const double secs = seconds_since(t0);
  const auto& mask = poi(rs, step(l, "r1").address);
  c.expect(mask.opcode == mir::Opcode::Asr && mask.vulnerable, "asr not flagged");
  c.expect(mask.dhw && mask.dhw->max == 8U && mask.dhw->min == 8U, "dhw bounds " + opt(mask.dhw->max) + "/" +
                                                                         opt(mask.dhw->min));
  const bool values = mask.w1 && mask.w2 &&
                      std::set<std::uint64_t>{mask.w1->value.value(), mask.w2->value.value()} ==
                          std::set<std::uint64_t>{0x00, 0xFF};
  c.expect(values, "witness values not {0x00, 0xFF}");
  c.expect(mask.entropy && std::abs(mask.entropy->value - 1.0) <= 0.005, "entropy off");
  c.expect(secs < 10.0, "took " + fmt(secs) + " s");
  return "cadd asr dhw " + opt(mask.dhw->max) + "/" + opt(mask.dhw->min) + ", H " +
         fmt(mask.entropy ? mask.entropy->value : -1) + ", brute force " + fmt(secs) + " s";
}

std::string c2(Check& c) {
  const Loaded l = load("sbfx.mir");
  const auto& r = step(l, "r2");
  leakage::AnalysisConfig a;
  a.entropy = true;
  const auto p = leakage::analyze_record(r, a, smt_or_brute());
  c.expect(p.dhw && p.dhw->max == 32U && p.dhw->min == 32U, "dhw bounds");
  std::set<std::int64_t> secrets;
  if (p.w1 && p.w2) {
    secrets = {p.w1->inputs.at("v").signed_value(), p.w2->inputs.at("v").signed_value()};
  }
  c.expect(secrets == std::set<std::int64_t>{-32768, 0}, "witness secrets not {-32768, 0}");
  c.expect(p.entropy && std::abs(p.entropy->value - 1.0) <= 0.005, "entropy off");
  const auto t0 = Clock::now();
  const auto o = leakage::exhaustive_metrics(r, 32);
  const double secs = seconds_since(t0);
  c.expect(o.dhw_max == p.dhw->max && o.dhw_min == p.dhw->min, "brute force disagrees");
  c.expect(secs < 60.0, "brute force took " + fmt(secs) + " s");
  return "sbfx dhw " + opt(p.dhw->max) + "/" + opt(p.dhw->min) + ", oracle " + opt(o.dhw_max) + "/" +
         opt(o.dhw_min) + " over 2x2^16 in " + fmt(secs) + " s";
}

std::string c3(Check& c) {
  const Loaded l = load("arx.mir");
  const auto& r = step(l, "r3");
  leakage::AnalysisConfig a;
  a.entropy = true;
  const auto s = smt_or_brute();
  const auto p = leakage::analyze_record(r, a, s);
  c.expect(p.dhw && p.dhw->min == 0U && p.dhw->max == 2U, "dhw bounds");
  auto session = solver::open_session(s);
  const auto probe = leakage::probe_domain(r.expr, 4, *session);
  std::set<std::uint64_t> dom;
  for (const auto& v : probe.values) dom.insert(v.value());
  c.expect(probe.values.size() == 4 && probe.complete, "domain probe did not close after four values");
  c.expect(dom == std::set<std::uint64_t>{0, 1, 2, 3}, "domain not {0,1,2,3}");
  c.expect(p.entropy && p.entropy->flagged && p.entropy->value <= 1.0, "entropy not flagged");
  const auto o = leakage::exhaustive_metrics(r, 32);
  c.expect(p.entropy && std::abs(p.entropy->value - o.entropy) < 1e-9, "entropy differs from the oracle");
  return "arx r3 dhw " + opt(p.dhw->max) + "/" + opt(p.dhw->min) + ", " + std::to_string(probe.values.size()) +
         " values then UNSAT, H " + fmt(p.entropy ? p.entropy->value : -1) + " at width 32";
}

std::string c4(Check& c) {
  const Loaded l = load("kyber.mir");
  const auto& r = step(l, "r2");
  const auto p = leakage::analyze_record(r, {}, smt_or_brute());
  c.expect(p.dhw && p.dhw->determiner, "no determiner");
  c.expect(p.dhw && p.dhw->max == 16U && p.dhw->min == 16U, "dhw not 16");
  c.expect(p.dhw && p.dhw->domain && has(p.dhw->reasons, leakage::Reason::BlockedPairUnsat),
           "no blocked-pair proof");
  c.expect(p.vulnerable, "not flagged");
  return "kyber mask dhw " + opt(p.dhw->max) + "/" + opt(p.dhw->min) + ", domain {" +
         (p.dhw->domain ? p.dhw->domain->first.to_string() + ", " + p.dhw->domain->second.to_string() : "?") + "}";
}

std::string c5(Check& c) {
  const double full = leakage::class_entropy(8, {0, 1, 2, 3, 4, 5, 6, 7, 8});
  const double two = leakage::class_entropy(8, {0, 8});
  c.expect(std::abs(full - 2.54) <= 0.01, "full range " + fmt(full, 4));
  c.expect(two == 1.0, "two classes " + fmt(two, 17));
  // and through the solver on a full-range register
  const Loaded l = load_text("func f(k: secret u8) {\n  r0 = not k\n}\n");
  leakage::AnalysisConfig a;
  a.dhw = false;
  a.entropy = true;
  auto session = solver::open_session(smt_or_brute());
  const auto e = leakage::analyze_entropy(l.state.trace.at(0), a, *session);
  c.expect(e.classes.size() == 9 && std::abs(e.value - full) < 1e-12, "solver classes");
  return "full F_8 " + fmt(full, 4) + ", two classes " + fmt(two, 4) + ", solver " + fmt(e.value, 4);
}

// Straight-line programs over one 8-bit secret and an optional 8-bit public.
std::string random_program(std::mt19937_64& rng, int index) {
  auto pick = [&](unsigned n) { return static_cast<unsigned>(std::uniform_int_distribution<unsigned>(0, n - 1)(rng)); };
  const bool with_public = pick(2);
  std::ostringstream os;
  os << "func rnd" << index << "(k: secret u8" << (with_public ? ", p: public u8" : "") << ") {\n";
  std::vector<std::pair<std::string, unsigned>> regs{{"k", 8}};
  if (with_public) regs.push_back({"p", 8});
  auto choose = [&](std::optional<unsigned> width) {
    std::vector<std::pair<std::string, unsigned>> fit;
    for (const auto& r : regs) {
      if (!width || r.second == *width) fit.push_back(r);
    }
    return fit.empty() ? std::optional<std::pair<std::string, unsigned>>{} : fit[pick(fit.size())];
  };
  const unsigned count = 3 + pick(6);
  for (unsigned i = 0; i < count; ++i) {
    const std::string dest = "r" + std::to_string(i);
    const auto a = *choose(std::nullopt);
    const unsigned w = a.second;
    const std::uint64_t imm = rng() & width_mask(w);
    unsigned out = w;
    switch (pick(9)) {
      case 0:
      case 1:
      case 2: {
        static const char* ops[] = {"add", "sub", "mul", "and", "or", "xor"};
        const auto b = choose(w);
        os << "  " << dest << " = " << ops[pick(6)] << " " << a.first << ", ";
        if (b && pick(3)) {
          os << b->first << "\n";
        } else {
          os << "#" << imm << "\n";
        }
        break;
      }
      case 3: os << "  " << dest << " = not " << a.first << "\n"; break;
      case 4: {
        static const char* ops[] = {"shl", "lsr", "asr"};
        os << "  " << dest << " = " << ops[pick(3)] << " " << a.first << ", #" << pick(w) << "\n";
        break;
      }
      case 5:
        if (w >= 16) {
          os << "  " << dest << " = not " << a.first << "\n";
          break;
        }
        out = 16;
        os << "  " << dest << " = " << (pick(2) ? "zext" : "sext") << ".16 " << a.first << "\n";
        break;
      case 6: {
        out = 8 + 8 * pick(2);
        const unsigned fw = 1 + pick(std::min(w, out));
        const unsigned lsb = pick(w - fw + 1);
        os << "  " << dest << " = " << (pick(2) ? "ubfx" : "sbfx") << "." << out << " " << a.first << ", #" << lsb
           << ", #" << fw << "\n";
        break;
      }
      case 7: {
        const auto b = choose(w);
        os << "  " << dest << " = xor " << a.first << ", " << (b ? b->first : a.first) << "\n";
        break;
      }
      default: os << "  " << dest << " = sub " << a.first << ", " << a.first << "\n"; break;
    }
    regs.push_back({dest, out});
  }
  os << "}\n";
  return os.str();
}

std::string c6(Check& c) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240606);
  const auto s = smt_or_brute();
  leakage::AnalysisConfig a;
  a.hd_value = true;
  a.canonical_witnesses = false;
  unsigned programs = 0, records = 0, mismatches = 0;
  std::string first;
  for (int i = 0; programs < 200 && i < 1000; ++i) {
    const std::string text = random_program(rng, i);
    const Loaded l = load_text(text);
    const auto rs = leakage::analyze_trace(l.state, a, s);
    if (rs.empty()) continue;
    ++programs;
    for (const auto& p : rs) {
      const symexec::StepRecord* rec = nullptr;
      for (const auto& r : l.state.trace) {
        if (r.address == p.address) rec = &r;
      }
      const auto o = leakage::exhaustive_metrics(*rec, 32);
      ++records;
      const bool same = p.dhw->max == o.dhw_max && p.dhw->min == o.dhw_min && p.hd->max == o.hd_max &&
                        p.hd->min == o.hd_min;
      if (!same) {
        ++mismatches;
        if (first.empty()) {
          first = "program " + std::to_string(i) + " address " + std::to_string(p.address) + ": solver " +
                  opt(p.dhw->max) + "/" + opt(p.dhw->min) + " d " + opt(p.hd->max) + "/" + opt(p.hd->min) +
                  ", oracle " + opt(o.dhw_max) + "/" + opt(o.dhw_min) + " d " + opt(o.hd_max) + "/" +
                  opt(o.hd_min);
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  c.expect(programs >= 200, "only " + std::to_string(programs) + " programs with tainted records");
  c.expect(mismatches == 0, std::to_string(mismatches) + " mismatches, first " + first);
  c.expect(secs < 600.0, "took " + fmt(secs) + " s");
  return std::to_string(programs) + " programs, " + std::to_string(records) + " records, " +
         std::to_string(mismatches) + " mismatches, " + fmt(secs, 1) + " s" + (test::solver_path() ? "" : " (no SMT solver: brute force vs oracle)");
}

std::string c7(Check& c) {
  const Loaded l = load("cadd.mir");
  const auto s = smt_or_brute();
  const auto mask = leakage::analyze_record(step(l, "r1"), {}, s);
  tvla::TvlaConfig cfg;
  cfg.vectors.count = 100;
  cfg.vectors.seed = 7;
  cfg.vectors.random_publics = true;
  cfg.model.alpha = 1;
  cfg.model.sigma = 1;
  cfg.model.seed = 7;
  const auto r = tvla::run_tvla(l.f, l.state, mask, cfg, s);
  // r4 = sum + r3 with a random public sum covers every weight class
  const auto& control_rec = step(l, "r4");
  const auto control_cls = leakage::exhaustive_metrics(control_rec, 24).classes;
  c.expect(control_cls.size() == 9, "control is not full range");
  std::optional<double> control;
  for (std::size_t j = 0; j < r.t.size(); ++j) {
    if (r.a.addresses[j] == control_rec.address) control = r.t[j];
  }
  c.expect(std::abs(r.poi_t) >= 10.0, "|t| at the mask " + fmt(std::abs(r.poi_t)));
  c.expect(control && std::abs(*control) < 4.5, "|t| at the control " + fmt(control ? std::abs(*control) : -1));
  const auto again = tvla::run_tvla(l.f, l.state, mask, cfg, s);
  c.expect(again.t == r.t && again.a.samples == r.a.samples && again.b.samples == r.b.samples, "not deterministic");
  return "|t| mask " + fmt(std::abs(r.poi_t)) + ", control r4 " + fmt(control ? std::abs(*control) : -1) +
         ", 100 traces/class, seed 7";
}

std::string c8(Check& c) {
  std::string detail;
  for (const char* name : {"secret_branch.mir", "secret_load.mir"}) {
    std::ostringstream out, err;
    const int code = cli::run({"analyze", std::string(POIROT_FIXTURES) + "/" + name, "--json"}, out, err);
    c.expect(code == cli::kCtViolation, std::string(name) + " exit " + std::to_string(code));
    c.expect(out.str().find("constant-time violations") != std::string::npos, std::string(name) + " no listing");
    c.expect(out.str().find("\"records\"") == std::string::npos, std::string(name) + " produced a report");
    detail += (detail.empty() ? "" : ", ") + std::string(name) + " exit " + std::to_string(code);
  }
  return detail;
}

std::string c9(Check& c) {
  std::vector<std::string> extra;
  if (const auto p = test::solver_path()) {
    extra = {"--solver", *p};
  } else {
    extra = {"--backend", "brute-force", "--oracle-cap", "24"};
  }
  std::size_t bytes = 0;
  for (const char* name : {"cadd.mir", "kyber.mir", "ctcmp.mir"}) {
    std::vector<std::string> args{"analyze", std::string(POIROT_FIXTURES) + "/" + name, "--json", "--model", "all",
                                  "--seed", "5"};
    args.insert(args.end(), extra.begin(), extra.end());
    std::ostringstream o1, o2, e;
    cli::run(args, o1, e);
    cli::run(args, o2, e);
    c.expect(!o1.str().empty() && o1.str() == o2.str(), std::string(name) + " differs");
    bytes += o1.str().size();
  }
  return "3 fixtures, two runs each, " + std::to_string(bytes) + " bytes identical";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<std::string(Check&)>>> criteria = {
      {"masked conditional add", c1}, {"sbfx extraction", c2},   {"ARX-box r3", c3},
      {"Kyber mask encode", c4},      {"entropy unit values", c5}, {"oracle equivalence", c6},
      {"TVLA loop", c7},              {"CT precondition", c8},   {"determinism", c9},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check c;
    std::string detail;
    try {
      detail = criteria[i].second(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    const bool ok = c.ok();
    failed += !ok;
    std::cout << (ok ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << ": "
              << (ok ? detail : c.why()) << std::endl;
  }
  return failed ? 1 : 0;
}
