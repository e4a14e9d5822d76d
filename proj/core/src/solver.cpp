#include "poirot/solver.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "poirot/error.hpp"
#include "solver_impl.hpp"

namespace poirot::solver {

const char* status_name(OptStatus s) noexcept {
  switch (s) {
    case OptStatus::Optimal: return "optimal";
    case OptStatus::Suboptimal: return "suboptimal";
    case OptStatus::Unsat: return "unsat";
    case OptStatus::Timeout: return "timeout";
  }
  return "?";
}

std::string default_solver_path() {
  if (const char* env = std::getenv("POIROT_SOLVER"); env && *env) return env;
  return "z3";
}

// ---------------------------------------------------------------------------
// Session

Session::Session() : frames_(1) {}

void Session::push() {
  do_push();
  frames_.emplace_back();
}

void Session::pop() {
  if (frames_.size() == 1) throw SolverError("pop without matching push");
  do_pop();
  frames_.pop_back();
}

bool Session::is_declared(const std::string& name) const {
  for (const auto& f : frames_) {
    for (const auto& v : f.vars) {
      if (v.name == name) return true;
    }
  }
  return false;
}

void Session::declare(const Expr& e) {
  for (const auto& v : vars(e)) {
    if (is_declared(v.name)) continue;
    frames_.back().vars.push_back(v);
    do_declare(v);
  }
}

void Session::add(const Expr& assertion) {
  if (assertion.width() != 1) throw TypeError("assertions must have width 1");
  declare(assertion);
  frames_.back().assertions.push_back(assertion);
  do_add(assertion);
}

std::vector<Expr> Session::assertions() const {
  std::vector<Expr> out;
  for (const auto& f : frames_) out.insert(out.end(), f.assertions.begin(), f.assertions.end());
  return out;
}

std::vector<VarInfo> Session::declared() const {
  std::vector<VarInfo> out;
  for (const auto& f : frames_) out.insert(out.end(), f.vars.begin(), f.vars.end());
  return out;
}

CheckResult Session::check() {
  ++checks_;
  CheckResult r = do_check();
  if (r.status != SatStatus::Sat) {
    r.model.clear();
    return r;
  }
  Model full;
  for (const auto& v : declared()) {
    auto it = r.model.find(v.name);
    if (it == r.model.end()) throw SolverError("solver model lacks a value for '" + v.name + "'");
    if (it->second.width() != v.width) throw SolverError("solver model has the wrong width for '" + v.name + "'");
    full.emplace(v.name, it->second);
  }
  for (const auto& a : assertions()) {
    if (eval(a, full).value() != 1) throw SolverError("solver model violates assertion " + to_string(a));
  }
  r.model = std::move(full);
  return r;
}

std::unique_ptr<Session> open_session(const SolverConfig& cfg) {
  if (!(cfg.timeout_seconds > 0)) throw ConfigError("solver timeout must be positive");
  if (cfg.backend == Backend::BruteForce) return detail::make_brute_force_session(cfg);
  return detail::make_smt_session(cfg);
}

CheckResult check_sat(const Formula& f, const SolverConfig& cfg) {
  auto s = open_session(cfg);
  for (const auto& a : f.assertions) s->add(a);
  return s->check();
}

// ---------------------------------------------------------------------------
// Optimization

OptResult optimize(Session& s, const Objective& obj) {
  OptResult r;
  const unsigned w = obj.expr.width();
  const std::uint64_t lo_bound = std::min(obj.lo, width_mask(w));
  const std::uint64_t hi_bound = std::min(obj.hi, width_mask(w));
  auto value_of = [&](const Model& m) { return eval(obj.expr, m).value(); };

  s.declare(obj.expr);
  CheckResult first = s.check();
  r.checks = 1;
  if (first.status == SatStatus::Unsat) return r;
  if (first.status == SatStatus::Unknown) {
    r.status = OptStatus::Timeout;
    return r;
  }
  std::uint64_t best = value_of(first.model);
  Model best_model = std::move(first.model);

  auto probe = [&](const Expr& bound) -> CheckResult {
    s.push();
    s.add(bound);
    CheckResult c = s.check();
    s.pop();
    ++r.checks;
    return c;
  };

  bool timed_out = false;
  if (obj.direction == Direction::Maximize) {
    std::uint64_t lo = best;
    std::uint64_t hi = std::max(hi_bound, best);
    while (lo < hi) {
      const std::uint64_t mid = lo + (hi - lo + 1) / 2;
      CheckResult c = probe(ule(Expr::constant(w, mid), obj.expr));
      if (c.status == SatStatus::Unknown) {
        timed_out = true;
        break;
      }
      if (c.status == SatStatus::Sat) {
        lo = value_of(c.model);
        best_model = std::move(c.model);
      } else {
        hi = mid - 1;
      }
    }
    best = lo;
  } else {
    std::uint64_t lo = std::min(lo_bound, best);
    std::uint64_t hi = best;
    while (lo < hi) {
      const std::uint64_t mid = lo + (hi - lo) / 2;
      CheckResult c = probe(ule(obj.expr, Expr::constant(w, mid)));
      if (c.status == SatStatus::Unknown) {
        timed_out = true;
        break;
      }
      if (c.status == SatStatus::Sat) {
        hi = value_of(c.model);
        best_model = std::move(c.model);
      } else {
        lo = mid + 1;
      }
    }
    best = hi;
  }
  r.status = timed_out ? OptStatus::Suboptimal : OptStatus::Optimal;
  r.value = best;
  r.model = std::move(best_model);
  return r;
}

OptResult optimize(const Formula& f, const Objective& obj, const SolverConfig& cfg) {
  auto s = open_session(cfg);
  for (const auto& a : f.assertions) s->add(a);
  return optimize(*s, obj);
}

// ---------------------------------------------------------------------------
// Encodings

namespace {
std::atomic<bool> g_corrupt_popcount{false};
}

namespace testing {
void set_popcount_corruption(bool on) noexcept { g_corrupt_popcount = on; }
bool popcount_corruption() noexcept { return g_corrupt_popcount; }
}  // namespace testing

unsigned popcount_width(unsigned n) noexcept { return static_cast<unsigned>(std::bit_width(n)); }

Expr encode_popcount(const Expr& x) {
  const unsigned n = x.width();
  const unsigned m = popcount_width(n);
  std::vector<Expr> terms;
  for (unsigned i = g_corrupt_popcount ? 1 : 0; i < n; ++i) terms.push_back(extract(x, i, i));
  if (terms.empty()) return Expr::constant(m, 0);
  // Adder tree whose widths grow one bit per level.
  while (terms.size() > 1) {
    std::vector<Expr> next;
    for (std::size_t i = 0; i + 1 < terms.size(); i += 2) {
      next.push_back(add(zero_ext(terms[i], 1), zero_ext(terms[i + 1], 1)));
    }
    if (terms.size() % 2) next.push_back(zero_ext(terms.back(), 1));
    terms = std::move(next);
  }
  const Expr& sum = terms.front();
  if (sum.width() == m) return sum;
  if (sum.width() < m) return zero_ext(sum, m - sum.width());
  return extract(sum, m - 1, 0);
}

Expr encode_abs_diff(const Expr& a, const Expr& b) {
  if (a.width() != b.width()) throw TypeError("encode_abs_diff needs equal widths");
  const Expr wa = zero_ext(a, 1);
  const Expr wb = zero_ext(b, 1);
  return ite(ule(wb, wa), sub(wa, wb), sub(wb, wa));
}

// ---------------------------------------------------------------------------
// SMT-LIB emission

namespace {

std::string const_text(std::uint64_t v, unsigned w) {
  return "(_ bv" + std::to_string(v) + " " + std::to_string(w) + ")";
}

class Emitter {
 public:
  std::string run(const Expr& root) {
    count(root);
    order(root);
    std::string prefix;
    std::size_t opened = 0;
    for (const Node* n : postorder_) {
      if (uses_[n] < 2 || n->operands.empty()) continue;
      const std::string body = term(n);
      const std::string name = "?t" + std::to_string(names_.size());
      names_.emplace(n, name);
      prefix += "(let ((" + name + " " + body + ")) ";
      ++opened;
    }
    return prefix + term(root.id()) + std::string(opened, ')');
  }

 private:
  void count(const Expr& e) {
    if (uses_[e.id()]++ > 0) return;
    for (const auto& c : e.operands()) count(c);
  }
  void order(const Expr& e) {
    if (!seen_.insert(e.id()).second) return;
    for (const auto& c : e.operands()) order(c);
    postorder_.push_back(e.id());
  }

  std::string ref(const Node* n) {
    if (auto it = names_.find(n); it != names_.end()) return it->second;
    return term(n);
  }
  std::string as_bool(const Node* n) { return "(= " + ref(n) + " #b1)"; }

  std::string term(const Node* n) {
    auto arg = [&](std::size_t i) { return ref(n->operands[i].id()); };
    auto bin = [&](const char* f) { return std::string("(") + f + " " + arg(0) + " " + arg(1) + ")"; };
    auto pred = [&](const char* f) {
      return std::string("(ite (") + f + " " + arg(0) + " " + arg(1) + ") #b1 #b0)";
    };
    switch (n->op) {
      case Op::Var: return "|" + n->name + "|";
      case Op::Const: return const_text(n->value, n->width);
      case Op::Add: return bin("bvadd");
      case Op::Sub: return bin("bvsub");
      case Op::Mul: return bin("bvmul");
      case Op::And: return bin("bvand");
      case Op::Or: return bin("bvor");
      case Op::Xor: return bin("bvxor");
      case Op::Not: return "(bvnot " + arg(0) + ")";
      case Op::Shl: return bin("bvshl");
      case Op::Lshr: return bin("bvlshr");
      case Op::Ashr: return bin("bvashr");
      case Op::Extract:
        return "((_ extract " + std::to_string(n->p0) + " " + std::to_string(n->p1) + ") " + arg(0) + ")";
      case Op::ZeroExt: return "((_ zero_extend " + std::to_string(n->p0) + ") " + arg(0) + ")";
      case Op::SignExt: return "((_ sign_extend " + std::to_string(n->p0) + ") " + arg(0) + ")";
      case Op::Concat: return bin("concat");
      case Op::Ite: return "(ite " + as_bool(n->operands[0].id()) + " " + arg(1) + " " + arg(2) + ")";
      case Op::Eq: return pred("=");
      case Op::Ult: return pred("bvult");
      case Op::Ule: return pred("bvule");
      case Op::Slt: return pred("bvslt");
    }
    throw SolverError("cannot emit operator");
  }

  std::unordered_map<const Node*, unsigned> uses_;
  std::unordered_set<const Node*> seen_;
  std::vector<const Node*> postorder_;
  std::unordered_map<const Node*, std::string> names_;
};

}  // namespace

std::string to_smtlib(const Expr& e) { return Emitter().run(e); }

std::string to_smtlib_script(const Formula& f) {
  std::ostringstream os;
  os << "(set-logic QF_BV)\n";
  for (const auto& v : vars(std::span<const Expr>(f.assertions))) {
    os << "(declare-const |" << v.name << "| (_ BitVec " << v.width << "))\n";
  }
  for (const auto& a : f.assertions) os << "(assert (= " << to_smtlib(a) << " #b1))\n";
  os << "(check-sat)\n";
  return os.str();
}

}  // namespace poirot::solver
