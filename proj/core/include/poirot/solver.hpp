#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "poirot/expr.hpp"

namespace poirot::solver {

/// Conjunction of width-1 expressions.
struct Formula {
  std::vector<Expr> assertions;
};

enum class Direction { Minimize, Maximize };

struct Objective {
  Expr expr;
  Direction direction = Direction::Maximize;
  /// Known range of the objective; the search never leaves [lo, hi].
  std::uint64_t lo = 0;
  std::uint64_t hi = 0;
};

using Model = Env;

enum class SatStatus { Sat, Unsat, Unknown };

struct CheckResult {
  SatStatus status = SatStatus::Unknown;
  Model model;
};

enum class OptStatus { Optimal, Suboptimal, Unsat, Timeout };

const char* status_name(OptStatus s) noexcept;

struct OptResult {
  OptStatus status = OptStatus::Unsat;
  std::optional<std::uint64_t> value;
  std::optional<Model> model;
  /// Satisfiability checks issued by this optimization.
  unsigned checks = 0;
};

enum class Backend { ExternalSmt, BruteForce };

struct SolverConfig {
  Backend backend = Backend::ExternalSmt;
  /// Solver executable; searched on PATH when it has no slash.
  std::string solver_path = "z3";
  std::vector<std::string> solver_args = {"-in", "-smt2"};
  double timeout_seconds = 60.0;
  /// Brute-force input-bit cap.
  unsigned oracle_cap = 20;
  /// Keep one solver process per session and use push/pop; otherwise replay per check.
  bool incremental = true;
  /// Command sent for each check. Empty picks a bit-blasting tactic for z3 and
  /// plain (check-sat) for anything else.
  std::string check_command;
};

/// Solver path from POIROT_SOLVER, else "z3".
std::string default_solver_path();

/// Incremental assertion stack. Every model returned by check() has been
/// re-evaluated locally against all active assertions.
class Session {
 public:
  virtual ~Session() = default;

  void push();
  void pop();
  void add(const Expr& assertion);
  /// Makes the variables of `e` part of every model without constraining them.
  void declare(const Expr& e);
  CheckResult check();

  std::size_t depth() const noexcept { return frames_.size() - 1; }
  unsigned check_count() const noexcept { return checks_; }
  /// Active assertions, outermost frame first.
  std::vector<Expr> assertions() const;
  std::vector<VarInfo> declared() const;

 protected:
  Session();
  virtual void do_push() = 0;
  virtual void do_pop() = 0;
  virtual void do_declare(const VarInfo& v) = 0;
  virtual void do_add(const Expr& assertion) = 0;
  virtual CheckResult do_check() = 0;

  struct Frame {
    std::vector<Expr> assertions;
    std::vector<VarInfo> vars;
  };
  std::vector<Frame> frames_;

 private:
  bool is_declared(const std::string& name) const;
  unsigned checks_ = 0;
};

std::unique_ptr<Session> open_session(const SolverConfig& cfg);

CheckResult check_sat(const Formula& f, const SolverConfig& cfg);

/// Binary search over the objective within the session's current assertions.
/// At most ceil(log2(hi - lo + 1)) + 1 checks.
OptResult optimize(Session& s, const Objective& obj);
OptResult optimize(const Formula& f, const Objective& obj, const SolverConfig& cfg);

/// Exact optimum by exhaustive enumeration; status is always optimal or unsat.
/// Throws OracleInfeasibleError when the free input bits exceed `cap`.
OptResult brute_force_opt(const Formula& f, const Objective& obj, unsigned cap = 20);

/// Output width of encode_popcount for an n-bit input: ceil(log2(n + 1)).
unsigned popcount_width(unsigned n) noexcept;

/// ω(x) as an adder tree of zero-extended bits.
Expr encode_popcount(const Expr& x);

/// |a − b| for equal-width unsigned terms; one bit wider than the inputs.
Expr encode_abs_diff(const Expr& a, const Expr& b);

/// SMT-LIB2 term with let-sharing for repeated subterms.
std::string to_smtlib(const Expr& e);

/// Full standalone QF_BV script: declarations, assertions and (check-sat).
std::string to_smtlib_script(const Formula& f);

namespace testing {
/// Drops bit 0 from every popcount encoding while set. Used to prove the
/// oracle harness detects a broken encoding.
void set_popcount_corruption(bool on) noexcept;
bool popcount_corruption() noexcept;
}  // namespace testing

}  // namespace poirot::solver
