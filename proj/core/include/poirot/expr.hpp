#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "poirot/bitvector.hpp"

namespace poirot {

enum class Op : std::uint8_t {
  Var,
  Const,
  Add,
  Sub,
  Mul,
  And,
  Or,
  Xor,
  Not,
  Shl,
  Lshr,
  Ashr,
  Extract,
  ZeroExt,
  SignExt,
  Concat,
  Ite,
  Eq,
  Ult,
  Ule,
  Slt,
};

const char* op_name(Op op) noexcept;

struct Node;

/// Immutable, shareable handle to a width-annotated bitvector expression DAG.
///
/// Construction checks widths and throws TypeError on disagreement. The taint
/// bit of a node is the union of the taint bits of the variables below it.
class Expr {
 public:
  Expr() = default;

  static Expr var(std::string name, unsigned width, bool secret, bool signed_hint = false);
  static Expr constant(const BitVector& value);
  static Expr constant(unsigned width, std::uint64_t value) { return constant(BitVector(width, value)); }

  /// Builds a node without simplification. Parameters: Extract uses (hi, lo),
  /// ZeroExt/SignExt use (k, unused).
  static Expr make(Op op, std::vector<Expr> operands, unsigned p0 = 0, unsigned p1 = 0);

  explicit operator bool() const noexcept { return node_ != nullptr; }

  Op op() const noexcept;
  unsigned width() const noexcept;
  bool tainted() const noexcept;
  std::size_t arity() const noexcept;
  const Expr& operand(std::size_t i) const;
  std::span<const Expr> operands() const noexcept;

  /// Var only.
  const std::string& name() const;
  bool signed_hint() const;
  /// Const only.
  BitVector value() const;
  /// Extract: hi/lo. ZeroExt/SignExt: ext() is the number of added bits.
  unsigned hi() const;
  unsigned lo() const;
  unsigned ext() const;

  bool is_var() const noexcept { return node_ && op() == Op::Var; }
  bool is_const() const noexcept { return node_ && op() == Op::Const; }
  bool is_const(std::uint64_t v) const noexcept;

  const Node* id() const noexcept { return node_.get(); }

  friend bool operator==(const Expr& a, const Expr& b) noexcept { return a.node_ == b.node_; }

 private:
  explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

struct Node {
  Op op;
  unsigned width;
  bool tainted;
  bool signed_hint = false;
  unsigned p0 = 0;
  unsigned p1 = 0;
  std::uint64_t value = 0;
  std::string name;
  std::vector<Expr> operands;
};

/// Variable as it appears in an expression.
struct VarInfo {
  std::string name;
  unsigned width;
  bool secret;
  bool signed_hint = false;

  friend bool operator==(const VarInfo&, const VarInfo&) = default;
};

using Env = std::map<std::string, BitVector>;

// Simplifying constructors. Each folds constants and applies the local
// identity/absorption rules of simplify(); operands are assumed simplified.
Expr add(const Expr& a, const Expr& b);
Expr sub(const Expr& a, const Expr& b);
Expr mul(const Expr& a, const Expr& b);
Expr bit_and(const Expr& a, const Expr& b);
Expr bit_or(const Expr& a, const Expr& b);
Expr bit_xor(const Expr& a, const Expr& b);
Expr bit_not(const Expr& a);
Expr shl(const Expr& a, const Expr& amount);
Expr lshr(const Expr& a, const Expr& amount);
Expr ashr(const Expr& a, const Expr& amount);
Expr extract(const Expr& a, unsigned hi, unsigned lo);
Expr zero_ext(const Expr& a, unsigned k);
Expr sign_ext(const Expr& a, unsigned k);
Expr concat(const Expr& hi, const Expr& lo);
Expr ite(const Expr& cond, const Expr& then_e, const Expr& else_e);
Expr eq(const Expr& a, const Expr& b);
Expr ne(const Expr& a, const Expr& b);
Expr ult(const Expr& a, const Expr& b);
Expr ule(const Expr& a, const Expr& b);
Expr slt(const Expr& a, const Expr& b);
/// Width-1 conjunction helper.
Expr all_of(std::span<const Expr> conds);

/// Rebuilds `op` over `operands` through the simplifying constructors.
Expr rebuild(Op op, std::vector<Expr> operands, unsigned p0, unsigned p1);

/// Concrete value under two's-complement semantics. Shifts by >= width
/// saturate: zero for Shl/Lshr, sign fill for Ashr.
BitVector eval(const Expr& e, const Env& env);

/// Bottom-up simplification; preserves eval on every environment.
Expr simplify(const Expr& e);

/// Renames every variable to name + suffix, preserving taint and structure.
Expr rename_fresh(const Expr& e, const std::string& suffix);

/// Applies `f` to every variable leaf; `f` returns the replacement.
Expr substitute(const Expr& e, const std::function<Expr(const Expr&)>& f);

/// Distinct variables, sorted by name.
std::vector<VarInfo> vars(const Expr& e);
std::vector<VarInfo> vars(std::span<const Expr> es);

bool structurally_equal(const Expr& a, const Expr& b);

/// Number of distinct nodes in the DAG.
std::size_t dag_size(const Expr& e);

/// Infix rendering, e.g. "((x - 0x40) >>s 0x7)".
std::string to_string(const Expr& e);

/// Flattened, topologically ordered form of a set of root expressions for
/// fast repeated evaluation. Every step has a level: the largest index in
/// `var_order` of any variable it depends on (-1 for constant steps), and the
/// steps are sorted by level so an enumerator can re-evaluate only the steps
/// affected by an inner variable.
class EvalPlan {
 public:
  EvalPlan(std::span<const Expr> roots, std::vector<std::string> var_order);

  std::size_t var_count() const noexcept { return var_order_.size(); }
  const std::vector<std::string>& var_order() const noexcept { return var_order_; }

  void set_var(std::size_t index, std::uint64_t value) noexcept { slots_[var_slot_[index]] = value; }
  /// Evaluates the steps at exactly `level`.
  void run_level(int level) noexcept;
  /// Evaluates every step.
  void run_all() noexcept;

  std::uint64_t root_value(std::size_t i) const noexcept { return slots_[root_slot_[i]]; }
  int root_level(std::size_t i) const noexcept { return root_level_[i]; }
  std::size_t root_count() const noexcept { return root_slot_.size(); }

 private:
  struct Step {
    Op op;
    unsigned width;
    unsigned in_width;
    unsigned p0;
    unsigned p1;
    std::uint32_t out;
    std::uint32_t a;
    std::uint32_t b;
    std::uint32_t c;
  };

  std::vector<std::string> var_order_;
  std::vector<std::uint32_t> var_slot_;
  std::vector<Step> steps_;
  std::vector<std::size_t> level_begin_;
  std::vector<std::uint64_t> slots_;
  std::vector<std::uint32_t> root_slot_;
  std::vector<int> root_level_;
};

inline Expr operator+(const Expr& a, const Expr& b) { return add(a, b); }
inline Expr operator-(const Expr& a, const Expr& b) { return sub(a, b); }
inline Expr operator*(const Expr& a, const Expr& b) { return mul(a, b); }
inline Expr operator&(const Expr& a, const Expr& b) { return bit_and(a, b); }
inline Expr operator|(const Expr& a, const Expr& b) { return bit_or(a, b); }
inline Expr operator^(const Expr& a, const Expr& b) { return bit_xor(a, b); }
inline Expr operator~(const Expr& a) { return bit_not(a); }

}  // namespace poirot

template <>
struct std::hash<poirot::Expr> {
  std::size_t operator()(const poirot::Expr& e) const noexcept { return std::hash<const void*>{}(e.id()); }
};
