#include "poirot/expr.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <utility>

namespace poirot {

std::string BitVector::to_string() const {
  std::ostringstream os;
  os << "0x" << std::hex << value_ << std::dec << "[" << width_ << "]";
  return os.str();
}

std::ostream& operator<<(std::ostream& os, const BitVector& v) { return os << v.to_string(); }

unsigned hamming_distance(const BitVector& a, const BitVector& b) {
  if (a.width() != b.width()) throw TypeError("hamming distance of unequal widths");
  return static_cast<unsigned>(std::popcount(a.value() ^ b.value()));
}

unsigned diff_hw(const BitVector& a, const BitVector& b) {
  if (a.width() != b.width()) throw TypeError("hamming weight difference of unequal widths");
  const int wa = static_cast<int>(popcount(a));
  const int wb = static_cast<int>(popcount(b));
  return static_cast<unsigned>(wa > wb ? wa - wb : wb - wa);
}

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::Var: return "var";
    case Op::Const: return "const";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::And: return "and";
    case Op::Or: return "or";
    case Op::Xor: return "xor";
    case Op::Not: return "not";
    case Op::Shl: return "shl";
    case Op::Lshr: return "lshr";
    case Op::Ashr: return "ashr";
    case Op::Extract: return "extract";
    case Op::ZeroExt: return "zext";
    case Op::SignExt: return "sext";
    case Op::Concat: return "concat";
    case Op::Ite: return "ite";
    case Op::Eq: return "eq";
    case Op::Ult: return "ult";
    case Op::Ule: return "ule";
    case Op::Slt: return "slt";
  }
  return "?";
}

namespace {

std::int64_t as_signed(std::uint64_t v, unsigned width) {
  if (width >= 64) return static_cast<std::int64_t>(v);
  const unsigned shift = 64 - width;
  return static_cast<std::int64_t>(v << shift) >> shift;
}

// Concrete semantics shared by eval, EvalPlan and constant folding.
// `in_width` is the width of the first operand (second operand for Concat).
std::uint64_t apply(Op op, unsigned width, unsigned in_width, unsigned p0, unsigned p1, std::uint64_t a,
                    std::uint64_t b, std::uint64_t c) {
  const std::uint64_t m = width_mask(width);
  switch (op) {
    case Op::Add: return (a + b) & m;
    case Op::Sub: return (a - b) & m;
    case Op::Mul: return (a * b) & m;
    case Op::And: return a & b;
    case Op::Or: return a | b;
    case Op::Xor: return a ^ b;
    case Op::Not: return ~a & m;
    case Op::Shl: return b >= width ? 0 : (a << b) & m;
    case Op::Lshr: return b >= width ? 0 : a >> b;
    case Op::Ashr: {
      const std::uint64_t amount = b >= width ? width - 1 : b;
      return static_cast<std::uint64_t>(as_signed(a, width) >> amount) & m;
    }
    case Op::Extract: return (a >> p1) & width_mask(p0 - p1 + 1);
    case Op::ZeroExt: return a;
    case Op::SignExt: return static_cast<std::uint64_t>(as_signed(a, in_width)) & m;
    case Op::Concat: return ((a << in_width) | b) & m;
    case Op::Ite: return a != 0 ? b : c;
    case Op::Eq: return a == b ? 1 : 0;
    case Op::Ult: return a < b ? 1 : 0;
    case Op::Ule: return a <= b ? 1 : 0;
    case Op::Slt: return as_signed(a, in_width) < as_signed(b, in_width) ? 1 : 0;
    case Op::Var:
    case Op::Const: break;
  }
  return 0;
}

unsigned result_width(Op op, const std::vector<Expr>& xs, unsigned p0, unsigned p1) {
  auto need = [&](std::size_t n) {
    if (xs.size() != n) {
      throw TypeError(std::string(op_name(op)) + " expects " + std::to_string(n) + " operands");
    }
    for (const auto& x : xs) {
      if (!x) throw TypeError(std::string(op_name(op)) + " has an empty operand");
    }
  };
  auto same_width = [&] {
    if (xs[0].width() != xs[1].width()) {
      throw TypeError(std::string(op_name(op)) + " operand widths " + std::to_string(xs[0].width()) + " and " +
                      std::to_string(xs[1].width()) + " differ");
    }
  };
  switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::And:
    case Op::Or:
    case Op::Xor:
    case Op::Shl:
    case Op::Lshr:
    case Op::Ashr:
      need(2);
      same_width();
      return xs[0].width();
    case Op::Not:
      need(1);
      return xs[0].width();
    case Op::Extract:
      need(1);
      if (p1 > p0 || p0 >= xs[0].width()) {
        throw TypeError("extract [" + std::to_string(p0) + ":" + std::to_string(p1) + "] out of range for width " +
                        std::to_string(xs[0].width()));
      }
      return p0 - p1 + 1;
    case Op::ZeroExt:
    case Op::SignExt:
      need(1);
      if (xs[0].width() + p0 > kMaxWidth) throw TypeError("extension beyond 64 bits");
      return xs[0].width() + p0;
    case Op::Concat:
      need(2);
      if (xs[0].width() + xs[1].width() > kMaxWidth) throw TypeError("concat beyond 64 bits");
      return xs[0].width() + xs[1].width();
    case Op::Ite:
      need(3);
      if (xs[0].width() != 1) throw TypeError("ite condition must have width 1");
      if (xs[1].width() != xs[2].width()) throw TypeError("ite branch widths differ");
      return xs[1].width();
    case Op::Eq:
    case Op::Ult:
    case Op::Ule:
    case Op::Slt:
      need(2);
      same_width();
      return 1;
    case Op::Var:
    case Op::Const: break;
  }
  throw TypeError("make() cannot build var/const nodes");
}

bool same(const Expr& a, const Expr& b) {
  if (a == b) return true;
  if (a.op() != b.op() || a.width() != b.width()) return false;
  if (a.is_var()) return a.name() == b.name();
  if (a.is_const()) return a.value() == b.value();
  return false;
}

bool commutative(Op op) {
  return op == Op::Add || op == Op::Mul || op == Op::And || op == Op::Or || op == Op::Xor || op == Op::Eq;
}

Expr fold(Op op, const std::vector<Expr>& xs, unsigned p0, unsigned p1) {
  const unsigned w = result_width(op, xs, p0, p1);
  const unsigned in_w = op == Op::Concat ? xs[1].width() : xs[0].width();
  const std::uint64_t a = xs[0].value().value();
  const std::uint64_t b = xs.size() > 1 ? xs[1].value().value() : 0;
  const std::uint64_t c = xs.size() > 2 ? xs[2].value().value() : 0;
  return Expr::constant(w, apply(op, w, in_w, p0, p1, a, b, c));
}

Expr zero(unsigned width) { return Expr::constant(width, 0); }

Expr binary(Op op, Expr a, Expr b) {
  if (a.is_const() && b.is_const()) return fold(op, {a, b}, 0, 0);
  if (commutative(op) && a.is_const()) std::swap(a, b);
  return Expr::make(op, {std::move(a), std::move(b)});
}

}  // namespace

// ---------------------------------------------------------------------------
// Expr

Expr Expr::var(std::string name, unsigned width, bool secret, bool signed_hint) {
  if (name.empty()) throw TypeError("variable needs a name");
  if (width == 0 || width > kMaxWidth) throw TypeError("variable width outside 1..64");
  auto n = std::make_shared<Node>();
  n->op = Op::Var;
  n->width = width;
  n->tainted = secret;
  n->signed_hint = signed_hint;
  n->name = std::move(name);
  return Expr(std::move(n));
}

Expr Expr::constant(const BitVector& value) {
  auto n = std::make_shared<Node>();
  n->op = Op::Const;
  n->width = value.width();
  n->tainted = false;
  n->value = value.value();
  return Expr(std::move(n));
}

Expr Expr::make(Op op, std::vector<Expr> operands, unsigned p0, unsigned p1) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->width = result_width(op, operands, p0, p1);
  n->tainted = std::any_of(operands.begin(), operands.end(), [](const Expr& x) { return x.tainted(); });
  n->p0 = p0;
  n->p1 = p1;
  n->operands = std::move(operands);
  return Expr(std::move(n));
}

Op Expr::op() const noexcept { return node_->op; }
unsigned Expr::width() const noexcept { return node_->width; }
bool Expr::tainted() const noexcept { return node_->tainted; }
std::size_t Expr::arity() const noexcept { return node_->operands.size(); }
const Expr& Expr::operand(std::size_t i) const { return node_->operands.at(i); }
std::span<const Expr> Expr::operands() const noexcept { return node_->operands; }

const std::string& Expr::name() const {
  if (op() != Op::Var) throw TypeError("name() on a non-variable");
  return node_->name;
}
bool Expr::signed_hint() const { return node_->signed_hint; }

BitVector Expr::value() const {
  if (op() != Op::Const) throw TypeError("value() on a non-constant");
  return BitVector(node_->width, node_->value);
}

unsigned Expr::hi() const { return node_->p0; }
unsigned Expr::lo() const { return node_->p1; }
unsigned Expr::ext() const { return node_->p0; }

bool Expr::is_const(std::uint64_t v) const noexcept {
  return node_ && node_->op == Op::Const && node_->value == (v & width_mask(node_->width));
}

// ---------------------------------------------------------------------------
// Simplifying constructors

Expr add(const Expr& a, const Expr& b) {
  Expr r = binary(Op::Add, a, b);
  if (r.op() == Op::Add && r.operand(1).is_const(0)) return r.operand(0);
  return r;
}

Expr sub(const Expr& a, const Expr& b) {
  if (a.is_const() && b.is_const()) return fold(Op::Sub, {a, b}, 0, 0);
  if (b.is_const(0)) return a;
  if (same(a, b)) return zero(a.width());
  return Expr::make(Op::Sub, {a, b});
}

Expr mul(const Expr& a, const Expr& b) {
  Expr r = binary(Op::Mul, a, b);
  if (r.op() != Op::Mul) return r;
  if (r.operand(1).is_const(0)) return r.operand(1);
  if (r.operand(1).is_const(1)) return r.operand(0);
  return r;
}

Expr bit_and(const Expr& a, const Expr& b) {
  Expr r = binary(Op::And, a, b);
  if (r.op() != Op::And) return r;
  const Expr& x = r.operand(0);
  const Expr& y = r.operand(1);
  if (y.is_const(0)) return y;
  if (y.is_const(width_mask(y.width()))) return x;
  if (same(x, y)) return x;
  return r;
}

Expr bit_or(const Expr& a, const Expr& b) {
  Expr r = binary(Op::Or, a, b);
  if (r.op() != Op::Or) return r;
  const Expr& x = r.operand(0);
  const Expr& y = r.operand(1);
  if (y.is_const(0)) return x;
  if (y.is_const(width_mask(y.width()))) return y;
  if (same(x, y)) return x;
  return r;
}

Expr bit_xor(const Expr& a, const Expr& b) {
  Expr r = binary(Op::Xor, a, b);
  if (r.op() != Op::Xor) return r;
  const Expr& x = r.operand(0);
  const Expr& y = r.operand(1);
  if (y.is_const(0)) return x;
  if (same(x, y)) return zero(x.width());
  return r;
}

Expr bit_not(const Expr& a) {
  if (a.is_const()) return fold(Op::Not, {a}, 0, 0);
  if (a.op() == Op::Not) return a.operand(0);
  return Expr::make(Op::Not, {a});
}

namespace {

Expr shift(Op op, const Expr& a, const Expr& amount) {
  if (a.is_const() && amount.is_const()) return fold(op, {a, amount}, 0, 0);
  if (amount.is_const(0)) return a;
  if (amount.is_const() && amount.value().value() >= a.width()) {
    if (op != Op::Ashr) return zero(a.width());
    return Expr::make(Op::Ashr, {a, Expr::constant(a.width(), a.width() - 1)});
  }
  if (a.is_const(0)) return a;
  return Expr::make(op, {a, amount});
}

}  // namespace

Expr shl(const Expr& a, const Expr& amount) { return shift(Op::Shl, a, amount); }
Expr lshr(const Expr& a, const Expr& amount) { return shift(Op::Lshr, a, amount); }
Expr ashr(const Expr& a, const Expr& amount) { return shift(Op::Ashr, a, amount); }

Expr extract(const Expr& a, unsigned hi, unsigned lo) {
  if (a.is_const()) return fold(Op::Extract, {a}, hi, lo);
  if (lo == 0 && hi + 1 == a.width()) return a;
  if (a.op() == Op::Extract) return extract(a.operand(0), hi + a.lo(), lo + a.lo());
  if (a.op() == Op::ZeroExt && hi < a.operand(0).width()) return extract(a.operand(0), hi, lo);
  return Expr::make(Op::Extract, {a}, hi, lo);
}

Expr zero_ext(const Expr& a, unsigned k) {
  if (k == 0) return a;
  if (a.is_const()) return fold(Op::ZeroExt, {a}, k, 0);
  return Expr::make(Op::ZeroExt, {a}, k);
}

Expr sign_ext(const Expr& a, unsigned k) {
  if (k == 0) return a;
  if (a.is_const()) return fold(Op::SignExt, {a}, k, 0);
  return Expr::make(Op::SignExt, {a}, k);
}

Expr concat(const Expr& hi, const Expr& lo) {
  if (hi.is_const() && lo.is_const()) return fold(Op::Concat, {hi, lo}, 0, 0);
  return Expr::make(Op::Concat, {hi, lo});
}

Expr ite(const Expr& cond, const Expr& then_e, const Expr& else_e) {
  if (cond.is_const()) {
    // Keep the width check.
    (void)result_width(Op::Ite, {cond, then_e, else_e}, 0, 0);
    return cond.is_const(1) ? then_e : else_e;
  }
  if (same(then_e, else_e)) return then_e;
  return Expr::make(Op::Ite, {cond, then_e, else_e});
}

Expr eq(const Expr& a, const Expr& b) {
  Expr r = binary(Op::Eq, a, b);
  if (r.op() == Op::Eq && same(r.operand(0), r.operand(1))) return Expr::constant(1, 1);
  return r;
}

Expr ne(const Expr& a, const Expr& b) { return bit_not(eq(a, b)); }

Expr ult(const Expr& a, const Expr& b) {
  if (a.is_const() && b.is_const()) return fold(Op::Ult, {a, b}, 0, 0);
  if (same(a, b)) return Expr::constant(1, 0);
  return Expr::make(Op::Ult, {a, b});
}

Expr ule(const Expr& a, const Expr& b) {
  if (a.is_const() && b.is_const()) return fold(Op::Ule, {a, b}, 0, 0);
  if (same(a, b)) return Expr::constant(1, 1);
  return Expr::make(Op::Ule, {a, b});
}

Expr slt(const Expr& a, const Expr& b) {
  if (a.is_const() && b.is_const()) return fold(Op::Slt, {a, b}, 0, 0);
  if (same(a, b)) return Expr::constant(1, 0);
  return Expr::make(Op::Slt, {a, b});
}

Expr all_of(std::span<const Expr> conds) {
  Expr acc = Expr::constant(1, 1);
  for (const auto& c : conds) acc = bit_and(acc, c);
  return acc;
}

Expr rebuild(Op op, std::vector<Expr> xs, unsigned p0, unsigned p1) {
  switch (op) {
    case Op::Add: return add(xs.at(0), xs.at(1));
    case Op::Sub: return sub(xs.at(0), xs.at(1));
    case Op::Mul: return mul(xs.at(0), xs.at(1));
    case Op::And: return bit_and(xs.at(0), xs.at(1));
    case Op::Or: return bit_or(xs.at(0), xs.at(1));
    case Op::Xor: return bit_xor(xs.at(0), xs.at(1));
    case Op::Not: return bit_not(xs.at(0));
    case Op::Shl: return shl(xs.at(0), xs.at(1));
    case Op::Lshr: return lshr(xs.at(0), xs.at(1));
    case Op::Ashr: return ashr(xs.at(0), xs.at(1));
    case Op::Extract: return extract(xs.at(0), p0, p1);
    case Op::ZeroExt: return zero_ext(xs.at(0), p0);
    case Op::SignExt: return sign_ext(xs.at(0), p0);
    case Op::Concat: return concat(xs.at(0), xs.at(1));
    case Op::Ite: return ite(xs.at(0), xs.at(1), xs.at(2));
    case Op::Eq: return eq(xs.at(0), xs.at(1));
    case Op::Ult: return ult(xs.at(0), xs.at(1));
    case Op::Ule: return ule(xs.at(0), xs.at(1));
    case Op::Slt: return slt(xs.at(0), xs.at(1));
    case Op::Var:
    case Op::Const: break;
  }
  throw TypeError("rebuild() of a leaf");
}

// ---------------------------------------------------------------------------
// Traversals

namespace {

std::uint64_t eval_rec(const Expr& e, const Env& env, std::unordered_map<const Node*, std::uint64_t>& memo) {
  if (auto it = memo.find(e.id()); it != memo.end()) return it->second;
  std::uint64_t v = 0;
  switch (e.op()) {
    case Op::Var: {
      auto it = env.find(e.name());
      if (it == env.end()) throw UnboundVariableError(e.name());
      if (it->second.width() != e.width()) {
        throw TypeError("variable '" + e.name() + "' has width " + std::to_string(e.width()) +
                        " but the environment binds width " + std::to_string(it->second.width()));
      }
      v = it->second.value();
      break;
    }
    case Op::Const: v = e.value().value(); break;
    default: {
      std::uint64_t in[3] = {0, 0, 0};
      for (std::size_t i = 0; i < e.arity(); ++i) in[i] = eval_rec(e.operand(i), env, memo);
      const unsigned in_w = e.op() == Op::Concat ? e.operand(1).width() : e.operand(0).width();
      v = apply(e.op(), e.width(), in_w, e.hi(), e.lo(), in[0], in[1], in[2]);
    }
  }
  memo.emplace(e.id(), v);
  return v;
}

template <typename Leaf>
Expr map_rec(const Expr& e, std::unordered_map<const Node*, Expr>& memo, const Leaf& leaf, bool simplifying) {
  if (auto it = memo.find(e.id()); it != memo.end()) return it->second;
  Expr out;
  if (e.is_var()) {
    out = leaf(e);
  } else if (e.is_const()) {
    out = e;
  } else {
    std::vector<Expr> xs;
    xs.reserve(e.arity());
    bool changed = false;
    for (const auto& x : e.operands()) {
      xs.push_back(map_rec(x, memo, leaf, simplifying));
      changed = changed || !(xs.back() == x);
    }
    if (simplifying) {
      out = rebuild(e.op(), std::move(xs), e.hi(), e.lo());
    } else {
      out = changed ? Expr::make(e.op(), std::move(xs), e.hi(), e.lo()) : e;
    }
  }
  memo.emplace(e.id(), out);
  return out;
}

void collect_vars(const Expr& e, std::unordered_set<const Node*>& seen, std::map<std::string, VarInfo>& out) {
  if (!seen.insert(e.id()).second) return;
  if (e.is_var()) {
    auto [it, inserted] = out.emplace(e.name(), VarInfo{e.name(), e.width(), e.tainted(), e.signed_hint()});
    if (!inserted && it->second.width != e.width()) {
      throw TypeError("variable '" + e.name() + "' used at two widths");
    }
    return;
  }
  for (const auto& x : e.operands()) collect_vars(x, seen, out);
}

const char* infix(Op op) {
  switch (op) {
    case Op::Add: return "+";
    case Op::Sub: return "-";
    case Op::Mul: return "*";
    case Op::And: return "&";
    case Op::Or: return "|";
    case Op::Xor: return "^";
    case Op::Shl: return "<<";
    case Op::Lshr: return ">>";
    case Op::Ashr: return ">>s";
    case Op::Eq: return "==";
    case Op::Ult: return "<u";
    case Op::Ule: return "<=u";
    case Op::Slt: return "<s";
    default: return nullptr;
  }
}

void print(std::ostream& os, const Expr& e) {
  switch (e.op()) {
    case Op::Var: os << e.name(); return;
    case Op::Const: os << "0x" << std::hex << e.value().value() << std::dec; return;
    case Op::Not: os << "~"; print(os, e.operand(0)); return;
    case Op::Extract: print(os, e.operand(0)); os << "[" << e.hi() << ":" << e.lo() << "]"; return;
    case Op::ZeroExt:
    case Op::SignExt:
      os << op_name(e.op()) << e.width() << "(";
      print(os, e.operand(0));
      os << ")";
      return;
    case Op::Concat:
      os << "(";
      print(os, e.operand(0));
      os << " ++ ";
      print(os, e.operand(1));
      os << ")";
      return;
    case Op::Ite:
      os << "(";
      print(os, e.operand(0));
      os << " ? ";
      print(os, e.operand(1));
      os << " : ";
      print(os, e.operand(2));
      os << ")";
      return;
    default:
      os << "(";
      print(os, e.operand(0));
      os << " " << infix(e.op()) << " ";
      print(os, e.operand(1));
      os << ")";
  }
}

}  // namespace

BitVector eval(const Expr& e, const Env& env) {
  std::unordered_map<const Node*, std::uint64_t> memo;
  return BitVector(e.width(), eval_rec(e, env, memo));
}

Expr simplify(const Expr& e) {
  std::unordered_map<const Node*, Expr> memo;
  return map_rec(e, memo, [](const Expr& v) { return v; }, true);
}

Expr substitute(const Expr& e, const std::function<Expr(const Expr&)>& f) {
  std::unordered_map<const Node*, Expr> memo;
  return map_rec(
      e, memo,
      [&](const Expr& v) {
        Expr r = f(v);
        if (r.width() != v.width()) throw TypeError("substitution changes the width of '" + v.name() + "'");
        return r;
      },
      false);
}

Expr rename_fresh(const Expr& e, const std::string& suffix) {
  if (suffix.empty()) throw ConfigError("rename suffix must be nonempty");
  return substitute(e, [&](const Expr& v) {
    return Expr::var(v.name() + suffix, v.width(), v.tainted(), v.signed_hint());
  });
}

std::vector<VarInfo> vars(const Expr& e) { return vars(std::span<const Expr>(&e, 1)); }

std::vector<VarInfo> vars(std::span<const Expr> es) {
  std::unordered_set<const Node*> seen;
  std::map<std::string, VarInfo> out;
  for (const auto& e : es) collect_vars(e, seen, out);
  std::vector<VarInfo> v;
  v.reserve(out.size());
  for (auto& [_, info] : out) v.push_back(std::move(info));
  return v;
}

bool structurally_equal(const Expr& a, const Expr& b) {
  std::set<std::pair<const Node*, const Node*>> proven;
  std::function<bool(const Expr&, const Expr&)> rec = [&](const Expr& x, const Expr& y) -> bool {
    if (x == y) return true;
    if (x.op() != y.op() || x.width() != y.width() || x.arity() != y.arity()) return false;
    if (x.is_var()) return x.name() == y.name() && x.tainted() == y.tainted();
    if (x.is_const()) return x.value() == y.value();
    if (x.hi() != y.hi() || x.lo() != y.lo()) return false;
    if (proven.contains({x.id(), y.id()})) return true;
    for (std::size_t i = 0; i < x.arity(); ++i) {
      if (!rec(x.operand(i), y.operand(i))) return false;
    }
    proven.emplace(x.id(), y.id());
    return true;
  };
  return rec(a, b);
}

std::size_t dag_size(const Expr& e) {
  std::unordered_set<const Node*> seen;
  std::vector<Expr> stack{e};
  while (!stack.empty()) {
    Expr x = stack.back();
    stack.pop_back();
    if (!seen.insert(x.id()).second) continue;
    for (const auto& c : x.operands()) stack.push_back(c);
  }
  return seen.size();
}

std::string to_string(const Expr& e) {
  std::ostringstream os;
  print(os, e);
  return os.str();
}

// ---------------------------------------------------------------------------
// EvalPlan

EvalPlan::EvalPlan(std::span<const Expr> roots, std::vector<std::string> var_order)
    : var_order_(std::move(var_order)) {
  std::unordered_map<std::string, std::size_t> var_index;
  for (std::size_t i = 0; i < var_order_.size(); ++i) var_index.emplace(var_order_[i], i);

  std::unordered_map<const Node*, std::pair<std::uint32_t, int>> slot_of;  // slot, level
  std::vector<std::pair<Step, int>> steps;
  var_slot_.assign(var_order_.size(), 0);
  std::vector<bool> var_seen(var_order_.size(), false);

  auto new_slot = [&] {
    slots_.push_back(0);
    return static_cast<std::uint32_t>(slots_.size() - 1);
  };
  // Reserve one slot per variable up front so unused variables can still be set.
  for (std::size_t i = 0; i < var_order_.size(); ++i) var_slot_[i] = new_slot();

  std::function<std::pair<std::uint32_t, int>(const Expr&)> visit = [&](const Expr& e) {
    if (auto it = slot_of.find(e.id()); it != slot_of.end()) return it->second;
    std::pair<std::uint32_t, int> result;
    if (e.is_var()) {
      auto it = var_index.find(e.name());
      if (it == var_index.end()) throw UnboundVariableError(e.name());
      result = {var_slot_[it->second], static_cast<int>(it->second)};
    } else if (e.is_const()) {
      const std::uint32_t s = new_slot();
      slots_[s] = e.value().value();
      result = {s, -1};
    } else {
      Step st{};
      st.op = e.op();
      st.width = e.width();
      st.in_width = e.op() == Op::Concat ? e.operand(1).width() : e.operand(0).width();
      st.p0 = e.hi();
      st.p1 = e.lo();
      int level = -1;
      std::uint32_t in[3] = {0, 0, 0};
      for (std::size_t i = 0; i < e.arity(); ++i) {
        auto [s, l] = visit(e.operand(i));
        in[i] = s;
        level = std::max(level, l);
      }
      st.a = in[0];
      st.b = in[1];
      st.c = in[2];
      st.out = new_slot();
      steps.emplace_back(st, level);
      result = {st.out, level};
    }
    slot_of.emplace(e.id(), result);
    return result;
  };

  for (const auto& r : roots) {
    auto [s, l] = visit(r);
    root_slot_.push_back(s);
    root_level_.push_back(l);
  }

  std::stable_sort(steps.begin(), steps.end(), [](const auto& x, const auto& y) { return x.second < y.second; });
  const std::size_t levels = var_order_.size() + 1;
  level_begin_.assign(levels + 1, steps.size());
  for (std::size_t i = steps.size(); i-- > 0;) level_begin_[static_cast<std::size_t>(steps[i].second + 1)] = i;
  for (std::size_t l = levels; l-- > 0;) level_begin_[l] = std::min(level_begin_[l], level_begin_[l + 1]);
  steps_.reserve(steps.size());
  for (auto& [st, _] : steps) steps_.push_back(st);
  run_level(-1);
}

void EvalPlan::run_level(int level) noexcept {
  const auto l = static_cast<std::size_t>(level + 1);
  for (std::size_t i = level_begin_[l]; i < level_begin_[l + 1]; ++i) {
    const Step& s = steps_[i];
    slots_[s.out] = apply(s.op, s.width, s.in_width, s.p0, s.p1, slots_[s.a], slots_[s.b], slots_[s.c]);
  }
}

void EvalPlan::run_all() noexcept {
  for (int l = -1; l < static_cast<int>(var_order_.size()); ++l) run_level(l);
}

}  // namespace poirot
