#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "poirot/bitvector.hpp"

namespace poirot::mir {

enum class Taint { Secret, Public };

enum class Opcode {
  Mov,
  Add,
  Sub,
  Mul,
  And,
  Or,
  Xor,
  Not,
  Shl,
  Lsr,
  Asr,
  Sbfx,
  Ubfx,
  Sext,
  Zext,
  Load,
  Store,
  Brz,
  Br,
  Ret,
};

const char* opcode_name(Opcode op) noexcept;
std::optional<Opcode> opcode_from_name(std::string_view name) noexcept;

/// Arithmetic and logical opcodes: the ones whose results are analyzed.
bool is_analyzable(Opcode op) noexcept;

struct Param {
  std::string name;
  unsigned width;
  bool is_signed;
  Taint taint;

  friend bool operator==(const Param&, const Param&) = default;
};

struct Register {
  std::string name;
  friend bool operator==(const Register&, const Register&) = default;
};

/// Immediates carry the width of the register operand they pair with.
using Operand = std::variant<Register, BitVector>;

struct Instruction {
  std::uint32_t address = 0;
  Opcode opcode = Opcode::Mov;
  /// Destination register; empty for store/brz/br/ret.
  std::string dest;
  /// Width of the destination (or of the stored/returned value).
  unsigned width = 0;
  /// Source operands. Store: {address, value}. Load: {address}. Brz: {condition}.
  std::vector<Operand> operands;
  /// Bit field of sbfx/ubfx after desugaring, inclusive.
  unsigned field_hi = 0;
  unsigned field_lo = 0;
  /// Branch target label.
  std::string target;
  std::size_t line = 0;
  /// Register name before per-iteration renaming; equals dest outside loops.
  std::string physical_dest;

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

/// Where an unrolled instruction came from.
struct Provenance {
  std::uint32_t original_address = 0;
  /// Iteration index per enclosing loop, outermost first. Empty outside loops.
  std::vector<unsigned> iterations;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct LoopDecl {
  std::string label;
  std::optional<unsigned> bound;
  std::size_t line = 0;

  friend bool operator==(const LoopDecl&, const LoopDecl&) = default;
};

struct Function {
  std::string name;
  std::vector<Param> params;
  std::vector<Instruction> body;
  /// Label -> address of the instruction that follows it.
  std::map<std::string, std::uint32_t> labels;
  std::vector<LoopDecl> loops;
  /// One entry per body instruction.
  std::vector<Provenance> provenance;

  const Param* param(std::string_view name) const;
  bool straight_line() const;
};

struct Program {
  std::vector<Function> functions;

  const Function& function(std::string_view name) const;
};

/// Parameter name -> taint.
using TaintDecl = std::map<std::string, Taint>;

TaintDecl declared_taint(const Function& f);

struct LoopBounds {
  /// Overrides per label; take precedence over in-file bounds.
  std::map<std::string, unsigned> bounds;
  /// Used for loops declared without an explicit bound.
  unsigned default_bound = 8;
};

Program parse(std::string_view text);

/// Straight-line version of every function: each counted loop body is
/// replicated by its bound and registers defined inside are renamed per
/// iteration ("r3@1.2"). Throws UnboundedLoopError for undeclared backward
/// branches.
Program unroll(const Program& p, const LoopBounds& bounds = {});
Function unroll(const Function& f, const LoopBounds& bounds = {});

enum class ViolationKind { SecretBranch, SecretIndexedLoad, SecretIndexedStore };

const char* violation_name(ViolationKind k) noexcept;

struct Violation {
  std::uint32_t address;
  std::size_t line;
  ViolationKind kind;
  std::string reason;
};

/// Registers tainted by the flow-insensitive closure: a destination is tainted
/// iff any operand is. Loads are tainted by a tainted address or by any store
/// of a tainted value.
std::set<std::string> taint_closure(const Function& f, const TaintDecl& t);

/// Constant-time precondition: tainted branch conditions and tainted memory
/// addresses. Throws ConfigError if `t` does not cover exactly the params.
std::vector<Violation> ct_check(const Function& f, const TaintDecl& t);
std::vector<Violation> ct_check(const Program& p);

/// Text form accepted by parse().
std::string render(const Program& p);
std::string render(const Function& f);

/// Equality ignoring source line numbers.
bool same_structure(const Function& a, const Function& b);
bool same_structure(const Program& a, const Program& b);

/// FNV-1a over the bytes; stable across platforms.
std::uint64_t fnv1a(std::string_view bytes) noexcept;

}  // namespace poirot::mir
