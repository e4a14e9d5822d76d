#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "poirot/expr.hpp"
#include "poirot/mir.hpp"

namespace poirot::symexec {

struct StepRecord {
  std::uint32_t address = 0;
  std::uint32_t original_address = 0;
  std::vector<unsigned> iterations;
  mir::Opcode opcode = mir::Opcode::Mov;
  /// Empty for store and ret.
  std::string dest;
  /// Register name before unroll renaming.
  std::string physical_dest;
  unsigned width = 0;
  /// Value written (the stored or returned value for store/ret).
  Expr expr;
  bool tainted = false;
  /// Arithmetic or logical instruction with a secret-tainted result.
  bool analyzable = false;
  /// Previous value of the physical register; null when never written.
  Expr prev;
  std::size_t line = 0;
};

struct SymbolicState {
  std::map<std::string, Expr> store;
  /// Keyed by physical register name; feeds StepRecord::prev.
  std::map<std::string, Expr> physical;
  std::map<std::uint64_t, Expr> mem;
  std::vector<StepRecord> trace;
  /// Every input variable: parameters first, then memory cells as they are first read.
  std::vector<VarInfo> inputs;
};

/// Binds each parameter to a fresh variable named after it; secret parameters are tainted.
SymbolicState init_state(const mir::Function& f, const mir::TaintDecl& t);

/// Executes one straight-line instruction.
SymbolicState step(SymbolicState s, const mir::Instruction& i, const mir::Provenance& prov = {});
void step_in_place(SymbolicState& s, const mir::Instruction& i, const mir::Provenance& prov);

/// Runs an unrolled function. Throws ExecutionError on branches.
SymbolicState run(const mir::Function& f, const mir::TaintDecl& t);

}  // namespace poirot::symexec
