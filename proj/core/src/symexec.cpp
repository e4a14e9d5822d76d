#include "poirot/symexec.hpp"

#include <cstdio>

#include "poirot/error.hpp"

namespace poirot::symexec {

using mir::Opcode;

SymbolicState init_state(const mir::Function& f, const mir::TaintDecl& t) {
  SymbolicState s;
  for (const auto& p : f.params) {
    auto it = t.find(p.name);
    if (it == t.end()) throw ConfigError("no taint declaration for parameter '" + p.name + "'");
    const bool secret = it->second == mir::Taint::Secret;
    Expr v = Expr::var(p.name, p.width, secret, p.is_signed);
    s.store[p.name] = v;
    s.physical[p.name] = v;
    s.inputs.push_back({p.name, p.width, secret, p.is_signed});
  }
  return s;
}

namespace {

Expr operand(const SymbolicState& s, const mir::Operand& op, const mir::Instruction& i) {
  if (const auto* r = std::get_if<mir::Register>(&op)) {
    auto it = s.store.find(r->name);
    if (it == s.store.end()) {
      throw ExecutionError("address " + std::to_string(i.address) + ": register '" + r->name + "' is undefined");
    }
    return it->second;
  }
  return Expr::constant(std::get<BitVector>(op));
}

std::uint64_t concrete_address(const Expr& e, const mir::Instruction& i) {
  if (!e.is_const()) {
    throw ExecutionError("address " + std::to_string(i.address) + ": memory address is not a constant");
  }
  return e.value().value();
}

// Cells hold whole values; a narrower read takes the low bits, a wider one zero extends.
Expr fit(const Expr& e, unsigned width) {
  if (e.width() == width) return e;
  if (e.width() > width) return extract(e, width - 1, 0);
  return zero_ext(e, width - e.width());
}

Expr load(SymbolicState& s, std::uint64_t addr, unsigned width) {
  auto it = s.mem.find(addr);
  if (it == s.mem.end()) {
    char name[32];
    std::snprintf(name, sizeof name, "mem_0x%llx", static_cast<unsigned long long>(addr));
    Expr v = Expr::var(name, width, false);
    s.inputs.push_back({name, width, false, false});
    it = s.mem.emplace(addr, v).first;
  }
  return fit(it->second, width);
}

}  // namespace

void step_in_place(SymbolicState& s, const mir::Instruction& i, const mir::Provenance& prov) {
  StepRecord rec;
  rec.address = i.address;
  rec.original_address = prov.iterations.empty() && prov.original_address == 0 ? i.address : prov.original_address;
  rec.iterations = prov.iterations;
  rec.opcode = i.opcode;
  rec.dest = i.dest;
  rec.physical_dest = i.physical_dest.empty() ? i.dest : i.physical_dest;
  rec.width = i.width;
  rec.line = i.line;

  auto arg = [&](std::size_t k) { return operand(s, i.operands.at(k), i); };
  Expr out;
  switch (i.opcode) {
    case Opcode::Mov: out = arg(0); break;
    case Opcode::Add: out = add(arg(0), arg(1)); break;
    case Opcode::Sub: out = sub(arg(0), arg(1)); break;
    case Opcode::Mul: out = mul(arg(0), arg(1)); break;
    case Opcode::And: out = bit_and(arg(0), arg(1)); break;
    case Opcode::Or: out = bit_or(arg(0), arg(1)); break;
    case Opcode::Xor: out = bit_xor(arg(0), arg(1)); break;
    case Opcode::Not: out = bit_not(arg(0)); break;
    case Opcode::Shl: out = shl(arg(0), arg(1)); break;
    case Opcode::Lsr: out = lshr(arg(0), arg(1)); break;
    case Opcode::Asr: out = ashr(arg(0), arg(1)); break;
    case Opcode::Sbfx:
    case Opcode::Ubfx: {
      const Expr field = extract(arg(0), i.field_hi, i.field_lo);
      const unsigned k = i.width - field.width();
      out = i.opcode == Opcode::Sbfx ? sign_ext(field, k) : zero_ext(field, k);
      break;
    }
    case Opcode::Sext:
    case Opcode::Zext: {
      const Expr src = arg(0);
      const unsigned k = i.width - src.width();
      out = i.opcode == Opcode::Sext ? sign_ext(src, k) : zero_ext(src, k);
      break;
    }
    case Opcode::Load: out = load(s, concrete_address(arg(0), i), i.width); break;
    case Opcode::Store: {
      const std::uint64_t addr = concrete_address(arg(0), i);
      out = arg(1);
      s.mem[addr] = out;
      break;
    }
    case Opcode::Ret:
      if (!i.operands.empty()) out = arg(0);
      break;
    case Opcode::Brz:
    case Opcode::Br:
      throw ExecutionError("address " + std::to_string(i.address) +
                           ": branches are not supported; code must be straight-line after unrolling");
  }

  rec.expr = out;
  rec.tainted = out && out.tainted();
  rec.analyzable = rec.tainted && mir::is_analyzable(i.opcode);
  if (!i.dest.empty()) {
    if (auto it = s.physical.find(rec.physical_dest); it != s.physical.end()) rec.prev = it->second;
    s.store[i.dest] = out;
    s.physical[rec.physical_dest] = out;
  }
  s.trace.push_back(std::move(rec));
}

SymbolicState step(SymbolicState s, const mir::Instruction& i, const mir::Provenance& prov) {
  step_in_place(s, i, prov);
  return s;
}

SymbolicState run(const mir::Function& f, const mir::TaintDecl& t) {
  SymbolicState s = init_state(f, t);
  for (std::size_t k = 0; k < f.body.size(); ++k) {
    const mir::Provenance prov = k < f.provenance.size() ? f.provenance[k] : mir::Provenance{f.body[k].address, {}};
    step_in_place(s, f.body[k], prov);
  }
  return s;
}

}  // namespace poirot::symexec
