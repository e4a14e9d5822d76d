#include "poirot/mir.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include "poirot/error.hpp"

namespace poirot::mir {

namespace {

struct OpcodeInfo {
  Opcode op;
  const char* name;
};

constexpr OpcodeInfo kOpcodes[] = {
    {Opcode::Mov, "mov"},   {Opcode::Add, "add"},     {Opcode::Sub, "sub"},   {Opcode::Mul, "mul"},
    {Opcode::And, "and"},   {Opcode::Or, "or"},       {Opcode::Xor, "xor"},   {Opcode::Not, "not"},
    {Opcode::Shl, "shl"},   {Opcode::Lsr, "lsr"},     {Opcode::Asr, "asr"},   {Opcode::Sbfx, "sbfx"},
    {Opcode::Ubfx, "ubfx"}, {Opcode::Sext, "sext"},   {Opcode::Zext, "zext"}, {Opcode::Load, "load"},
    {Opcode::Store, "store"}, {Opcode::Brz, "brz"},   {Opcode::Br, "br"},     {Opcode::Ret, "ret"},
};

}  // namespace

const char* opcode_name(Opcode op) noexcept {
  for (const auto& info : kOpcodes) {
    if (info.op == op) return info.name;
  }
  return "?";
}

std::optional<Opcode> opcode_from_name(std::string_view name) noexcept {
  for (const auto& info : kOpcodes) {
    if (name == info.name) return info.op;
  }
  return std::nullopt;
}

bool is_analyzable(Opcode op) noexcept {
  switch (op) {
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::Mul:
    case Opcode::And:
    case Opcode::Or:
    case Opcode::Xor:
    case Opcode::Not:
    case Opcode::Shl:
    case Opcode::Lsr:
    case Opcode::Asr:
    case Opcode::Sbfx:
    case Opcode::Ubfx:
    case Opcode::Sext:
    case Opcode::Zext: return true;
    default: return false;
  }
}

const Param* Function::param(std::string_view n) const {
  for (const auto& p : params) {
    if (p.name == n) return &p;
  }
  return nullptr;
}

bool Function::straight_line() const {
  return std::none_of(body.begin(), body.end(),
                      [](const Instruction& i) { return i.opcode == Opcode::Br || i.opcode == Opcode::Brz; });
}

const Function& Program::function(std::string_view n) const {
  for (const auto& f : functions) {
    if (f.name == n) return f;
  }
  throw ConfigError("no function named '" + std::string(n) + "'");
}

TaintDecl declared_taint(const Function& f) {
  TaintDecl t;
  for (const auto& p : f.params) t.emplace(p.name, p.taint);
  return t;
}

std::uint64_t fnv1a(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Parser

namespace {

enum class Tok { Ident, Imm, Punct, End };

struct Token {
  Tok kind;
  std::string text;
  std::size_t column;
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '@' || c == '\'';
}

std::vector<Token> lex(std::string_view line, std::size_t line_no) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < line.size()) {
    const char c = line[i];
    if (c == ';') break;
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (ident_start(c)) {
      while (i < line.size() && ident_char(line[i])) ++i;
      out.push_back({Tok::Ident, std::string(line.substr(start, i - start)), start + 1});
    } else if (c == '#') {
      ++i;
      if (i < line.size() && (line[i] == '-' || line[i] == '+')) ++i;
      while (i < line.size() && std::isalnum(static_cast<unsigned char>(line[i]))) ++i;
      out.push_back({Tok::Imm, std::string(line.substr(start + 1, i - start - 1)), start + 1});
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      while (i < line.size() && std::isalnum(static_cast<unsigned char>(line[i]))) ++i;
      out.push_back({Tok::Imm, std::string(line.substr(start, i - start)), start + 1});
    } else if (std::string_view("=,[]:(){}").find(c) != std::string_view::npos) {
      out.push_back({Tok::Punct, std::string(1, c), start + 1});
      ++i;
    } else {
      throw ParseError(line_no, start + 1, std::string("unexpected character '") + c + "'");
    }
  }
  out.push_back({Tok::End, "", line.size() + 1});
  return out;
}

// Signed or unsigned literal: decimal, 0x hex or 0b binary.
bool parse_literal(std::string_view text, bool& negative, std::uint64_t& magnitude) {
  negative = false;
  if (!text.empty() && (text[0] == '-' || text[0] == '+')) {
    negative = text[0] == '-';
    text.remove_prefix(1);
  }
  int base = 10;
  if (text.size() > 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X')) {
    base = 16;
    text.remove_prefix(2);
  } else if (text.size() > 2 && text[0] == '0' && (text[1] == 'b' || text[1] == 'B')) {
    base = 2;
    text.remove_prefix(2);
  }
  if (text.empty()) return false;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), magnitude, base);
  return ec == std::errc() && p == text.data() + text.size();
}

class FunctionParser {
 public:
  explicit FunctionParser(Function& f) : f_(f) {
    for (const auto& p : f_.params) widths_[p.name] = p.width;
  }

  void line(const std::vector<Token>& toks, std::size_t line_no) {
    toks_ = &toks;
    pos_ = 0;
    line_ = line_no;
    const Token& first = peek();
    if (first.kind != Tok::Ident) fail(first, "expected an instruction");

    if (first.text == "label") {
      next();
      const Token& name = expect(Tok::Ident, "label name");
      expect_punct(":");
      define_label(name);
    } else if (peek(1).kind == Tok::Punct && peek(1).text == ":") {
      const Token& name = next();
      next();
      define_label(name);
    } else if (first.text == "loop") {
      next();
      const Token& name = expect(Tok::Ident, "loop label");
      LoopDecl decl{name.text, std::nullopt, line_};
      if (peek().kind == Tok::Ident && peek().text == "bound") {
        next();
        const Token& n = expect(Tok::Imm, "loop bound");
        const std::uint64_t v = plain_number(n);
        if (v < 1 || v > 1'000'000) fail(n, "loop bound must be in 1..1000000");
        decl.bound = static_cast<unsigned>(v);
      }
      for (const auto& l : f_.loops) {
        if (l.label == decl.label) fail(name, "duplicate loop declaration for '" + decl.label + "'");
      }
      f_.loops.push_back(decl);
    } else if (opcode_of(first) == Opcode::Store) {
      statement_store();
    } else if (opcode_of(first) == Opcode::Brz) {
      next();
      Instruction ins = make(Opcode::Brz);
      const Token& cond = expect(Tok::Ident, "condition register");
      ins.operands.push_back(Register{cond.text});
      ins.width = use(cond);
      expect_punct(",");
      ins.target = expect(Tok::Ident, "branch target").text;
      push(ins, cond);
    } else if (opcode_of(first) == Opcode::Br) {
      next();
      Instruction ins = make(Opcode::Br);
      ins.target = expect(Tok::Ident, "branch target").text;
      push(ins, first);
    } else if (opcode_of(first) == Opcode::Ret) {
      next();
      Instruction ins = make(Opcode::Ret);
      if (peek().kind == Tok::Ident) {
        const Token& r = next();
        ins.operands.push_back(Register{r.text});
        ins.width = use(r);
      }
      push(ins, first);
    } else {
      statement_assign();
    }
    if (peek().kind != Tok::End) fail(peek(), "trailing tokens");
  }

  void finish(std::size_t close_line) {
    for (const auto& i : f_.body) {
      if ((i.opcode == Opcode::Br || i.opcode == Opcode::Brz) && !f_.labels.contains(i.target)) {
        throw ParseError(i.line, 1, "branch to undefined label '" + i.target + "'");
      }
    }
    for (const auto& l : f_.loops) {
      if (!f_.labels.contains(l.label)) throw ParseError(l.line, 1, "loop declared on undefined label '" + l.label + "'");
    }
    (void)close_line;
    f_.provenance.clear();
    for (const auto& i : f_.body) f_.provenance.push_back({i.address, {}});
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    const auto& t = *toks_;
    return t[std::min(pos_ + ahead, t.size() - 1)];
  }
  const Token& next() {
    const Token& t = peek();
    if (pos_ < toks_->size() - 1) ++pos_;
    return t;
  }
  [[noreturn]] void fail(const Token& t, const std::string& msg) const { throw ParseError(line_, t.column, msg); }

  const Token& expect(Tok kind, const char* what) {
    const Token& t = next();
    if (t.kind != kind) fail(t, std::string("expected ") + what);
    return t;
  }
  void expect_punct(const char* p) {
    const Token& t = next();
    if (t.kind != Tok::Punct || t.text != p) fail(t, std::string("expected '") + p + "'");
  }
  bool accept_punct(const char* p) {
    if (peek().kind == Tok::Punct && peek().text == p) {
      next();
      return true;
    }
    return false;
  }

  static std::optional<Opcode> opcode_of(const Token& t) {
    const auto dot = t.text.find('.');
    return opcode_from_name(std::string_view(t.text).substr(0, dot));
  }

  std::uint64_t plain_number(const Token& t) const {
    bool neg = false;
    std::uint64_t mag = 0;
    if (!parse_literal(t.text, neg, mag) || neg) fail(t, "expected a non-negative number");
    return mag;
  }

  BitVector immediate(const Token& t, unsigned width) const {
    bool neg = false;
    std::uint64_t mag = 0;
    if (!parse_literal(t.text, neg, mag)) fail(t, "malformed immediate '#" + t.text + "'");
    if (neg) {
      const std::uint64_t limit = width >= 64 ? (std::uint64_t{1} << 63) : (std::uint64_t{1} << (width - 1));
      if (mag > limit) fail(t, "immediate #" + t.text + " does not fit in " + std::to_string(width) + " bits");
      return BitVector(width, ~mag + 1);
    }
    if (mag > width_mask(width)) {
      fail(t, "immediate #" + t.text + " does not fit in " + std::to_string(width) + " bits");
    }
    return BitVector(width, mag);
  }

  unsigned use(const Token& reg) const {
    auto it = widths_.find(reg.text);
    if (it == widths_.end()) fail(reg, "register '" + reg.text + "' used before definition");
    return it->second;
  }

  void define(const Token& at, const std::string& reg, unsigned width) {
    auto [it, inserted] = widths_.emplace(reg, width);
    if (!inserted && it->second != width) {
      fail(at, "register '" + reg + "' redefined with width " + std::to_string(width) + " (was " +
                   std::to_string(it->second) + ")");
    }
  }

  void define_label(const Token& name) {
    const auto addr = static_cast<std::uint32_t>(f_.body.size());
    if (!f_.labels.emplace(name.text, addr).second) fail(name, "duplicate label '" + name.text + "'");
  }

  Instruction make(Opcode op) const {
    Instruction ins;
    ins.opcode = op;
    ins.address = static_cast<std::uint32_t>(f_.body.size());
    ins.line = line_;
    return ins;
  }

  void push(Instruction ins, const Token&) {
    ins.physical_dest = ins.dest;
    f_.body.push_back(std::move(ins));
  }

  std::optional<unsigned> width_suffix(const Token& opc) const {
    const auto dot = opc.text.find('.');
    if (dot == std::string::npos) return std::nullopt;
    const std::string_view digits = std::string_view(opc.text).substr(dot + 1);
    unsigned w = 0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), w);
    if (ec != std::errc() || p != digits.data() + digits.size() || w == 0 || w > kMaxWidth) {
      fail(opc, "bad width suffix in '" + opc.text + "'");
    }
    return w;
  }

  // [reg] or [#imm]
  Operand address_operand() {
    expect_punct("[");
    Operand op;
    const Token& t = next();
    if (t.kind == Tok::Ident) {
      use(t);
      op = Register{t.text};
    } else if (t.kind == Tok::Imm) {
      op = immediate(t, 32);
    } else {
      fail(t, "expected an address register or immediate");
    }
    expect_punct("]");
    return op;
  }

  void statement_store() {
    const Token& opc = next();
    Instruction ins = make(Opcode::Store);
    ins.operands.push_back(address_operand());
    expect_punct(",");
    const Token& v = next();
    if (v.kind == Tok::Ident) {
      ins.width = use(v);
      ins.operands.push_back(Register{v.text});
    } else if (v.kind == Tok::Imm) {
      const auto w = width_suffix(opc);
      if (!w) fail(v, "storing an immediate needs a width suffix (store.W)");
      ins.width = *w;
      ins.operands.push_back(immediate(v, *w));
    } else {
      fail(v, "expected a value to store");
    }
    push(ins, opc);
  }

  void statement_assign() {
    const Token& dest = expect(Tok::Ident, "destination register");
    expect_punct("=");
    const Token& opc = expect(Tok::Ident, "opcode");
    const auto op = opcode_of(opc);
    if (!op) fail(opc, "unknown opcode '" + opc.text + "'");
    const auto suffix = width_suffix(opc);
    Instruction ins = make(*op);
    ins.dest = dest.text;

    // Collect comma separated operands; register widths are resolved below.
    std::vector<Token> args;
    if (*op == Opcode::Load) {
      ins.operands.push_back(address_operand());
      ins.width = suffix.value_or(32);
    } else {
      if (peek().kind != Tok::End) {
        do {
          const Token& t = next();
          if (t.kind != Tok::Ident && t.kind != Tok::Imm) fail(t, "expected a register or immediate");
          args.push_back(t);
        } while (accept_punct(","));
      }
    }

    auto arity = [&](std::size_t n) {
      if (args.size() != n) {
        fail(args.empty() ? opc : args.back(), std::string(opcode_name(*op)) + " takes " + std::to_string(n) +
                                                   " operand" + (n == 1 ? "" : "s") + ", got " +
                                                   std::to_string(args.size()));
      }
    };
    auto reg = [&](const Token& t) -> unsigned {
      if (t.kind != Tok::Ident) fail(t, "expected a register");
      return use(t);
    };

    switch (*op) {
      case Opcode::Mov: {
        arity(1);
        if (args[0].kind == Tok::Ident) {
          ins.width = reg(args[0]);
          ins.operands.push_back(Register{args[0].text});
        } else {
          unsigned w = 32;
          if (suffix) {
            w = *suffix;
          } else if (auto it = widths_.find(dest.text); it != widths_.end()) {
            w = it->second;
          }
          ins.width = w;
          ins.operands.push_back(immediate(args[0], w));
        }
        break;
      }
      case Opcode::Add:
      case Opcode::Sub:
      case Opcode::Mul:
      case Opcode::And:
      case Opcode::Or:
      case Opcode::Xor:
      case Opcode::Shl:
      case Opcode::Lsr:
      case Opcode::Asr: {
        arity(2);
        ins.width = reg(args[0]);
        ins.operands.push_back(Register{args[0].text});
        if (args[1].kind == Tok::Ident) {
          const unsigned w = use(args[1]);
          if (w != ins.width) {
            fail(args[1], "operand widths " + std::to_string(ins.width) + " and " + std::to_string(w) + " differ");
          }
          ins.operands.push_back(Register{args[1].text});
        } else {
          ins.operands.push_back(immediate(args[1], ins.width));
        }
        break;
      }
      case Opcode::Not: {
        arity(1);
        ins.width = reg(args[0]);
        ins.operands.push_back(Register{args[0].text});
        break;
      }
      case Opcode::Sbfx:
      case Opcode::Ubfx: {
        arity(3);
        const unsigned src = reg(args[0]);
        if (args[1].kind != Tok::Imm || args[2].kind != Tok::Imm) fail(args[1], "bit field takes #lsb, #width");
        const std::uint64_t lsb = plain_number(args[1]);
        const std::uint64_t fw = plain_number(args[2]);
        if (fw < 1 || lsb + fw > src) fail(args[2], "bit field outside the " + std::to_string(src) + "-bit source");
        ins.width = suffix.value_or(32);
        if (ins.width < fw) fail(opc, "destination narrower than the bit field");
        ins.field_lo = static_cast<unsigned>(lsb);
        ins.field_hi = static_cast<unsigned>(lsb + fw - 1);
        ins.operands.push_back(Register{args[0].text});
        break;
      }
      case Opcode::Sext:
      case Opcode::Zext: {
        if (args.empty() || args.size() > 2) arity(1);
        const unsigned src = reg(args[0]);
        unsigned w = 0;
        if (args.size() == 2) {
          if (args[1].kind != Tok::Imm) fail(args[1], "extension width must be an immediate");
          const std::uint64_t v = plain_number(args[1]);
          if (v == 0 || v > kMaxWidth) fail(args[1], "extension width outside 1..64");
          w = static_cast<unsigned>(v);
        } else if (suffix) {
          w = *suffix;
        } else {
          fail(opc, std::string(opcode_name(*op)) + " needs a target width (" + opcode_name(*op) + ".W)");
        }
        if (w < src) fail(opc, "extension target narrower than the source");
        ins.width = w;
        ins.operands.push_back(Register{args[0].text});
        break;
      }
      case Opcode::Load: break;
      default: fail(opc, std::string(opcode_name(*op)) + " does not produce a value");
    }
    define(dest, dest.text, ins.width);
    push(ins, opc);
  }

  Function& f_;
  std::map<std::string, unsigned> widths_;
  const std::vector<Token>* toks_ = nullptr;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
};

Param parse_param(const std::vector<Token>& t, std::size_t& i, std::size_t line) {
  auto at = [&](std::size_t k) -> const Token& { return t[std::min(k, t.size() - 1)]; };
  if (at(i).kind != Tok::Ident) throw ParseError(line, at(i).column, "expected a parameter name");
  Param p;
  p.name = at(i++).text;
  if (at(i).kind != Tok::Punct || at(i).text != ":") throw ParseError(line, at(i).column, "expected ':'");
  ++i;
  if (at(i).kind != Tok::Ident || (at(i).text != "secret" && at(i).text != "public")) {
    throw ParseError(line, at(i).column, "expected 'secret' or 'public'");
  }
  p.taint = at(i++).text == "secret" ? Taint::Secret : Taint::Public;
  const Token& ty = at(i++);
  if (ty.kind != Tok::Ident || ty.text.size() < 2 || (ty.text[0] != 'u' && ty.text[0] != 'i')) {
    throw ParseError(line, ty.column, "expected a type like u8 or i32");
  }
  p.is_signed = ty.text[0] == 'i';
  const std::string bits = ty.text.substr(1);
  if (bits != "8" && bits != "16" && bits != "32" && bits != "64") {
    throw ParseError(line, ty.column, "parameter width must be 8, 16, 32 or 64");
  }
  p.width = static_cast<unsigned>(std::stoul(bits));
  return p;
}

}  // namespace

Program parse(std::string_view text) {
  Program prog;
  std::size_t line_no = 0;
  std::size_t start = 0;
  std::optional<FunctionParser> body;
  std::size_t open_line = 0;

  auto close = [&](std::size_t at_line) {
    body->finish(at_line);
    body.reset();
  };

  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    start = end + 1;

    std::vector<Token> toks = lex(line, line_no);
    if (toks.front().kind == Tok::End) {
      if (end == text.size()) break;
      continue;
    }

    if (!body) {
      const Token& kw = toks.front();
      if (kw.kind != Tok::Ident || kw.text != "func") throw ParseError(line_no, kw.column, "expected 'func'");
      if (toks.size() < 3 || toks[1].kind != Tok::Ident) throw ParseError(line_no, toks[1].column, "expected a function name");
      Function f;
      f.name = toks[1].text;
      std::size_t i = 2;
      if (toks[i].kind != Tok::Punct || toks[i].text != "(") throw ParseError(line_no, toks[i].column, "expected '('");
      ++i;
      if (!(toks[i].kind == Tok::Punct && toks[i].text == ")")) {
        for (;;) {
          Param p = parse_param(toks, i, line_no);
          if (f.param(p.name)) throw ParseError(line_no, toks[i - 1].column, "duplicate parameter '" + p.name + "'");
          f.params.push_back(std::move(p));
          if (toks[i].kind == Tok::Punct && toks[i].text == ",") {
            ++i;
            continue;
          }
          break;
        }
      }
      if (toks[i].kind != Tok::Punct || toks[i].text != ")") throw ParseError(line_no, toks[i].column, "expected ')'");
      ++i;
      if (toks[i].kind != Tok::Punct || toks[i].text != "{") throw ParseError(line_no, toks[i].column, "expected '{'");
      ++i;
      for (const auto& existing : prog.functions) {
        if (existing.name == f.name) throw ParseError(line_no, toks[1].column, "duplicate function '" + f.name + "'");
      }
      prog.functions.push_back(std::move(f));
      body.emplace(prog.functions.back());
      open_line = line_no;
      if (toks[i].kind == Tok::Punct && toks[i].text == "}") {
        ++i;
        close(line_no);
      }
      if (toks[i].kind != Tok::End) throw ParseError(line_no, toks[i].column, "trailing tokens after function header");
    } else {
      if (toks.front().kind == Tok::Punct && toks.front().text == "}") {
        if (toks[1].kind != Tok::End) throw ParseError(line_no, toks[1].column, "trailing tokens after '}'");
        close(line_no);
      } else {
        body->line(toks, line_no);
      }
    }
    if (end == text.size()) break;
  }
  if (body) throw ParseError(open_line, 1, "function body is not closed");
  return prog;
}

// ---------------------------------------------------------------------------
// Unrolling

namespace {

struct Loop {
  std::string label;
  std::uint32_t head;
  std::uint32_t branch;
  unsigned bound;
};

}  // namespace

Function unroll(const Function& f, const LoopBounds& bounds) {
  std::vector<Loop> loops;
  for (const auto& ins : f.body) {
    if (ins.opcode != Opcode::Br && ins.opcode != Opcode::Brz) continue;
    const std::uint32_t head = f.labels.at(ins.target);
    if (head > ins.address) {
      throw ExecutionError("line " + std::to_string(ins.line) + ": forward branch to '" + ins.target +
                           "' is not supported; code must be branch-free after unrolling");
    }
    const LoopDecl* decl = nullptr;
    for (const auto& l : f.loops) {
      if (l.label == ins.target) decl = &l;
    }
    auto override_it = bounds.bounds.find(ins.target);
    if (!decl && override_it == bounds.bounds.end()) {
      throw UnboundedLoopError("line " + std::to_string(ins.line) + ": backward branch to '" + ins.target +
                               "' has no loop bound declaration");
    }
    unsigned bound = bounds.default_bound;
    if (override_it != bounds.bounds.end()) {
      bound = override_it->second;
    } else if (decl->bound) {
      bound = *decl->bound;
    }
    if (bound < 1) throw ConfigError("loop bound for '" + ins.target + "' must be at least 1");
    for (const auto& l : loops) {
      if (l.label == ins.target) {
        throw UnboundedLoopError("line " + std::to_string(ins.line) + ": label '" + ins.target +
                                 "' closes more than one loop");
      }
    }
    loops.push_back({ins.target, head, ins.address, bound});
  }
  if (loops.empty()) return f;

  for (const auto& a : loops) {
    for (const auto& b : loops) {
      const bool disjoint = a.branch < b.head || b.branch < a.head;
      const bool a_in_b = b.head <= a.head && a.branch < b.branch;
      const bool b_in_a = a.head <= b.head && b.branch < a.branch;
      if (&a != &b && !disjoint && !a_in_b && !b_in_a) {
        throw UnboundedLoopError("loops at addresses " + std::to_string(a.head) + " and " + std::to_string(b.head) +
                                 " overlap without nesting");
      }
    }
  }

  std::vector<std::pair<Instruction, Provenance>> out;
  std::vector<unsigned> iters;
  auto expand = [&](auto&& self, std::uint32_t begin, std::uint32_t end) -> void {
    std::uint32_t i = begin;
    while (i < end) {
      const Loop* pick = nullptr;
      for (const auto& l : loops) {
        if (l.head == i && l.branch < end && (!pick || l.branch > pick->branch)) pick = &l;
      }
      if (pick) {
        for (unsigned k = 0; k < pick->bound; ++k) {
          iters.push_back(k);
          self(self, pick->head, pick->branch);
          iters.pop_back();
        }
        i = pick->branch + 1;
        continue;
      }
      Provenance prov = f.provenance.size() > i ? f.provenance[i] : Provenance{i, {}};
      prov.iterations.insert(prov.iterations.end(), iters.begin(), iters.end());
      out.emplace_back(f.body[i], std::move(prov));
      ++i;
    }
  };
  expand(expand, 0, static_cast<std::uint32_t>(f.body.size()));

  Function g;
  g.name = f.name;
  g.params = f.params;
  std::map<std::string, std::string> current;
  auto rename_use = [&](Operand& op) {
    if (auto* r = std::get_if<Register>(&op)) {
      if (auto it = current.find(r->name); it != current.end()) r->name = it->second;
    }
  };
  for (auto& [ins, prov] : out) {
    for (auto& op : ins.operands) rename_use(op);
    if (!ins.dest.empty()) {
      std::string name = ins.dest;
      if (!prov.iterations.empty()) {
        name = ins.physical_dest + "@";
        for (std::size_t k = 0; k < prov.iterations.size(); ++k) {
          if (k) name += ".";
          name += std::to_string(prov.iterations[k]);
        }
      }
      current[ins.dest] = name;
      ins.dest = name;
    }
    ins.address = static_cast<std::uint32_t>(g.body.size());
    g.body.push_back(std::move(ins));
    g.provenance.push_back(std::move(prov));
  }
  return g;
}

Program unroll(const Program& p, const LoopBounds& bounds) {
  Program out;
  for (const auto& f : p.functions) out.functions.push_back(unroll(f, bounds));
  return out;
}

// ---------------------------------------------------------------------------
// Constant-time check

const char* violation_name(ViolationKind k) noexcept {
  switch (k) {
    case ViolationKind::SecretBranch: return "secret-dependent-branch";
    case ViolationKind::SecretIndexedLoad: return "secret-indexed-load";
    case ViolationKind::SecretIndexedStore: return "secret-indexed-store";
  }
  return "?";
}

std::set<std::string> taint_closure(const Function& f, const TaintDecl& t) {
  std::set<std::string> tainted;
  for (const auto& [name, taint] : t) {
    if (taint == Taint::Secret) tainted.insert(name);
  }
  auto is_tainted = [&](const Operand& op) {
    const auto* r = std::get_if<Register>(&op);
    return r && tainted.contains(r->name);
  };
  bool memory_tainted = false;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& ins : f.body) {
      bool t_out = false;
      switch (ins.opcode) {
        case Opcode::Store:
          if (is_tainted(ins.operands[1]) && !memory_tainted) {
            memory_tainted = true;
            changed = true;
          }
          continue;
        case Opcode::Load: t_out = memory_tainted || is_tainted(ins.operands[0]); break;
        case Opcode::Brz:
        case Opcode::Br:
        case Opcode::Ret: continue;
        default: t_out = std::any_of(ins.operands.begin(), ins.operands.end(), is_tainted);
      }
      if (t_out && !ins.dest.empty() && tainted.insert(ins.dest).second) changed = true;
    }
  }
  return tainted;
}

std::vector<Violation> ct_check(const Function& f, const TaintDecl& t) {
  for (const auto& p : f.params) {
    if (!t.contains(p.name)) throw ConfigError("no taint declaration for parameter '" + p.name + "'");
  }
  for (const auto& [name, _] : t) {
    if (!f.param(name)) throw ConfigError("taint declared for unknown parameter '" + name + "'");
  }
  const auto tainted = taint_closure(f, t);
  auto reg_tainted = [&](const Operand& op) {
    const auto* r = std::get_if<Register>(&op);
    return r && tainted.contains(r->name);
  };
  auto reg_name = [](const Operand& op) { return std::get<Register>(op).name; };

  std::vector<Violation> out;
  for (const auto& ins : f.body) {
    switch (ins.opcode) {
      case Opcode::Brz:
        if (reg_tainted(ins.operands[0])) {
          out.push_back({ins.address, ins.line, ViolationKind::SecretBranch,
                         "branch condition '" + reg_name(ins.operands[0]) + "' depends on secret data"});
        }
        break;
      case Opcode::Load:
        if (reg_tainted(ins.operands[0])) {
          out.push_back({ins.address, ins.line, ViolationKind::SecretIndexedLoad,
                         "load address '" + reg_name(ins.operands[0]) + "' depends on secret data"});
        }
        break;
      case Opcode::Store:
        if (reg_tainted(ins.operands[0])) {
          out.push_back({ins.address, ins.line, ViolationKind::SecretIndexedStore,
                         "store address '" + reg_name(ins.operands[0]) + "' depends on secret data"});
        }
        break;
      default: break;
    }
  }
  return out;
}

std::vector<Violation> ct_check(const Program& p) {
  std::vector<Violation> out;
  for (const auto& f : p.functions) {
    auto v = ct_check(f, declared_taint(f));
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::string operand_text(const Operand& op) {
  if (const auto* r = std::get_if<Register>(&op)) return r->name;
  return "#" + std::to_string(std::get<BitVector>(op).value());
}

}  // namespace

std::string render(const Function& f) {
  std::ostringstream os;
  os << "func " << f.name << "(";
  for (std::size_t i = 0; i < f.params.size(); ++i) {
    const auto& p = f.params[i];
    if (i) os << ", ";
    os << p.name << ": " << (p.taint == Taint::Secret ? "secret" : "public") << " " << (p.is_signed ? 'i' : 'u')
       << p.width;
  }
  os << ") {\n";
  auto labels_at = [&](std::uint32_t addr) {
    for (const auto& [name, a] : f.labels) {
      if (a == addr) os << "  label " << name << ":\n";
    }
  };
  for (const auto& ins : f.body) {
    labels_at(ins.address);
    os << "  ";
    const char* name = opcode_name(ins.opcode);
    switch (ins.opcode) {
      case Opcode::Store:
        os << "store";
        if (std::holds_alternative<BitVector>(ins.operands[1])) os << "." << ins.width;
        os << " [" << operand_text(ins.operands[0]) << "], " << operand_text(ins.operands[1]);
        break;
      case Opcode::Load: os << ins.dest << " = load." << ins.width << " [" << operand_text(ins.operands[0]) << "]"; break;
      case Opcode::Brz: os << "brz " << operand_text(ins.operands[0]) << ", " << ins.target; break;
      case Opcode::Br: os << "br " << ins.target; break;
      case Opcode::Ret:
        os << "ret";
        if (!ins.operands.empty()) os << " " << operand_text(ins.operands[0]);
        break;
      case Opcode::Sbfx:
      case Opcode::Ubfx:
        os << ins.dest << " = " << name << "." << ins.width << " " << operand_text(ins.operands[0]) << ", #"
           << ins.field_lo << ", #" << (ins.field_hi - ins.field_lo + 1);
        break;
      case Opcode::Sext:
      case Opcode::Zext: os << ins.dest << " = " << name << "." << ins.width << " " << operand_text(ins.operands[0]); break;
      case Opcode::Mov:
        os << ins.dest << " = mov";
        if (std::holds_alternative<BitVector>(ins.operands[0])) os << "." << ins.width;
        os << " " << operand_text(ins.operands[0]);
        break;
      default:
        os << ins.dest << " = " << name << " ";
        for (std::size_t k = 0; k < ins.operands.size(); ++k) {
          if (k) os << ", ";
          os << operand_text(ins.operands[k]);
        }
    }
    os << "\n";
  }
  labels_at(static_cast<std::uint32_t>(f.body.size()));
  for (const auto& l : f.loops) {
    os << "  loop " << l.label;
    if (l.bound) os << " bound " << *l.bound;
    os << "\n";
  }
  os << "}\n";
  return os.str();
}

std::string render(const Program& p) {
  std::string out;
  for (std::size_t i = 0; i < p.functions.size(); ++i) {
    if (i) out += "\n";
    out += render(p.functions[i]);
  }
  return out;
}

bool same_structure(const Function& a, const Function& b) {
  if (a.name != b.name || a.params != b.params || a.labels != b.labels || a.body.size() != b.body.size() ||
      a.loops.size() != b.loops.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.body.size(); ++i) {
    Instruction x = a.body[i];
    Instruction y = b.body[i];
    x.line = y.line = 0;
    if (x != y) return false;
  }
  for (std::size_t i = 0; i < a.loops.size(); ++i) {
    if (a.loops[i].label != b.loops[i].label || a.loops[i].bound != b.loops[i].bound) return false;
  }
  return true;
}

bool same_structure(const Program& a, const Program& b) {
  if (a.functions.size() != b.functions.size()) return false;
  for (std::size_t i = 0; i < a.functions.size(); ++i) {
    if (!same_structure(a.functions[i], b.functions[i])) return false;
  }
  return true;
}

}  // namespace poirot::mir
