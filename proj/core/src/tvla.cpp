#include "poirot/tvla.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <tuple>

#include "poirot/error.hpp"

namespace poirot::tvla {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

const symexec::StepRecord& record_at(const symexec::SymbolicState& st, std::uint32_t address) {
  for (const auto& r : st.trace) {
    if (r.address == address) return r;
  }
  throw Error("no instruction at address " + std::to_string(address));
}

BitVector random_bits(std::mt19937_64& rng, unsigned width) { return BitVector(width, rng()); }

struct ClassSampler {
  solver::Session& s;
  const Expr& e;
  std::vector<VarInfo> secrets;
  std::vector<VarInfo> publics;
  std::mt19937_64& rng;

  Expr var(const VarInfo& v) const { return Expr::var(v.name, v.width, v.secret, v.signed_hint); }

  void constrain(unsigned cls, const Env& pub) {
    for (const auto& v : publics) s.add(eq(var(v), Expr::constant(pub.at(v.name))));
    s.add(eq(solver::encode_popcount(e), Expr::constant(solver::popcount_width(e.width()), cls)));
  }

  // One satisfying secret assignment, nudged by a few random bit hints.
  std::optional<Env> draw() {
    unsigned total = 0;
    for (const auto& v : secrets) total += v.width;
    s.push();
    for (unsigned h = 0; h < std::min(3U, total); ++h) {
      const VarInfo& v = secrets[rng() % secrets.size()];
      const unsigned bit = static_cast<unsigned>(rng() % v.width);
      s.add(eq(extract(var(v), bit, bit), Expr::constant(1, rng() & 1)));
    }
    solver::CheckResult c = s.check();
    s.pop();
    if (c.status == solver::SatStatus::Unsat) c = s.check();
    if (c.status != solver::SatStatus::Sat) return std::nullopt;
    Env out;
    for (const auto& v : secrets) out.insert_or_assign(v.name, c.model.at(v.name));
    return out;
  }

  void block(const Env& a) {
    Expr any;
    for (const auto& v : secrets) {
      const Expr d = ne(var(v), Expr::constant(a.at(v.name)));
      any = any ? bit_or(any, d) : d;
    }
    s.add(any);
  }
};

}  // namespace

TestVectorSet gen_test_vectors(const symexec::SymbolicState& state, const leakage::PoiRecord& poi,
                               const VectorConfig& cfg, const solver::SolverConfig& scfg) {
  if (cfg.count == 0) throw ConfigError("test vector count must be at least 1");
  if (!poi.w1 || !poi.w2) throw Error("point of interest at address " + std::to_string(poi.address) + " has no witnesses");
  const symexec::StepRecord& rec = record_at(state, poi.address);
  const Expr& e = rec.expr;

  TestVectorSet out;
  out.address = poi.address;
  out.class_a = popcount(poi.w1->value);
  out.class_b = popcount(poi.w2->value);
  if (cfg.classes) std::tie(out.class_a, out.class_b) = *cfg.classes;
  if (out.class_a == out.class_b) out.warnings.push_back("both witnesses share omega class " + std::to_string(out.class_a));

  std::mt19937_64 rng(cfg.seed);
  auto session = solver::open_session(scfg);
  ClassSampler sampler{*session, e, {}, {}, rng};
  for (const auto& v : vars(e)) (v.secret ? sampler.secrets : sampler.publics).push_back(v);
  if (sampler.secrets.empty()) throw Error("point of interest does not depend on a secret input");

  // Inputs outside the target expression: publics zero (or random), secrets random.
  auto fill = [&](Env env, bool random_publics) {
    for (const auto& v : state.inputs) {
      if (env.count(v.name)) continue;
      if (v.secret || random_publics) {
        env.insert_or_assign(v.name, random_bits(rng, v.width));
      } else {
        env.insert_or_assign(v.name, BitVector(v.width, 0));
      }
    }
    return env;
  };
  Env witness_publics;
  for (const auto& v : sampler.publics) witness_publics.insert_or_assign(v.name, poi.w1->inputs.at(v.name));

  if (!cfg.random_publics) {
    auto sample = [&](unsigned cls, const leakage::Witness& w) {
      std::vector<Env> got;
      session->push();
      sampler.constrain(cls, witness_publics);
      if (popcount(w.value) == cls) {
        Env first;
        for (const auto& v : sampler.secrets) first.insert_or_assign(v.name, w.inputs.at(v.name));
        got.push_back(first);
        sampler.block(first);
      }
      while (got.size() < cfg.count) {
        auto a = sampler.draw();
        if (!a) break;
        got.push_back(*a);
        sampler.block(*a);
      }
      session->pop();
      if (got.size() < cfg.count) {
        out.warnings.push_back("omega class " + std::to_string(cls) + " has only " + std::to_string(got.size()) +
                               " distinct assignments; repeating them");
      }
      return got;
    };
    const auto ga = sample(out.class_a, *poi.w1);
    const auto gb = sample(out.class_b, *poi.w2);
    if (ga.empty() || gb.empty()) throw Error("could not reach the witness classes");
    for (unsigned i = 0; i < cfg.count; ++i) {
      Env a = ga[i % ga.size()];
      Env b = gb[i % gb.size()];
      for (const auto& [k, v] : witness_publics) {
        a.insert_or_assign(k, v);
        b.insert_or_assign(k, v);
      }
      out.a.push_back(fill(std::move(a), false));
      out.b.push_back(fill(std::move(b), false));
    }
  } else {
    unsigned fallbacks = 0;
    for (unsigned i = 0; i < cfg.count; ++i) {
      Env pub = fill(Env{}, true);
      for (auto it = pub.begin(); it != pub.end();) {
        const bool secret_input = std::any_of(state.inputs.begin(), state.inputs.end(),
                                              [&](const VarInfo& v) { return v.name == it->first && v.secret; });
        it = secret_input ? pub.erase(it) : std::next(it);
      }
      std::optional<Env> a, b;
      for (int attempt = 0; attempt < 2 && (!a || !b); ++attempt) {
        if (attempt == 1) {
          ++fallbacks;
          for (const auto& [k, v] : witness_publics) pub.insert_or_assign(k, v);
        }
        session->push();
        sampler.constrain(out.class_a, pub);
        a = sampler.draw();
        session->pop();
        session->push();
        sampler.constrain(out.class_b, pub);
        b = sampler.draw();
        session->pop();
      }
      if (!a || !b) throw Error("could not reach the witness classes");
      for (const auto& [k, v] : pub) {
        a->insert_or_assign(k, v);
        b->insert_or_assign(k, v);
      }
      out.a.push_back(fill(std::move(*a), false));
      out.b.push_back(fill(std::move(*b), false));
    }
    if (fallbacks) {
      out.warnings.push_back(std::to_string(fallbacks) + " random public draws could not reach both classes; used the witness publics");
    }
  }

  for (std::size_t i = 0; i < out.a.size(); ++i) {
    if (popcount(eval(e, out.a[i])) != out.class_a || popcount(eval(e, out.b[i])) != out.class_b) {
      throw Error("generated test vector misses its omega class");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Concrete execution

std::vector<ConcreteStep> execute(const mir::Function& f, const Env& inputs) {
  struct Word {
    std::uint64_t v;
    unsigned w;
  };
  std::map<std::string, Word> regs;
  std::map<std::string, std::uint64_t> physical;
  std::map<std::uint64_t, Word> mem;
  for (const auto& p : f.params) {
    auto it = inputs.find(p.name);
    regs[p.name] = {it == inputs.end() ? 0 : it->second.value() & width_mask(p.width), p.width};
  }

  std::vector<ConcreteStep> out;
  for (const auto& i : f.body) {
    auto arg = [&](std::size_t k) -> Word {
      const mir::Operand& op = i.operands.at(k);
      if (const auto* r = std::get_if<mir::Register>(&op)) {
        auto it = regs.find(r->name);
        if (it == regs.end()) throw ExecutionError("register '" + r->name + "' is undefined");
        return it->second;
      }
      const BitVector& b = std::get<BitVector>(op);
      return {b.value(), b.width()};
    };
    const unsigned w = i.width;
    const std::uint64_t m = width_mask(w);
    auto sx = [](std::uint64_t v, unsigned from) {
      const std::uint64_t sign = std::uint64_t{1} << (from - 1);
      return (v ^ sign) - sign;
    };
    ConcreteStep step{i.address, w, std::nullopt, std::nullopt};
    std::optional<std::uint64_t> r;
    switch (i.opcode) {
      case mir::Opcode::Mov: r = arg(0).v; break;
      case mir::Opcode::Add: r = arg(0).v + arg(1).v; break;
      case mir::Opcode::Sub: r = arg(0).v - arg(1).v; break;
      case mir::Opcode::Mul: r = arg(0).v * arg(1).v; break;
      case mir::Opcode::And: r = arg(0).v & arg(1).v; break;
      case mir::Opcode::Or: r = arg(0).v | arg(1).v; break;
      case mir::Opcode::Xor: r = arg(0).v ^ arg(1).v; break;
      case mir::Opcode::Not: r = ~arg(0).v; break;
      case mir::Opcode::Shl: {
        const auto b = arg(1).v;
        r = b >= w ? 0 : arg(0).v << b;
        break;
      }
      case mir::Opcode::Lsr: {
        const auto b = arg(1).v;
        r = b >= w ? 0 : arg(0).v >> b;
        break;
      }
      case mir::Opcode::Asr: {
        const auto b = std::min<std::uint64_t>(arg(1).v, w - 1);
        r = static_cast<std::uint64_t>(static_cast<std::int64_t>(sx(arg(0).v, w)) >> b);
        break;
      }
      case mir::Opcode::Sbfx:
      case mir::Opcode::Ubfx: {
        const unsigned fw = i.field_hi - i.field_lo + 1;
        const std::uint64_t field = (arg(0).v >> i.field_lo) & width_mask(fw);
        r = i.opcode == mir::Opcode::Sbfx ? sx(field, fw) : field;
        break;
      }
      case mir::Opcode::Sext:
      case mir::Opcode::Zext: {
        const Word a = arg(0);
        r = i.opcode == mir::Opcode::Sext ? sx(a.v, a.w) : a.v;
        break;
      }
      case mir::Opcode::Load: {
        const std::uint64_t addr = arg(0).v;
        auto it = mem.find(addr);
        if (it == mem.end()) {
          char name[32];
          std::snprintf(name, sizeof name, "mem_0x%llx", static_cast<unsigned long long>(addr));
          auto in = inputs.find(name);
          it = mem.emplace(addr, Word{in == inputs.end() ? 0 : in->second.value() & m, w}).first;
        }
        r = it->second.v;
        break;
      }
      case mir::Opcode::Store: {
        const Word v = arg(1);
        mem[arg(0).v] = v;
        r = v.v;
        break;
      }
      case mir::Opcode::Ret:
        if (!i.operands.empty()) r = arg(0).v;
        break;
      case mir::Opcode::Brz:
      case mir::Opcode::Br: throw ExecutionError("concrete execution needs straight-line code");
    }
    if (r) step.value = *r & m;
    if (!i.dest.empty()) {
      const std::string& phys = i.physical_dest.empty() ? i.dest : i.physical_dest;
      if (auto it = physical.find(phys); it != physical.end()) step.prev = it->second;
      regs[i.dest] = {*step.value, w};
      physical[phys] = *step.value;
    }
    out.push_back(step);
  }
  return out;
}

TraceSet simulate_traces(const mir::Function& f, const std::vector<Env>& inputs, const LeakModel& m,
                         std::uint64_t first_index) {
  if (!(m.alpha > 0)) throw ConfigError("leak model gain must be positive");
  if (m.sigma < 0) throw ConfigError("noise deviation must not be negative");
  TraceSet t;
  t.model = m;
  t.program_hash = mir::fnv1a(mir::render(f));
  for (const auto& i : f.body) t.addresses.push_back(i.address);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::mt19937_64 rng(splitmix64(m.seed ^ splitmix64(first_index + k)));
    std::normal_distribution<double> noise(0.0, m.sigma);
    std::vector<double> row;
    for (const auto& s : execute(f, inputs[k])) {
      double level = 0;
      if (s.value) {
        level = std::popcount(*s.value);
        if (m.mode == LeakMode::HdTransition) level += std::popcount(*s.value ^ s.prev.value_or(0));
      }
      row.push_back(m.offset + m.alpha * level + (m.sigma > 0 ? noise(rng) : 0.0));
    }
    t.samples.push_back(std::move(row));
  }
  return t;
}

std::vector<double> welch_t(const TraceSet& a, const TraceSet& b) {
  if (a.traces() < 2 || b.traces() < 2) throw ConfigError("the t-test needs at least two traces per set");
  const std::size_t points = a.samples.front().size();
  for (const auto* set : {&a, &b}) {
    for (const auto& row : set->samples) {
      if (row.size() != points) throw ConfigError("trace lengths differ");
    }
  }
  auto stats = [](const TraceSet& s, std::size_t j) {
    double mean = 0;
    for (const auto& row : s.samples) mean += row[j];
    mean /= static_cast<double>(s.traces());
    double ss = 0;
    for (const auto& row : s.samples) ss += (row[j] - mean) * (row[j] - mean);
    return std::make_pair(mean, ss / static_cast<double>(s.traces() - 1));
  };
  std::vector<double> t(points);
  for (std::size_t j = 0; j < points; ++j) {
    const auto [ma, va] = stats(a, j);
    const auto [mb, vb] = stats(b, j);
    const double se = std::sqrt(va / static_cast<double>(a.traces()) + vb / static_cast<double>(b.traces()));
    if (se == 0) {
      t[j] = ma == mb ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
    } else {
      t[j] = (ma - mb) / se;
    }
  }
  return t;
}

TvlaResult run_tvla(const mir::Function& f, const symexec::SymbolicState& state, const leakage::PoiRecord& poi,
                    const TvlaConfig& cfg, const solver::SolverConfig& scfg) {
  TvlaResult r;
  r.vectors = gen_test_vectors(state, poi, cfg.vectors, scfg);
  r.a = simulate_traces(f, r.vectors.a, cfg.model, 0);
  r.b = simulate_traces(f, r.vectors.b, cfg.model, r.vectors.a.size());
  r.t = welch_t(r.a, r.b);
  r.poi_address = poi.address;
  r.threshold = cfg.threshold;
  for (std::size_t j = 0; j < r.a.points(); ++j) {
    if (r.a.addresses[j] == poi.address) r.poi_t = std::abs(r.t[j]);
  }
  r.leak = r.poi_t >= cfg.threshold;
  r.leak_conventional = r.poi_t >= kConventionalThreshold;
  return r;
}

std::vector<unsigned> reachable_classes(const symexec::SymbolicState& state, const leakage::PoiRecord& poi,
                                        const solver::SolverConfig& scfg) {
  if (!poi.w1) throw Error("point of interest at address " + std::to_string(poi.address) + " has no witnesses");
  const Expr& e = record_at(state, poi.address).expr;
  std::mt19937_64 rng(0);
  auto session = solver::open_session(scfg);
  ClassSampler sampler{*session, e, {}, {}, rng};
  for (const auto& v : vars(e)) (v.secret ? sampler.secrets : sampler.publics).push_back(v);
  std::vector<unsigned> out;
  for (unsigned c = 0; c <= e.width(); ++c) {
    session->push();
    sampler.constrain(c, poi.w1->inputs);
    const auto r = session->check();
    session->pop();
    if (r.status == solver::SatStatus::Sat) out.push_back(c);
  }
  return out;
}

std::vector<TvlaResult> run_tvla_class_pairs(const mir::Function& f, const symexec::SymbolicState& state,
                                             const leakage::PoiRecord& poi, const TvlaConfig& cfg,
                                             const solver::SolverConfig& scfg) {
  const auto classes = reachable_classes(state, poi, scfg);
  std::vector<TvlaResult> out;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    for (std::size_t j = i + 1; j < classes.size(); ++j) {
      TvlaConfig c = cfg;
      c.vectors.classes = std::make_pair(classes[i], classes[j]);
      out.push_back(run_tvla(f, state, poi, c, scfg));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export

void write_csv(const TraceSet& t, std::ostream& os) {
  os << "trace";
  for (auto a : t.addresses) os << ",p" << a;
  os << "\n";
  char buf[32];
  for (std::size_t k = 0; k < t.samples.size(); ++k) {
    os << k;
    for (double v : t.samples[k]) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    os << "\n";
  }
}

namespace {

void put(std::ostream& os, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get(std::istream& is, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw Error("truncated trace file");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

constexpr std::uint32_t kVersion = 1;

}  // namespace

void write_binary(const TraceSet& t, std::ostream& os) {
  os.write("PSCT", 4);
  put(os, kVersion, 4);
  put(os, t.traces(), 8);
  put(os, t.points(), 8);
  for (const auto& row : t.samples) {
    for (double v : row) put(os, std::bit_cast<std::uint64_t>(v), 8);
  }
}

TraceSet read_binary(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "PSCT") throw Error("not a trace file");
  if (get(is, 4) != kVersion) throw Error("unsupported trace file version");
  const std::uint64_t traces = get(is, 8);
  const std::uint64_t points = get(is, 8);
  TraceSet t;
  for (std::uint64_t j = 0; j < points; ++j) t.addresses.push_back(static_cast<std::uint32_t>(j));
  for (std::uint64_t k = 0; k < traces; ++k) {
    std::vector<double> row;
    for (std::uint64_t j = 0; j < points; ++j) row.push_back(std::bit_cast<double>(get(is, 8)));
    t.samples.push_back(std::move(row));
  }
  return t;
}

}  // namespace poirot::tvla
