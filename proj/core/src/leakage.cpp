#include "poirot/leakage.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "poirot/error.hpp"

namespace poirot::leakage {

using solver::Direction;
using solver::Model;
using solver::Objective;
using solver::OptResult;
using solver::OptStatus;
using solver::SatStatus;
using solver::Session;

const char* reason_name(Reason r) noexcept {
  switch (r) {
    case Reason::ForcedMax: return "forced-max";
    case Reason::TwoClassDeterminer: return "two-class-determiner";
    case Reason::DiscriminantUnsat: return "discriminant-unsat";
    case Reason::BlockedPairUnsat: return "blocked-pair-unsat";
    case Reason::EntropyLow: return "entropy-low";
    case Reason::Continuity: return "continuity";
  }
  return "?";
}

solver::Formula SelfComposedPair::formula() const {
  solver::Formula f{pinning};
  f.assertions.push_back(distinct);
  return f;
}

SelfComposedPair self_compose(const symexec::StepRecord& rec) {
  if (!rec.expr || !rec.tainted) {
    throw NotApplicableError("record at address " + std::to_string(rec.address) + " is not secret-tainted");
  }
  SelfComposedPair p;
  p.r = rec.expr;
  p.r_prime = rename_fresh(rec.expr, "'");
  for (const auto& v : vars(rec.expr)) {
    if (v.secret) {
      p.secrets.push_back(v);
      continue;
    }
    p.publics.push_back(v);
    p.pinning.push_back(
        eq(Expr::var(v.name, v.width, false, v.signed_hint), Expr::var(v.name + "'", v.width, false, v.signed_hint)));
  }
  p.distinct = ne(p.r, p.r_prime);
  return p;
}

namespace {

constexpr double kEps = 1e-12;

void add_reason(std::vector<Reason>& rs, Reason r) {
  if (std::find(rs.begin(), rs.end(), r) == rs.end()) rs.push_back(r);
}

OptStatus worse(OptStatus a, OptStatus b) {
  auto rank = [](OptStatus s) {
    switch (s) {
      case OptStatus::Optimal:
      case OptStatus::Unsat: return 0;
      case OptStatus::Suboptimal: return 1;
      case OptStatus::Timeout: return 2;
    }
    return 0;
  };
  return rank(b) > rank(a) ? b : a;
}

Witness witness_from(const Model& m, const Expr& original, const Expr& evaluated, bool primed) {
  Witness w{{}, eval(evaluated, m)};
  for (const auto& v : vars(original)) {
    auto it = m.find(primed ? v.name + "'" : v.name);
    if (it != m.end()) w.inputs.insert_or_assign(v.name, it->second);
  }
  return w;
}

Env publics_of(const Witness& w, const std::vector<VarInfo>& publics) {
  Env out;
  for (const auto& p : publics) {
    if (auto it = w.inputs.find(p.name); it != w.inputs.end()) out.insert_or_assign(p.name, it->second);
  }
  return out;
}

// Min first; forced max when the minimum already reaches the threshold,
// otherwise a separate maximization. Leaves the witness model in `model`.
void optimize_min_max(Session& s, const Expr& objective, unsigned n, unsigned threshold, MetricResult& out,
                      Model& model) {
  const OptResult lo = solver::optimize(s, Objective{objective, Direction::Minimize, 0, n});
  if (lo.status == OptStatus::Unsat || lo.status == OptStatus::Timeout) {
    out.status = lo.status;
    return;
  }
  out.min = *lo.value;
  out.status = lo.status;
  if (*lo.value >= threshold) {
    out.max = out.min;
    out.flagged = true;
    add_reason(out.reasons, Reason::ForcedMax);
    model = *lo.model;
    return;
  }
  const OptResult hi = solver::optimize(s, Objective{objective, Direction::Maximize, 0, n});
  out.status = worse(out.status, hi.status);
  if (hi.value) {
    out.max = *hi.value;
    model = *hi.model;
  } else {
    model = *lo.model;
    out.notes.push_back("maximization did not finish");
  }
}

void determiner_check(const Expr& r, const std::vector<VarInfo>& publics, unsigned floor, MetricResult& out,
                      Session& s) {
  if (!out.w1 || !out.w2) return;
  const auto proved = blocked_pair_unsat(r, publics_of(*out.w1, publics), out.w1->value, out.w2->value, s);
  if (!proved) {
    out.notes.push_back("blocked-pair check timed out");
    return;
  }
  if (!*proved) return;
  out.domain = std::make_pair(std::min(out.w1->value, out.w2->value), std::max(out.w1->value, out.w2->value));
  if (detect_determiner(out, floor)) {
    out.determiner = true;
    out.flagged = true;
    add_reason(out.reasons, Reason::TwoClassDeterminer);
    add_reason(out.reasons, Reason::BlockedPairUnsat);
  } else if (popcount(out.w1->value) == popcount(out.w2->value)) {
    out.notes.push_back("equal-weight pair " + out.w1->value.to_string() + "/" + out.w2->value.to_string() +
                        " is the whole domain (annotated, not flagged)");
  }
}

// Smallest secret inputs (in variable order) that still produce w.value under
// w's publics. Leaves w untouched when any step fails to finish.
void canonicalize(Witness& w, const Expr& r, Session& s) {
  Witness c = w;
  bool ok = true;
  s.push();
  s.add(eq(r, Expr::constant(w.value)));
  for (const auto& v : vars(r)) {
    if (v.secret || !w.inputs.count(v.name)) continue;
    s.add(eq(Expr::var(v.name, v.width, false, v.signed_hint), Expr::constant(w.inputs.at(v.name))));
  }
  for (const auto& v : vars(r)) {
    if (!v.secret) continue;
    const Expr x = Expr::var(v.name, v.width, true, v.signed_hint);
    const OptResult m = solver::optimize(s, Objective{x, Direction::Minimize, 0, width_mask(v.width)});
    if (m.status != OptStatus::Optimal) {
      ok = false;
      break;
    }
    const BitVector val(v.width, *m.value);
    c.inputs.insert_or_assign(v.name, val);
    s.add(eq(x, Expr::constant(val)));
  }
  s.pop();
  if (ok && eval(r, c.inputs) == w.value) w = std::move(c);
}

void canonicalize_pair(MetricResult& m, const Expr& r, const AnalysisConfig& cfg, Session& s) {
  if (!cfg.canonical_witnesses || !m.w1 || !m.w2) return;
  canonicalize(*m.w1, r, s);
  canonicalize(*m.w2, r, s);
}

}  // namespace

std::optional<bool> blocked_pair_unsat(const Expr& e, const Env& publics, const BitVector& v1, const BitVector& v2,
                                       Session& s) {
  s.push();
  for (const auto& v : vars(e)) {
    if (v.secret) continue;
    auto it = publics.find(v.name);
    if (it == publics.end()) continue;
    s.add(eq(Expr::var(v.name, v.width, false, v.signed_hint), Expr::constant(it->second)));
  }
  s.add(ne(e, Expr::constant(v1)));
  s.add(ne(e, Expr::constant(v2)));
  const auto c = s.check();
  s.pop();
  if (c.status == SatStatus::Unknown) return std::nullopt;
  return c.status == SatStatus::Unsat;
}

bool detect_determiner(const MetricResult& m, unsigned floor) {
  return m.domain && diff_hw(m.domain->first, m.domain->second) >= floor;
}

MetricResult analyze_dhw(const SelfComposedPair& pair, const AnalysisConfig& cfg, Session& s) {
  MetricResult out;
  const unsigned start = s.check_count();
  const unsigned n = pair.r.width();
  const unsigned threshold = std::min(cfg.nu.value_or(n), n);
  const Expr objective =
      solver::encode_abs_diff(solver::encode_popcount(pair.r), solver::encode_popcount(pair.r_prime));

  s.push();
  for (const auto& a : pair.formula().assertions) s.add(a);
  Model model;
  optimize_min_max(s, objective, n, threshold, out, model);
  if (out.status == OptStatus::Unsat) {
    out.notes.push_back("no two distinct values under equal public inputs");
  }
  if (!model.empty()) {
    out.w1 = witness_from(model, pair.r, pair.r, false);
    out.w2 = witness_from(model, pair.r, pair.r_prime, true);
  }
  const bool equal_bounds = out.min && out.max && *out.min == *out.max && out.status == OptStatus::Optimal;
  if (equal_bounds && *out.min >= 1) {
    const unsigned b = std::min(cfg.discriminant_bit.value_or(n - 1), n - 1);
    s.push();
    s.add(eq(extract(pair.r, b, b), extract(pair.r_prime, b, b)));
    const auto c = s.check();
    s.pop();
    if (c.status == SatStatus::Unsat) {
      out.flagged = true;
      add_reason(out.reasons, Reason::DiscriminantUnsat);
    } else if (c.status == SatStatus::Unknown) {
      out.notes.push_back("discriminant check timed out");
    }
  }
  s.pop();
  canonicalize_pair(out, pair.r, cfg, s);

  if (equal_bounds && (*out.min >= cfg.determiner_floor || *out.min == 0)) {
    determiner_check(pair.r, pair.publics, cfg.determiner_floor, out, s);
  }
  out.queries = s.check_count() - start;
  return out;
}

HdResult analyze_hd(const SelfComposedPair& pair, const AnalysisConfig& cfg, Session& s) {
  HdResult out;
  out.mode = HdMode::Value;
  const unsigned start = s.check_count();
  const unsigned n = pair.r.width();
  const unsigned threshold = std::min(cfg.nu.value_or(n), n);
  const Expr objective = solver::encode_popcount(bit_xor(pair.r, pair.r_prime));

  s.push();
  for (const auto& a : pair.formula().assertions) s.add(a);
  Model model;
  optimize_min_max(s, objective, n, threshold, out, model);
  if (!model.empty()) {
    out.w1 = witness_from(model, pair.r, pair.r, false);
    out.w2 = witness_from(model, pair.r, pair.r_prime, true);
  }
  s.pop();
  canonicalize_pair(out, pair.r, cfg, s);
  if (out.min && out.max && *out.min == *out.max && out.status == OptStatus::Optimal && *out.min >= 1) {
    determiner_check(pair.r, pair.publics, cfg.determiner_floor, out, s);
  }
  out.queries = s.check_count() - start;
  return out;
}

HdResult analyze_hd_transition(const symexec::StepRecord& rec, const AnalysisConfig& cfg, Session& s) {
  HdResult out;
  out.mode = HdMode::Transition;
  const unsigned start = s.check_count();
  const unsigned n = rec.expr.width();
  Expr prev = rec.prev;
  if (!prev) {
    prev = Expr::constant(n, 0);
    out.prev_fallback = true;
    out.notes.push_back("register had no previous value; distance to zero used");
  } else if (prev.width() > n) {
    prev = extract(prev, n - 1, 0);
  } else if (prev.width() < n) {
    prev = zero_ext(prev, n - prev.width());
  }
  const unsigned threshold = std::min(cfg.nu.value_or(n), n);
  s.push();
  s.declare(rec.expr);
  s.declare(prev);
  Model model;
  optimize_min_max(s, solver::encode_popcount(bit_xor(rec.expr, prev)), n, threshold, out, model);
  s.pop();
  if (!model.empty()) {
    out.w1 = witness_from(model, rec.expr, rec.expr, false);
    Witness w2 = witness_from(model, prev, prev, false);
    w2.inputs = out.w1->inputs;
    for (const auto& v : vars(prev)) w2.inputs.insert_or_assign(v.name, model.at(v.name));
    out.w2 = std::move(w2);
  }
  out.queries = s.check_count() - start;
  return out;
}

double class_entropy(unsigned n, const std::vector<unsigned>& classes) {
  if (classes.size() < 2) return 0.0;
  std::vector<double> logw;
  for (unsigned i : classes) logw.push_back(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0));
  const double top = *std::max_element(logw.begin(), logw.end());
  double total = 0.0;
  std::vector<double> w;
  for (double l : logw) {
    w.push_back(std::exp(l - top));
    total += w.back();
  }
  double h = 0.0;
  for (double x : w) {
    const double p = x / total;
    if (p > 0) h -= p * std::log2(p);
  }
  return h;
}

EntropyResult analyze_entropy(const symexec::StepRecord& rec, const AnalysisConfig& cfg, Session& s) {
  EntropyResult out;
  const unsigned start = s.check_count();
  const Expr& r = rec.expr;
  const unsigned n = r.width();
  const unsigned m = solver::popcount_width(n);
  const Expr pc = solver::encode_popcount(r);

  s.push();
  s.declare(r);
  for (unsigned i = 0; i <= n; ++i) {
    s.push();
    s.add(eq(pc, Expr::constant(m, i)));
    const auto c = s.check();
    s.pop();
    if (c.status == SatStatus::Sat) out.classes.push_back(i);
    if (c.status == SatStatus::Unknown) out.unknown_classes.push_back(i);
    s.add(ne(pc, Expr::constant(m, i)));
  }
  s.pop();

  if (out.classes.size() >= 2) {
    out.value = class_entropy(n, out.classes);
    out.flagged = out.value <= cfg.entropy_threshold + kEps;
  } else if (out.classes.size() == 1) {
    const unsigned cls = out.classes[0];
    s.push();
    s.add(eq(pc, Expr::constant(m, cls)));
    const DomainProbe d = probe_domain(r, 3, s);
    s.pop();
    out.value = 0.0;
    if (d.values.size() <= 1 && d.complete) {
      out.notes.push_back("single omega class " + std::to_string(cls) + ": register is constant");
    } else {
      out.notes.push_back("single omega class " + std::to_string(cls) + " with " +
                          (d.complete ? std::to_string(d.values.size()) : std::string("3+")) +
                          " values: indistinguishable under the weight model");
    }
  }
  if (!out.unknown_classes.empty()) out.notes.push_back("some omega-class probes timed out");
  out.queries = s.check_count() - start;
  return out;
}

DomainProbe probe_domain(const Expr& e, unsigned limit, Session& s) {
  DomainProbe out;
  s.push();
  s.declare(e);
  for (;;) {
    const auto c = s.check();
    if (c.status == SatStatus::Unsat) {
      out.complete = true;
      break;
    }
    if (c.status == SatStatus::Unknown || out.values.size() >= limit) break;
    const BitVector v = eval(e, c.model);
    out.values.push_back(v);
    s.add(ne(e, Expr::constant(v)));
  }
  s.pop();
  return out;
}

// ---------------------------------------------------------------------------
// Per record and per trace

namespace {

PoiRecord header(const symexec::StepRecord& rec) {
  PoiRecord p;
  p.address = rec.address;
  p.original_address = rec.original_address;
  p.iterations = rec.iterations;
  p.opcode = rec.opcode;
  p.dest = rec.dest;
  p.width = rec.width;
  p.line = rec.line;
  p.expr = to_string(rec.expr);
  return p;
}

void finish(PoiRecord& p) {
  bool any = false;
  bool all_unsat = true;
  OptStatus st = OptStatus::Optimal;
  auto take = [&](const MetricResult& m) {
    any = true;
    if (m.status != OptStatus::Unsat) all_unsat = false;
    st = worse(st, m.status);
    if (m.flagged) p.vulnerable = true;
    for (Reason r : m.reasons) add_reason(p.reasons, r);
    p.notes.insert(p.notes.end(), m.notes.begin(), m.notes.end());
  };
  if (p.dhw) take(*p.dhw);
  if (p.hd) take(*p.hd);
  if (p.entropy) {
    all_unsat = false;
    any = true;
    if (!p.entropy->unknown_classes.empty()) st = worse(st, OptStatus::Suboptimal);
    if (p.entropy->flagged) {
      p.vulnerable = true;
      add_reason(p.reasons, Reason::EntropyLow);
    }
    p.notes.insert(p.notes.end(), p.entropy->notes.begin(), p.entropy->notes.end());
  }
  p.status = any && all_unsat ? OptStatus::Unsat : st;
  if (p.dhw && p.dhw->w1) {
    p.w1 = p.dhw->w1;
    p.w2 = p.dhw->w2;
  } else if (p.hd && p.hd->w1) {
    p.w1 = p.hd->w1;
    p.w2 = p.hd->w2;
  }
  std::sort(p.reasons.begin(), p.reasons.end());
}

enum class Unary { Not, Rotate, Xor, Neg };

struct Candidate {
  std::size_t source;  // index into the analyzed list
  Unary kind;
  std::uint64_t param = 0;  // rotate amount or xor mask
};

std::optional<std::pair<Expr, Candidate>> match_unary(const Expr& e) {
  const unsigned n = e.width();
  if (e.op() == Op::Not) return std::make_pair(e.operand(0), Candidate{0, Unary::Not});
  if (e.op() == Op::Xor && e.operand(1).is_const()) {
    return std::make_pair(e.operand(0), Candidate{0, Unary::Xor, e.operand(1).value().value()});
  }
  if (e.op() == Op::Sub && e.operand(0).is_const(0)) return std::make_pair(e.operand(1), Candidate{0, Unary::Neg});
  if (e.op() == Op::Or) {
    for (int k = 0; k < 2; ++k) {
      const Expr& a = e.operand(k);
      const Expr& b = e.operand(1 - k);
      if (a.op() == Op::Shl && b.op() == Op::Lshr && a.operand(0) == b.operand(0) && a.operand(1).is_const() &&
          b.operand(1).is_const()) {
        const std::uint64_t c1 = a.operand(1).value().value();
        const std::uint64_t c2 = b.operand(1).value().value();
        if (c1 > 0 && c2 > 0 && c1 + c2 == n) return std::make_pair(a.operand(0), Candidate{0, Unary::Rotate, c1});
      }
    }
  }
  return std::nullopt;
}

BitVector apply_unary(const Candidate& c, const BitVector& v) {
  const unsigned n = v.width();
  switch (c.kind) {
    case Unary::Not: return BitVector(n, ~v.value());
    case Unary::Neg: return BitVector(n, 0 - v.value());
    case Unary::Xor: return BitVector(n, v.value() ^ c.param);
    case Unary::Rotate: return BitVector(n, (v.value() << c.param) | (v.value() >> (n - c.param)));
  }
  return v;
}

std::optional<Witness> map_witness(const std::optional<Witness>& w, const Candidate& c) {
  if (!w) return std::nullopt;
  return Witness{w->inputs, apply_unary(c, w->value)};
}

void map_metric(MetricResult& m, const Candidate& c) {
  m.w1 = map_witness(m.w1, c);
  m.w2 = map_witness(m.w2, c);
  if (m.domain) {
    const BitVector a = apply_unary(c, m.domain->first);
    const BitVector b = apply_unary(c, m.domain->second);
    m.domain = std::make_pair(std::min(a, b), std::max(a, b));
  }
  m.queries = 0;
}

// Result for `rec` derived from its flagged source without new queries, or
// nullopt when the mapping does not preserve the metrics.
std::optional<PoiRecord> propagate(const PoiRecord& src, const symexec::StepRecord& src_rec,
                                   const symexec::StepRecord& rec, const Candidate& c, const AnalysisConfig& cfg) {
  if (cfg.hd_transition) return std::nullopt;  // transitions depend on the destination's own history
  PoiRecord p = header(rec);
  p.continuity_source = src.address;
  const unsigned n = rec.width;

  if (c.kind == Unary::Not || c.kind == Unary::Rotate) {
    p.dhw = src.dhw;
    p.hd = src.hd;
    p.entropy = src.entropy;
    if (p.dhw) map_metric(*p.dhw, c);
    if (p.hd) map_metric(*p.hd, c);
    if (p.entropy && c.kind == Unary::Not) {
      for (auto& k : p.entropy->classes) k = n - k;
      for (auto& k : p.entropy->unknown_classes) k = n - k;
      std::sort(p.entropy->classes.begin(), p.entropy->classes.end());
      std::sort(p.entropy->unknown_classes.begin(), p.entropy->unknown_classes.end());
    }
    if (p.entropy) p.entropy->queries = 0;
  } else {
    // xor-mask and negation keep cardinality but not weights: only usable on
    // a proven two-value domain that no public input can move.
    const MetricResult* base = src.dhw && src.dhw->domain ? &*src.dhw : (src.hd && src.hd->domain ? &*src.hd : nullptr);
    if (!base) return std::nullopt;
    for (const auto& v : vars(src_rec.expr)) {
      if (!v.secret) return std::nullopt;
    }
    const BitVector a = apply_unary(c, base->domain->first);
    const BitVector b = apply_unary(c, base->domain->second);
    const unsigned threshold = std::min(cfg.nu.value_or(n), n);
    auto metric = [&](unsigned value, bool hd_metric) {
      MetricResult m;
      m.min = m.max = value;
      m.status = OptStatus::Optimal;
      m.w1 = map_witness(base->w1, c);
      m.w2 = map_witness(base->w2, c);
      m.domain = std::make_pair(std::min(a, b), std::max(a, b));
      if (value >= threshold) {
        m.flagged = true;
        add_reason(m.reasons, Reason::ForcedMax);
      }
      // the only distinct pair is (a, b)
      const unsigned bit = std::min(cfg.discriminant_bit.value_or(n - 1), n - 1);
      if (value >= 1 && ((a.value() ^ b.value()) >> bit & 1U)) {
        m.flagged = true;
        add_reason(m.reasons, Reason::DiscriminantUnsat);
      }
      if (diff_hw(a, b) >= cfg.determiner_floor) {
        m.determiner = true;
        if (!hd_metric || value >= 1) {
          m.flagged = true;
          add_reason(m.reasons, Reason::TwoClassDeterminer);
          add_reason(m.reasons, Reason::BlockedPairUnsat);
        }
      }
      return m;
    };
    if (cfg.dhw) p.dhw = metric(diff_hw(a, b), false);
    if (cfg.hd_value) {
      HdResult h;
      static_cast<MetricResult&>(h) = metric(hamming_distance(a, b), true);
      p.hd = h;
    }
    if (cfg.entropy) {
      EntropyResult e;
      e.classes = {popcount(a), popcount(b)};
      std::sort(e.classes.begin(), e.classes.end());
      e.classes.erase(std::unique(e.classes.begin(), e.classes.end()), e.classes.end());
      e.value = class_entropy(n, e.classes);
      e.flagged = e.classes.size() >= 2 && e.value <= cfg.entropy_threshold + kEps;
      p.entropy = e;
    }
  }
  finish(p);
  if (p.vulnerable) add_reason(p.reasons, Reason::Continuity);
  std::sort(p.reasons.begin(), p.reasons.end());
  p.notes.push_back("derived from the flagged result at address " + std::to_string(src.address) +
                    " without new solver queries");
  p.queries = 0;
  return p;
}

}  // namespace

PoiRecord analyze_record(const symexec::StepRecord& rec, const AnalysisConfig& cfg, const solver::SolverConfig& scfg) {
  PoiRecord p = header(rec);
  auto s = solver::open_session(scfg);
  if (cfg.dhw || cfg.hd_value) {
    const SelfComposedPair pair = self_compose(rec);
    if (cfg.dhw) p.dhw = analyze_dhw(pair, cfg, *s);
    if (cfg.hd_value) p.hd = analyze_hd(pair, cfg, *s);
  }
  if (cfg.hd_transition && !cfg.hd_value) p.hd = analyze_hd_transition(rec, cfg, *s);
  if (cfg.entropy) p.entropy = analyze_entropy(rec, cfg, *s);
  finish(p);
  p.queries = s->check_count();
  return p;
}

std::vector<PoiRecord> analyze_trace(const symexec::SymbolicState& state, const AnalysisConfig& cfg,
                                     const solver::SolverConfig& scfg) {
  if (cfg.hd_value && cfg.hd_transition) throw ConfigError("choose one Hamming distance mode");
  std::vector<const symexec::StepRecord*> recs;
  for (const auto& r : state.trace) {
    if (r.analyzable) recs.push_back(&r);
  }

  std::vector<std::optional<Candidate>> cand(recs.size());
  if (cfg.continuity) {
    for (std::size_t j = 0; j < recs.size(); ++j) {
      auto m = match_unary(recs[j]->expr);
      if (!m) continue;
      for (std::size_t k = j; k-- > 0;) {
        if (recs[k]->expr == m->first || structurally_equal(recs[k]->expr, m->first)) {
          m->second.source = k;
          cand[j] = m->second;
          break;
        }
      }
    }
  }

  std::vector<std::optional<PoiRecord>> out(recs.size());
  std::vector<std::size_t> work;
  for (std::size_t j = 0; j < recs.size(); ++j) {
    if (!cand[j]) work.push_back(j);
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next++;
      if (i >= work.size()) return;
      try {
        out[work[i]] = analyze_record(*recs[work[i]], cfg, scfg);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        next = work.size();
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(std::max(1U, cfg.jobs), work.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (std::size_t j = 0; j < recs.size(); ++j) {
    if (!cand[j]) continue;
    const PoiRecord& src = *out[cand[j]->source];
    std::optional<PoiRecord> derived;
    if (src.vulnerable) derived = propagate(src, *recs[cand[j]->source], *recs[j], *cand[j], cfg);
    out[j] = derived ? std::move(*derived) : analyze_record(*recs[j], cfg, scfg);
  }

  std::vector<PoiRecord> result;
  for (auto& r : out) result.push_back(std::move(*r));
  return result;
}

}  // namespace poirot::leakage
