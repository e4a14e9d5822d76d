// Exhaustive reference metrics. Shares nothing with the solver path beyond
// the expression evaluator.

#include <algorithm>
#include <bit>
#include <functional>
#include <set>

#include "poirot/error.hpp"
#include "poirot/leakage.hpp"

namespace poirot::leakage {

namespace {

Expr prev_of(const symexec::StepRecord& rec) {
  const unsigned n = rec.expr.width();
  if (!rec.prev) return Expr::constant(n, 0);
  if (rec.prev.width() > n) return extract(rec.prev, n - 1, 0);
  if (rec.prev.width() < n) return zero_ext(rec.prev, n - rec.prev.width());
  return rec.prev;
}

// Calls `visit` for every assignment of vars [from, to) of the plan.
void enumerate(EvalPlan& plan, const std::vector<unsigned>& widths, std::size_t from, std::size_t to,
               const std::function<void()>& visit) {
  if (from == to) {
    visit();
    return;
  }
  const std::uint64_t top = width_mask(widths[from]);
  for (std::uint64_t v = 0;; ++v) {
    plan.set_var(from, v);
    enumerate(plan, widths, from + 1, to, visit);
    if (v == top) break;
  }
}

unsigned pc(std::uint64_t v) { return static_cast<unsigned>(std::popcount(v)); }

template <class T>
void lower(std::optional<T>& slot, T v) {
  if (!slot || v < *slot) slot = v;
}
template <class T>
void raise(std::optional<T>& slot, T v) {
  if (!slot || v > *slot) slot = v;
}

}  // namespace

unsigned oracle_bits(const symexec::StepRecord& rec) {
  unsigned bits = 0;
  const Expr roots[] = {rec.expr, prev_of(rec)};
  for (const auto& v : vars(std::span<const Expr>(roots))) bits += v.secret ? 2 * v.width : v.width;
  return bits;
}

OracleResult exhaustive_metrics(const symexec::StepRecord& rec, unsigned cap) {
  const unsigned bits = oracle_bits(rec);
  if (bits > cap) throw OracleInfeasibleError(bits, cap);

  const unsigned n = rec.expr.width();
  const Expr roots[] = {rec.expr, prev_of(rec)};
  std::vector<VarInfo> pubs, secs;
  for (const auto& v : vars(std::span<const Expr>(roots))) (v.secret ? secs : pubs).push_back(v);
  std::vector<std::string> order;
  std::vector<unsigned> widths;
  for (const auto* group : {&pubs, &secs}) {
    for (const auto& v : *group) {
      order.push_back(v.name);
      widths.push_back(v.width);
    }
  }
  EvalPlan plan(std::span<const Expr>(roots), order);

  OracleResult out;
  std::set<unsigned> classes;
  std::set<std::uint64_t> domain;
  enumerate(plan, widths, 0, pubs.size(), [&] {
    domain.clear();
    enumerate(plan, widths, pubs.size(), order.size(), [&] {
      plan.run_all();
      const std::uint64_t v = plan.root_value(0);
      domain.insert(v);
      classes.insert(pc(v));
      const unsigned t = pc(v ^ plan.root_value(1));
      lower(out.transition_min, t);
      raise(out.transition_max, t);
    });
    if (domain.size() < 2) return;

    std::vector<unsigned> count(n + 1, 0);
    for (auto v : domain) ++count[pc(v)];
    unsigned lo = n, hi = 0;
    bool shared = false;
    std::optional<unsigned> gap;
    std::optional<unsigned> last;
    for (unsigned c = 0; c <= n; ++c) {
      if (!count[c]) continue;
      if (count[c] > 1) shared = true;
      lo = std::min(lo, c);
      hi = std::max(hi, c);
      if (last) lower(gap, c - *last);
      last = c;
    }
    raise(out.dhw_max, hi - lo);
    lower(out.dhw_min, shared ? 0U : *gap);

    const std::vector<std::uint64_t> d(domain.begin(), domain.end());
    std::optional<unsigned> dmin, dmax;
    for (std::size_t i = 0; i < d.size(); ++i) {
      for (std::size_t j = i + 1; j < d.size(); ++j) {
        const unsigned h = pc(d[i] ^ d[j]);
        lower(dmin, h);
        raise(dmax, h);
      }
      if (dmin == 1U && dmax == n) break;
    }
    lower(out.hd_min, *dmin);
    raise(out.hd_max, *dmax);
  });

  out.classes.assign(classes.begin(), classes.end());
  out.entropy = class_entropy(n, out.classes);
  return out;
}

}  // namespace poirot::leakage
