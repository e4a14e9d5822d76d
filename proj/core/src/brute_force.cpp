#include <map>
#include <numeric>

#include "poirot/error.hpp"
#include "solver_impl.hpp"

namespace poirot::solver::detail {

namespace {

// Union-find over variables equated at top level (public pinning); each class
// is enumerated once.
class Aliases {
 public:
  explicit Aliases(const std::vector<VarInfo>& vars) {
    for (std::size_t i = 0; i < vars.size(); ++i) index_.emplace(vars[i].name, i);
    parent_.resize(vars.size());
    std::iota(parent_.begin(), parent_.end(), 0);
  }
  std::size_t find(std::size_t i) {
    while (parent_[i] != i) i = parent_[i] = parent_[parent_[i]];
    return i;
  }
  void unite(const std::string& a, const std::string& b) {
    const std::size_t x = find(index_.at(a));
    const std::size_t y = find(index_.at(b));
    if (x != y) parent_[std::max(x, y)] = std::min(x, y);
  }
  std::size_t index(const std::string& n) const { return index_.at(n); }

 private:
  std::map<std::string, std::size_t> index_;
  std::vector<std::size_t> parent_;
};

}  // namespace

bool enumerate(const std::vector<Expr>& assertions, const std::vector<VarInfo>& declared,
               const std::vector<Expr>& extra, unsigned cap, std::optional<Clock::time_point> deadline,
               const std::function<bool(const Model&, const std::vector<std::uint64_t>&)>& visit) {
  // Every variable that matters: declared ones plus any appearing in the inputs.
  std::map<std::string, VarInfo> all;
  for (const auto& v : declared) all.emplace(v.name, v);
  std::vector<Expr> everything = assertions;
  everything.insert(everything.end(), extra.begin(), extra.end());
  for (const auto& v : vars(std::span<const Expr>(everything))) all.emplace(v.name, v);
  std::vector<VarInfo> vs;
  for (auto& [_, v] : all) vs.push_back(v);

  Aliases uf(vs);
  for (const auto& a : assertions) {
    if (a.op() == Op::Eq && a.operand(0).is_var() && a.operand(1).is_var()) {
      uf.unite(a.operand(0).name(), a.operand(1).name());
    }
  }
  std::vector<std::size_t> reps;
  unsigned bits = 0;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (uf.find(i) == i) {
      reps.push_back(i);
      bits += vs[i].width;
    }
  }
  if (bits > cap) throw OracleInfeasibleError(bits, cap);

  std::vector<std::size_t> level_of(vs.size());
  std::vector<std::string> order;
  for (std::size_t k = 0; k < reps.size(); ++k) order.push_back(vs[reps[k]].name);
  for (std::size_t i = 0; i < vs.size(); ++i) {
    level_of[i] = static_cast<std::size_t>(std::find(reps.begin(), reps.end(), uf.find(i)) - reps.begin());
  }

  // Rewrite aliased variables to their representative.
  auto to_rep = [&](const Expr& v) {
    const std::size_t r = reps[level_of[uf.index(v.name())]];
    return vs[r].name == v.name() ? v : Expr::var(vs[r].name, vs[r].width, vs[r].secret, vs[r].signed_hint);
  };
  std::vector<Expr> roots;
  for (const auto& a : assertions) roots.push_back(substitute(a, to_rep));
  for (const auto& e : extra) roots.push_back(substitute(e, to_rep));
  const std::size_t n_assert = assertions.size();

  EvalPlan plan(roots, order);
  std::vector<std::vector<std::size_t>> checks_at(reps.size() + 1);
  for (std::size_t r = 0; r < n_assert; ++r) checks_at[plan.root_level(r) + 1].push_back(r);

  plan.run_level(-1);
  for (std::size_t r : checks_at[0]) {
    if (plan.root_value(r) == 0) return true;
  }

  std::vector<std::uint64_t> current(reps.size(), 0);
  std::vector<std::uint64_t> extra_values(extra.size());
  std::uint64_t ticks = 0;
  bool expired = false;

  std::function<bool(std::size_t)> rec = [&](std::size_t level) -> bool {
    if (level == reps.size()) {
      Model m;
      for (std::size_t i = 0; i < vs.size(); ++i) m.emplace(vs[i].name, BitVector(vs[i].width, current[level_of[i]]));
      for (std::size_t k = 0; k < extra.size(); ++k) extra_values[k] = plan.root_value(n_assert + k);
      return visit(m, extra_values);
    }
    const std::uint64_t top = width_mask(vs[reps[level]].width);
    for (std::uint64_t v = 0;; ++v) {
      if (deadline && (++ticks & 0xFFF) == 0 && Clock::now() > *deadline) {
        expired = true;
        return false;
      }
      current[level] = v;
      plan.set_var(level, v);
      plan.run_level(static_cast<int>(level));
      bool ok = true;
      for (std::size_t r : checks_at[level + 1]) {
        if (plan.root_value(r) == 0) {
          ok = false;
          break;
        }
      }
      if (ok && !rec(level + 1)) return false;
      if (v == top) break;
    }
    return true;
  };
  rec(0);
  return !expired;
}

namespace {

class BruteForceSession final : public Session {
 public:
  explicit BruteForceSession(const SolverConfig& cfg) : cfg_(cfg) {}

 protected:
  void do_push() override {}
  void do_pop() override {}
  void do_declare(const VarInfo&) override {}
  void do_add(const Expr&) override {}

  CheckResult do_check() override {
    CheckResult r;
    const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                             std::chrono::duration<double>(cfg_.timeout_seconds));
    bool found = false;
    const bool finished = enumerate(assertions(), declared(), {}, cfg_.oracle_cap, deadline,
                                    [&](const Model& m, const std::vector<std::uint64_t>&) {
                                      r.model = m;
                                      found = true;
                                      return false;
                                    });
    if (found) {
      r.status = SatStatus::Sat;
    } else {
      r.status = finished ? SatStatus::Unsat : SatStatus::Unknown;
    }
    return r;
  }

 private:
  SolverConfig cfg_;
};

}  // namespace

std::unique_ptr<Session> make_brute_force_session(const SolverConfig& cfg) {
  return std::make_unique<BruteForceSession>(cfg);
}

}  // namespace poirot::solver::detail

namespace poirot::solver {

OptResult brute_force_opt(const Formula& f, const Objective& obj, unsigned cap) {
  OptResult r;
  const bool maximize = obj.direction == Direction::Maximize;
  detail::enumerate(f.assertions, {}, {obj.expr}, cap, std::nullopt,
                    [&](const Model& m, const std::vector<std::uint64_t>& v) {
                      ++r.checks;
                      if (!r.value || (maximize ? v[0] > *r.value : v[0] < *r.value)) {
                        r.value = v[0];
                        r.model = m;
                      }
                      return true;
                    });
  r.checks = 0;
  r.status = r.value ? OptStatus::Optimal : OptStatus::Unsat;
  return r;
}

}  // namespace poirot::solver
